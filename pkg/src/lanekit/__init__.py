"""lanekit: a CPU-only lane detector that sketches straight proposals from a
local direction field and refines them with grouped segment attention."""

__version__ = "0.1.0"

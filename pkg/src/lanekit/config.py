"""Model and training configuration with a flat key=value file format.

Every field of ModelConfig can be set from a config file: one `key = value`
pair per line, `#` comments, booleans as true/false, `none` for optional
fields, and comma-separated integers for tuples. Unknown keys and type
mismatches are rejected with the offending line number.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

SAMPLING_MODES = ("adaptive", "single")
INIT_MODES = ("direction", "anchor")


@dataclass
class ModelConfig:
    # geometry of the input and the proposal grid
    h: int = 64                    # input image height (px)
    w: int = 160                   # input image width (px)
    grid_h: int = 4                # direction grid rows (proposals = grid_h*grid_w)
    grid_w: int = 10               # direction grid columns
    n_offsets: int = 72            # regression rows per lane
    n_points: int = 36             # feature probe points per proposal
    groups: int = 6                # attention / projection groups
    widths: tuple = (24, 48, 96)   # backbone channels at strides 8/16/32
    d_model: int = 96              # pyramid channels after lateral projection
    channels: int = 288            # proposal feature width c (divisible by groups)
    # sketch / sampling behaviour
    z_init: float | None = None    # scale embedding init; none = middle level
    sampling_mode: str = "adaptive"  # adaptive | single (middle level only)
    use_lsam: bool = True          # grouped cross-attention refinement
    init_mode: str = "direction"   # direction | anchor (fixed straight anchors)
    tau: float = 1.5               # direction-gt neighborhood radius (cells)
    gt_segments: int = 8           # arc segments when encoding direction gt
    radius: float = 7.5            # line-IoU half width e (px)
    # losses
    w_cls: float = 2.0
    w_reg: float = 1.0
    w_dir: float = 0.05
    w_attn: float = 0.05
    # optimization
    lr: float = 6e-3
    warmup_iters: int = 60
    total_iters: int = 1200
    weight_decay: float = 1e-4
    batch_size: int = 8
    seed: int = 0
    checkpoint_every: int = 200
    flip_augment: bool = True
    # inference
    score_thr: float = 0.25
    nms_thr: float = 0.3
    max_lanes: int = 5

    def __post_init__(self):
        for name in ("h", "w", "grid_h", "grid_w", "n_offsets", "n_points",
                     "groups", "d_model", "channels", "batch_size",
                     "total_iters", "max_lanes"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got "
                                 f"{getattr(self, name)}")
        self.widths = tuple(int(v) for v in self.widths)
        if len(self.widths) != 3:
            raise ValueError(f"widths needs 3 levels, got {self.widths}")
        if self.channels % self.groups:
            raise ValueError(f"channels {self.channels} not divisible by "
                             f"{self.groups} groups")
        if self.n_offsets % self.groups:
            raise ValueError(f"n_offsets {self.n_offsets} not divisible by "
                             f"{self.groups} groups")
        if self.n_points % self.groups:
            raise ValueError(f"n_points {self.n_points} not divisible by "
                             f"{self.groups} groups")
        if self.sampling_mode not in SAMPLING_MODES:
            raise ValueError(f"sampling_mode must be one of {SAMPLING_MODES},"
                             f" got {self.sampling_mode!r}")
        if self.init_mode not in INIT_MODES:
            raise ValueError(f"init_mode must be one of {INIT_MODES}, got "
                             f"{self.init_mode!r}")
        for name in ("radius", "tau", "lr"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("score_thr", "nms_thr"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")

    @property
    def n_proposals(self) -> int:
        return self.grid_h * self.grid_w

    @property
    def strides(self) -> tuple:
        return (8, 16, 32)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return str(v)


def _parse_value(raw: str, template, key: str):
    raw = raw.strip()
    if isinstance(template, bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"{key} expects true/false, got {raw!r}")
    if isinstance(template, tuple):
        return tuple(int(p) for p in raw.split(","))
    if raw.lower() == "none":
        return None
    if isinstance(template, int) and not isinstance(template, bool):
        return int(raw)
    if isinstance(template, float) or template is None:
        return float(raw)
    return raw


def save_config(cfg: ModelConfig, path: str):
    """Write every field as a commented key=value file."""
    lines = ["# lanekit model configuration", ""]
    for f in dataclasses.fields(cfg):
        lines.append(f"{f.name} = {_format_value(getattr(cfg, f.name))}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_config(path: str, overrides: dict | None = None) -> ModelConfig:
    """Parse a key=value file; raises with the line number on bad input."""
    defaults = ModelConfig()
    names = {f.name for f in dataclasses.fields(defaults)}
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            if "=" not in body:
                raise ValueError(f"{path}:{lineno}: expected key = value, "
                                 f"got {line.strip()!r}")
            key, raw = (p.strip() for p in body.split("=", 1))
            if key not in names:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                values[key] = _parse_value(raw, getattr(defaults, key), key)
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
    if overrides:
        for key, v in overrides.items():
            if key not in names:
                raise ValueError(f"unknown config override {key!r}")
            values[key] = v
    return ModelConfig(**values)


def apply_overrides(cfg: ModelConfig, pairs: list) -> ModelConfig:
    """Apply CLI `key=value` override strings onto an existing config."""
    values = cfg.to_dict()
    defaults = ModelConfig()
    for pair in pairs:
        if "=" not in pair:
            raise ValueError(f"override {pair!r} is not key=value")
        key, raw = (p.strip() for p in pair.split("=", 1))
        if key not in values:
            raise ValueError(f"unknown config override {key!r}")
        values[key] = _parse_value(raw, getattr(defaults, key), key)
    return ModelConfig(**values)

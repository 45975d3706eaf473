"""Model and run configuration with a plain ``key = value`` text format."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    n_points: int = 128          # points kept by farthest point sampling
    n_hyper: int = 128           # total hyperpoints over all generation stages
    n_anchors: int = 16          # hyperpoints emitted per cross-attention stage
    channels: int = 384
    grid_points: int = 64        # points grown per centre; must be a perfect square
    encoder_depth: int = 6
    decoder_depth: int = 6
    state_size: int = 16
    conv_width: int = 4
    edge_k: int = 16
    edge_hidden: int = 64
    heads: int = 4
    mlp_ratio: int = 2
    deform_width: int = 64
    deform_blocks: int = 3
    grid_span: float = 0.05
    activation: str = "silu"
    order: str = "fps"           # sequence order of sampled points: fps | hilbert
    zero_init_heads: bool = False
    fps_start: int = 0
    zeta: float = 1.2
    tau: float = 0.05
    expan_norm: str = "points"   # points | sum, see metrics.total_loss
    phi: float = 0.01
    seed: int = 0

    def __post_init__(self):
        self.validate()

    @property
    def n_stages(self) -> int:
        return self.n_hyper // self.n_anchors

    @property
    def n_centers(self) -> int:
        return self.n_points + self.n_hyper

    @property
    def output_points(self) -> int:
        return self.n_centers * self.grid_points

    @property
    def grid_side(self) -> int:
        return math.isqrt(self.grid_points)

    def validate(self) -> None:
        for name in ("n_points", "n_hyper", "n_anchors", "channels", "grid_points",
                     "encoder_depth", "decoder_depth", "state_size", "conv_width", "edge_k",
                     "edge_hidden", "heads", "mlp_ratio", "deform_width", "deform_blocks"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.n_hyper % self.n_anchors:
            raise ConfigError(f"n_hyper={self.n_hyper} is not a multiple of n_anchors={self.n_anchors}")
        if math.isqrt(self.grid_points) ** 2 != self.grid_points:
            raise ConfigError(f"grid_points={self.grid_points} is not a perfect square")
        if self.n_anchors > self.n_points:
            raise ConfigError(f"n_anchors={self.n_anchors} exceeds n_points={self.n_points}")
        if self.channels % self.heads:
            raise ConfigError(f"channels={self.channels} not divisible by heads={self.heads}")
        if self.order not in ("fps", "hilbert"):
            raise ConfigError(f"order must be 'fps' or 'hilbert', got {self.order!r}")
        if self.expan_norm not in ("points", "sum"):
            raise ConfigError(f"expan_norm must be 'points' or 'sum', got {self.expan_norm!r}")
        if self.zeta <= 0 or self.tau < 0 or self.phi <= 0:
            raise ConfigError("need zeta > 0, tau >= 0, phi > 0")


PRESETS: dict[str, dict] = {
    "pcn": {"grid_points": 64},
    "shapenet55": {"grid_points": 25},
    "kitti": {"grid_points": 49},
}


def preset(name: str, **overrides) -> ModelConfig:
    try:
        base = dict(PRESETS[name])
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    base.update(overrides)
    return ModelConfig(**base)


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    lr: float = 2e-4
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    steps: int = 500
    warmup_steps: int = 0
    schedule: str = "constant"   # constant | cosine
    min_lr_ratio: float = 0.0
    grad_clip: float = 0.0       # global gradient-norm cap, 0 disables
    batch_size: int = 1
    log_every: int = 50
    checkpoint: str = ""
    output_dir: str = ""

    def __post_init__(self):
        if self.schedule not in ("constant", "cosine"):
            raise ConfigError(f"schedule must be 'constant' or 'cosine', got {self.schedule!r}")
        if self.lr <= 0 or self.steps < 0 or self.warmup_steps < 0 or self.batch_size < 1:
            raise ConfigError("need lr > 0, steps >= 0, warmup_steps >= 0, batch_size >= 1")

    @property
    def seed(self) -> int:
        return self.model.seed

    def lr_at(self, step: int) -> float:
        scale = 1.0
        if self.warmup_steps:
            scale = min(1.0, (step + 1) / self.warmup_steps)
        if self.schedule == "cosine" and self.steps > 0:
            cos = 0.5 * (1.0 + math.cos(math.pi * step / self.steps))
            scale *= self.min_lr_ratio + (1.0 - self.min_lr_ratio) * cos
        return self.lr * scale


_RUN_FIELDS = [f.name for f in fields(RunConfig) if f.name != "model"]
_MODEL_FIELDS = {f.name: f for f in fields(ModelConfig)}


def _coerce(name: str, raw: str, target_type):
    raw = raw.strip()
    try:
        if target_type is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if target_type is int:
            return int(raw)
        if target_type is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None


def _field_type(obj, name: str):
    # type of the declared default, so a stored int never demotes a float field
    return type(next(f.default for f in fields(obj) if f.name == name))


def to_text(cfg: RunConfig | ModelConfig) -> str:
    run = cfg if isinstance(cfg, RunConfig) else None
    model = cfg.model if run else cfg
    lines = [f"{k} = {_fmt(getattr(model, k))}" for k in _MODEL_FIELDS]
    if run:
        lines += [f"{k} = {_fmt(getattr(run, k))}" for k in _RUN_FIELDS]
    return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_pairs(text: str) -> dict[str, str]:
    pairs: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = stripped.split("=", 1)
        pairs[key.strip()] = value.strip()
    return pairs


def from_pairs(pairs: dict[str, str], base: RunConfig | None = None) -> RunConfig:
    base = base or RunConfig()
    model_kw = dataclasses.asdict(base.model)
    run_kw = {k: getattr(base, k) for k in _RUN_FIELDS}
    for key, raw in pairs.items():
        if key in _MODEL_FIELDS:
            model_kw[key] = _coerce(key, raw, _field_type(base.model, key))
        elif key in run_kw:
            run_kw[key] = _coerce(key, raw, _field_type(base, key))
        else:
            raise ConfigError(f"unknown config key {key!r}")
    return RunConfig(model=ModelConfig(**model_kw), **run_kw)


def parse_text(text: str, base: RunConfig | None = None) -> RunConfig:
    return from_pairs(parse_pairs(text), base)


def load(path: str | Path) -> RunConfig:
    return parse_text(Path(path).read_text(encoding="utf-8"))


def model_from_pairs(pairs: dict[str, str]) -> ModelConfig:
    kw = {}
    for key, raw in pairs.items():
        if key not in _MODEL_FIELDS:
            raise ConfigError(f"unknown model config key {key!r}")
        kw[key] = _coerce(key, raw, _field_type(ModelConfig, key))
    return ModelConfig(**kw)

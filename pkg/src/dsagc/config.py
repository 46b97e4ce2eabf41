"""Training and run configuration with a strict plain-text ``key = value`` format."""
from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field, fields, replace

from dsagc.errors import ConfigError

ABLATIONS = ("no_disc", "no_contrastive", "no_attn_fusion", "no_sample_weights")
CE_MODES = ("inside_log", "outside_log")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 48
    e_t: int = 30
    max_epochs: int = 100
    tau: float = 0.5
    lambda_reg: float = 0.01
    cheb_order: int = 3
    heads: int = 64
    drop_count: int = -1  # -1: 13 for 62 channels, otherwise ceil(0.2 N)
    alpha_disc: float = 1.0
    alpha_gcn: float = 1.0
    alpha_gcl: float = 1.0
    seed: int = 0
    ce_mode: str = "inside_log"
    no_disc: bool = False
    no_contrastive: bool = False
    no_attn_fusion: bool = False
    no_sample_weights: bool = False
    grl_mu: float = 1.0
    disc_dropout: float = 0.5
    rms_rho: float = 0.99
    rms_eps: float = 1e-8
    hidden: int = 64
    proj_dim: int = 32
    sim_dim: int = 64
    eval_views: int = 1
    snapshot_epochs: tuple[int, ...] = ()
    snapshot_max_points: int = 300
    power_tol: float = 1e-9
    power_max_iter: int = 500
    power_squarings: int = 6

    def __post_init__(self):
        if not 0 <= self.e_t <= self.max_epochs:
            raise ConfigError(f"e_t={self.e_t} must lie in [0, max_epochs={self.max_epochs}]")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if min(self.alpha_disc, self.alpha_gcn, self.alpha_gcl, self.lambda_reg) < 0:
            raise ConfigError("loss weights and lambda_reg must be >= 0")
        if self.ce_mode not in CE_MODES:
            raise ConfigError(f"ce_mode must be one of {CE_MODES}, got {self.ce_mode!r}")
        if self.lr <= 0 or self.tau <= 0:
            raise ConfigError("lr and tau must be positive")
        if self.cheb_order < 1 or self.heads < 1 or self.eval_views < 1:
            raise ConfigError("cheb_order, heads and eval_views must be >= 1")
        if not 0 <= self.disc_dropout < 1:
            raise ConfigError("disc_dropout must lie in [0, 1)")

    @property
    def ablations(self) -> tuple[str, ...]:
        return tuple(a for a in ABLATIONS if getattr(self, a))

    @property
    def method_name(self) -> str:
        return "DS-AGC" + (f"[{'+'.join(self.ablations)}]" if self.ablations else "")

    def with_ablation(self, name: str) -> "TrainConfig":
        if name not in ABLATIONS:
            raise ConfigError(f"unknown ablation {name!r}; expected one of {ABLATIONS}")
        return replace(self, **{name: True})


@dataclass(frozen=True)
class RunConfig:
    """Everything a CLI run needs; rendered as one flat key-value file."""

    train: TrainConfig = field(default_factory=TrainConfig)
    dataset: str = ""
    out: str = "runs"
    n_unlabeled: int = 2
    jobs: int = 1
    et_sweep: tuple[int, ...] = ()

    def render(self) -> str:
        return render(self)

    @classmethod
    def parse(cls, text: str) -> "RunConfig":
        return parse(text, cls)


# ---------------------------------------------------------------- text format


def _hints(cls) -> dict:
    return typing.get_type_hints(cls)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def _coerce(raw: str, hint, key: str):
    raw = raw.strip()
    try:
        if hint is bool:
            if raw.lower() not in ("true", "false"):
                raise ValueError("expected true or false")
            return raw.lower() == "true"
        if hint is int:
            return int(raw)
        if hint is float:
            return float(raw)
        if hint is str:
            return raw
        if typing.get_origin(hint) is tuple:
            return tuple(int(v) for v in raw.split(",") if v.strip())
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r} ({exc})") from exc
    raise ConfigError(f"unsupported field type for {key!r}")


def _flat_items(obj):
    for f in fields(obj):
        value = getattr(obj, f.name)
        if dataclasses.is_dataclass(value):
            yield from _flat_items(value)
        else:
            yield f.name, value


def render(obj) -> str:
    lines = [f"# {type(obj).__name__}"]
    lines += [f"{k} = {_fmt(v)}" for k, v in _flat_items(obj)]
    return "\n".join(lines) + "\n"


def _build(cls, values: dict, used: set):
    hints = _hints(cls)
    kwargs = {}
    for f in fields(cls):
        hint = hints[f.name]
        if dataclasses.is_dataclass(hint):
            kwargs[f.name] = _build(hint, values, used)
        elif f.name in values:
            kwargs[f.name] = _coerce(values[f.name], hint, f.name)
            used.add(f.name)
    return cls(**kwargs)


def parse(text: str, cls=RunConfig):
    """Parse ``key = value`` lines into ``cls``; unknown or duplicate keys are errors."""
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = raw
    used: set[str] = set()
    obj = _build(cls, values, used)
    unknown = sorted(set(values) - used)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    return obj


def load_config(path, cls=RunConfig):
    with open(path, encoding="utf-8") as fh:
        return parse(fh.read(), cls)

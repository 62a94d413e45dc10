"""Run configuration: validation, canonical JSON form and digest."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

from .environments import EnvSpec
from .learners import VARIANTS


class ConfigError(ValueError):
    """A configuration field is missing, mistyped or out of range."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class RunConfig:
    algorithm: str = "unlock-plus"
    env: str = "iid"
    env_params: dict = field(default_factory=dict)
    K: int = 200
    T: int = 50_000
    alpha: float = 0.15
    c: float = 40.0
    rho: float = 0.5
    delta: float = 0.05
    seed: int = 0
    seeds: int = 1
    gamma_override: Optional[float] = None
    out: str = "out"

    def __post_init__(self):
        validate(self)

    @property
    def env_spec(self) -> EnvSpec:
        return EnvSpec(self.env, dict(self.env_params))

    @property
    def seed_list(self) -> list[int]:
        return [self.seed + i for i in range(self.seeds)]

    def with_updates(self, **changes) -> "RunConfig":
        return replace(self, **{k: v for k, v in changes.items() if v is not None})

    def to_dict(self) -> dict:
        return asdict(self)


_FIELDS = {f.name: f for f in fields(RunConfig)}
_INT = {"K", "T", "seed", "seeds"}
_FLOAT = {"alpha", "c", "rho", "delta", "gamma_override"}


def _check_open(path, x, lo, hi):
    if not lo < x < hi:
        raise ConfigError(path, f"{x} outside ({lo:g}, {hi:g})")


def validate(cfg: RunConfig) -> None:
    if cfg.algorithm not in VARIANTS:
        raise ConfigError("algorithm", f"{cfg.algorithm!r} not one of {', '.join(VARIANTS)}")
    try:
        cfg.env_spec
    except ValueError as exc:
        raise ConfigError("env", str(exc)) from None
    if cfg.K < 2:
        raise ConfigError("K", f"{cfg.K} outside [2, inf)")
    if cfg.T < 1:
        raise ConfigError("T", f"{cfg.T} outside [1, inf)")
    _check_open("alpha", cfg.alpha, 0.0, 0.5)
    if not cfg.c > 0:
        raise ConfigError("c", f"{cfg.c} outside (0, inf)")
    if not cfg.rho > 0:
        raise ConfigError("rho", f"{cfg.rho} outside (0, inf)")
    _check_open("delta", cfg.delta, 0.0, 1.0)
    if cfg.seeds < 1:
        raise ConfigError("seeds", f"{cfg.seeds} outside [1, inf)")
    if cfg.seed < 0:
        raise ConfigError("seed", f"{cfg.seed} outside [0, inf)")
    if cfg.gamma_override is not None and not 0.0 <= cfg.gamma_override < 1.0:
        raise ConfigError("gamma_override", f"{cfg.gamma_override} outside [0, 1)")


def _coerce(name, value):
    if name in _INT:
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError(name, f"expected an integer, got {value!r}")
        return value
    if name in _FLOAT:
        if value is None and name == "gamma_override":
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(name, f"expected a number, got {value!r}")
        return float(value)
    if name == "env_params":
        if not isinstance(value, dict):
            raise ConfigError(name, "expected an object")
        return dict(value)
    if not isinstance(value, str):
        raise ConfigError(name, f"expected a string, got {value!r}")
    return value


def parse_config(document) -> RunConfig:
    """Build a validated config from a JSON string or an already-parsed mapping.

    Missing keys take their defaults; unknown keys are rejected.
    """
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ConfigError("<document>", f"invalid JSON ({exc})") from None
    if not isinstance(document, dict):
        raise ConfigError("<document>", "expected a JSON object")
    unknown = sorted(set(document) - set(_FIELDS))
    if unknown:
        raise ConfigError(unknown[0], f"unknown key (valid keys: {', '.join(sorted(_FIELDS))})")
    return RunConfig(**{k: _coerce(k, v) for k, v in document.items()})


def serialize_config(cfg: RunConfig) -> str:
    """Canonical form: sorted keys, two-space indent, trailing newline."""
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"


def config_digest(cfg: RunConfig) -> str:
    """sha256 of the canonical form without the output directory.

    Where results are written does not change them, so the same experiment
    run into two directories carries the same digest.
    """
    doc = cfg.to_dict()
    doc.pop("out")
    return hashlib.sha256(json.dumps(doc, indent=2, sort_keys=True).encode("utf-8")).hexdigest()


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())

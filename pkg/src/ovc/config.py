"""Run configuration: ``key=value`` files with ``#`` comments, CLI overrides on top."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional

from ovc.losses import LossWeights


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    T: int = 4
    overlap: int = 3
    grid: tuple[int, int] = (4, 4)
    w: int = 5
    epsilon: float = 0.1
    alpha: float = 2.0
    beta1: float = 1.0
    beta2: float = 1.0
    t_mem: int = 10
    tau_conf: float = 0.3
    tau_new: float = 0.2
    lambda1: float = 2.0
    lambda2: float = 2.0
    lambda3: float = 4.0
    lambda4: float = 2.0
    lambda5: float = 0.5
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25
    seed: int = 0
    class_consistent: bool = False

    def __post_init__(self):
        checks = [
            (self.T >= 1, "T must be >= 1"),
            (0 <= self.overlap < self.T, "overlap must satisfy 0 <= overlap < T"),
            (self.grid[0] >= 1 and self.grid[1] >= 1, "grid cells must be >= 1"),
            (self.w >= 0, "w must be >= 0"),
            (0 <= self.epsilon < 1, "epsilon must be in [0, 1)"),
            (self.alpha > 0, "alpha must be > 0"),
            (self.beta1 >= 0 and self.beta2 >= 0, "beta1 and beta2 must be >= 0"),
            (self.t_mem >= 1, "t_mem must be >= 1"),
            (0 <= self.tau_conf <= 1, "tau_conf must be in [0, 1]"),
            (self.focal_gamma >= 0, "focal_gamma must be >= 0"),
            (0 <= self.focal_alpha <= 1, "focal_alpha must be in [0, 1]"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)
        try:
            self.loss_weights
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def stride(self) -> int:
        return self.T - self.overlap

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda1, self.lambda2, self.lambda3, self.lambda4, self.lambda5)

    def to_lines(self) -> str:
        out = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name == "grid":
                v = f"{v[0]}x{v[1]}"
            out.append(f"{f.name}={v}")
        return "\n".join(out) + "\n"


VALID_KEYS = tuple(f.name for f in dataclasses.fields(RunConfig))
ALIASES = {
    "ε": "epsilon", "eps": "epsilon", "α": "alpha", "β1": "beta1", "β2": "beta2",
    "T_mem": "t_mem", "tmem": "t_mem", "γ": "focal_gamma", "α_f": "focal_alpha",
    "λ1": "lambda1", "λ2": "lambda2", "λ3": "lambda3", "λ4": "lambda4", "λ5": "lambda5",
}


def _canonical(key: str) -> str:
    key = key.strip()
    key = ALIASES.get(key, key)
    if key not in VALID_KEYS:
        raise ConfigError(f"unknown config key {key!r}; valid keys: {', '.join(VALID_KEYS)}")
    return key


def _convert(key: str, raw) -> object:
    if not isinstance(raw, str):
        return tuple(raw) if key == "grid" else raw
    text = raw.strip()
    try:
        if key == "grid":
            parts = text.replace(",", "x").split("x")
            if len(parts) != 2:
                raise ValueError
            return (int(parts[0]), int(parts[1]))
        if key == "class_consistent":
            lowered = text.lower()
            if lowered not in {"true", "false", "1", "0", "yes", "no"}:
                raise ValueError
            return lowered in {"true", "1", "yes"}
        field_type = {f.name: f.type for f in dataclasses.fields(RunConfig)}[key]
        return int(text) if field_type == "int" else float(text)
    except ValueError:
        raise ConfigError(f"invalid value for {key}: {raw!r}") from None


def parse_config_text(text: str, source: str = "<string>") -> dict[str, object]:
    values: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, raw = line.split("=", 1)
        key = _canonical(key)
        values[key] = _convert(key, raw)
    return values


def load_config(path: Optional[str | Path] = None,
                overrides: Optional[Mapping[str, object]] = None) -> RunConfig:
    """Defaults, then the file, then ``overrides`` (CLI flags), later wins.

    ``overlap`` defaults to ``T - 1`` when neither source sets it.
    """
    values: dict[str, object] = {}
    if path is not None:
        values.update(parse_config_text(Path(path).read_text(encoding="utf-8"), str(path)))
    for key, raw in (overrides or {}).items():
        if raw is None:
            continue
        key = _canonical(key)
        values[key] = _convert(key, raw)
    if "overlap" not in values:
        values["overlap"] = int(values.get("T", RunConfig.T)) - 1
    return RunConfig(**values)

"""Flat ``key = value`` run configuration.

Blank lines and ``#`` comments are ignored.  Lists use ``,`` between
coordinates and ``;`` between points, e.g. ``points = 0.3,0.4; 0.7,0.4``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _points(text: str) -> tuple:
    pts = tuple(_floats(p) for p in text.split(";") if p.strip())
    if len({len(p) for p in pts}) > 1:
        raise ValueError("points have mixed dimensions")
    return pts


def _choice(*options):
    def parse(text: str) -> str:
        value = text.strip().lower()
        if value not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {text!r}")
        return value
    return parse


def _positive(kind):
    def parse(text: str):
        value = kind(text)
        if not value > 0:
            raise ValueError(f"must be positive, got {value}")
        return value
    return parse


def _nonneg_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise ValueError(f"must be non-negative, got {value}")
    return value


def _odd(text: str) -> int:
    value = int(text)
    if value < 1 or value % 2 == 0:
        raise ValueError(f"must be a positive odd integer, got {value}")
    return value


def _dim(text: str) -> int:
    value = int(text)
    if value not in (2, 3):
        raise ValueError(f"dimension must be 2 or 3, got {value}")
    return value


# key -> (parser, default); default None means "unset"
SCHEMA: dict[str, tuple[Callable[[str], Any], Any]] = {
    # grid
    "d": (_dim, 2),
    "n": (_positive(int), 128),
    "L": (_positive(float), 1.0),
    "epsilon": (_positive(float), None),
    "delta_t": (_positive(float), None),
    # model
    "profile": (_choice("oriented", "unoriented"), "oriented"),
    "net": (_choice("s1", "s2"), "s1"),
    "kernel_size": (_odd, 17),
    # training
    "n_train": (_positive(int), 100),
    "radius_min": (_positive(float), 0.05),
    "radius_max": (_positive(float), 0.45),
    "k": (_positive(int), 1),
    "batch_size": (_positive(int), 10),
    "epochs": (_nonneg_int, 20000),
    "lr": (_positive(float), 1e-3),
    "beta1": (float, 0.9),
    "beta2": (float, 0.999),
    "adam_eps": (_positive(float), 1e-8),
    "seed": (_nonneg_int, 0),
    "checkpoint_every": (_positive(int), 100),
    "validation_radii": (_floats, (0.1, 0.2, 0.3, 0.4)),
    # paths
    "dataset": (Path, None),
    "checkpoint": (Path, None),
    "output_dir": (Path, None),
    "init_field": (Path, None),
    # evolution
    "stepper": (_choice("lie", "eyre", "net"), "lie"),
    "alpha": (_positive(float), 2.0),
    "iterations": (_nonneg_int, 500),
    "snapshot_every": (_nonneg_int, 25),
    "center": (_floats, None),
    "radius": (_positive(float), 0.3),
    # multiphase: balls "x,y,r; ..."; the complement is the last phase
    "phases": (_points, None),
    "volume_constraint": (_bool, True),
    # obstacle problems
    "points": (_points, None),
    "curve_points": (_points, None),
    "curve_center": (_floats, None),
    "curve_radius": (_positive(float), 0.25),
    "curve_samples": (_positive(int), 200),
    "max_iters": (_nonneg_int, 5000),
    "stall_tol": (_positive(float), 1e-7),
}


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)
    explicit: set = field(default_factory=set)

    def __getitem__(self, key: str):
        if key not in SCHEMA:
            raise KeyError(key)
        return self.values.get(key, SCHEMA[key][1])

    def require(self, *keys: str) -> None:
        for key in keys:
            if self[key] is None:
                raise ConfigError(key, "required key is missing")

    def set(self, key: str, text: str) -> None:
        key = key.strip()
        if key not in SCHEMA:
            raise ConfigError(key, "unknown key")
        try:
            self.values[key] = SCHEMA[key][0](text.strip())
        except ValueError as exc:
            raise ConfigError(key, str(exc)) from None
        self.explicit.add(key)


def parse_config(text: str) -> RunConfig:
    cfg = RunConfig()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {raw.strip()!r}")
        key, value = line.split("=", 1)
        if key.strip() in cfg.explicit:
            raise ConfigError(key.strip(), f"duplicate key on line {lineno}")
        cfg.set(key, value)
    return cfg


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())

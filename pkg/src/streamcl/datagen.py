"""Artificial periodic dataset with daily and yearly moment cycles.

Each feature dimension ``n`` is the sum of two independent Gaussian
components whose mean and variance follow a rectified sinusoid::

    mean(t) = A_m * |sin(pi * (t + p) / T)|
    var(t)  = A_v * |sin(pi * (t + p) / T)|

with ``T = 24`` for the daily component, ``T = 8760`` for the yearly one and a
standard-normal phase ``p`` drawn per dimension and per component.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np

from .dataio import Dataset

PROVENANCE_TAG = "generator"


@dataclass(frozen=True)
class GeneratorConfig:
    dims: int = 7
    length: int = 12000
    amplitude_mean: float = 1.0
    amplitude_var: float = 1.0
    period_day: int = 24
    period_year: int = 8760
    seed: int = 0
    # supervised variant: target = drifting linear combination of features + noise
    supervised: bool = False
    target_noise: float = 0.05

    def __post_init__(self):
        if self.dims < 1 or self.length < 1:
            raise ValueError("dims and length must be positive")
        if self.period_day <= 0 or self.period_year <= 0:
            raise ValueError("periods must be positive")
        if self.amplitude_mean <= 0 or self.amplitude_var <= 0:
            raise ValueError("amplitudes must be positive")
        if self.target_noise < 0:
            raise ValueError("target_noise must be non-negative")


@dataclass(frozen=True)
class GeneratorPhases:
    day: np.ndarray
    year: np.ndarray
    target: Optional[np.ndarray] = None

    def __eq__(self, other):
        if not isinstance(other, GeneratorPhases):
            return NotImplemented
        t_eq = (self.target is None and other.target is None) or (
            self.target is not None and other.target is not None
            and np.array_equal(self.target, other.target))
        return np.array_equal(self.day, other.day) and np.array_equal(self.year, other.year) and t_eq


def draw_phases(dims: int, rng: np.random.Generator, supervised: bool = False) -> GeneratorPhases:
    day = rng.standard_normal(dims)
    year = rng.standard_normal(dims)
    target = rng.uniform(0.0, 2.0 * np.pi, dims) if supervised else None
    return GeneratorPhases(day, year, target)


def component_mean_var(t, p, period, amplitude_mean=1.0, amplitude_var=1.0):
    """Mean and variance of one component at time ``t`` (hours)."""
    if np.any(np.asarray(period) <= 0):
        raise ValueError("period must be positive")
    s = np.abs(np.sin(np.pi * (np.asarray(t, dtype=np.float64) + p) / period))
    return amplitude_mean * s, amplitude_var * s


def moments(t, phases: GeneratorPhases, config: GeneratorConfig):
    """Per-dimension mean and variance of ``x(t)`` for times ``t`` (shape ``(len(t), dims)``)."""
    t = np.asarray(t, dtype=np.float64)[:, None]
    md, vd = component_mean_var(t, phases.day, config.period_day,
                                config.amplitude_mean, config.amplitude_var)
    my, vy = component_mean_var(t, phases.year, config.period_year,
                                config.amplitude_mean, config.amplitude_var)
    return md + my, vd + vy


def _draw(mean, var, rng):
    # a zero-variance instant yields its mean exactly
    return mean + np.sqrt(var) * rng.standard_normal(mean.shape)


def sample_components(t, phases: GeneratorPhases, config: GeneratorConfig,
                      rng: np.random.Generator):
    """Draw the daily and yearly components at times ``t``; returns ``(x_day, x_year)``."""
    t = np.asarray(t, dtype=np.float64)[:, None]
    md, vd = component_mean_var(t, phases.day, config.period_day,
                                config.amplitude_mean, config.amplitude_var)
    my, vy = component_mean_var(t, phases.year, config.period_year,
                                config.amplitude_mean, config.amplitude_var)
    return _draw(md, vd, rng), _draw(my, vy, rng)


def target_weights(t, phases: GeneratorPhases, config: GeneratorConfig) -> np.ndarray:
    """Drifting coefficients of the supervised target, one yearly cosine per dimension."""
    t = np.asarray(t, dtype=np.float64)[:, None]
    return np.cos(2.0 * np.pi * t / config.period_year + phases.target)


def generate_series(config: GeneratorConfig, phases: Optional[GeneratorPhases] = None) -> Dataset:
    rng = np.random.default_rng(config.seed)
    drawn = draw_phases(config.dims, rng, config.supervised)
    phases = phases or drawn
    t = np.arange(config.length)
    xd, xy = sample_components(t, phases, config, rng)
    X = xd + xy
    y = None
    if config.supervised:
        w = target_weights(t, phases, config)
        y = (w * X).sum(axis=1) / config.dims + config.target_noise * rng.standard_normal(len(t))
    meta = {"generator": config, "phases": phases}
    return Dataset(X, y, t, meta)


def _fmt_array(a):
    return ";".join(repr(float(v)) for v in a)


def provenance_line(config: GeneratorConfig, phases: GeneratorPhases) -> str:
    parts = [PROVENANCE_TAG] + [f"{k}={v!r}" for k, v in asdict(config).items()]
    parts.append(f"phase_day={_fmt_array(phases.day)}")
    parts.append(f"phase_year={_fmt_array(phases.year)}")
    if phases.target is not None:
        parts.append(f"phase_target={_fmt_array(phases.target)}")
    return " ".join(parts)


def parse_provenance(line: str) -> tuple[GeneratorConfig, GeneratorPhases]:
    tokens = line.strip().lstrip("#").split()
    if not tokens or tokens[0] != PROVENANCE_TAG:
        raise ValueError("not a generator provenance line")
    kv = dict(tok.split("=", 1) for tok in tokens[1:])
    kwargs = {}
    for f in fields(GeneratorConfig):
        raw = kv[f.name]
        kwargs[f.name] = raw == "True" if f.type in (bool, "bool") else type(f.default)(raw)

    def arr(key):
        return np.array([float(v) for v in kv[key].split(";")]) if key in kv else None

    return GeneratorConfig(**kwargs), GeneratorPhases(arr("phase_day"), arr("phase_year"),
                                                      arr("phase_target"))

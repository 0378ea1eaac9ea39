"""Synthetic survey generation with reproducible, splittable noise.

A survey observes one individual's size at evenly spaced times.  True
sizes come from the growth law (exactly for the affine law, via a
high-accuracy integration for the hump-shaped law); recorded sizes add
Gaussian measurement noise and are then rounded to a measurement grid,
mimicking field sheets that record to fixed precision.

Noise draws use counter-based bit generators keyed by ``(seed, chain
index)``, with one draw per observation in time order.  Any chain's
dataset can therefore be regenerated on its own, in any order, on any
worker, which keeps many-chain experiments reproducible without a
shared sequential stream.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .integrators import (
    RK4_FIXED,
    RK45_ADAPTIVE,
    StepConfig,
    integrate_interval,
    rk45_config,
)
from .models import AffineParams, CanhamParams, analytic_affine, canham_model

# Stream tags keep draws for different purposes statistically disjoint
# even when they share a user-facing seed.
STREAM_NOISE = 1
STREAM_INIT = 2
STREAM_WALK = 3


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for ``(seed, *key)``, order-independent."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence((int(seed), *map(int, key)))))


def noise_rng(seed: int, chain: int = 0) -> np.random.Generator:
    return substream(seed, chain, STREAM_NOISE)


@dataclass(frozen=True)
class SurveyDesign:
    """Observation schedule: ``n_obs`` sizes, spaced ``dt`` from ``t0``."""

    n_obs: int
    t0: float
    dt: float
    y0: float

    def __post_init__(self):
        if self.n_obs < 2:
            raise ValueError("need at least two observations")
        if not self.dt > 0.0:
            raise ValueError("observation spacing dt must be > 0")

    @property
    def times(self) -> tuple[float, ...]:
        return tuple(self.t0 + i * self.dt for i in range(self.n_obs))


@dataclass(frozen=True)
class NoiseSpec:
    """Measurement model: N(0, sd) noise, then rounding to ``precision``."""

    sd: float
    precision: float
    seed: int

    def __post_init__(self):
        if self.sd < 0.0:
            raise ValueError("noise sd must be >= 0")
        if not self.precision > 0.0:
            raise ValueError("measurement precision must be > 0")


@dataclass(frozen=True)
class ObservationSeries:
    """Observed and true sizes at the survey times.

    ``y_bar`` is the mean of the observed sizes, stored so downstream
    reparameterisations use exactly the same reference value.
    """

    times: tuple[float, ...]
    y_obs: tuple[float, ...]
    y_true: tuple[float, ...]
    y_bar: float

    def __post_init__(self):
        if not (len(self.times) == len(self.y_obs) == len(self.y_true)):
            raise ValueError("times, y_obs and y_true must have equal length")
        if len(self.times) < 2:
            raise ValueError("need at least two observations")
        if any(t2 <= t1 for t1, t2 in zip(self.times, self.times[1:])):
            raise ValueError("times must be strictly increasing")
        if self.y_bar != _mean(self.y_obs):
            raise ValueError("y_bar must equal the mean of y_obs")


def _mean(values) -> float:
    return math.fsum(values) / len(values)


def make_series(times, y_obs, y_true) -> ObservationSeries:
    y_obs = tuple(float(v) for v in y_obs)
    return ObservationSeries(
        tuple(float(t) for t in times),
        y_obs,
        tuple(float(v) for v in y_true),
        _mean(y_obs),
    )


def round_to_grid(x: float, precision: float) -> float:
    """Round to the nearest multiple of ``precision``, ties away from zero."""
    if not precision > 0.0:
        raise ValueError("precision must be > 0")
    k = math.floor(abs(x) / precision + 0.5)
    return math.copysign(k * precision, x)


def simulate_affine(
    params: AffineParams, design: SurveyDesign, noise: NoiseSpec, chain: int = 0
) -> ObservationSeries:
    """Simulate a survey under the affine law (exact true trajectory)."""
    times = design.times
    y_true = [analytic_affine(params, design.y0, t - design.t0) for t in times]
    z = noise_rng(noise.seed, chain).standard_normal(design.n_obs)
    y_obs = [
        round_to_grid(yt + noise.sd * zi, noise.precision)
        for yt, zi in zip(y_true, z)
    ]
    return make_series(times, y_obs, y_true)


def _require_high_accuracy(cfg: StepConfig) -> None:
    if cfg.method == RK4_FIXED and cfg.h <= 1e-3:
        return
    if cfg.method == RK45_ADAPTIVE and max(cfg.rel_tol, cfg.abs_tol) <= 1e-9:
        return
    raise ValueError(
        "truth trajectories need a high-accuracy integrator: "
        "rk4 with h <= 1e-3 or rk45 with tolerances <= 1e-9"
    )


def simulate_canham(
    params: CanhamParams,
    design: SurveyDesign,
    noise: NoiseSpec,
    chain: int = 0,
    truth_cfg: StepConfig | None = None,
) -> ObservationSeries:
    """Simulate a survey under the hump-shaped law.

    The true trajectory has no closed form, so it is integrated once at
    high accuracy (default: adaptive with 1e-9 tolerances) and carried
    forward observation to observation without restarting.
    """
    cfg = truth_cfg if truth_cfg is not None else rk45_config(1e-9, 1e-9, max_steps=10**7)
    _require_high_accuracy(cfg)
    model = canham_model(params.g_max, params.y_max, params.k)
    times = design.times
    y_true = [design.y0]
    y = design.y0
    for t_prev, t_next in zip(times, times[1:]):
        y, _ = integrate_interval(model, y, t_prev, t_next, cfg)
        y_true.append(y)
    z = noise_rng(noise.seed, chain).standard_normal(design.n_obs)
    y_obs = [
        round_to_grid(yt + noise.sd * zi, noise.precision)
        for yt, zi in zip(y_true, z)
    ]
    return make_series(times, y_obs, y_true)


SERIES_COLUMNS = ("t", "y_obs", "y_true")


def write_series(path, series: ObservationSeries) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SERIES_COLUMNS)
        for t, yo, yt in zip(series.times, series.y_obs, series.y_true):
            writer.writerow([repr(t), repr(yo), repr(yt)])


def read_series(path) -> ObservationSeries:
    """Load a series written by :func:`write_series` (or a compatible tool).

    ``y_bar`` is recomputed from the observed column, so externally
    produced files need only the three columns.
    """
    times: list[float] = []
    y_obs: list[float] = []
    y_true: list[float] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(SERIES_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"series file lacks columns {sorted(missing)}")
        for row in reader:
            times.append(float(row["t"]))
            y_obs.append(float(row["y_obs"]))
            y_true.append(float(row["y_true"]))
    return make_series(times, y_obs, y_true)

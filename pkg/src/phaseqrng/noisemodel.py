"""Variance-vs-power model fitting and the quantum signal ratio gamma.

The measured PD variance follows ``v(P) = AQ*P + AC*P**2 + F``; gamma is the
ratio of the quantum term to everything else.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateFitError,
    InconsistentMeasurementError,
    InfiniteRatioError,
    UnboundedOptimumError,
)
from .physsim import SimConfig, simulate_voltage, make_rng

GOLDEN = (math.sqrt(5) - 1) / 2


@dataclass(frozen=True)
class VariancePoint:
    power_mw: float
    variance_mv2: float
    n_samples: int = 0

    def __post_init__(self):
        if self.power_mw < 0 or self.variance_mv2 < 0:
            raise ValueError("power and variance must be >= 0")


@dataclass(frozen=True)
class NoiseModelParams:
    aq: float
    ac: float
    f: float
    r_squared: float = 1.0

    def predict(self, power_mw):
        p = np.asarray(power_mw, dtype=float)
        return self.aq * p + self.ac * p * p + self.f

    def as_dict(self):
        return {"aq": self.aq, "ac": self.ac, "f": self.f, "r_squared": self.r_squared}


def _lstsq_subset(X, y, active):
    coef = np.zeros(X.shape[1])
    if active:
        sol, *_ = np.linalg.lstsq(X[:, active], y, rcond=None)
        coef[list(active)] = sol
    return coef


def fit_variance_model(points) -> NoiseModelParams:
    """Least-squares fit of the three-term variance model.

    Nonnegativity is enforced by refitting on every subset of free parameters
    and keeping the best feasible one; with three parameters that is the
    exact constrained optimum.
    """
    points = list(points)
    powers = np.array([p.power_mw for p in points], dtype=float)
    v = np.array([p.variance_mv2 for p in points], dtype=float)
    if len(points) < 4 or np.unique(powers).size < 3:
        raise DegenerateFitError("need >= 4 points at >= 3 distinct powers")
    X = np.column_stack([powers, powers**2, np.ones_like(powers)])

    coef = _lstsq_subset(X, v, [0, 1, 2])
    if np.any(coef < 0):
        best, best_ss = None, math.inf
        for r in (2, 1, 0):
            for active in itertools.combinations(range(3), r):
                c = _lstsq_subset(X, v, list(active))
                if np.any(c < 0):
                    continue
                ss = float(np.sum((v - X @ c) ** 2))
                if ss < best_ss * (1 - 1e-12):
                    best, best_ss = c, ss
        coef = best
    coef = np.where(coef < 0, 0.0, coef)

    resid = v - X @ coef
    ss_res = float(resid @ resid)
    ss_tot = float(np.sum((v - v.mean()) ** 2))
    if ss_tot > 0:
        r2 = 1.0 - ss_res / ss_tot
    else:
        r2 = 1.0 if ss_res <= 1e-24 * max(1.0, float(v @ v)) else 0.0
    r2 = min(1.0, max(0.0, r2))
    return NoiseModelParams(float(coef[0]), float(coef[1]), float(coef[2]), r2)


def gamma_from_fit(params: NoiseModelParams, power_mw: float) -> float:
    if power_mw <= 0:
        raise ValueError("power_mw must be > 0")
    denom = params.ac * power_mw**2 + params.f
    if denom <= 0:
        raise InfiniteRatioError("AC*P^2 + F is zero")
    return params.aq * power_mw / denom


def gamma_from_measurement(total_var_mv2: float, classical_var_mv2: float) -> float:
    """gamma from a total variance and a directly measured classical variance."""
    if classical_var_mv2 <= 0:
        raise InfiniteRatioError("classical variance must be > 0")
    if classical_var_mv2 > total_var_mv2:
        raise InconsistentMeasurementError("classical variance exceeds total variance")
    return (total_var_mv2 - classical_var_mv2) / classical_var_mv2


def optimal_power(params: NoiseModelParams) -> tuple[float, float]:
    """Closed-form maximiser of gamma(P): P* = sqrt(F/AC)."""
    if params.ac <= 0 or params.f <= 0:
        raise UnboundedOptimumError("gamma is monotone when AC = 0 or F = 0")
    if params.aq <= 0:
        raise ValueError("AQ must be > 0")
    p_star = math.sqrt(params.f / params.ac)
    return p_star, params.aq / (2.0 * math.sqrt(params.ac * params.f))


def optimal_power_search(params: NoiseModelParams, p_max=12.0, step=1e-4, tol=1e-13):
    """Numeric maximiser of gamma(P): coarse grid, then golden-section refinement."""
    if params.ac <= 0 or params.f <= 0:
        raise UnboundedOptimumError("gamma is monotone when AC = 0 or F = 0")

    def g(p):
        return gamma_from_fit(params, p)

    grid = np.arange(step, p_max + step / 2, step)
    vals = params.aq * grid / (params.ac * grid**2 + params.f)
    i = int(np.argmax(vals))
    a = grid[max(i - 1, 0)] if i > 0 else grid[0] / 2
    b = grid[min(i + 1, grid.size - 1)]
    c, d = b - GOLDEN * (b - a), a + GOLDEN * (b - a)
    gc, gd = g(c), g(d)
    while b - a > tol * max(1.0, abs(b)):
        if gc > gd:
            b, d, gd = d, c, gc
            c = b - GOLDEN * (b - a)
            gc = g(c)
        else:
            a, c, gc = c, d, gd
            d = a + GOLDEN * (b - a)
            gd = g(d)
    p = (a + b) / 2
    return p, g(p)


def simulate_sweep(base: SimConfig, powers, n_samples=1_000_000, sample_rate_gsps=None):
    """Variance points from simulated traces at each power.

    ``sample_rate_gsps`` lets the sweep be acquired at a slower rate than the
    generator itself; per-point seeds are derived from ``base.rng_seed``.
    """
    seeds = np.random.SeedSequence(base.rng_seed).generate_state(len(powers), np.uint64)
    rate = base.sample_rate_gsps if sample_rate_gsps is None else sample_rate_gsps
    points = []
    for p, seed in zip(powers, seeds):
        cfg = base.with_(power_mw=float(p), rng_seed=int(seed), sample_rate_gsps=rate)
        v = simulate_voltage(cfg, n_samples, make_rng(cfg.rng_seed))
        points.append(VariancePoint(float(p), float(np.var(v)), int(n_samples)))
    return points


def simulate_classical_reference(cfg: SimConfig, ld_power_mw=12.0, n_samples=1_000_000):
    """Variance measured with the laser at high power and attenuated to cfg.power_mw.

    At high laser power the quantum phase term Q/P is small, so this
    upper-bounds the classical variance AC*P^2 + F.
    """
    ref = cfg.with_(ld_power_mw=ld_power_mw, rng_seed=(cfg.rng_seed + 0x9E3779B97F4A7C15) % 2**64)
    v = simulate_voltage(ref, n_samples)
    return float(np.var(v))


def write_points(points, path):
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["power_mw", "variance_mv2", "n_samples"])
        for p in points:
            w.writerow([repr(p.power_mw), repr(p.variance_mv2), p.n_samples])


def read_points(path):
    points = []
    with Path(path).open(newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                power = float(row[0])
            except ValueError:
                continue  # header
            n = int(float(row[2])) if len(row) > 2 and row[2].strip() else 0
            points.append(VariancePoint(power, float(row[1]), n))
    return points

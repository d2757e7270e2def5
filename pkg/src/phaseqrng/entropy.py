"""Min-entropy of raw samples: clipped histogram, Gaussian model, bit rates."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.special import ndtr

from .errors import OverExtractionError
from .physsim import VoltageTrace


@dataclass(frozen=True)
class HistogramSpec:
    clip_fraction: float = 0.001
    n_bins: int = 256

    def __post_init__(self):
        if not 0 <= self.clip_fraction < 0.5:
            raise ValueError("clip_fraction must be in [0, 0.5)")
        if self.n_bins < 2:
            raise ValueError("n_bins must be >= 2")


@dataclass
class HistogramEntropy:
    """Result of the clipped-histogram procedure on raw data."""

    v_min: float
    v_max: float
    v1: float
    v2: float
    counts: np.ndarray
    n: int
    p_max: float
    hmin_per_sample: float
    degenerate: bool = False

    @property
    def hmin_per_bit(self) -> float:
        return self.hmin_per_sample / 8.0

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(self.v1, self.v2, self.counts.size + 1)


@dataclass
class EntropyReport:
    gamma: float
    total_var_mv2: float
    quantum_var_mv2: float
    v1_mv: float
    v2_mv: float
    p_max: float
    hmin_per_sample: float
    hmin_per_bit: float
    raw_rate_gbps: Optional[float] = None
    final_rate_gbps: Optional[float] = None

    def as_dict(self):
        return asdict(self)


def quantum_variance(total_var_mv2: float, gamma: float) -> float:
    if total_var_mv2 < 0 or gamma < 0:
        raise ValueError("total variance and gamma must be >= 0")
    if math.isinf(gamma):
        return float(total_var_mv2)
    return gamma / (gamma + 1.0) * total_var_mv2


def clip_range(sorted_values, clip_fraction):
    """Nearest-rank lower/upper clip boundaries of already sorted data."""
    n = sorted_values.size
    lo_rank = max(1, math.ceil(clip_fraction * n))
    hi_rank = max(1, math.ceil((1.0 - clip_fraction) * n))
    return float(sorted_values[lo_rank - 1]), float(sorted_values[hi_rank - 1])


def histogram_counts(values, v1, v2, n_bins):
    """Counts over equal bins of [v1, v2]; left-closed, last bin right-closed."""
    width = (v2 - v1) / n_bins
    idx = np.floor((values - v1) / width).astype(np.int64)
    np.clip(idx, 0, n_bins - 1, out=idx)
    return np.bincount(idx, minlength=n_bins)


def empirical_min_entropy(data, spec: HistogramSpec = HistogramSpec(), min_samples=10_000) -> HistogramEntropy:
    """Clip the extreme tails to their quantiles, bin, and take -log2(p_max)."""
    values = data.voltages() if isinstance(data, VoltageTrace) else np.asarray(data, dtype=float)
    values = values.ravel()
    n = values.size
    if n < min_samples:
        raise ValueError(f"need at least {min_samples} samples, got {n}")
    s = np.sort(values, kind="stable")
    v1, v2 = clip_range(s, spec.clip_fraction)
    if v2 <= v1:
        counts = np.zeros(spec.n_bins, dtype=np.int64)
        counts[0] = n
        return HistogramEntropy(float(s[0]), float(s[-1]), v1, v2, counts, n, 1.0, 0.0, True)
    clipped = np.clip(values, v1, v2)
    counts = histogram_counts(clipped, v1, v2, spec.n_bins)
    p_max = counts.max() / n
    return HistogramEntropy(float(s[0]), float(s[-1]), v1, v2, counts, n, float(p_max), float(-math.log2(p_max)))


TAILS = ("fold", "drop")


def gaussian_bin_probabilities(quantum_var_mv2, v1_mv, v2_mv, n_bins, mean_mv=0.0, tails="fold"):
    """Bin masses of N(mean, var) over [v1, v2].

    ``tails="fold"`` adds the mass outside the range to the end bins (what
    clipping does to the data); ``"drop"`` keeps only the in-range masses.
    """
    if tails not in TAILS:
        raise ValueError(f"tails must be one of {TAILS}")
    edges = np.linspace(v1_mv, v2_mv, n_bins + 1)
    if quantum_var_mv2 == 0:
        probs = np.zeros(n_bins)
        if tails == "fold" or v1_mv <= mean_mv <= v2_mv:
            probs[int(histogram_counts(np.array([mean_mv]), v1_mv, v2_mv, n_bins).argmax())] = 1.0
        return probs
    cdf = ndtr((edges - mean_mv) / math.sqrt(quantum_var_mv2))
    if tails == "fold":
        cdf[0], cdf[-1] = 0.0, 1.0
    return np.diff(cdf)


def gaussian_min_entropy(quantum_var_mv2, v1_mv, v2_mv, n_bins=256, mean_mv=0.0, tails="fold") -> float:
    """Min-entropy (bits/sample) of a Gaussian quantum signal binned over [v1, v2].

    A zero variance is treated as a point mass at ``mean_mv`` (entropy 0).
    """
    if quantum_var_mv2 < 0:
        raise ValueError("quantum variance must be >= 0")
    if not v2_mv > v1_mv:
        raise ValueError("need v2 > v1")
    if n_bins < 2:
        raise ValueError("n_bins must be >= 2")
    probs = gaussian_bin_probabilities(quantum_var_mv2, v1_mv, v2_mv, n_bins, mean_mv, tails)
    p_max = float(probs.max())
    if p_max <= 0:
        raise ValueError("no probability mass inside [v1, v2]")
    return -math.log2(p_max) if p_max < 1.0 else 0.0


def min_entropy_vs_gamma(total_var_mv2, v1_mv, v2_mv, n_bins, gammas, mean_mv=0.0, tails="fold") -> np.ndarray:
    return np.array([
        gaussian_min_entropy(quantum_variance(total_var_mv2, g), v1_mv, v2_mv, n_bins, mean_mv, tails)
        for g in gammas
    ])


def rate_accounting(hmin_per_sample, sample_rate_gsps, n, m, bits_per_sample=8):
    """Raw rate (min-entropy x sample rate) and final extracted rate in Gbps."""
    if not 0 < m <= n:
        raise ValueError("need 0 < m <= n")
    if m > n * hmin_per_sample / bits_per_sample:
        raise OverExtractionError(
            f"m/n = {m / n:.4f} exceeds the assessed {hmin_per_sample / bits_per_sample:.4f} bits/bit")
    raw = hmin_per_sample * sample_rate_gsps
    final = bits_per_sample * (m / n) * sample_rate_gsps
    return raw, final


def entropy_report(total_var_mv2, gamma, v1_mv, v2_mv, n_bins=256, sample_rate_gsps=None,
                   n=None, m=None, mean_mv=0.0, tails="fold") -> EntropyReport:
    """Gaussian-model entropy accounting from a (directly measured) gamma."""
    qv = quantum_variance(total_var_mv2, gamma)
    p_max = float(gaussian_bin_probabilities(qv, v1_mv, v2_mv, n_bins, mean_mv, tails).max())
    if p_max <= 0:
        raise ValueError("no probability mass inside [v1, v2]")
    h = -math.log2(p_max) if p_max < 1.0 else 0.0
    rep = EntropyReport(gamma, total_var_mv2, qv, v1_mv, v2_mv, p_max, h, h / 8.0)
    if sample_rate_gsps is not None and n is not None and m is not None:
        rep.raw_rate_gbps, rep.final_rate_gbps = rate_accounting(h, sample_rate_gsps, n, m)
    return rep


def write_histogram(result: HistogramEntropy, path):
    edges = result.edges
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_left_mv", "bin_right_mv", "count"])
        for i, c in enumerate(result.counts):
            w.writerow([repr(float(edges[i])), repr(float(edges[i + 1])), int(c)])

"""Statistical checks on raw samples and extracted bits.

Autocorrelation, eight of the NIST SP 800-22 tests (frequency, block
frequency, cumulative sums, runs, longest run of ones, DFT, serial, approximate
entropy) and the usual aggregation over many sequences: a KS uniformity test
on the p-values and the proportion of sequences passing at level alpha.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import erfc, gammaincc

from .bits import BitStream
from .errors import EmptyInputError, UndefinedCorrelationError

ALPHA = 0.01
KS_THRESHOLD = 1e-4
BLOCK_FREQUENCY_M = 128
SERIAL_M = 16
APEN_M = 10

TEST_NAMES = (
    "Frequency",
    "Block Frequency",
    "Cumulative Sums",
    "Runs",
    "Longest Run",
    "FFT",
    "Serial",
    "Approximate Entropy",
)

NOT_IMPLEMENTED = (
    "Rank",
    "Non Overlapping Template",
    "Overlapping Template",
    "Universal",
    "Random Excursions",
    "Random Excursions Variant",
    "Linear Complexity",
)


@dataclass
class AutocorrResult:
    lags: np.ndarray
    coeffs: np.ndarray
    n: int

    @property
    def sigma_null(self) -> float:
        return 1.0 / math.sqrt(self.n)

    def max_abs(self, start=1) -> float:
        sel = self.lags >= start
        return float(np.max(np.abs(self.coeffs[sel]))) if sel.any() else 0.0


def _as_series(series) -> np.ndarray:
    if isinstance(series, BitStream):
        return series.to_bits().astype(np.float64)
    return np.asarray(series, dtype=np.float64).ravel()


def autocorrelation(series, max_lag: int, method="fft") -> AutocorrResult:
    """Pearson autocorrelation rho(k) = c_k / c_0 for k = 0..max_lag.

    ``c_k`` is the biased (1/n) autocovariance.  ``method`` is ``"fft"`` or
    ``"direct"``.
    """
    x = _as_series(series)
    n = x.size
    if n < 2 or max_lag < 0 or max_lag >= n:
        raise ValueError("need 0 <= max_lag < len(series)")
    x = x - x.mean()
    c0 = float(x @ x)
    if c0 <= 0:
        raise UndefinedCorrelationError("series has zero variance")
    lags = np.arange(max_lag + 1)
    if method == "direct":
        c = np.array([x[: n - k] @ x[k:] for k in lags])
    elif method == "fft":
        size = 1 << (2 * n - 1).bit_length()
        f = np.fft.rfft(x, size)
        c = np.fft.irfft(f * np.conj(f), size)[: max_lag + 1]
    else:
        raise ValueError(f"unknown method {method!r}")
    return AutocorrResult(lags, c / c0, n)


# --- individual tests -------------------------------------------------------
# Each takes a 0/1 uint8 array and returns a p-value (or a tuple of them).


def _bits(seq) -> np.ndarray:
    if isinstance(seq, BitStream):
        return seq.to_bits()
    return np.asarray(seq, dtype=np.uint8).ravel()


def frequency_test(seq) -> float:
    e = _bits(seq)
    n = e.size
    s = 2 * int(e.sum()) - n
    return float(erfc(abs(s) / math.sqrt(n) / math.sqrt(2)))


def block_frequency_test(seq, M=BLOCK_FREQUENCY_M) -> float:
    e = _bits(seq)
    N = e.size // M
    if N == 0:
        raise ValueError("sequence shorter than one block")
    pi = e[: N * M].reshape(N, M).mean(axis=1)
    chi2 = 4.0 * M * float(np.sum((pi - 0.5) ** 2))
    return float(gammaincc(N / 2.0, chi2 / 2.0))


def _cusum_p(z, n):
    sq = math.sqrt(n)
    # integer division truncating toward zero, as in the reference code
    def tdiv(a, b):
        return int(a / b)

    nz = n // z
    k1 = np.arange(tdiv(-nz + 1, 4), tdiv(nz - 1, 4) + 1)
    k2 = np.arange(tdiv(-nz - 3, 4), tdiv(nz - 1, 4) + 1)
    cdf = stats.norm.cdf
    s1 = np.sum(cdf((4 * k1 + 1) * z / sq) - cdf((4 * k1 - 1) * z / sq))
    s2 = np.sum(cdf((4 * k2 + 3) * z / sq) - cdf((4 * k2 + 1) * z / sq))
    return float(min(1.0, max(0.0, 1.0 - s1 + s2)))


def cumulative_sums_test(seq) -> tuple[float, float]:
    """(forward, reverse) p-values."""
    e = _bits(seq)
    x = 2 * e.astype(np.int64) - 1
    n = x.size
    z_fwd = int(np.max(np.abs(np.cumsum(x))))
    z_rev = int(np.max(np.abs(np.cumsum(x[::-1]))))
    return _cusum_p(z_fwd, n), _cusum_p(z_rev, n)


def runs_test(seq) -> float:
    e = _bits(seq)
    n = e.size
    pi = e.mean()
    if abs(pi - 0.5) >= 2.0 / math.sqrt(n):
        return 0.0
    v = 1 + int(np.count_nonzero(e[1:] != e[:-1]))
    num = abs(v - 2.0 * n * pi * (1 - pi))
    return float(erfc(num / (2.0 * math.sqrt(2.0 * n) * pi * (1 - pi))))


_LONGEST_RUN_TABLE = (
    # (min n, M, class lower bounds, probabilities)
    (750_000, 10_000, (10, 11, 12, 13, 14, 15, 16),
     (0.0882, 0.2092, 0.2483, 0.1933, 0.1208, 0.0675, 0.0727)),
    (6_272, 128, (4, 5, 6, 7, 8, 9), (0.1174, 0.2430, 0.2493, 0.1752, 0.1027, 0.1124)),
    (128, 8, (1, 2, 3, 4), (0.2148, 0.3672, 0.2305, 0.1875)),
)


def _longest_runs(blocks: np.ndarray) -> np.ndarray:
    N, M = blocks.shape
    a = np.zeros((N, M + 1), np.int64)
    a[:, 1:] = blocks
    flat = a.ravel()
    c = np.cumsum(flat)
    reset = np.maximum.accumulate(np.where(flat == 0, c, 0))
    return (c - reset).reshape(N, M + 1).max(axis=1)


def longest_run_test(seq) -> float:
    e = _bits(seq)
    n = e.size
    for min_n, M, bounds, probs in _LONGEST_RUN_TABLE:
        if n >= min_n:
            break
    else:
        raise ValueError("longest-run test needs at least 128 bits")
    N = n // M
    runs = _longest_runs(e[: N * M].reshape(N, M))
    cls = np.clip(np.searchsorted(bounds, runs, side="right") - 1, 0, len(bounds) - 1)
    nu = np.bincount(cls, minlength=len(bounds))
    expected = N * np.asarray(probs)
    chi2 = float(np.sum((nu - expected) ** 2 / expected))
    return float(gammaincc((len(bounds) - 1) / 2.0, chi2 / 2.0))


def dft_test(seq) -> float:
    e = _bits(seq)
    n = e.size
    x = 2.0 * e - 1.0
    mod = np.abs(np.fft.fft(x)[: n // 2])
    threshold = math.sqrt(math.log(1 / 0.05) * n)
    n0 = 0.95 * n / 2.0
    n1 = int(np.count_nonzero(mod < threshold))
    d = (n1 - n0) / math.sqrt(n * 0.95 * 0.05 / 4.0)
    return float(erfc(abs(d) / math.sqrt(2)))


def _pattern_counts(e: np.ndarray, m: int) -> np.ndarray:
    """Counts of overlapping m-bit patterns with wrap-around (first bit = MSB)."""
    n = e.size
    ext = np.concatenate([e, e[: m - 1]]).astype(np.int64)
    idx = np.zeros(n, np.int64)
    for b in range(m):
        idx = (idx << 1) | ext[b:b + n]
    return np.bincount(idx, minlength=1 << m)


def _fold(counts):
    return counts[0::2] + counts[1::2]


def serial_test(seq, m=SERIAL_M) -> tuple[float, float]:
    e = _bits(seq)
    n = e.size
    cm = _pattern_counts(e, m)
    cm1 = _fold(cm)
    cm2 = _fold(cm1)

    def psi(counts, mm):
        if mm <= 0:
            return 0.0
        return (2.0**mm / n) * float(np.sum(counts.astype(np.float64) ** 2)) - n

    p_m, p_m1, p_m2 = psi(cm, m), psi(cm1, m - 1), psi(cm2, m - 2)
    d1 = p_m - p_m1
    d2 = p_m - 2 * p_m1 + p_m2
    return float(gammaincc(2.0 ** (m - 2), d1 / 2.0)), float(gammaincc(2.0 ** (m - 3), d2 / 2.0))


def approximate_entropy_test(seq, m=APEN_M) -> float:
    e = _bits(seq)
    n = e.size
    c1 = _pattern_counts(e, m + 1)
    c0 = _fold(c1)

    def phi(counts):
        p = counts[counts > 0] / n
        return float(np.sum(p * np.log(p)))

    apen = phi(c0) - phi(c1)
    chi2 = 2.0 * n * (math.log(2) - apen)
    return float(gammaincc(2.0 ** (m - 1), chi2 / 2.0))


def _min_length(name):
    return {
        "Frequency": 100,
        "Block Frequency": max(100, BLOCK_FREQUENCY_M),
        "Cumulative Sums": 100,
        "Runs": 100,
        "Longest Run": 128,
        "FFT": 1000,
        "Serial": 1 << (SERIAL_M + 3),
        "Approximate Entropy": 1 << (APEN_M + 6),
    }[name]


def nist_subset(seq, tests=TEST_NAMES) -> dict:
    """Per-sequence p-values: {test name: {sub-test name: p}}.

    Tests the sequence is too short for map to None (skipped).
    """
    e = _bits(seq)
    out = {}
    for name in tests:
        if e.size < _min_length(name):
            out[name] = None
            continue
        if name == "Frequency":
            out[name] = {"": frequency_test(e)}
        elif name == "Block Frequency":
            out[name] = {"": block_frequency_test(e)}
        elif name == "Cumulative Sums":
            f, r = cumulative_sums_test(e)
            out[name] = {"forward": f, "reverse": r}
        elif name == "Runs":
            out[name] = {"": runs_test(e)}
        elif name == "Longest Run":
            out[name] = {"": longest_run_test(e)}
        elif name == "FFT":
            out[name] = {"": dft_test(e)}
        elif name == "Serial":
            p1, p2 = serial_test(e)
            out[name] = {"p1": p1, "p2": p2}
        elif name == "Approximate Entropy":
            out[name] = {"": approximate_entropy_test(e)}
        else:
            raise ValueError(f"unknown test {name!r}")
    return out


@dataclass
class Aggregate:
    ks_statistic: float
    ks_p: float
    proportion: float
    threshold: float
    count: int
    passed: bool


def proportion_threshold(count, alpha=ALPHA):
    p = 1.0 - alpha
    return p - 3.0 * math.sqrt(p * alpha / count)


def aggregate(p_values, alpha=ALPHA, min_count=10) -> Aggregate:
    p = np.asarray(list(p_values), dtype=float)
    if p.size == 0:
        raise EmptyInputError("no p-values to aggregate")
    if p.size < min_count:
        raise ValueError(f"need at least {min_count} p-values, got {p.size}")
    ks = stats.kstest(p, "uniform", method="asymp")
    prop = float(np.mean(p >= alpha))
    thr = proportion_threshold(p.size, alpha)
    return Aggregate(float(ks.statistic), float(ks.pvalue), prop, thr, int(p.size),
                     bool(ks.pvalue >= KS_THRESHOLD and prop >= thr))


@dataclass
class TestRow:
    name: str
    p_value: float | None
    proportion: float | None
    passed: bool | None
    parts: dict = field(default_factory=dict)

    @property
    def skipped(self):
        return self.passed is None


@dataclass
class TestReport:
    rows: list
    n_sequences: int
    sequence_length: int
    alpha: float = ALPHA
    ks_threshold: float = KS_THRESHOLD

    def row(self, name) -> TestRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    @property
    def failed(self):
        return [r.name for r in self.rows if r.passed is False]

    @property
    def all_passed(self):
        return all(r.passed for r in self.rows if r.passed is not None)

    def as_dict(self):
        return {
            "n_sequences": self.n_sequences,
            "sequence_length": self.sequence_length,
            "alpha": self.alpha,
            "ks_threshold": self.ks_threshold,
            "proportion_threshold": proportion_threshold(self.n_sequences, self.alpha) if self.n_sequences else None,
            "tests": [
                {"name": r.name, "p_value": r.p_value, "proportion": r.proportion, "passed": r.passed,
                 "skipped": r.skipped, "parts": {k: vars(v) for k, v in r.parts.items()}}
                for r in self.rows
            ],
            "not_implemented": list(NOT_IMPLEMENTED),
        }

    def format_table(self) -> str:
        lines = [f"{'Statistical test':<22}{'P-value':>10}{'Proportion':>12}  Result",
                 "-" * 54]
        for r in self.rows:
            if r.skipped:
                lines.append(f"{r.name:<22}{'-':>10}{'-':>12}  skipped")
            else:
                lines.append(f"{r.name:<22}{r.p_value:>10.4f}{r.proportion:>12.3f}  "
                             f"{'pass' if r.passed else 'FAIL'}")
        return "\n".join(lines)


def run_tests(bits, sequence_length=1_000_000, n_sequences=None, alpha=ALPHA, tests=TEST_NAMES,
              min_count=10) -> TestReport:
    """Split ``bits`` into sequences, test each one and aggregate per test.

    Tests with several outcomes (cumulative sums forward/reverse, the two
    serial statistics) report the smallest per-outcome KS p-value and the mean
    of the per-outcome proportions; they pass only if every outcome passes.
    """
    e = _bits(bits)
    available = e.size // sequence_length
    count = available if n_sequences is None else min(n_sequences, available)
    if count == 0:
        raise EmptyInputError("not enough bits for one sequence")
    per_test = {name: {} for name in tests}
    skipped = set()
    for i in range(count):
        res = nist_subset(e[i * sequence_length:(i + 1) * sequence_length], tests)
        for name, parts in res.items():
            if parts is None:
                skipped.add(name)
                continue
            for sub, p in parts.items():
                per_test[name].setdefault(sub, []).append(p)
    rows = []
    for name in tests:
        if name in skipped or not per_test[name]:
            rows.append(TestRow(name, None, None, None))
            continue
        parts = {sub: aggregate(ps, alpha, min_count) for sub, ps in per_test[name].items()}
        ks_p = min(a.ks_p for a in parts.values())
        prop = float(np.mean([a.proportion for a in parts.values()]))
        rows.append(TestRow(name, ks_p, prop, all(a.passed for a in parts.values()), parts))
    return TestReport(rows, count, sequence_length, alpha)

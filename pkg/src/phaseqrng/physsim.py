"""Signal-chain simulator for a phase-fluctuation QRNG.

Laser phase is a Wiener process (quantum part) plus a slow Ornstein-Uhlenbeck
process (classical part).  An unbalanced interferometer held at quadrature
turns the phase difference over the arm delay into a voltage, detection noise
is added and the result is digitised by an 8-bit ADC.

Random numbers come from numpy's ``Philox`` (Philox4x64-10) counter-based bit
generator seeded with ``SimConfig.rng_seed``.  Draw order within one call is
fixed: quantum increments, then classical innovations, then detection noise.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.signal import lfilter

from .errors import EmptyInputError, SingularModelError

DEFAULT_DELAY_NS = 3.735
DEFAULT_A_GAIN = 1000.0
TRANSFER_MODES = ("full-sine", "small-angle")

# Fitted (AQ mV^2/mW, AC mV^2/mW^2, F mV^2, R^2) per sampling rate in GSa/s.
REFERENCE_PARAMS = {
    1: (6.0142, 0.4201, 0.1714, 0.9977),
    2: (5.8581, 0.4563, 0.2052, 0.9988),
    5: (6.0569, 0.4279, 0.2200, 0.9989),
    10: (6.2068, 0.3958, 0.2162, 0.9982),
}


class SaturationWarning(UserWarning):
    pass


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed) & (2**64 - 1)))


@dataclass(frozen=True)
class SimConfig:
    power_mw: float = 0.9
    q_coeff: float = REFERENCE_PARAMS[10][0] / DEFAULT_A_GAIN
    c_coeff: float = REFERENCE_PARAMS[10][1] / DEFAULT_A_GAIN
    a_gain: float = DEFAULT_A_GAIN
    f_noise: float = REFERENCE_PARAMS[10][2]
    delay_ns: float = DEFAULT_DELAY_NS
    sample_rate_gsps: float = 10.0
    classical_corr_time_ns: float = 10 * DEFAULT_DELAY_NS
    transfer_mode: str = "small-angle"
    rng_seed: int = 0
    # Power the laser itself runs at when an attenuator sits in front of the
    # interferometer.  None means no attenuator (phase noise set by power_mw).
    ld_power_mw: Optional[float] = None

    def __post_init__(self):
        if self.power_mw < 0:
            raise ValueError("power_mw must be >= 0")
        for name in ("q_coeff", "c_coeff", "a_gain", "f_noise"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.delay_ns <= 0 or self.sample_rate_gsps <= 0:
            raise ValueError("delay_ns and sample_rate_gsps must be > 0")
        if self.classical_corr_time_ns <= self.delay_ns:
            raise ValueError("classical_corr_time_ns must exceed delay_ns")
        if self.transfer_mode not in TRANSFER_MODES:
            raise ValueError(f"transfer_mode must be one of {TRANSFER_MODES}")
        if self.ld_power_mw is not None and self.ld_power_mw <= 0:
            raise ValueError("ld_power_mw must be > 0")

    @classmethod
    def from_products(cls, aq, ac, f, power_mw, a_gain=DEFAULT_A_GAIN, **kw):
        """Build a config from the fitted products A*Q, A*C and F."""
        return cls(power_mw=power_mw, q_coeff=aq / a_gain, c_coeff=ac / a_gain,
                   a_gain=a_gain, f_noise=f, **kw)

    @classmethod
    def from_reference(cls, rate_gsps, power_mw=0.9, **kw):
        aq, ac, f, _ = REFERENCE_PARAMS[int(rate_gsps)]
        kw.setdefault("sample_rate_gsps", float(rate_gsps))
        return cls.from_products(aq, ac, f, power_mw, **kw)

    def with_(self, **changes) -> "SimConfig":
        return replace(self, **changes)

    @property
    def sample_interval_ns(self) -> float:
        return 1.0 / self.sample_rate_gsps

    @property
    def phase_power_mw(self) -> float:
        return self.power_mw if self.ld_power_mw is None else self.ld_power_mw

    @property
    def quantum_phase_variance(self) -> float:
        if self.q_coeff == 0:
            return 0.0
        if self.phase_power_mw == 0:
            raise SingularModelError("quantum phase variance Q/P diverges at P = 0")
        return self.q_coeff / self.phase_power_mw

    @property
    def phase_variance(self) -> float:
        return self.quantum_phase_variance + self.c_coeff

    def model_variance(self) -> float:
        """Small-angle voltage variance A*P^2*Var(dtheta) + F in mV^2."""
        if self.power_mw == 0:
            return self.f_noise
        return self.a_gain * self.power_mw**2 * self.phase_variance + self.f_noise

    def quantum_voltage_variance(self) -> float:
        if self.power_mw == 0:
            return 0.0
        return self.a_gain * self.power_mw**2 * self.quantum_phase_variance

    def model_autocovariance(self, lags) -> np.ndarray:
        """Small-angle voltage autocovariance (mV^2) at integer sample lags."""
        k = np.abs(np.asarray(lags, dtype=float))
        tau = self.sample_interval_ns
        tri = np.clip(1.0 - k * tau / self.delay_ns, 0.0, None)
        amp = self.a_gain * self.power_mw**2
        qv = amp * self.quantum_phase_variance if self.power_mw > 0 else 0.0
        cov = qv * tri + amp * self.c_coeff * np.exp(-k * tau / self.classical_corr_time_ns)
        return cov + self.f_noise * (k == 0)


@dataclass(frozen=True)
class AdcConfig:
    bits: int = 8
    volts_per_code: float = 0.05
    offset_mv: float = 0.0

    def __post_init__(self):
        if self.bits != 8:
            raise ValueError("only 8-bit ADCs are modelled")
        if not self.volts_per_code > 0:
            raise ValueError("volts_per_code must be > 0")

    @classmethod
    def for_variance(cls, variance_mv2: float, offset_mv: float = 0.0) -> "AdcConfig":
        """Full scale of +-4 standard deviations across the 256 codes."""
        sd = math.sqrt(variance_mv2)
        vpc = 8.0 * sd / 256 if sd > 0 else 1.0
        return cls(volts_per_code=vpc, offset_mv=offset_mv)

    def quantize(self, v_mv) -> np.ndarray:
        x = (np.asarray(v_mv, dtype=float) - self.offset_mv) / self.volts_per_code
        # mid-tread, round half away from zero
        q = np.sign(x) * np.floor(np.abs(x) + 0.5)
        return np.clip(q + 128, 0, 255).astype(np.uint8)

    def to_voltage(self, codes) -> np.ndarray:
        return (np.asarray(codes, dtype=float) - 128.0) * self.volts_per_code + self.offset_mv


@dataclass
class VoltageTrace:
    codes: np.ndarray
    adc: AdcConfig
    sample_rate_gsps: float
    origin: str = "simulated"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.codes = np.ascontiguousarray(self.codes, dtype=np.uint8)
        if self.codes.size == 0:
            raise EmptyInputError("trace must be non-empty")
        if self.origin not in ("simulated", "file"):
            raise ValueError("origin must be 'simulated' or 'file'")

    def __len__(self):
        return int(self.codes.size)

    def voltages(self) -> np.ndarray:
        return self.adc.to_voltage(self.codes)


def _wiener_phase_diff(rng, n, delay, tau, diffusion):
    """theta(t_i + delay) - theta(t_i) for a Wiener path sampled at t_i = i*tau.

    The path is built exactly on the merged grid {j*tau} U {j*tau + r} where
    delay = K*tau + r, so no interpolation is involved.
    """
    K = int(math.floor(delay / tau))
    r = delay - K * tau
    if r < 1e-12 * tau:
        r = 0.0
    if r >= tau * (1 - 1e-12):
        K, r = K + 1, 0.0
    steps = n + K
    if r == 0.0:
        inc = rng.standard_normal(steps) * math.sqrt(diffusion * tau)
        theta = np.concatenate(([0.0], np.cumsum(inc)))
        return theta[K:K + n] - theta[:n]
    a = rng.standard_normal(steps + 1) * math.sqrt(diffusion * r)
    b = rng.standard_normal(steps) * math.sqrt(diffusion * (tau - r))
    theta = np.concatenate(([0.0], np.cumsum(a[:-1] + b)))
    # theta((i+K)*tau + r) = theta((i+K)*tau) + a[i+K]
    return theta[K:K + n] + a[K:K + n] - theta[:n]


def _ou_process(rng, n, variance, tau, corr_time):
    a = math.exp(-tau / corr_time)
    e = rng.standard_normal(n)
    e[0] *= math.sqrt(variance)
    e[1:] *= math.sqrt(variance * (1.0 - a * a))
    return lfilter([1.0], [1.0, -a], e)


def simulate_phase_diff(cfg: SimConfig, n: int, rng=None) -> np.ndarray:
    """Phase differences over the arm delay at the sample instants (rad)."""
    n = int(n)
    if n < 1:
        raise EmptyInputError("n must be >= 1")
    rng = make_rng(cfg.rng_seed) if rng is None else rng
    tau = cfg.sample_interval_ns
    dtheta = np.zeros(n)
    if cfg.q_coeff > 0:
        diffusion = cfg.quantum_phase_variance / cfg.delay_ns
        dtheta += _wiener_phase_diff(rng, n, cfg.delay_ns, tau, diffusion)
    if cfg.c_coeff > 0:
        dtheta += _ou_process(rng, n, cfg.c_coeff, tau, cfg.classical_corr_time_ns)
    return dtheta


def simulate_voltage(cfg: SimConfig, n: int, rng=None) -> np.ndarray:
    """Analog photodetector voltage (mV) after DC removal, before the ADC."""
    rng = make_rng(cfg.rng_seed) if rng is None else rng
    if cfg.power_mw == 0:
        if n < 1:
            raise EmptyInputError("n must be >= 1")
        signal = np.zeros(int(n))
    else:
        dtheta = simulate_phase_diff(cfg, n, rng)
        if cfg.transfer_mode == "full-sine":
            dtheta = np.sin(dtheta)
        signal = math.sqrt(cfg.a_gain) * cfg.power_mw * dtheta
    if cfg.f_noise > 0:
        signal = signal + rng.standard_normal(signal.size) * math.sqrt(cfg.f_noise)
    return signal


def simulate_trace(cfg: SimConfig, adc: Optional[AdcConfig] = None, n: int = 1_000_000) -> VoltageTrace:
    if adc is None:
        adc = AdcConfig.for_variance(cfg.model_variance())
    v = simulate_voltage(cfg, n)
    codes = adc.quantize(v)
    clamped = np.count_nonzero((codes == 0) | (codes == 255)) / codes.size
    if clamped > 0.01:
        warnings.warn(f"{clamped:.2%} of ADC codes are clamped", SaturationWarning, stacklevel=2)
    meta = {"rng_seed": cfg.rng_seed, "config": asdict(cfg)}
    return VoltageTrace(codes, adc, cfg.sample_rate_gsps, "simulated", meta)


def write_trace(trace: VoltageTrace, path) -> tuple[Path, Path]:
    """Write ``<path>.bin`` (raw codes) and ``<path>.json`` (sidecar)."""
    path = Path(path)
    bin_path = path.with_suffix(".bin")
    meta_path = path.with_suffix(".json")
    bin_path.parent.mkdir(parents=True, exist_ok=True)
    bin_path.write_bytes(trace.codes.tobytes())
    meta = {
        "schema_version": 1,
        "n_samples": len(trace),
        "sample_rate_gsps": trace.sample_rate_gsps,
        "volts_per_code": trace.adc.volts_per_code,
        "offset_mv": trace.adc.offset_mv,
        "bits": trace.adc.bits,
        "rng_seed": trace.metadata.get("rng_seed"),
        "config": trace.metadata.get("config"),
        "origin": trace.origin,
    }
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return bin_path, meta_path


def read_trace(bin_path, meta_path=None) -> VoltageTrace:
    bin_path = Path(bin_path)
    meta_path = bin_path.with_suffix(".json") if meta_path is None else Path(meta_path)
    meta = json.loads(meta_path.read_text())
    codes = np.fromfile(bin_path, dtype=np.uint8)
    adc = AdcConfig(volts_per_code=meta["volts_per_code"], offset_mv=meta.get("offset_mv", 0.0))
    extra = {k: meta.get(k) for k in ("rng_seed", "config")}
    extra["source"] = str(bin_path)
    return VoltageTrace(codes, adc, meta["sample_rate_gsps"], "file", extra)

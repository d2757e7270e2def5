"""Stage orchestration: simulate -> fit -> optimize -> entropy -> extract -> test.

A run is described by a :class:`PipelineConfig` (JSON, with a schema
version and a 256-bit master seed).  Every random draw in a run is derived
from the master seed, so identical configs give byte-identical artifacts.
Wall-clock timings are the one exception and live in ``timings.json``.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import entropy as ent
from . import noisemodel as nm
from . import randstats as rs
from .bits import BitStream, read_bits, write_bits
from .errors import StageError
from .extractor import (
    DEFAULT_BLOCK_N,
    DEFAULT_EPSILON,
    ExtractionPolicy,
    ToeplitzSpec,
    extract_stream,
    output_length,
    parse_master_seed,
    seed_fingerprint,
    seed_from_master,
    write_seed,
)
from .physsim import REFERENCE_PARAMS, SimConfig, read_trace, simulate_trace, write_trace

SCHEMA_VERSION = 1
STAGES = ("simulate", "fit", "optimize", "entropy", "extract", "test")
DEFAULT_MASTER_SEED = "5eed" * 16


@dataclass
class SimulateStage:
    rate_gsps: int = 10
    power_mw: float = 0.9
    n_samples: int = 1 << 24
    transfer_mode: str = "small-angle"
    delay_ns: float = 3.735


@dataclass
class FitStage:
    powers: list = field(default_factory=lambda: [float(p) for p in np.geomspace(0.01, 10.0, 20)])
    n_samples: int = 1_000_000
    # sweep points are acquired slowly so successive samples are independent
    sample_rate_gsps: float = 0.01


@dataclass
class Headline:
    """Entropy accounting from externally measured numbers."""
    gamma: float = 5.46
    total_var_mv2: float = 5.24
    range_mv: float = 10.2
    n_bins: int = 256
    n: int = 33_600_000
    m: int = 28_800_000
    sample_rate_gsps: float = 10.0


@dataclass
class EntropyStage:
    clip_fraction: float = 0.001
    n_bins: int = 256
    reference_ld_power_mw: float = 12.0
    reference_samples: int = 1 << 22
    gamma: Optional[float] = None
    headline: Optional[Headline] = None


@dataclass
class ExtractStage:
    block_n: int = DEFAULT_BLOCK_N
    m: Optional[int] = None
    epsilon: float = DEFAULT_EPSILON
    hmin_per_bit: Optional[float] = None
    method: str = "fast"


@dataclass
class TestStage:
    __test__ = False
    sequence_length: int = 1_000_000
    n_sequences: int = 100
    raw_sequences: int = 20
    raw_max_lag: int = 50
    raw_autocorr_samples: int = 10_000_000
    bits_max_lag: int = 100
    bits_autocorr_samples: int = 10_000_000


@dataclass
class PipelineConfig:
    preset: Optional[str] = None
    master_seed: str = DEFAULT_MASTER_SEED
    stages: list = field(default_factory=lambda: list(STAGES))
    out_dir: str = "qrng-run"
    report_path: Optional[str] = None
    simulate: SimulateStage = field(default_factory=SimulateStage)
    fit: FitStage = field(default_factory=FitStage)
    entropy: EntropyStage = field(default_factory=EntropyStage)
    extract: ExtractStage = field(default_factory=ExtractStage)
    test: TestStage = field(default_factory=TestStage)
    schema_version: int = SCHEMA_VERSION

    def validate(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {self.schema_version}")
        parse_master_seed(self.master_seed)
        unknown = [s for s in self.stages if s not in STAGES]
        if unknown:
            raise ValueError(f"unknown stages {unknown}; choose from {STAGES}")
        if self.simulate.rate_gsps not in REFERENCE_PARAMS:
            raise ValueError(f"rate_gsps must be one of {sorted(REFERENCE_PARAMS)}")
        return self

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data) -> "PipelineConfig":
        return _from_dict(cls, data).validate()

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path):
        Path(path).write_text(self.to_json())
        return Path(path)

    @property
    def report_file(self) -> Path:
        return Path(self.report_path) if self.report_path else Path(self.out_dir) / "report.json"


def _from_dict(cls, data):
    if data is None:
        return None
    extra = set(data) - {f.name for f in fields(cls)}
    if extra:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(extra)}")
    kw = {}
    for name, value in data.items():
        sub = _NESTED.get((cls.__name__, name))
        kw[name] = _from_dict(sub, value) if sub is not None and isinstance(value, dict) else value
    return cls(**kw)


_NESTED = {
    ("PipelineConfig", "simulate"): SimulateStage,
    ("PipelineConfig", "fit"): FitStage,
    ("PipelineConfig", "entropy"): EntropyStage,
    ("PipelineConfig", "extract"): ExtractStage,
    ("PipelineConfig", "test"): TestStage,
    ("EntropyStage", "headline"): Headline,
}


def preset(name: str, **overrides) -> PipelineConfig:
    """``paper-1gsps``, ``paper-2gsps``, ``paper-5gsps`` or ``paper-10gsps``."""
    rates = {f"paper-{r}gsps": r for r in REFERENCE_PARAMS}
    if name not in rates:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(rates)}")
    rate = rates[name]
    cfg = PipelineConfig(preset=name, out_dir=f"qrng-{name}")
    cfg.simulate.rate_gsps = rate
    # the headline numbers were measured at 10 GSa/s only
    if rate == 10:
        cfg.entropy.headline = Headline()
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg.validate()


def sub_seed(master_seed, label: str) -> int:
    """64-bit seed for one named random draw of the run."""
    key = parse_master_seed(master_seed)
    return int.from_bytes(hashlib.sha256(key + b"/" + label.encode()).digest()[:8], "little")


@dataclass
class RunReport:
    preset: Optional[str]
    seed_fingerprint: str
    stages: list
    timings_s: dict = field(default_factory=dict)
    simulation: Optional[dict] = None
    fit: Optional[dict] = None
    optimum: Optional[dict] = None
    entropy: Optional[dict] = None
    headline: Optional[dict] = None
    extraction: Optional[dict] = None
    tests: Optional[dict] = None
    failed_stage: Optional[str] = None
    error: Optional[str] = None

    def to_dict(self, timings=False):
        d = asdict(self)
        if not timings:
            d.pop("timings_s")
        return d

    def to_json(self, timings=False):
        return json.dumps(_jsonable(self.to_dict(timings)), indent=2, sort_keys=True) + "\n"

    def summary(self) -> str:
        lines = []
        if self.headline:
            h = self.headline
            lines += [
                "headline accounting",
                f"  gamma               {h['gamma']:.3f}",
                f"  quantum variance    {h['quantum_var_mv2']:.3f} mV^2",
                f"  min-entropy         {h['hmin_per_sample']:.3f} bits/sample",
                f"  raw rate            {h['raw_rate_gbps']:.2f} Gbps",
                f"  final rate          {h['final_rate_gbps']:.2f} Gbps",
            ]
        if self.entropy:
            e = self.entropy
            lines += [
                "simulated acquisition",
                f"  gamma (measured)    {e['gamma']:.3f}",
                f"  quantum variance    {e['quantum_var_mv2']:.3f} mV^2",
                f"  min-entropy         {e['hmin_per_sample']:.3f} bits/sample (ADC grid)",
                f"  histogram procedure {e['histogram']['hmin_per_sample']:.3f} bits/sample",
            ]
        if self.extraction:
            x = self.extraction
            lines += [f"  extraction          n={x['n']} m={x['m']} blocks={x['blocks']}",
                      f"  final rate          {x['final_rate_gbps']:.2f} Gbps"]
        if self.fit:
            f = self.fit
            lines.append(f"fit: AQ={f['aq']:.4f} AC={f['ac']:.4f} F={f['f']:.4f} R^2={f['r_squared']:.5f}")
        if self.optimum:
            lines.append(f"optimal power {self.optimum['p_star_mw']:.4f} mW, gamma {self.optimum['gamma_max']:.3f}")
        if self.tests:
            t = self.tests
            if "extracted" in t:
                lines.append(f"tests on extracted bits ({t['extracted']['n_sequences']} sequences): "
                             f"{'all passed' if t['extracted']['all_passed'] else 'FAILED ' + ', '.join(t['extracted']['failed'])}")
            if "raw" in t:
                lines.append(f"tests on raw bits: {len(t['raw']['failed'])} of {len(rs.TEST_NAMES)} failed")
        if self.failed_stage:
            lines.append(f"FAILED in stage {self.failed_stage}: {self.error}")
        return "\n".join(lines)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if is_dataclass(obj):
        return _jsonable(asdict(obj))
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def headline_accounting(h: Headline) -> dict:
    """Largest in-range bin of the quantum Gaussian over the stated range.

    The folded variant (tails piled into the end bins) is reported alongside.
    """
    v1, v2 = -h.range_mv / 2, h.range_mv / 2
    rep = ent.entropy_report(h.total_var_mv2, h.gamma, v1, v2, h.n_bins, h.sample_rate_gsps, h.n, h.m,
                             tails="drop")
    d = rep.as_dict()
    d.update(n=h.n, m=h.m, sample_rate_gsps=h.sample_rate_gsps, range_mv=h.range_mv, tails="drop",
             hmin_folded_per_sample=ent.gaussian_min_entropy(rep.quantum_var_mv2, v1, v2, h.n_bins),
             log2_inv_epsilon=_implied_log2_inv_eps(h.n, h.m, rep.hmin_per_bit))
    return d


def _implied_log2_inv_eps(n, m, h_bit):
    return (n * h_bit - m) / 2.0


class _Run:
    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.out = Path(cfg.out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.report = RunReport(cfg.preset, seed_fingerprint(cfg.master_seed), [])
        self.trace = None
        self.params = None
        self.policy_h = None
        self.bits = None

    def sim_config(self, **kw):
        s = self.cfg.simulate
        return SimConfig.from_reference(s.rate_gsps, s.power_mw, transfer_mode=s.transfer_mode,
                                     delay_ns=s.delay_ns, **kw)

    # --- stages -------------------------------------------------------------

    def simulate(self):
        s = self.cfg.simulate
        cfg = self.sim_config(rng_seed=sub_seed(self.cfg.master_seed, "simulate"))
        self.trace = simulate_trace(cfg, n=s.n_samples)
        bin_path, meta_path = write_trace(self.trace, self.out / "trace.bin")
        self.report.simulation = {
            "rate_gsps": s.rate_gsps, "power_mw": s.power_mw, "n_samples": s.n_samples,
            "model_variance_mv2": cfg.model_variance(), "volts_per_code": self.trace.adc.volts_per_code,
            "trace": bin_path.name, "meta": meta_path.name,
        }

    def fit(self):
        f = self.cfg.fit
        base = self.sim_config(rng_seed=sub_seed(self.cfg.master_seed, "fit"))
        points = nm.simulate_sweep(base, f.powers, f.n_samples, f.sample_rate_gsps)
        nm.write_points(points, self.out / "sweep.csv")
        self.params = nm.fit_variance_model(points)
        truth = REFERENCE_PARAMS[self.cfg.simulate.rate_gsps]
        self.report.fit = dict(self.params.as_dict(), n_points=len(points), sweep="sweep.csv",
                               truth={"aq": truth[0], "ac": truth[1], "f": truth[2]})

    def optimize(self):
        params = self.params
        if params is None:
            aq, ac, f, r2 = REFERENCE_PARAMS[self.cfg.simulate.rate_gsps]
            params = nm.NoiseModelParams(aq, ac, f, r2)
        p_star, g_star = nm.optimal_power(params)
        p_num, g_num = nm.optimal_power_search(params)
        self.report.optimum = {"p_star_mw": p_star, "gamma_max": g_star,
                               "p_search_mw": p_num, "gamma_search": g_num,
                               "source": "fit" if self.params is not None else "table"}

    def _load_trace(self):
        if self.trace is None:
            path = self.out / "trace.bin"
            if not path.exists():
                raise FileNotFoundError(f"{path} not found; run the simulate stage first")
            self.trace = read_trace(path)
        return self.trace

    def entropy(self):
        e = self.cfg.entropy
        trace = self._load_trace()
        v = trace.voltages()
        total = float(np.var(v))
        if e.gamma is not None:
            gamma, classical = float(e.gamma), None
        else:
            cfg = self.sim_config(rng_seed=sub_seed(self.cfg.master_seed, "reference"))
            classical = nm.simulate_classical_reference(cfg, e.reference_ld_power_mw, e.reference_samples)
            gamma = nm.gamma_from_measurement(total, classical)
        hist = ent.empirical_min_entropy(v, ent.HistogramSpec(e.clip_fraction, e.n_bins))
        ent.write_histogram(hist, self.out / "histogram.csv")
        qv = ent.quantum_variance(total, gamma)
        hist_gauss = ent.gaussian_min_entropy(qv, hist.v1, hist.v2, e.n_bins, float(v.mean()))
        # extraction policy: Gaussian model over the ADC code bins themselves
        adc = trace.adc
        w = adc.volts_per_code
        lo = float(adc.to_voltage(np.array([0]))[0]) - w / 2
        hi = float(adc.to_voltage(np.array([(1 << adc.bits) - 1]))[0]) + w / 2
        rep = ent.entropy_report(total, gamma, lo, hi, 1 << adc.bits, trace.sample_rate_gsps,
                                 mean_mv=float(v.mean()))
        self.policy_h = rep.hmin_per_bit
        self.report.entropy = dict(
            rep.as_dict(), classical_var_mv2=classical,
            histogram={"v1_mv": hist.v1, "v2_mv": hist.v2, "p_max": hist.p_max,
                       "hmin_per_sample": hist.hmin_per_sample, "gaussian_hmin_per_sample": hist_gauss,
                       "file": "histogram.csv"},
        )
        if e.headline is not None:
            self.report.headline = headline_accounting(e.headline)

    def extract(self):
        x = self.cfg.extract
        trace = self._load_trace()
        h = x.hmin_per_bit if x.hmin_per_bit is not None else self.policy_h
        if h is None:
            raise ValueError("no min-entropy available: run the entropy stage or set extract.hmin_per_bit")
        policy = ExtractionPolicy(h, x.epsilon, x.block_n)
        m = x.m if x.m is not None else output_length(x.block_n, policy)
        spec = ToeplitzSpec(x.block_n, m, seed_from_master(self.cfg.master_seed, x.block_n, m))
        self.bits = extract_stream(policy, spec, trace.codes, method=x.method)
        write_bits(self.bits, self.out / "extracted.bits")
        write_seed(spec.seed, self.out / "toeplitz_seed.bits")
        blocks = len(self.bits) // m
        rate = trace.sample_rate_gsps
        meta = {
            "n": spec.n, "m": m, "blocks": blocks, "output_bits": len(self.bits),
            "epsilon": x.epsilon, "hmin_per_bit": h, "method": x.method,
            "seed_fingerprint": seed_fingerprint(self.cfg.master_seed),
            "log2_inv_epsilon": _implied_log2_inv_eps(spec.n, m, h),
            "sample_rate_gsps": rate,
            "final_rate_gbps": 8 * (m / spec.n) * rate,
            "file": "extracted.bits", "seed_file": "toeplitz_seed.bits",
        }
        (self.out / "extracted.json").write_text(json.dumps(_jsonable(meta), indent=2, sort_keys=True) + "\n")
        self.report.extraction = meta

    def test(self):
        t = self.cfg.test
        results = {}
        if self.bits is None and (self.out / "extracted.bits").exists():
            self.bits = read_bits(self.out / "extracted.bits")
        if self.bits is not None:
            rep = rs.run_tests(self.bits, t.sequence_length, t.n_sequences)
            results["extracted"] = dict(rep.as_dict(), failed=rep.failed, all_passed=rep.all_passed)
            nb = min(len(self.bits), t.bits_autocorr_samples)
            ac = rs.autocorrelation(self.bits.to_bits()[:nb], t.bits_max_lag)
            results["extracted_autocorr"] = {"n": ac.n, "max_abs": ac.max_abs(1), "bound": 5 * ac.sigma_null}
            _write_autocorr(ac, self.out / "autocorr_extracted.csv")
        trace = self._load_trace()
        raw = BitStream(trace.codes)
        if t.raw_sequences and len(raw) >= 10 * t.sequence_length:
            rep = rs.run_tests(raw, t.sequence_length, t.raw_sequences)
            results["raw"] = dict(rep.as_dict(), failed=rep.failed, all_passed=rep.all_passed)
        ac = rs.autocorrelation(trace.voltages()[:t.raw_autocorr_samples], t.raw_max_lag)
        results["raw_autocorr"] = {"n": ac.n, "rho": ac.coeffs[:11].tolist()}
        _write_autocorr(ac, self.out / "autocorr_raw.csv")
        self.report.tests = results


def _write_autocorr(ac, path):
    lines = ["lag,rho"] + [f"{k},{r!r}" for k, r in zip(ac.lags.tolist(), ac.coeffs.tolist())]
    Path(path).write_text("\n".join(lines) + "\n")


def run_pipeline(cfg: PipelineConfig) -> RunReport:
    """Run the enabled stages in order and write the report.

    A failing stage raises StageError naming it; the artifacts of earlier
    stages and a partial report stay on disk.
    """
    cfg.validate()
    run = _Run(cfg)
    cfg.save(run.out / "config.json")
    for stage in STAGES:
        if stage not in cfg.stages:
            continue
        t0 = time.perf_counter()
        try:
            getattr(run, stage)()
        except Exception as exc:
            run.report.failed_stage = stage
            run.report.error = f"{type(exc).__name__}: {exc}"
            _write_report(run, cfg)
            raise StageError(stage, exc) from exc
        run.report.timings_s[stage] = time.perf_counter() - t0
        run.report.stages.append(stage)
    _write_report(run, cfg)
    return run.report


def _write_report(run, cfg):
    path = cfg.report_file
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(run.report.to_json())
    (run.out / "timings.json").write_text(json.dumps(run.report.timings_s, indent=2, sort_keys=True) + "\n")

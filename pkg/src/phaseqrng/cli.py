"""Command line entry point: ``phaseqrng <command> [options]``.

Every command accepts ``--config FILE``.  For ``run`` that is a pipeline
config; for the other commands it is a JSON object of option defaults (keys
are the long option names with dashes or underscores), and flags given on
the command line override it.

Exit status: 0 success, 1 failure (including failed statistical tests), 2
usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import entropy as ent
from . import noisemodel as nm
from . import randstats as rs
from . import stabilizer as stab
from .bits import BitStream, export_ascii, export_binary_msb, read_bits, write_bits
from .errors import QrngError, StageError
from .extractor import (
    DEFAULT_BATCH,
    DEFAULT_EPSILON,
    ExtractionPolicy,
    ToeplitzSpec,
    bench_throughput,
    extract_stream,
    output_length,
    read_seed,
    seed_fingerprint,
    seed_from_master,
    write_seed,
)
from .physsim import REFERENCE_PARAMS, SimConfig, read_trace, simulate_trace, write_trace
from .pipeline import DEFAULT_MASTER_SEED, STAGES, PipelineConfig, preset, run_pipeline


class UsageError(Exception):
    pass


def _print_json(obj):
    print(json.dumps(obj, indent=2, sort_keys=True, default=float))


def _load_input(path, meta=None):
    """A trace (.bin with sidecar) or a packed bit file."""
    path = Path(path)
    if path.suffix == ".bin" and (meta or path.with_suffix(".json").exists()):
        return read_trace(path, meta)
    return read_bits(path)


# --- commands ---------------------------------------------------------------


def cmd_simulate(a):
    cfg = SimConfig.from_reference(a.rate, a.power, rng_seed=a.seed, transfer_mode=a.transfer_mode,
                                delay_ns=a.delay)
    trace = simulate_trace(cfg, n=a.n)
    bin_path, meta_path = write_trace(trace, a.out)
    print(f"wrote {bin_path} and {meta_path} ({len(trace)} samples, "
          f"variance {np.var(trace.voltages()):.4f} mV^2)")
    return 0


def cmd_fit(a):
    if a.input:
        points = nm.read_points(a.input)
    else:
        powers = np.geomspace(a.p_min, a.p_max, a.points)
        base = SimConfig.from_reference(a.rate, rng_seed=a.seed)
        points = nm.simulate_sweep(base, powers, a.n_samples, a.sweep_rate)
        if a.points_out:
            nm.write_points(points, a.points_out)
    params = nm.fit_variance_model(points)
    out = params.as_dict()
    if a.power:
        out["gamma"] = nm.gamma_from_fit(params, a.power)
    _print_json(out)
    if a.out:
        Path(a.out).write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_optimal_power(a):
    if a.input:
        d = json.loads(Path(a.input).read_text())
        params = nm.NoiseModelParams(d["aq"], d["ac"], d["f"], d.get("r_squared", 1.0))
    elif a.aq is not None:
        if a.ac is None or a.f is None:
            raise UsageError("--aq needs --ac and --f")
        params = nm.NoiseModelParams(a.aq, a.ac, a.f)
    else:
        aq, ac, f, r2 = REFERENCE_PARAMS[a.rate]
        params = nm.NoiseModelParams(aq, ac, f, r2)
    p, g = nm.optimal_power(params)
    ps, gs = nm.optimal_power_search(params)
    _print_json({"p_star_mw": p, "gamma_max": g, "p_search_mw": ps, "gamma_search": gs,
                 "relative_difference": abs(ps - p) / p})
    return 0


def cmd_entropy(a):
    if a.input:
        trace = _load_input(a.input, a.meta)
        if isinstance(trace, BitStream):
            raise UsageError("entropy needs a trace (.bin with its .json sidecar)")
        v = trace.voltages()
        total = float(np.var(v))
        if a.gamma is not None:
            gamma = a.gamma
        elif a.classical_var is not None:
            gamma = nm.gamma_from_measurement(total, a.classical_var)
        else:
            raise UsageError("give --gamma or --classical-var")
        hist = ent.empirical_min_entropy(v, ent.HistogramSpec(a.clip, a.bins))
        rep = ent.entropy_report(total, gamma, hist.v1, hist.v2, a.bins, trace.sample_rate_gsps,
                                 mean_mv=float(v.mean()), tails=a.tails)
        out = dict(rep.as_dict(), histogram_hmin_per_sample=hist.hmin_per_sample,
                   histogram_p_max=hist.p_max)
        if a.histogram_out:
            ent.write_histogram(hist, a.histogram_out)
    else:
        if a.total_var is None or a.range is None or a.gamma is None:
            raise UsageError("without --input give --total-var, --range and --gamma")
        rep = ent.entropy_report(a.total_var, a.gamma, -a.range / 2, a.range / 2, a.bins,
                                 a.rate, a.block_n, a.block_m, tails=a.tails)
        out = rep.as_dict()
    print(f"H_min = {out['hmin_per_sample']:.4f} bits/sample")
    _print_json(out)
    return 0


def cmd_extract(a):
    policy = ExtractionPolicy(a.hmin, a.epsilon, a.n)
    budget = output_length(a.n, policy)
    m = a.m if a.m is not None else budget
    if m > budget:
        print(f"rejected: m = {m} exceeds the entropy budget {budget}", file=sys.stderr)
        return 1
    info = {"n": a.n, "m": m, "budget": budget, "epsilon": a.epsilon, "hmin_per_bit": a.hmin}
    if a.input:
        if a.seed_file and Path(a.seed_file).exists():
            seed = read_seed(a.seed_file)
            info["seed_file"] = a.seed_file
        else:
            seed = seed_from_master(a.master_seed, a.n, m)
            info["seed_fingerprint"] = seed_fingerprint(a.master_seed)
            if a.seed_file:
                write_seed(seed, a.seed_file)
        spec = ToeplitzSpec(a.n, m, seed)
        data = _load_input(a.input)
        raw = data.codes if not isinstance(data, BitStream) else data
        out = extract_stream(policy, spec, raw, method=a.method)
        info.update(output_bits=len(out), blocks=len(out) // m)
        if a.output:
            write_bits(out, a.output)
            Path(a.output).with_suffix(".json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
            info["output"] = a.output
    print("accepted")
    _print_json(info)
    return 0


def cmd_autocorr(a):
    data = _load_input(a.input, a.meta)
    series = data.voltages() if not isinstance(data, BitStream) else data
    if a.limit:
        series = series[:a.limit]
    res = rs.autocorrelation(series, a.max_lag, a.method)
    if a.out:
        lines = ["lag,rho"] + [f"{k},{r!r}" for k, r in zip(res.lags.tolist(), res.coeffs.tolist())]
        Path(a.out).write_text("\n".join(lines) + "\n")
    for k, r in zip(res.lags[: a.show + 1], res.coeffs[: a.show + 1]):
        print(f"{k:5d} {r: .6f}")
    print(f"n = {res.n}, max |rho(k)| for k >= 1: {res.max_abs(1):.3e} (5/sqrt(n) = {5 * res.sigma_null:.3e})")
    return 0


def cmd_test(a):
    data = _load_input(a.input, a.meta)
    bits = BitStream(data.codes) if not isinstance(data, BitStream) else data
    if a.export_ascii:
        export_ascii(bits, a.export_ascii)
    if a.export_binary:
        export_binary_msb(bits, a.export_binary)
    rep = rs.run_tests(bits, a.seq_len, a.n_seq, a.alpha, min_count=a.min_sequences)
    print(f"{rep.n_sequences} sequences of {rep.sequence_length} bits")
    print(rep.format_table())
    if a.out:
        Path(a.out).write_text(json.dumps(rep.as_dict(), indent=2, sort_keys=True) + "\n")
    return 0 if rep.all_passed else 1


def cmd_stabilize(a):
    plant = stab.PlantConfig(a.drift_rate, a.drift_noise, a.visibility, a.input_power, a.meter_noise,
                             a.meter_rate, a.actuator_range, a.slew)
    steps = []
    for s in a.step or ():
        t, _, rad = s.partition(":")
        if not rad:
            raise UsageError("--step takes TIME:RADIANS")
        steps.append((float(t), float(rad)))
    if a.open_loop:
        trace = stab.run_open_loop(plant, a.duration, a.seed, steps, noise=not a.no_noise)
    else:
        gains = stab.PidGains(a.kp, a.ki, a.kd, a.integral_clamp, a.setpoint)
        trace = stab.run_closed_loop(plant, gains, a.duration, a.seed, steps, noise=not a.no_noise)
    if a.out:
        trace.write_csv(a.out)
    print(f"steps {trace.t.size}, RMS OUT1 deviation {trace.rms_deviation:.4%} of input power, "
          f"{len(trace.events)} actuator wraps")
    return 0


def cmd_bench(a):
    rng = np.random.default_rng(a.seed)
    seed = BitStream(rng.integers(0, 256, (a.n + a.m + 6) // 8, dtype=np.uint8), a.n + a.m - 1)
    spec = ToeplitzSpec(a.n, a.m, seed)
    methods = ["fast", "fft", "naive"] if a.method == "all" else [a.method]
    results = {meth: bench_throughput(spec, a.duration, meth, a.batch) for meth in methods}
    for meth, r in results.items():
        note = " (extrapolated)" if r["extrapolated"] else ""
        print(f"{meth:6s} {r['input_mbps']:12.4f} Mbps in  {r['output_mbps']:12.4f} Mbps out  "
              f"(mean {r['input_mbps_mean']:.4f}, best {r['input_mbps_best']:.4f}){note}")
    if "fast" in results and "naive" in results:
        print(f"speed-up over naive: {results['fast']['input_mbps'] / results['naive']['input_mbps']:.0f}x")
    return 0


def cmd_run(a):
    if a.config:
        cfg = PipelineConfig.load(a.config)
    else:
        cfg = preset(a.preset or "paper-10gsps")
    if a.preset and a.config:
        raise UsageError("give --preset or --config, not both")
    if a.out_dir:
        cfg.out_dir = a.out_dir
    if a.master_seed:
        cfg.master_seed = a.master_seed
    if a.stages:
        cfg.stages = [s.strip() for s in a.stages.split(",") if s.strip()]
    if a.n_samples:
        cfg.simulate.n_samples = a.n_samples
    if a.n_sequences:
        cfg.test.n_sequences = a.n_sequences
    cfg.validate()
    try:
        report = run_pipeline(cfg)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(report.summary())
    print(f"report: {cfg.report_file}")
    return 0


# --- parser -----------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="phaseqrng", description="Phase-noise QRNG model and post-processing")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_, description=help_)
        sp.add_argument("--config", help="JSON file of option defaults")
        sp.set_defaults(func=func)
        return sp

    sp = add("simulate", cmd_simulate, "simulate a digitized raw trace")
    sp.add_argument("--rate", type=int, default=10, choices=sorted(REFERENCE_PARAMS))
    sp.add_argument("--power", type=float, default=0.9, help="optical power at the PD (mW)")
    sp.add_argument("--n", type=int, default=1_000_000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--delay", type=float, default=3.735, help="arm delay (ns)")
    sp.add_argument("--transfer-mode", default="small-angle", choices=["small-angle", "full-sine"])
    sp.add_argument("--out", default="trace.bin")

    sp = add("fit", cmd_fit, "fit the variance-vs-power model")
    sp.add_argument("--input", help="CSV of power_mw,variance_mv2[,n_samples]")
    sp.add_argument("--rate", type=int, default=10, choices=sorted(REFERENCE_PARAMS))
    sp.add_argument("--points", type=int, default=20)
    sp.add_argument("--p-min", type=float, default=0.01)
    sp.add_argument("--p-max", type=float, default=10.0)
    sp.add_argument("--n-samples", type=int, default=1_000_000)
    sp.add_argument("--sweep-rate", type=float, default=0.01, help="sweep acquisition rate (GSa/s)")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--power", type=float, help="also report gamma at this power")
    sp.add_argument("--points-out")
    sp.add_argument("--out")

    sp = add("optimal-power", cmd_optimal_power, "power that maximizes gamma")
    sp.add_argument("--input", help="fit JSON")
    sp.add_argument("--aq", type=float)
    sp.add_argument("--ac", type=float)
    sp.add_argument("--f", type=float)
    sp.add_argument("--rate", type=int, default=10, choices=sorted(REFERENCE_PARAMS))

    sp = add("entropy", cmd_entropy, "min-entropy of a trace or of stated variances")
    sp.add_argument("--input")
    sp.add_argument("--meta")
    sp.add_argument("--gamma", type=float)
    sp.add_argument("--classical-var", type=float, help="measured classical variance (mV^2)")
    sp.add_argument("--total-var", type=float)
    sp.add_argument("--range", type=float, help="effective range V2 - V1 (mV)")
    sp.add_argument("--bins", type=int, default=256)
    sp.add_argument("--clip", type=float, default=0.001)
    sp.add_argument("--tails", default="fold", choices=list(ent.TAILS))
    sp.add_argument("--rate", type=float, default=10.0)
    sp.add_argument("--block-n", type=int)
    sp.add_argument("--block-m", type=int)
    sp.add_argument("--histogram-out")

    sp = add("extract", cmd_extract, "Toeplitz-hash raw data")
    sp.add_argument("--n", "--block-size", dest="n", type=int, default=1 << 20, help="input bits per block")
    sp.add_argument("--m", type=int, help="output bits per block (default: the entropy budget)")
    sp.add_argument("--seed-file", help="Toeplitz seed file; read if it exists, else written")
    sp.add_argument("--hmin", type=float, required=False, default=None, help="min-entropy per input bit")
    sp.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)
    sp.add_argument("--input")
    sp.add_argument("--output")
    sp.add_argument("--master-seed", default=DEFAULT_MASTER_SEED)
    sp.add_argument("--method", default="fast", choices=["fast", "fft", "naive"])

    sp = add("autocorr", cmd_autocorr, "autocorrelation of a trace or bit file")
    sp.add_argument("--input", required=False)
    sp.add_argument("--meta")
    sp.add_argument("--max-lag", type=int, default=100)
    sp.add_argument("--method", default="fft", choices=["fft", "direct"])
    sp.add_argument("--limit", type=int, help="use only the first LIMIT values")
    sp.add_argument("--show", type=int, default=10)
    sp.add_argument("--out")

    sp = add("test", cmd_test, "statistical test subset on a bit file or raw trace")
    sp.add_argument("--input")
    sp.add_argument("--meta")
    sp.add_argument("--seq-len", type=int, default=1_000_000)
    sp.add_argument("--n-seq", type=int)
    sp.add_argument("--alpha", type=float, default=rs.ALPHA)
    sp.add_argument("--min-sequences", type=int, default=10)
    sp.add_argument("--export-ascii")
    sp.add_argument("--export-binary")
    sp.add_argument("--out")

    sp = add("stabilize", cmd_stabilize, "simulate the interferometer phase lock")
    d = stab.PlantConfig()
    g = stab.PidGains()
    sp.add_argument("--drift-rate", type=float, default=d.drift_rate)
    sp.add_argument("--drift-noise", type=float, default=d.drift_noise)
    sp.add_argument("--visibility", type=float, default=d.fringe_visibility)
    sp.add_argument("--input-power", type=float, default=d.input_power_mw)
    sp.add_argument("--meter-noise", type=float, default=d.meter_noise)
    sp.add_argument("--meter-rate", type=float, default=d.meter_rate_hz)
    sp.add_argument("--actuator-range", type=float, default=d.actuator_range_rad)
    sp.add_argument("--slew", type=float, default=d.actuator_slew_rad_per_s)
    sp.add_argument("--kp", type=float, default=g.kp)
    sp.add_argument("--ki", type=float, default=g.ki)
    sp.add_argument("--kd", type=float, default=g.kd)
    sp.add_argument("--integral-clamp", type=float, default=g.integral_clamp)
    sp.add_argument("--setpoint", type=float, default=g.setpoint)
    sp.add_argument("--duration", type=float, default=1200.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--step", action="append", help="phase step TIME:RADIANS (repeatable)")
    sp.add_argument("--open-loop", action="store_true")
    sp.add_argument("--no-noise", action="store_true")
    sp.add_argument("--out")

    sp = add("bench", cmd_bench, "extractor throughput")
    sp.add_argument("--n", type=int, default=1 << 20)
    sp.add_argument("--m", type=int, default=812_000)
    sp.add_argument("--duration", type=float, default=2.0)
    sp.add_argument("--method", default="fast", choices=["fast", "fft", "naive", "all"])
    sp.add_argument("--batch", type=int, default=DEFAULT_BATCH)
    sp.add_argument("--seed", type=int, default=0)

    sp = add("run", cmd_run, "full pipeline")
    sp.add_argument("--preset", choices=[f"paper-{r}gsps" for r in REFERENCE_PARAMS])
    sp.add_argument("--out-dir")
    sp.add_argument("--master-seed")
    sp.add_argument("--stages", help=f"comma separated subset of {','.join(STAGES)}")
    sp.add_argument("--n-samples", type=int)
    sp.add_argument("--n-sequences", type=int)
    return p


_REQUIRED = {
    "extract": ("hmin",),
    "autocorr": ("input",),
    "test": ("input",),
}


def _apply_config_defaults(parser, argv):
    """Re-parse with defaults taken from ``--config`` for non-pipeline commands."""
    args = parser.parse_args(argv)
    if args.command == "run" or not args.config:
        return args
    sub = next(a for a in parser._subparsers._group_actions if isinstance(a, argparse._SubParsersAction))
    sp = sub.choices[args.command]
    try:
        data = json.loads(Path(args.config).read_text())
    except (OSError, ValueError) as exc:
        sp.error(f"cannot read config {args.config}: {exc}")
    if not isinstance(data, dict):
        sp.error("config must be a JSON object")
    dests = {a.dest for a in sp._actions}
    norm = {k.replace("-", "_"): v for k, v in data.items()}
    unknown = sorted(set(norm) - dests - {"config"})
    if unknown:
        sp.error(f"unknown config keys: {', '.join(unknown)}")
    sp.set_defaults(**norm)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    args = _apply_config_defaults(parser, argv)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    for name in _REQUIRED.get(args.command, ()):
        if getattr(args, name) is None:
            sub.error(f"--{name.replace('_', '-')} is required")
    try:
        return args.func(args)
    except UsageError as exc:
        sub.print_usage(sys.stderr)
        print(f"{sub.prog}: error: {exc}", file=sys.stderr)
        return 2
    except (QrngError, StageError, ValueError, OSError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

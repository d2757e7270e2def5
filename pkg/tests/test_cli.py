import json
import subprocess
import sys

import pytest

from phaseqrng.cli import main


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def trace(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["simulate", "--n", "300000", "--seed", "1", "--out", str(d / "trace.bin")]) == 0
    return d / "trace.bin"


def test_entropy_from_trace(capsys, trace):
    code, out, _ = run(capsys, "entropy", "--input", trace, "--meta", trace.with_suffix(".json"),
                       "--gamma", 5.46)
    assert code == 0
    assert out.startswith("H_min = ")
    assert 5 < float(out.split()[2]) < 8


def test_entropy_from_numbers(capsys):
    code, out, _ = run(capsys, "entropy", "--total-var", 5.24, "--gamma", 5.46, "--range", 10.2,
                       "--tails", "drop", "--block-n", 33_600_000, "--block-m", 28_800_000)
    assert code == 0
    d = json.loads(out[out.index("{"):])
    assert 6.95 <= d["hmin_per_sample"] <= 7.15
    assert d["final_rate_gbps"] == pytest.approx(68.571, abs=1e-3)


def test_extract_budget(capsys, tmp_path):
    code, out, _ = run(capsys, "extract", "--n", 1048576, "--m", 901120, "--hmin", 0.88, "--epsilon", 1e-30)
    assert code == 0 and out.startswith("accepted")
    code, _, err = run(capsys, "extract", "--n", 1048576, "--m", 950000, "--hmin", 0.88)
    assert code == 1 and "exceeds" in err


def test_extract_and_test_files(capsys, trace, tmp_path):
    out_bits = tmp_path / "x.bits"
    code, _, _ = run(capsys, "extract", "--input", trace, "--n", 65536, "--hmin", 0.7,
                     "--output", out_bits, "--seed-file", tmp_path / "seed.bits")
    assert code == 0
    meta = json.loads(out_bits.with_suffix(".json").read_text())
    assert meta["output_bits"] == meta["blocks"] * meta["m"] > 0
    assert (tmp_path / "seed.bits").exists()
    code, out, _ = run(capsys, "test", "--input", out_bits, "--seq-len", 10_000, "--min-sequences", 10,
                       "--export-ascii", tmp_path / "x.txt")
    assert code in (0, 1) and "Frequency" in out
    assert (tmp_path / "x.txt").read_text().strip("01\n") == ""


def test_raw_codes_fail_tests(capsys, trace):
    code, out, _ = run(capsys, "test", "--input", trace, "--seq-len", 100_000, "--n-seq", 20)
    assert code == 1 and "FAIL" in out


def test_autocorr_and_stabilize(capsys, trace, tmp_path):
    code, out, _ = run(capsys, "autocorr", "--input", trace, "--max-lag", 40, "--show", 3)
    assert code == 0 and "max |rho(k)|" in out
    code, out, _ = run(capsys, "stabilize", "--duration", 60, "--step", "5:0.5", "--out", tmp_path / "s.csv")
    assert code == 0 and "RMS OUT1 deviation" in out
    assert (tmp_path / "s.csv").read_text().startswith("t,out1_mw,phi_rad,control")


def test_optimal_power(capsys):
    code, out, _ = run(capsys, "optimal-power", "--rate", 1)
    assert code == 0
    assert json.loads(out)["relative_difference"] < 1e-6


def test_usage_errors(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["entropy", "--bogus"])
    assert exc.value.code == 2
    assert "usage" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        main(["extract", "--n", "1024"])
    assert exc.value.code == 2
    assert run(capsys, "entropy", "--gamma", 5.0)[0] == 2
    assert run(capsys, "stabilize", "--step", "5", "--duration", 10)[0] == 2


def test_config_defaults(capsys, tmp_path):
    cfg = tmp_path / "opts.json"
    cfg.write_text(json.dumps({"total-var": 5.24, "gamma": 5.46, "range": 10.2}))
    code, out, _ = run(capsys, "entropy", "--config", cfg, "--gamma", 4.0)
    assert code == 0
    assert json.loads(out[out.index("{"):])["gamma"] == 4.0
    cfg.write_text(json.dumps({"not_an_option": 1}))
    with pytest.raises(SystemExit) as exc:
        main(["entropy", "--config", str(cfg)])
    assert exc.value.code == 2


def test_run_simulate_stage(capsys, tmp_path):
    code, out, _ = run(capsys, "run", "--preset", "paper-1gsps", "--out-dir", tmp_path,
                       "--stages", "simulate", "--n-samples", 10_000)
    assert code == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["stages"] == ["simulate"] and rep["simulation"]["rate_gsps"] == 1
    code, _, err = run(capsys, "run", "--out-dir", tmp_path / "b", "--stages", "extract",
                       "--n-samples", 10_000)
    assert code == 1 and "extract" in err


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "phaseqrng", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "stabilize" in r.stdout

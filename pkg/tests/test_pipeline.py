import json

import pytest

from phaseqrng.errors import StageError
from phaseqrng.pipeline import (
    DEFAULT_MASTER_SEED,
    STAGES,
    Headline,
    PipelineConfig,
    headline_accounting,
    preset,
    run_pipeline,
    sub_seed,
)


def small_config(out_dir, **kw) -> PipelineConfig:
    cfg = PipelineConfig(out_dir=str(out_dir), **kw)
    cfg.simulate.n_samples = 1 << 18
    cfg.fit.powers = [0.05, 0.2, 0.9, 3.0, 10.0]
    cfg.fit.n_samples = 100_000
    cfg.entropy.reference_samples = 1 << 16
    cfg.test.sequence_length = 100_000
    cfg.test.n_sequences = 10
    cfg.test.raw_autocorr_samples = 1 << 18
    return cfg


def test_config_round_trip(tmp_path):
    cfg = preset("paper-10gsps")
    cfg.save(tmp_path / "c.json")
    back = PipelineConfig.load(tmp_path / "c.json")
    assert back == cfg
    assert isinstance(back.entropy.headline, Headline)
    assert json.loads(cfg.to_json())["schema_version"] == 1


def test_config_rejects_bad_input():
    with pytest.raises(ValueError, match="unknown"):
        PipelineConfig.from_dict({"simulate": {"rate": 10}})
    with pytest.raises(ValueError):
        PipelineConfig.from_dict({"master_seed": "abcd"})
    with pytest.raises(ValueError):
        PipelineConfig.from_dict({"stages": ["simulate", "acquire-live"]})
    with pytest.raises(ValueError):
        PipelineConfig.from_dict({"schema_version": 2})
    with pytest.raises(ValueError):
        preset("paper-3gsps")


def test_presets():
    for rate in (1, 2, 5, 10):
        cfg = preset(f"paper-{rate}gsps")
        assert cfg.simulate.rate_gsps == rate
        assert (cfg.entropy.headline is not None) == (rate == 10)


def test_sub_seeds_are_distinct_and_stable():
    a = sub_seed(DEFAULT_MASTER_SEED, "simulate")
    assert a == sub_seed(DEFAULT_MASTER_SEED, "simulate")
    assert a != sub_seed(DEFAULT_MASTER_SEED, "fit")
    assert a != sub_seed("00" * 32, "simulate")


def test_headline_accounting():
    h = headline_accounting(Headline())
    assert h["quantum_var_mv2"] == pytest.approx(5.24 * 5.46 / 6.46)
    assert 6.95 <= h["hmin_per_sample"] <= 7.15
    assert h["hmin_folded_per_sample"] < h["hmin_per_sample"]
    assert h["final_rate_gbps"] == 8 * (h["m"] / h["n"]) * h["sample_rate_gsps"]


def test_simulate_only(tmp_path):
    cfg = small_config(tmp_path, stages=["simulate"])
    rep = run_pipeline(cfg)
    assert rep.stages == ["simulate"]
    assert (tmp_path / "trace.bin").exists() and (tmp_path / "trace.json").exists()
    assert not (tmp_path / "extracted.bits").exists()
    assert rep.extraction is None


def test_failed_stage_is_named_and_artifacts_kept(tmp_path):
    cfg = small_config(tmp_path, stages=["simulate", "extract"])
    # no entropy stage and no override: extraction has no budget to work with
    with pytest.raises(StageError, match="extract"):
        run_pipeline(cfg)
    assert (tmp_path / "trace.bin").exists()
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["failed_stage"] == "extract" and rep["stages"] == ["simulate"]


def test_extract_without_trace_fails(tmp_path):
    cfg = small_config(tmp_path, stages=["entropy"])
    with pytest.raises(StageError, match="entropy"):
        run_pipeline(cfg)


@pytest.fixture(scope="module")
def small_runs(tmp_path_factory):
    dirs = [tmp_path_factory.mktemp(f"run{i}") for i in range(2)]
    reports = [run_pipeline(small_config(d)) for d in dirs]
    return dirs, reports


def test_full_small_run(small_runs):
    (d, _), (rep, _) = small_runs
    assert rep.stages == list(STAGES)
    x = rep.extraction
    assert x["final_rate_gbps"] == 8 * (x["m"] / x["n"]) * x["sample_rate_gsps"]
    e = rep.entropy
    assert e["hmin_per_bit"] == pytest.approx(e["hmin_per_sample"] / 8)
    assert x["m"] <= x["n"] * e["hmin_per_bit"]
    for name in ("trace.bin", "trace.json", "sweep.csv", "histogram.csv", "extracted.bits",
                 "extracted.json", "toeplitz_seed.bits", "autocorr_raw.csv", "config.json",
                 "report.json", "timings.json"):
        assert (d / name).exists(), name
    stored = json.loads((d / "report.json").read_text())
    assert "timings_s" not in stored
    assert set(json.loads((d / "timings.json").read_text())) == set(STAGES)
    assert "min-entropy" in rep.summary()


def test_rerun_is_byte_identical(small_runs):
    (a, b), _ = small_runs
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    for name in names:
        if name in ("timings.json", "config.json"):
            continue
        assert (a / name).read_bytes() == (b / name).read_bytes(), name

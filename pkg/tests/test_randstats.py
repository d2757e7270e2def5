import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import erfc

from conftest import bits_of
from phaseqrng.bits import BitStream
from phaseqrng.errors import EmptyInputError, UndefinedCorrelationError
from phaseqrng.physsim import SimConfig, simulate_trace
from phaseqrng.randstats import (
    TEST_NAMES,
    aggregate,
    approximate_entropy_test,
    autocorrelation,
    block_frequency_test,
    cumulative_sums_test,
    dft_test,
    frequency_test,
    longest_run_test,
    nist_subset,
    proportion_threshold,
    run_tests,
    runs_test,
    serial_test,
)

# worked examples of the SP 800-22 test descriptions
PI_100 = ("11001001000011111101101010100010001000010110100011"
          "00001000110100110001001100011001100010100010111000")


def test_frequency_examples():
    assert frequency_test(bits_of("1011010101")) == pytest.approx(erfc(2 / math.sqrt(20)), abs=1e-12)
    assert frequency_test(bits_of("1011010101")) == pytest.approx(0.527089, abs=1e-6)
    assert frequency_test(bits_of(PI_100)) == pytest.approx(0.109599, abs=1e-6)
    assert frequency_test(np.ones(10_000, np.uint8)) < 1e-100


def test_block_frequency_examples():
    assert block_frequency_test(bits_of("0110011010"), 3) == pytest.approx(0.801252, abs=1e-6)
    assert block_frequency_test(bits_of(PI_100), 10) == pytest.approx(0.706438, abs=1e-6)


def test_cusum_examples():
    fwd, _ = cumulative_sums_test(bits_of("1011010111"))
    assert fwd == pytest.approx(0.4116588, abs=1e-6)
    assert cumulative_sums_test(bits_of(PI_100))[0] == pytest.approx(0.219194, abs=1e-6)


def test_runs_examples():
    assert runs_test(bits_of("1001101011")) == pytest.approx(0.147232, abs=1e-6)
    assert runs_test(bits_of(PI_100)) == pytest.approx(0.500798, abs=1e-6)
    # prerequisite frequency check fails -> 0
    assert runs_test(np.ones(1000, np.uint8)) == 0.0


def test_longest_run_example():
    eps = ("11001100000101010110110001001100111000000000001001"
           "00110101010001000100111101011010000000110101111100"
           "1100111001101101100010110010")
    assert longest_run_test(bits_of(eps)) == pytest.approx(0.180609, abs=1e-4)


def test_serial_example():
    p1, p2 = serial_test(bits_of("0011011101"), 3)
    assert p1 == pytest.approx(0.808792, abs=1e-6)
    assert p2 == pytest.approx(0.670320, abs=1e-6)


def test_apen_examples():
    assert approximate_entropy_test(bits_of("0100110101"), 3) == pytest.approx(0.261961, abs=1e-6)
    assert approximate_entropy_test(bits_of(PI_100), 2) == pytest.approx(0.235301, abs=1e-6)


def test_dft_statistic_by_direct_transform():
    # the published toy examples of this test disagree with its own formula,
    # so check the statistic against an explicit O(n^2) DFT instead
    rng = np.random.default_rng(0)
    e = rng.integers(0, 2, 2000).astype(np.uint8)
    x = 2.0 * e - 1.0
    n = x.size
    k = np.arange(n // 2)[:, None]
    t = np.arange(n)[None, :]
    mod = np.abs((x[None, :] * np.exp(-2j * np.pi * k * t / n)).sum(axis=1))
    n1 = np.count_nonzero(mod < math.sqrt(math.log(20) * n))
    d = (n1 - 0.95 * n / 2) / math.sqrt(n * 0.95 * 0.05 / 4)
    assert dft_test(e) == pytest.approx(erfc(abs(d) / math.sqrt(2)), abs=1e-12)


def test_expansion_of_e(e_bits):
    # reference results for the first 10^6 binary digits of e
    assert frequency_test(e_bits) == pytest.approx(0.953749, abs=1e-6)
    assert block_frequency_test(e_bits, 128) == pytest.approx(0.211072, abs=1e-6)
    fwd, rev = cumulative_sums_test(e_bits)
    assert (fwd, rev) == (pytest.approx(0.669887, abs=1e-6), pytest.approx(0.724266, abs=1e-6))
    assert runs_test(e_bits) == pytest.approx(0.561917, abs=1e-6)
    assert longest_run_test(e_bits) == pytest.approx(0.718945, abs=1e-6)
    assert dft_test(e_bits) == pytest.approx(0.847187, abs=1e-6)
    assert approximate_entropy_test(e_bits, 10) == pytest.approx(0.700073, abs=1e-6)
    p1, p2 = serial_test(e_bits, 16)
    assert (p1, p2) == (pytest.approx(0.766182, abs=1e-3), pytest.approx(0.462921, abs=1e-3))


@given(st.lists(st.integers(0, 1), min_size=10, max_size=500))
def test_monobit_complement_symmetry(bits):
    b = np.array(bits, np.uint8)
    assert frequency_test(b) == pytest.approx(frequency_test(1 - b), abs=1e-15)


def test_short_sequences_are_skipped():
    res = nist_subset(np.random.default_rng(1).integers(0, 2, 5000).astype(np.uint8))
    assert res["Serial"] is None and res["Approximate Entropy"] is None
    assert res["Frequency"] is not None
    rep = run_tests(np.random.default_rng(1).integers(0, 2, 50_000).astype(np.uint8), 5000)
    assert rep.row("Serial").skipped and not rep.row("Serial").passed is False
    assert "skipped" in rep.format_table()


def test_null_calibration():
    rng = np.random.default_rng(2)
    pv = {name: [] for name in TEST_NAMES}
    for _ in range(200):
        res = nist_subset(rng.integers(0, 2, 1_000_000, dtype=np.uint8))
        for name, parts in res.items():
            pv[name].extend(parts.values())
    for name, ps in pv.items():
        assert np.mean(np.array(ps) >= 0.01) >= 0.96, name


def test_aggregate_examples():
    a = aggregate(np.arange(1, 11) / 10)
    assert a.ks_statistic == pytest.approx(0.1)
    assert a.ks_p > 0.5
    b = aggregate([1e-4] * 20)
    assert b.proportion == 0 and not b.passed
    c = aggregate(np.random.default_rng(3).uniform(size=1000))
    assert c.passed and c.proportion == pytest.approx(0.99, abs=0.01)
    with pytest.raises(EmptyInputError):
        aggregate([])
    with pytest.raises(ValueError):
        aggregate([0.5] * 5)
    assert proportion_threshold(1000) == pytest.approx(0.99 - 3 * math.sqrt(0.0099 / 1000))


def test_autocorrelation_paths_agree():
    x = np.random.default_rng(4).normal(size=10_000).cumsum()
    a = autocorrelation(x, 200, "fft")
    b = autocorrelation(x, 200, "direct")
    assert np.max(np.abs(a.coeffs - b.coeffs)) < 1e-10
    assert a.coeffs[0] == pytest.approx(1.0)
    assert np.all(np.abs(a.coeffs) <= 1 + 1e-12)


def test_autocorrelation_of_alternating_bits():
    r = autocorrelation(BitStream.from_bits(np.arange(10_000) % 2), 2)
    assert r.coeffs[1] == pytest.approx(-1.0, abs=1e-3)
    assert r.sigma_null == 0.01


def test_autocorrelation_zero_variance():
    with pytest.raises(UndefinedCorrelationError):
        autocorrelation(np.ones(100), 5)


def test_raw_trace_lag_one():
    g = 5.46
    aq = 6.2068
    cfg = SimConfig.from_products(aq, 0.0, aq * 0.9 / g, 0.9, rng_seed=7)
    r = autocorrelation(simulate_trace(cfg, n=2_000_000).voltages(), 5)
    assert r.coeffs[1] == pytest.approx(g / (g + 1) * (1 - 0.1 / 3.735), abs=0.02)


def test_report_round_trip_fields():
    rng = np.random.default_rng(5)
    rep = run_tests(rng.integers(0, 2, 20 * 100_000, dtype=np.uint8), 100_000,
                    tests=("Frequency", "Cumulative Sums", "Runs"))
    d = rep.as_dict()
    assert d["n_sequences"] == 20
    for row in d["tests"]:
        assert 0 <= row["p_value"] <= 1 and 0 <= row["proportion"] <= 1
    assert set(rep.row("Cumulative Sums").parts) == {"forward", "reverse"}
    assert rep.row("Cumulative Sums").p_value == min(p.ks_p for p in rep.row("Cumulative Sums").parts.values())

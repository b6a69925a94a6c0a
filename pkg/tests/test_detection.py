"""Tests for the fluorescence state-detection model.

The analytic dark-count distribution is held against two independent
oracles: numerical quadrature of the uniform decay-time mixture (frozen
values below) and a large Monte Carlo with exponential decay times.
"""

import math

import numpy as np
import pytest
from scipy import stats

from ionlab.detection import (
    CountHistogram,
    DetectionParams,
    bright_pmf,
    dark_pmf,
    histogram_errors,
    optimal_threshold,
    read_histogram_csv,
    simulate_detection,
    single_photon_experiment,
    support_cap,
    threshold_errors,
    write_histogram_csv,
)
from ionlab.errors import DomainError
from ionlab.numerics import derive_stream

# Published operating point: mean bright/dark counts, 50 us window,
# 20 us delay, 1 s shelf lifetime.
REFERENCE = DetectionParams(
    n_bar_B=25.37, n_bar_D=0.18, t_det=50e-6, t_delay=20e-6, tau=1.0
)


def _random_valid_params(rng):
    n_bar_D = rng.uniform(0.0, 2.0)
    n_bar_B = n_bar_D + rng.uniform(2.0, 100.0)
    return DetectionParams(
        n_bar_B=n_bar_B,
        n_bar_D=n_bar_D,
        t_det=rng.uniform(5e-6, 5e-4),
        t_delay=rng.uniform(0.0, 2e-4),
        tau=rng.uniform(0.05, 30.0),
    )


def test_params_validation():
    with pytest.raises(DomainError):
        DetectionParams(0.18, 25.37, 50e-6, 20e-6, 1.0)  # swapped means
    with pytest.raises(DomainError):
        DetectionParams(25.37, -0.1, 50e-6, 20e-6, 1.0)
    with pytest.raises(DomainError):
        DetectionParams(25.37, 0.18, 0.0, 20e-6, 1.0)
    with pytest.raises(DomainError):
        DetectionParams(25.37, 0.18, 50e-6, -1e-6, 1.0)
    with pytest.raises(DomainError):
        DetectionParams(25.37, 0.18, 50e-6, 20e-6, 0.0)


def test_bright_pmf_delegates_to_poisson():
    from ionlab.numerics import poisson_pmf

    assert bright_pmf(REFERENCE, 5) == poisson_pmf(5, 25.37)
    ns = np.arange(support_cap(REFERENCE) + 1)
    assert abs(bright_pmf(REFERENCE, ns).sum() - 1.0) < 1e-10
    assert int(np.argmax(bright_pmf(REFERENCE, ns))) == 25  # Poisson mode floor(mean)


def test_dark_pmf_prefactors_sum_to_one():
    rng = np.random.default_rng(11)
    for _ in range(40):
        p = _random_valid_params(rng)
        ed = math.exp(-p.t_delay / p.tau)
        et = math.exp(-p.t_det / p.tau)
        assert abs(ed * et + (1 - ed) + ed * (1 - et) - 1.0) < 1e-12


def test_dark_pmf_no_decay_limit():
    p = DetectionParams(25.37, 0.18, 50e-6, 0.0, 1e12)
    ns = np.arange(0, 40)
    np.testing.assert_allclose(
        dark_pmf(p, ns), stats.poisson.pmf(ns, 0.18), atol=1e-12
    )


def test_dark_pmf_matches_quadrature_oracle():
    # frozen from scipy.integrate.quad over the uniform decay-fraction mixture
    assert dark_pmf(REFERENCE, 0) == pytest.approx(0.8352134024083104, rel=1e-10)
    assert dark_pmf(REFERENCE, 5) == pytest.approx(3.299997819418512e-06, rel=1e-8)
    assert dark_pmf(REFERENCE, 25) == pytest.approx(2.5318573424308004e-06, rel=1e-8)


def test_dark_pmf_normalizes():
    ns = np.arange(support_cap(REFERENCE) + 1)
    assert abs(dark_pmf(REFERENCE, ns).sum() - 1.0) < 1e-6
    rng = np.random.default_rng(23)
    for _ in range(20):
        p = _random_valid_params(rng)
        total = dark_pmf(p, np.arange(support_cap(p) + 1)).sum()
        assert abs(total - 1.0) < 1e-6


def test_threshold_errors_at_paper_operating_point():
    rep = threshold_errors(REFERENCE, 5)
    # frozen oracle values (scipy.stats + gammainc summation)
    assert rep.eps_B == pytest.approx(1.950317379366453e-07, rel=1e-9)
    assert rep.eps_D == pytest.approx(6.178633883621192e-05, rel=1e-9)
    assert rep.eps_avg == pytest.approx(3.099068528707428e-05, rel=1e-9)
    assert abs(rep.eps_avg - 3.1e-5) < 0.5e-5
    assert rep.fidelity == pytest.approx(0.9999690093147129, abs=1e-12)
    assert 0.99996 <= rep.fidelity <= 0.999985


def test_threshold_errors_brute_force_oracle():
    ns = np.arange(0, 501)
    b = bright_pmf(REFERENCE, ns)
    d = dark_pmf(REFERENCE, ns)
    for thr in range(1, 11):
        rep = threshold_errors(REFERENCE, thr)
        assert rep.eps_B == pytest.approx(b[:thr].sum(), abs=1e-12)
        assert rep.eps_D == pytest.approx(1.0 - d[:thr].sum(), abs=1e-12)


def test_threshold_zero_classifies_everything_bright():
    rep = threshold_errors(REFERENCE, 0)
    assert rep.eps_B == 0.0
    assert rep.eps_D == 1.0
    assert rep.eps_avg == 0.5


def test_threshold_error_monotonicity():
    reps = [threshold_errors(REFERENCE, t) for t in range(0, 31)]
    eps_B = [r.eps_B for r in reps]
    eps_D = [r.eps_D for r in reps]
    assert all(b2 >= b1 - 1e-15 for b1, b2 in zip(eps_B, eps_B[1:]))
    assert all(d2 <= d1 + 1e-15 for d1, d2 in zip(eps_D, eps_D[1:]))


def test_optimal_threshold_beats_the_published_choice():
    best = optimal_threshold(REFERENCE, 30)
    assert best.eps_avg <= threshold_errors(REFERENCE, 5).eps_avg
    # frozen exhaustive-scan oracle: threshold 6 wins by a hair
    assert best.threshold == 6
    assert best.eps_avg == pytest.approx(2.9760774196050794e-05, rel=1e-9)


def test_optimal_threshold_analytic_limit():
    p = DetectionParams(25.37, 0.0, 50e-6, 0.0, 1e12)
    best = optimal_threshold(p, 30)
    assert best.threshold == 1
    assert best.eps_avg == pytest.approx(bright_pmf(p, 0) / 2.0, rel=1e-12)


def test_optimal_threshold_indistinguishable_states():
    p = DetectionParams(0.1801, 0.18, 50e-6, 0.0, 1e12)
    best = optimal_threshold(p, 30)
    assert abs(best.eps_avg - 0.5) < 1e-3


def test_simulate_bright_mean():
    hist = simulate_detection(REFERENCE, "bright", 1_020_000, derive_stream(42, 1))
    ns = np.arange(hist.counts_per_bin.size)
    mean = float((ns * hist.counts_per_bin).sum() / hist.total_trials)
    se = math.sqrt(25.37 / hist.total_trials)
    assert abs(mean - 25.37) < 3 * se


def test_simulate_dark_no_decay_limit_chi_square():
    p = DetectionParams(25.37, 0.18, 50e-6, 20e-6, 1e12)
    hist = simulate_detection(p, "dark", 1_000_000, derive_stream(42, 2))
    obs = hist.counts_per_bin
    expected = stats.poisson.pmf(np.arange(obs.size), 0.18) * hist.total_trials
    # fold the tail so every compared cell has expected count >= 5
    k = int(np.searchsorted(expected < 5.0, True))
    obs_f = np.append(obs[:k], obs[k:].sum())
    exp_f = np.append(expected[:k], hist.total_trials - expected[:k].sum())
    chi2 = stats.chisquare(obs_f, exp_f)
    assert chi2.pvalue > 0.001


def test_simulate_dark_validates_analytic_model():
    # the model-validation oracle: exponential decay times vs Eq-style mixture
    trials = 10_000_000
    hist = simulate_detection(REFERENCE, "dark", trials, derive_stream(42, 3))
    ns = np.arange(hist.counts_per_bin.size)
    model = dark_pmf(REFERENCE, ns)
    emp = hist.counts_per_bin / trials
    tv = 0.5 * np.abs(emp - model).sum()
    assert tv < 5e-4
    # per-bin agreement within 4 sigma multinomial error (plus tiny floor
    # for bins whose expected count is below 1)
    sigma = np.sqrt(np.maximum(model * (1 - model) / trials, 1e-16))
    z = np.abs(emp - model) / np.maximum(sigma, 1.0 / trials)
    assert float(np.max(z)) < 4.0


def test_simulate_detection_is_deterministic_and_parallel_safe():
    a = simulate_detection(REFERENCE, "dark", 200_000, derive_stream(7, 9))
    b = simulate_detection(REFERENCE, "dark", 200_000, derive_stream(7, 9))
    c = simulate_detection(REFERENCE, "dark", 200_000, derive_stream(7, 9), threads=8)
    np.testing.assert_array_equal(a.counts_per_bin, b.counts_per_bin)
    np.testing.assert_array_equal(a.counts_per_bin, c.counts_per_bin)


def test_simulate_detection_rejects_bad_inputs():
    with pytest.raises(DomainError):
        simulate_detection(REFERENCE, "bright", 0, derive_stream(1, 0))
    with pytest.raises(DomainError):
        simulate_detection(REFERENCE, "grey", 10, derive_stream(1, 0))


def test_histogram_errors_against_model():
    n = 1_020_000
    bright = simulate_detection(REFERENCE, "bright", n, derive_stream(42, 4))
    dark = simulate_detection(REFERENCE, "dark", n, derive_stream(42, 5))
    rep = histogram_errors(bright, dark, 5)
    model = threshold_errors(REFERENCE, 5)
    assert abs(rep.eps_avg - model.eps_avg) < 3 * rep.eps_avg_err
    assert rep.eps_avg == (rep.eps_B + rep.eps_D) / 2.0
    assert rep.fidelity == 1.0 - rep.eps_avg

    swapped = histogram_errors(dark, bright, 5)
    assert abs(swapped.eps_avg - (1.0 - rep.eps_avg)) < 1e-3


def test_histogram_errors_all_dark_below_threshold():
    counts = np.zeros(10, dtype=np.int64)
    counts[0] = 500
    dark = CountHistogram(counts_per_bin=counts, total_trials=500)
    bright_counts = np.zeros(10, dtype=np.int64)
    bright_counts[9] = 500
    bright = CountHistogram(counts_per_bin=bright_counts, total_trials=500)
    rep = histogram_errors(bright, dark, 5)
    assert rep.eps_D == 0.0
    assert rep.eps_B == 0.0


def test_count_histogram_invariants():
    with pytest.raises(DomainError):
        CountHistogram(counts_per_bin=np.array([5, 5]), total_trials=11)
    with pytest.raises(DomainError):
        CountHistogram(counts_per_bin=np.array([-1, 12]), total_trials=11)


def test_single_photon_experiment():
    est = single_photon_experiment(0.0196, 100_000, derive_stream(42, 6))
    assert abs(est.value - 0.0196) < 3 * est.std_error
    zero = single_photon_experiment(0.0, 1000, derive_stream(42, 7))
    assert zero.value == 0.0 and zero.std_error == 0.0
    est2 = single_photon_experiment(0.0177, 100_000, derive_stream(42, 8))
    assert est2.std_error == pytest.approx(0.00042, abs=4e-5)


def test_histogram_csv_round_trip(tmp_path):
    hist = simulate_detection(REFERENCE, "dark", 5_000, derive_stream(3, 3))
    path = tmp_path / "dark.csv"
    write_histogram_csv(hist, path)
    text = path.read_text()
    assert text.splitlines()[0] == "photon_count,trials"
    back = read_histogram_csv(path)
    np.testing.assert_array_equal(back.counts_per_bin, hist.counts_per_bin)
    assert back.total_trials == hist.total_trials

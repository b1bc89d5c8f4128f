import dataclasses

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from odfm.datamodel import MultiSeries
from odfm.outliers import decompose_true
from odfm.simulation import (
    SECTION8_A,
    SimConfig,
    bias_experiment,
    gen_factors_var,
    gen_factors_varma,
    gen_observed,
    monte_carlo,
    section7_config,
    section8_config,
    simulate_panel,
    standard_normal,
)


def arma_autocov(phi: float, theta: float, sigma2: float, h: int) -> float:
    """Closed-form autocovariance of x_t - phi x_{t-1} = e_t - theta e_{t-1}."""
    gamma0 = sigma2 * (1 + theta**2 - 2 * phi * theta) / (1 - phi**2)
    if h == 0:
        return gamma0
    gamma1 = sigma2 * ((1 - phi * theta) * (phi - theta) / (1 - phi**2))
    return gamma1 * phi ** (h - 1)


def test_var_factors_white_noise_limit():
    x = gen_factors_var(np.zeros(3), 4000, seed=1)
    assert x.shape == (3, 4000)
    assert_allclose(x.var(axis=1), 1.0, atol=0.1)
    assert_allclose(np.corrcoef(x), np.eye(3), atol=0.06)


def test_var_factors_autocorrelation():
    t_len = 4000
    x = gen_factors_var(np.array([0.7, -0.7]), t_len, seed=2)
    for i, phi in enumerate((0.7, -0.7)):
        r1 = np.corrcoef(x[i, 1:], x[i, :-1])[0, 1]
        assert abs(r1 - phi) < 3 / np.sqrt(t_len)
        assert abs(x[i].var() - 1.0) < 3 * np.sqrt(2.0 / t_len) * 2


def test_var_factors_deterministic():
    a = gen_factors_var(np.array([0.5]), 100, seed=42)
    b = gen_factors_var(np.array([0.5]), 100, seed=42)
    assert_array_equal(a, b)
    c = gen_factors_var(np.array([0.5]), 100, seed=43)
    assert not np.array_equal(a, c)


def test_varma_reduces_to_var_when_theta_zero():
    a = gen_factors_var(np.array([0.6]), 50, seed=3)
    b = gen_factors_varma(np.array([0.6]), np.zeros(1), 50, seed=3)
    assert_array_equal(a, b)


def test_varma_unit_variance_normalisation():
    # phi = 0.7, theta = -0.5: innovation variance 0.51/1.95
    phi, theta = 0.7, -0.5
    sigma2 = (1 - phi**2) / (1 + theta**2 - 2 * phi * theta)
    assert_allclose(sigma2, 0.51 / 1.95, rtol=1e-12)
    t_len = 6000
    x = gen_factors_varma(np.array([phi]), np.array([theta]), t_len, seed=4)
    assert abs(x[0].var() - 1.0) < 3 / np.sqrt(t_len) * np.sqrt(2) * 2


def test_varma_lag1_autocovariance_matches_oracle():
    phi, theta = 0.7, -0.5
    sigma2 = (1 - phi**2) / (1 + theta**2 - 2 * phi * theta)
    t_len = 8000
    x = gen_factors_varma(np.array([phi]), np.array([theta]), t_len, seed=5)[0]
    for h in (1, 2, 3):
        sample = np.mean((x[:-h] - x.mean()) * (x[h:] - x.mean()))
        assert abs(sample - arma_autocov(phi, theta, sigma2, h)) < 0.05


def test_varma_literal_innovation_variance_flag():
    # the alternative normalisation: 1 - theta*phi - (phi - theta)*theta
    phi, theta = np.array([0.7]), np.array([-0.5])
    sigma2 = 1 - theta * phi - (phi - theta) * theta
    assert_allclose(sigma2, 1.95)
    x = gen_factors_varma(phi, theta, 5000, seed=6, literal_innovation_variance=True)
    # the factor variance lands far from one, at the ARMA oracle value
    expected = arma_autocov(0.7, -0.5, 1.95, 0)
    assert expected > 3.0
    assert abs(x[0].var() - expected) < 0.2 * expected


def test_varma_rejects_nonstationary():
    with pytest.raises(ValueError):
        gen_factors_varma(np.array([1.0]), None, 100)
    with pytest.raises(ValueError):
        gen_factors_varma(np.array([0.5]), np.array([1.2]), 100)


def test_gen_observed_clean_variances():
    cfg = section7_config()
    rng = np.random.default_rng(7)
    factors = gen_factors_var(cfg.phi, 40000, rng=rng)
    series = gen_observed(cfg.a, factors, cfg.sigma_eta, rng=rng)
    theory = (cfg.a**2).sum(axis=1) + cfg.sigma_eta**2
    assert_allclose(theory, [1.04, 1.29, 1.29, 1.29, 0.29], rtol=1e-12)
    assert_allclose(series.values.var(axis=1), theory, atol=0.06)


def test_gen_observed_contaminated_standard_errors():
    # reference single-realization standard errors must be compatible
    # with the simulated distribution of per-replication standard errors
    cfg = section7_config()
    reps = 300
    stds = np.zeros((reps, 5))
    for idx, ss in enumerate(np.random.SeedSequence(8).spawn(reps)):
        series, _ = simulate_panel(cfg, np.random.default_rng(ss))
        stds[idx] = series.values.std(axis=1, ddof=1)
    reference = np.array([1.0970, 1.2858, 1.1967, 1.1906, 0.7415])
    z = np.abs(reference - stds.mean(axis=0)) / stds.std(axis=0, ddof=1)
    assert np.all(z < 3.5)


def test_gen_observed_patch_semantics():
    a = np.ones((3, 1))
    factors = np.zeros((1, 50))
    series = gen_observed(
        a, factors, 0.0, omega=np.array([1.0, 2.0, 3.0]), dates=(10, 11), seed=9
    )
    assert_array_equal(series.values[:, 9], [1.0, 2.0, 3.0])
    assert_array_equal(series.values[:, 10], [1.0, 2.0, 3.0])
    assert_allclose(series.values[:, 12], 0.0, atol=0)


def test_gen_observed_validation():
    with pytest.raises(ValueError):
        gen_observed(np.ones((3, 2)), np.zeros((1, 10)), 0.1)
    with pytest.raises(ValueError):
        gen_observed(np.ones((3, 1)), np.zeros((1, 10)), 0.1, omega=np.ones(2), dates=(5,))
    with pytest.raises(ValueError):
        gen_observed(np.ones((3, 1)), np.zeros((1, 10)), 0.1, omega=np.ones(3), dates=(11,))


def test_section8_loading_matrix_full_rank():
    assert SECTION8_A.shape == (20, 4)
    assert np.linalg.matrix_rank(SECTION8_A) == 4
    cfg = section8_config(replications=40)
    assert cfg.dates == (100,)
    assert section8_config(patch=True, replications=40).dates == (99, 100, 101)


def test_section8_zeta_oracle():
    omega = np.full(20, 0.6)
    alpha, zeta = decompose_true(omega, SECTION8_A)
    assert_allclose(SECTION8_A @ alpha + zeta, omega, atol=1e-12)
    assert np.linalg.norm(SECTION8_A.T @ zeta) < 1e-10
    assert np.linalg.norm(zeta) > 0.5  # the design leaves a sizeable orthogonal part


def test_simconfig_validation():
    with pytest.raises(ValueError):
        section7_config(burn=10)
    with pytest.raises(ValueError):
        section7_config(dates=(101,))
    with pytest.raises(ValueError):
        section7_config(phi=np.array([1.0, 0.0, 0.0, 0.0]))
    with pytest.raises(ValueError):
        SimConfig(n=3, k=2, t=50, a=np.ones((3, 2)), phi=np.zeros(2))  # rank 1 loadings


def test_standard_normal_moments_and_determinism():
    rng = np.random.default_rng(10)
    x = standard_normal(rng, 200000)
    assert abs(x.mean()) < 0.01
    assert abs(x.std() - 1.0) < 0.01
    assert abs((x**3).mean()) < 0.02
    y = standard_normal(np.random.default_rng(10), 200000)
    assert_array_equal(x, y)


def test_monte_carlo_deterministic_and_aggregates():
    cfg = section7_config(replications=40, seed=77)
    first = monte_carlo(cfg)
    second = monte_carlo(cfg)
    assert first.to_jsonable() == second.to_jsonable()
    assert first.replications == 40
    assert set(first.detection_pct) == {100}
    assert 0.0 <= first.detection_pct[100] <= 100.0
    assert first.failures == 0
    assert "detection at t=100" in first.table()


def test_monte_carlo_worker_count_does_not_change_results(monkeypatch):
    cfg = section7_config(replications=40, seed=78)
    serial = monte_carlo(cfg)
    monkeypatch.setenv("ODFM_THREADS", "4")
    parallel = monte_carlo(cfg)
    monkeypatch.delenv("ODFM_THREADS")
    assert serial.to_jsonable() == parallel.to_jsonable()


def test_monte_carlo_per_replication_stream():
    cfg = section7_config(replications=40, seed=79)
    records = []
    monte_carlo(cfg, per_replication=records)
    assert len(records) == 40
    assert all("detected_dates" in r or "error" in r for r in records)


def test_monte_carlo_requires_enough_replications():
    with pytest.raises(ValueError):
        monte_carlo(section7_config(replications=10))


def test_bias_experiment_zero_outlier():
    report = bias_experiment(np.zeros(2), t0=50, t_len=100, replications=5, seed=0)
    for section in (report.gamma, report.periodogram_re, report.periodogram_im, report.smoothed):
        for entry in section.values():
            assert entry.mean == 0.0
            assert entry.target == 0.0


def test_bias_experiment_targets_small_run():
    report = bias_experiment(
        np.array([1.0, 2.0]), t0=100, t_len=200, replications=400, seed=1
    )
    assert report.gamma[(1, 2)].target == 2.0
    assert_allclose(report.periodogram_re[(1, 2)].target, 2.0 / (2 * np.pi))
    assert report.periodogram_im[(1, 2)].target == 0.0
    assert report.max_z_score() < 4.0
    # lag-0 variance targets: r=s doubles the cross term
    assert report.gamma[(1, 1)].var_target == 4.0
    assert report.gamma[(1, 2)].var_target == 5.0
    payload = report.to_jsonable()
    assert "1,2" in payload["gamma"]


def test_simulate_panel_rescaled_factors():
    cfg = section8_config(replications=40)
    series, factors = simulate_panel(cfg, np.random.default_rng(11))
    assert_allclose(factors.var(axis=1), 1.0, rtol=1e-10)
    assert series.n_components == 20
    assert series.n_times == 200

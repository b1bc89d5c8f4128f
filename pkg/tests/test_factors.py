import numpy as np
import pytest
from numpy.testing import assert_allclose

from odfm.datamodel import MultiSeries
from odfm.factors import (
    EstimationError,
    FactorModel,
    estimate_jointdiag,
    estimate_ml,
    estimate_svd,
    factor_scores,
    select_k,
)
from odfm.moments import LagCovSet, lag_cov, sym_eigen

A7 = np.array(
    [
        [1.0, 0.0, 0.0, 0.0],
        [0.5, 1.0, 0.0, 0.0],
        [0.0, 0.5, 1.0, 0.0],
        [0.0, 0.0, 0.5, 1.0],
        [0.0, 0.0, 0.0, 0.5],
    ]
)


def select_k_oracle(vals, alpha, correct_floor):
    # direct enumeration of the cumulated-share rule
    n = len(vals)
    total = sum(vals)
    for k in range(1, n + 1):
        num = sum(vals[:k]) + ((n - k) * vals[-1] if correct_floor else 0.0)
        if num / total > 1 - alpha:
            return k
    return n


def test_select_k_single_dominant():
    assert select_k(np.array([1.0, 0.0, 0.0, 0.0])) == 1
    assert select_k(np.array([1.0, 0.0, 0.0, 0.0]), correct_floor=False) == 1


def test_select_k_real_data_style_choice():
    # 27 eigenvalues whose cumulated share first passes 0.95 at K=6
    head = np.array([10.0, 5.0, 3.0, 1.0, 0.5, 0.3])
    tail = np.full(21, 0.04)
    vals = np.concatenate([head, tail])
    assert sum(head[:5]) / vals.sum() <= 0.95 < sum(head) / vals.sum()
    assert select_k(vals, correct_floor=False) == 6


def test_select_k_corrected_never_larger():
    vals = np.concatenate([[4.0, 3.0, 2.0, 1.0], np.full(6, 0.04)])
    k_corr = select_k(vals, correct_floor=True)
    k_raw = select_k(vals, correct_floor=False)
    assert k_corr == select_k_oracle(list(vals), 0.05, True)
    assert k_raw == select_k_oracle(list(vals), 0.05, False)
    assert k_corr <= k_raw


def test_select_k_scale_equivariant():
    rng = np.random.default_rng(0)
    for _ in range(20):
        vals = np.sort(rng.uniform(0.01, 5.0, size=8))[::-1]
        k = select_k(vals)
        for c in (1e-3, 0.5, 7.0, 1e4):
            assert select_k(c * vals) == k


def test_select_k_rejects_bad_input():
    with pytest.raises(ValueError):
        select_k(np.zeros(4))
    with pytest.raises(ValueError):
        select_k(np.array([1.0, 2.0]))
    with pytest.raises(ValueError):
        select_k(np.array([1.0, -0.5]))


def test_svd_rank_one_recovery():
    rng = np.random.default_rng(1)
    u = rng.standard_normal(30)
    u -= u.mean()
    u /= np.linalg.norm(u)
    loading = np.array([2.0, -1.0, 0.5])
    series = MultiSeries(np.outer(loading, u))
    model = estimate_svd(series, 1)
    assert_allclose(model.a @ model.x, series.values - model.mean[:, None], atol=1e-10)
    # loading recovered up to the scale moved into the unit-variance scores
    ratio = model.a[:, 0] / loading
    assert_allclose(ratio, ratio[0], rtol=1e-8)
    assert model.diagnostics["reconstruction_error_sq"] < 1e-16


def test_svd_eckart_young_identity():
    rng = np.random.default_rng(2)
    series = MultiSeries(rng.standard_normal((5, 100)))
    yc = series.values - series.values.mean(axis=1, keepdims=True)
    eigvals = np.sort(np.linalg.eigvalsh(yc.T @ yc))[::-1]
    for k in (1, 2, 3, 4):
        model = estimate_svd(series, k)
        assert_allclose(
            model.diagnostics["reconstruction_error_sq"], eigvals[k:].sum(), rtol=1e-8
        )


def test_svd_two_formulas_agree():
    # A = Y X' must equal W_K Lambda_K^(1/2) after sign alignment
    rng = np.random.default_rng(3)
    for trial in range(10):
        n = rng.integers(3, 10)
        t_len = rng.integers(20, 60)
        k = int(rng.integers(1, n))
        series = MultiSeries(rng.standard_normal((n, t_len)))
        model = estimate_svd(series, k)
        yc = series.values - model.mean[:, None]
        vals, vecs = np.linalg.eigh(yc @ yc.T)
        order = np.argsort(vals)[::-1]
        w_k = vecs[:, order[:k]]
        lam_k = np.sqrt(np.maximum(vals[order[:k]], 0.0))
        a_eig = w_k * lam_k / np.sqrt(t_len)
        # align column signs before comparing
        for j in range(k):
            if np.dot(a_eig[:, j], model.a[:, j]) < 0:
                a_eig[:, j] = -a_eig[:, j]
        assert_allclose(a_eig, model.a, atol=1e-8)


def test_svd_reconstruction_error_monotone_in_k():
    rng = np.random.default_rng(4)
    series = MultiSeries(rng.standard_normal((6, 50)))
    errors = [
        estimate_svd(series, k).diagnostics["reconstruction_error_sq"] for k in range(1, 6)
    ]
    assert all(e1 >= e2 - 1e-12 for e1, e2 in zip(errors, errors[1:]))


def test_svd_unit_variance_scores_and_sigma_eta():
    rng = np.random.default_rng(5)
    series = MultiSeries(rng.standard_normal((5, 200)))
    model = estimate_svd(series, 2)
    assert_allclose(model.x.var(axis=1), 1.0, rtol=1e-10)
    gamma0 = lag_cov(series, 0).gamma0
    assert_allclose(
        model.sigma_eta,
        np.maximum(np.diag(gamma0) - np.einsum("ik,ik->i", model.a, model.a), 0.0),
        atol=1e-12,
    )


def test_svd_rejects_excess_k():
    series = MultiSeries(np.outer([1.0, 2.0], np.arange(10.0)))
    with pytest.raises(EstimationError):
        estimate_svd(series, 2)  # centered rank is 1


def exact_covs(a: np.ndarray, diags: list[np.ndarray], noise: float = 0.0) -> LagCovSet:
    n = a.shape[0]
    gammas = [a @ a.T + noise * np.eye(n)]
    gammas += [a @ np.diag(d) @ a.T for d in diags]
    return LagCovSet(gammas=tuple(gammas), mean=np.zeros(n), n_times=100)


def principal_angle_cosines(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    qa, _ = np.linalg.qr(a)
    qb, _ = np.linalg.qr(b)
    return np.linalg.svd(qa.T @ qb, compute_uv=False)


def test_jointdiag_noiseless_exact_model():
    rng = np.random.default_rng(6)
    a = rng.standard_normal((6, 3))
    phis = np.array([0.7, -0.6, 0.5])
    diags = [phis**h for h in range(1, 4)]
    covs = exact_covs(a, diags, noise=0.04)
    model = estimate_jointdiag(covs, 3, 3, seed=0)
    assert model.diagnostics["objective"] < 1e-10
    cosines = principal_angle_cosines(model.a, a)
    assert np.all(np.arccos(np.clip(cosines, -1, 1)) < 1e-4)


def test_jointdiag_already_diagonal_input():
    k, n = 3, 7
    a = np.vstack([np.eye(k), np.zeros((n - k, k))])
    phis = np.array([0.8, 0.6, -0.5])
    covs = exact_covs(a, [phis**h for h in range(1, 4)], noise=0.01)
    model = estimate_jointdiag(covs, k, 3, seed=0)
    assert model.diagnostics["objective"] < 1e-12
    # extractor selects the first K coordinates
    assert_allclose(np.abs(model.a[k:, :]), 0.0, atol=1e-8)


def test_jointdiag_recovers_ar_diagonals_on_simulated_model():
    # factors with phi = (.7, -.7, .7, -.7): the estimated lag-1 factor
    # autocovariances split into two well-separated groups near +-0.7,
    # and the lag-2 ones concentrate near 0.49; factor order is arbitrary
    from odfm.simulation import section7_config, simulate_panel

    cfg = section7_config(seed=0)
    reps = 40
    lag1_pos = lag1_neg = lag2_mean = 0.0
    for ss in np.random.SeedSequence(7).spawn(reps):
        series, _ = simulate_panel(cfg, np.random.default_rng(ss), outliers=False)
        covs = lag_cov(series, 4)
        model = estimate_jointdiag(covs, 4, 4, seed=0)
        d1 = np.sort(np.array(model.diagnostics["lag_diagonals"][0]))
        lag1_neg += d1[:2].mean()
        lag1_pos += d1[2:].mean()
        lag2_mean += np.mean(model.diagnostics["lag_diagonals"][1])
    # estimated factors carry an idiosyncratic-noise share that
    # attenuates their autocovariances slightly below the AR targets
    assert abs(lag1_pos / reps - 0.7) < 0.15
    assert abs(lag1_neg / reps + 0.7) < 0.15
    assert abs(lag2_mean / reps - 0.49) < 0.15
    assert lag1_pos / reps - lag1_neg / reps > 1.0


def test_jointdiag_validates_lags():
    covs = exact_covs(np.eye(3)[:, :2] * 1.0 + 0.0, [np.array([0.5, 0.4])], noise=0.01)
    with pytest.raises(ValueError):
        estimate_jointdiag(covs, 2, 3)  # holds only lag 1
    with pytest.raises(ValueError):
        estimate_jointdiag(covs, 2, 1)  # H < K


def test_ml_exact_recovery():
    rng = np.random.default_rng(8)
    a = rng.standard_normal((6, 2))
    gamma0 = a @ a.T + 0.3 * np.eye(6)
    model = estimate_ml(gamma0, 2, tol=1e-14, max_iter=20000)
    assert np.max(np.abs(model.a @ model.a.T - a @ a.T)) < 1e-6
    assert_allclose(model.sigma_eta, 0.3, atol=1e-5)
    assert model.diagnostics["converged"]


def test_ml_identity_covariance_has_no_common_structure():
    model = estimate_ml(np.eye(4), 1)
    # the fitted covariance collapses to the identity: factors explain
    # nothing beyond what the idiosyncratic part absorbs
    fitted = model.a @ model.a.T + np.diag(model.sigma_eta)
    assert_allclose(fitted, np.eye(4), atol=1e-8)


def test_ml_loglik_monotone_on_random_pd_inputs():
    rng = np.random.default_rng(9)
    for _ in range(30):
        w = rng.standard_normal((5, 2))
        gamma0 = w @ w.T + np.diag(rng.uniform(0.1, 2.0, size=5))
        model = estimate_ml(gamma0, 2)
        trace = np.asarray(model.diagnostics["loglik_trace"])
        diffs = np.diff(trace)
        assert np.all(diffs >= -1e-8 * np.maximum(np.abs(trace[:-1]), 1.0))


def test_ml_rejects_bad_inputs():
    with pytest.raises(ValueError):
        estimate_ml(np.eye(3), 3)
    with pytest.raises(ValueError):
        estimate_ml(np.diag([1.0, 0.0]), 1)
    with pytest.raises(ValueError):
        estimate_ml(np.array([[1.0, 0.5], [0.0, 1.0]]), 1)


def test_factor_scores_exact_and_orthonormal_cases():
    rng = np.random.default_rng(10)
    a = rng.standard_normal((6, 2))
    x = rng.standard_normal((2, 40))
    series = MultiSeries(a @ x)
    model = FactorModel(
        a=a, sigma_eta=np.zeros(6), k=2, method="svd", mean=np.zeros(6)
    )
    assert_allclose(factor_scores(series, model), x, atol=1e-10)

    q, _ = np.linalg.qr(rng.standard_normal((6, 2)))
    model_q = FactorModel(
        a=q, sigma_eta=np.zeros(6), k=2, method="svd", mean=np.zeros(6)
    )
    assert_allclose(factor_scores(series, model_q), q.T @ (a @ x), atol=1e-10)


def test_factor_scores_recover_the_factor_space():
    # factors 1,3 (and 2,4) share identical dynamics, so individual
    # factors are only identified up to rotations inside those pairs;
    # the invariant quantity is the factor space, measured here through
    # canonical correlations between estimated and true score matrices
    from odfm.simulation import section7_config, simulate_panel

    cfg = section7_config(seed=0)
    worst = 1.0
    for ss in np.random.SeedSequence(11).spawn(20):
        series, factors = simulate_panel(cfg, np.random.default_rng(ss), outliers=False)
        model = estimate_svd(series, 4)
        qx, _ = np.linalg.qr(model.x.T - model.x.mean(axis=1))
        qf, _ = np.linalg.qr(factors.T - factors.mean(axis=1))
        canon = np.linalg.svd(qx.T @ qf, compute_uv=False)
        worst = min(worst, canon.min())
    assert worst > 0.9


def test_projector_annihilates_loadings_for_every_estimator():
    from odfm.simulation import section7_config, simulate_panel

    cfg = section7_config(seed=0)
    series, _ = simulate_panel(cfg, np.random.default_rng(5), outliers=False)
    covs = lag_cov(series, 4)
    models = [
        estimate_svd(series, 4),
        estimate_jointdiag(covs, 4, 4, seed=0),
        estimate_ml(covs.gamma0, 4, mean=covs.mean),
    ]
    for model in models:
        a = model.a
        z = np.eye(5) - a @ np.linalg.solve(a.T @ a, a.T)
        assert np.linalg.norm(z @ a) < 1e-10


def test_sign_identification_of_loadings():
    # flipping factor signs flips data; |A| and the column space are unchanged
    rng = np.random.default_rng(12)
    a = rng.standard_normal((5, 2))
    x = rng.standard_normal((2, 300))
    flip = np.diag([1.0, -1.0])
    m1 = estimate_svd(MultiSeries(a @ x + 0.0), 2)
    m2 = estimate_svd(MultiSeries(a @ flip @ (flip @ x)), 2)
    assert_allclose(np.abs(m1.a), np.abs(m2.a), atol=1e-10)
    cosines = principal_angle_cosines(m1.a, m2.a)
    assert_allclose(cosines, 1.0, atol=1e-10)


def test_factor_model_validation():
    with pytest.raises(ValueError):
        FactorModel(a=np.ones((3, 3)), sigma_eta=np.ones(3), k=3, method="svd", mean=np.zeros(3))
    with pytest.raises(ValueError):
        FactorModel(
            a=np.ones((3, 1)), sigma_eta=np.array([-1.0, 0.0, 0.0]), k=1,
            method="svd", mean=np.zeros(3),
        )
    model = FactorModel(
        a=np.ones((3, 1)), sigma_eta=np.ones(3), k=1, method="svd", mean=np.zeros(3)
    )
    payload = model.to_jsonable()
    assert payload["K"] == 1 and payload["X"] is None

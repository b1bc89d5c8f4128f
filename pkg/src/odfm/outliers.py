"""Projection-based outlier detection, adjustment and size estimation.

Additive outliers leave the factor space along directions orthogonal to
the loading matrix: under homoscedastic idiosyncratic noise those
directions are the eigenvectors of Gamma(0) attached to its smallest
eigenvalues, so projecting the panel onto them yields univariate series
in which an outlying date stands out against a Tchebychev threshold.
Detected dates are replaced, the model is re-estimated on the adjusted
panel, and the outlier size is split into a factor-level part and a
part orthogonal to the fitted loadings.
"""

from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass

import numpy as np

from .adequacy import AdequacyResult, adequacy_test
from .datamodel import MultiSeries
from .factors import (
    FactorModel,
    estimate_jointdiag,
    estimate_ml,
    estimate_svd,
    factor_scores,
    select_k,
)
from .moments import LagCovSet, lag_cov, sym_eigen


def tchebychev_threshold(alpha: float = 0.05) -> float:
    """Detection cutoff with P(|w - mean| >= k*sd) <= 1/k^2 = alpha."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must be in (0, 1)")
    return float(1.0 / np.sqrt(alpha))


class AdequacyRejectionError(RuntimeError):
    """The reality test rejected the factor-model hypothesis."""

    def __init__(self, result: AdequacyResult):
        self.result = result
        worst = min(result.bands, key=lambda b: b.p_value)
        super().__init__(
            "the spectral reality test rejects the factor model "
            f"(smallest band p-value {worst.p_value:.4g}); pass force=True to continue"
        )


@dataclass(frozen=True)
class ProjectionSet:
    """Unit directions spanning (part of) the orthogonal complement.

    ``series`` holds the projections w_i = z_i' Y once attached; the
    per-projection mean and standard deviation feed the detection rule.
    ``source`` records which covariance produced the directions.
    """

    directions: np.ndarray  # N x n_dir
    source: str
    series: np.ndarray | None = None  # n_dir x T
    means: np.ndarray | None = None
    stds: np.ndarray | None = None

    @property
    def n_directions(self) -> int:
        return self.directions.shape[1]


@dataclass(frozen=True)
class Detection:
    date: int
    direction: int
    score: float

    def to_jsonable(self) -> dict:
        return {"date": self.date, "direction": self.direction, "score": self.score}


@dataclass(frozen=True)
class SizeEstimate:
    """Outlier size at one date, split as omega = A alpha + zeta."""

    date: int
    omega_hat: np.ndarray
    zeta_hat: np.ndarray
    alpha_hat: np.ndarray

    def to_jsonable(self) -> dict:
        return {
            "date": self.date,
            "omega_hat": self.omega_hat.tolist(),
            "zeta_hat": self.zeta_hat.tolist(),
            "alpha_hat": self.alpha_hat.tolist(),
        }


@dataclass(frozen=True)
class OutlierReport:
    detections: tuple[Detection, ...]
    sizes: tuple[SizeEstimate, ...]
    threshold: float
    rounds: int
    k_selected: int
    adequacy: AdequacyResult | None
    model: FactorModel | None
    detection_eigenvalues: np.ndarray | None = None

    @property
    def dates(self) -> tuple[int, ...]:
        return tuple(d.date for d in self.detections)

    def to_jsonable(self) -> dict:
        return {
            "threshold": self.threshold,
            "rounds": self.rounds,
            "k_selected": self.k_selected,
            "detections": [d.to_jsonable() for d in self.detections],
            "sizes": [s.to_jsonable() for s in self.sizes],
            "adequacy": self.adequacy.to_jsonable() if self.adequacy else None,
            "model": self.model.to_jsonable() if self.model else None,
        }

    def table(self) -> str:
        lines = [f"{'date':>6} {'direction':>10} {'score':>8}"]
        for d in self.detections:
            lines.append(f"{d.date:>6} {d.direction:>10} {d.score:>8.4f}")
        if not self.detections:
            lines.append("(no detections)")
        for s in self.sizes:
            lines.append(f"outlier size at t={s.date}:")
            lines.append("  omega_hat: " + " ".join(f"{v:8.4f}" for v in s.omega_hat))
            lines.append("  zeta_hat:  " + " ".join(f"{v:8.4f}" for v in s.zeta_hat))
            lines.append("  alpha_hat: " + " ".join(f"{v:8.4f}" for v in s.alpha_hat))
        lines.append(
            f"threshold {self.threshold:.4f}, rounds {self.rounds}, K = {self.k_selected}"
        )
        return "\n".join(lines)


@dataclass(frozen=True)
class PipelineConfig:
    """Knobs of the detection and size-estimation pipeline."""

    estimator: str = "svd"
    k_alpha: float = tchebychev_threshold(0.05)
    mode: str = "homoscedastic"
    adjust_strategy: str = "interpolate"
    n_bands: int = 4
    adequacy_alpha: float = 0.05
    k_select_alpha: float = 0.05
    k: int | None = None
    n_directions: int | None = None
    max_rounds: int = 10
    ar_order: int | None = None
    var_order: int = 1
    max_lag: int | None = None
    force: bool = False
    run_adequacy: bool = True

    def __post_init__(self):
        if self.estimator not in ("svd", "jointdiag", "ml"):
            raise ValueError(f"unknown estimator {self.estimator!r}")
        if self.mode not in ("homoscedastic", "heteroscedastic"):
            raise ValueError(f"unknown detection mode {self.mode!r}")
        if self.adjust_strategy not in ("interpolate", "var-forecast"):
            raise ValueError(f"unknown adjust strategy {self.adjust_strategy!r}")
        if self.k_alpha <= 0:
            raise ValueError("k_alpha must be positive")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be at least 1")
        if self.k is not None and self.k < 1:
            raise ValueError("k must be a positive integer")


def projection_directions(covs: LagCovSet, k: int, mode: str = "homoscedastic") -> ProjectionSet:
    """Directions orthogonal (in the limit) to the loading space.

    Homoscedastic mode returns the N-K eigenvectors of Gamma(0) with the
    smallest eigenvalues; heteroscedastic mode uses the symmetrized
    Gamma(1), whose null space is orthogonal to the loadings regardless
    of the idiosyncratic variances, taking the eigenvectors with the
    smallest absolute eigenvalues.
    """
    n = covs.gamma0.shape[0]
    if not 0 < k < n:
        raise ValueError(f"need 0 < K < N, got K={k}, N={n}")
    n_dir = n - k
    if mode == "homoscedastic":
        eig = sym_eigen(covs.gamma0)
        directions = eig.vectors[:, ::-1][:, :n_dir]  # ascending eigenvalues
        source = "gamma0-smallest"
    elif mode == "heteroscedastic":
        if covs.max_lag < 1:
            raise ValueError("heteroscedastic mode needs Gamma(1)")
        sym1 = (covs.gammas[1] + covs.gammas[1].T) / 2.0
        eig = sym_eigen(sym1)
        order = np.argsort(np.abs(eig.values))
        directions = eig.vectors[:, order[:n_dir]]
        source = "gammah-null"
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return ProjectionSet(directions=directions, source=source)


def project_series(pset: ProjectionSet, series: MultiSeries) -> ProjectionSet:
    """Attach the projections w_i = z_i' y_t and their moments."""
    w = pset.directions.T @ series.values
    return dataclasses.replace(
        pset, series=w, means=w.mean(axis=1), stds=w.std(axis=1, ddof=1)
    )


def detect(proj: ProjectionSet, k_alpha: float = tchebychev_threshold(0.05)) -> list[Detection]:
    """Flag, per projection, the largest standardized excursion above k_alpha.

    A date is a detection when at least one projection flags it; a date
    flagged by several directions is reported once with the maximal
    score.  Zero-variance projections are skipped with a warning.
    """
    if k_alpha <= 0:
        raise ValueError("k_alpha must be positive")
    if proj.series is None:
        raise ValueError("projection series not attached; call project_series first")
    best: dict[int, Detection] = {}
    for i in range(proj.n_directions):
        sd = proj.stds[i]
        if sd <= 1e-300:
            warnings.warn(f"projection {i} has zero variance; skipped", stacklevel=2)
            continue
        scores = np.abs(proj.series[i] - proj.means[i]) / sd
        t_star = int(np.argmax(scores))
        if scores[t_star] > k_alpha:
            date = t_star + 1
            cand = Detection(date=date, direction=i, score=float(scores[t_star]))
            if date not in best or cand.score > best[date].score:
                best[date] = cand
    return [best[d] for d in sorted(best)]


def _var_fit_forecast(values: np.ndarray, t0: int, flagged: set[int], order: int) -> np.ndarray:
    """One-step VAR(order) forecast of column t0 (1-based), fitted by least
    squares on rows that do not touch a flagged date."""
    n, t_len = values.shape
    rows = []
    targets = []
    for t in range(order + 1, t_len + 1):
        window = range(t - order, t + 1)
        if any(u in flagged for u in window):
            continue
        rows.append(np.concatenate([[1.0], values[:, t - 1 - order : t - 1][:, ::-1].T.ravel()]))
        targets.append(values[:, t - 1])
    needed = order * n + 10
    if t0 - 1 < order or len(rows) < max(needed, order * n + 1):
        raise ValueError(
            f"not enough history to fit a VAR({order}) forecast at t={t0}: "
            f"{len(rows)} usable rows, {t0 - 1} earlier observations"
        )
    design = np.asarray(rows)
    target = np.asarray(targets)
    coef, *_ = np.linalg.lstsq(design, target, rcond=None)
    lags = values[:, t0 - 1 - order : t0 - 1][:, ::-1].T.ravel()
    return np.concatenate([[1.0], lags]) @ coef


def adjust(
    series: MultiSeries,
    dates: list[int] | tuple[int, ...],
    strategy: str = "interpolate",
    var_order: int = 1,
) -> MultiSeries:
    """Replace flagged columns by interpolation or a VAR forecast.

    ``interpolate`` averages the nearest non-flagged neighbours on both
    sides of each interior date and falls back to the VAR forecast at
    series ends (backcasting on the reversed panel for dates near the
    start).  ``var-forecast`` predicts every flagged column from its
    past via a least-squares VAR fitted without flagged dates.
    """
    if strategy not in ("interpolate", "var-forecast"):
        raise ValueError(f"unknown adjust strategy {strategy!r}")
    if not dates:
        return series
    t_len = series.n_times
    flagged = set(int(d) for d in dates)
    for d in flagged:
        if not 1 <= d <= t_len:
            raise IndexError(f"date {d} outside 1..{t_len}")
    values = series.values.copy()
    for t0 in sorted(flagged):
        if strategy == "var-forecast":
            values[:, t0 - 1] = _var_fit_forecast(series.values, t0, flagged, var_order)
            continue
        lo = t0 - 1
        while lo >= 1 and lo in flagged:
            lo -= 1
        hi = t0 + 1
        while hi <= t_len and hi in flagged:
            hi += 1
        if lo >= 1 and hi <= t_len:
            values[:, t0 - 1] = 0.5 * (series.values[:, lo - 1] + series.values[:, hi - 1])
        elif lo >= 1:
            values[:, t0 - 1] = _var_fit_forecast(series.values, t0, flagged, var_order)
        else:
            # no history before t0: backcast on the time-reversed panel
            rev = series.values[:, ::-1]
            rev_flagged = {t_len + 1 - d for d in flagged}
            values[:, t0 - 1] = _var_fit_forecast(rev, t_len + 1 - t0, rev_flagged, var_order)
    return MultiSeries(values=values, labels=series.labels, time_origin=series.time_origin)


def size_zeta(y_t0: np.ndarray, model: FactorModel, t0: int) -> np.ndarray:
    """Residual zeta = y_t0 - A x_t0 using the model's scores at t0."""
    if model.x is None:
        raise ValueError("model has no factor scores attached")
    if not 1 <= t0 <= model.x.shape[1]:
        raise IndexError(f"t0={t0} outside the score range")
    return np.asarray(y_t0, dtype=float) - model.a @ model.x[:, t0 - 1]


def _fit_ar(x: np.ndarray, t0: int, order: int) -> tuple[np.ndarray, float, int]:
    """Least-squares AR(order) on the series excluding rows touching t0.

    Returns (coefficients, residual variance, rows used)."""
    t_len = len(x)
    rows = []
    targets = []
    for t in range(order + 1, t_len + 1):
        if any(u == t0 for u in range(t - order, t + 1)):
            continue
        rows.append(x[t - 1 - order : t - 1][::-1])
        targets.append(x[t - 1])
    design = np.asarray(rows)
    target = np.asarray(targets)
    if len(rows) <= order + 1:
        raise ValueError(f"too few observations to fit AR({order})")
    phi, *_ = np.linalg.lstsq(design, target, rcond=None)
    resid = target - design @ phi
    sigma2 = float(resid @ resid) / max(len(rows) - order, 1)
    return phi, sigma2, len(rows)


def _ar_is_stable(phi: np.ndarray) -> bool:
    poly = np.concatenate([[1.0], -phi])
    roots = np.roots(poly[::-1])  # roots of 1 - phi_1 z - ... - phi_p z^p
    return bool(len(roots) == 0 or np.min(np.abs(roots)) > 1.0)


def size_alpha(factor_series: np.ndarray, t0: int, p: int | None = None) -> float:
    """Additive-outlier magnitude in one factor series at 1-based t0.

    Fits an AR(p) by least squares with rows touching t0 excluded (the
    mean is likewise taken over t != t0), then combines the residuals at
    and after t0 with the AR coefficients:

        alpha = sum_k pi_k e_{t0+k} / sum_k pi_k^2,
        pi_0 = 1, pi_k = -phi_k for 1 <= k <= p, 0 beyond p,

    which is the least-squares estimate of an additive outlier given the
    fitted autoregression.  With ``p=None`` the order is chosen by an
    AIC scan over 1..4; an unstable fit falls back to p=1.  At t0 = T
    only the pi_0 term survives, so alpha reduces to the residual e_T.
    """
    x = np.asarray(factor_series, dtype=float).ravel()
    t_len = len(x)
    if not 1 <= t0 <= t_len:
        raise IndexError(f"t0={t0} outside 1..{t_len}")
    scan = [p] if p is not None else [1, 2, 3, 4]
    if max(scan) >= t_len - 20:
        scan = [pp for pp in scan if pp < t_len - 20] or [min(1, t_len - 2)]
    mean = (x.sum() - x[t0 - 1]) / (t_len - 1)
    xc = x - mean

    if scan == [0]:
        return float(xc[t0 - 1])

    best_order = None
    best_aic = np.inf
    for order in scan:
        phi, sigma2, n_rows = _fit_ar(xc, t0, order)
        aic = n_rows * np.log(max(sigma2, 1e-300)) + 2 * (order + 1)
        if aic < best_aic:
            best_aic = aic
            best_order = order
    phi, _, _ = _fit_ar(xc, t0, best_order)
    if not _ar_is_stable(phi):
        phi, _, _ = _fit_ar(xc, t0, 1)
        if not _ar_is_stable(phi):
            phi = np.clip(phi, -0.99, 0.99)
        best_order = 1

    order = best_order
    resid = np.zeros(t_len)
    for t in range(order + 1, t_len + 1):
        resid[t - 1] = xc[t - 1] - phi @ xc[t - 1 - order : t - 1][::-1]
    pi = np.concatenate([[1.0], -phi])
    num = 0.0
    den = 0.0
    for k in range(0, t_len - t0 + 1):
        if k >= len(pi):
            break
        if t0 + k <= order:
            continue  # residual undefined before the first full AR window
        num += pi[k] * resid[t0 - 1 + k]
        den += pi[k] ** 2
    return float(num / den)


def total_size(model: FactorModel, alpha_hat: np.ndarray, zeta_hat: np.ndarray) -> np.ndarray:
    """Recombine the two components: omega = A alpha + zeta."""
    alpha_hat = np.asarray(alpha_hat, dtype=float)
    zeta_hat = np.asarray(zeta_hat, dtype=float)
    if alpha_hat.shape != (model.k,) or zeta_hat.shape != (model.n_components,):
        raise ValueError("size components do not match the model dimensions")
    return model.a @ alpha_hat + zeta_hat


def decompose_true(omega: np.ndarray, a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split omega into the loading-space part and its orthogonal rest.

    alpha = (A'A)^{-1} A' omega and zeta = (I - A(A'A)^{-1}A') omega, so
    A alpha + zeta = omega exactly and zeta'A = 0.
    """
    omega = np.asarray(omega, dtype=float)
    a = np.asarray(a, dtype=float)
    svals = np.linalg.svd(a, compute_uv=False)
    if svals[-1] <= 1e-10 * svals[0]:
        raise ValueError("loading matrix is rank deficient")
    alpha = np.linalg.solve(a.T @ a, a.T @ omega)
    zeta = omega - a @ alpha
    return alpha, zeta


def _initial_k(series: MultiSeries, config: PipelineConfig) -> int:
    if config.k is not None:
        return config.k
    covs = lag_cov(series, 0)
    eig = sym_eigen(covs.gamma0)
    vals = np.maximum(eig.values, 0.0)
    k = select_k(vals, alpha=config.k_select_alpha, correct_floor=True)
    return min(k, series.n_components - 1)


def run_pipeline(series: MultiSeries, config: PipelineConfig | None = None) -> OutlierReport:
    """Full detection, adequacy, estimation and size-estimation pass.

    Rounds of detection alternate with adjustment of the original panel
    at all flagged dates (directions are recomputed from the adjusted
    panel each round) until no new date appears or ``max_rounds`` is
    reached.  The adequacy test then runs on the adjusted panel and a
    rejection aborts unless ``force`` is set.  The factor count is
    re-selected on the adjusted panel, the chosen estimator is fitted
    there, scores are taken by projecting the original panel onto the
    fitted loadings, and each detected date receives the decomposition
    omega = A alpha + zeta.
    """
    config = config or PipelineConfig()
    n = series.n_components
    k_init = _initial_k(series, config)

    flagged: dict[int, Detection] = {}
    adjusted = series
    rounds = 0
    for _ in range(config.max_rounds):
        rounds += 1
        covs = lag_cov(adjusted, 1 if config.mode == "heteroscedastic" else 0)
        n_dir = config.n_directions or max(1, n - k_init)
        pset = projection_directions(covs, max(1, n - n_dir), mode=config.mode)
        pset = project_series(pset, adjusted)
        hits = detect(pset, config.k_alpha)
        new = [d for d in hits if d.date not in flagged]
        if not new:
            break
        for d in new:
            flagged[d.date] = d
        adjusted = adjust(
            series, sorted(flagged), strategy=config.adjust_strategy, var_order=config.var_order
        )

    adequacy = None
    if config.run_adequacy:
        adequacy = adequacy_test(adjusted, n_bands=config.n_bands, alpha=config.adequacy_alpha)
        if adequacy.reject and not config.force:
            raise AdequacyRejectionError(adequacy)

    covs_adj = lag_cov(adjusted, config.max_lag if config.max_lag is not None else 0)
    eig_adj = sym_eigen(covs_adj.gamma0)
    k_hat = config.k or min(
        select_k(np.maximum(eig_adj.values, 0.0), alpha=config.k_select_alpha),
        n - 1,
    )

    if config.estimator == "svd":
        model = estimate_svd(adjusted, k_hat)
    elif config.estimator == "jointdiag":
        h = max(k_hat, 1)
        covs_h = lag_cov(adjusted, h)
        model = estimate_jointdiag(covs_h, k_hat, h)
    else:
        model = estimate_ml(covs_adj.gamma0, k_hat, mean=covs_adj.mean)

    scores = factor_scores(series, model)
    model = model.with_scores(scores)

    sizes = []
    for date in sorted(flagged):
        y_t0 = series.values[:, date - 1] - model.mean
        zeta_hat = size_zeta(y_t0, model, date)
        alpha_hat = np.array(
            [size_alpha(scores[r], date, p=config.ar_order) for r in range(k_hat)]
        )
        omega_hat = total_size(model, alpha_hat, zeta_hat)
        sizes.append(
            SizeEstimate(date=date, omega_hat=omega_hat, zeta_hat=zeta_hat, alpha_hat=alpha_hat)
        )

    detections = tuple(flagged[d] for d in sorted(flagged))
    return OutlierReport(
        detections=detections,
        sizes=tuple(sizes),
        threshold=config.k_alpha,
        rounds=rounds,
        k_selected=k_hat,
        adequacy=adequacy,
        model=model,
        detection_eigenvalues=np.maximum(eig_adj.values, 0.0),
    )

"""Factor-count selection and estimation of the loading matrix.

Three estimators are provided: a singular-value decomposition of the
centered data matrix, approximate joint diagonalization of the lagged
covariance matrices (temporal decorrelation), and an iterative
maximum-likelihood factor analysis on the lag-0 covariance.  They share
the FactorModel container and a deterministic column-sign convention.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .datamodel import MultiSeries
from .moments import LagCovSet, sym_eigen

SIGMA_ETA_FLOOR = 1e-8


class EstimationError(RuntimeError):
    """Raised when an estimator cannot produce a usable model."""


@dataclass(frozen=True)
class FactorModel:
    """Loading matrix, factor scores and idiosyncratic variances.

    ``a`` is N x K, ``x`` is K x T (None until scores are computed),
    ``sigma_eta`` holds the diagonal of the idiosyncratic covariance.
    ``mean`` is the component mean removed when the model was fitted;
    score computation centers new data with it.
    """

    a: np.ndarray
    sigma_eta: np.ndarray
    k: int
    method: str
    mean: np.ndarray
    x: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        n = a.shape[0]
        if a.ndim != 2 or a.shape[1] != self.k:
            raise ValueError(f"loading matrix shape {a.shape} does not match K={self.k}")
        if self.k >= n:
            raise ValueError(f"need K < N, got K={self.k}, N={n}")
        if np.any(np.asarray(self.sigma_eta) < 0):
            raise ValueError("idiosyncratic variances must be nonnegative")

    @property
    def n_components(self) -> int:
        return self.a.shape[0]

    def is_full_rank(self, rtol: float = 1e-8) -> bool:
        svals = np.linalg.svd(self.a, compute_uv=False)
        return bool(svals[-1] > rtol * svals[0])

    def with_scores(self, x: np.ndarray) -> "FactorModel":
        return dataclasses.replace(self, x=np.asarray(x, dtype=float))

    def to_jsonable(self) -> dict:
        return {
            "A": self.a.tolist(),
            "X": self.x.tolist() if self.x is not None else None,
            "sigma_eta": np.asarray(self.sigma_eta).tolist(),
            "K": self.k,
            "method": self.method,
            "mean": self.mean.tolist(),
            "diagnostics": self.diagnostics,
        }


def _fix_column_signs(a: np.ndarray, x: np.ndarray | None = None):
    """Largest-magnitude entry of each loading column made positive."""
    a = a.copy()
    x = None if x is None else x.copy()
    for k in range(a.shape[1]):
        pivot = int(np.argmax(np.abs(a[:, k])))
        if a[pivot, k] < 0:
            a[:, k] = -a[:, k]
            if x is not None:
                x[k] = -x[k]
    return a, x


def select_k(eigenvalues: np.ndarray, alpha: float = 0.05, correct_floor: bool = True) -> int:
    """Number of factors from the cumulated-eigenvalue rule.

    Returns the smallest K such that the cumulated share of the first K
    eigenvalues exceeds 1 - alpha.  With ``correct_floor`` the smallest
    eigenvalue is treated as the noise floor: the numerator becomes
    V_K + (N - K) * lambda_min, which accounts for the floor being
    strictly positive.
    """
    vals = np.asarray(eigenvalues, dtype=float)
    if vals.ndim != 1 or len(vals) == 0:
        raise ValueError("eigenvalues must be a nonempty 1-d array")
    if np.any(np.diff(vals) > 1e-12 * max(abs(vals[0]), 1.0)):
        raise ValueError("eigenvalues must be sorted in descending order")
    if np.any(vals < -1e-12 * max(abs(vals[0]), 1.0)):
        raise ValueError("eigenvalues must be nonnegative")
    total = vals.sum()
    if total <= 0:
        raise ValueError("all eigenvalues are zero")
    n = len(vals)
    lam_min = vals[-1]
    cumulated = np.cumsum(vals)
    for k in range(1, n + 1):
        numerator = cumulated[k - 1] + (n - k) * lam_min if correct_floor else cumulated[k - 1]
        if numerator / total > 1 - alpha:
            return k
    return n


def estimate_svd(series: MultiSeries, k: int) -> FactorModel:
    """Least-squares factor extraction from the SVD of the centered panel.

    The raw solution takes the top-K right singular directions as scores
    and A = Y X' as loadings (equal to W_K Lambda_K^(1/2) built from the
    eigenvectors of YY').  Scores are rescaled to unit sample variance,
    loadings absorb the inverse scale, and the idiosyncratic variances
    are the diagonal of Gamma(0) - AA' floored at zero.
    """
    t_len = series.n_times
    mean = series.values.mean(axis=1)
    yc = series.values - mean[:, None]
    rank = np.linalg.matrix_rank(yc)
    if not 0 < k <= rank:
        raise EstimationError(f"K={k} exceeds the rank {rank} of the centered panel")
    u, svals, vt = np.linalg.svd(yc, full_matrices=False)
    x_raw = vt[:k]                      # rows orthonormal: X X' = I_K
    a_raw = yc @ x_raw.T                # equals U_K diag(svals_K)
    a = a_raw / np.sqrt(t_len)
    x = x_raw * np.sqrt(t_len)
    a, x = _fix_column_signs(a, x)
    gamma0_diag = np.einsum("it,it->i", yc, yc) / t_len
    sigma_eta = np.maximum(gamma0_diag - np.einsum("ik,ik->i", a, a), 0.0)
    discarded = float((svals[k:] ** 2).sum())
    residual = yc - a @ x
    return FactorModel(
        a=a,
        sigma_eta=sigma_eta,
        k=k,
        method="svd",
        mean=mean,
        x=x,
        diagnostics={
            "singular_values": svals[:k].tolist(),
            "discarded_eigenvalue_sum": discarded,
            "reconstruction_error_sq": float((residual**2).sum()),
        },
    )


def _jointdiag_objective(b: np.ndarray, gammas: list[np.ndarray]) -> float:
    total = 0.0
    for g in gammas:
        m = b @ g @ b.T
        total += float((m**2).sum() - (np.diag(m) ** 2).sum())
    return total


def _jointdiag_sweep(
    coeffs: np.ndarray, basis: np.ndarray, gammas: list[np.ndarray], gamma0: np.ndarray
) -> np.ndarray:
    """One pass of row-wise updates, each a generalized eigenvector solve.

    Rows of B are parametrised as c_i' basis with ``basis`` spanning the
    leading eigenspace of Gamma(0); this keeps the extractor inside the
    signal subspace (unconstrained rows would escape into the joint null
    space of the lagged covariances, where the objective is trivially
    zero).  Fixing all other rows, the off-diagonal terms containing row
    i form a quadratic b_i M_i b_i'; its minimizer under the
    unit-variance constraint b_i Gamma(0) b_i' = 1 is the smallest
    generalized eigenvector of the reduced pencil.
    """
    k = coeffs.shape[0]
    gamma0_red = basis @ gamma0 @ basis.T
    gamma0_red = (gamma0_red + gamma0_red.T) / 2.0
    for i in range(k):
        others = np.delete(coeffs, i, axis=0) @ basis
        m_i = np.zeros_like(gamma0)
        for g in gammas:
            left = g @ others.T        # N x (K-1)
            right = g.T @ others.T
            m_i += left @ left.T + right @ right.T
        m_red = basis @ ((m_i + m_i.T) / 2.0) @ basis.T
        m_red = (m_red + m_red.T) / 2.0
        _, vecs = scipy.linalg.eigh(m_red, gamma0_red, subset_by_index=[0, 0])
        c = vecs[:, 0]
        coeffs[i] = c / np.sqrt(c @ gamma0_red @ c)
    return coeffs


def _whitened_start(covs: LagCovSet, k: int, h: int) -> np.ndarray:
    """Whiten by Gamma(0) and jointly diagonalize by orthogonal rotations.

    Classic temporal-decorrelation initialisation: rotate the whitened
    lagged covariances with Jacobi sweeps, then map back.  For exactly
    diagonalizable inputs this already reaches the global optimum.
    """
    eig = sym_eigen(covs.gamma0)
    vals = np.maximum(eig.values[:k], 1e-12)
    white = (eig.vectors[:, :k] / np.sqrt(vals)).T  # K x N
    mats = [white @ ((covs.gammas[j] + covs.gammas[j].T) / 2.0) @ white.T for j in range(1, h + 1)]
    rot = np.eye(k)
    for _ in range(100):
        changed = False
        for p in range(k - 1):
            for q in range(p + 1, k):
                num = 0.0
                den = 0.0
                for m in mats:
                    d = m[p, p] - m[q, q]
                    num += -4.0 * d * m[p, q]
                    den += d * d - 4.0 * m[p, q] ** 2
                theta = 0.25 * np.arctan2(num, den)
                if abs(theta) < 1e-12:
                    continue
                changed = True
                c, s = np.cos(theta), np.sin(theta)
                rotmat = np.eye(k)
                rotmat[p, p] = rotmat[q, q] = c
                rotmat[p, q] = s
                rotmat[q, p] = -s
                mats = [rotmat.T @ m @ rotmat for m in mats]
                rot = rot @ rotmat
        if not changed:
            break
    return rot.T @ white


def estimate_jointdiag(
    covs: LagCovSet,
    k: int,
    h: int,
    n_restarts: int = 5,
    seed: int = 0,
    max_sweeps: int = 500,
    tol: float = 1e-12,
) -> FactorModel:
    """Temporal decorrelation: approximate joint diagonalization of Gamma(1..H).

    Minimises the summed squared off-diagonal entries of B Gamma(h) B'
    over K x N matrices B whose rows give unit-variance factors lying in
    the leading K-dimensional eigenspace of Gamma(0), by alternating
    least squares over the rows.  Restart 0 is the whitened Jacobi
    solution, the rest are random; the best objective wins, ties going
    to the lowest restart index.  Loadings are recovered as
    A = B'(BB')^{-1}.
    """
    n = covs.gamma0.shape[0]
    if h < k:
        raise ValueError(f"need H >= K, got H={h}, K={k}")
    if covs.max_lag < h:
        raise ValueError(f"LagCovSet holds lags up to {covs.max_lag}, need {h}")
    gammas = [covs.gammas[j] for j in range(1, h + 1)]
    gamma0 = (covs.gamma0 + covs.gamma0.T) / 2.0
    rng = np.random.default_rng(seed)

    eig = sym_eigen(gamma0)
    basis = eig.vectors[:, :k].T  # K x N, orthonormal rows
    gamma0_red = basis @ gamma0 @ basis.T

    best: tuple[float, int, np.ndarray] | None = None
    for restart in range(n_restarts):
        if restart == 0:
            coeffs = _whitened_start(covs, k, h) @ basis.T
        else:
            coeffs = rng.standard_normal((k, k))
        for i in range(k):
            coeffs[i] /= np.sqrt(coeffs[i] @ gamma0_red @ coeffs[i])
        obj = _jointdiag_objective(coeffs @ basis, gammas)
        for _ in range(max_sweeps if k > 1 else 0):
            coeffs = _jointdiag_sweep(coeffs, basis, gammas, gamma0)
            new_obj = _jointdiag_objective(coeffs @ basis, gammas)
            if abs(obj - new_obj) < tol:
                obj = new_obj
                break
            obj = new_obj
        if best is None or obj < best[0] - 1e-15:
            best = (obj, restart, (coeffs @ basis).copy())

    obj, restart, b = best
    svals = np.linalg.svd(b, compute_uv=False)
    if svals[-1] <= 1e-10 * svals[0]:
        raise EstimationError(
            "joint diagonalization produced a rank-deficient factor extractor; "
            "try a larger H"
        )
    a = b.T @ np.linalg.inv(b @ b.T)
    a, _ = _fix_column_signs(a)
    # re-derive B from the sign-fixed loadings so scores stay consistent
    b = np.linalg.solve(a.T @ a, a.T)
    diagonals = [np.diag(b @ g @ b.T).tolist() for g in gammas]
    sigma_eta = np.maximum(np.diag(gamma0) - np.einsum("ik,ik->i", a, a), 0.0)
    return FactorModel(
        a=a,
        sigma_eta=sigma_eta,
        k=k,
        method="jointdiag",
        mean=covs.mean,
        diagnostics={
            "objective": obj,
            "restart": restart,
            "lag_diagonals": diagonals,
            "max_lag_used": h,
        },
    )


def _factor_loglik(gamma0: np.ndarray, sigma: np.ndarray) -> float:
    """Gaussian log-likelihood per observation of covariance ``sigma``."""
    n = gamma0.shape[0]
    sign, logdet = np.linalg.slogdet(sigma)
    if sign <= 0:
        return -np.inf
    trace = float(np.trace(np.linalg.solve(sigma, gamma0)))
    return -0.5 * (n * np.log(2 * np.pi) + logdet + trace)


def estimate_ml(
    gamma0: np.ndarray,
    k: int,
    tol: float = 1e-8,
    max_iter: int = 500,
    mean: np.ndarray | None = None,
) -> FactorModel:
    """Iterative maximum-likelihood factor analysis on a covariance matrix.

    Alternates two closed forms: given the idiosyncratic variances, the
    loadings come from the top-K eigenpairs of the standardized matrix,

        A = Sigma_eta^(1/2) Q (Lambda_K - I_K)^(1/2),

    and given the loadings, Sigma_eta = diag(Gamma(0) - AA').  Iteration
    stops when consecutive log-likelihood values differ by less than
    ``tol``.  Eigenvalues below one are clipped so the square root stays
    real; variances hitting the floor are flagged as a Heywood case, and
    hitting ``max_iter`` flags the result as non-converged (convergence
    of this scheme is not guaranteed).
    """
    gamma0 = np.asarray(gamma0, dtype=float)
    n = gamma0.shape[0]
    if gamma0.shape != (n, n):
        raise ValueError("gamma0 must be square")
    if np.linalg.norm(gamma0 - gamma0.T) > 1e-10 * max(np.linalg.norm(gamma0), 1e-300):
        raise ValueError("gamma0 must be symmetric")
    if np.linalg.eigvalsh(gamma0).min() <= 0:
        raise ValueError("gamma0 must be positive definite")
    if not 0 < k < n:
        raise ValueError(f"need 0 < K < N, got K={k}")

    sigma_eta = np.maximum(np.diag(gamma0) / 2.0, SIGMA_ETA_FLOOR)
    loglik = -np.inf
    loglik_trace: list[float] = []
    a = np.zeros((n, k))
    converged = False
    for iteration in range(1, max_iter + 1):
        scale = 1.0 / np.sqrt(sigma_eta)
        m = scale[:, None] * gamma0 * scale[None, :]
        eig = sym_eigen((m + m.T) / 2.0)
        lam = np.maximum(eig.values[:k], 1.0)
        q = eig.vectors[:, :k]
        a = np.sqrt(sigma_eta)[:, None] * q * np.sqrt(lam - 1.0)[None, :]
        sigma_eta = np.maximum(np.diag(gamma0) - np.einsum("ik,ik->i", a, a), SIGMA_ETA_FLOOR)
        new_loglik = _factor_loglik(gamma0, a @ a.T + np.diag(sigma_eta))
        loglik_trace.append(new_loglik)
        if abs(new_loglik - loglik) < tol:
            loglik = new_loglik
            converged = True
            break
        loglik = new_loglik

    a, _ = _fix_column_signs(a)
    heywood = bool(np.any(sigma_eta <= SIGMA_ETA_FLOOR))
    return FactorModel(
        a=a,
        sigma_eta=sigma_eta,
        k=k,
        method="ml",
        mean=np.zeros(n) if mean is None else np.asarray(mean, dtype=float),
        diagnostics={
            "loglik": loglik,
            "loglik_trace": loglik_trace,
            "iterations": len(loglik_trace),
            "converged": converged,
            "heywood": heywood,
        },
    )


def factor_scores(series: MultiSeries, model: FactorModel) -> np.ndarray:
    """Least-squares factor scores X = (A'A)^{-1} A' (Y - mean).

    Centering uses the mean stored in the model, so scores of new data
    are comparable with the training sample.
    """
    if not model.is_full_rank():
        raise EstimationError("loading matrix is rank deficient; scores are not identified")
    yc = series.values - model.mean[:, None]
    return np.linalg.solve(model.a.T @ model.a, model.a.T @ yc)

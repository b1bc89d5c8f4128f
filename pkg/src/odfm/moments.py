"""Second-moment estimation in the time and frequency domains.

Lag covariances use divisor T at every lag (so the covariance sequence
stays positive semidefinite and the outlier-bias algebra is exact), the
discrete Fourier transform is normalised by (2*pi*T)**-0.5, and the
periodogram at the Fourier frequencies sums back to the lag-0 covariance
through the Parseval identity.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .datamodel import MultiSeries

# direct DFT summation up to this length; FFT above (both agree to 1e-10)
_DIRECT_DFT_MAX = 512


@dataclass(frozen=True)
class LagCovSet:
    """Sample covariance matrices Gamma(h) for h = 0..max_lag.

    gammas[h][i, j] = (1/T) * sum_{t=1}^{T-h} (y_{i,t} - mean_i)(y_{j,t+h} - mean_j),
    with the mean subtracted once globally.
    """

    gammas: tuple[np.ndarray, ...]
    mean: np.ndarray
    n_times: int

    @property
    def max_lag(self) -> int:
        return len(self.gammas) - 1

    @property
    def gamma0(self) -> np.ndarray:
        return self.gammas[0]

    def to_jsonable(self) -> dict:
        return {
            "gammas": [g.tolist() for g in self.gammas],
            "mean": self.mean.tolist(),
            "n_times": self.n_times,
        }

    @classmethod
    def from_jsonable(cls, payload: dict) -> "LagCovSet":
        return cls(
            gammas=tuple(np.asarray(g, float) for g in payload["gammas"]),
            mean=np.asarray(payload["mean"], float),
            n_times=int(payload["n_times"]),
        )


@dataclass(frozen=True)
class SpectralWindow:
    """Daniell (flat) smoothing window over 2*half_width + 1 ordinates.

    The weights sum to T/(2*pi), so smoothing a flat periodogram returns
    it unchanged; c0 is the squared-weight normalisation constant of the
    window, with truncation point M = T/(2*half_width + 1).
    """

    kind: str = "daniell"
    half_width: int = 1

    def __post_init__(self):
        if self.kind != "daniell":
            raise ValueError(f"unsupported window kind {self.kind!r}")
        if self.half_width < 1:
            raise ValueError("window bandwidth must cover at least one Fourier spacing")

    @property
    def c0(self) -> float:
        return 1.0 / (2.0 * np.pi)

    def truncation_point(self, n_times: int) -> float:
        return n_times / (2 * self.half_width + 1)

    def weights(self, n_times: int) -> np.ndarray:
        span = 2 * self.half_width + 1
        return np.full(span, n_times / (2.0 * np.pi * span))


@dataclass(frozen=True)
class SpectralSet:
    """DFT vectors and periodogram matrices at the Fourier frequencies.

    Frequencies are lambda_j = 2*pi*j/T for the complete set of indices
    -T/2 < j <= T/2, stored in ascending j order.
    """

    j_index: np.ndarray
    freqs: np.ndarray
    dft: np.ndarray  # complex, shape (n_freq, N)
    n_times: int
    periodograms: np.ndarray | None = None  # complex, shape (n_freq, N, N)
    smoothed: np.ndarray | None = None
    window: SpectralWindow | None = None

    def at(self, j: int) -> int:
        """Position of frequency index j within the stored arrays."""
        pos = int(np.searchsorted(self.j_index, j))
        if pos >= len(self.j_index) or self.j_index[pos] != j:
            raise IndexError(f"frequency index {j} not in (-T/2, T/2]")
        return pos

    def to_jsonable(self) -> dict:
        def c(arr):
            return np.stack([arr.real, arr.imag], axis=-1).tolist()

        payload = {
            "j_index": self.j_index.tolist(),
            "n_times": self.n_times,
            "dft": c(self.dft),
        }
        if self.periodograms is not None:
            payload["periodograms"] = c(self.periodograms)
        if self.smoothed is not None:
            payload["smoothed"] = c(self.smoothed)
            payload["window"] = {"kind": self.window.kind, "half_width": self.window.half_width}
        return payload


@dataclass(frozen=True)
class EigenSystem:
    """Eigenvalues in descending order with orthonormal eigenvectors.

    Column k of ``vectors`` pairs with ``values[k]``; each vector carries
    the deterministic sign convention that its largest-magnitude entry is
    positive (ties broken by lowest index).
    """

    values: np.ndarray
    vectors: np.ndarray


def fourier_indices(n_times: int) -> np.ndarray:
    """The complete Fourier index set -T/2 < j <= T/2."""
    return np.arange(-((n_times - 1) // 2), n_times // 2 + 1)


def lag_cov(series: MultiSeries, max_lag: int) -> LagCovSet:
    """Sample lag covariances Gamma(0..max_lag) with divisor T.

    Parameters
    ----------
    series : MultiSeries
        Observed panel; the row means are removed internally.
    max_lag : int
        Largest lag, 0 <= max_lag < T.
    """
    t_len = series.n_times
    if not 0 <= max_lag < t_len:
        raise ValueError(f"max_lag must satisfy 0 <= M < T={t_len}, got {max_lag}")
    mean = series.values.mean(axis=1)
    yc = series.values - mean[:, None]
    gammas = []
    for h in range(max_lag + 1):
        if h == 0:
            g = yc @ yc.T / t_len
            g = (g + g.T) / 2.0
        else:
            g = yc[:, : t_len - h] @ yc[:, h:].T / t_len
        gammas.append(g)
    return LagCovSet(gammas=tuple(gammas), mean=mean, n_times=t_len)


def default_max_lag(series: MultiSeries) -> int:
    """Smallest lag beyond which all covariances are within 2/sqrt(T) of zero.

    Scans lags up to T/4 and returns the smallest h such that every entry
    of Gamma(h') for h' > h stays below the 2/sqrt(T) band (entries are
    compared on the correlation scale); capped at T/4.
    """
    t_len = series.n_times
    cap = max(1, t_len // 4)
    covs = lag_cov(series, cap)
    scale = np.sqrt(np.outer(np.diag(covs.gamma0), np.diag(covs.gamma0)))
    scale[scale == 0] = 1.0
    band = 2.0 / np.sqrt(t_len)
    significant = [np.max(np.abs(g / scale)) > band for g in covs.gammas]
    for h in range(cap, 0, -1):
        if significant[h]:
            return h
    return 1


def _dft_direct(yc: np.ndarray, lams: np.ndarray) -> np.ndarray:
    t_idx = np.arange(1, yc.shape[1] + 1)
    basis = np.exp(-1j * np.outer(lams, t_idx))
    return basis @ yc.T / np.sqrt(2.0 * np.pi * yc.shape[1])


def _dft_fft(yc: np.ndarray, js: np.ndarray) -> np.ndarray:
    # sum_{t=1}^{T} y_t e^{-i lam j t} = e^{-i lam j} * FFT(y)[j mod T]
    t_len = yc.shape[1]
    fft = np.fft.fft(yc, axis=1)
    phases = np.exp(-2j * np.pi * js / t_len)
    return (fft[:, js % t_len].T * phases[:, None]) / np.sqrt(2.0 * np.pi * t_len)


def dft(series: MultiSeries, j: int) -> np.ndarray:
    """Fourier transform (2*pi*T)**-0.5 * sum_t y_t exp(-i*lambda_j*t) at index j.

    The input panel is expected to be centered; d(-lambda_j) is the
    complex conjugate of d(lambda_j).
    """
    t_len = series.n_times
    if not -t_len / 2 < j <= t_len / 2:
        raise ValueError(f"frequency index must satisfy -T/2 < j <= T/2, got {j}")
    return dft_all(series, np.array([j]))[0]


def dft_all(series: MultiSeries, js: np.ndarray | None = None) -> np.ndarray:
    """DFT vectors at the given Fourier indices (all of them by default)."""
    t_len = series.n_times
    if js is None:
        js = fourier_indices(t_len)
    js = np.asarray(js, dtype=int)
    if t_len <= _DIRECT_DFT_MAX:
        return _dft_direct(series.values, 2.0 * np.pi * js / t_len)
    return _dft_fft(series.values, js)


def periodogram(series: MultiSeries) -> SpectralSet:
    """Periodogram matrices I(lambda_j) = d(lambda_j) conj(d(lambda_j))'.

    Computed at the complete Fourier index set; each matrix is Hermitian
    positive semidefinite with rank <= 1, and (2*pi/T) * sum_j I(lambda_j)
    equals the lag-0 covariance of the (centered) input.
    """
    js = fourier_indices(series.n_times)
    d = dft_all(series, js)
    pgrams = d[:, :, None] * d[:, None, :].conj()
    return SpectralSet(
        j_index=js,
        freqs=2.0 * np.pi * js / series.n_times,
        dft=d,
        n_times=series.n_times,
        periodograms=pgrams,
    )


def smoothed_spectrum(spec: SpectralSet, window: SpectralWindow) -> SpectralSet:
    """Smooth the periodogram: F(lambda) = (2*pi/T) * sum_j I(lambda_j) w(lambda - lambda_j).

    The window wraps circularly across the frequency set, so estimates
    near 0 and pi borrow ordinates from the conjugate side.
    """
    if spec.periodograms is None:
        raise ValueError("periodograms must be computed before smoothing")
    weights = window.weights(spec.n_times)
    if not np.any(weights):
        raise ValueError("degenerate window: all weights zero")
    n_freq = len(spec.j_index)
    offsets = np.arange(-window.half_width, window.half_width + 1)
    smooth = np.zeros_like(spec.periodograms)
    scale = 2.0 * np.pi / spec.n_times
    for pos in range(n_freq):
        idx = (pos + offsets) % n_freq
        smooth[pos] = scale * np.tensordot(weights, spec.periodograms[idx], axes=(0, 0))
    return replace(spec, smoothed=smooth, window=window)


def sym_eigen(matrix: np.ndarray) -> EigenSystem:
    """Eigendecomposition of a symmetric matrix with a fixed sign convention.

    Eigenvalues are returned in descending order.  Raises if the input is
    not symmetric within 1e-10 times its Frobenius norm.
    """
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {matrix.shape}")
    norm = np.linalg.norm(matrix)
    if np.linalg.norm(matrix - matrix.T) > 1e-10 * max(norm, 1e-300):
        raise ValueError("matrix is not symmetric within tolerance")
    values, vectors = np.linalg.eigh((matrix + matrix.T) / 2.0)
    order = np.argsort(-values, kind="stable")  # ties keep eigh's order
    values = values[order]
    vectors = vectors[:, order]
    return EigenSystem(values=values, vectors=_fix_signs(vectors))


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip columns so the largest-magnitude entry of each is positive."""
    out = vectors.copy()
    for k in range(out.shape[1]):
        pivot = int(np.argmax(np.abs(out[:, k])))
        if out[pivot, k] < 0:
            out[:, k] = -out[:, k]
    return out

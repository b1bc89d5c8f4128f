"""Frequency-domain test that the spectral density matrix is real.

A dynamic factor model with independent factors forces every lag
covariance matrix to be symmetric, which is equivalent to a real
spectral density at all frequencies.  The test splits (0, pi) into
frequency bands, treats the real and imaginary parts of the DFT
ordinates inside a band as two samples from the same normal law, and
rejects when the likelihood-ratio statistic for their independence is
large.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2

from .datamodel import MultiSeries, center
from .moments import SpectralSet, dft_all


class EstimationError(RuntimeError):
    """Raised when a statistic cannot be computed from the given band."""


@dataclass(frozen=True)
class BandMoments:
    """Real/imaginary second-moment matrices of the DFT over one band.

    With X_j^R, X_j^I the real and imaginary parts of the DFT at the J
    frequencies indexed by (a, b]:

        S_R = (1/J) * sum_j (X_j^R X_j^R' + X_j^I X_j^I')
        S_I = (1/J) * sum_j (X_j^I X_j^R' - X_j^R X_j^I')

    S_R is symmetric positive semidefinite and S_I is antisymmetric.
    """

    s_r: np.ndarray
    s_i: np.ndarray
    n_freqs: int
    band: tuple[int, int]


@dataclass(frozen=True)
class BandResult:
    band: tuple[int, int]
    n_freqs: int
    m: float
    u: float
    statistic: float
    df: int
    p_value: float
    reject: bool

    def to_jsonable(self) -> dict:
        return {
            "band": list(self.band),
            "n_freqs": self.n_freqs,
            "m": self.m,
            "u": self.u,
            "statistic": self.statistic,
            "df": self.df,
            "p_value": self.p_value,
            "reject": self.reject,
        }


@dataclass(frozen=True)
class AdequacyResult:
    """Per-band reality-test results with the any-band-rejects verdict.

    The overall decision is taken per band without a multiplicity
    correction; with several bands the family-wise error rate exceeds
    the per-band level.
    """

    bands: tuple[BandResult, ...]
    alpha: float
    reject: bool

    def to_jsonable(self) -> dict:
        return {
            "alpha": self.alpha,
            "reject": self.reject,
            "bands": [b.to_jsonable() for b in self.bands],
        }

    def table(self) -> str:
        lines = [
            f"{'band':>12} {'J':>4} {'U':>10} {'-m log U':>10} {'df':>4} "
            f"{'p-value':>9} {'decision':>9}"
        ]
        for b in self.bands:
            lines.append(
                f"({b.band[0]:>4},{b.band[1]:>5}] {b.n_freqs:>4} {b.u:>10.4f} "
                f"{b.statistic:>10.4f} {b.df:>4} {b.p_value:>9.4f} "
                f"{'reject' if b.reject else 'accept':>9}"
            )
        lines.append(f"overall: {'reject' if self.reject else 'do not reject'} at level {self.alpha}")
        return "\n".join(lines)


def band_index_ranges(n_times: int, n_bands: int) -> list[tuple[int, int]]:
    """Split the interior Fourier indices of (0, pi) into contiguous bands.

    Indices run over 0 < lambda_j < pi, excluding both endpoints; each
    band is a half-open index range (a, b], with remainder frequencies
    assigned to the last band.
    """
    if n_bands < 1:
        raise ValueError("need at least one band")
    top = (n_times + 1) // 2  # smallest index with lambda_j >= pi
    n_interior = top - 1
    if n_interior < n_bands:
        raise ValueError(f"only {n_interior} interior frequencies for {n_bands} bands")
    width = n_interior // n_bands
    ranges = []
    for ell in range(n_bands):
        a = ell * width
        b = (ell + 1) * width if ell < n_bands - 1 else n_interior
        ranges.append((a, b))
    return ranges


def band_moments(spec: SpectralSet, band: tuple[int, int]) -> BandMoments:
    """Second-moment matrices S_R, S_I from the DFT over the band (a, b]."""
    a, b = band
    n = spec.dft.shape[1]
    n_freqs = b - a
    if n_freqs < n + 2:
        raise ValueError(f"band ({a}, {b}] holds {n_freqs} frequencies; need at least N+2={n + 2}")
    top = (spec.n_times + 1) // 2
    if a < 0 or b >= top:
        raise ValueError(f"band ({a}, {b}] leaves the open interval (0, pi)")
    rows = [spec.at(j) for j in range(a + 1, b + 1)]
    x_r = spec.dft[rows].real
    x_i = spec.dft[rows].imag
    s_r = (x_r.T @ x_r + x_i.T @ x_i) / n_freqs
    s_i = (x_i.T @ x_r - x_r.T @ x_i) / n_freqs
    return BandMoments(s_r=(s_r + s_r.T) / 2.0, s_i=(s_i - s_i.T) / 2.0, n_freqs=n_freqs, band=band)


def reality_lrt(bm: BandMoments) -> tuple[float, float, float]:
    """Likelihood-ratio statistic for a real spectral density on one band.

    Returns (U, test value, p-value) where

        U = |I + (S_R^{-1} S_I)^2|,    test value = -m log U,

    with m = J - N - 3/2, and the p-value is read from the upper tail of
    a chi-square with N^2 degrees of freedom.  Since S_I is antisymmetric
    and the joint second-moment block matrix is positive semidefinite,
    U always falls in [0, 1] and the test value is nonnegative.
    """
    n = bm.s_r.shape[0]
    cond = np.linalg.cond(bm.s_r)
    if not np.isfinite(cond) or cond > 1e12:
        raise EstimationError(
            f"S_R is numerically singular (condition number {cond:.3g}); widen the band"
        )
    g = np.linalg.solve(bm.s_r, bm.s_i)
    u = float(np.linalg.det(np.eye(n) + g @ g))
    if u <= 0:
        raise EstimationError("degenerate likelihood ratio; widen the band")
    if u > 1.0 + 1e-12:
        raise EstimationError(f"likelihood ratio U={u} exceeds 1 beyond tolerance")
    u = min(u, 1.0)
    m = bm.n_freqs - n - 1.5
    statistic = max(0.0, -m * np.log(u))
    p_value = float(chi2.sf(statistic, n * n))
    return u, statistic, p_value


def adequacy_test(series: MultiSeries, n_bands: int = 4, alpha: float = 0.05) -> AdequacyResult:
    """Run the reality test on equal frequency bands of (0, pi).

    The per-band chi-square approximation is the one used throughout:
    -m log U with m = J - N - 3/2 against chi-square(N^2).  In practice
    it is conservative, so non-rejection is the typical outcome when the
    factor-model assumptions hold.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must be in (0, 1)")
    ranges = band_index_ranges(series.n_times, n_bands)
    n = series.n_components
    min_j = min(b - a for a, b in ranges)
    if min_j < n + 2:
        raise ValueError(
            f"narrowest band holds {min_j} frequencies; need at least N+2={n + 2} "
            f"(reduce n_bands or provide a longer series)"
        )
    centered, _ = center(series)
    top = (series.n_times + 1) // 2
    js = np.arange(1, top)
    d = dft_all(centered, js)
    spec = SpectralSet(
        j_index=js,
        freqs=2.0 * np.pi * js / series.n_times,
        dft=d,
        n_times=series.n_times,
    )
    results = []
    for band in ranges:
        bm = band_moments(spec, band)
        u, statistic, p_value = reality_lrt(bm)
        results.append(
            BandResult(
                band=band,
                n_freqs=bm.n_freqs,
                m=bm.n_freqs - n - 1.5,
                u=u,
                statistic=statistic,
                df=n * n,
                p_value=p_value,
                reject=p_value < alpha,
            )
        )
    return AdequacyResult(bands=tuple(results), alpha=alpha, reject=any(b.reject for b in results))

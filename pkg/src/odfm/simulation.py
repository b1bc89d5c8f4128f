"""Data generators and the Monte Carlo harness.

Factors follow diagonal VAR(1) or VARMA(1,1) recursions normalised to
unit variance, observations add Gaussian idiosyncratic noise and the
outlier vector at the configured dates.  The harness replays the full
detection pipeline over independent replications with one master seed
spawning per-replication streams, so results are bit-identical for any
worker count.
"""

from __future__ import annotations

import dataclasses
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .datamodel import MultiSeries
from .outliers import PipelineConfig, decompose_true, run_pipeline

GAUSSIAN_METHOD = "inverse-transform (ndtri on 53-bit uniforms)"

SECTION7_A = np.array(
    [
        [1.0, 0.0, 0.0, 0.0],
        [0.5, 1.0, 0.0, 0.0],
        [0.0, 0.5, 1.0, 0.0],
        [0.0, 0.0, 0.5, 1.0],
        [0.0, 0.0, 0.0, 0.5],
    ]
)

SECTION8_A = np.array(
    [
        [2, 1, 0, 0], [1, 0, 2, 0], [1, 0, 0, 2], [0, 2, 1, 0], [0, 1, 0, 2],
        [0, 0, 1, -2], [1, 1, -2, 0], [1, -2, 0, 1], [-2, 0, 1, 1], [0, 1, -2, 1],
        [1, 2, 0, 0], [2, 0, 1, 0], [2, 0, 0, 1], [0, 1, 2, 0], [0, 2, 0, 1],
        [0, 0, -2, 1], [1, -2, 1, 0], [-2, 1, 0, 1], [1, 0, 1, -2], [0, -2, 1, 1],
    ],
    dtype=float,
)


def standard_normal(rng: np.random.Generator, size) -> np.ndarray:
    """Gaussian variates by inverse transform of strictly interior uniforms."""
    u = (rng.integers(0, 1 << 53, size=size) + 0.5) / float(1 << 53)
    return ndtri(u)


def n_workers() -> int:
    """Worker-pool size, capped by the ODFM_THREADS environment variable."""
    raw = os.environ.get("ODFM_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


@dataclass(frozen=True)
class SimConfig:
    """Generator and pipeline settings for one experiment."""

    n: int
    k: int
    t: int
    a: np.ndarray
    phi: np.ndarray
    theta: np.ndarray | None = None
    sigma_eta: float = 0.2
    omega: np.ndarray | None = None
    dates: tuple[int, ...] = ()
    burn: int = 100
    replications: int = 1
    seed: int = 0
    unit_variance: bool = True
    literal_innovation_variance: bool = False
    rescale_factors: bool = False
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    label: str = "custom"

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        if a.shape != (self.n, self.k):
            raise ValueError(f"loading matrix must be {self.n}x{self.k}, got {a.shape}")
        if np.linalg.matrix_rank(a) < self.k:
            raise ValueError("loading matrix must have full column rank")
        if np.any(np.abs(np.asarray(self.phi)) >= 1):
            raise ValueError("factor autoregression must be stationary: |phi| < 1")
        if self.theta is not None and np.any(np.abs(np.asarray(self.theta)) >= 1):
            raise ValueError("moving-average part must be invertible: |theta| < 1")
        if self.burn < 100:
            raise ValueError("burn-in must be at least 100")
        if self.replications < 1:
            raise ValueError("replications must be positive")
        if self.omega is not None and np.asarray(self.omega).shape != (self.n,):
            raise ValueError(f"omega must have shape ({self.n},)")
        for d in self.dates:
            if not 1 <= d <= self.t:
                raise ValueError(f"outlier date {d} outside 1..{self.t}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "phi", np.asarray(self.phi, dtype=float))
        if self.theta is not None:
            object.__setattr__(self, "theta", np.asarray(self.theta, dtype=float))
        if self.omega is not None:
            object.__setattr__(self, "omega", np.asarray(self.omega, dtype=float))

    def to_jsonable(self) -> dict:
        return {
            "label": self.label,
            "n": self.n,
            "k": self.k,
            "t": self.t,
            "a": self.a.tolist(),
            "phi": self.phi.tolist(),
            "theta": self.theta.tolist() if self.theta is not None else None,
            "sigma_eta": self.sigma_eta,
            "omega": self.omega.tolist() if self.omega is not None else None,
            "dates": list(self.dates),
            "burn": self.burn,
            "replications": self.replications,
            "seed": self.seed,
            "unit_variance": self.unit_variance,
            "literal_innovation_variance": self.literal_innovation_variance,
            "rescale_factors": self.rescale_factors,
            "pipeline": dataclasses.asdict(self.pipeline),
            "gaussian_method": GAUSSIAN_METHOD,
        }


def gen_factors_var(
    phi: np.ndarray, t_len: int, burn: int = 100, rng: np.random.Generator | None = None, seed=None
) -> np.ndarray:
    """Diagonal VAR(1) factors with unit theoretical variance.

    Innovation variance is 1 - phi_i^2 per factor; the burn-in segment is
    discarded.
    """
    return gen_factors_varma(phi, None, t_len, burn=burn, rng=rng, seed=seed)


def gen_factors_varma(
    phi: np.ndarray,
    theta: np.ndarray | None,
    t_len: int,
    burn: int = 100,
    rng: np.random.Generator | None = None,
    seed=None,
    unit_variance: bool = True,
    literal_innovation_variance: bool = False,
) -> np.ndarray:
    """Diagonal VARMA(1,1) factors x_t - phi x_{t-1} = e_t - theta e_{t-1}.

    With ``unit_variance`` each innovation variance is the exact
    normalisation (1 - phi^2) / (1 + theta^2 - 2 phi theta) that makes
    the theoretical factor variance one.  The alternative
    ``literal_innovation_variance`` uses 1 - theta*phi - (phi-theta)*theta
    instead, which does not normalise the variance exactly; it is kept
    for comparison only.
    """
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    if np.any(np.abs(phi) >= 1):
        raise ValueError("need |phi| < 1 for stationarity")
    k = len(phi)
    if theta is None:
        theta = np.zeros(k)
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if np.any(np.abs(theta) >= 1):
        raise ValueError("need |theta| < 1 for invertibility")
    if rng is None:
        rng = np.random.default_rng(seed)
    if literal_innovation_variance:
        sigma2 = 1.0 - theta * phi - (phi - theta) * theta
        if np.any(sigma2 <= 0):
            raise ValueError("the literal innovation variance is not positive here")
    elif unit_variance:
        sigma2 = (1.0 - phi**2) / (1.0 + theta**2 - 2.0 * phi * theta)
    else:
        sigma2 = np.ones(k)
    total = t_len + burn
    e = standard_normal(rng, (k, total)) * np.sqrt(sigma2)[:, None]
    x = np.zeros((k, total))
    x[:, 0] = e[:, 0]
    for t in range(1, total):
        x[:, t] = phi * x[:, t - 1] + e[:, t] - theta * e[:, t - 1]
    return x[:, burn:]


def gen_observed(
    a: np.ndarray,
    factors: np.ndarray,
    sigma_eta: float,
    omega: np.ndarray | None = None,
    dates: tuple[int, ...] = (),
    rng: np.random.Generator | None = None,
    seed=None,
) -> MultiSeries:
    """Observed panel y = A x + eta with the outlier added at each date."""
    a = np.asarray(a, dtype=float)
    factors = np.asarray(factors, dtype=float)
    if a.shape[1] != factors.shape[0]:
        raise ValueError(
            f"loading matrix has {a.shape[1]} columns but factors have {factors.shape[0]} rows"
        )
    if rng is None:
        rng = np.random.default_rng(seed)
    n, t_len = a.shape[0], factors.shape[1]
    values = a @ factors + sigma_eta * standard_normal(rng, (n, t_len))
    if omega is not None and dates:
        omega = np.asarray(omega, dtype=float)
        if omega.shape != (n,):
            raise ValueError(f"omega must have shape ({n},)")
        for d in dates:
            if not 1 <= d <= t_len:
                raise ValueError(f"outlier date {d} outside 1..{t_len}")
            values[:, d - 1] += omega
    return MultiSeries(values=values)


def simulate_panel(
    config: SimConfig, rng: np.random.Generator, outliers: bool = True
) -> tuple[MultiSeries, np.ndarray]:
    """One replication of the configured model; returns (panel, factors)."""
    factors = gen_factors_varma(
        config.phi,
        config.theta,
        config.t,
        burn=config.burn,
        rng=rng,
        unit_variance=config.unit_variance,
        literal_innovation_variance=config.literal_innovation_variance,
    )
    if config.rescale_factors:
        factors = factors / factors.std(axis=1, ddof=0, keepdims=True)
    series = gen_observed(
        config.a,
        factors,
        config.sigma_eta,
        omega=config.omega if outliers else None,
        dates=config.dates if outliers else (),
        rng=rng,
    )
    return series, factors


def section7_config(replications: int = 1, seed: int = 20240705, **overrides) -> SimConfig:
    """Five series, four AR(1) factors, one large outlier at the last date."""
    defaults = dict(
        n=5,
        k=4,
        t=100,
        a=SECTION7_A,
        phi=np.array([0.7, -0.7, 0.7, -0.7]),
        theta=None,
        sigma_eta=0.2,
        omega=np.array([1.5, -1.0, 0.0, -4.0, 5.0]),
        dates=(100,),
        replications=replications,
        seed=seed,
        label="section7",
    )
    defaults.update(overrides)
    return SimConfig(**defaults)


def section8_config(
    patch: bool = False, replications: int = 1000, seed: int = 20240705, **overrides
) -> SimConfig:
    """Twenty series, four VARMA(1,1) factors, outlier 0.6 on every component."""
    defaults = dict(
        n=20,
        k=4,
        t=200,
        a=SECTION8_A,
        phi=np.array([0.7, -0.5, 0.5, -0.7]),
        theta=np.array([-0.5, 0.7, -0.7, 0.5]),
        sigma_eta=0.2,
        omega=np.full(20, 0.6),
        dates=(99, 100, 101) if patch else (100,),
        replications=replications,
        seed=seed,
        rescale_factors=True,
        label="section8-patch" if patch else "section8-isolated",
    )
    defaults.update(overrides)
    return SimConfig(**defaults)


@dataclass(frozen=True)
class MonteCarloSummary:
    """Aggregated detection and size statistics over replications.

    Detection percentages carry the block standard error obtained by
    splitting the replications into 40 groups and taking the standard
    deviation of the per-group percentages.
    """

    config_label: str
    replications: int
    detection_pct: dict
    detection_se: dict
    all_dates_pct: float
    false_pct: float
    false_se: float
    k_counts: dict
    zeta_err_mean: dict
    zeta_err_sd: dict
    omega_err_mean: dict
    omega_err_sd: dict
    component_bias: float
    component_sd: float
    adequacy_rejections: int
    failures: int
    seed: int
    gaussian_method: str = GAUSSIAN_METHOD

    def to_jsonable(self) -> dict:
        return dataclasses.asdict(self)

    def table(self) -> str:
        lines = [f"{self.config_label}: {self.replications} replications (seed {self.seed})"]
        for date in sorted(self.detection_pct):
            lines.append(
                f"  detection at t={date}: {self.detection_pct[date]:6.2f}% "
                f"({self.detection_se[date]:.4f})"
            )
        lines.append(f"  all injected dates:  {self.all_dates_pct:6.2f}%")
        lines.append(f"  false detections:    {self.false_pct:6.2f}% ({self.false_se:.4f})")
        ks = ", ".join(f"K={k}: {c}" for k, c in sorted(self.k_counts.items()))
        lines.append(f"  factor count: {ks}")
        for date in sorted(self.zeta_err_mean):
            lines.append(
                f"  |zeta_hat - zeta| at t={date}: {self.zeta_err_mean[date]:.4f} "
                f"({self.zeta_err_sd[date]:.4f})   "
                f"|omega_hat - omega|: {self.omega_err_mean[date]:.4f} "
                f"({self.omega_err_sd[date]:.4f})"
            )
        lines.append(
            f"  per-component bias {self.component_bias:.4f}, sd {self.component_sd:.4f}"
        )
        lines.append(
            f"  adequacy rejections: {self.adequacy_rejections}, failures: {self.failures}"
        )
        return "\n".join(lines)


def _block_se(indicator: np.ndarray, n_groups: int = 40) -> float:
    """Standard deviation of per-group percentages over ~equal groups."""
    groups = np.array_split(indicator.astype(float), min(n_groups, len(indicator)))
    pcts = [100.0 * g.mean() for g in groups if len(g)]
    return float(np.std(pcts, ddof=1)) if len(pcts) > 1 else 0.0


def _one_replication(config: SimConfig, ss: np.random.SeedSequence):
    rng = np.random.default_rng(ss)
    series, _ = simulate_panel(config, rng)
    pipeline = dataclasses.replace(config.pipeline, force=True)
    report = run_pipeline(series, pipeline)
    return report


def monte_carlo(config: SimConfig, per_replication: list | None = None) -> MonteCarloSummary:
    """Replicate the full pipeline and aggregate the statistics.

    The adequacy test is recorded but never aborts a replication;
    unexpected per-replication failures are counted, not raised.  When a
    list is passed as ``per_replication`` it receives one record per
    replication for streaming to CSV.
    """
    if config.replications < 40:
        raise ValueError("need at least 40 replications for the block standard errors")
    dates = tuple(sorted(config.dates))
    if config.omega is not None and dates:
        _, zeta = decompose_true(config.omega, config.a)
    else:
        zeta = None

    seeds = np.random.SeedSequence(config.seed).spawn(config.replications)
    reports = [None] * config.replications
    workers = n_workers()

    def run(idx):
        try:
            return idx, _one_replication(config, seeds[idx])
        except Exception as exc:  # noqa: BLE001 - failures are aggregated
            return idx, exc

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for idx, outcome in pool.map(run, range(config.replications)):
                reports[idx] = outcome
    else:
        for idx in range(config.replications):
            reports[idx] = run(idx)[1]

    hit = {d: np.zeros(config.replications, dtype=bool) for d in dates}
    false = np.zeros(config.replications, dtype=bool)
    failures = 0
    adequacy_rejections = 0
    k_counts: dict[int, int] = {}
    zeta_errs = {d: [] for d in dates}
    omega_errs = {d: [] for d in dates}
    omega_devs = []

    for idx, report in enumerate(reports):
        if isinstance(report, Exception):
            failures += 1
            if per_replication is not None:
                per_replication.append({"replication": idx, "error": str(report)})
            continue
        detected = set(report.dates)
        for d in dates:
            hit[d][idx] = d in detected
        false[idx] = bool(detected - set(dates))
        if report.adequacy is not None and report.adequacy.reject:
            adequacy_rejections += 1
        k_counts[report.k_selected] = k_counts.get(report.k_selected, 0) + 1
        record = {
            "replication": idx,
            "detected_dates": sorted(detected),
            "k_selected": report.k_selected,
            "false_detection": bool(detected - set(dates)),
        }
        for size in report.sizes:
            if size.date in zeta_errs and zeta is not None:
                zeta_errs[size.date].append(float(np.linalg.norm(size.zeta_hat - zeta)))
                omega_errs[size.date].append(
                    float(np.linalg.norm(size.omega_hat - config.omega))
                )
                record[f"zeta_err_{size.date}"] = zeta_errs[size.date][-1]
                record[f"omega_err_{size.date}"] = omega_errs[size.date][-1]
                omega_devs.append(size.omega_hat - config.omega)
        if per_replication is not None:
            per_replication.append(record)

    detection_pct = {d: 100.0 * hit[d].mean() for d in dates}
    detection_se = {d: _block_se(hit[d]) for d in dates}
    all_hit = (
        np.logical_and.reduce([hit[d] for d in dates]) if dates else np.zeros(0, dtype=bool)
    )
    omega_devs = np.asarray(omega_devs) if omega_devs else np.zeros((0, config.n))
    return MonteCarloSummary(
        config_label=config.label,
        replications=config.replications,
        detection_pct=detection_pct,
        detection_se=detection_se,
        all_dates_pct=100.0 * all_hit.mean() if dates else 0.0,
        false_pct=100.0 * false.mean(),
        false_se=_block_se(false),
        k_counts=k_counts,
        zeta_err_mean={d: float(np.mean(v)) if v else float("nan") for d, v in zeta_errs.items()},
        zeta_err_sd={
            d: float(np.std(v, ddof=1)) if len(v) > 1 else float("nan")
            for d, v in zeta_errs.items()
        },
        omega_err_mean={
            d: float(np.mean(v)) if v else float("nan") for d, v in omega_errs.items()
        },
        omega_err_sd={
            d: float(np.std(v, ddof=1)) if len(v) > 1 else float("nan")
            for d, v in omega_errs.items()
        },
        component_bias=float(omega_devs.mean()) if omega_devs.size else float("nan"),
        component_sd=(
            float(omega_devs.std(axis=0, ddof=1).mean()) if omega_devs.shape[0] > 1 else float("nan")
        ),
        adequacy_rejections=adequacy_rejections,
        failures=failures,
        seed=config.seed,
    )


@dataclass(frozen=True)
class BiasEntry:
    target: float
    mean: float
    se: float
    var_target: float | None = None
    var_observed: float | None = None
    var_se: float | None = None

    def to_jsonable(self) -> dict:
        return {k: v for k, v in dataclasses.asdict(self).items() if v is not None}


@dataclass(frozen=True)
class BiasReport:
    """Monte Carlo check of the outlier-induced bias of moment estimates.

    For white noise z with an outlier omega added at t0, the scaled
    differences between contaminated and clean estimates concentrate on

        E T (gamma_hat_rs(0) - gamma_rs(0)~)      -> omega_r omega_s
        E T Re(I_rs - I_rs~) at Fourier freqs     -> omega_r omega_s / (2 pi)
        E T Im(I_rs - I_rs~)                      -> 0
        E T (F_hat_rs - F_rs~) smoothed           -> omega_r omega_s / (2 pi)

    with the lag-0 variance omega_s^2 gamma_rr + omega_r^2 gamma_ss
    + 2 omega_r omega_s gamma_rs.
    """

    replications: int
    t_len: int
    omega: np.ndarray
    freq_index: int
    gamma: dict
    periodogram_re: dict
    periodogram_im: dict
    smoothed: dict
    seed: int

    def to_jsonable(self) -> dict:
        def section(entries):
            return {f"{r},{s}": e.to_jsonable() for (r, s), e in entries.items()}

        return {
            "replications": self.replications,
            "t_len": self.t_len,
            "omega": self.omega.tolist(),
            "freq_index": self.freq_index,
            "gamma": section(self.gamma),
            "periodogram_re": section(self.periodogram_re),
            "periodogram_im": section(self.periodogram_im),
            "smoothed": section(self.smoothed),
            "seed": self.seed,
        }

    def max_z_score(self) -> float:
        worst = 0.0
        for section in (self.gamma, self.periodogram_re, self.periodogram_im, self.smoothed):
            for entry in section.values():
                if entry.se > 0:
                    worst = max(worst, abs(entry.mean - entry.target) / entry.se)
        return worst


def bias_experiment(
    omega: np.ndarray,
    t0: int,
    t_len: int,
    replications: int = 2000,
    seed: int = 0,
    freq_index: int | None = None,
    window_half_width: int = 2,
) -> BiasReport:
    """Paired contaminated-vs-clean moment estimates on white noise.

    Every replication draws z ~ N(0, I), forms y by adding ``omega`` at
    ``t0``, and records the scaled differences of lag-0 covariance,
    periodogram (at one Fourier frequency) and smoothed spectrum
    computed by the estimators of :mod:`odfm.moments` on both panels.
    """
    from .moments import SpectralWindow, lag_cov, periodogram, smoothed_spectrum

    omega = np.asarray(omega, dtype=float)
    n = len(omega)
    if not 1 <= t0 <= t_len:
        raise ValueError(f"t0={t0} outside 1..{t_len}")
    j = freq_index if freq_index is not None else max(1, t_len // 8)
    rng = np.random.default_rng(seed)
    window = SpectralWindow(half_width=window_half_width)

    gamma_diffs = np.zeros((replications, n, n))
    pgram_diffs = np.zeros((replications, n, n), dtype=complex)
    smooth_diffs = np.zeros((replications, n, n), dtype=complex)
    for rep in range(replications):
        z = standard_normal(rng, (n, t_len))
        y = z.copy()
        y[:, t0 - 1] += omega
        clean = MultiSeries(z)
        dirty = MultiSeries(y)
        gamma_diffs[rep] = t_len * (lag_cov(dirty, 0).gamma0 - lag_cov(clean, 0).gamma0)
        spec_dirty = periodogram(MultiSeries(y - y.mean(axis=1, keepdims=True)))
        spec_clean = periodogram(MultiSeries(z - z.mean(axis=1, keepdims=True)))
        pos = spec_dirty.at(j)
        pgram_diffs[rep] = t_len * (
            spec_dirty.periodograms[pos] - spec_clean.periodograms[pos]
        )
        f_dirty = smoothed_spectrum(spec_dirty, window)
        f_clean = smoothed_spectrum(spec_clean, window)
        smooth_diffs[rep] = t_len * (f_dirty.smoothed[pos] - f_clean.smoothed[pos])

    def summarize(samples: np.ndarray, target: float, var_target: float | None = None):
        mean = float(samples.mean())
        se = float(samples.std(ddof=1) / np.sqrt(len(samples)))
        if var_target is None:
            return BiasEntry(target=target, mean=mean, se=se)
        var_obs = float(samples.var(ddof=1))
        m4 = float(((samples - mean) ** 4).mean())
        var_se = float(np.sqrt(max(m4 - var_obs**2, 0.0) / len(samples)))
        return BiasEntry(
            target=target, mean=mean, se=se,
            var_target=var_target, var_observed=var_obs, var_se=var_se,
        )

    gamma = {}
    pgram_re = {}
    pgram_im = {}
    smooth = {}
    for r in range(n):
        for s in range(r, n):
            prod = omega[r] * omega[s]
            # white noise: gamma_rr = gamma_ss = 1, gamma_rs = 1 iff r == s
            var_target = omega[s] ** 2 + omega[r] ** 2 + 2 * prod * (1.0 if r == s else 0.0)
            gamma[(r + 1, s + 1)] = summarize(gamma_diffs[:, r, s], prod, var_target)
            pgram_re[(r + 1, s + 1)] = summarize(
                pgram_diffs[:, r, s].real, prod / (2 * np.pi)
            )
            pgram_im[(r + 1, s + 1)] = summarize(pgram_diffs[:, r, s].imag, 0.0)
            smooth[(r + 1, s + 1)] = summarize(
                smooth_diffs[:, r, s].real, prod / (2 * np.pi)
            )
    return BiasReport(
        replications=replications,
        t_len=t_len,
        omega=omega,
        freq_index=j,
        gamma=gamma,
        periodogram_re=pgram_re,
        periodogram_im=pgram_im,
        smoothed=smooth,
        seed=seed,
    )

"""Report writers: delimited outputs plus rendered figures.

Every report artefact exists in two forms side by side: a CSV holding
the plot-ready numbers and a PNG rendering of the same content.  The
figures use the Agg backend so runs stay headless.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .adequacy import AdequacyResult
from .outliers import OutlierReport, ProjectionSet
from .simulation import BiasReport, MonteCarloSummary


def write_projection_outputs(
    out_dir: str | Path,
    pset: ProjectionSet,
    threshold: float,
    detections=(),
    stem: str = "projections",
) -> list[Path]:
    """Projection series with threshold lines, as CSV and figure."""
    if pset.series is None:
        raise ValueError("projection series not attached")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n_dir, t_len = pset.series.shape

    csv_path = out_dir / f"{stem}.csv"
    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["direction", "t", "value", "mean", "lower", "upper"]
        )
        for i in range(n_dir):
            lo = pset.means[i] - threshold * pset.stds[i]
            hi = pset.means[i] + threshold * pset.stds[i]
            for t in range(1, t_len + 1):
                writer.writerow(
                    [i, t, repr(float(pset.series[i, t - 1])),
                     repr(float(pset.means[i])), repr(float(lo)), repr(float(hi))]
                )

    fig_path = out_dir / f"{stem}.png"
    n_cols = min(2, n_dir)
    n_rows = (n_dir + n_cols - 1) // n_cols
    fig, axes = plt.subplots(
        n_rows, n_cols, figsize=(6 * n_cols, 2.2 * n_rows), squeeze=False, sharex=True
    )
    dates = {d.date for d in detections}
    ts = np.arange(1, t_len + 1)
    for i in range(n_dir):
        ax = axes[i // n_cols][i % n_cols]
        ax.plot(ts, pset.series[i], lw=0.8, color="tab:blue")
        for offset, style in ((threshold, "--"), (-threshold, "--")):
            ax.axhline(pset.means[i] + offset * pset.stds[i], ls=style, lw=0.8, color="tab:red")
        for d in dates:
            ax.axvline(d, color="tab:orange", lw=0.6, alpha=0.7)
        ax.set_ylabel(f"w{i + 1}")
    for j in range(n_dir, n_rows * n_cols):
        axes[j // n_cols][j % n_cols].set_visible(False)
    axes[-1][0].set_xlabel("t")
    fig.suptitle("Projections onto the loading-orthogonal directions")
    fig.tight_layout()
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)
    return [csv_path, fig_path]


def write_eigenvalue_outputs(
    out_dir: str | Path,
    eigenvalues: np.ndarray,
    alpha: float = 0.05,
    stem: str = "eigenvalues",
) -> list[Path]:
    """Cumulated-eigenvalue curve with the selection threshold."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    vals = np.asarray(eigenvalues, dtype=float)
    total = vals.sum()
    cum = np.cumsum(vals) / total
    n = len(vals)
    corrected = (np.cumsum(vals) + (n - np.arange(1, n + 1)) * vals[-1]) / total

    csv_path = out_dir / f"{stem}.csv"
    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "eigenvalue", "cumulated_share", "corrected_share", "threshold"])
        for k in range(1, n + 1):
            writer.writerow(
                [k, repr(float(vals[k - 1])), repr(float(cum[k - 1])),
                 repr(float(corrected[k - 1])), repr(1.0 - alpha)]
            )

    fig_path = out_dir / f"{stem}.png"
    fig, ax = plt.subplots(figsize=(6, 4))
    ks = np.arange(1, n + 1)
    ax.plot(ks, cum, "o-", label="cumulated share")
    ax.plot(ks, corrected, "s--", label="noise-floor corrected")
    ax.axhline(1.0 - alpha, color="tab:red", lw=0.8, label=f"threshold {1 - alpha:g}")
    ax.set_xlabel("number of factors")
    ax.set_ylabel("cumulated eigenvalue share")
    ax.legend()
    fig.tight_layout()
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)
    return [csv_path, fig_path]


def write_adequacy_outputs(
    out_dir: str | Path, result: AdequacyResult, stem: str = "adequacy"
) -> list[Path]:
    """Per-band table as CSV and a bar figure of the band statistics."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{stem}.csv"
    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["band_low", "band_high", "n_freqs", "u", "statistic", "df", "p_value", "reject"])
        for b in result.bands:
            writer.writerow(
                [b.band[0], b.band[1], b.n_freqs, repr(b.u), repr(b.statistic),
                 b.df, repr(b.p_value), int(b.reject)]
            )

    fig_path = out_dir / f"{stem}.png"
    fig, ax = plt.subplots(figsize=(6, 4))
    labels = [f"({b.band[0]},{b.band[1]}]" for b in result.bands]
    stats = [b.statistic for b in result.bands]
    colors = ["tab:red" if b.reject else "tab:blue" for b in result.bands]
    ax.bar(labels, stats, color=colors)
    from scipy.stats import chi2

    crit = chi2.ppf(1 - result.alpha, result.bands[0].df)
    ax.axhline(crit, color="black", lw=0.8, ls="--", label=f"critical value {crit:.2f}")
    ax.set_xlabel("frequency band")
    ax.set_ylabel("-m log U")
    ax.legend()
    fig.tight_layout()
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)
    return [csv_path, fig_path]


def write_detection_report(out_dir: str | Path, report: OutlierReport) -> list[Path]:
    """Detection table CSV plus the outlier-size bar figure per date."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "detections.csv"
    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "direction", "score"])
        for d in report.detections:
            writer.writerow([d.date, d.direction, repr(d.score)])

    paths = [csv_path]
    if report.sizes:
        sizes_path = out_dir / "sizes.csv"
        with sizes_path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["date", "component", "omega_hat", "zeta_hat"])
            for s in report.sizes:
                for i, (om, ze) in enumerate(zip(s.omega_hat, s.zeta_hat), start=1):
                    writer.writerow([s.date, i, repr(float(om)), repr(float(ze))])
        fig_path = out_dir / "sizes.png"
        fig, axes = plt.subplots(
            len(report.sizes), 1, figsize=(6, 2.6 * len(report.sizes)), squeeze=False
        )
        for ax, s in zip(axes[:, 0], report.sizes):
            idx = np.arange(1, len(s.omega_hat) + 1)
            ax.bar(idx - 0.2, s.omega_hat, width=0.4, label="omega_hat")
            ax.bar(idx + 0.2, s.zeta_hat, width=0.4, label="zeta_hat")
            ax.set_title(f"outlier size at t={s.date}")
            ax.set_xlabel("component")
            ax.legend(fontsize=8)
        fig.tight_layout()
        fig.savefig(fig_path, dpi=120)
        plt.close(fig)
        paths += [sizes_path, fig_path]
    return paths


def write_summary_outputs(
    out_dir: str | Path, summary: MonteCarloSummary, stem: str = "summary"
) -> list[Path]:
    """Monte Carlo summary table as CSV and detection-rate figure."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{stem}.csv"
    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["statistic", "date", "value", "spread"])
        for d in sorted(summary.detection_pct):
            writer.writerow(
                ["detection_pct", d, repr(summary.detection_pct[d]), repr(summary.detection_se[d])]
            )
        writer.writerow(["all_dates_pct", "", repr(summary.all_dates_pct), ""])
        writer.writerow(["false_pct", "", repr(summary.false_pct), repr(summary.false_se)])
        for k, count in sorted(summary.k_counts.items()):
            writer.writerow(["k_count", k, count, ""])
        for d in sorted(summary.zeta_err_mean):
            writer.writerow(
                ["zeta_err", d, repr(summary.zeta_err_mean[d]), repr(summary.zeta_err_sd[d])]
            )
            writer.writerow(
                ["omega_err", d, repr(summary.omega_err_mean[d]), repr(summary.omega_err_sd[d])]
            )
        writer.writerow(["component_bias", "", repr(summary.component_bias), ""])
        writer.writerow(["component_sd", "", repr(summary.component_sd), ""])
        writer.writerow(["adequacy_rejections", "", summary.adequacy_rejections, ""])
        writer.writerow(["failures", "", summary.failures, ""])

    fig_path = out_dir / f"{stem}.png"
    fig, ax = plt.subplots(figsize=(6, 4))
    dates = sorted(summary.detection_pct)
    pcts = [summary.detection_pct[d] for d in dates]
    errs = [summary.detection_se[d] for d in dates]
    ax.bar([str(d) for d in dates], pcts, yerr=errs, capsize=4, color="tab:blue")
    ax.axhline(summary.false_pct, color="tab:red", ls="--", lw=0.8,
               label=f"false detections {summary.false_pct:.1f}%")
    ax.set_xlabel("outlier date")
    ax.set_ylabel("detection percentage")
    ax.set_ylim(0, 105)
    ax.set_title(f"{summary.config_label}: {summary.replications} replications")
    ax.legend()
    fig.tight_layout()
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)
    return [csv_path, fig_path]


def write_bias_outputs(out_dir: str | Path, report: BiasReport, stem: str = "bias") -> list[Path]:
    """Bias-check table as CSV and a target-vs-mean figure."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{stem}.csv"
    sections = [
        ("gamma", report.gamma),
        ("periodogram_re", report.periodogram_re),
        ("periodogram_im", report.periodogram_im),
        ("smoothed", report.smoothed),
    ]
    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["section", "r", "s", "target", "mean", "se"])
        for name, section in sections:
            for (r, s), entry in sorted(section.items()):
                writer.writerow([name, r, s, repr(entry.target), repr(entry.mean), repr(entry.se)])

    fig_path = out_dir / f"{stem}.png"
    fig, ax = plt.subplots(figsize=(6, 4))
    labels, targets, means, errors = [], [], [], []
    for name, section in sections:
        for (r, s), entry in sorted(section.items()):
            labels.append(f"{name[:5]}{r}{s}")
            targets.append(entry.target)
            means.append(entry.mean)
            errors.append(3 * entry.se)
    xs = np.arange(len(labels))
    ax.errorbar(xs, means, yerr=errors, fmt="o", label="Monte Carlo mean (3 s.e.)")
    ax.plot(xs, targets, "x", color="tab:red", label="theoretical target")
    ax.set_xticks(xs)
    ax.set_xticklabels(labels, rotation=60, fontsize=7)
    ax.legend()
    fig.tight_layout()
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)
    return [csv_path, fig_path]

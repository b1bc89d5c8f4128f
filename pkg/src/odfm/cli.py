"""Command-line driver: adequacy, estimate, detect and simulate.

Every run resolves its configuration, writes a manifest sufficient to
reproduce it byte for byte (modulo the manifest timestamp), and emits
machine-readable JSON next to human-readable tables, delimited files
and rendered figures.

Exit codes: 0 success / non-rejection, 1 error, 2 rejection of the
factor-model hypothesis (or detect without --force), 3 estimator did
not converge.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .adequacy import adequacy_test
from .datamodel import MultiSeries, TransformSpec, apply_transform, load_csv
from .factors import estimate_jointdiag, estimate_ml, estimate_svd, factor_scores, select_k
from .moments import lag_cov, sym_eigen
from .outliers import (
    AdequacyRejectionError,
    PipelineConfig,
    run_pipeline,
)
from .simulation import (
    GAUSSIAN_METHOD,
    SimConfig,
    monte_carlo,
    section7_config,
    section8_config,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_REJECT = 2
EXIT_NONCONVERGED = 3


def _json_dump(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_manifest(out_dir: Path, command: str, resolved: dict) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "gaussian_method": GAUSSIAN_METHOD,
        "resolved": resolved,
    }
    _json_dump(out_dir / "manifest.json", manifest)


def _load_input(args) -> MultiSeries:
    series = load_csv(
        args.input,
        delimiter=args.delimiter,
        header=None,
        orientation=args.orientation,
    )
    if args.transform_spec:
        kinds = json.loads(Path(args.transform_spec).read_text(encoding="utf-8"))
        if isinstance(kinds, dict):
            kinds = kinds["transforms"]
        series = apply_transform(series, [TransformSpec(kind) for kind in kinds])
    return series


def _out_dir(args) -> Path:
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(out_dir: Path, name: str, payload: dict, text: str, fmt: str) -> None:
    if fmt in ("json", "table"):
        _json_dump(out_dir / f"{name}.json", payload)
    if fmt in ("table", "csv"):
        (out_dir / f"{name}.txt").write_text(text + "\n", encoding="utf-8")
    print(text)


def cmd_adequacy(args) -> int:
    out_dir = _out_dir(args)
    try:
        series = _load_input(args)
        result = adequacy_test(series, n_bands=args.n_bands, alpha=args.alpha)
    except Exception as exc:  # noqa: BLE001
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    _write_manifest(out_dir, "adequacy", {
        "input": str(args.input), "n_bands": args.n_bands, "alpha": args.alpha,
        "orientation": args.orientation, "transform_spec": args.transform_spec,
    })
    _emit(out_dir, "adequacy", result.to_jsonable(), result.table(), args.format)
    from .report import write_adequacy_outputs

    write_adequacy_outputs(out_dir, result)
    return EXIT_REJECT if result.reject else EXIT_OK


def cmd_estimate(args) -> int:
    out_dir = _out_dir(args)
    try:
        if args.k is not None and args.k < 1:
            raise ValueError("--k must be a positive integer")
        series = _load_input(args)
        covs = lag_cov(series, max(args.max_lag or 0, 1))
        if args.k:
            k = args.k
        else:
            eig = sym_eigen(covs.gamma0)
            k = min(select_k(np.maximum(eig.values, 0.0)), series.n_components - 1)
        names = ["svd", "jointdiag", "ml"] if args.estimator == "all" else [args.estimator]
        models = {}
        for name in names:
            if name == "svd":
                model = estimate_svd(series, k)
            elif name == "jointdiag":
                h = max(args.max_lag or k, k)
                covs_h = lag_cov(series, h)
                model = estimate_jointdiag(covs_h, k, h)
            else:
                model = estimate_ml(covs.gamma0, k, mean=covs.mean)
            models[name] = model.with_scores(factor_scores(series, model))
    except Exception as exc:  # noqa: BLE001
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    _write_manifest(out_dir, "estimate", {
        "input": str(args.input), "estimator": args.estimator, "k": k,
        "max_lag": args.max_lag, "orientation": args.orientation,
        "transform_spec": args.transform_spec,
    })
    status = EXIT_OK
    lines = [f"K = {k}"]
    for name, model in models.items():
        _json_dump(out_dir / f"model_{name}.json", model.to_jsonable())
        diag = model.diagnostics
        note = ""
        if name == "ml" and not diag.get("converged", True):
            status = EXIT_NONCONVERGED
            note = "  [non-converged]"
        detail = (
            f"objective {diag['objective']:.3e}" if "objective" in diag
            else f"loglik {diag['loglik']:.4f} in {diag['iterations']} iterations"
            if "loglik" in diag
            else f"residual {diag['reconstruction_error_sq']:.4f}"
        )
        lines.append(f"{name:>10}: {detail}{note}")
    if len(models) > 1:
        # common-structure comparison: fitted covariances should agree
        lines.append("pairwise max |A A' difference|:")
        names_list = list(models)
        for i, n1 in enumerate(names_list):
            for n2 in names_list[i + 1:]:
                d = np.max(np.abs(
                    models[n1].a @ models[n1].a.T - models[n2].a @ models[n2].a.T
                ))
                lines.append(f"  {n1} vs {n2}: {d:.4f}")
    text = "\n".join(lines)
    (out_dir / "estimate.txt").write_text(text + "\n", encoding="utf-8")
    print(text)
    return status


def cmd_detect(args) -> int:
    out_dir = _out_dir(args)
    config = PipelineConfig(
        estimator=args.estimator,
        k_alpha=args.k_alpha,
        mode=args.mode,
        adjust_strategy=args.adjust,
        n_bands=args.n_bands,
        k=args.k,
        max_rounds=args.max_rounds,
        force=args.force,
    )
    try:
        series = _load_input(args)
        report = run_pipeline(series, config)
    except AdequacyRejectionError as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_REJECT
    except Exception as exc:  # noqa: BLE001
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    _write_manifest(out_dir, "detect", {
        "input": str(args.input), "pipeline": dataclasses.asdict(config),
        "orientation": args.orientation, "transform_spec": args.transform_spec,
    })
    _emit(out_dir, "report", report.to_jsonable(), report.table(), args.format)

    from .moments import lag_cov as _lag_cov
    from .outliers import project_series, projection_directions
    from .report import (
        write_detection_report,
        write_eigenvalue_outputs,
        write_projection_outputs,
    )

    covs = _lag_cov(series, 1 if args.mode == "heteroscedastic" else 0)
    pset = projection_directions(
        covs, min(report.k_selected, series.n_components - 1), mode=args.mode
    )
    pset = project_series(pset, series)
    write_projection_outputs(out_dir, pset, report.threshold, report.detections)
    if report.detection_eigenvalues is not None:
        write_eigenvalue_outputs(out_dir, report.detection_eigenvalues)
    write_detection_report(out_dir, report)
    return EXIT_OK


def _sim_config_from_file(path: str, replications: int | None, seed: int | None) -> SimConfig:
    raw = Path(path).read_text(encoding="utf-8")
    if path.endswith(".toml"):
        try:
            import tomllib  # py311+
        except ModuleNotFoundError:
            import tomli as tomllib
        payload = tomllib.loads(raw)
    else:
        payload = json.loads(raw)
    pipeline = PipelineConfig(**payload.pop("pipeline", {}))
    for key in ("a", "phi", "theta", "omega"):
        if payload.get(key) is not None:
            payload[key] = np.asarray(payload[key], dtype=float)
    if payload.get("dates") is not None:
        payload["dates"] = tuple(payload["dates"])
    if replications is not None:
        payload["replications"] = replications
    if seed is not None:
        payload["seed"] = seed
    return SimConfig(pipeline=pipeline, **payload)


def cmd_simulate(args) -> int:
    out_dir = _out_dir(args)
    try:
        if args.config:
            config = _sim_config_from_file(args.config, args.replications, args.seed)
        elif args.preset:
            kwargs = {}
            if args.replications is not None:
                kwargs["replications"] = args.replications
            if args.seed is not None:
                kwargs["seed"] = args.seed
            if args.preset == "section7":
                config = section7_config(**kwargs)
            elif args.preset == "section8-isolated":
                config = section8_config(patch=False, **kwargs)
            elif args.preset == "section8-patch":
                config = section8_config(patch=True, **kwargs)
            else:
                raise ValueError(f"unknown preset {args.preset!r}")
        else:
            raise ValueError("give either --preset or --config")
        if config.replications < 1:
            raise ValueError("replications must be positive")
        records: list | None = [] if args.per_replication_csv else None
        if config.replications < 40:
            # too few replications for the block scheme: run the pipeline
            # once per replication and emit raw reports only
            from .simulation import simulate_panel

            summary = None
            reports = []
            seeds = np.random.SeedSequence(config.seed).spawn(config.replications)
            for idx, ss in enumerate(seeds):
                series, _ = simulate_panel(config, np.random.default_rng(ss))
                pipeline = dataclasses.replace(config.pipeline, force=True)
                report = run_pipeline(series, pipeline)
                reports.append(report)
                _json_dump(out_dir / f"replication_{idx}.json", report.to_jsonable())
        else:
            summary = monte_carlo(config, per_replication=records)
    except Exception as exc:  # noqa: BLE001
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    _write_manifest(out_dir, "simulate", {
        "preset": args.preset, "config_file": args.config,
        "sim_config": config.to_jsonable(),
    })
    if summary is not None:
        _emit(out_dir, "summary", summary.to_jsonable(), summary.table(), args.format)
        from .report import write_summary_outputs

        write_summary_outputs(out_dir, summary)
        if records is not None:
            import csv as _csv

            for r in records:
                if "detected_dates" in r:
                    r["detected_dates"] = ";".join(str(d) for d in r["detected_dates"])
            keys = sorted({k for r in records for k in r})
            with (out_dir / "replications.csv").open("w", newline="", encoding="utf-8") as fh:
                writer = _csv.DictWriter(fh, fieldnames=keys)
                writer.writeheader()
                writer.writerows(records)
    else:
        print(f"wrote {config.replications} replication report(s) to {out_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="odfm",
        description="Dynamic factor models: adequacy testing, estimation and outlier detection.",
    )
    parser.add_argument("--version", action="version", version=f"odfm {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    io_parent = argparse.ArgumentParser(add_help=False)
    io_parent.add_argument("--input", required=True, help="CSV panel to analyse")
    io_parent.add_argument("--delimiter", default=",")
    io_parent.add_argument(
        "--orientation", choices=("columns", "rows"), default="columns",
        help="'columns': each CSV column is one component; 'rows': each row",
    )
    io_parent.add_argument(
        "--transform-spec", default=None,
        help="JSON file listing a per-component transform kind",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--output-dir", default="odfm-out")
    common.add_argument("--format", choices=("json", "table", "csv"), default="table")
    common.add_argument("--seed", type=int, default=None)

    p_adequacy = sub.add_parser(
        "adequacy", parents=[io_parent, common], help="test whether a factor model can fit"
    )
    p_adequacy.add_argument("--n-bands", type=int, default=4)
    p_adequacy.add_argument("--alpha", type=float, default=0.05)
    p_adequacy.set_defaults(func=cmd_adequacy)

    p_estimate = sub.add_parser(
        "estimate", parents=[io_parent, common], help="fit the loading matrix and factors"
    )
    p_estimate.add_argument(
        "--estimator", choices=("svd", "jointdiag", "ml", "all"), default="svd"
    )
    p_estimate.add_argument("--k", type=int, default=None, help="factor count (default: auto)")
    p_estimate.add_argument("--max-lag", type=int, default=None)
    p_estimate.set_defaults(func=cmd_estimate)

    p_detect = sub.add_parser(
        "detect", parents=[io_parent, common], help="detect and size additive outliers"
    )
    p_detect.add_argument("--estimator", choices=("svd", "jointdiag", "ml"), default="svd")
    p_detect.add_argument("--k-alpha", type=float, default=PipelineConfig().k_alpha)
    p_detect.add_argument("--mode", choices=("homoscedastic", "heteroscedastic"),
                          default="homoscedastic")
    p_detect.add_argument("--adjust", choices=("interpolate", "var-forecast"),
                          default="interpolate")
    p_detect.add_argument("--n-bands", type=int, default=4)
    p_detect.add_argument("--k", type=int, default=None)
    p_detect.add_argument("--max-rounds", type=int, default=10)
    p_detect.add_argument("--force", action="store_true",
                          help="continue despite an adequacy rejection")
    p_detect.set_defaults(func=cmd_detect)

    p_sim = sub.add_parser(
        "simulate", parents=[common], help="Monte Carlo experiments on synthetic panels"
    )
    p_sim.add_argument(
        "--preset", choices=("section7", "section8-isolated", "section8-patch"), default=None
    )
    p_sim.add_argument("--config", default=None, help="SimConfig as JSON or TOML")
    p_sim.add_argument("--replications", type=int, default=None)
    p_sim.add_argument("--per-replication-csv", action="store_true")
    p_sim.set_defaults(func=cmd_simulate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "simulate" and args.replications is not None and args.replications < 1:
        print("error: replications must be positive", file=sys.stderr)
        return EXIT_ERROR
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

"""Command-line interface: scenario runs, fitting, noise design, privatization."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np

from .arma import (
    ArmaModel,
    ForecastArtifact,
    dp_forecast_pipeline,
    fit_arma,
    forecast_distribution,
    from_log_residual,
    load_series_csv,
    save_forecast_csv,
    to_log_residual,
)
from .ensemble import load_ensemble, save_ensemble
from .experiments import (
    ConfigError,
    ScenarioConfig,
    StageError,
    cluster_graph,
    daily_profile_features,
    gen_synthetic_scenario,
    kmeans_cluster,
    load_config,
    run_curve_experiment,
    run_stage,
    write_manifest,
)
from .noise import AccuracyBudget, design_noise, save_noise_spec, trace_to_csv
from .privacy import curve_to_csv
from .rng import derive_seed


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="classdp",
        description="Design label-indistinguishable Gaussian release noise and publish private forecasts.",
    )
    parser.add_argument("--seed", type=int, default=None, help="root seed; overrides the config seed")
    parser.add_argument("--config", type=Path, default=None, help="JSON scenario config")
    parser.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic class ensemble")
    p.add_argument("--classes", type=int, default=None)
    p.add_argument("--dim", type=int, default=None)

    p = sub.add_parser("cluster", help="k-means over per-series daily log profiles")
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--clusters", type=int, default=None)
    p.add_argument("--profile", type=int, default=None, help="phases per profile")

    p = sub.add_parser("fit", help="fit an ARMA model to one seasonal-log series")
    p.add_argument("--input", required=True)
    p.add_argument("--ar", type=int, default=None)
    p.add_argument("--ma", type=int, default=None)
    p.add_argument("--period", type=int, default=None)

    p = sub.add_parser("forecast", help="plain (not privatized) forecast of one series")
    p.add_argument("--input", required=True)
    p.add_argument("--model", required=True, help="model.json from the fit command")
    p.add_argument("--history", type=int, default=None)
    p.add_argument("--horizon", type=int, default=None)

    p = sub.add_parser("design-noise", help="optimize noise covariances for an ensemble")
    p.add_argument("--ensemble", required=True, help="ensemble.json")
    p.add_argument("--rho", type=float, required=True)

    sub.add_parser("curve", help="no-noise / white / optimized delta(eps) curves per budget")

    p = sub.add_parser("privatize", help="full pipeline: fit, design noise, release forecasts")
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("--ar", type=int, default=None)
    p.add_argument("--ma", type=int, default=None)
    p.add_argument("--period", type=int, default=None)
    p.add_argument("--history", type=int, default=None)
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--clusters", type=int, default=None)
    p.add_argument("--profile", type=int, default=None)
    p.add_argument("--mc", type=int, default=None)
    return parser


def _pick(cli_value, config_value):
    return cli_value if cli_value is not None else config_value


def _load_document(path, loader, what: str):
    try:
        return loader(path)
    except FileNotFoundError as exc:
        raise ConfigError(f"{what} not found: {path}") from exc
    except (ValueError, OSError) as exc:
        raise ConfigError(f"cannot load {what} {path}: {exc}") from exc


def _cmd_synth(args, base: ScenarioConfig, out: Path, seed: int) -> int:
    count = _pick(args.classes, base.classes)
    dim = _pick(args.dim, base.dim)
    ensemble = run_stage("scenario", gen_synthetic_scenario, count, dim, seed)
    save_ensemble(ensemble, out / "ensemble.json")
    print(f"wrote {out / 'ensemble.json'} ({count} classes, dim {dim}, seed {seed})")
    return 0


def _cmd_cluster(args, base: ScenarioConfig, out: Path, seed: int) -> int:
    k = _pick(args.clusters, base.clusters)
    phases = _pick(args.profile, base.profile_phases)
    series = {Path(p).stem: _load_document(p, load_series_csv, "series") for p in args.inputs}
    labels, feats = run_stage("profile features", daily_profile_features, series, phases)
    km = run_stage("k-means", kmeans_cluster, feats, k, derive_seed(seed, 4))
    assignment = {label: int(c) for label, c in zip(labels, km.labels)}
    (out / "clusters.json").write_text(json.dumps(assignment, indent=2) + "\n")
    sizes = [int(np.sum(km.labels == c)) for c in range(k)]
    print(f"wrote {out / 'clusters.json'} (sizes {sizes}, inertia {km.inertia_path[-1]:.6g})")
    return 0


def _cmd_fit(args, base: ScenarioConfig, out: Path) -> int:
    period = _pick(args.period, base.period)
    m = _pick(args.ar, base.ar_order)
    n = _pick(args.ma, base.ma_order)
    series = _load_document(args.input, load_series_csv, "series")
    seasonal = run_stage("seasonal transform", to_log_residual, series, period)
    model = run_stage("fit", fit_arma, seasonal.residuals, m, n)
    doc = {"ar": model.ar.tolist(), "ma": model.ma.tolist(), "period": period}
    (out / "model.json").write_text(json.dumps(doc, indent=2) + "\n")
    print(f"wrote {out / 'model.json'} (orders ({m}, {n}), period {period})")
    return 0


def _load_model(path) -> tuple[ArmaModel, int]:
    def loader(p):
        doc = json.loads(Path(p).read_text())
        return ArmaModel(ar=np.asarray(doc["ar"], dtype=float), ma=np.asarray(doc["ma"], dtype=float)), int(
            doc["period"]
        )

    return _load_document(path, loader, "model")


def _cmd_forecast(args, base: ScenarioConfig, out: Path, seed: int) -> int:
    from .plots import render_forecast_figure

    model, period = _load_model(args.model)
    history = _pick(args.history, base.history)
    horizon = _pick(args.horizon, base.horizon)
    series = _load_document(args.input, load_series_csv, "series")
    seasonal = run_stage("seasonal transform", to_log_residual, series, period)
    dist = run_stage("forecast", forecast_distribution, model, seasonal.residuals, history, horizon)
    mu_fore = seasonal.phase_means(seasonal.length, horizon)
    std_log = np.sqrt(np.clip(np.diag(dist.covariance), 0.0, None))
    label = Path(args.input).stem
    artifact = ForecastArtifact(
        label=label,
        mean_log=dist.mean,
        released_log=dist.mean,
        mean=from_log_residual(dist.mean, mu_fore),
        released=from_log_residual(dist.mean, mu_fore),
        lower95=from_log_residual(dist.mean - 1.96 * std_log, mu_fore),
        upper95=from_log_residual(dist.mean + 1.96 * std_log, mu_fore),
    )
    save_forecast_csv(artifact, out / "forecast.csv")
    run_stage(
        "figure",
        render_forecast_figure,
        {label: artifact},
        out / "forecast.svg",
        history_tails={label: series[-min(series.size, 4 * horizon):]},
        hashsalt=str(seed),
    )
    print(f"wrote {out / 'forecast.csv'} and forecast.svg ({horizon} steps)")
    return 0


def _cmd_design_noise(args, out: Path) -> int:
    ensemble = _load_document(args.ensemble, load_ensemble, "ensemble")
    spec, trace, warnings = run_stage("noise design", design_noise, ensemble, AccuracyBudget(args.rho))
    save_noise_spec(spec, out / "noise_spec.json")
    trace_to_csv(trace, out / "trace.csv")
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(
        f"wrote {out / 'noise_spec.json'} and trace.csv "
        f"(J {trace.initial_cost:.6g} -> {trace.final_cost:.6g} in {len(trace.steps)} steps, {trace.termination})"
    )
    return 0


def _cmd_curve(args, base: ScenarioConfig, out: Path, seed: int) -> int:
    config = dataclasses.replace(base, seed=seed)
    manifest = run_curve_experiment(config, out)
    print(f"wrote {sorted(manifest['outputs'])} to {out}")
    return 0


def _cmd_privatize(args, base: ScenarioConfig, out: Path, seed: int) -> int:
    from .plots import render_forecast_figure

    period = _pick(args.period, base.period)
    history = _pick(args.history, base.history)
    horizon = _pick(args.horizon, base.horizon)
    clusters = _pick(args.clusters, base.clusters)
    phases = _pick(args.profile, base.profile_phases)
    mc = _pick(args.mc, base.mc_samples)
    m = _pick(args.ar, base.ar_order)
    n = _pick(args.ma, base.ma_order)

    timings: dict[str, float] = {}
    t0 = time.perf_counter()
    series: dict[str, np.ndarray] = {}
    for p in args.inputs:
        label = Path(p).stem
        if label in series:
            raise ConfigError(f"duplicate series label {label!r} from {p}")
        series[label] = _load_document(p, load_series_csv, "series")
    labels = sorted(series)
    seasonal = {l: run_stage("seasonal transform", to_log_residual, series[l], period) for l in labels}
    models = {l: run_stage("fit", fit_arma, seasonal[l].residuals, m, n) for l in labels}
    timings["fit"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    if clusters >= 2 and len(labels) > clusters:
        _, feats = run_stage("profile features", daily_profile_features, series, phases)
        km = run_stage("k-means", kmeans_cluster, feats, clusters, derive_seed(seed, 4))
        graph = cluster_graph(labels, km.labels)
    else:
        from .ensemble import NeighborhoodGraph

        graph = NeighborhoodGraph.complete(labels)
    timings["cluster"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    result = run_stage(
        "pipeline",
        dp_forecast_pipeline,
        series,
        models,
        graph,
        args.rho,
        seed,
        horizon=horizon,
        history=history,
        period=period,
        epsilons=np.asarray(base.epsilons, dtype=float),
        mc_samples=mc,
        partitions=base.partitions,
    )
    timings["pipeline"] = time.perf_counter() - t0

    outputs = []
    for label, artifact in sorted(result.forecasts.items()):
        name = f"forecast_{label}.csv"
        save_forecast_csv(artifact, out / name)
        outputs.append(name)
    save_noise_spec(result.noise, out / "noise_spec.json")
    if result.trace is not None:
        trace_to_csv(result.trace, out / "trace.csv")
        outputs.append("trace.csv")
    curve_to_csv(result.curve, out / "curve.csv")
    outputs.extend(["noise_spec.json", "curve.csv"])
    tails = {l: series[l][-min(series[l].size, 4 * horizon):] for l in labels}
    run_stage("figure", render_forecast_figure, result.forecasts, out / "forecasts.svg", history_tails=tails, hashsalt=str(seed))
    outputs.append("forecasts.svg")
    for w in result.warnings:
        print(f"warning: {w}", file=sys.stderr)
    write_manifest(
        out,
        seed=seed,
        mode="privatize",
        config={
            "inputs": list(args.inputs),
            "rho": args.rho,
            "ar_order": m,
            "ma_order": n,
            "period": period,
            "history": history,
            "horizon": horizon,
            "clusters": clusters,
            "profile_phases": phases,
            "mc_samples": mc,
        },
        timings=timings,
        outputs=outputs + ["manifest.json"],
        warnings=list(result.warnings),
    )
    print(f"wrote {len(outputs) + 1} files to {out}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        base = load_config(args.config) if args.config else ScenarioConfig()
        seed = args.seed if args.seed is not None else base.seed
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "synth":
            return _cmd_synth(args, base, out, seed)
        if args.command == "cluster":
            return _cmd_cluster(args, base, out, seed)
        if args.command == "fit":
            return _cmd_fit(args, base, out)
        if args.command == "forecast":
            return _cmd_forecast(args, base, out, seed)
        if args.command == "design-noise":
            return _cmd_design_noise(args, out)
        if args.command == "curve":
            return _cmd_curve(args, base, out, seed)
        if args.command == "privatize":
            return _cmd_privatize(args, base, out, seed)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()

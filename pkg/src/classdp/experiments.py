"""Scenario configuration, synthetic ensembles, clustering, and the curve experiment."""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .arma import fit_arma, forecast_distribution, load_series_csv, to_log_residual
from .ensemble import ClassEnsemble, ClassGaussian, NeighborhoodGraph, save_ensemble
from .noise import (
    AccuracyBudget,
    design_noise,
    save_noise_spec,
    trace_to_csv,
    white_noise_spec,
)
from .privacy import PrivacyCurve, epsilon_delta_curve
from .rng import derive_seed, substream
from .version import version_string

MECHANISMS = ("no-noise", "white", "optimized")


class ConfigError(ValueError):
    """Configuration document or flag set is invalid."""


class StageError(RuntimeError):
    """A pipeline stage failed; message names the stage."""

    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"stage '{stage}' failed: {exc}")
        self.stage = stage
        self.cause = exc


def run_stage(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def _default_epsilons() -> tuple[float, ...]:
    return tuple(float(e) for e in np.linspace(0.1, 1.0, 20))


@dataclass(frozen=True)
class ScenarioConfig:
    """One experiment description; JSON documents map onto these fields."""

    mode: str = "synthetic"
    classes: int = 4
    dim: int = 2
    rhos: tuple[float, ...] = (0.5, 1.0, 2.0)
    epsilons: tuple[float, ...] = dataclasses.field(default_factory=_default_epsilons)
    mc_samples: int = 100_000
    seed: int = 0
    ar_order: int = 6
    ma_order: int = 5
    period: int = 672
    clusters: int = 6
    profile_phases: int = 96
    horizon: int = 12
    history: int = 96
    partitions: int = 1
    inputs: tuple[str, ...] = ()


def validate_config(config: ScenarioConfig) -> None:
    problems: list[str] = []
    if config.mode not in ("synthetic", "timeseries"):
        problems.append(f"mode must be 'synthetic' or 'timeseries', got {config.mode!r}")
    if config.classes < 2:
        problems.append("classes must be at least 2")
    if config.dim < 1:
        problems.append("dim must be at least 1")
    if not config.rhos or any(not np.isfinite(r) or r <= 0.0 for r in config.rhos):
        problems.append("rhos must be a nonempty list of positive numbers")
    eps = np.asarray(config.epsilons, dtype=float)
    if eps.size == 0 or not np.all(np.isfinite(eps)) or np.any(np.diff(eps) < 0):
        problems.append("epsilons must be a nonempty ascending grid")
    if config.mc_samples < 1000:
        problems.append("mc_samples must be at least 1000")
    if config.partitions < 1:
        problems.append("partitions must be at least 1")
    for name in ("ar_order", "ma_order"):
        if getattr(config, name) < 0:
            problems.append(f"{name} must be nonnegative")
    for name in ("period", "clusters", "profile_phases", "horizon", "history"):
        if getattr(config, name) < 1:
            problems.append(f"{name} must be positive")
    if config.mode == "timeseries" and not config.inputs:
        problems.append("timeseries mode requires input series paths")
    if problems:
        raise ConfigError("; ".join(problems))


def config_to_dict(config: ScenarioConfig) -> dict:
    out = dataclasses.asdict(config)
    out["rhos"] = [float(r) for r in config.rhos]
    out["epsilons"] = [float(e) for e in config.epsilons]
    out["inputs"] = list(config.inputs)
    return out


def config_from_dict(data: Mapping) -> ScenarioConfig:
    known = {f.name for f in dataclasses.fields(ScenarioConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    kwargs = dict(data)
    for key in ("rhos", "epsilons"):
        if key in kwargs:
            kwargs[key] = tuple(float(v) for v in kwargs[key])
    if "inputs" in kwargs:
        kwargs["inputs"] = tuple(str(p) for p in kwargs["inputs"])
    try:
        config = ScenarioConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    validate_config(config)
    return config


def load_config(path) -> ScenarioConfig:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    return config_from_dict(data)


def gen_synthetic_scenario(count: int = 4, dim: int = 2, seed: int = 0) -> ClassEnsemble:
    """Complete-graph ensemble with collinear means and random Wishart covariances.

    Means sit at i * u along the fixed unit direction u = 1/sqrt(dim) with
    unit spacing; each covariance is G G^T with G a dim x dim standard
    normal draw, redrawn in the rare case the sample is numerically
    singular.  Deterministic per seed.
    """
    if count < 2:
        raise ValueError("need at least two classes")
    if dim < 1:
        raise ValueError("dimension must be at least 1")
    labels = [f"c{i}" for i in range(count)]
    direction = np.ones(dim) / np.sqrt(dim)
    rng = substream(seed, 3)
    classes = []
    for i, label in enumerate(labels):
        for _ in range(100):
            g = rng.standard_normal((dim, dim))
            cov = g @ g.T
            w = np.linalg.eigvalsh(cov)
            if w[0] > 1e-9 * w[-1] and w[-1] > 0.0:
                break
        else:
            raise RuntimeError("could not draw a well-conditioned covariance")
        classes.append(ClassGaussian(label=label, mean=i * direction, covariance=cov))
    return ClassEnsemble(classes=tuple(classes), graph=NeighborhoodGraph.complete(labels))


@dataclass(frozen=True, eq=False)
class KMeansResult:
    labels: np.ndarray
    centers: np.ndarray
    inertia_path: tuple[float, ...]


def kmeans_cluster(features, k: int, seed: int = 0, max_iter: int = 300) -> KMeansResult:
    """Lloyd iterations with k-means++ seeding; deterministic per seed.

    The recorded inertia (within-cluster sum of squares) is non-increasing
    across iterations; empty clusters are repaired by relocating their
    center onto the currently worst-served point.
    """
    x = np.asarray(features, dtype=float)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("features must be a nonempty 2-D array")
    n = x.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    rng = substream(seed, 4)

    centers = np.empty((k, x.shape[1]))
    centers[0] = x[int(rng.integers(n))]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = float(d2.sum())
        if total > 0.0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            idx = int(rng.integers(n))
        centers[j] = x[idx]
        d2 = np.minimum(d2, np.sum((x - centers[j]) ** 2, axis=1))

    path: list[float] = []
    prev = None
    for _ in range(max_iter):
        dist2 = np.sum((x[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        labels = np.argmin(dist2, axis=1)
        for c in range(k):
            if not np.any(labels == c):
                cost = dist2[np.arange(n), labels]
                centers[c] = x[int(np.argmax(cost))]
                dist2 = np.sum((x[:, None, :] - centers[None, :, :]) ** 2, axis=2)
                labels = np.argmin(dist2, axis=1)
        path.append(float(dist2[np.arange(n), labels].sum()))
        if prev is not None and np.array_equal(labels, prev):
            break
        prev = labels
        for c in range(k):
            centers[c] = x[labels == c].mean(axis=0)
    return KMeansResult(labels=prev if prev is not None else labels, centers=centers, inertia_path=tuple(path))


def daily_profile_features(series_by_label: Mapping[str, np.ndarray], phases: int) -> tuple[list[str], np.ndarray]:
    """Per-phase mean log consumption, one feature row per series (sorted labels)."""
    labels = sorted(series_by_label)
    rows = [to_log_residual(series_by_label[label], phases).seasonal_means for label in labels]
    return labels, np.stack(rows)


def cluster_graph(labels: Sequence[str], assignments: Sequence[int]) -> NeighborhoodGraph:
    """Complete neighborhoods inside each cluster, none across clusters."""
    edges = [
        (a, b)
        for i, a in enumerate(labels)
        for j, b in enumerate(labels)
        if i < j and assignments[i] == assignments[j]
    ]
    return NeighborhoodGraph.from_edges(labels, edges)


def timeseries_ensemble(config: ScenarioConfig):
    """Forecast-distribution ensemble built from the configured input series.

    Returns (ensemble, models, seasonal, cluster assignment or None).
    """
    series: dict[str, np.ndarray] = {}
    for p in config.inputs:
        label = Path(p).stem
        if label in series:
            raise ConfigError(f"duplicate series label {label!r} from {p}")
        series[label] = load_series_csv(p)
    labels = sorted(series)
    seasonal = {l: to_log_residual(series[l], config.period) for l in labels}
    models = {l: fit_arma(seasonal[l].residuals, config.ar_order, config.ma_order) for l in labels}
    classes = []
    for l in labels:
        dist = forecast_distribution(models[l], seasonal[l].residuals, config.history, config.horizon)
        classes.append(ClassGaussian(label=l, mean=dist.mean, covariance=dist.covariance))
    if config.clusters >= 2 and len(labels) > config.clusters:
        _, feats = daily_profile_features(series, config.profile_phases)
        km = kmeans_cluster(feats, config.clusters, seed=derive_seed(config.seed, 4))
        graph = cluster_graph(labels, km.labels)
        assignment = {l: int(c) for l, c in zip(labels, km.labels)}
    else:
        graph = NeighborhoodGraph.complete(labels)
        assignment = None
    return ClassEnsemble(classes=tuple(classes), graph=graph), models, seasonal, assignment


def write_experiment_csv(path, curves: Mapping[str, PrivacyCurve]) -> None:
    """Long-format experiment export: a mechanism column ahead of the curve columns."""
    import csv as _csv

    first = next(iter(curves.values()))
    pairs = sorted(first.per_edge_deltas)
    header = ["mechanism", "epsilon", "delta", "std_err"] + [f"delta_{a}_{b}" for a, b in pairs]
    with open(path, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(header)
        for name in MECHANISMS:
            if name not in curves:
                continue
            curve = curves[name]
            for i in range(curve.epsilons.size):
                row = [curve.epsilons[i], curve.deltas[i], curve.std_errors[i]]
                row += [curve.per_edge_deltas[p][i] for p in pairs]
                writer.writerow([name] + [format(v, ".17g") for v in row])


def write_manifest(out_dir, *, seed: int, mode: str, config: dict, timings: dict, outputs: list[str], warnings: list[str]) -> dict:
    manifest = {
        "seed": int(seed),
        "version": version_string(),
        "mode": mode,
        "config": config,
        "timings_seconds": {k: round(v, 6) for k, v in timings.items()},
        "outputs": sorted(outputs),
        "warnings": list(warnings),
    }
    Path(out_dir, "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest


def run_curve_experiment(config: ScenarioConfig, out_dir) -> dict:
    """Three delta(eps) curves (no-noise, white, optimized) per budget.

    Writes curves_<rho>.csv per budget, the rendered curves.svg, the
    optimized noise spec and descent trace per budget (the first budget
    also lands on the canonical noise_spec.json / trace.csv names), and
    manifest.json.  All numeric outputs are determined by the config seed.
    """
    from .plots import render_curve_figure

    validate_config(config)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    timings: dict[str, float] = {}
    outputs: list[str] = []
    warnings: list[str] = []
    eps = np.asarray(config.epsilons, dtype=float)
    seed = config.seed

    t0 = time.perf_counter()
    if config.mode == "synthetic":
        ensemble = run_stage("scenario", gen_synthetic_scenario, config.classes, config.dim, seed)
    else:
        ensemble, _, _, _ = run_stage("scenario", timeseries_ensemble, config)
        save_ensemble(ensemble, out / "ensemble.json")
        outputs.append("ensemble.json")
    timings["scenario"] = time.perf_counter() - t0

    labels = ensemble.labels
    dim = ensemble.dim

    t0 = time.perf_counter()
    none_curve = run_stage(
        "no-noise curve",
        epsilon_delta_curve,
        ensemble,
        None,
        eps,
        n=config.mc_samples,
        seed=derive_seed(seed, 5, 0),
        partitions=config.partitions,
    )
    timings["no_noise_curve"] = time.perf_counter() - t0

    curves_by_rho: dict[float, dict[str, PrivacyCurve]] = {}
    for i, rho in enumerate(config.rhos):
        t0 = time.perf_counter()
        white = run_stage("white noise", white_noise_spec, labels, dim, rho)
        white_curve = run_stage(
            "white curve",
            epsilon_delta_curve,
            ensemble,
            white,
            eps,
            n=config.mc_samples,
            seed=derive_seed(seed, 5, 1, i),
            partitions=config.partitions,
        )
        spec, dtrace, warns = run_stage("noise design", design_noise, ensemble, AccuracyBudget(rho))
        warnings.extend(f"rho={rho:g}: {w}" for w in warns)
        opt_curve = run_stage(
            "optimized curve",
            epsilon_delta_curve,
            ensemble,
            spec,
            eps,
            n=config.mc_samples,
            seed=derive_seed(seed, 5, 2, i),
            partitions=config.partitions,
        )
        timings[f"rho_{rho:g}"] = time.perf_counter() - t0

        curves = {"no-noise": none_curve, "white": white_curve, "optimized": opt_curve}
        curves_by_rho[float(rho)] = curves
        name = f"curves_{rho:g}.csv"
        write_experiment_csv(out / name, curves)
        outputs.append(name)
        spec_name, trace_name = f"noise_spec_{rho:g}.json", f"trace_{rho:g}.csv"
        save_noise_spec(spec, out / spec_name)
        trace_to_csv(dtrace, out / trace_name)
        outputs.extend([spec_name, trace_name])
        if i == 0:
            save_noise_spec(spec, out / "noise_spec.json")
            trace_to_csv(dtrace, out / "trace.csv")
            outputs.extend(["noise_spec.json", "trace.csv"])

    t0 = time.perf_counter()
    run_stage("figure", render_curve_figure, curves_by_rho, out / "curves.svg", hashsalt=str(seed))
    outputs.append("curves.svg")
    timings["figure"] = time.perf_counter() - t0

    return write_manifest(
        out,
        seed=seed,
        mode=config.mode,
        config=config_to_dict(config),
        timings=timings,
        outputs=outputs + ["manifest.json"],
        warnings=warnings,
    )

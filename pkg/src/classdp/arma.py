"""ARMA modeling of seasonal-log series and private forecast publication.

The time-series convention throughout:

    x[t] = -sum_i a[i] x[t-i] + sum_j b[j] xi[t-j],   xi ~ N(0, 1) iid,

with a = (a_1 .. a_m) the AR coefficients and b = (b_0 .. b_n) the MA
coefficients; the innovation standard deviation is folded into b.  A model
is stationary when the AR characteristic roots lie strictly inside the
unit disc, and then the process covariance is Toeplitz in the
autocovariance r[tau] = sum_i h[i] h[i + tau] of the impulse response h.

Positive consumption-style series are brought to this zero-mean world by
the seasonal log transform x[t] = log p[t] - mu[t mod P], and forecasts
return to the original domain through the inverse exp transform.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve, toeplitz

from .ensemble import ClassEnsemble, ClassGaussian, NeighborhoodGraph, require_valid_ensemble
from .noise import AccuracyBudget, DescentTrace, NoiseSpec, design_noise, privatize_query
from .privacy import PrivacyCurve, epsilon_delta_curve
from .rng import derive_seed

IMPULSE_DECAY_RTOL = 1e-10
IMPULSE_LENGTH_CAP = 4096
MIN_SAMPLES_PER_COEFF = 10


class NearUnitRootError(ValueError):
    """Impulse response failed to decay within the truncation cap."""


class InsufficientDataError(ValueError):
    """Series too short for the requested model order."""


@dataclass(frozen=True, eq=False)
class ArmaModel:
    """Stationary ARMA coefficients; ar = (a_1..a_m), ma = (b_0..b_n)."""

    ar: np.ndarray
    ma: np.ndarray

    def __post_init__(self):
        ar = np.atleast_1d(np.array(self.ar, dtype=float)) if np.size(self.ar) else np.zeros(0)
        ma = np.atleast_1d(np.array(self.ma, dtype=float))
        if ma.size < 1:
            raise ValueError("ma must contain at least b_0")
        if not (np.all(np.isfinite(ar)) and np.all(np.isfinite(ma))):
            raise ValueError("coefficients must be finite")
        if ar.size:
            roots = np.roots(np.concatenate(([1.0], ar)))
            top = float(np.max(np.abs(roots))) if roots.size else 0.0
            if top >= 1.0:
                raise ValueError(f"model is not stationary: AR root magnitude {top:.6g} >= 1")
        ar.setflags(write=False)
        ma.setflags(write=False)
        object.__setattr__(self, "ar", ar)
        object.__setattr__(self, "ma", ma)

    @property
    def ar_order(self) -> int:
        return self.ar.size

    @property
    def ma_order(self) -> int:
        return self.ma.size - 1


@dataclass(frozen=True, eq=False)
class ForecastDistribution:
    """Gaussian forecast of the next `horizon` steps given `history` observations."""

    mean: np.ndarray
    covariance: np.ndarray
    horizon: int
    history: int


@dataclass(frozen=True, eq=False)
class SeasonalLogSeries:
    """Log-domain residuals of a positive series after per-phase mean removal."""

    residuals: np.ndarray
    seasonal_means: np.ndarray
    length: int
    period: int

    def phase_means(self, start: int, count: int) -> np.ndarray:
        """Seasonal means aligned to positions start .. start+count-1."""
        idx = (start + np.arange(count)) % self.period
        return self.seasonal_means[idx]

    def reconstruct(self) -> np.ndarray:
        return np.exp(self.residuals + self.phase_means(0, self.length))


def impulse_response(model: ArmaModel, length: int) -> np.ndarray:
    """First `length` impulse-response coefficients h[0..length-1].

    h[k] = b_k (zero past the MA order) - sum_{i=1..min(k,m)} a_i h[k-i].
    """
    if length < 1:
        raise ValueError("length must be positive")
    a, b = model.ar, model.ma
    h = np.zeros(length)
    for k in range(length):
        val = b[k] if k < b.size else 0.0
        upto = min(k, a.size)
        if upto:
            val -= float(a[:upto] @ h[k - 1 :: -1][:upto])
        h[k] = val
    return h


def _decayed_impulse(model: ArmaModel) -> np.ndarray:
    """Impulse response truncated where it has decayed below IMPULSE_DECAY_RTOL of its peak."""
    window = max(model.ar_order, model.ma_order, 1) + 1
    length = 64
    while True:
        h = impulse_response(model, length)
        peak = float(np.max(np.abs(h)))
        if peak == 0.0:
            return h
        if float(np.max(np.abs(h[-window:]))) < IMPULSE_DECAY_RTOL * peak:
            return h
        if length >= IMPULSE_LENGTH_CAP:
            raise NearUnitRootError(
                f"impulse response has not decayed after {IMPULSE_LENGTH_CAP} lags; model is too close to a unit root"
            )
        length = min(2 * length, IMPULSE_LENGTH_CAP)


def autocovariance(model: ArmaModel, max_lag: int) -> np.ndarray:
    """Autocovariances r[0..max_lag] of the stationary process.

    Computed from the truncated impulse response; truncation error is below
    the 1e-10 decay threshold of the response itself.
    """
    if max_lag < 0:
        raise ValueError("max_lag must be nonnegative")
    h = _decayed_impulse(model)
    full = np.correlate(h, h, mode="full")
    r = np.zeros(max_lag + 1)
    avail = min(max_lag + 1, h.size)
    r[:avail] = full[h.size - 1 : h.size - 1 + avail]
    return r


def conditional_forecast(covariance: np.ndarray, means: np.ndarray, observed: np.ndarray) -> ForecastDistribution:
    """Condition a joint Gaussian on its leading block.

    covariance is the (K+T) x (K+T) joint covariance with the K observed
    coordinates first, means the joint mean, observed the K realized values.
    The forecast covariance does not depend on the observed values.
    """
    cov = np.asarray(covariance, dtype=float)
    mu = np.asarray(means, dtype=float)
    obs = np.asarray(observed, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ValueError("joint covariance must be square")
    total = cov.shape[0]
    k = obs.size
    t = total - k
    if mu.size != total:
        raise ValueError(f"means must have length {total}, got {mu.size}")
    if k < 1 or t < 1:
        raise ValueError("need at least one observed and one forecast coordinate")
    cov_oo = cov[:k, :k]
    cov_fo = cov[k:, :k]
    cov_ff = cov[k:, k:]
    try:
        chol = cho_factor(cov_oo, lower=True)
    except np.linalg.LinAlgError as exc:
        raise ValueError("observed-block covariance is singular") from exc
    gain = cho_solve(chol, cov_fo.T).T
    mean = mu[k:] + gain @ (obs - mu[:k])
    post = cov_ff - gain @ cov_fo.T
    post = (post + post.T) / 2.0
    return ForecastDistribution(mean=mean, covariance=post, horizon=t, history=k)


def _reflect_unstable_roots(ar: np.ndarray) -> np.ndarray:
    """Reflect AR characteristic roots outside the unit disc back inside."""
    if not ar.size:
        return ar
    roots = np.roots(np.concatenate(([1.0], ar)))
    mags = np.abs(roots)
    if np.all(mags < 1.0 - 1e-10):
        return ar
    fixed = np.where(mags >= 1.0, 1.0 / np.conj(roots), roots)
    mags = np.abs(fixed)
    # A reflected unit-modulus root stays on the circle; nudge it inside.
    shrink = np.where(mags >= 1.0 - 1e-8, (1.0 - 1e-8) / np.maximum(mags, 1e-300), 1.0)
    fixed = fixed * shrink
    poly = np.poly(fixed)
    return np.real(poly[1:])


def fit_arma(series, ar_order: int, ma_order: int) -> ArmaModel:
    """Two-stage regression fit (long autoregression, then joint regression).

    Stage one fits a long AR by least squares and keeps its residuals as
    innovation estimates; stage two regresses the series on its own lags
    and the lagged innovations.  The innovation variance estimate is
    rescaled to one by absorbing the residual standard deviation into the
    MA coefficients, and unstable AR estimates are repaired by root
    reflection.  With ar_order = ma_order = 0 the fit degenerates to
    b_0 = sample standard deviation.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim != 1:
        raise ValueError("series must be one-dimensional")
    if not np.all(np.isfinite(x)):
        raise ValueError("series contains non-finite values")
    m, n = int(ar_order), int(ma_order)
    if m < 0 or n < 0:
        raise ValueError("model orders must be nonnegative")
    required = MIN_SAMPLES_PER_COEFF * (m + n + 1)
    if x.size < required:
        raise InsufficientDataError(f"need at least {required} samples for orders ({m}, {n}), got {x.size}")
    if m == 0 and n == 0:
        return ArmaModel(ar=np.zeros(0), ma=np.array([float(np.std(x))]))

    def lag_matrix(values: np.ndarray, order: int, start: int) -> np.ndarray:
        return np.column_stack([values[start - j : values.size - j] for j in range(1, order + 1)])

    innovations = None
    if n > 0:
        # Long-AR order; capped so the stage-one regression stays overdetermined
        # near the minimum-length precondition.
        p_long = min(max(20, 2 * (m + n)), max(m + n, x.size // 3))
        design = lag_matrix(x, p_long, p_long)
        target = x[p_long:]
        coef, _, rank, _ = np.linalg.lstsq(design, target, rcond=None)
        if rank < p_long:
            raise ValueError("stage-one regression is rank deficient")
        innovations = np.zeros(x.size)
        innovations[p_long:] = target - design @ coef
        start = p_long + n
    else:
        start = m
    if m:
        start = max(start, m)

    cols = []
    if m:
        cols.append(lag_matrix(x, m, start))
    if n:
        cols.append(lag_matrix(innovations, n, start))
    design = np.hstack(cols)
    target = x[start:]
    if target.size <= m + n:
        raise InsufficientDataError("too few usable rows after lag construction")
    coef, _, rank, _ = np.linalg.lstsq(design, target, rcond=None)
    if rank < m + n:
        raise ValueError("stage-two regression is rank deficient")
    resid = target - design @ coef
    sigma = float(np.std(resid))
    ar = _reflect_unstable_roots(-coef[:m]) if m else np.zeros(0)
    ma = sigma * np.concatenate(([1.0], coef[m:])) if n else np.array([sigma])
    return ArmaModel(ar=ar, ma=ma)


def to_log_residual(series, period: int) -> SeasonalLogSeries:
    """Seasonal log transform: x[t] = log p[t] - mu[t mod period].

    Per-phase means are taken over all samples sharing the phase.  The
    series must be strictly positive and at least one period long.
    """
    p = np.asarray(series, dtype=float)
    if p.ndim != 1:
        raise ValueError("series must be one-dimensional")
    if period < 1:
        raise ValueError("period must be positive")
    if p.size < period:
        raise ValueError(f"series length {p.size} is shorter than the period {period}")
    if not np.all(np.isfinite(p)) or np.any(p <= 0.0):
        raise ValueError("series must be strictly positive and finite")
    logs = np.log(p)
    means = np.array([logs[phase::period].mean() for phase in range(period)])
    residuals = logs - means[np.arange(p.size) % period]
    return SeasonalLogSeries(residuals=residuals, seasonal_means=means, length=p.size, period=period)


def from_log_residual(log_values, aligned_means) -> np.ndarray:
    """Inverse transform: p = exp(x + mu) with means already phase-aligned."""
    x = np.asarray(log_values, dtype=float)
    mu = np.asarray(aligned_means, dtype=float)
    if x.shape != mu.shape:
        raise ValueError(f"shape mismatch: values {x.shape} vs means {mu.shape}")
    return np.exp(x + mu)


def forecast_distribution(model: ArmaModel, residuals, history: int, horizon: int) -> ForecastDistribution:
    """Conditional forecast of the next `horizon` residuals from the last `history` ones."""
    res = np.asarray(residuals, dtype=float)
    if history < 1 or horizon < 1:
        raise ValueError("history and horizon must be positive")
    if res.size < history:
        raise ValueError(f"need {history} residual samples, got {res.size}")
    r = autocovariance(model, history + horizon - 1)
    joint = toeplitz(r)
    return conditional_forecast(joint, np.zeros(history + horizon), res[-history:])


@dataclass(frozen=True, eq=False)
class ForecastArtifact:
    """Per-class output of the privatization pipeline, log and original domain."""

    label: str
    mean_log: np.ndarray
    released_log: np.ndarray
    mean: np.ndarray
    released: np.ndarray
    lower95: np.ndarray
    upper95: np.ndarray


@dataclass(frozen=True, eq=False)
class PipelineResult:
    ensemble: ClassEnsemble
    noise: NoiseSpec
    trace: DescentTrace | None
    forecasts: Mapping[str, ForecastArtifact]
    curve: PrivacyCurve
    warnings: tuple[str, ...]


def dp_forecast_pipeline(
    histories: Mapping[str, Sequence[float]],
    models: Mapping[str, ArmaModel],
    graph: NeighborhoodGraph,
    rho: float,
    seed: int,
    *,
    horizon: int,
    history: int,
    period: int,
    noise: NoiseSpec | None = None,
    epsilons=None,
    mc_samples: int = 100_000,
    partitions: int = 1,
) -> PipelineResult:
    """End-to-end private forecast publication.

    Per class: seasonal log transform, conditional ARMA forecast, then one
    noise design shared across classes (unless an explicit NoiseSpec is
    supplied, e.g. the zero spec), additive privatization of the log-domain
    forecast means, and the exp transform back.  Also returns the Monte
    Carlo privacy curve of the released log-domain ensemble.
    """
    labels = sorted(graph.labels)
    if sorted(histories) != labels or sorted(models) != labels:
        raise ValueError("histories and models must cover exactly the graph labels")

    classes = []
    seasonal: dict[str, SeasonalLogSeries] = {}
    dists: dict[str, ForecastDistribution] = {}
    for label in labels:
        s = to_log_residual(histories[label], period)
        dist = forecast_distribution(models[label], s.residuals, history, horizon)
        seasonal[label] = s
        dists[label] = dist
        classes.append(ClassGaussian(label=label, mean=dist.mean, covariance=dist.covariance))
    ensemble = ClassEnsemble(classes=tuple(classes), graph=graph)
    require_valid_ensemble(ensemble)

    warnings: list[str] = []
    trace: DescentTrace | None = None
    if noise is None:
        noise, trace, warnings = design_noise(ensemble, AccuracyBudget(rho))
    else:
        for label in labels:
            noise.covariance_for(label)  # coverage check

    artifacts: dict[str, ForecastArtifact] = {}
    for idx, label in enumerate(labels):
        dist = dists[label]
        s = seasonal[label]
        released_log = privatize_query(dist.mean, label, noise, derive_seed(seed, 2, idx))
        mu_fore = s.phase_means(s.length, horizon)
        std_log = np.sqrt(np.clip(np.diag(dist.covariance), 0.0, None))
        artifacts[label] = ForecastArtifact(
            label=label,
            mean_log=dist.mean,
            released_log=released_log,
            mean=from_log_residual(dist.mean, mu_fore),
            released=from_log_residual(released_log, mu_fore),
            lower95=from_log_residual(dist.mean - 1.96 * std_log, mu_fore),
            upper95=from_log_residual(dist.mean + 1.96 * std_log, mu_fore),
        )

    curve = epsilon_delta_curve(
        ensemble,
        noise,
        epsilons if epsilons is not None else np.linspace(0.1, 1.0, 20),
        n=mc_samples,
        seed=derive_seed(seed, 1),
        partitions=partitions,
    )
    return PipelineResult(
        ensemble=ensemble,
        noise=noise,
        trace=trace,
        forecasts=artifacts,
        curve=curve,
        warnings=tuple(warnings),
    )


def load_series_csv(path) -> np.ndarray:
    """Load one series: either `timestamp,value` rows (ISO timestamps, strictly
    increasing, uniformly spaced) or a headerless single column of floats."""
    text = Path(path).read_text().strip()
    if not text:
        raise ValueError(f"{path}: empty series file")
    lines = text.splitlines()
    first = lines[0].strip().lower().replace(" ", "")
    if first == "timestamp,value":
        stamps: list[datetime] = []
        values: list[float] = []
        for ln, line in enumerate(lines[1:], start=2):
            parts = line.split(",")
            if len(parts) != 2:
                raise ValueError(f"{path}:{ln}: expected 'timestamp,value'")
            try:
                stamps.append(datetime.fromisoformat(parts[0].strip()))
                values.append(float(parts[1]))
            except ValueError as exc:
                raise ValueError(f"{path}:{ln}: {exc}") from exc
        if len(stamps) < 2:
            raise ValueError(f"{path}: need at least two samples")
        gaps = [b - a for a, b in zip(stamps, stamps[1:])]
        if any(g.total_seconds() <= 0 for g in gaps):
            raise ValueError(f"{path}: timestamps must be strictly increasing")
        if any(g != gaps[0] for g in gaps[1:]):
            raise ValueError(f"{path}: timestamps must be uniformly spaced")
        return np.array(values)
    try:
        return np.array([float(line) for line in lines if line.strip()])
    except ValueError as exc:
        raise ValueError(f"{path}: not a timestamp,value file and not a plain column of numbers ({exc})") from exc


def save_forecast_csv(artifact: ForecastArtifact, path) -> None:
    """Forecast export: step,mean,released,lower95,upper95."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "mean", "released", "lower95", "upper95"])
        for i in range(artifact.mean.size):
            writer.writerow(
                [i + 1]
                + [
                    format(v, ".17g")
                    for v in (artifact.mean[i], artifact.released[i], artifact.lower95[i], artifact.upper95[i])
                ]
            )

"""Design of class-conditional additive Gaussian noise under a trace budget.

The released query for class X is q + eta with eta ~ N(0, N_X), so the
released covariance is S_X + N_X.  Writing A_X for the inverse released
covariance, the pairwise surrogate cost

    g(X, X') = v^T A_X' v - ln|A_X'| + ln|A_X|,    v = m_X' - m_X,

upper-bounds the pair's distinguishability (it is the whitened
mean-offset energy plus the log-determinant mismatch), and the design
objective is J = max over adjacent ordered pairs of g.  J is minimized by
projected coordinate descent on the A matrices: at each step the argmax
pair is located, A of its second element is moved against the gradient
d g / d A_X' = v v^T - A_X'^{-1}, the step is projected back onto the PSD
cone, and a closed-form step-size bound (with a backtracking fallback)
keeps the supremum from increasing.  Each accepted step is re-verified
numerically; steps that fail to decrease J are rejected.

The per-class noise covariance is then extracted from the optimized
inverse as the PSD part of A_X^{-1} - S_X, rescaled to spend the whole
trace budget rho.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .ensemble import (
    PD_RTOL,
    ClassEnsemble,
    ClassGaussian,
    NeighborhoodGraph,
    matrix_sqrt_sym,
    psd_project,
    require_valid_ensemble,
    sym_eigh,
    sym_inv_pd,
    sym_logdet_pd,
)
from .rng import substream

TRACE_RTOL = 1e-9

DEFAULT_MAX_ITERATIONS = 10_000
DEFAULT_ALPHA_TOLERANCE = 1e-12
DEFAULT_STALL_TOLERANCE = 1e-8
DEFAULT_STALL_WINDOW = 10
BACKTRACK_START = 0.1
MAX_HALVINGS = 30


class ZeroTraceProjectionError(ValueError):
    """The optimized inverse leaves no PSD noise direction for this class."""


@dataclass(frozen=True)
class AccuracyBudget:
    """Trace budget for the noise covariance: trace(N_X) = rho for every class.

    rho = 0 is the degenerate no-noise budget; design operations require
    rho > 0.
    """

    rho: float

    def __post_init__(self):
        if not np.isfinite(self.rho) or self.rho < 0.0:
            raise ValueError(f"rho must be a finite nonnegative number, got {self.rho!r}")


@dataclass(frozen=True, eq=False)
class NoiseSpec:
    """Per-class zero-mean Gaussian noise covariances under one budget."""

    budget: AccuracyBudget
    covariances: Mapping[str, np.ndarray]
    means: Mapping[str, np.ndarray]

    @classmethod
    def create(cls, budget: AccuracyBudget, covariances: Mapping[str, np.ndarray]) -> "NoiseSpec":
        covs: dict[str, np.ndarray] = {}
        means: dict[str, np.ndarray] = {}
        rho = budget.rho
        for label in sorted(covariances):
            cov = np.array(covariances[label], dtype=float)
            if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
                raise ValueError(f"noise covariance for {label!r} must be square, got {cov.shape}")
            w = np.linalg.eigvalsh((cov + cov.T) / 2.0)
            scale = max(float(np.max(np.abs(w))), 1.0) if w.size else 1.0
            if w.size and float(np.min(w)) < -1e-9 * scale:
                raise ValueError(f"noise covariance for {label!r} is not PSD (min eigenvalue {float(np.min(w)):.3e})")
            tr = float(np.trace(cov))
            if rho > 0.0:
                if abs(tr - rho) > TRACE_RTOL * rho:
                    raise ValueError(f"noise covariance for {label!r} has trace {tr:.12g}, budget is {rho:.12g}")
            elif abs(tr) > 1e-12:
                raise ValueError(f"zero budget requires zero noise, class {label!r} has trace {tr:.3e}")
            cov.setflags(write=False)
            mean = np.zeros(cov.shape[0])
            mean.setflags(write=False)
            covs[label] = cov
            means[label] = mean
        return cls(budget=budget, covariances=covs, means=means)

    @property
    def rho(self) -> float:
        return self.budget.rho

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(sorted(self.covariances))

    def covariance_for(self, label: str) -> np.ndarray:
        if label not in self.covariances:
            raise ValueError(f"noise spec has no class {label!r}")
        return self.covariances[label]


@dataclass(frozen=True)
class DescentStep:
    """One accepted descent iteration: the pre-step supremum and the step taken."""

    t: int
    pair: tuple[str, str]
    cost: float
    alpha: float


@dataclass(frozen=True)
class DescentTrace:
    steps: tuple[DescentStep, ...]
    termination: str
    initial_cost: float
    final_cost: float


def white_noise_spec(labels: Sequence[str], dim: int, rho: float) -> NoiseSpec:
    """Isotropic baseline: N_X = (rho / dim) I for every class."""
    if rho <= 0.0:
        raise ValueError("white noise requires rho > 0")
    if dim < 1:
        raise ValueError("dimension must be at least 1")
    cov = (rho / dim) * np.eye(dim)
    return NoiseSpec.create(AccuracyBudget(rho), {str(l): cov for l in labels})


def zero_noise_spec(labels: Sequence[str], dim: int) -> NoiseSpec:
    """Degenerate spec that releases the query untouched."""
    if dim < 1:
        raise ValueError("dimension must be at least 1")
    cov = np.zeros((dim, dim))
    return NoiseSpec.create(AccuracyBudget(0.0), {str(l): cov for l in labels})


def surrogate_cost_g(a_first: np.ndarray, a_second: np.ndarray, mean_first, mean_second) -> float:
    """Pairwise surrogate cost g for inverse released covariances A.

    g = v^T A_second v - ln|A_second| + ln|A_first| with v the mean
    difference (second minus first).  Raises when either A is not PD.
    """
    v = np.asarray(mean_second, dtype=float) - np.asarray(mean_first, dtype=float)
    return float(v @ np.asarray(a_second) @ v) - sym_logdet_pd(a_second) + sym_logdet_pd(a_first)


def cost_J(
    a_by_label: Mapping[str, np.ndarray],
    means: Mapping[str, np.ndarray],
    graph: NeighborhoodGraph,
) -> tuple[float, tuple[str, str]]:
    """Supremum of g over adjacent ordered pairs, with the argmax pair.

    Pairs are scanned in lexicographic order and ties keep the first, so
    the argmax is deterministic.
    """
    pairs = graph.ordered_pairs()
    if not pairs:
        raise ValueError("graph has no edges")
    best, best_pair = -np.inf, None
    for a, b in pairs:
        val = surrogate_cost_g(a_by_label[a], a_by_label[b], means[a], means[b])
        if val > best:
            best, best_pair = val, (a, b)
    return best, best_pair


class _ClassState:
    """Eigendecomposition-backed cache for one class's inverse covariance.

    A state only counts as feasible when it is strictly PD at the same
    relative threshold the extraction step will later demand; projection
    can park an eigenvalue at the cone boundary (reconstruction rounding
    leaves ~1e-16 instead of 0), and accepting such a state would strand
    the descent where the gradient scale ~1/eig defeats every step size.
    """

    __slots__ = ("a", "ok", "logdet", "inv", "tr_inv_sq")

    def __init__(self, a: np.ndarray):
        self.a = a
        w, v = np.linalg.eigh((a + a.T) / 2.0)
        self.ok = bool(w.size) and float(w[0]) > PD_RTOL * max(float(w[-1]), 0.0)
        if self.ok:
            self.logdet = float(np.sum(np.log(w)))
            self.inv = (v / w) @ v.T
            self.tr_inv_sq = float(np.sum(1.0 / (w * w)))
        else:
            self.logdet = -np.inf
            self.inv = None
            self.tr_inv_sq = np.inf


def _pair_cost(states: Mapping[str, _ClassState], means, a: str, b: str) -> float:
    sa, sb = states[a], states[b]
    if not (sa.ok and sb.ok):
        return np.inf  # singular A makes the pair cost undefined; force rejection
    v = means[b] - means[a]
    return float(v @ sb.a @ v) - sb.logdet + sa.logdet


def _step_bound_from_states(
    states: Mapping[str, _ClassState],
    means: Mapping[str, np.ndarray],
    graph: NeighborhoodGraph,
    pair: tuple[str, str],
) -> float:
    """Closed-form step-size bound for updating A of pair's second element.

    For the updated class c and each neighbor X, with v = m_c - m_X:

        b = (v^T A_c v - v^T A_X v + ln|A_X| - ln|A_c|)
            / (tr(A_c^-2) - v^T A_c^-1 v)
        d = (v^T A_c v + ln|A_c| - ln|A_X|)
            / (v^T A_c^-1 v - tr(A_c^-2) - (v^T v)^2)

    and the bound is max(0, min over neighbors of {b, d}).  Candidates with
    vanishing denominators impose no constraint and are skipped; if none
    remain the bound is 0, which routes the caller to backtracking.
    """
    upd = pair[1]
    state = states[upd]
    if not state.ok:
        raise ValueError(f"inverse covariance of class {upd!r} is singular")
    neighbors = graph.neighbors(upd)
    if not neighbors:
        return 0.0
    candidates = []
    for other in neighbors:
        so = states[other]
        if not so.ok:
            raise ValueError(f"inverse covariance of class {other!r} is singular")
        v = means[upd] - means[other]
        quad_c = float(v @ state.a @ v)
        quad_x = float(v @ so.a @ v)
        quad_cinv = float(v @ state.inv @ v)
        vv_sq = float(v @ v) ** 2
        with np.errstate(divide="ignore", invalid="ignore"):
            b = (quad_c - quad_x + so.logdet - state.logdet) / (state.tr_inv_sq - quad_cinv)
            d = (quad_c + state.logdet - so.logdet) / (quad_cinv - state.tr_inv_sq - vv_sq)
        for cand in (b, d):
            if np.isfinite(cand):
                candidates.append(cand)
    if not candidates:
        return 0.0
    return max(0.0, min(candidates))


def step_size_bound(
    a_by_label: Mapping[str, np.ndarray],
    means: Mapping[str, np.ndarray],
    graph: NeighborhoodGraph,
    pair: tuple[str, str],
) -> float:
    """Public wrapper of the closed-form step bound; pair must be the current argmax."""
    states = {label: _ClassState(np.asarray(a, dtype=float)) for label, a in a_by_label.items()}
    return _step_bound_from_states(states, {l: np.asarray(m, dtype=float) for l, m in means.items()}, graph, pair)


def optimize_inverse_covariances(
    ensemble: ClassEnsemble,
    budget: AccuracyBudget,
    *,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
    alpha_tolerance: float = DEFAULT_ALPHA_TOLERANCE,
    stall_tolerance: float = DEFAULT_STALL_TOLERANCE,
    stall_window: int = DEFAULT_STALL_WINDOW,
) -> tuple[dict[str, np.ndarray], DescentTrace]:
    """Projected descent on the inverse released covariances.

    Initialization is the white-noise release A_X = (S_X + (rho/k) I)^-1.
    Iterations stop when no candidate step decreases J (the step size has
    collapsed), when the relative improvement over the last stall_window
    accepted steps falls under stall_tolerance, or at max_iterations.
    Returns the optimized A map and the descent trace; the recorded J
    sequence is non-increasing by construction.
    """
    require_valid_ensemble(ensemble)
    if budget.rho <= 0.0:
        raise ValueError("noise design requires rho > 0")
    pairs = ensemble.graph.ordered_pairs()
    if not pairs:
        raise ValueError("ensemble graph has no edges")

    dim = ensemble.dim
    means = {c.label: c.mean for c in ensemble.classes}
    states = {
        c.label: _ClassState(sym_inv_pd(c.covariance + (budget.rho / dim) * np.eye(dim)))
        for c in ensemble.classes
    }
    costs = {p: _pair_cost(states, means, *p) for p in pairs}

    def current_max() -> tuple[float, tuple[str, str]]:
        best, best_pair = -np.inf, None
        for p in pairs:
            if costs[p] > best:
                best, best_pair = costs[p], p
        return best, best_pair

    j_current, pair = current_max()
    initial_cost = j_current
    steps: list[DescentStep] = []
    history: list[float] = [j_current]
    termination = "iteration_cap"

    for t in range(max_iterations):
        upd = pair[1]
        v = means[upd] - means[pair[0]]
        grad = np.outer(v, v) - states[upd].inv
        touched = [p for p in pairs if upd in p]
        other_max = max((costs[p] for p in pairs if upd not in p), default=-np.inf)

        alpha_closed = _step_bound_from_states(states, means, ensemble.graph, pair)
        candidates = []
        if alpha_closed > alpha_tolerance:
            candidates.append(alpha_closed)
        candidates.extend(BACKTRACK_START * 0.5**j for j in range(MAX_HALVINGS + 1))

        accepted = None
        for alpha in candidates:
            trial = _ClassState(psd_project(states[upd].a - alpha * grad))
            if not trial.ok:
                continue
            trial_states = dict(states)
            trial_states[upd] = trial
            trial_costs = {p: _pair_cost(trial_states, means, *p) for p in touched}
            j_trial = max(other_max, max(trial_costs.values()))
            if np.isfinite(j_trial) and j_trial < j_current:
                accepted = (alpha, trial, trial_costs, j_trial)
                break
        if accepted is None:
            termination = "alpha_below_tolerance"
            break

        alpha, trial, trial_costs, j_trial = accepted
        steps.append(DescentStep(t=t, pair=pair, cost=j_current, alpha=alpha))
        states[upd] = trial
        costs.update(trial_costs)
        j_current, pair = current_max()
        history.append(j_current)
        if len(history) > stall_window:
            j_old = history[-1 - stall_window]
            if (j_old - j_current) < stall_tolerance * max(1.0, abs(j_old)):
                termination = "stalled"
                break

    a_star = {label: state.a.copy() for label, state in states.items()}
    return a_star, DescentTrace(
        steps=tuple(steps),
        termination=termination,
        initial_cost=float(initial_cost),
        final_cost=float(j_current),
    )


def extract_noise_covariance(a_star: np.ndarray, covariance: np.ndarray, rho: float) -> np.ndarray:
    """Noise covariance from an optimized inverse: PSD part of A^-1 - S, trace-normalized to rho.

    Raises ZeroTraceProjectionError when the PSD projection has (numerically)
    zero trace, i.e. the optimizer asked for a release tighter than the class
    covariance in every direction and no noise budget can realize it.
    """
    if rho <= 0.0:
        raise ValueError("extraction requires rho > 0")
    diff = sym_inv_pd(a_star) - np.asarray(covariance, dtype=float)
    proj = psd_project(diff)
    tr = float(np.trace(proj))
    floor = 1e-12 * max(1.0, abs(float(np.trace(covariance))))
    if tr <= floor:
        raise ZeroTraceProjectionError("PSD projection of A^-1 - S has zero trace; no noise direction left")
    return (rho / tr) * proj


def design_noise(
    ensemble: ClassEnsemble,
    budget: AccuracyBudget,
    *,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
) -> tuple[NoiseSpec, DescentTrace, list[str]]:
    """Full design path: optimize, extract per class, fall back to white noise per class.

    Classes whose extraction has no PSD direction left get the isotropic
    (rho/k) I covariance instead, and a warning string records the fallback.
    """
    a_star, trace = optimize_inverse_covariances(ensemble, budget, max_iterations=max_iterations)
    dim = ensemble.dim
    warnings: list[str] = []
    covs: dict[str, np.ndarray] = {}
    for c in ensemble.classes:
        try:
            covs[c.label] = extract_noise_covariance(a_star[c.label], c.covariance, budget.rho)
        except ZeroTraceProjectionError:
            covs[c.label] = (budget.rho / dim) * np.eye(dim)
            warnings.append(f"class {c.label}: zero-trace projection, fell back to white noise")
    return NoiseSpec.create(budget, covs), trace, warnings


def sample_noise(noise: NoiseSpec, label: str, seed: int, draws: int = 1) -> np.ndarray:
    """Draw zero-mean noise vectors for one class; deterministic per seed."""
    cov = noise.covariance_for(label)
    root = matrix_sqrt_sym(cov)
    z = substream(seed).standard_normal((draws, cov.shape[0]))
    return z @ root.T


def privatize_query(q, label: str, noise: NoiseSpec, seed: int) -> np.ndarray:
    """Release q + eta with eta ~ N(0, N_label); a zero covariance acts as identity."""
    arr = np.asarray(q, dtype=float)
    cov = noise.covariance_for(label)
    if arr.ndim != 1 or arr.size != cov.shape[0]:
        raise ValueError(f"query must be a vector of dimension {cov.shape[0]}, got shape {arr.shape}")
    return arr + sample_noise(noise, label, seed, draws=1)[0]


def released_ensemble(ensemble: ClassEnsemble, noise: NoiseSpec | None) -> ClassEnsemble:
    """The ensemble the adversary sees: class covariances inflated by the noise."""
    if noise is None:
        return ensemble
    classes = tuple(
        ClassGaussian(label=c.label, mean=c.mean, covariance=c.covariance + noise.covariance_for(c.label))
        for c in ensemble.classes
    )
    return ClassEnsemble(classes=classes, graph=ensemble.graph)


def noise_spec_to_dict(noise: NoiseSpec) -> dict:
    return {
        "rho": noise.rho,
        "classes": [
            {"label": label, "covariance": noise.covariances[label].tolist()}
            for label in sorted(noise.covariances)
        ],
    }


def noise_spec_from_dict(data: Mapping) -> NoiseSpec:
    try:
        budget = AccuracyBudget(float(data["rho"]))
        covs = {str(c["label"]): np.array(c["covariance"], dtype=float) for c in data["classes"]}
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed noise spec document: {exc}") from exc
    return NoiseSpec.create(budget, covs)


def save_noise_spec(noise: NoiseSpec, path) -> None:
    Path(path).write_text(json.dumps(noise_spec_to_dict(noise), indent=2) + "\n")


def load_noise_spec(path) -> NoiseSpec:
    return noise_spec_from_dict(json.loads(Path(path).read_text()))


def trace_to_csv(trace: DescentTrace, path) -> None:
    """Descent trace export: one row per accepted step."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "pair", "J", "alpha"])
        for step in trace.steps:
            writer.writerow(
                [step.t, f"{step.pair[0]}->{step.pair[1]}", format(step.cost, ".17g"), format(step.alpha, ".17g")]
            )

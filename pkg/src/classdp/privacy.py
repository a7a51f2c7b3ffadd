"""Privacy-loss analysis for class-conditional Gaussian query releases.

The secret is the class label.  For an adjacent ordered pair (X, X') the
privacy loss of a released query value q is the log-likelihood ratio

    L(q) = ln f(q | X) - ln f(q | X'),

and a release is (eps, delta) private when Pr[L > eps] <= delta under
q ~ f(. | X) for every adjacent ordered pair.  Because the neighborhood
graph is undirected, both orientations of each edge are always evaluated.

For Gaussian classes L(q) expands to

    L(q) = 1/2 ln|S'| - 1/2 ln|S|
         + 1/2 (q - m)^T (S'^-1 - S^-1) (q - m)
         + (m - m')^T S'^-1 (q - m)
         + 1/2 (m' - m)^T S'^-1 (m' - m),

with (m, S) the first class and (m', S') the second.  Whitening with
W = S^(-1/2) and the eigendecomposition U diag(g) U^T = S^(1/2) S'^-1 S^(1/2)
turn L into a diagonal quadratic in xi = U^T W (q - m) ~ N(0, I):

    L(xi) = -1/2 sum ln g_i + 1/2 xi^T (G - I) xi - u^T G xi + 1/2 u^T G u,

with G = diag(g) and u = U^T W (m' - m).  Everything in this module is
built on that diagonal form.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .ensemble import (
    ClassEnsemble,
    ClassGaussian,
    gaussian_tail_q,
    inv_matrix_sqrt_sym,
    matrix_sqrt_sym,
    require_valid_ensemble,
    sym_eigh,
    sym_inv_pd,
    sym_logdet_pd,
)
from .rng import derive_seed, substream

DEFAULT_MC_SAMPLES = 100_000
MIN_MC_SAMPLES = 1_000

# Golden-section bracket for the automatic Chernoff parameter: s lives in
# (s_min + SEARCH_LO, s_min + SEARCH_HI) and the search runs on ln(s - s_min).
_SEARCH_LO = 1e-6
_SEARCH_HI = 1e3


@dataclass(frozen=True, eq=False)
class PairGeometry:
    """Whitened geometry of one ordered class pair.

    eigvecs columns are the orthonormal eigenvectors U, eigvals are the
    strictly positive eigenvalues in descending order, and mean_offset is
    the whitened, rotated mean difference u = U^T S^(-1/2) (m' - m).
    """

    eigvecs: np.ndarray
    eigvals: np.ndarray
    mean_offset: np.ndarray

    @property
    def dim(self) -> int:
        return self.eigvals.size

    @property
    def gamma_max(self) -> float:
        return float(self.eigvals[0])


def pair_geometry(first: ClassGaussian, second: ClassGaussian) -> PairGeometry:
    """Whitened eigen-geometry of the ordered pair (first, second).

    Diagonalizes S^(1/2) S'^-1 S^(1/2) with eigenvalues sorted descending.
    Raises when dimensions differ or either covariance is not strictly PD.
    """
    if first.dim != second.dim:
        raise ValueError(f"dimension mismatch: {first.dim} vs {second.dim}")
    root = matrix_sqrt_sym(first.covariance)
    second_prec = sym_inv_pd(second.covariance)
    m = root @ second_prec @ root
    w, v = sym_eigh((m + m.T) / 2.0)
    order = np.argsort(w)[::-1]
    w = w[order]
    v = v[:, order]
    if w[-1] <= 0.0:
        raise ValueError("pair geometry is not positive definite; check the covariances")
    inv_root = inv_matrix_sqrt_sym(first.covariance)
    offset = v.T @ (inv_root @ (second.mean - first.mean))
    return PairGeometry(eigvecs=v, eigvals=w, mean_offset=offset)


def _loss_terms(first: ClassGaussian, second: ClassGaussian):
    prec_first = sym_inv_pd(first.covariance)
    prec_second = sym_inv_pd(second.covariance)
    logdet_gap = 0.5 * (sym_logdet_pd(second.covariance) - sym_logdet_pd(first.covariance))
    diff = second.mean - first.mean
    lin = -prec_second @ diff          # coefficient on (q - m)
    const = 0.5 * float(diff @ prec_second @ diff)
    quad = 0.5 * (prec_second - prec_first)
    return quad, lin, logdet_gap + const


def privacy_loss(q, first: ClassGaussian, second: ClassGaussian):
    """Log-likelihood ratio L(q) = ln f(q|first) - ln f(q|second).

    Accepts one query vector of shape (k,) or a batch of shape (n, k);
    returns a float or an (n,) array accordingly.
    """
    arr = np.asarray(q, dtype=float)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != first.dim:
        raise ValueError(f"query must have dimension {first.dim}, got shape {np.shape(q)}")
    quad, lin, const = _loss_terms(first, second)
    centered = arr - first.mean
    vals = np.einsum("ni,ij,nj->n", centered, quad, centered) + centered @ lin + const
    return float(vals[0]) if single else vals


def whitened_loss(geometry: PairGeometry, xi):
    """The diagonal-form loss L(xi) for whitened coordinates xi ~ N(0, I).

    xi may be a single (k,) vector or an (n, k) batch.
    """
    arr = np.asarray(xi, dtype=float)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    g = geometry.eigvals
    u = geometry.mean_offset
    vals = (
        -0.5 * np.sum(np.log(g))
        + 0.5 * np.sum(arr * arr * (g - 1.0), axis=1)
        - arr @ (g * u)
        + 0.5 * float(u @ (g * u))
    )
    return float(vals[0]) if single else vals


def delta_exact_equal_cov(offset_norm: float, epsilon: float) -> float:
    """Exact Pr[L > eps] when both classes share one covariance.

    In that case L ~ N(r^2 / 2, r^2) with r the whitened mean-offset norm,
    so Pr[L > eps] = Q((eps - r^2 / 2) / r).  At r = 0 the loss is zero
    almost surely and the value is the indicator Pr[0 > eps].
    """
    if offset_norm < 0.0:
        raise ValueError("offset norm must be nonnegative")
    if offset_norm == 0.0:
        return 1.0 if epsilon < 0.0 else 0.0
    return float(gaussian_tail_q((epsilon - 0.5 * offset_norm**2) / offset_norm))


def _epsilon_grid(epsilons) -> np.ndarray:
    eps = np.asarray(epsilons, dtype=float)
    if eps.ndim != 1 or eps.size == 0:
        raise ValueError("epsilon grid must be a nonempty vector")
    if np.any(np.diff(eps) < 0.0):
        raise ValueError("epsilon grid must be ascending")
    return eps


def _partition_sizes(n: int, partitions: int) -> list[int]:
    base, extra = divmod(n, partitions)
    return [base + (1 if i < extra else 0) for i in range(partitions)]


def delta_monte_carlo(
    first: ClassGaussian,
    second: ClassGaussian,
    epsilons,
    n: int = DEFAULT_MC_SAMPLES,
    seed: int = 0,
    partitions: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    """Monte Carlo estimate of Pr[L > eps] under q ~ f(. | first).

    Returns (deltas, std_errors) over the ascending epsilon grid, with the
    binomial standard error sqrt(d (1 - d) / n).  Sampling uses one
    counter-based substream per partition, so the result is deterministic
    for a fixed (seed, n, partitions) triple regardless of scheduling.
    """
    eps = _epsilon_grid(epsilons)
    if n < MIN_MC_SAMPLES:
        raise ValueError(f"need at least {MIN_MC_SAMPLES} samples, got {n}")
    if partitions < 1 or partitions > n:
        raise ValueError("partitions must be in [1, n]")
    quad, lin, const = _loss_terms(first, second)
    root = matrix_sqrt_sym(first.covariance)
    counts = np.zeros(eps.size, dtype=np.int64)
    for part, size in enumerate(_partition_sizes(n, partitions)):
        if size == 0:
            continue
        z = substream(seed, part).standard_normal((size, first.dim))
        centered = z @ root.T
        losses = np.einsum("ni,ij,nj->n", centered, quad, centered) + centered @ lin + const
        counts += (losses[:, None] > eps[None, :]).sum(axis=0)
    deltas = counts / float(n)
    std_errors = np.sqrt(deltas * (1.0 - deltas) / float(n))
    return deltas, std_errors


def chernoff_delta_bound(geometry: PairGeometry, epsilon: float, s="auto") -> float:
    """Chernoff upper bound on Pr[L > eps] from the pair geometry.

    For a tilt parameter s > max(1, gamma_max) the bound is

        (s-1)^(k/2) / (|G|^(1 / (2(s-1))) |sI - G|^(1/2))
        * exp(-eps / (s-1) + s / (2(s-1)) * u^T (sI - G)^-1 G u),

    clipped at 1.  With s="auto" the parameter is chosen by golden-section
    search on a log-spaced bracket above max(1, gamma_max).
    """
    g = geometry.eigvals
    u = geometry.mean_offset
    k = g.size
    s_min = max(1.0, float(g[0]))

    def log_bound(s_val: float) -> float:
        t = s_val - 1.0
        return (
            0.5 * k * np.log(t)
            - np.sum(np.log(g)) / (2.0 * t)
            - 0.5 * np.sum(np.log(s_val - g))
            - epsilon / t
            + s_val / (2.0 * t) * float(np.sum(g * u * u / (s_val - g)))
        )

    if isinstance(s, str):
        if s != "auto":
            raise ValueError(f"s must be a number or 'auto', got {s!r}")
        # Golden-section on x = ln(s - s_min); the bracket spans (1e-6, 1e3).
        inv_phi = (np.sqrt(5.0) - 1.0) / 2.0
        lo, hi = np.log(_SEARCH_LO), np.log(_SEARCH_HI)
        x1 = hi - inv_phi * (hi - lo)
        x2 = lo + inv_phi * (hi - lo)
        f1 = log_bound(s_min + np.exp(x1))
        f2 = log_bound(s_min + np.exp(x2))
        while hi - lo > 1e-10:
            if f1 <= f2:
                hi, x2, f2 = x2, x1, f1
                x1 = hi - inv_phi * (hi - lo)
                f1 = log_bound(s_min + np.exp(x1))
            else:
                lo, x1, f1 = x1, x2, f2
                x2 = lo + inv_phi * (hi - lo)
                f2 = log_bound(s_min + np.exp(x2))
        best = min(f1, f2)
    else:
        s_val = float(s)
        if s_val <= s_min:
            raise ValueError(f"s must exceed max(1, gamma_max) = {s_min:.6g}, got {s_val:.6g}")
        best = log_bound(s_val)
    return float(min(1.0, np.exp(best)))


def _released_classes(ensemble: ClassEnsemble, noise) -> dict[str, ClassGaussian]:
    """Map labels to released distributions: covariance inflated by the noise, if any."""
    if noise is None:
        return ensemble.by_label()
    out = {}
    for c in ensemble.classes:
        cov = noise.covariance_for(c.label)
        if cov.shape != c.covariance.shape:
            raise ValueError(f"noise covariance for class {c.label!r} has shape {cov.shape}, expected {c.covariance.shape}")
        out[c.label] = ClassGaussian(label=c.label, mean=c.mean, covariance=c.covariance + cov)
    return out


def gaussian_sensitivity(ensemble: ClassEnsemble, noise=None) -> tuple[float, tuple[str, str]]:
    """Worst-case expected privacy loss sup over adjacent ordered pairs.

    For each ordered pair the expectation of L under the first class is
    1/2 u^T G u - 1/2 ln|G| in the released geometry.  Returns the supremum
    and the pair attaining it (lexicographically first on ties).
    """
    require_valid_ensemble(ensemble)
    pairs = ensemble.graph.ordered_pairs()
    if not pairs:
        raise ValueError("ensemble graph has no edges")
    released = _released_classes(ensemble, noise)
    best_val, best_pair = -np.inf, None
    for a, b in pairs:
        geom = pair_geometry(released[a], released[b])
        g, u = geom.eigvals, geom.mean_offset
        val = 0.5 * float(u @ (g * u)) - 0.5 * float(np.sum(np.log(g)))
        if val > best_val:
            best_val, best_pair = val, (a, b)
    return float(best_val), best_pair


@dataclass(frozen=True, eq=False)
class PrivacyCurve:
    """A delta(eps) curve: the pointwise max over adjacent ordered pairs.

    per_edge_deltas maps each ordered pair to its own delta vector;
    std_errors carries the binomial standard error of the pair attaining
    the max at each grid point.
    """

    epsilons: np.ndarray
    deltas: np.ndarray
    std_errors: np.ndarray
    per_edge_deltas: Mapping[tuple[str, str], np.ndarray]
    mc_samples: int
    seed: int
    partitions: int = 1


def epsilon_delta_curve(
    ensemble: ClassEnsemble,
    noise=None,
    epsilons=None,
    n: int = DEFAULT_MC_SAMPLES,
    seed: int = 0,
    partitions: int = 1,
) -> PrivacyCurve:
    """Monte Carlo delta(eps) curve of the released ensemble.

    noise=None releases the query untouched; otherwise each class covariance
    is inflated by its noise covariance.  Per-pair sampling streams are
    derived from the root seed by the pair's lexicographic index.
    """
    require_valid_ensemble(ensemble)
    eps = _epsilon_grid(epsilons if epsilons is not None else np.linspace(0.1, 1.0, 20))
    pairs = ensemble.graph.ordered_pairs()
    if not pairs:
        raise ValueError("ensemble graph has no edges")
    released = _released_classes(ensemble, noise)
    per_edge: dict[tuple[str, str], np.ndarray] = {}
    per_edge_se: list[np.ndarray] = []
    for idx, (a, b) in enumerate(pairs):
        d, se = delta_monte_carlo(
            released[a], released[b], eps, n=n, seed=derive_seed(seed, 1, idx), partitions=partitions
        )
        per_edge[(a, b)] = d
        per_edge_se.append(se)
    stacked = np.stack([per_edge[p] for p in pairs])
    se_stack = np.stack(per_edge_se)
    argmax = np.argmax(stacked, axis=0)
    deltas = stacked[argmax, np.arange(eps.size)]
    std_errors = se_stack[argmax, np.arange(eps.size)]
    return PrivacyCurve(
        epsilons=eps,
        deltas=deltas,
        std_errors=std_errors,
        per_edge_deltas=per_edge,
        mc_samples=n,
        seed=seed,
        partitions=partitions,
    )


def curve_to_csv(curve: PrivacyCurve, path) -> None:
    """Canonical curve export: epsilon,delta,std_err plus one column per ordered pair."""
    pairs = sorted(curve.per_edge_deltas)
    header = ["epsilon", "delta", "std_err"] + [f"delta_{a}_{b}" for a, b in pairs]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(curve.epsilons.size):
            row = [curve.epsilons[i], curve.deltas[i], curve.std_errors[i]]
            row += [curve.per_edge_deltas[p][i] for p in pairs]
            writer.writerow([format(x, ".17g") for x in row])

"""Class-conditional Gaussian ensembles and the shared symmetric-matrix numerics.

An ensemble couples one Gaussian distribution per class label with an
undirected neighborhood graph over those labels.  Every pair of adjacent
labels is a pair the released query must not distinguish; all privacy and
noise-design machinery in the sibling modules consumes this structure.

All matrix routines here go through one symmetric eigendecomposition
primitive so that square roots, inverses, log-determinants and PSD
projections share a single tolerance policy.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import ndtr

# Relative tolerances shared across the package.
SYMMETRY_RTOL = 1e-12     # max|M - M^T| vs max|M|
PD_RTOL = 1e-12           # min eigenvalue vs max eigenvalue for "strictly PD"
EIG_CLAMP_RTOL = 1e-12    # negative eigenvalues within this of lambda_max clamp to 0


class EnsembleValidationError(ValueError):
    """Raised when an operation requires a valid ensemble and gets violations."""


def _as_float_array(x, name: str) -> np.ndarray:
    arr = np.array(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def _require_symmetric(m: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Check symmetry to SYMMETRY_RTOL and return the symmetrized matrix."""
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be square, got shape {m.shape}")
    scale = np.max(np.abs(m)) if m.size else 0.0
    gap = np.max(np.abs(m - m.T)) if m.size else 0.0
    if gap > SYMMETRY_RTOL * max(scale, 1.0):
        raise ValueError(f"{name} is not symmetric (max asymmetry {gap:.3e})")
    return (m + m.T) / 2.0


def sym_eigh(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric eigendecomposition, eigenvalues ascending.

    The single primitive behind every matrix function in this package.
    Raises on non-symmetric input.
    """
    s = _require_symmetric(np.asarray(m, dtype=float))
    return np.linalg.eigh(s)


def matrix_sqrt_sym(m: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root S with S @ S = M.

    Eigenvalues within EIG_CLAMP_RTOL * max|eig| below zero are clamped to
    zero; anything more negative is an error rather than silently projected.
    """
    w, v = sym_eigh(m)
    scale = np.max(np.abs(w)) if w.size else 0.0
    floor = -EIG_CLAMP_RTOL * max(scale, 1.0)
    if np.any(w < floor):
        raise ValueError(f"matrix has eigenvalue {w.min():.3e} below the PSD clamp threshold")
    w = np.clip(w, 0.0, None)
    s = (v * np.sqrt(w)) @ v.T
    return (s + s.T) / 2.0


def psd_project(m: np.ndarray) -> np.ndarray:
    """Project a symmetric matrix onto the PSD cone (negative eigenvalues to zero)."""
    w, v = sym_eigh(m)
    p = (v * np.clip(w, 0.0, None)) @ v.T
    return (p + p.T) / 2.0


def _require_pd_eigs(w: np.ndarray, name: str) -> None:
    top = np.max(w) if w.size else 0.0
    if top <= 0.0 or np.min(w) <= PD_RTOL * top:
        raise ValueError(f"{name} is not strictly positive definite (eigenvalues in [{w.min():.3e}, {top:.3e}])")


def sym_inv_pd(m: np.ndarray) -> np.ndarray:
    """Inverse of a strictly PD symmetric matrix."""
    w, v = sym_eigh(m)
    _require_pd_eigs(w, "matrix")
    inv = (v / w) @ v.T
    return (inv + inv.T) / 2.0


def inv_matrix_sqrt_sym(m: np.ndarray) -> np.ndarray:
    """M^(-1/2) for strictly PD symmetric M."""
    w, v = sym_eigh(m)
    _require_pd_eigs(w, "matrix")
    s = (v / np.sqrt(w)) @ v.T
    return (s + s.T) / 2.0


def sym_logdet_pd(m: np.ndarray) -> float:
    """log det of a strictly PD symmetric matrix."""
    w, _ = sym_eigh(m)
    _require_pd_eigs(w, "matrix")
    return float(np.sum(np.log(w)))


def gaussian_tail_q(v) -> np.ndarray | float:
    """Standard normal upper-tail probability Q(v) = Pr(Z > v), Z ~ N(0,1).

    Vectorized; Q(-inf) = 1, Q(inf) = 0.
    """
    return ndtr(-np.asarray(v, dtype=float))[()]


@dataclass(frozen=True, eq=False)
class ClassGaussian:
    """One class-conditional Gaussian: a label, a mean vector and a covariance.

    Construction enforces shape consistency only; numeric requirements
    (symmetry tolerance, strict positive definiteness) are checked by
    validate_ensemble and by the operations that need them.
    """

    label: str
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = _as_float_array(self.mean, f"mean of class {self.label!r}")
        cov = _as_float_array(self.covariance, f"covariance of class {self.label!r}")
        if mean.ndim != 1:
            raise ValueError(f"mean of class {self.label!r} must be a vector, got shape {mean.shape}")
        if cov.ndim != 2 or cov.shape != (mean.size, mean.size):
            raise ValueError(
                f"covariance of class {self.label!r} must be {mean.size}x{mean.size}, got shape {cov.shape}"
            )
        object.__setattr__(self, "mean", _frozen(mean))
        object.__setattr__(self, "covariance", _frozen(cov))

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass(frozen=True, eq=False)
class NeighborhoodGraph:
    """Undirected graph over class labels; edges are the indistinguishable pairs.

    Edges are stored as sorted label pairs (undirectedness is structural).
    Dangling edges and self-loops survive construction so that
    validate_ensemble can report them.
    """

    labels: tuple[str, ...]
    edges: tuple[tuple[str, str], ...]

    @classmethod
    def from_edges(cls, labels: Iterable[str], edges: Iterable[Sequence[str]]) -> "NeighborhoodGraph":
        lab = tuple(sorted(set(str(x) for x in labels)))
        norm = set()
        for e in edges:
            a, b = str(e[0]), str(e[1])
            norm.add((a, b) if a <= b else (b, a))
        return cls(labels=lab, edges=tuple(sorted(norm)))

    @classmethod
    def complete(cls, labels: Iterable[str]) -> "NeighborhoodGraph":
        lab = tuple(sorted(set(str(x) for x in labels)))
        edges = [(a, b) for i, a in enumerate(lab) for b in lab[i + 1:]]
        return cls(labels=lab, edges=tuple(edges))

    def neighbors(self, label: str) -> tuple[str, ...]:
        out = set()
        for a, b in self.edges:
            if a == label and b != label:
                out.add(b)
            elif b == label and a != label:
                out.add(a)
        return tuple(sorted(out))

    def ordered_pairs(self) -> tuple[tuple[str, str], ...]:
        """Both orientations of every proper edge, in lexicographic order."""
        pairs = set()
        for a, b in self.edges:
            if a != b:
                pairs.add((a, b))
                pairs.add((b, a))
        return tuple(sorted(pairs))


@dataclass(frozen=True, eq=False)
class ClassEnsemble:
    """All class-conditional Gaussians plus the neighborhood graph."""

    classes: tuple[ClassGaussian, ...]
    graph: NeighborhoodGraph

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))

    def __getitem__(self, label: str) -> ClassGaussian:
        for c in self.classes:
            if c.label == label:
                return c
        raise KeyError(label)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(sorted(c.label for c in self.classes))

    @property
    def dim(self) -> int:
        if not self.classes:
            raise ValueError("ensemble has no classes")
        return self.classes[0].dim

    def by_label(self) -> dict[str, ClassGaussian]:
        return {c.label: c for c in self.classes}


@dataclass(frozen=True)
class Violation:
    """One structured validation finding."""

    kind: str
    detail: str

    def __str__(self) -> str:
        return f"{self.kind}: {self.detail}"


def validate_ensemble(ensemble: ClassEnsemble) -> list[Violation]:
    """Report-style validation; returns an empty list when the ensemble is sound.

    Checks: duplicate labels, cross-class dimension agreement, covariance
    symmetry (relative 1e-12), strict positive definiteness (min eigenvalue
    above 1e-12 of the max), self-loops, dangling edges, and the one-to-one
    match between graph labels and class labels.
    """
    out: list[Violation] = []
    seen: dict[str, ClassGaussian] = {}
    for c in ensemble.classes:
        if c.label in seen:
            out.append(Violation("duplicate-label", f"class label {c.label!r} appears more than once"))
        seen[c.label] = c

    dims = {c.dim for c in ensemble.classes}
    if len(dims) > 1:
        out.append(Violation("dimension-mismatch", f"classes declare differing dimensions {sorted(dims)}"))

    for c in ensemble.classes:
        cov = c.covariance
        scale = float(np.max(np.abs(cov))) if cov.size else 0.0
        gap = float(np.max(np.abs(cov - cov.T))) if cov.size else 0.0
        if gap > SYMMETRY_RTOL * max(scale, 1.0):
            out.append(Violation("asymmetry", f"covariance of class {c.label!r} asymmetric by {gap:.3e}"))
            continue
        w = np.linalg.eigvalsh((cov + cov.T) / 2.0)
        top = float(np.max(w)) if w.size else 0.0
        if top <= 0.0 or float(np.min(w)) <= PD_RTOL * top:
            out.append(
                Violation(
                    "not-positive-definite",
                    f"covariance of class {c.label!r} has eigenvalue {float(np.min(w)):.3e} (max {top:.3e})",
                )
            )

    graph = ensemble.graph
    label_set = set(seen)
    graph_set = set(graph.labels)
    for a, b in graph.edges:
        if a == b:
            out.append(Violation("self-loop", f"edge ({a!r}, {b!r}) is a self-loop"))
        for end in (a, b):
            if end not in graph_set:
                out.append(Violation("dangling-edge", f"edge endpoint {end!r} is not a graph label"))
    for lab in sorted(graph_set - label_set):
        out.append(Violation("missing-class", f"graph label {lab!r} has no class distribution"))
    for lab in sorted(label_set - graph_set):
        out.append(Violation("unlisted-class", f"class {lab!r} is absent from the graph label set"))
    return out


def require_valid_ensemble(ensemble: ClassEnsemble) -> None:
    violations = validate_ensemble(ensemble)
    if violations:
        summary = "; ".join(str(v) for v in violations[:8])
        raise EnsembleValidationError(f"invalid ensemble: {summary}")


# JSON serialization.  Floats survive a dump/load round trip exactly under
# Python's repr, but consumers are only promised 1e-12 relative agreement.

def ensemble_to_dict(ensemble: ClassEnsemble) -> dict:
    return {
        "classes": [
            {"label": c.label, "mean": c.mean.tolist(), "covariance": c.covariance.tolist()}
            for c in sorted(ensemble.classes, key=lambda c: c.label)
        ],
        "edges": [[a, b] for a, b in ensemble.graph.edges],
    }


def ensemble_from_dict(data: Mapping) -> ClassEnsemble:
    try:
        classes = tuple(
            ClassGaussian(label=str(c["label"]), mean=c["mean"], covariance=c["covariance"])
            for c in data["classes"]
        )
        labels = [c.label for c in classes]
        graph = NeighborhoodGraph.from_edges(labels, data["edges"])
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed ensemble document: {exc}") from exc
    return ClassEnsemble(classes=classes, graph=graph)


def save_ensemble(ensemble: ClassEnsemble, path) -> None:
    Path(path).write_text(json.dumps(ensemble_to_dict(ensemble), indent=2) + "\n")


def load_ensemble(path) -> ClassEnsemble:
    return ensemble_from_dict(json.loads(Path(path).read_text()))

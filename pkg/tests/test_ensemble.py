"""Ensemble containers, symmetric-matrix helpers, validation, and JSON io."""

import numpy as np
import pytest

from classdp import (
    ClassEnsemble,
    ClassGaussian,
    EnsembleValidationError,
    NeighborhoodGraph,
    ensemble_from_dict,
    ensemble_to_dict,
    gaussian_tail_q,
    load_ensemble,
    require_valid_ensemble,
    save_ensemble,
    validate_ensemble,
)
from classdp.ensemble import (
    inv_matrix_sqrt_sym,
    matrix_sqrt_sym,
    psd_project,
    sym_eigh,
    sym_inv_pd,
    sym_logdet_pd,
)
from conftest import random_pd


# ---------------------------------------------------------------- helpers


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
@pytest.mark.parametrize("dim", [1, 2, 5])
def test_sym_eigh_reconstructs(seed, dim):
    m = random_pd(np.random.default_rng(seed), dim)
    w, v = sym_eigh(m)
    assert np.all(np.diff(w) >= 0)
    np.testing.assert_allclose(v @ np.diag(w) @ v.T, m, atol=1e-10)


def test_sym_eigh_rejects_asymmetric():
    m = np.array([[1.0, 0.5], [0.2, 1.0]])
    with pytest.raises(ValueError, match="symmetric"):
        sym_eigh(m)


def test_matrix_sqrt_squares_back(rng):
    m = random_pd(rng, 4)
    r = matrix_sqrt_sym(m)
    np.testing.assert_allclose(r @ r, m, atol=1e-10)
    np.testing.assert_allclose(r, r.T, atol=1e-12)


def test_matrix_sqrt_clamps_roundoff_negatives():
    # an eigenvalue at -1e-14 is numerical noise, not indefiniteness
    m = np.diag([1.0, -1e-14])
    r = matrix_sqrt_sym(m)
    assert r[1, 1] == 0.0


def test_matrix_sqrt_rejects_indefinite():
    with pytest.raises(ValueError):
        matrix_sqrt_sym(np.diag([1.0, -0.5]))


def test_psd_project_clips_negative_eigenvalues(rng):
    m = random_pd(rng, 3) - 2.0 * np.eye(3)
    p = psd_project(m)
    w = np.linalg.eigvalsh(p)
    assert w.min() >= -1e-12
    # projection is the eigenvalue clip, so it fixes PSD inputs exactly
    q = random_pd(rng, 3)
    np.testing.assert_allclose(psd_project(q), q, atol=1e-10)
    np.testing.assert_allclose(psd_project(p), p, atol=1e-10)


def test_inverse_helpers_match_numpy(rng):
    m = random_pd(rng, 4)
    np.testing.assert_allclose(sym_inv_pd(m), np.linalg.inv(m), atol=1e-9)
    s = inv_matrix_sqrt_sym(m)
    np.testing.assert_allclose(s @ m @ s, np.eye(4), atol=1e-9)
    sign, logdet = np.linalg.slogdet(m)
    assert sign > 0
    assert sym_logdet_pd(m) == pytest.approx(logdet, abs=1e-10)


@pytest.mark.parametrize("helper", [sym_inv_pd, inv_matrix_sqrt_sym, sym_logdet_pd])
def test_pd_helpers_reject_singular(helper):
    with pytest.raises(ValueError):
        helper(np.diag([1.0, 0.0]))


def test_gaussian_tail_reference_values():
    # frozen from the complementary error function route
    assert gaussian_tail_q(0.0) == pytest.approx(0.5, abs=1e-15)
    assert gaussian_tail_q(1.0) == pytest.approx(0.15865525393145707, abs=1e-15)
    assert gaussian_tail_q(-1.0) == pytest.approx(0.8413447460685429, abs=1e-15)
    assert gaussian_tail_q(2.5) == pytest.approx(0.006209665325776138, abs=1e-15)
    # stays finite far in the tail instead of underflowing through exp overflow paths
    assert gaussian_tail_q(37.0) == pytest.approx(5.725571222525227e-300, rel=1e-12)
    out = gaussian_tail_q(np.array([0.0, 1.0]))
    assert out.shape == (2,)


# ---------------------------------------------------------------- containers


def test_class_gaussian_shape_checks():
    with pytest.raises(ValueError):
        ClassGaussian(label="a", mean=np.zeros(2), covariance=np.zeros((3, 3)))
    with pytest.raises(ValueError):
        ClassGaussian(label="a", mean=np.zeros((2, 1)), covariance=np.eye(2))
    c = ClassGaussian(label="a", mean=np.zeros(2), covariance=np.eye(2))
    assert c.dim == 2
    with pytest.raises(ValueError):
        c.mean[0] = 1.0


def test_graph_from_edges_normalizes():
    g = NeighborhoodGraph.from_edges(["b", "a", "c"], [("c", "a"), ("a", "c"), ("b", "a")])
    assert g.labels == ("a", "b", "c")
    assert g.edges == (("a", "b"), ("a", "c"))
    assert g.neighbors("a") == ("b", "c")
    assert g.neighbors("c") == ("a",)


def test_complete_graph_edge_count():
    g = NeighborhoodGraph.complete([f"c{i}" for i in range(5)])
    assert len(g.edges) == 10
    ordered = g.ordered_pairs()
    assert len(ordered) == 20
    assert ("c1", "c0") in ordered and ("c0", "c1") in ordered


def test_ensemble_lookup(rng):
    from conftest import random_ensemble

    ens = random_ensemble(rng, 3, 2)
    assert ens.labels == ("c0", "c1", "c2")
    assert ens.dim == 2
    assert ens["c1"].label == "c1"
    with pytest.raises(KeyError):
        ens["nope"]


# ---------------------------------------------------------------- validation


def _two_class(cov_b=None, edges=(("a", "b"),), labels=("a", "b")):
    cov_b = np.eye(2) if cov_b is None else cov_b
    classes = (
        ClassGaussian(label="a", mean=np.zeros(2), covariance=np.eye(2)),
        ClassGaussian(label="b", mean=np.ones(2), covariance=cov_b),
    )
    return ClassEnsemble(classes=classes, graph=NeighborhoodGraph.from_edges(labels, edges))


def test_valid_ensemble_passes():
    ens = _two_class()
    assert validate_ensemble(ens) == []
    require_valid_ensemble(ens)


def test_validation_flags_not_positive_definite():
    ens = _two_class(cov_b=np.diag([1.0, 0.0]))
    kinds = {v.kind for v in validate_ensemble(ens)}
    assert "not-positive-definite" in kinds
    with pytest.raises(EnsembleValidationError):
        require_valid_ensemble(ens)


def test_validation_flags_asymmetry():
    cov = np.array([[1.0, 0.3], [0.1, 1.0]])
    ens = _two_class(cov_b=cov)
    kinds = {v.kind for v in validate_ensemble(ens)}
    assert "asymmetry" in kinds


def test_validation_flags_duplicate_and_dimension():
    classes = (
        ClassGaussian(label="a", mean=np.zeros(2), covariance=np.eye(2)),
        ClassGaussian(label="a", mean=np.zeros(3), covariance=np.eye(3)),
    )
    ens = ClassEnsemble(classes=classes, graph=NeighborhoodGraph.from_edges(["a"], []))
    kinds = {v.kind for v in validate_ensemble(ens)}
    assert "duplicate-label" in kinds
    assert "dimension-mismatch" in kinds


def test_validation_flags_graph_mismatches():
    classes = (
        ClassGaussian(label="a", mean=np.zeros(2), covariance=np.eye(2)),
        ClassGaussian(label="b", mean=np.ones(2), covariance=np.eye(2)),
    )
    graph = NeighborhoodGraph(labels=("a", "c"), edges=(("a", "a"), ("a", "d")))
    ens = ClassEnsemble(classes=classes, graph=graph)
    kinds = {v.kind for v in validate_ensemble(ens)}
    assert {"self-loop", "dangling-edge", "missing-class", "unlisted-class"} <= kinds


# ---------------------------------------------------------------- io


def test_ensemble_json_round_trip(tmp_path, rng):
    from conftest import random_ensemble

    ens = random_ensemble(rng, 3, 2)
    path = tmp_path / "ensemble.json"
    save_ensemble(ens, path)
    back = load_ensemble(path)
    assert back.labels == ens.labels
    assert back.graph.edges == ens.graph.edges
    for label in ens.labels:
        np.testing.assert_array_equal(back[label].mean, ens[label].mean)
        np.testing.assert_array_equal(back[label].covariance, ens[label].covariance)


def test_ensemble_dict_shape():
    ens = _two_class()
    doc = ensemble_to_dict(ens)
    assert set(doc) == {"classes", "edges"}
    assert doc["edges"] == [["a", "b"]]
    again = ensemble_from_dict(doc)
    assert again.labels == ("a", "b")

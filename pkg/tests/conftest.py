"""Shared builders for the test suite.

Random objects are always drawn from an explicitly seeded Generator so
every test is reproducible in isolation.
"""

import numpy as np
import pytest

from classdp import ClassEnsemble, ClassGaussian, NeighborhoodGraph


def random_pd(rng, dim, ridge=0.5):
    """Random symmetric positive definite matrix (Wishart plus a ridge)."""
    g = rng.standard_normal((dim, dim))
    return g @ g.T + ridge * np.eye(dim)


def random_gaussian(rng, label, dim, spread=2.0, ridge=0.5):
    return ClassGaussian(
        label=label,
        mean=spread * rng.standard_normal(dim),
        covariance=random_pd(rng, dim, ridge=ridge),
    )


def random_ensemble(rng, n_classes, dim, spread=2.0, ridge=0.5):
    """Complete-graph ensemble with random means and PD covariances."""
    labels = [f"c{i}" for i in range(n_classes)]
    classes = tuple(random_gaussian(rng, lab, dim, spread=spread, ridge=ridge) for lab in labels)
    return ClassEnsemble(classes=classes, graph=NeighborhoodGraph.complete(labels))


def equal_cov_pair(rng, dim, offset_scale=1.0, ridge=0.5):
    """Two classes sharing one covariance, offset means."""
    cov = random_pd(rng, dim, ridge=ridge)
    mean = rng.standard_normal(dim)
    offset = offset_scale * rng.standard_normal(dim)
    a = ClassGaussian(label="a", mean=mean, covariance=cov)
    b = ClassGaussian(label="b", mean=mean + offset, covariance=cov.copy())
    return a, b


@pytest.fixture
def rng():
    return np.random.default_rng(0)

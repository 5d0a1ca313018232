"""Shared fixtures: small random multi-domain instances and model helpers."""

from __future__ import annotations

import math

import numpy as np
import pytest

from aflearn.data import DomainDataset, FederatedDataset
from aflearn.model import ModelParams


def make_random_instance(
    rng: np.random.Generator,
    p: int | None = None,
    n_classes: int | None = None,
    n_features: int = 2,
    min_m: int = 3,
    max_m: int = 6,
) -> FederatedDataset:
    """A tiny dataset with random features and labels, small enough for the
    exhaustive enumerations used by the variance and unbiasedness checks."""
    p = p if p is not None else int(rng.integers(2, 4))
    n_classes = n_classes if n_classes is not None else int(rng.integers(2, 4))
    domains = []
    for k in range(p):
        m = int(rng.integers(min_m, max_m + 1))
        feats = rng.normal(size=(m, n_features))
        labels = rng.integers(0, n_classes, size=m)
        if len(np.unique(labels)) < 2 and m >= 2:  # avoid fully degenerate domains
            labels[0] = (labels[1] + 1) % n_classes
        domains.append(DomainDataset(k, f"dom{k}", feats, labels))
    return FederatedDataset(tuple(domains), n_classes, n_features)


def random_params(rng: np.random.Generator, dataset: FederatedDataset, r_w: float = 5.0, scale: float = 0.5) -> ModelParams:
    coef = scale * rng.normal(size=(dataset.n_classes, dataset.n_features + 1))
    norm = np.linalg.norm(coef)
    if norm > r_w:
        coef *= r_w / norm
    return ModelParams(coef, r_w)


def binary_prob_params(p1: float, r_w: float = 10.0) -> ModelParams:
    """Parameters that predict (1-p1, p1) on the constant feature x = 1."""
    s = math.log(p1 / (1.0 - p1))
    return ModelParams(np.array([[0.0, 0.0], [s / 2.0, s / 2.0]]), r_w)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20260810)

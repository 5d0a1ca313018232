"""Mixture and worst-case objectives over domain weights.

The adversary's variable is a mixture weight lambda in the probability
simplex, possibly restricted to a finite convex hull. Because the mixture
loss is linear in lambda, the worst case over a hull is always attained at a
vertex, which is what every maximization here exploits.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from aflearn.model import ModelParams, dataset_domain_losses

_SUM_TOL = 1e-9
_NEG_TOL = 1e-12


@dataclass(frozen=True)
class MixtureWeights:
    """A point of the probability simplex; tiny negative entries (>= -1e-12)
    are clamped to 0, anything worse is rejected."""

    weights: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=np.float64).copy()
        if w.ndim != 1 or w.size < 1:
            raise ValueError("mixture weights must be a non-empty 1-D vector")
        if np.any(w < -_NEG_TOL):
            raise ValueError(f"mixture weight below -{_NEG_TOL}: {w.min()}")
        w[w < 0] = 0.0
        if abs(w.sum() - 1.0) > _SUM_TOL:
            raise ValueError(f"mixture weights sum to {w.sum()}, expected 1")
        object.__setattr__(self, "weights", w)
        self.weights.setflags(write=False)

    @classmethod
    def dirac(cls, k: int, p: int) -> "MixtureWeights":
        w = np.zeros(p)
        w[k] = 1.0
        return cls(w)

    @classmethod
    def uniform(cls, p: int) -> "MixtureWeights":
        return cls(np.full(p, 1.0 / p))

    @property
    def p(self) -> int:
        return self.weights.size

    def __len__(self) -> int:
        return self.weights.size


def as_weight_vector(lam) -> np.ndarray:
    """Coerce to a validated simplex vector (ndarray)."""
    if isinstance(lam, MixtureWeights):
        return lam.weights
    return MixtureWeights(np.asarray(lam, dtype=np.float64)).weights


@dataclass(frozen=True)
class FullSimplex:
    """The whole probability simplex over p domains."""

    p: int

    def __post_init__(self) -> None:
        if self.p < 1:
            raise ValueError("p must be >= 1")

    def vertex_array(self) -> np.ndarray:
        """The p Dirac vertices, shape (p, p)."""
        return np.eye(self.p)

    def max_l2(self) -> float:
        """max ||lambda||_2 over the set (attained at any Dirac vertex)."""
        return 1.0


@dataclass(frozen=True)
class FiniteHull:
    """Convex hull of finitely many mixture weights (its vertices).

    Optimization over the hull is run in barycentric coordinates alpha on the
    J-vertex simplex with lambda = vertices.T @ alpha, so every projection is
    a plain simplex projection; all lambda-dependence downstream is linear or
    concave, which makes the reparameterization exact.
    """

    vertices: np.ndarray

    def __post_init__(self) -> None:
        v = np.atleast_2d(np.asarray(self.vertices, dtype=np.float64))
        if v.shape[0] < 1:
            raise ValueError("hull needs at least one vertex")
        v = np.vstack([as_weight_vector(row) for row in v])
        for i in range(v.shape[0]):
            for j in range(i + 1, v.shape[0]):
                if np.array_equal(v[i], v[j]):
                    raise ValueError(f"hull vertices {i} and {j} coincide")
        object.__setattr__(self, "vertices", v)
        self.vertices.setflags(write=False)

    @property
    def p(self) -> int:
        return self.vertices.shape[1]

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    def vertex_array(self) -> np.ndarray:
        return self.vertices

    def lambda_of_alpha(self, alpha: np.ndarray) -> np.ndarray:
        return np.asarray(alpha) @ self.vertices

    def max_l2(self) -> float:
        return float(np.max(np.linalg.norm(self.vertices, axis=1)))


LambdaDomain = Union[FullSimplex, FiniteHull]


@dataclass(frozen=True)
class RegularizedObjectiveConfig:
    """Penalty coefficients of the regularized minimax objective: a norm
    penalty on the model and a chi-squared penalty pulling the adversary
    toward the reference proportions (usually the empirical m_k/m)."""

    norm_penalty: float = 0.0
    chi2_penalty: float = 0.0
    reference: np.ndarray | None = None

    def __post_init__(self) -> None:
        for name in ("norm_penalty", "chi2_penalty"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")


def mixture_loss(params: ModelParams, lam, dataset) -> float:
    """Weighted sum of per-domain mean losses: sum_k lambda_k L_k(w)."""
    weights = as_weight_vector(lam)
    if weights.size != dataset.p:
        raise ValueError(f"lambda has length {weights.size}, dataset has p={dataset.p}")
    return float(weights @ dataset_domain_losses(params, dataset))


def agnostic_loss(params: ModelParams, domain: LambdaDomain, dataset) -> tuple[float, MixtureWeights]:
    """Worst-case mixture loss over a lambda set and its attaining vertex.

    Linearity in lambda puts the maximum at a vertex: the worst single domain
    for the full simplex, the worst listed vertex for a finite hull. Ties go
    to the lowest vertex index.
    """
    if domain.p != dataset.p:
        raise ValueError(f"lambda domain has p={domain.p}, dataset has p={dataset.p}")
    losses = dataset_domain_losses(params, dataset)
    if isinstance(domain, FullSimplex):
        k = int(np.argmax(losses))
        return float(losses[k]), MixtureWeights.dirac(k, domain.p)
    values = domain.vertex_array() @ losses
    j = int(np.argmax(values))
    return float(values[j]), MixtureWeights(domain.vertex_array()[j])


def chi_squared(lam, reference) -> float:
    """Chi-squared divergence sum_k (lambda_k - q_k)^2 / q_k; q must be
    strictly positive entrywise."""
    lam = np.asarray(lam, dtype=np.float64) if not isinstance(lam, MixtureWeights) else lam.weights
    q = np.asarray(reference, dtype=np.float64)
    if lam.shape != q.shape:
        raise ValueError(f"shape mismatch: {lam.shape} vs {q.shape}")
    if np.any(q <= 0):
        raise ValueError("chi-squared divergence undefined: reference has a non-positive entry")
    return float(((lam - q) ** 2 / q).sum())


def skewness(domain: LambdaDomain, proportions) -> float:
    """1 + max over the lambda set of the chi-squared divergence to the
    empirical proportions. Always >= 1; equals 1 iff the set is the single
    point {proportions}.

    Chi-squared is convex in lambda, so the maximum over a convex set sits at
    a vertex; for the full simplex that gives 1 / min_k proportion_k.
    """
    q = np.asarray(proportions, dtype=np.float64)
    if np.any(q <= 0):
        raise ValueError("proportions must be strictly positive")
    if isinstance(domain, FullSimplex):
        if domain.p != q.size:
            raise ValueError("dimension mismatch")
        return float(1.0 / q.min())
    return 1.0 + max(chi_squared(v, q) for v in domain.vertex_array())


def regularized_value(params: ModelParams, lam, cfg: RegularizedObjectiveConfig, dataset) -> float:
    """Mixture loss + norm_penalty * ||w||_2 - chi2_penalty * chi2(lambda, reference).

    Convex in w, concave in lambda; the value both players see in the
    penalized saddle-point formulation.
    """
    reference = dataset.proportions if cfg.reference is None else np.asarray(cfg.reference)
    value = mixture_loss(params, lam, dataset)
    if cfg.norm_penalty:
        value += cfg.norm_penalty * params.norm()
    if cfg.chi2_penalty:
        value -= cfg.chi2_penalty * chi_squared(lam, reference)
    return float(value)

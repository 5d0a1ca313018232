"""Generalization-bound calculators for worst-case mixture learning.

All quantities are driven by the skewness of the lambda set relative to the
empirical domain proportions: how far the adversary may reweight domains away
from how the data was actually collected. The complexity term uses the
VC-dimension route (the user supplies d; the artifact does not compute VC
dimensions), the deviation term pays for a union bound over an l1 cover of
the lambda set, and an optional term charges the l1 distance between the
actual target distribution and the closest lambda mixture.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from math import comb
from typing import Mapping

import numpy as np

from aflearn.objective import FullSimplex, LambdaDomain, chi_squared, skewness


@dataclass(frozen=True)
class BoundInputs:
    """Everything a bound evaluation needs besides the empirical loss.

    `lam` selects the per-mixture variant (skewness evaluated at that single
    lambda); when omitted the worst case over the whole lambda set is used.
    `domain_rademacher` are externally estimated per-domain complexities for
    the union-bound route.
    """

    sizes: np.ndarray  # per-domain sample counts m_k
    lambda_domain: LambdaDomain
    loss_bound: float  # M
    confidence: float  # delta in (0, 1)
    cover_radius: float = 0.0  # epsilon
    vc_dim: int | None = None
    lam: np.ndarray | None = None
    l1_mismatch: float | None = None
    domain_rademacher: np.ndarray | None = None

    def __post_init__(self) -> None:
        sizes = np.asarray(self.sizes, dtype=np.int64)
        if sizes.ndim != 1 or np.any(sizes < 1):
            raise ValueError("sizes must be a 1-D vector of positive counts")
        object.__setattr__(self, "sizes", sizes)
        if not 0.0 < self.confidence < 1.0:
            raise ValueError("confidence must be in (0, 1)")
        if not self.loss_bound > 0:
            raise ValueError("loss_bound must be positive")
        if self.cover_radius < 0:
            raise ValueError("cover_radius must be >= 0")
        if self.vc_dim is not None and self.vc_dim < 1:
            raise ValueError("vc_dim must be >= 1")
        if self.lam is not None:
            object.__setattr__(self, "lam", np.asarray(self.lam, dtype=np.float64))

    @property
    def m(self) -> int:
        return int(self.sizes.sum())

    @property
    def proportions(self) -> np.ndarray:
        return self.sizes / self.sizes.sum()


@dataclass(frozen=True)
class BoundReport:
    """One evaluated bound, split into its additive terms.

    total = empirical_loss + complexity_term + epsilon_term + deviation_term
    + mismatch_term, each term nonnegative; complexity_term already carries
    the factor 2 the bound puts on the complexity measure.
    """

    skewness: float
    cover_size: int
    empirical_loss: float
    complexity_term: float
    epsilon_term: float
    deviation_term: float
    mismatch_term: float
    total: float

    def terms(self) -> Mapping[str, float]:
        return {
            "skewness": self.skewness,
            "cover_size": float(self.cover_size),
            "empirical_loss": self.empirical_loss,
            "complexity_term": self.complexity_term,
            "epsilon_term": self.epsilon_term,
            "deviation_term": self.deviation_term,
            "mismatch_term": self.mismatch_term,
            "total": self.total,
        }


def cover_size(domain: LambdaDomain, epsilon: float, p: int) -> int:
    """Size of an l1 epsilon-cover of the lambda set.

    Finite hulls are covered through their vertices (the worst case over the
    hull is attained there): the full vertex count when epsilon separates
    them, otherwise a greedy first-pass cover.  The full simplex uses the
    lattice of coordinates rounded to multiples of 1/r with r = ceil(2p /
    epsilon): any lambda rounds within l1 error p/r <= epsilon/2, so the
    lattice is a valid cover of size C(r+p-1, p-1) — an upper bound on the
    minimum cover.
    """
    if isinstance(domain, FullSimplex):
        if epsilon <= 0:
            raise ValueError("a finite cover of the full simplex needs epsilon > 0")
        if p != domain.p:
            raise ValueError("p mismatch")
        if p == 1:
            return 1
        r = math.ceil(2 * p / epsilon)
        return comb(r + p - 1, p - 1)
    vertices = domain.vertex_array()
    if len(vertices) == 1:
        return 1
    dists = [
        float(np.abs(vertices[i] - vertices[j]).sum())
        for i in range(len(vertices))
        for j in range(i + 1, len(vertices))
    ]
    if epsilon < min(dists):
        return len(vertices)
    kept: list[np.ndarray] = []
    for v in vertices:
        if all(float(np.abs(v - u).sum()) > epsilon for u in kept):
            kept.append(v)
    return len(kept)


def vc_complexity_bound(vc_dim: int, m: int, skew: float) -> float:
    """Weighted-complexity upper bound sqrt(2 * skew * (d/m) * log(e m / d))
    for a loss family of VC-dimension d; requires m >= d (Sauer regime)."""
    if vc_dim < 1:
        raise ValueError("vc_dim must be >= 1")
    if m < vc_dim:
        raise ValueError(f"m={m} < d={vc_dim}: the Sauer-regime bound needs m >= d")
    if skew < 1.0:
        raise ValueError("skewness is always >= 1")
    return math.sqrt(2.0 * skew * (vc_dim / m) * math.log(math.e * m / vc_dim))


def _skew_of(inputs: BoundInputs) -> float:
    if inputs.lam is not None:
        return 1.0 + chi_squared(inputs.lam, inputs.proportions)
    return skewness(inputs.lambda_domain, inputs.proportions)


def skewness_bound(inputs: BoundInputs, empirical_agnostic_loss: float = 0.0) -> BoundReport:
    """High-probability upper bound on the worst-case mixture risk:

        empirical + 2*complexity + M*epsilon
                  + M*sqrt(skew/(2m) * log(cover/confidence)).

    The complexity measure comes from `vc_complexity_bound` when `vc_dim` is
    given, else 0 (caller supplies complexity out of band). With the lambda
    set fixed to the single point {proportions}, skew = 1 and cover = 1 and
    the deviation term collapses to the familiar single-distribution
    M*sqrt(log(1/delta)/(2m)).
    """
    skew = _skew_of(inputs)
    size = cover_size(inputs.lambda_domain, inputs.cover_radius, inputs.sizes.size)
    complexity = 2.0 * vc_complexity_bound(inputs.vc_dim, inputs.m, skew) if inputs.vc_dim is not None else 0.0
    eps_term = inputs.loss_bound * inputs.cover_radius
    deviation = inputs.loss_bound * math.sqrt(skew / (2.0 * inputs.m) * math.log(size / inputs.confidence))
    total = empirical_agnostic_loss + complexity + eps_term + deviation
    return BoundReport(
        skewness=skew,
        cover_size=size,
        empirical_loss=empirical_agnostic_loss,
        complexity_term=complexity,
        epsilon_term=eps_term,
        deviation_term=deviation,
        mismatch_term=0.0,
        total=total,
    )


def target_shift_bound(inputs: BoundInputs, empirical_agnostic_loss: float = 0.0) -> BoundReport:
    """Skewness bound plus M times the l1 distance between the actual target
    distribution and the closest lambda mixture (covers testing on a
    distribution outside the mixture family)."""
    if inputs.l1_mismatch is None:
        raise ValueError("l1_mismatch must be supplied")
    if not 0.0 <= inputs.l1_mismatch <= 2.0:
        raise ValueError("an l1 distance between distributions lies in [0, 2]")
    base = skewness_bound(inputs, empirical_agnostic_loss)
    mismatch = inputs.loss_bound * inputs.l1_mismatch
    return BoundReport(
        skewness=base.skewness,
        cover_size=base.cover_size,
        empirical_loss=base.empirical_loss,
        complexity_term=base.complexity_term,
        epsilon_term=base.epsilon_term,
        deviation_term=base.deviation_term,
        mismatch_term=mismatch,
        total=base.total + mismatch,
    )


def per_domain_bound(inputs: BoundInputs, empirical_loss: float = 0.0) -> BoundReport:
    """Union-bound alternative for a specific lambda: each domain pays its own
    complexity and deviation, weighted by lambda_k:

        empirical + sum_k (2 lambda_k R_k + lambda_k M sqrt(log(p/delta)/(2 m_k))).

    Needs externally supplied per-domain Rademacher values R_k. Dominated by
    the skewness route up to log factors when sample sizes are unbalanced.
    """
    if inputs.domain_rademacher is None:
        raise ValueError("domain_rademacher values must be supplied")
    if inputs.lam is None:
        raise ValueError("per-domain bound is evaluated at a specific lambda")
    rads = np.asarray(inputs.domain_rademacher, dtype=np.float64)
    lam = inputs.lam
    sizes = inputs.sizes
    p = sizes.size
    if rads.shape != (p,) or lam.shape != (p,):
        raise ValueError("lam and domain_rademacher must have one entry per domain")
    complexity = 2.0 * float((lam * rads).sum())
    log_term = math.log(p / inputs.confidence)
    deviation = float(inputs.loss_bound * (lam * np.sqrt(log_term / (2.0 * sizes))).sum())
    return BoundReport(
        skewness=1.0 + chi_squared(lam, inputs.proportions),
        cover_size=p,
        empirical_loss=empirical_loss,
        complexity_term=complexity,
        epsilon_term=0.0,
        deviation_term=deviation,
        mismatch_term=0.0,
        total=empirical_loss + complexity + deviation,
    )

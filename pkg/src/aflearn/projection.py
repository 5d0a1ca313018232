"""Exact Euclidean projections onto the simplex, a ball, and lambda sets."""

from __future__ import annotations

import numpy as np

from aflearn.objective import FullSimplex, LambdaDomain, MixtureWeights


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex.

    Sort-and-threshold: find tau with sum_i max(v_i - tau, 0) = 1 and return
    max(v - tau, 0). O(p log p), deterministic, and thresholded coordinates
    come out exactly 0.0.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size < 1:
        raise ValueError("expected a non-empty 1-D vector")
    if not np.all(np.isfinite(v)):
        raise ValueError("cannot project a vector containing NaN or infinite entries")
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    j = np.arange(1, v.size + 1)
    positive = np.nonzero(u - (css - 1.0) / j > 0)[0]
    if positive.size == 0:
        # u[0] - (u[0] - 1) = 1 > 0 in exact arithmetic, so this only happens
        # when the entries are so large that the 1 is absorbed; the top
        # coordinate then takes all the mass
        out = np.zeros_like(v)
        out[int(np.argmax(v))] = 1.0
        return out
    rho = int(positive[-1])
    tau = (css[rho] - 1.0) / (rho + 1)
    # A tau at roundoff scale means the input already lies on the simplex up
    # to clamping; snapping it to zero makes the projection exactly idempotent
    # and keeps thresholded coordinates at exactly 0.0.
    eps = np.finfo(np.float64).eps
    if abs(tau) <= 16.0 * eps * v.size * max(1.0, float(np.max(np.abs(v)))):
        tau = 0.0
    return np.maximum(v - tau, 0.0)


def project_ball(w: np.ndarray, radius: float) -> np.ndarray:
    """Projection onto the Euclidean ball of the given radius (any shape;
    Frobenius norm for matrices). Returns the input object unscaled when it
    is already inside."""
    if not radius > 0:
        raise ValueError("radius must be positive")
    w = np.asarray(w, dtype=np.float64)
    norm = float(np.linalg.norm(w))
    if norm <= radius:
        return w
    return w * (radius / norm)


def project_lambda(v: np.ndarray, domain: LambdaDomain) -> MixtureWeights:
    """Projection onto a lambda set, in the set's native coordinates.

    Full simplex: v lives in lambda space. Finite hull: v is a barycentric
    alpha vector (one entry per vertex); the projected alpha is mapped back
    through the vertices. A single-vertex hull therefore always returns that
    vertex.
    """
    v = np.asarray(v, dtype=np.float64)
    if isinstance(domain, FullSimplex):
        if v.size != domain.p:
            raise ValueError(f"vector length {v.size} != p={domain.p}")
        return MixtureWeights(project_simplex(v))
    if v.size != domain.n_vertices:
        raise ValueError(f"alpha length {v.size} != number of hull vertices {domain.n_vertices}")
    alpha = project_simplex(v)
    return MixtureWeights(domain.lambda_of_alpha(alpha))

"""Independent brute-force references used by the test suite.

Nothing here shares code with the production paths it checks: the minimax
oracle grids over prediction space, the projection oracle enumerates KKT
active sets, and gradients are checked by central finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Callable

import numpy as np

from aflearn.model import P_FLOOR, ModelParams, augment
from aflearn.objective import FullSimplex, LambdaDomain


def pointmass_pair_analytics() -> dict[str, float]:
    """Closed-form constants of the two-domain point-mass instance.

    Training against the size-weighted pool drives the class-1 probability to
    3/4, whose worst-domain loss is log(4/sqrt(3)); the minimax optimum sits
    at 1/2 with value log 2. The gap log(2/sqrt(3)) persists at any sample
    size, which is what makes the instance a useful end-to-end check.
    """
    return {
        "uniform_solution_p0": 0.25,
        "uniform_agnostic_loss": math.log(4.0 / math.sqrt(3.0)),
        "minimax_value": math.log(2.0),
        "gap": math.log(2.0 / math.sqrt(3.0)),
    }


# ---------------------------------------------------------------------------
# Grid minimax oracle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridMinimaxResult:
    value: float
    probs: np.ndarray  # prediction distribution attaining the grid minimum
    vertex_index: int  # worst lambda vertex at the optimum
    resolution: float


def _simplex_grid(n_classes: int, resolution: float) -> np.ndarray:
    """All points of Delta_C with coordinates on a grid of the given step."""
    r = max(1, int(round(1.0 / resolution)))
    if n_classes == 2:
        a = np.arange(r + 1) / r
        return np.column_stack([a, 1.0 - a])
    # compositions of r into n_classes parts via stars and bars
    points = []
    for bars in combinations(range(r + n_classes - 1), n_classes - 1):
        prev = -1
        parts = []
        for b in bars:
            parts.append(b - prev - 1)
            prev = b
        parts.append(r + n_classes - 2 - prev)
        points.append(parts)
    return np.asarray(points, dtype=np.float64) / r


def grid_minimax(dataset, resolution: float, lambda_domain: LambdaDomain | None = None) -> GridMinimaxResult:
    """Exhaustive minimax over instances whose examples share one feature vector.

    On such instances every hypothesis is summarized by the single prediction
    distribution q it assigns to that point, so min over models reduces to an
    exhaustive sweep of the prediction simplex; the inner maximum over lambda
    is exact (vertex enumeration). Ties in the inner max go to the lowest
    vertex index.
    """
    x0 = dataset.domains[0].features[0]
    for dom in dataset.domains:
        if not np.all(dom.features == x0):
            raise ValueError("grid oracle requires all examples to share one feature vector")
    n_classes = dataset.n_classes
    n_points = math.comb(max(1, int(round(1.0 / resolution))) + n_classes - 1, n_classes - 1)
    if n_points > 5_000_000:
        raise ValueError(f"dimension too large: {n_points} grid points at resolution {resolution}")
    if lambda_domain is None:
        lambda_domain = FullSimplex(dataset.p)

    # per-domain empirical label frequencies: domain loss of q is -sum_y f_y log q_y
    freqs = np.zeros((dataset.p, n_classes))
    for k, dom in enumerate(dataset.domains):
        counts = np.bincount(dom.labels, minlength=n_classes)
        freqs[k] = counts / dom.m

    grid = _simplex_grid(n_classes, resolution)
    neg_log = -np.log(np.maximum(grid, P_FLOOR))  # (n_points, C)
    domain_losses = neg_log @ freqs.T  # (n_points, p)
    vertex_losses = domain_losses @ lambda_domain.vertex_array().T  # (n_points, J)
    worst = vertex_losses.max(axis=1)
    best = int(np.argmin(worst))
    vertex = int(np.argmax(vertex_losses[best]))
    return GridMinimaxResult(
        value=float(worst[best]),
        probs=grid[best].copy(),
        vertex_index=vertex,
        resolution=resolution,
    )


# ---------------------------------------------------------------------------
# KKT projection oracle
# ---------------------------------------------------------------------------


def qp_projection_oracle(v: np.ndarray) -> np.ndarray:
    """Exact simplex projection by enumerating all 2^p - 1 support sets.

    For support S the candidate is v_i + (1 - sum_S v) / |S| on S and 0 off
    it; the feasible candidate closest to v is the projection. Exponential in
    p, so p <= 6.
    """
    v = np.asarray(v, dtype=np.float64)
    p = v.size
    if p > 6:
        raise ValueError("oracle is exponential in p; use p <= 6")
    best, best_dist = None, np.inf
    for size in range(1, p + 1):
        for support in combinations(range(p), size):
            s = list(support)
            tau = (v[s].sum() - 1.0) / size
            x = np.zeros(p)
            x[s] = v[s] - tau
            if np.any(x[s] < 0):
                continue
            dist = float(((x - v) ** 2).sum())
            if dist < best_dist - 1e-15:
                best, best_dist = x, dist
    return best


# ---------------------------------------------------------------------------
# Finite differences and deterministic best response
# ---------------------------------------------------------------------------


def finite_difference_grad(f: Callable[[np.ndarray], float], w: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of a scalar function of an array."""
    w = np.asarray(w, dtype=np.float64)
    grad = np.zeros_like(w)
    it = np.nditer(w, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        wp, wm = w.copy(), w.copy()
        wp[idx] += step
        wm[idx] -= step
        grad[idx] = (f(wp) - f(wm)) / (2 * step)
        it.iternext()
    return grad


def deterministic_best_response(dataset, lam: np.ndarray, r_w: float, iters: int = 2000) -> tuple[ModelParams, float]:
    """Minimize the fixed-lambda mixture loss by full-batch projected descent
    with Armijo backtracking. Deterministic; used to certify saddle points."""
    lam = np.asarray(lam, dtype=np.float64)
    xas = [augment(dom.features) for dom in dataset.domains]

    def loss_and_grad(coef: np.ndarray) -> tuple[float, np.ndarray]:
        total, grad = 0.0, np.zeros_like(coef)
        for k, dom in enumerate(dataset.domains):
            if lam[k] == 0.0:
                continue
            scores = xas[k] @ coef.T
            shifted = scores - scores.max(axis=1, keepdims=True)
            lse = np.log(np.exp(shifted).sum(axis=1))
            total += lam[k] * float((lse - shifted[np.arange(dom.m), dom.labels]).mean())
            probs = np.exp(shifted - lse[:, None])
            probs[np.arange(dom.m), dom.labels] -= 1.0
            grad += lam[k] * (probs.T @ xas[k]) / dom.m
        return total, grad

    def project(coef: np.ndarray) -> np.ndarray:
        norm = float(np.linalg.norm(coef))
        return coef if norm <= r_w else coef * (r_w / norm)

    coef = np.zeros((dataset.n_classes, dataset.n_features + 1))
    value, grad = loss_and_grad(coef)
    step = 1.0
    for _ in range(iters):
        accepted = False
        while step >= 1e-14:
            trial = project(coef - step * grad)
            move = float(((coef - trial) ** 2).sum())
            trial_value, trial_grad = loss_and_grad(trial)
            if trial_value <= value - 1e-4 / max(step, 1e-14) * move:
                accepted = True
                break
            step *= 0.5
        if not accepted or np.linalg.norm(coef - trial) < 1e-13:
            break
        coef, value, grad = trial, trial_value, trial_grad
        step = min(step * 2.0, 1e6)
    return ModelParams(coef, r_w), float(value)

"""Projected stochastic gradient descent-ascent for the worst-case mixture loss.

Two solvers share one loop: the plain variant descends in the model, ascends
in the mixture weight, projects both, and returns uniform iterate averages;
the optimistic variant adds a lookback correction (double the fresh gradient,
subtract the one from two iterates back) and returns the final iterates.
Baselines (size-weighted and single-domain training) are the same machinery
with the mixture weight frozen at a single point.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from aflearn.model import ModelParams, dataset_domain_grads
from aflearn.objective import (
    FiniteHull,
    FullSimplex,
    LambdaDomain,
    MixtureWeights,
    agnostic_loss,
    mixture_loss,
)
from aflearn.projection import project_ball, project_simplex
from aflearn.sampling import (
    SAMPLERS,
    chi2_penalty_grad,
    estimate_sampler_stats,
    k_weighted_grad,
    keyed_rng,
    lambda_grad_full,
    lambda_grad_stochastic,
    perdomain_grad,
    weighted_grad,
)

_W_PURPOSE, _LAMBDA_PURPOSE, _PILOT_W, _PILOT_LAMBDA = 0, 1, 2, 3


class DivergenceError(RuntimeError):
    """Raised when an iterate or gradient stops being finite."""

    def __init__(self, iteration: int, what: str):
        super().__init__(f"non-finite {what} at iteration {iteration}; reduce the step sizes")
        self.iteration = iteration


@dataclass(frozen=True)
class TrainConfig:
    """Knobs of one optimization run.

    Step sizes may be explicit floats or "auto", which applies the
    1/sqrt(T)-scaled rule gamma = 2R / sqrt(T (sigma^2 + G^2)) with sigma and
    G estimated by a pilot round of sampler draws at the initial point.
    """

    steps: int
    step_w: float | str = "auto"
    step_lambda: float | str = "auto"
    sampler: str = "perdomain"
    batch_size: int = 1
    norm_penalty: float = 0.0  # coefficient of ||w||_2 in the objective
    chi2_penalty: float = 0.0  # coefficient of the chi-squared pull toward the proportions
    r_w: float = 10.0
    lambda_domain: LambdaDomain | None = None  # None: full simplex
    seed: int = 0
    pilot_draws: int = 200
    log_interval: int = 0  # 0: about 100 records per run
    update_rule: str = "sgd"  # "adagrad" / "adam" / "momentum" are unverified extras

    def __post_init__(self) -> None:
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        for name in ("step_w", "step_lambda"):
            v = getattr(self, name)
            if isinstance(v, str):
                if v != "auto":
                    raise ValueError(f"{name} must be a positive float or 'auto'")
            elif not v >= 0:
                raise ValueError(f"{name} must be >= 0")
        if self.sampler not in SAMPLERS:
            raise ValueError(f"sampler must be one of {SAMPLERS}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.r_w <= 0:
            raise ValueError("r_w must be positive")
        if self.pilot_draws < 2:
            raise ValueError("pilot_draws must be >= 2")
        if self.update_rule not in ("sgd", "adagrad", "adam", "momentum"):
            raise ValueError(f"unknown update_rule {self.update_rule!r}")


@dataclass(frozen=True)
class TrajectoryRecord:
    t: int
    mixture_loss: float
    agnostic_loss: float
    lam: tuple[float, ...]
    grad_norm_w: float
    grad_norm_lambda: float


@dataclass(frozen=True)
class TrainResult:
    """Averaged and final iterates plus the recorded trajectory.

    The plain solver's contract output is the average pair; the optimistic
    solver's is the final pair. Both are always populated.
    """

    w_avg: ModelParams
    lambda_avg: MixtureWeights
    w_final: ModelParams
    lambda_final: MixtureWeights
    trajectory: tuple[TrajectoryRecord, ...]
    step_w: float
    step_lambda: float
    wall_clock_sec: float
    pilot: dict | None = None


# ---------------------------------------------------------------------------
# Core loop
# ---------------------------------------------------------------------------


def run_saddle_loop(
    w0: np.ndarray,
    lam0: np.ndarray,
    grad_fn: Callable[[int, np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]],
    project_w: Callable[[np.ndarray], np.ndarray],
    project_lam: Callable[[np.ndarray], np.ndarray],
    steps: int,
    step_w: float,
    step_lam: float,
    optimistic: bool = False,
    w_update: Callable[[np.ndarray, np.ndarray, float], np.ndarray] | None = None,
    on_iterate: Callable[[int, np.ndarray, np.ndarray, float, float], None] | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Generic projected descent (w) / ascent (lambda) on stochastic gradients.

    Returns (w_avg, lam_avg, w_final, lam_final) where the averages are the
    uniform means of the post-projection iterates w_1..w_T. The optimistic
    variant combines the fresh gradient at (w_{t-1}, lam_{t-1}) with the one
    drawn two iterates back: step along 2*fresh - previous (the first step
    has no history and reuses the fresh draw, i.e. a plain step).
    """
    w, lam = np.asarray(w0, dtype=np.float64), np.asarray(lam0, dtype=np.float64)
    w_sum, lam_sum = np.zeros_like(w), np.zeros_like(lam)
    prev_gw, prev_gl = None, None
    for t in range(1, steps + 1):
        gw, gl = grad_fn(t, w, lam)
        if not (np.all(np.isfinite(gw)) and np.all(np.isfinite(gl))):
            raise DivergenceError(t, "gradient")
        if optimistic:
            if prev_gw is None:
                prev_gw, prev_gl = gw, gl
            dw = 2.0 * gw - prev_gw
            dl = 2.0 * gl - prev_gl
            prev_gw, prev_gl = gw, gl
        else:
            dw, dl = gw, gl
        with np.errstate(over="ignore", invalid="ignore"):  # overflow is caught below
            w_step = w - step_w * dw if w_update is None else w_update(w, dw, step_w)
            lam_step = lam + step_lam * dl
        if not (np.all(np.isfinite(w_step)) and np.all(np.isfinite(lam_step))):
            raise DivergenceError(t, "iterate")
        w = project_w(w_step)
        lam = project_lam(lam_step)
        w_sum += w
        lam_sum += lam
        if on_iterate is not None:
            on_iterate(t, w, lam, float(np.linalg.norm(gw)), float(np.linalg.norm(gl)))
    return w_sum / steps, lam_sum / steps, w, lam


def _make_w_update(rule: str) -> Callable[[np.ndarray, np.ndarray, float], np.ndarray] | None:
    """Optional adaptive update rules for the w player. Unverified extras:
    the convergence statement and the acceptance suite bind only to "sgd"."""
    if rule == "sgd":
        return None
    state: dict[str, np.ndarray | int] = {}
    eps = 1e-8
    if rule == "adagrad":

        def update(w, g, step):
            acc = state.setdefault("acc", np.zeros_like(w))
            acc += g * g
            return w - step * g / np.sqrt(acc + eps)

    elif rule == "momentum":

        def update(w, g, step):
            vel = state.setdefault("vel", np.zeros_like(w))
            vel *= 0.9
            vel += g
            return w - step * vel

    else:  # adam

        def update(w, g, step):
            m = state.setdefault("m", np.zeros_like(w))
            v = state.setdefault("v", np.zeros_like(w))
            state["t"] = int(state.get("t", 0)) + 1
            t = state["t"]
            m *= 0.9
            m += 0.1 * g
            v *= 0.999
            v += 0.001 * g * g
            mhat = m / (1.0 - 0.9**t)
            vhat = v / (1.0 - 0.999**t)
            return w - step * mhat / (np.sqrt(vhat) + eps)

    return update


# ---------------------------------------------------------------------------
# Dataset-bound training
# ---------------------------------------------------------------------------


def _w_sampler_fn(name: str):
    return {"perdomain": perdomain_grad, "weighted": weighted_grad, "kweighted": k_weighted_grad}[name]


def _initial_lambda(domain: LambdaDomain, proportions: np.ndarray) -> np.ndarray:
    """Native-coordinate start: the empirical proportions on the full simplex,
    the uniform barycenter for a hull (whose native variable is alpha)."""
    if isinstance(domain, FullSimplex):
        return proportions.copy()
    return np.full(domain.n_vertices, 1.0 / domain.n_vertices)


def _native_to_lambda(domain: LambdaDomain, native: np.ndarray) -> np.ndarray:
    if isinstance(domain, FullSimplex):
        return native
    return domain.lambda_of_alpha(native)


def _resolve_steps(
    config: TrainConfig, dataset, domain: LambdaDomain, w0: ModelParams, lam0: np.ndarray
) -> tuple[float, float, dict]:
    """Explicit step sizes pass through; "auto" applies the 1/sqrt(T) rule with
    pilot moment estimates at the initial point.

    G is the exact gradient norm at (w_0, lambda_0); sigma^2 the pilot trace
    variance of the configured estimator there. Degenerate all-zero pilots
    fall back to R / sqrt(T) rather than dividing by zero.
    """
    needs_pilot = config.step_w == "auto" or config.step_lambda == "auto"
    pilot: dict = {}
    step_w, step_lam = config.step_w, config.step_lambda
    if needs_pilot:
        lam_vec = _native_to_lambda(domain, lam0)
        stats_w = estimate_sampler_stats(
            config.sampler, w0, lam_vec, dataset, config.pilot_draws, keyed_rng(config.seed, 0, _PILOT_W)
        )
        g_w = float(np.linalg.norm(np.tensordot(lam_vec, dataset_domain_grads(w0, dataset), axes=1)))
        stats_l = estimate_sampler_stats(
            "lambda", w0, lam_vec, dataset, config.pilot_draws, keyed_rng(config.seed, 0, _PILOT_LAMBDA)
        )
        g_l = float(np.linalg.norm(lambda_grad_full(w0, dataset)))
        pilot = {
            "sigma_w": math.sqrt(stats_w.trace_variance),
            "g_w": g_w,
            "sigma_lambda": math.sqrt(stats_l.trace_variance),
            "g_lambda": g_l,
            "draws": config.pilot_draws,
        }
    if step_w == "auto":
        denom = pilot["sigma_w"] ** 2 + pilot["g_w"] ** 2
        step_w = 2.0 * config.r_w / math.sqrt(config.steps * denom) if denom > 1e-20 else config.r_w / math.sqrt(config.steps)
    if step_lam == "auto":
        r_lam = domain.max_l2()
        denom = pilot["sigma_lambda"] ** 2 + pilot["g_lambda"] ** 2
        step_lam = 2.0 * r_lam / math.sqrt(config.steps * denom) if denom > 1e-20 else r_lam / math.sqrt(config.steps)
    return float(step_w), float(step_lam), pilot


def _train(config: TrainConfig, dataset, optimistic: bool) -> TrainResult:
    t_start = time.perf_counter()
    domain = config.lambda_domain if config.lambda_domain is not None else FullSimplex(dataset.p)
    if domain.p != dataset.p:
        raise ValueError(f"lambda domain has p={domain.p}, dataset has p={dataset.p}")
    proportions = dataset.proportions
    w0 = ModelParams.zeros(dataset.n_classes, dataset.n_features, config.r_w)
    lam0 = _initial_lambda(domain, proportions)
    step_w, step_lam, pilot = _resolve_steps(config, dataset, domain, w0, lam0)

    hull = domain.vertex_array() if isinstance(domain, FiniteHull) else None
    lambda_frozen = hull is not None and hull.shape[0] == 1
    sampler = _w_sampler_fn(config.sampler)
    mu = config.chi2_penalty
    gamma = config.norm_penalty

    def grad_fn(t: int, coef: np.ndarray, native: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        params = ModelParams(coef, config.r_w)
        lam_vec = _native_to_lambda(domain, native)
        gw = sampler(
            params,
            lam_vec,
            dataset,
            keyed_rng(config.seed, t, _W_PURPOSE),
            batch_size=config.batch_size,
            rng_tag=f"{config.seed}:{t}:w",
        ).value
        if gamma > 0.0:
            norm = float(np.linalg.norm(coef))
            if norm > 0.0:
                gw = gw + gamma * coef / norm
        if lambda_frozen:
            return gw, np.zeros_like(native)
        gl = lambda_grad_stochastic(
            params,
            dataset,
            keyed_rng(config.seed, t, _LAMBDA_PURPOSE),
            batch_size=config.batch_size,
            rng_tag=f"{config.seed}:{t}:lambda",
        ).value
        if mu > 0.0:
            gl = gl + chi2_penalty_grad(lam_vec, proportions, mu)
        if hull is not None:
            gl = hull @ gl  # chain rule into barycentric coordinates
        return gw, gl

    def project_lam(native: np.ndarray) -> np.ndarray:
        return project_simplex(native)

    def project_w(coef: np.ndarray) -> np.ndarray:
        return project_ball(coef, config.r_w)

    interval = config.log_interval if config.log_interval > 0 else max(1, config.steps // 100)
    records: list[TrajectoryRecord] = []

    def on_iterate(t: int, coef: np.ndarray, native: np.ndarray, gnw: float, gnl: float) -> None:
        if t % interval != 0 and t != config.steps:
            return
        params = ModelParams(coef, config.r_w)
        lam_vec = _native_to_lambda(domain, native)
        agn, _ = agnostic_loss(params, domain, dataset)
        records.append(
            TrajectoryRecord(
                t=t,
                mixture_loss=mixture_loss(params, lam_vec, dataset),
                agnostic_loss=agn,
                lam=tuple(float(v) for v in lam_vec),
                grad_norm_w=gnw,
                grad_norm_lambda=gnl,
            )
        )

    w_avg, lam_avg_native, w_fin, lam_fin_native = run_saddle_loop(
        w0.coefficients,
        lam0,
        grad_fn,
        project_w,
        project_lam,
        config.steps,
        step_w,
        step_lam,
        optimistic=optimistic,
        w_update=_make_w_update(config.update_rule),
        on_iterate=on_iterate,
    )
    return TrainResult(
        w_avg=ModelParams(w_avg, config.r_w),
        lambda_avg=MixtureWeights(_native_to_lambda(domain, lam_avg_native)),
        w_final=ModelParams(w_fin, config.r_w),
        lambda_final=MixtureWeights(_native_to_lambda(domain, lam_fin_native)),
        trajectory=tuple(records),
        step_w=step_w,
        step_lambda=step_lam,
        wall_clock_sec=time.perf_counter() - t_start,
        pilot=pilot or None,
    )


def stochastic_afl(config: TrainConfig, dataset) -> TrainResult:
    """Worst-case mixture training by projected stochastic descent-ascent.

    Each iteration draws unbiased gradient estimates at the previous iterate,
    steps w down and lambda up, and projects both; the solution is the
    uniform average of the iterates (the final pair is also reported).
    """
    return _train(config, dataset, optimistic=False)


def optimistic_afl(config: TrainConfig, dataset) -> TrainResult:
    """Optimistic (lookback) variant: steps use twice the fresh gradient minus
    the one from two iterates back, and the solution is the final iterate
    pair. No convergence-rate statement backs this variant; it is provided
    for its practical stability on saddle problems."""
    return _train(config, dataset, optimistic=True)


def uniform_baseline(config: TrainConfig, dataset) -> TrainResult:
    """Standard training against the size-weighted pool of all domains:
    identical machinery with lambda frozen at the empirical proportions."""
    frozen = FiniteHull(dataset.proportions[None, :])
    return _train(replace(config, lambda_domain=frozen), dataset, optimistic=False)


def single_domain_baseline(config: TrainConfig, dataset, k: int) -> TrainResult:
    """Training on domain k alone: lambda frozen at the k-th Dirac weight."""
    if not 0 <= k < dataset.p:
        raise ValueError(f"domain index {k} out of range for p={dataset.p}")
    frozen = FiniteHull(np.eye(dataset.p)[k][None, :])
    return _train(replace(config, lambda_domain=frozen), dataset, optimistic=False)

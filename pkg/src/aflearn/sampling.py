"""Unbiased stochastic gradient estimators for both players.

Four estimators: the one-hot lambda gradient (uniform domain, uniform
example, scaled by p), and three model-gradient estimators — one example per
domain (PerDomain), one example from a lambda-sampled domain (Weighted), and
the mean of p independent Weighted draws (KWeighted). Each admits an exact
full-enumeration counterpart on small data, which the test suite uses to
check unbiasedness and the variance bounds.

Randomness is counter-based (Philox) and keyed, so any draw is replayable
from (seed, key) and different purposes never share a stream.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from aflearn.model import ModelParams, all_example_grads, dataset_domain_grads, dataset_domain_losses, example_losses
from aflearn.objective import LambdaDomain, as_weight_vector

SAMPLERS = ("perdomain", "weighted", "kweighted")


def keyed_rng(seed: int, *key: int) -> np.random.Generator:
    """A Philox generator keyed directly by (seed, key...).

    Philox is counter-based: distinct (seed, key) pairs give independent
    streams and any stream is replayable from its key alone, with no
    sequential state shared across purposes. At most two key parts, each in
    [0, 2^32), packed into the second Philox key word without collisions.
    """
    if len(key) > 2:
        raise ValueError("at most two key parts")
    packed = 0
    for part in key:
        if not 0 <= part < 2**32:
            raise ValueError("key parts must be in [0, 2**32)")
        packed = (packed << 32) | int(part)
    words = np.empty(2, dtype=np.uint64)
    words[0] = np.uint64(int(seed) & (2**64 - 1))
    words[1] = np.uint64(packed)
    return np.random.Generator(np.random.Philox(key=words))


@dataclass(frozen=True)
class GradientEstimate:
    """A stochastic gradient plus the provenance needed to replay it."""

    value: np.ndarray
    sampler: str
    drawn_indices: tuple[tuple[int, int], ...]  # (domain, example) pairs
    rng_tag: str = ""


@dataclass(frozen=True)
class SamplerStats:
    """Empirical first and second moments of a gradient estimator."""

    mean: np.ndarray
    trace_variance: float
    n_draws: int


def lambda_grad_full(params: ModelParams, dataset) -> np.ndarray:
    """Exact lambda gradient of the mixture loss: the vector of per-domain
    losses (independent of lambda itself)."""
    return dataset_domain_losses(params, dataset)


def _draw_uniform_examples(rng: np.random.Generator, sizes: np.ndarray, domains: np.ndarray) -> np.ndarray:
    """One uniform example index for each entry of `domains`."""
    u = rng.random(domains.size)
    return np.floor(u * sizes[domains]).astype(np.int64)


def _sample_categorical(rng: np.random.Generator, weights: np.ndarray, n: int) -> np.ndarray:
    """Inverse-CDF sampling of n indices from a weight vector; boundary hits
    resolve to the right bin, so the mapping from uniforms is deterministic."""
    if np.any(weights < 0):
        raise ValueError("sampling weights must be nonnegative")
    cum = np.cumsum(weights)
    cum /= cum[-1]
    return np.searchsorted(cum, rng.random(n), side="right").astype(np.int64)


def lambda_grad_stochastic(
    params: ModelParams, dataset, rng: np.random.Generator, batch_size: int = 1, rng_tag: str = ""
) -> GradientEstimate:
    """One-hot estimator of the lambda gradient: draw domain K uniformly,
    an example uniformly inside it, and put p * (that example's loss) in
    coordinate K. Batch draws are averaged."""
    p = dataset.p
    sizes = dataset.sizes
    ks = rng.integers(0, p, size=batch_size)
    js = _draw_uniform_examples(rng, sizes, ks)
    value = np.zeros(p)
    for k in range(p):
        mask = ks == k
        if not np.any(mask):
            continue
        dom = dataset.domains[k]
        rows = js[mask]
        # same floor/snap as the domain losses, so the estimator stays unbiased
        # for what mixture_loss actually averages
        losses = example_losses(params, dom.features[rows], dom.labels[rows])
        value[k] = p * losses.sum()
    indices = tuple((int(k), int(j)) for k, j in zip(ks, js))
    return GradientEstimate(value / batch_size, "lambda", indices, rng_tag)


def _summed_example_grads(params: ModelParams, features: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Sum of softmax cross-entropy gradients over the given rows."""
    scores = features @ params.coefficients[:, :-1].T + params.coefficients[:, -1]
    shifted = scores - scores.max(axis=1, keepdims=True)
    probs = np.exp(shifted)
    probs /= probs.sum(axis=1, keepdims=True)
    probs[np.arange(len(labels)), labels] -= 1.0
    grad = np.empty_like(params.coefficients)
    grad[:, :-1] = probs.T @ features
    grad[:, -1] = probs.sum(axis=0)
    return grad


def perdomain_grad(
    params: ModelParams, lam, dataset, rng: np.random.Generator, batch_size: int = 1, rng_tag: str = ""
) -> GradientEstimate:
    """Model-gradient estimator drawing one uniform example per domain and
    weighting the per-example gradients by lambda. Draw order is
    domain-major: all of domain 0's batch indices, then domain 1's, etc."""
    weights = as_weight_vector(lam) if not isinstance(lam, np.ndarray) else lam
    if weights.size != dataset.p:
        raise ValueError("lambda length mismatch")
    value = np.zeros_like(params.coefficients)
    indices: list[tuple[int, int]] = []
    for k, dom in enumerate(dataset.domains):
        js = np.floor(rng.random(batch_size) * dom.m).astype(np.int64)
        indices.extend((k, int(j)) for j in js)
        if weights[k] != 0.0:
            value += weights[k] * _summed_example_grads(params, dom.features[js], dom.labels[js])
    return GradientEstimate(value / batch_size, "perdomain", tuple(indices), rng_tag)


def weighted_grad(
    params: ModelParams, lam, dataset, rng: np.random.Generator, batch_size: int = 1, rng_tag: str = ""
) -> GradientEstimate:
    """Model-gradient estimator drawing the domain from lambda itself and one
    uniform example inside it; no reweighting of the value, the sampling law
    carries the lambda weighting."""
    weights = as_weight_vector(lam) if not isinstance(lam, np.ndarray) else lam
    if weights.size != dataset.p:
        raise ValueError("lambda length mismatch")
    ks = _sample_categorical(rng, weights, batch_size)
    js = _draw_uniform_examples(rng, dataset.sizes, ks)
    value = np.zeros_like(params.coefficients)
    for k in range(dataset.p):
        mask = ks == k
        if not np.any(mask):
            continue
        dom = dataset.domains[k]
        value += _summed_example_grads(params, dom.features[js[mask]], dom.labels[js[mask]])
    indices = tuple((int(k), int(j)) for k, j in zip(ks, js))
    return GradientEstimate(value / batch_size, "weighted", indices, rng_tag)


def k_weighted_grad(
    params: ModelParams, lam, dataset, rng: np.random.Generator, batch_size: int = 1, rng_tag: str = ""
) -> GradientEstimate:
    """Arithmetic mean of p independent Weighted draws (variance drops by a
    factor of p at p times the per-draw cost)."""
    est = weighted_grad(params, lam, dataset, rng, batch_size=batch_size * dataset.p, rng_tag=rng_tag)
    return GradientEstimate(est.value, "kweighted", est.drawn_indices, rng_tag)


def chi2_penalty_grad(lam, proportions, mu: float) -> np.ndarray:
    """Ascent-direction contribution of the chi-squared penalty: coordinate k
    gets -2 mu lambda_k / proportion_k.

    This drops a constant +2 mu relative to the exact penalty derivative;
    simplex projection is invariant to constant shifts, so the iterates are
    unchanged.
    """
    weights = as_weight_vector(lam)
    q = np.asarray(proportions, dtype=np.float64)
    if np.any(q <= 0):
        raise ValueError("proportions must be strictly positive")
    if mu == 0.0:
        return np.zeros_like(weights)
    return -2.0 * mu * weights / q


def max_squared_lambda_norm(domain: LambdaDomain) -> float:
    """R over the lambda set of the squared l2 norm, attained at a vertex.
    Always >= 1/p."""
    return float(np.max((domain.vertex_array() ** 2).sum(axis=1)))


def intra_domain_variance(params: ModelParams, dataset) -> float:
    """Exact worst-domain spread of example gradients around their domain
    mean at the current model: max_k (1/m_k) sum_j ||g_kj - g_k||^2."""
    worst = 0.0
    for dom in dataset.domains:
        grads = all_example_grads(params, dom)
        mean = grads.mean(axis=0)
        spread = float(((grads - mean) ** 2).sum(axis=(1, 2)).mean())
        worst = max(worst, spread)
    return worst


def outer_domain_variance(params: ModelParams, lam, dataset) -> float:
    """Exact lambda-weighted spread of domain-mean gradients around the full
    mixture gradient at the current (model, lambda)."""
    weights = as_weight_vector(lam)
    domain_grads = dataset_domain_grads(params, dataset)
    mixture = np.tensordot(weights, domain_grads, axes=1)
    return float((weights * ((domain_grads - mixture) ** 2).sum(axis=(1, 2))).sum())


# ---------------------------------------------------------------------------
# Monte-Carlo moments
# ---------------------------------------------------------------------------


def _draws_matrix(sampler: str, params: ModelParams, lam, dataset, n_draws: int, rng: np.random.Generator) -> np.ndarray:
    """n_draws independent estimates as rows, vectorized over draws."""
    weights = None if lam is None else as_weight_vector(lam)
    p = dataset.p
    sizes = dataset.sizes

    if sampler == "full_lambda":
        return np.tile(lambda_grad_full(params, dataset), (n_draws, 1))
    if sampler == "full_w":
        exact = np.tensordot(weights, dataset_domain_grads(params, dataset), axes=1)
        return np.tile(exact.ravel(), (n_draws, 1))

    if sampler == "lambda":
        losses = [  # per-domain per-example losses
            _per_example_losses(params, dom) for dom in dataset.domains
        ]
        ks = rng.integers(0, p, size=n_draws)
        js = _draw_uniform_examples(rng, sizes, ks)
        out = np.zeros((n_draws, p))
        for k in range(p):
            mask = ks == k
            out[mask, k] = p * losses[k][js[mask]]
        return out

    grads = [all_example_grads(params, dom).reshape(dom.m, -1) for dom in dataset.domains]
    dim = grads[0].shape[1]

    def gather(domains: np.ndarray, examples: np.ndarray) -> np.ndarray:
        out = np.zeros((domains.size, dim))
        for k in range(p):
            mask = domains == k
            out[mask] = grads[k][examples[mask]]
        return out

    if sampler == "perdomain":
        out = np.zeros((n_draws, dim))
        for k in range(p):
            if weights[k] == 0.0:
                rng.random(n_draws)  # zero-weight domains still consume randomness
                continue
            js = np.floor(rng.random(n_draws) * sizes[k]).astype(np.int64)
            out += weights[k] * grads[k][js]
        return out
    if sampler == "weighted":
        ks = _sample_categorical(rng, weights, n_draws)
        js = _draw_uniform_examples(rng, sizes, ks)
        return gather(ks, js)
    if sampler == "kweighted":
        ks = _sample_categorical(rng, weights, n_draws * p)
        js = _draw_uniform_examples(rng, sizes, ks)
        return gather(ks, js).reshape(n_draws, p, dim).mean(axis=1)
    raise ValueError(f"unknown sampler {sampler!r}")


def _per_example_losses(params: ModelParams, dom) -> np.ndarray:
    return example_losses(params, dom.features, dom.labels)


def estimate_sampler_stats(
    sampler: str | Callable[[np.random.Generator], np.ndarray],
    params: ModelParams,
    lam,
    dataset,
    n_draws: int,
    rng: np.random.Generator,
) -> SamplerStats:
    """Sample mean and unbiased trace variance of an estimator over n_draws
    independent draws. `sampler` is one of "lambda", "perdomain", "weighted",
    "kweighted", "full_lambda", "full_w", or any callable rng -> vector."""
    if n_draws < 2:
        raise ValueError("need at least two draws for a variance")
    if callable(sampler):
        draws = np.stack([np.asarray(sampler(rng), dtype=np.float64).ravel() for _ in range(n_draws)])
    else:
        draws = _draws_matrix(sampler, params, lam, dataset, n_draws, rng)
    if np.all(draws == draws[0]):
        return SamplerStats(mean=draws[0].copy(), trace_variance=0.0, n_draws=n_draws)
    mean = draws.mean(axis=0)
    trace_var = float(((draws - mean) ** 2).sum(axis=1).sum() / (n_draws - 1))
    return SamplerStats(mean=mean, trace_variance=trace_var, n_draws=n_draws)

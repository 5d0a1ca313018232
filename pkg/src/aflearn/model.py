"""Multiclass affine softmax model: predictions, cross-entropy, exact gradients.

The hypothesis maps x to a probability vector over C classes via
softmax(W @ [x; 1]); the per-example loss is the negative log-probability of
the true class. Composed with the log-sum-exp this is convex in W, which is
what the minimax convergence guarantees of the optimizer rely on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# Probability floor for loss evaluation: -log(P_FLOOR) caps any single loss,
# so the implied global loss bound is LOSS_CAP unless the user supplies a
# tighter one to the bound calculators.
P_FLOOR = 1e-12
LOSS_CAP = -math.log(P_FLOOR)
# losses at or below this are numerically zero (true-class probability within
# 1e-12 of 1) and are snapped to exactly 0.0
_LOSS_SNAP = 1.01e-12


@dataclass(frozen=True)
class ModelParams:
    """Coefficients of shape (C, d+1) — last column is the bias — plus the
    radius of the Euclidean ball the optimizer confines them to."""

    coefficients: np.ndarray
    r_w: float

    def __post_init__(self) -> None:
        coef = np.asarray(self.coefficients, dtype=np.float64)
        if coef.ndim != 2 or coef.shape[1] < 2:
            raise ValueError(f"coefficients must have shape (C, d+1), got {coef.shape}")
        if not self.r_w > 0:
            raise ValueError("r_w must be positive")
        object.__setattr__(self, "coefficients", coef)

    @classmethod
    def zeros(cls, n_classes: int, n_features: int, r_w: float) -> "ModelParams":
        return cls(np.zeros((n_classes, n_features + 1)), r_w)

    @property
    def n_classes(self) -> int:
        return self.coefficients.shape[0]

    @property
    def n_features(self) -> int:
        return self.coefficients.shape[1] - 1

    def norm(self) -> float:
        return float(np.linalg.norm(self.coefficients))


def augment(features: np.ndarray) -> np.ndarray:
    """Append the constant-1 bias feature: (m, d) -> (m, d+1)."""
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    return np.hstack([features, np.ones((features.shape[0], 1))])


def _softmax_rows(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def predict_proba_batch(params: ModelParams, features: np.ndarray) -> np.ndarray:
    """Class probabilities for a batch, shape (m, C); rows sum to 1."""
    features = np.atleast_2d(features)
    if features.shape[1] != params.n_features:
        raise ValueError(f"feature length {features.shape[1]} != model d_feat {params.n_features}")
    return _softmax_rows(augment(features) @ params.coefficients.T)


def predict_proba(params: ModelParams, x: np.ndarray) -> np.ndarray:
    """Class probabilities for one example, shape (C,)."""
    return predict_proba_batch(params, np.asarray(x, dtype=np.float64)[None, :])[0]


def example_losses(params: ModelParams, features: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-example cross-entropy for a batch, floored at -log(P_FLOOR) and
    snapped to 0 when the true-class probability is within 1e-12 of 1."""
    scores = augment(features) @ params.coefficients.T
    shifted = scores - scores.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    raw = lse - shifted[np.arange(len(labels)), labels]
    raw = np.minimum(raw, LOSS_CAP)
    return np.where(raw <= _LOSS_SNAP, 0.0, raw)


def example_loss(params: ModelParams, x: np.ndarray, y: int) -> float:
    """Cross-entropy -log h(x)[y], floored so it is always finite."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.n_features:
        raise ValueError(f"feature length {x.shape[-1]} != model d_feat {params.n_features}")
    return float(example_losses(params, x[None, :], np.array([y]))[0])


def example_grad(params: ModelParams, x: np.ndarray, y: int) -> np.ndarray:
    """Exact gradient of example_loss w.r.t. the coefficients, shape (C, d+1)."""
    x = np.asarray(x, dtype=np.float64)
    probs = predict_proba(params, x)
    err = probs.copy()
    err[y] -= 1.0
    return np.outer(err, augment(x[None, :])[0])


def domain_loss(params: ModelParams, domain) -> float:
    """Mean cross-entropy over one domain's examples."""
    return float(example_losses(params, domain.features, domain.labels).mean())


def domain_grad(params: ModelParams, domain) -> np.ndarray:
    """Mean of example gradients over one domain, shape (C, d+1)."""
    xa = augment(domain.features)
    probs = _softmax_rows(xa @ params.coefficients.T)
    err = probs
    err[np.arange(domain.m), domain.labels] -= 1.0
    return err.T @ xa / domain.m


def all_example_grads(params: ModelParams, domain) -> np.ndarray:
    """Every example gradient of one domain, shape (m, C, d+1).

    Used by the exhaustive variance enumerations and the vectorized sampler
    paths; small domains only.
    """
    xa = augment(domain.features)
    probs = _softmax_rows(xa @ params.coefficients.T)
    err = probs
    err[np.arange(domain.m), domain.labels] -= 1.0
    return err[:, :, None] * xa[:, None, :]


def dataset_domain_losses(params: ModelParams, dataset) -> np.ndarray:
    """Vector of per-domain mean losses, shape (p,)."""
    return np.array([domain_loss(params, dom) for dom in dataset.domains])


def dataset_domain_grads(params: ModelParams, dataset) -> np.ndarray:
    """Stack of per-domain mean gradients, shape (p, C, d+1)."""
    return np.stack([domain_grad(params, dom) for dom in dataset.domains])


# ---------------------------------------------------------------------------
# Serialization: flat little-endian float64 coefficients with an int64 shape
# header, plus a human-readable text sidecar (<path>.meta).
# ---------------------------------------------------------------------------


def save_model(params: ModelParams, path: str | Path, *, config_hash: str = "", seed: int | None = None) -> None:
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(np.array(params.coefficients.shape, dtype="<i8").tobytes())
        fh.write(params.coefficients.astype("<f8").tobytes())
    lines = [
        f"n_classes={params.n_classes}",
        f"d_feat={params.n_features}",
        f"r_w={params.r_w!r}",
    ]
    if config_hash:
        lines.append(f"config_hash={config_hash}")
    if seed is not None:
        lines.append(f"seed={seed}")
    Path(str(path) + ".meta").write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_model(path: str | Path) -> ModelParams:
    path = Path(path)
    blob = path.read_bytes()
    shape = np.frombuffer(blob[:16], dtype="<i8")
    coef = np.frombuffer(blob[16:], dtype="<f8").reshape(int(shape[0]), int(shape[1])).copy()
    meta = {}
    for line in Path(str(path) + ".meta").read_text(encoding="utf-8").splitlines():
        if "=" in line:
            key, _, value = line.partition("=")
            meta[key] = value
    return ModelParams(coef, float(meta["r_w"]))

"""Per-domain metrics, worst-case columns, fairness reports, result tables."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from aflearn.model import ModelParams, domain_loss, predict_proba_batch


@dataclass(frozen=True)
class DomainMetrics:
    """Test metrics of one trained model: per-domain accuracy (percent) and
    mean loss, their weighted aggregate, and the worst domain."""

    domain_names: tuple[str, ...]
    sizes: np.ndarray
    losses: np.ndarray
    accuracies: np.ndarray  # percent
    uniform_accuracy: float  # aggregate weighted by the chosen proportions
    uniform_loss: float
    worst_accuracy: float  # min over domains
    worst_loss: float  # max over domains
    worst_domain: int


@dataclass(frozen=True)
class FairnessReport:
    """Per-protected-class losses of one model; worst = max over classes."""

    class_names: tuple[str, ...]
    class_losses: np.ndarray
    worst_class: int
    worst_loss: float
    gap_to_best: float


def _domain_accuracy(params: ModelParams, domain) -> float:
    """Percent of argmax-correct predictions; argmax ties go to the lowest
    class index."""
    probs = predict_proba_batch(params, domain.features)
    return float((probs.argmax(axis=1) == domain.labels).mean() * 100.0)


def evaluate(params: ModelParams, test, weights: str | np.ndarray = "test") -> DomainMetrics:
    """Per-domain accuracy/loss plus the weighted and worst-case aggregates.

    `weights` picks the aggregate's domain weighting: "test" uses the test
    split's own proportions (default), or pass an explicit proportion vector
    (e.g. the training proportions).
    """
    if isinstance(weights, str):
        if weights != "test":
            raise ValueError("weights must be 'test' or an explicit proportion vector")
        props = test.proportions
    else:
        props = np.asarray(weights, dtype=np.float64)
        if props.shape != (test.p,) or abs(props.sum() - 1.0) > 1e-9:
            raise ValueError("explicit weights must be a proportion vector over the test domains")
    losses = np.array([domain_loss(params, dom) for dom in test.domains])
    accs = np.array([_domain_accuracy(params, dom) for dom in test.domains])
    worst = int(np.argmax(losses))
    return DomainMetrics(
        domain_names=test.domain_names,
        sizes=test.sizes,
        losses=losses,
        accuracies=accs,
        uniform_accuracy=float(props @ accs),
        uniform_loss=float(props @ losses),
        worst_accuracy=float(accs.min()),
        worst_loss=float(losses.max()),
        worst_domain=worst,
    )


def fairness_report(
    params: ModelParams,
    test,
    protected_splitter: Callable[[np.ndarray, int], str] | None = None,
    expected_classes: tuple[str, ...] | None = None,
) -> FairnessReport:
    """Worst-protected-class view of a model.

    With no splitter the existing domains act as the protected classes. A
    splitter maps (features, label) to a class key and regroups all test
    examples accordingly. Declared `expected_classes` that receive no
    examples are excluded with a warning.
    """
    if protected_splitter is None:
        names = list(test.domain_names)
        losses = [domain_loss(params, dom) for dom in test.domains]
    else:
        groups: dict[str, list[tuple[np.ndarray, int]]] = {
            str(key): [] for key in (expected_classes or ())
        }
        for dom in test.domains:
            for i in range(dom.m):
                key = str(protected_splitter(dom.features[i], int(dom.labels[i])))
                groups.setdefault(key, []).append((dom.features[i], int(dom.labels[i])))
        names, losses = [], []
        for key in sorted(groups):
            rows = groups[key]
            if not rows:
                warnings.warn(f"protected class {key!r} has no examples; excluded", stacklevel=2)
                continue
            feats = np.vstack([r[0] for r in rows])
            labels = np.array([r[1] for r in rows])
            probs = predict_proba_batch(params, feats)
            picked = np.maximum(probs[np.arange(len(labels)), labels], 1e-12)
            names.append(key)
            losses.append(float(-np.log(picked).mean()))
    losses = np.asarray(losses)
    worst = int(np.argmax(losses))
    return FairnessReport(
        class_names=tuple(names),
        class_losses=losses,
        worst_class=worst,
        worst_loss=float(losses[worst]),
        gap_to_best=float(losses[worst] - losses.min()),
    )


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------


def aggregate_metrics(runs: Sequence[DomainMetrics]) -> tuple[DomainMetrics, DomainMetrics]:
    """Mean and sample standard deviation across seeds (accuracy fields)."""
    if not runs:
        raise ValueError("no runs to aggregate")
    first = runs[0]
    accs = np.stack([r.accuracies for r in runs])
    losses = np.stack([r.losses for r in runs])
    uni = np.array([r.uniform_accuracy for r in runs])
    worst = np.array([r.worst_accuracy for r in runs])
    ddof = 1 if len(runs) > 1 else 0

    def pack(acc, loss, u, w) -> DomainMetrics:
        return DomainMetrics(
            domain_names=first.domain_names,
            sizes=first.sizes,
            losses=loss,
            accuracies=acc,
            uniform_accuracy=float(u),
            uniform_loss=float(loss.mean()),
            worst_accuracy=float(w),
            worst_loss=float(loss.max()),
            worst_domain=int(np.argmax(loss)),
        )

    mean = pack(accs.mean(axis=0), losses.mean(axis=0), uni.mean(), worst.mean())
    std = pack(accs.std(axis=0, ddof=ddof), losses.std(axis=0, ddof=ddof), uni.std(ddof=ddof), worst.std(ddof=ddof))
    return mean, std


def render_table(
    results: Mapping[str, DomainMetrics | tuple[DomainMetrics, DomainMetrics]],
) -> tuple[str, str]:
    """Render run-by-domain accuracy tables as aligned text and as CSV.

    Rows are runs (insertion order), columns are the weighted aggregate, each
    domain, and the worst domain. Values may be single metrics or
    (mean, std) pairs from `aggregate_metrics`, rendered as "m +- s". The CSV
    rendering is byte-stable for identical inputs.
    """
    if not results:
        raise ValueError("no results to render")
    some = next(iter(results.values()))
    names = (some[0] if isinstance(some, tuple) else some).domain_names
    header = ["training", "U", *names, "worst"]

    def cells(entry) -> list[str]:
        if isinstance(entry, tuple):
            mean, std = entry
            vals = [(mean.uniform_accuracy, std.uniform_accuracy)]
            vals += list(zip(mean.accuracies, std.accuracies))
            vals.append((mean.worst_accuracy, std.worst_accuracy))
            return [f"{m:.2f} +- {s:.2f}" for m, s in vals]
        vals = [entry.uniform_accuracy, *entry.accuracies, entry.worst_accuracy]
        return [f"{v:.2f}" for v in vals]

    rows = [[name, *cells(entry)] for name, entry in results.items()]
    widths = [max(len(header[j]), *(len(r[j]) for r in rows)) for j in range(len(header))]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    text_lines = [fmt.format(*header)] + [fmt.format(*r) for r in rows]
    csv_lines = [",".join(header)] + [",".join(r) for r in rows]
    return "\n".join(text_lines) + "\n", "\n".join(csv_lines) + "\n"

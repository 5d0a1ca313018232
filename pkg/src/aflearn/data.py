"""Multi-domain datasets: CSV ingestion, synthetic generators, splits.

A federated dataset is an ordered collection of labeled per-domain samples
sharing one feature space and one label space. Domains may be clients,
protected groups, or any other partition of the data; all downstream
machinery (losses, samplers, bounds) only sees this container.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np


class SchemaError(ValueError):
    """Raised when a CSV file does not match its declared schema."""


class DataError(ValueError):
    """Raised for structurally invalid dataset contents."""


@dataclass(frozen=True)
class LabeledExample:
    """One observation: a dense feature vector and a class index."""

    features: np.ndarray
    label: int


@dataclass(frozen=True)
class DomainDataset:
    """All examples drawn from a single domain.

    `features` has shape (m, d) and `labels` shape (m,); a domain is never
    empty (m >= 1).
    """

    id: int
    name: str
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        feats = np.asarray(self.features, dtype=np.float64)
        labs = np.asarray(self.labels, dtype=np.int64)
        if feats.ndim != 2:
            raise DataError(f"domain {self.name!r}: features must be 2-D, got {feats.ndim}-D")
        if labs.ndim != 1 or labs.shape[0] != feats.shape[0]:
            raise DataError(f"domain {self.name!r}: labels shape {labs.shape} does not match features")
        if feats.shape[0] < 1:
            raise DataError(f"domain {self.name!r} is empty")
        if np.any(labs < 0):
            raise DataError(f"domain {self.name!r}: negative label")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labs)
        self.features.setflags(write=False)
        self.labels.setflags(write=False)

    @property
    def m(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def examples(self) -> list[LabeledExample]:
        return [LabeledExample(self.features[i], int(self.labels[i])) for i in range(self.m)]


@dataclass(frozen=True)
class FederatedDataset:
    """p >= 1 domains sharing a class count and a feature dimension."""

    domains: tuple[DomainDataset, ...]
    n_classes: int
    n_features: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "domains", tuple(self.domains))
        if len(self.domains) < 1:
            raise DataError("dataset needs at least one domain")
        if self.n_classes < 2:
            raise DataError("need at least two classes")
        for dom in self.domains:
            if dom.n_features != self.n_features:
                raise DataError(f"domain {dom.name!r} has {dom.n_features} features, expected {self.n_features}")
            if int(dom.labels.max(initial=0)) >= self.n_classes:
                raise DataError(f"domain {dom.name!r} contains label >= n_classes={self.n_classes}")

    @property
    def p(self) -> int:
        return len(self.domains)

    @property
    def m(self) -> int:
        return int(self.sizes.sum())

    @property
    def sizes(self) -> np.ndarray:
        return np.array([dom.m for dom in self.domains], dtype=np.int64)

    @property
    def proportions(self) -> np.ndarray:
        """Empirical domain proportions m_k / m (sum to 1)."""
        sizes = self.sizes
        return sizes / sizes.sum()

    @property
    def domain_names(self) -> tuple[str, ...]:
        return tuple(dom.name for dom in self.domains)

    def domain(self, k: int) -> DomainDataset:
        return self.domains[k]


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------


@dataclass
class CsvSchema:
    """Declared structure of a CSV source.

    Feature layout of the encoded matrix: numeric columns in declared order,
    then one one-hot block per categorical column in declared order, each
    block following its vocabulary order (plus a final "unknown" slot when
    `unknown_category="unknown_slot"`). Domains come either from a dedicated
    column (`domain_column`) or from matching one column's value
    (`domain_split`), e.g. splitting on education == "Doctorate".
    """

    numeric_features: Sequence[str] = ()
    categorical_features: Mapping[str, Sequence[str]] = None  # column -> vocabulary
    label_column: str = "label"
    label_values: Sequence[str] | None = None  # None: labels parsed as ints
    domain_column: str | None = None
    domain_split: tuple[str, str, str, str] | None = None  # (column, value, match_name, rest_name)
    delimiter: str = ","
    unknown_category: str = "error"  # or "unknown_slot"

    def __post_init__(self) -> None:
        if self.categorical_features is None:
            self.categorical_features = {}
        if (self.domain_column is None) == (self.domain_split is None):
            raise SchemaError("exactly one of domain_column / domain_split must be set")
        if self.unknown_category not in ("error", "unknown_slot"):
            raise SchemaError(f"unknown_category must be 'error' or 'unknown_slot', got {self.unknown_category!r}")

    @property
    def encoded_width(self) -> int:
        extra = 1 if self.unknown_category == "unknown_slot" else 0
        return len(self.numeric_features) + sum(len(v) + extra for v in self.categorical_features.values())


def read_vocabulary(path: str | Path) -> list[str]:
    """Read a vocabulary file: one token per line, order significant."""
    tokens = [line.rstrip("\n") for line in Path(path).read_text(encoding="utf-8").splitlines()]
    return [t for t in tokens if t != ""]


def _encode_row(row: Mapping[str, str], schema: CsvSchema, row_no: int) -> np.ndarray:
    out = np.zeros(schema.encoded_width, dtype=np.float64)
    pos = 0
    for col in schema.numeric_features:
        raw = row[col]
        try:
            out[pos] = float(raw)
        except ValueError:
            raise SchemaError(f"row {row_no}: column {col!r} has non-numeric value {raw!r}") from None
        pos += 1
    extra = 1 if schema.unknown_category == "unknown_slot" else 0
    for col, vocab in schema.categorical_features.items():
        value = row[col]
        try:
            idx = list(vocab).index(value)
        except ValueError:
            if schema.unknown_category == "error":
                raise SchemaError(f"row {row_no}: column {col!r} has unseen category {value!r}") from None
            idx = len(vocab)  # reserved slot
        out[pos + idx] = 1.0
        pos += len(vocab) + extra
    return out


def _parse_label(raw: str | None, schema: CsvSchema, row_no: int) -> int:
    if raw is None or raw == "":
        raise SchemaError(f"row {row_no}: missing label in column {schema.label_column!r}")
    if schema.label_values is not None:
        try:
            return list(schema.label_values).index(raw)
        except ValueError:
            raise SchemaError(f"row {row_no}: label {raw!r} not in declared label values") from None
    try:
        return int(raw)
    except ValueError:
        raise SchemaError(f"row {row_no}: label {raw!r} is not an integer") from None


def load_csv(path: str | Path, schema: CsvSchema) -> FederatedDataset:
    """Load a headered CSV into a FederatedDataset.

    Domains appear in first-appearance order of their key (split rules use
    their declared match/rest order); encoding is fully determined by the
    schema, so the same file and schema always produce an identical dataset.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter=schema.delimiter)
        if reader.fieldnames is None:
            raise SchemaError(f"{path}: empty file (header row required)")
        needed = set(schema.numeric_features) | set(schema.categorical_features) | {schema.label_column}
        if schema.domain_column is not None:
            needed.add(schema.domain_column)
        else:
            needed.add(schema.domain_split[0])
        missing = sorted(needed - set(reader.fieldnames))
        if missing:
            raise SchemaError(f"{path}: missing column(s) {', '.join(repr(c) for c in missing)}")

        by_domain: dict[str, tuple[list[np.ndarray], list[int]]] = {}
        order: list[str] = []
        for row_no, row in enumerate(reader, start=1):
            if schema.domain_column is not None:
                key = row[schema.domain_column]
                if key is None or key == "":
                    raise SchemaError(f"row {row_no}: missing domain key")
            else:
                col, value, match_name, rest_name = schema.domain_split
                key = match_name if row[col] == value else rest_name
            label = _parse_label(row.get(schema.label_column), schema, row_no)
            feats = _encode_row(row, schema, row_no)
            if key not in by_domain:
                by_domain[key] = ([], [])
                order.append(key)
            by_domain[key][0].append(feats)
            by_domain[key][1].append(label)

    if not order:
        raise SchemaError(f"{path}: no data rows")
    if schema.domain_split is not None:
        # the split rule declares both domains; either side empty is an error
        declared = [schema.domain_split[2], schema.domain_split[3]]
        for name in declared:
            if name not in by_domain:
                raise SchemaError(f"{path}: split rule leaves domain {name!r} empty")
        order = declared

    domains = []
    for k, name in enumerate(order):
        feats, labels = by_domain[name]
        domains.append(DomainDataset(id=k, name=name, features=np.vstack(feats), labels=np.array(labels)))
    all_labels = np.concatenate([d.labels for d in domains])
    n_classes = len(schema.label_values) if schema.label_values is not None else int(all_labels.max()) + 1
    n_classes = max(n_classes, 2)
    return FederatedDataset(domains=tuple(domains), n_classes=n_classes, n_features=schema.encoded_width)


def write_csv(dataset: FederatedDataset, path: str | Path) -> CsvSchema:
    """Write a dataset to CSV (columns f0..f{d-1}, label, domain).

    Returns the schema that reads the file back into an equal dataset.
    """
    path = Path(path)
    feature_cols = [f"f{j}" for j in range(dataset.n_features)]
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(feature_cols + ["label", "domain"])
        for dom in dataset.domains:
            for i in range(dom.m):
                writer.writerow([repr(float(v)) for v in dom.features[i]] + [int(dom.labels[i]), dom.name])
    return CsvSchema(numeric_features=feature_cols, label_column="label", domain_column="domain")


# ---------------------------------------------------------------------------
# Synthetic generators
# ---------------------------------------------------------------------------


def synth_pointmass_pair(n_per_domain: int, odd_counts: str = "error") -> FederatedDataset:
    """Two single-support-point domains with conflicting label laws.

    Both domains share the constant feature x = 1. Domain ``all_one`` carries
    only label 1; domain ``balanced`` alternates labels 0,1 starting at 0, so
    for even n its empirical label law is exactly (1/2, 1/2). The size-weighted
    pool then has class frequencies (1/4, 3/4), and training against that pool
    is provably worse on the worst domain than the minimax solution; see
    :func:`aflearn.oracle.pointmass_pair_analytics` for the closed-form values.

    Deterministic: no sampling, so empirical equals population at any even n.
    """
    if n_per_domain < 1:
        raise DataError("n_per_domain must be >= 1")
    if n_per_domain % 2 == 1:
        if odd_counts == "error":
            raise DataError("odd n_per_domain leaves the balanced domain imbalanced; pass odd_counts='warn' to allow")
        warnings.warn("odd n_per_domain: balanced domain has unequal label counts", stacklevel=2)
    ones = np.ones((n_per_domain, 1))
    d0 = DomainDataset(id=0, name="all_one", features=ones, labels=np.ones(n_per_domain, dtype=np.int64))
    d1 = DomainDataset(id=1, name="balanced", features=ones.copy(), labels=np.arange(n_per_domain, dtype=np.int64) % 2)
    return FederatedDataset(domains=(d0, d1), n_classes=2, n_features=1)


@dataclass(frozen=True)
class GaussianDomainSpec:
    """One synthetic domain: isotropic Gaussian features, softmax-linear labels.

    Features are drawn N(mean, cov_scale^2 I); the label law at x is
    softmax(class_offsets @ x), one row of `class_offsets` per class.
    """

    name: str
    count: int
    mean: Sequence[float]
    cov_scale: float
    class_offsets: Sequence[Sequence[float]]


def synth_gaussian_domains(specs: Sequence[GaussianDomainSpec], seed: int) -> FederatedDataset:
    """Draw a reproducible multi-domain Gaussian dataset (same seed, same bytes)."""
    if not specs:
        raise DataError("need at least one domain spec")
    offsets0 = np.asarray(specs[0].class_offsets, dtype=np.float64)
    n_classes, d = offsets0.shape
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    domains = []
    for k, spec in enumerate(specs):
        if spec.count < 1:
            raise DataError(f"domain {spec.name!r}: count must be >= 1")
        if spec.cov_scale <= 0:
            raise DataError(f"domain {spec.name!r}: cov_scale must be positive")
        offsets = np.asarray(spec.class_offsets, dtype=np.float64)
        if offsets.shape != (n_classes, d):
            raise DataError(f"domain {spec.name!r}: class_offsets shape {offsets.shape} != {(n_classes, d)}")
        mean = np.asarray(spec.mean, dtype=np.float64)
        x = mean + spec.cov_scale * rng.standard_normal((spec.count, d))
        scores = x @ offsets.T
        scores -= scores.max(axis=1, keepdims=True)
        probs = np.exp(scores)
        probs /= probs.sum(axis=1, keepdims=True)
        u = rng.random((spec.count, 1))
        labels = (u > np.cumsum(probs, axis=1)).sum(axis=1)
        domains.append(DomainDataset(id=k, name=spec.name, features=x, labels=labels))
    return FederatedDataset(domains=tuple(domains), n_classes=n_classes, n_features=d)


def split_train_test(dataset: FederatedDataset, test_fraction: float, seed: int) -> tuple[FederatedDataset, FederatedDataset]:
    """Per-domain stratified split: each (domain, label) cell is split at the
    declared fraction (rounded, at least one test row per nonempty cell when
    the cell has >= 2 rows); shuffling is seeded and domain-keyed.
    """
    if not 0.0 < test_fraction < 1.0:
        raise DataError("test_fraction must be in (0, 1)")
    train_domains, test_domains = [], []
    for k, dom in enumerate(dataset.domains):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(k,)))
        train_idx, test_idx = [], []
        for label in np.unique(dom.labels):
            cell = np.flatnonzero(dom.labels == label)
            cell = cell[rng.permutation(len(cell))]
            n_test = int(round(test_fraction * len(cell)))
            if len(cell) >= 2:
                n_test = min(max(n_test, 1), len(cell) - 1)
            else:
                n_test = 0
            test_idx.extend(cell[:n_test])
            train_idx.extend(cell[n_test:])
        train_idx, test_idx = sorted(train_idx), sorted(test_idx)
        if not train_idx or not test_idx:
            raise DataError(f"domain {dom.name!r} too small to split at fraction {test_fraction}")
        train_domains.append(DomainDataset(k, dom.name, dom.features[train_idx], dom.labels[train_idx]))
        test_domains.append(DomainDataset(k, dom.name, dom.features[test_idx], dom.labels[test_idx]))

    def make(doms: list[DomainDataset]) -> FederatedDataset:
        return FederatedDataset(tuple(doms), dataset.n_classes, dataset.n_features)

    return make(train_domains), make(test_domains)


def domains_by_class(dataset: FederatedDataset) -> FederatedDataset:
    """Re-partition a dataset so each class becomes its own domain.

    Used for fairness runs where the protected attribute is the label itself
    (e.g. per-class worst-case training). Classes with no examples are dropped.
    """
    feats = np.vstack([d.features for d in dataset.domains])
    labels = np.concatenate([d.labels for d in dataset.domains])
    domains = []
    for label in np.unique(labels):
        idx = labels == label
        domains.append(DomainDataset(len(domains), f"class_{label}", feats[idx], labels[idx]))
    return FederatedDataset(tuple(domains), dataset.n_classes, dataset.n_features)

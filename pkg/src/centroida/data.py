"""Datasets, label-shift induction, samplers, and synthetic domain pairs.

Target-domain labels exist for evaluation only.  ``LabeledDataset`` counts
every read of a target dataset's labels so experiments can prove the training
path never touched them.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np


class DomainTag(str, Enum):
    SOURCE = "source"
    TARGET = "target"


class LabeledDataset:
    """Immutable feature matrix with integer class labels and a domain tag.

    Reads of ``labels`` on a target-domain dataset increment ``label_reads``.
    Anything that must stay label-blind (the training loop) can be audited by
    snapshotting that counter.
    """

    def __init__(
        self,
        features: np.ndarray,
        labels: np.ndarray,
        domain: DomainTag | str,
        n_classes: int | None = None,
        class_names: Sequence[str] | None = None,
    ):
        features = np.ascontiguousarray(features, dtype=np.float64)
        labels = np.ascontiguousarray(labels, dtype=np.int64)
        if features.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {features.shape}")
        if labels.ndim != 1 or labels.shape[0] != features.shape[0]:
            raise ValueError(
                f"labels must be 1-D with one entry per row, got {labels.shape} "
                f"for {features.shape[0]} rows"
            )
        if features.shape[0] == 0:
            raise ValueError("dataset must contain at least one sample")
        if n_classes is None:
            n_classes = int(labels.max()) + 1
        if n_classes < 1:
            raise ValueError(f"n_classes must be positive, got {n_classes}")
        if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
            raise ValueError(
                f"labels must lie in [0, {n_classes}), got range "
                f"[{labels.min()}, {labels.max()}]"
            )
        if class_names is not None and len(class_names) != n_classes:
            raise ValueError(
                f"expected {n_classes} class names, got {len(class_names)}"
            )
        features.setflags(write=False)
        labels.setflags(write=False)
        self.features = features
        self._labels = labels
        self.domain = DomainTag(domain)
        self.n_classes = int(n_classes)
        self.class_names = tuple(class_names) if class_names is not None else None
        self.label_reads = 0

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def labels(self) -> np.ndarray:
        """Label vector; counted as a read when the domain is target."""
        if self.domain is DomainTag.TARGET:
            self.label_reads += 1
        return self._labels

    def class_counts(self) -> np.ndarray:
        """Per-class sample counts (counted as a label read on target data)."""
        return np.bincount(self.labels, minlength=self.n_classes)

    def subset(self, indices: np.ndarray) -> "LabeledDataset":
        """New dataset restricted to the given row indices (counted read on target)."""
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(
            self.features[indices],
            self.labels[indices],
            self.domain,
            self.n_classes,
            self.class_names,
        )


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def geometric_class_counts(n_max: int, p: float, k: int) -> np.ndarray:
    """Kept-count ladder n_max * p^(j / (k-1)) for ranks j = 0..k-1, rounded half up.

    Rank 0 keeps n_max and the last rank keeps round(n_max * p); intermediate
    ranks interpolate geometrically.  Requires k >= 2 because the exponent
    divides by k - 1.
    """
    if k < 2:
        raise ValueError(f"count ladder needs at least 2 classes, got {k}")
    if not 0.0 < p <= 1.0:
        raise ValueError(f"imbalance ratio p must be in (0, 1], got {p}")
    return np.array(
        [_round_half_up(n_max * p ** (j / (k - 1))) for j in range(k)], dtype=np.int64
    )


@dataclass(frozen=True)
class ImbalanceSpec:
    """How to subsample a dataset into a long-tailed version.

    ``p`` is the ratio between the smallest and largest kept class.  ``order``
    decides which class gets which rank: ``"by_count_desc"`` ranks classes by
    descending original count (ties broken by ascending class id), while an
    explicit sequence of class ids lists them majority-first.
    """

    p: float
    seed: int = 0
    order: str | tuple[int, ...] = "by_count_desc"

    def __post_init__(self):
        if not 0.0 < self.p <= 1.0:
            raise ValueError(f"imbalance ratio p must be in (0, 1], got {self.p}")
        if isinstance(self.order, str):
            if self.order != "by_count_desc":
                raise ValueError(
                    f"order must be 'by_count_desc' or a class permutation, got {self.order!r}"
                )
        else:
            object.__setattr__(self, "order", tuple(int(c) for c in self.order))

    def rank_order(self, counts: np.ndarray) -> np.ndarray:
        """Class ids in rank order (rank 0 = class that keeps the most)."""
        k = counts.shape[0]
        if isinstance(self.order, str):
            return np.lexsort((np.arange(k), -counts))
        perm = np.asarray(self.order, dtype=np.int64)
        if sorted(perm.tolist()) != list(range(k)):
            raise ValueError(
                f"order permutation must list every class id exactly once, got {self.order}"
            )
        return perm


def apply_sampling_protocol(ds: LabeledDataset, spec: ImbalanceSpec) -> LabeledDataset:
    """Subsample ``ds`` so kept class sizes decay geometrically from N_max to N_max * p.

    The class at rank j keeps round(N_max * p^(j/(K-1))) samples, where N_max
    is the largest original class count and rounding is half-up.  Kept counts
    are clamped to [1, original count].  Selection within a class is uniform
    without replacement under ``spec.seed``; surviving rows keep their
    original order.  ``p = 1`` keeps every class count unchanged.
    """
    k = ds.n_classes
    if k < 2:
        raise ValueError(
            f"sampling protocol undefined for {k} class(es): rank exponent divides by K - 1"
        )
    labels = ds.labels
    counts = np.bincount(labels, minlength=k)
    ranked = spec.rank_order(counts)
    n_max = int(counts.max())
    targets = geometric_class_counts(n_max, spec.p, k)
    rng = np.random.default_rng(spec.seed)
    keep: list[np.ndarray] = []
    for j, cls in enumerate(ranked):
        available = int(counts[cls])
        if available == 0:
            continue
        want = min(max(int(targets[j]), 1), available)
        rows = np.flatnonzero(labels == cls)
        keep.append(rng.choice(rows, size=want, replace=False))
    idx = np.sort(np.concatenate(keep))
    return LabeledDataset(ds.features[idx], labels[idx], ds.domain, k, ds.class_names)


def _class_index(labels: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stable sort of row indices by label, plus per-class start offsets and counts."""
    counts = np.bincount(labels, minlength=k)
    order = np.argsort(labels, kind="stable")
    starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
    return order, starts, counts


def class_balanced_sampler(
    ds: LabeledDataset,
    batch_size: int,
    rng: np.random.Generator | int,
) -> Iterator[np.ndarray]:
    """One epoch of class-balanced batches drawn with replacement.

    Each sample is drawn by first picking a class uniformly from the K
    classes, then a member uniformly within that class, so every class is
    equally represented in expectation regardless of the dataset's own
    imbalance.  Yields ceil(N / batch_size) index arrays of exactly
    ``batch_size`` rows.  Raises if any class is empty.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    k = ds.n_classes
    order, starts, counts = _class_index(ds.labels, k)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise ValueError(
            f"class {int(empty[0])} has no samples; balanced sampling is impossible"
        )
    n_batches = math.ceil(len(ds) / batch_size)
    for _ in range(n_batches):
        classes = rng.integers(0, k, size=batch_size)
        offsets = rng.integers(0, counts[classes])
        yield order[starts[classes] + offsets]


def uniform_sampler(
    ds: LabeledDataset,
    batch_size: int,
    rng: np.random.Generator | int,
    n_batches: int | None = None,
) -> Iterator[np.ndarray]:
    """Uniform-with-replacement batches; never reads labels.

    Defaults to ceil(N / batch_size) batches so an epoch covers the dataset
    in expectation; pass ``n_batches`` to pace it against another stream.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    n = len(ds)
    if n_batches is None:
        n_batches = math.ceil(n / batch_size)
    for _ in range(n_batches):
        yield rng.integers(0, n, size=batch_size)


@dataclass(frozen=True)
class CovariateShift:
    """Affine feature-space shift applied to target-domain class means.

    Rotation acts in the first two feature dimensions; ``scale`` multiplies
    the whole transform.  ``scale = 0`` would collapse the feature space to a
    point and is rejected.
    """

    rotation_deg: float = 0.0
    translation: tuple[float, ...] | None = None
    scale: float = 1.0

    def __post_init__(self):
        if self.scale == 0.0:
            raise ValueError("scale = 0 is a rank-zero transform; shift must be invertible")
        if self.translation is not None:
            object.__setattr__(
                self, "translation", tuple(float(t) for t in self.translation)
            )

    def matrix(self, dim: int) -> np.ndarray:
        if dim < 2:
            raise ValueError(f"shift needs at least 2 feature dimensions, got {dim}")
        m = np.eye(dim)
        theta = math.radians(self.rotation_deg)
        m[0, 0] = math.cos(theta)
        m[0, 1] = -math.sin(theta)
        m[1, 0] = math.sin(theta)
        m[1, 1] = math.cos(theta)
        return self.scale * m

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        dim = points.shape[-1]
        if self.translation is not None and len(self.translation) != dim:
            raise ValueError(
                f"translation has {len(self.translation)} entries for {dim} dimensions"
            )
        out = points @ self.matrix(dim).T
        if self.translation is not None:
            out = out + np.asarray(self.translation)
        return out


def synthetic_class_means(
    k: int,
    dim: int,
    seed: int,
    separation: float = 4.0,
    offplane_scale: float = 0.25,
) -> np.ndarray:
    """Class means on a circle of radius ``separation`` in dims 0-1.

    Remaining dimensions get small Gaussian offsets (sd = offplane_scale *
    separation) so they carry weak class signal; set offplane_scale = 0 to
    confine all class structure to the rotated plane.
    """
    if k < 2:
        raise ValueError(f"need at least 2 classes, got {k}")
    if dim < 2:
        raise ValueError(f"need at least 2 feature dimensions, got {dim}")
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(4)[0])
    angles = 2.0 * np.pi * np.arange(k) / k
    means = np.zeros((k, dim))
    means[:, 0] = np.cos(angles)
    means[:, 1] = np.sin(angles)
    means *= separation
    if dim > 2 and offplane_scale > 0:
        means[:, 2:] = offplane_scale * separation * rng.standard_normal((k, dim - 2))
    return means


def _sample_gaussian_domain(
    means: np.ndarray,
    counts: np.ndarray,
    sigma: float,
    rng: np.random.Generator,
    domain: DomainTag,
) -> LabeledDataset:
    k, dim = means.shape
    labels = np.repeat(np.arange(k), counts)
    feats = means[labels] + sigma * rng.standard_normal((labels.shape[0], dim))
    return LabeledDataset(feats, labels, domain, n_classes=k)


def _as_counts(per_class: int | Sequence[int], k: int) -> np.ndarray:
    if isinstance(per_class, (int, np.integer)):
        counts = np.full(k, int(per_class), dtype=np.int64)
    else:
        counts = np.asarray(list(per_class), dtype=np.int64)
        if counts.shape[0] != k:
            raise ValueError(f"expected {k} per-class counts, got {counts.shape[0]}")
    if (counts < 1).any():
        raise ValueError("every class needs at least one generated sample")
    return counts


def make_synthetic_pair(
    k: int,
    dim: int,
    shift: CovariateShift,
    seed: int,
    n_source_per_class: int | Sequence[int] = 150,
    n_target_per_class: int | Sequence[int] = 150,
    noise_sigma: float = 1.0,
    separation: float = 4.0,
    offplane_scale: float = 0.25,
) -> tuple[LabeledDataset, LabeledDataset]:
    """Source/target Gaussian-blob pair sharing class means up to ``shift``.

    Target means are ``shift.apply`` of the source means; both domains share
    the same per-class noise scale.  The seed is split into independent
    streams for means, source noise, and target noise, so regenerating with
    the same seed is bit-identical.
    """
    children = np.random.SeedSequence(seed).spawn(4)
    means_s = synthetic_class_means(k, dim, seed, separation, offplane_scale)
    means_t = shift.apply(means_s)
    src = _sample_gaussian_domain(
        means_s, _as_counts(n_source_per_class, k), noise_sigma,
        np.random.default_rng(children[1]), DomainTag.SOURCE,
    )
    tgt = _sample_gaussian_domain(
        means_t, _as_counts(n_target_per_class, k), noise_sigma,
        np.random.default_rng(children[2]), DomainTag.TARGET,
    )
    return src, tgt


def make_synthetic_target_test(
    k: int,
    dim: int,
    shift: CovariateShift,
    seed: int,
    n_per_class: int | Sequence[int] = 200,
    noise_sigma: float = 1.0,
    separation: float = 4.0,
    offplane_scale: float = 0.25,
) -> LabeledDataset:
    """Held-out target-domain test split drawn from the same means as the pair.

    Uses a noise stream disjoint from both training domains, so the test set
    never overlaps the training draws for any ``n_per_class``.
    """
    children = np.random.SeedSequence(seed).spawn(4)
    means_t = shift.apply(synthetic_class_means(k, dim, seed, separation, offplane_scale))
    return _sample_gaussian_domain(
        means_t, _as_counts(n_per_class, k), noise_sigma,
        np.random.default_rng(children[3]), DomainTag.TARGET,
    )


@dataclass(frozen=True)
class CsvSchema:
    """Expected layout of a dataset CSV: columns f0..f{D-1} then `label`."""

    n_classes: int
    domain: DomainTag | str = DomainTag.SOURCE
    n_features: int | None = None


def load_csv(path: str | Path, schema: CsvSchema) -> LabeledDataset:
    """Load a dataset CSV, validating header and cell types.

    Rows are numbered from 1 for the first data row; malformed cells raise a
    ValueError naming that row.  Labels must be integer literals in
    [0, n_classes).  LF and CRLF line endings are both accepted.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file, expected a header row") from None
        if len(header) < 2 or header[-1] != "label":
            raise ValueError(
                f"{path}: header must be f0..f{{D-1}},label, got {header!r}"
            )
        d = len(header) - 1
        expected = [f"f{i}" for i in range(d)] + ["label"]
        if header != expected:
            raise ValueError(f"{path}: header must be {expected!r}, got {header!r}")
        if schema.n_features is not None and d != schema.n_features:
            raise ValueError(
                f"{path}: expected {schema.n_features} feature columns, found {d}"
            )
        feats: list[list[float]] = []
        labels: list[int] = []
        for row_num, row in enumerate(reader, start=1):
            if len(row) != d + 1:
                raise ValueError(
                    f"{path}: row {row_num} has {len(row)} cells, expected {d + 1}"
                )
            try:
                feats.append([float(c) for c in row[:d]])
            except ValueError:
                raise ValueError(
                    f"{path}: row {row_num} has a non-numeric feature cell"
                ) from None
            try:
                label = int(row[d])
            except ValueError:
                raise ValueError(
                    f"{path}: row {row_num} has a non-integer label {row[d]!r}"
                ) from None
            if not 0 <= label < schema.n_classes:
                raise ValueError(
                    f"{path}: row {row_num} label {label} outside [0, {schema.n_classes})"
                )
            labels.append(label)
    if not feats:
        raise ValueError(f"{path}: no data rows")
    return LabeledDataset(
        np.array(feats), np.array(labels), schema.domain, schema.n_classes
    )


def save_csv(ds: LabeledDataset, path: str | Path) -> None:
    """Write a dataset in the load_csv layout; floats keep full precision."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    labels = ds.labels
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{i}" for i in range(ds.n_features)] + ["label"])
        for row, label in zip(ds.features, labels):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])

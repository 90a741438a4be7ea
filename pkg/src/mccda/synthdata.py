"""Synthetic domain-shift datasets and the dataset algebra used by scenarios."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ContractError, DimensionError, ParameterError


@dataclass(frozen=True)
class DomainDataset:
    """A point cloud from one domain.

    ``labels`` is ``None`` for unlabeled data. ``label_set`` lists the class
    indices present, sorted ascending.
    """

    points: np.ndarray
    labels: Optional[np.ndarray]
    domain_id: str
    label_set: Tuple[int, ...]

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2:
            raise DimensionError(f"points must be 2D, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ContractError(f"dataset {self.domain_id!r} contains non-finite points")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "label_set", tuple(sorted(int(c) for c in self.label_set)))
        if self.labels is not None:
            lab = np.asarray(self.labels, dtype=np.int64).reshape(-1)
            if lab.shape[0] != pts.shape[0]:
                raise DimensionError(f"{lab.shape[0]} labels for {pts.shape[0]} points")
            if lab.size and not set(np.unique(lab).tolist()) <= set(self.label_set):
                raise ContractError("labels fall outside label_set")
            object.__setattr__(self, "labels", lab)
        if any(c < 0 for c in self.label_set):
            raise ContractError("label_set entries must be nonnegative")

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def labeled(self) -> bool:
        return self.labels is not None

    def unlabeled(self) -> "DomainDataset":
        return replace(self, labels=None)

    def equals(self, other: "DomainDataset") -> bool:
        """Bitwise equality of points, labels, id and label set."""
        if (self.domain_id, self.label_set) != (other.domain_id, other.label_set):
            return False
        if not np.array_equal(self.points, other.points):
            return False
        if self.labels is None or other.labels is None:
            return self.labels is None and other.labels is None
        return np.array_equal(self.labels, other.labels)


@dataclass(frozen=True)
class ShiftTransform:
    rotation: float = 0.0  # radians
    translation: Optional[Tuple[float, ...]] = None
    scale: float = 1.0
    noise_sigma: float = 0.0

    def __post_init__(self):
        if not self.scale > 0:
            raise ParameterError(f"scale must be positive, got {self.scale}")
        if not self.noise_sigma >= 0:
            raise ParameterError(f"noise_sigma must be nonnegative, got {self.noise_sigma}")


IDENTITY = ShiftTransform()


def gen_two_moons(n_per_class: int, noise_sigma: float = 0.1, seed=0,
                  domain_id: str = "moons") -> DomainDataset:
    """Two interleaved half circles of radius 1.

    Class 0 is the upper arc ``(cos t, sin t)``; class 1 is the lower arc
    ``(1 - cos t, 0.5 - sin t)``, with ``t`` uniform on ``[0, pi]``.
    """
    if n_per_class < 1:
        raise ParameterError(f"n_per_class must be at least 1, got {n_per_class}")
    rng = np.random.default_rng(seed)
    t0 = rng.uniform(0.0, math.pi, n_per_class)
    t1 = rng.uniform(0.0, math.pi, n_per_class)
    upper = np.column_stack([np.cos(t0), np.sin(t0)])
    lower = np.column_stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)])
    points = np.vstack([upper, lower])
    if noise_sigma > 0:
        points = points + rng.normal(0.0, noise_sigma, points.shape)
    labels = np.repeat([0, 1], n_per_class)
    return DomainDataset(points, labels, domain_id, (0, 1))


MOONS_CENTER = (0.5, 0.25)  # centroid of the two arcs


def rotation_matrix(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


def shift_domain(ds: DomainDataset, t: ShiftTransform, domain_id: str, seed=0) -> DomainDataset:
    """``x' = scale * R(rotation) x + translation + noise``, labels carried over."""
    x = ds.points
    if t.rotation != 0.0:
        if ds.dim == 2:
            x = x @ rotation_matrix(t.rotation).T
        else:
            warnings.warn(f"rotation ignored for {ds.dim}-dimensional data", stacklevel=2)
    x = t.scale * x
    if t.translation is not None:
        shift = np.asarray(t.translation, dtype=np.float64)
        if shift.shape != (ds.dim,):
            raise DimensionError(f"translation of length {shift.size} for {ds.dim}-D data")
        x = x + shift
    if t.noise_sigma > 0:
        x = x + np.random.default_rng(seed).normal(0.0, t.noise_sigma, x.shape)
    return DomainDataset(x, ds.labels, domain_id, ds.label_set)


BLOB_RADIUS = 4.0
BLOB_SIGMA = 0.5


def blob_centers(num_classes: int) -> np.ndarray:
    angles = 2.0 * math.pi * np.arange(num_classes) / num_classes
    return BLOB_RADIUS * np.column_stack([np.cos(angles), np.sin(angles)])


def gen_blob_domains(num_classes: int, num_domains: int,
                     transforms: Optional[Sequence[ShiftTransform]], n_per_class: int,
                     seed=0, prefix: str = "blobs") -> List[DomainDataset]:
    """Gaussian blobs on a circle of radius 4, one dataset per transform.

    Every domain draws its own base sample before its transform is applied.
    """
    if num_classes < 2:
        raise ParameterError(f"num_classes must be at least 2, got {num_classes}")
    if num_domains < 1:
        raise ParameterError(f"num_domains must be at least 1, got {num_domains}")
    if transforms is None:
        transforms = [IDENTITY] * num_domains
    if len(transforms) != num_domains:
        raise ParameterError(f"{len(transforms)} transforms for {num_domains} domains")
    centers = blob_centers(num_classes)
    labels = np.repeat(np.arange(num_classes), n_per_class)
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    seeds = root.spawn(2 * num_domains)
    out = []
    for d, tf in enumerate(transforms):
        rng = np.random.default_rng(seeds[2 * d])
        pts = centers[labels] + rng.normal(0.0, BLOB_SIGMA, (labels.size, 2))
        base = DomainDataset(pts, labels, f"{prefix}{d}", tuple(range(num_classes)))
        out.append(shift_domain(base, tf, f"{prefix}{d}", seeds[2 * d + 1]))
    return out


def restrict_labels(ds: DomainDataset, kept: Sequence[int]) -> DomainDataset:
    """Keep only examples whose label is in ``kept``. Class indices are unchanged."""
    kept = tuple(sorted(set(int(c) for c in kept)))
    if not kept:
        raise ParameterError("kept label set is empty")
    if not ds.labeled:
        raise ContractError("restrict_labels needs a labeled dataset")
    if not set(kept) <= set(ds.label_set):
        raise ParameterError(f"kept labels {kept} are not a subset of {ds.label_set}")
    mask = np.isin(ds.labels, kept)
    return DomainDataset(ds.points[mask], ds.labels[mask], ds.domain_id, kept)


def merge_domains(datasets: Sequence[DomainDataset], domain_id: str) -> DomainDataset:
    """Concatenate datasets in order; the label set is the union."""
    if not datasets:
        raise ContractError("nothing to merge")
    dims = {ds.dim for ds in datasets}
    if len(dims) != 1:
        raise DimensionError(f"feature dimensions differ: {sorted(dims)}")
    labeled = {ds.labeled for ds in datasets}
    if len(labeled) != 1:
        raise ContractError("cannot merge labeled with unlabeled datasets")
    points = np.concatenate([ds.points for ds in datasets], axis=0)
    labels = np.concatenate([ds.labels for ds in datasets]) if labeled == {True} else None
    label_set = sorted(set().union(*(ds.label_set for ds in datasets)))
    return DomainDataset(points, labels, domain_id, tuple(label_set))


def batch_iter(ds: DomainDataset, batch_size: int, seed=0,
               with_labels: bool = True) -> Iterator:
    """Endless stream of shuffled batches; the short tail of each epoch is dropped.

    Yields ``(points, labels)`` for labeled data when ``with_labels`` is set,
    else bare point matrices.
    """
    n = len(ds)
    if batch_size < 1:
        raise ParameterError(f"batch size must be at least 1, got {batch_size}")
    if batch_size > n:
        raise ParameterError(f"batch size {batch_size} exceeds dataset size {n}")
    rng = np.random.default_rng(seed)
    yield_labels = with_labels and ds.labeled
    while True:
        order = rng.permutation(n)
        for start in range(0, n - batch_size + 1, batch_size):
            idx = order[start : start + batch_size]
            if yield_labels:
                yield ds.points[idx], ds.labels[idx]
            else:
                yield ds.points[idx]


def save_csv(ds: DomainDataset, path) -> Path:
    """Columns ``x1..xd, label, domain_id``; unlabeled rows carry label -1."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{k + 1}" for k in range(ds.dim)] + ["label", "domain_id"])
        labels = ds.labels if ds.labeled else np.full(len(ds), -1)
        for row, lab in zip(ds.points, labels):
            w.writerow([repr(float(v)) for v in row] + [int(lab), ds.domain_id])
    return path


def load_csv(path, label_set: Optional[Sequence[int]] = None) -> DomainDataset:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    d = len(header) - 2
    if header[:d] != [f"x{k + 1}" for k in range(d)] or header[d:] != ["label", "domain_id"]:
        raise ContractError(f"unexpected CSV header {header}")
    points = np.array([[float(v) for v in r[:d]] for r in body], dtype=np.float64).reshape(-1, d)
    labels = np.array([int(r[d]) for r in body], dtype=np.int64)
    domain_id = body[0][d + 1] if body else Path(path).stem
    if labels.size and np.all(labels == -1):
        return DomainDataset(points, None, domain_id, tuple(label_set or ()))
    if np.any(labels == -1):
        raise ContractError("CSV mixes labeled and unlabeled rows")
    present = sorted(set(labels.tolist()))
    return DomainDataset(points, labels, domain_id, tuple(label_set or present))

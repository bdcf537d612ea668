"""Points, datasets, ground metrics and empirical measures.

All other modules exchange data through the containers defined here. A
point carries real coordinates plus an optional integer class label and an
optional latent vector, so a single container serves plain observations,
classification pairs and (observation, latent) pairs. Everything is
immutable after construction; operations are pure functions.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist

__all__ = [
    "ShapeError",
    "Point",
    "Dataset",
    "GroundMetric",
    "EmpiricalMeasure",
    "dist",
    "pairwise_distance",
    "empirical_from",
    "center_dataset",
    "uncenter_dataset",
    "points_to_arrays",
    "points_from_arrays",
    "load_dataset_csv",
    "save_dataset_csv",
]

EUCLIDEAN = "euclidean"
PRODUCT_CLASS = "product_class"
LATENT_PAIR = "latent_pair"

_METRIC_KINDS = (EUCLIDEAN, PRODUCT_CLASS, LATENT_PAIR)


class ShapeError(ValueError):
    """Point shapes are incompatible with the requested operation."""


def _as_float_vector(x, name):
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be a 1-d real vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite components")
    return arr


@dataclass(frozen=True, eq=False)
class Point:
    """One observation: coordinates plus optional label and latent vector."""

    coords: np.ndarray
    label: Optional[int] = None
    latent: Optional[np.ndarray] = None

    def __post_init__(self):
        coords = _as_float_vector(self.coords, "coords")
        coords.flags.writeable = False
        object.__setattr__(self, "coords", coords)
        if self.label is not None:
            object.__setattr__(self, "label", int(self.label))
        if self.latent is not None:
            latent = _as_float_vector(self.latent, "latent")
            latent.flags.writeable = False
            object.__setattr__(self, "latent", latent)

    @property
    def dim(self) -> int:
        return self.coords.shape[0]


def points_to_arrays(points: Sequence[Point]):
    """Stack a homogeneous point sequence into (coords, labels, latents).

    labels / latents come back as None when the points carry none.
    """
    if len(points) == 0:
        raise ValueError("empty point sequence")
    coords = np.stack([p.coords for p in points])
    has_label = points[0].label is not None
    has_latent = points[0].latent is not None
    for p in points:
        if (p.label is not None) != has_label or (p.latent is not None) != has_latent:
            raise ShapeError("points mix labelled/latent shapes")
    labels = np.array([p.label for p in points], dtype=int) if has_label else None
    latents = np.stack([p.latent for p in points]) if has_latent else None
    return coords, labels, latents


def points_from_arrays(coords, labels=None, latents=None) -> list[Point]:
    coords = np.asarray(coords, dtype=float)
    out = []
    for i in range(coords.shape[0]):
        out.append(
            Point(
                coords[i],
                label=None if labels is None else int(labels[i]),
                latent=None if latents is None else latents[i],
            )
        )
    return out


@dataclass(frozen=True, eq=False)
class Dataset:
    """Ordered, homogeneous collection of points. Index i is stable."""

    points: tuple[Point, ...]
    id: str = "dataset"

    def __post_init__(self):
        pts = tuple(self.points)
        if not pts:
            raise ValueError("dataset must be non-empty")
        d = pts[0].dim
        has_label = pts[0].label is not None
        has_latent = pts[0].latent is not None
        for p in pts:
            if p.dim != d:
                raise ShapeError("dataset points have mixed dimensionality")
            if (p.label is not None) != has_label or (p.latent is not None) != has_latent:
                raise ShapeError("dataset points have mixed optional fields")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def dim(self) -> int:
        return self.points[0].dim

    @cached_property
    def coords(self) -> np.ndarray:
        return np.stack([p.coords for p in self.points])

    @cached_property
    def labels(self) -> Optional[np.ndarray]:
        if self.points[0].label is None:
            return None
        return np.array([p.label for p in self.points], dtype=int)

    @cached_property
    def latents(self) -> Optional[np.ndarray]:
        if self.points[0].latent is None:
            return None
        return np.stack([p.latent for p in self.points])

    def subset(self, indices, id_suffix="-subset") -> "Dataset":
        pts = tuple(self.points[int(i)] for i in indices)
        return Dataset(pts, id=self.id + id_suffix)


@dataclass(frozen=True)
class GroundMetric:
    """Distance on the data space.

    kinds:
      euclidean      ``||x1 - x2||_p``
      product_class  ``(||x1 - x2||_2^p + 1[label1 != label2])^(1/p)``
      latent_pair    ``(||y1 - y2||_2^p + scale * ||t1 - t2||_2^p)^(1/p)``

    The mismatch indicator makes product_class vanish at equal pairs,
    which an equality indicator would not.
    """

    kind: str = EUCLIDEAN
    p: float = 2.0
    latent_scale: float = 1.0

    def __post_init__(self):
        if self.kind not in _METRIC_KINDS:
            raise ValueError(f"unknown metric kind {self.kind!r}")
        if self.p < 1:
            raise ValueError("metric order p must be >= 1")
        if self.latent_scale < 0:
            raise ValueError("latent_scale must be >= 0")

    @classmethod
    def euclidean(cls, p: float = 2.0) -> "GroundMetric":
        return cls(EUCLIDEAN, p=p)

    @classmethod
    def product_class(cls, p: float = 2.0) -> "GroundMetric":
        return cls(PRODUCT_CLASS, p=p)

    @classmethod
    def latent_pair(cls, p: float = 2.0, latent_scale: float = 1.0) -> "GroundMetric":
        return cls(LATENT_PAIR, p=p, latent_scale=latent_scale)


def pairwise_distance(metric: GroundMetric, a_arrays, b_arrays) -> np.ndarray:
    """(n, m) matrix of ground distances between two stacked point sets.

    Each side is a (coords, labels, latents) triple as produced by
    :func:`points_to_arrays`.
    """
    ca, la, ta = a_arrays
    cb, lb, tb = b_arrays
    ca = np.atleast_2d(np.asarray(ca, dtype=float))
    cb = np.atleast_2d(np.asarray(cb, dtype=float))
    if ca.shape[1] != cb.shape[1]:
        raise ShapeError(
            f"coordinate dimensions differ: {ca.shape[1]} vs {cb.shape[1]}"
        )
    if metric.kind == EUCLIDEAN:
        return cdist(ca, cb, "minkowski", p=metric.p)
    if metric.kind == PRODUCT_CLASS:
        if la is None or lb is None:
            raise ShapeError("product_class metric requires labels on both sides")
        base = cdist(ca, cb, "euclidean") ** metric.p
        mismatch = (np.asarray(la)[:, None] != np.asarray(lb)[None, :]).astype(float)
        return (base + mismatch) ** (1.0 / metric.p)
    # latent_pair
    base = cdist(ca, cb, "euclidean") ** metric.p
    if metric.latent_scale == 0.0:
        return base ** (1.0 / metric.p)
    if ta is None or tb is None:
        raise ShapeError("latent_pair metric requires latent vectors on both sides")
    ta = np.atleast_2d(np.asarray(ta, dtype=float))
    tb = np.atleast_2d(np.asarray(tb, dtype=float))
    if ta.shape[1] != tb.shape[1]:
        raise ShapeError("latent dimensions differ")
    lat = cdist(ta, tb, "euclidean") ** metric.p
    return (base + metric.latent_scale * lat) ** (1.0 / metric.p)


def _point_arrays(p: Point):
    return (
        p.coords[None, :],
        None if p.label is None else np.array([p.label]),
        None if p.latent is None else p.latent[None, :],
    )


def dist(metric: GroundMetric, a: Point, b: Point) -> float:
    """Ground distance between two points under the given metric."""
    return float(pairwise_distance(metric, _point_arrays(a), _point_arrays(b))[0, 0])


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """Weighted point cloud: atoms with masses summing to one."""

    atoms: tuple[Point, ...]
    masses: np.ndarray

    def __post_init__(self):
        atoms = tuple(self.atoms)
        masses = np.asarray(self.masses, dtype=float)
        if masses.ndim != 1 or len(atoms) != masses.shape[0]:
            raise ShapeError("masses must be a vector matching the atom count")
        if np.any(masses < 0) or not np.all(np.isfinite(masses)):
            raise ValueError("masses must be finite and nonnegative")
        if abs(masses.sum() - 1.0) > 1e-9:
            raise ValueError(f"masses must sum to 1, got {masses.sum()!r}")
        masses = masses.copy()
        masses.flags.writeable = False
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "masses", masses)

    def __len__(self) -> int:
        return len(self.atoms)

    @cached_property
    def arrays(self):
        return points_to_arrays(self.atoms)

    @property
    def dim(self) -> int:
        return self.atoms[0].dim


def empirical_from(points: Sequence[Point]) -> EmpiricalMeasure:
    """Uniform empirical measure on the given atoms, order preserved.

    Duplicate points keep separate atoms with separate 1/n masses.
    """
    if len(points) == 0:
        raise ValueError("cannot build an empirical measure from no points")
    n = len(points)
    return EmpiricalMeasure(tuple(points), np.full(n, 1.0 / n))


def center_dataset(data: Dataset):
    """Subtract the coordinate mean; labels and latents are untouched.

    Returns the centered dataset and the mean for undoing.
    """
    mean = data.coords.mean(axis=0)
    pts = tuple(
        Point(p.coords - mean, label=p.label, latent=p.latent) for p in data.points
    )
    return Dataset(pts, id=data.id), mean


def uncenter_dataset(data: Dataset, mean) -> Dataset:
    mean = np.asarray(mean, dtype=float)
    pts = tuple(
        Point(p.coords + mean, label=p.label, latent=p.latent) for p in data.points
    )
    return Dataset(pts, id=data.id)


def save_dataset_csv(data: Dataset, path) -> None:
    """Columns x0..x{d-1}, optional label, optional theta0..theta{k-1}."""
    d = data.dim
    header = [f"x{i}" for i in range(d)]
    labels = data.labels
    latents = data.latents
    if labels is not None:
        header.append("label")
    if latents is not None:
        header.extend(f"theta{j}" for j in range(latents.shape[1]))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i, p in enumerate(data.points):
            row = [repr(float(v)) for v in p.coords]
            if labels is not None:
                row.append(str(int(labels[i])))
            if latents is not None:
                row.extend(repr(float(v)) for v in latents[i])
            writer.writerow(row)


def load_dataset_csv(path, id: Optional[str] = None) -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        x_cols = [i for i, h in enumerate(header) if h.startswith("x")]
        label_col = header.index("label") if "label" in header else None
        theta_cols = [i for i, h in enumerate(header) if h.startswith("theta")]
        pts = []
        for row in reader:
            coords = np.array([float(row[i]) for i in x_cols])
            label = int(row[label_col]) if label_col is not None else None
            latent = (
                np.array([float(row[i]) for i in theta_cols]) if theta_cols else None
            )
            pts.append(Point(coords, label=label, latent=latent))
    return Dataset(tuple(pts), id=id or str(path))

"""Grid containers and probability-field arithmetic shared by every other module.

Conventions used throughout the package:

* Axis order is (z, y, x) in 3D and (y, x) in 2D; arrays are dense row-major.
* Classes are 1-based; class 1 is the background.  A ``ProbSegmentation``
  stores one channel per class, channel index ``c - 1`` for class ``c``.
* All containers are immutable after construction (arrays are made
  read-only), so they can be shared freely across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

SIMPLEX_TOL = 1e-6


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class GridShape:
    """Grid extents plus physical spacing (mm) per axis."""

    dims: tuple[int, ...]
    spacing: tuple[float, ...]

    def __init__(self, dims: Sequence[int], spacing: Sequence[float] | None = None):
        dims = tuple(int(d) for d in dims)
        if spacing is None:
            spacing = (1.0,) * len(dims)
        spacing = tuple(float(s) for s in spacing)
        if len(dims) not in (2, 3):
            raise ValueError(f"grids must be 2D or 3D, got {len(dims)} axes")
        if len(dims) != len(spacing):
            raise ValueError("dims and spacing must have the same length")
        if any(d < 1 for d in dims):
            raise ValueError(f"all extents must be >= 1, got {dims}")
        if any(s <= 0 for s in spacing):
            raise ValueError(f"all spacings must be > 0, got {spacing}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def npoints(self) -> int:
        return int(np.prod(self.dims))


@dataclass(frozen=True)
class ScalarField:
    """A real-valued map on the grid: one value per grid point."""

    shape: GridShape
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).reshape(self.shape.dims)
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", _frozen(v))


@dataclass(frozen=True)
class ProbSegmentation:
    """Per-class probability fields on the pixel-wise simplex.

    ``channels[c - 1]`` is the probability map of class ``c``; class 1 is
    the background.  Channel values must be >= 0 and sum to 1 at every
    grid point (tolerance ``SIMPLEX_TOL``) unless ``validate=False``.
    """

    shape: GridShape
    probs: np.ndarray = field(repr=False)  # (K, *dims)
    validate: bool = True

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != self.shape.ndim + 1:
            raise ValueError(f"expected (K, {'x'.join(map(str, self.shape.dims))}) stack")
        if tuple(p.shape[1:]) != self.shape.dims:
            raise ValueError(f"channel shape {p.shape[1:]} does not match grid {self.shape.dims}")
        if p.shape[0] < 2:
            raise ValueError("need at least 2 classes (background + 1 foreground)")
        if self.validate:
            if np.any(p < 0):
                raise ValueError("negative probabilities")
            total = p.sum(axis=0)
            err = np.abs(total - 1.0).max()
            if err > SIMPLEX_TOL:
                raise ValueError(f"channels do not sum to 1 (max |sum-1| = {err:.3g})")
        object.__setattr__(self, "probs", _frozen(p))

    @property
    def K(self) -> int:
        return int(self.probs.shape[0])

    def channel(self, c: int) -> ScalarField:
        """Probability field of class ``c`` (1-based)."""
        if not 1 <= c <= self.K:
            raise ValueError(f"class {c} out of range [1, {self.K}]")
        return ScalarField(self.shape, self.probs[c - 1])


@dataclass(frozen=True)
class LabelMap:
    """Dense class indices in [1, K]; mutually exclusive by construction."""

    shape: GridShape
    labels: np.ndarray = field(repr=False)
    K: int = 0

    def __post_init__(self):
        lab = np.asarray(self.labels).reshape(self.shape.dims)
        if not np.issubdtype(lab.dtype, np.integer):
            raise ValueError("labels must be integers")
        K = self.K if self.K else int(lab.max())
        if lab.min() < 1 or lab.max() > K:
            raise ValueError(f"labels must lie in [1, {K}]")
        object.__setattr__(self, "labels", _frozen(lab.astype(np.int64)))
        object.__setattr__(self, "K", K)


# A BitField is just a dense boolean grid.
BitField = np.ndarray


def union_field(seg: ProbSegmentation, classes: Iterable[int]) -> ScalarField:
    """Pointwise probability of belonging to any class in ``classes``.

    Channels are mutually exclusive, so the union probability is the sum of
    the selected channels; a singleton set returns that channel unchanged.
    Only foreground classes (>= 2) are allowed.
    """
    cls = sorted(set(int(c) for c in classes))
    if not cls:
        raise ValueError("empty class set")
    for c in cls:
        if not 2 <= c <= seg.K:
            raise ValueError(f"class {c} out of foreground range [2, {seg.K}]")
    total = seg.probs[[c - 1 for c in cls]].sum(axis=0)
    return ScalarField(seg.shape, total)


def argmax_labels(seg: ProbSegmentation) -> LabelMap:
    """Discrete segmentation maximising pixel-wise probability.

    Ties resolve to the lowest class index (np.argmax picks the first max).
    """
    lab = np.argmax(seg.probs, axis=0) + 1
    return LabelMap(seg.shape, lab, K=seg.K)


def binarize(fld: ScalarField, p: float) -> BitField:
    """Boolean mask of grid points with value >= p (superlevel set)."""
    return fld.values >= p


def one_hot(labels: LabelMap) -> ProbSegmentation:
    """Encode a LabelMap as a 0/1 ProbSegmentation with K channels."""
    K = labels.K
    probs = np.zeros((K,) + labels.shape.dims, dtype=np.float64)
    for c in range(1, K + 1):
        probs[c - 1][labels.labels == c] = 1.0
    return ProbSegmentation(labels.shape, probs)

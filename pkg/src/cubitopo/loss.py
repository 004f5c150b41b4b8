"""Multi-class topological loss, similarity term, and their subgradients.

For every declared class subset the union field's barcode is split, per
dimension, into the ``B`` most persistent bars (matched to the prior) and
the rest (superfluous).  Writing ``A`` for the matched and ``Z`` for the
superfluous total persistence, each term contributes ``B - A + Z``;
maximizing matched persistence while suppressing everything else drives
the field toward the prior.

Persistence is piecewise linear in the grid values, so the gradient is a
subgradient: -1/+1 scattered at the critical points of matched bars,
flipped for superfluous ones, broadcast into every channel of the subset
(union fields are channel sums).  The essential bar's death is pinned at
0 and contributes no death gradient.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .complexes import V_CONSTRUCTION
from .grid import GridShape, ProbSegmentation, union_field
from .persistence import barcodes_parallel


@dataclass(frozen=True)
class BettiPrior:
    """Target Betti vectors per class subset.

    ``entries`` maps sorted tuples of foreground class indices (singletons,
    pairs, and, for 3D evaluation, triples) to Betti vectors of length
    ``ndim``.  ``class_names`` lists all classes in file order, background
    first; subsets are rendered as ``|``-joined names in that order.
    """

    ndim: int
    class_names: tuple[str, ...]
    entries: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.ndim not in (2, 3):
            raise ValueError("prior dims must be 2 or 3")
        if len(self.class_names) < 2:
            raise ValueError("need a background plus at least one foreground class")
        K = len(self.class_names)
        norm = {}
        for subset, vec in self.entries.items():
            subset = tuple(sorted(int(c) for c in subset))
            if len(set(subset)) != len(subset):
                raise ValueError(f"duplicate classes in subset {subset}")
            for c in subset:
                if c == 1:
                    raise ValueError("background (class 1) cannot appear in a prior subset")
                if not 2 <= c <= K:
                    raise ValueError(f"class {c} out of range [2, {K}]")
            vec = tuple(int(b) for b in vec)
            if len(vec) != self.ndim:
                raise ValueError(
                    f"Betti vector for {self.subset_key(subset)} has length {len(vec)}, expected {self.ndim}"
                )
            if any(b < 0 for b in vec):
                raise ValueError(f"negative Betti number in {self.subset_key(subset)}")
            norm[subset] = vec
        object.__setattr__(self, "entries", norm)
        object.__setattr__(self, "class_names", tuple(self.class_names))

    @property
    def K(self) -> int:
        return len(self.class_names)

    def subset_key(self, subset) -> str:
        return "|".join(self.class_names[c - 1] for c in sorted(subset))

    def loss_subsets(self) -> list[tuple[int, ...]]:
        """Singletons and pairs, in deterministic (size, index) order."""
        subs = [s for s in self.entries if len(s) <= 2]
        return sorted(subs, key=lambda s: (len(s), s))

    def eval_subsets(self, ndim: int) -> list[tuple[int, ...]]:
        """Subsets the Betti error sums over: +triples in 3D.

        Raises when a required subset is missing from the prior.
        """
        max_size = 3 if ndim == 3 else 2
        fg = range(2, self.K + 1)
        required = []
        for size in range(1, max_size + 1):
            required.extend(combinations(fg, size))
        missing = [s for s in required if s not in self.entries]
        if missing:
            raise ValueError(f"prior is missing subset {self.subset_key(missing[0])}")
        return required

    def restrict(self, max_size: int) -> "BettiPrior":
        """Prior with only subsets up to ``max_size`` (1 = per-class only)."""
        kept = {s: v for s, v in self.entries.items() if len(s) <= max_size}
        return BettiPrior(self.ndim, self.class_names, kept)

    def to_json(self) -> str:
        betti = {self.subset_key(s): list(v) for s, v in sorted(self.entries.items(), key=lambda kv: (len(kv[0]), kv[0]))}
        return json.dumps(
            {"dims": self.ndim, "classes": list(self.class_names), "betti": betti}, indent=2
        ) + "\n"


def prior_from_json(text: str) -> BettiPrior:
    """Parse a prior document: {"dims", "classes", "betti": {"a|b": [..]}}."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ValueError(f"malformed prior JSON: {e}") from None
    for key in ("dims", "classes", "betti"):
        if key not in doc:
            raise ValueError(f"prior JSON missing '{key}'")
    names = [str(c) for c in doc["classes"]]
    if len(set(names)) != len(names):
        raise ValueError("duplicate class names in prior")
    index = {name: i + 1 for i, name in enumerate(names)}
    entries = {}
    for key, vec in doc["betti"].items():
        subset = []
        for name in str(key).split("|"):
            if name not in index:
                raise ValueError(f"prior entry '{key}' names unknown class '{name}'")
            subset.append(index[name])
        if not isinstance(vec, list):
            raise ValueError(f"prior entry '{key}' must map to a list of Betti numbers")
        entries[tuple(subset)] = vec
    try:
        return BettiPrior(int(doc["dims"]), tuple(names), entries)
    except ValueError as e:
        raise ValueError(f"invalid prior: {e}") from None


def load_prior(path) -> BettiPrior:
    with open(path) as f:
        return prior_from_json(f.read())


@dataclass(frozen=True)
class GradField:
    """Per-channel loss gradient at every grid point."""

    shape: GridShape
    data: np.ndarray  # (K, *dims)


@dataclass(frozen=True)
class LossBreakdown:
    """Loss value with its per-(subset, dimension) (B, A, Z) terms."""

    total: float
    per_term: dict  # (subset key, dim) -> (B, A, Z)
    mse: float = 0.0
    lam: float = 0.0

    @property
    def combined(self) -> float:
        return self.total + self.lam * self.mse


def topo_loss(
    seg: ProbSegmentation,
    prior: BettiPrior,
    construction: str = V_CONSTRUCTION,
    threads: int | None = None,
) -> tuple[LossBreakdown, GradField]:
    """Topological loss over all declared singletons and pairs."""
    if prior.K != seg.K:
        raise ValueError(f"prior has {prior.K} classes, segmentation has {seg.K}")
    subsets = prior.loss_subsets()
    if not subsets:
        raise ValueError("prior declares no singleton or pair subsets")
    keys = [prior.subset_key(s) for s in subsets]
    fields = [union_field(seg, s) for s in subsets]
    barcodes = barcodes_parallel(fields, construction, seg.shape.ndim - 1, threads, keys)

    grad = np.zeros_like(seg.probs)
    per_term = {}
    total = 0.0
    for subset, key, bc in zip(subsets, keys, barcodes):
        gfield = np.zeros(seg.shape.npoints, dtype=np.float64)
        vec = prior.entries[subset]
        for d in range(seg.shape.ndim):
            ranked = bc.rank_order(d)
            B = int(vec[d])
            pers = bc.births[ranked] - bc.deaths[ranked]
            A = float(pers[:B].sum())
            Z = float(pers[B:].sum())
            total += B - A + Z
            per_term[(key, d)] = (B, A, Z)
            matched, rest = ranked[:B], ranked[B:]
            np.add.at(gfield, bc.birth_points[matched], -1.0)
            np.add.at(gfield, bc.birth_points[rest], 1.0)
            md = matched[bc.death_points[matched] >= 0]
            rd = rest[bc.death_points[rest] >= 0]
            np.add.at(gfield, bc.death_points[md], 1.0)
            np.add.at(gfield, bc.death_points[rd], -1.0)
        gfield = gfield.reshape(seg.shape.dims)
        for c in subset:  # union is a channel sum: broadcast via chain rule
            grad[c - 1] += gfield
    return LossBreakdown(total, per_term), GradField(seg.shape, grad)


def mse_loss(current: ProbSegmentation, reference: ProbSegmentation) -> tuple[float, GradField]:
    """Mean squared difference over all points and channels, per-point mean.

    Normalized by the number of grid points (not points x channels), so
    value and gradient are grid-size invariant.
    """
    if current.shape.dims != reference.shape.dims or current.K != reference.K:
        raise ValueError("segmentation shapes differ")
    npts = current.shape.npoints
    diff = current.probs - reference.probs
    value = float((diff * diff).sum() / npts)
    return value, GradField(current.shape, 2.0 / npts * diff)


def combined_loss(
    seg: ProbSegmentation,
    reference: ProbSegmentation,
    prior: BettiPrior,
    lam: float,
    construction: str = V_CONSTRUCTION,
    threads: int | None = None,
) -> tuple[LossBreakdown, GradField]:
    """Topological loss plus lam * similarity term, with summed gradient."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    breakdown, tgrad = topo_loss(seg, prior, construction, threads)
    mval, mgrad = mse_loss(seg, reference)
    out = LossBreakdown(breakdown.total, breakdown.per_term, mval, float(lam))
    return out, GradField(seg.shape, tgrad.data + lam * mgrad.data)

"""Filtered cubical complexes over scalar fields, in both construction modes.

Cells live on a "doubled" grid: a cell is addressed by one coordinate per
axis, each in ``[0, D_a - 1]`` where ``D`` is the doubled extent; the parity
pattern encodes the cell type (even = point extent, odd = interval extent)
and the number of odd coordinates is the cell dimension.  Cell ids are
row-major linear indices into the doubled grid.

V-construction (grid points are 0-cells, 4-/6-connected foreground):
doubled extents ``2*n - 1``, grid point g at coordinate ``2*g``, and a
cell's filtration value is the minimum over its vertices.

T-construction (grid points are top cells, 8-/26-connected foreground):
doubled extents ``2*n + 1``, grid point g at coordinate ``2*g + 1``, and a
cell's filtration value is the maximum over its incident top cells.

Both modes are oriented for a superlevel sweep (descending threshold p):
under the resulting total order (value descending, dimension ascending,
id ascending) every face enters no later than any of its cofaces.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .grid import GridShape, ScalarField

V_CONSTRUCTION = "V"
T_CONSTRUCTION = "T"


def _normalize_construction(construction: str) -> str:
    c = str(construction).upper()
    if c not in (V_CONSTRUCTION, T_CONSTRUCTION):
        raise ValueError(f"construction must be 'V' or 'T', got {construction!r}")
    return c


@dataclass(frozen=True)
class Cell:
    """One cell of a complex: doubled-grid id, coordinates and dimension."""

    id: int
    coords: tuple[int, ...]
    dim: int


@dataclass(frozen=True)
class FilteredComplex:
    """A cubical complex with one filtration value per cell.

    ``cell_values`` holds the filtration value of every cell on the doubled
    grid; ``cell_points`` the flat grid index of the grid point attaining
    that value (ties resolved to the lowest linear index).  ``point_values``
    keeps the originating field, flattened.
    """

    shape: GridShape
    construction: str
    cell_values: np.ndarray = field(repr=False)
    cell_points: np.ndarray = field(repr=False)
    point_values: np.ndarray = field(repr=False)

    @property
    def ndim(self) -> int:
        return self.shape.ndim

    @property
    def doubled_dims(self) -> tuple[int, ...]:
        return self.cell_values.shape

    @property
    def n_cells(self) -> int:
        return int(self.cell_values.size)

    def cell(self, cell_id: int) -> Cell:
        """Decode a doubled-grid linear id into a Cell."""
        if not 0 <= cell_id < self.n_cells:
            raise ValueError(f"cell id {cell_id} out of range [0, {self.n_cells})")
        coords = tuple(int(c) for c in np.unravel_index(cell_id, self.doubled_dims))
        dim = sum(c % 2 for c in coords)
        return Cell(int(cell_id), coords, dim)


def _pool_axis(vals, pts, ax, doubled, pick_right):
    """Interleave point/interval extents along one axis of the doubled grid."""
    n = vals.shape[ax]
    shp = list(vals.shape)
    shp[ax] = doubled
    out_v = np.empty(shp, dtype=vals.dtype)
    out_p = np.empty(shp, dtype=pts.dtype)

    def ax_slice(s):
        idx = [slice(None)] * vals.ndim
        idx[ax] = s
        return tuple(idx)

    if doubled == 2 * n - 1:  # V: points at even coordinates
        out_v[ax_slice(slice(0, doubled, 2))] = vals
        out_p[ax_slice(slice(0, doubled, 2))] = pts
        lo, hi = ax_slice(slice(0, n - 1)), ax_slice(slice(1, n))
        odd = ax_slice(slice(1, doubled, 2))
    else:  # T: points at odd coordinates, boundary faces copy the edge point
        out_v[ax_slice(slice(1, doubled, 2))] = vals
        out_p[ax_slice(slice(1, doubled, 2))] = pts
        out_v[ax_slice(slice(0, 1))] = vals[ax_slice(slice(0, 1))]
        out_p[ax_slice(slice(0, 1))] = pts[ax_slice(slice(0, 1))]
        out_v[ax_slice(slice(doubled - 1, doubled))] = vals[ax_slice(slice(n - 1, n))]
        out_p[ax_slice(slice(doubled - 1, doubled))] = pts[ax_slice(slice(n - 1, n))]
        lo, hi = ax_slice(slice(0, n - 1)), ax_slice(slice(1, n))
        odd = ax_slice(slice(2, doubled - 1, 2))

    lv, rv, lp, rp = vals[lo], vals[hi], pts[lo], pts[hi]
    take = pick_right(lv, rv, lp, rp)
    out_v[odd] = np.where(take, rv, lv)
    out_p[odd] = np.where(take, rp, lp)
    return out_v, out_p


def build_complex(fld: ScalarField, construction: str = V_CONSTRUCTION) -> FilteredComplex:
    """Build the filtered cubical complex of a field in the given mode."""
    construction = _normalize_construction(construction)
    dims = fld.shape.dims
    if any(d < 1 for d in dims):
        raise ValueError(f"degenerate grid extents {dims}")
    vals = np.asarray(fld.values, dtype=np.float64)
    pts = np.arange(vals.size, dtype=np.int64).reshape(dims)

    if construction == V_CONSTRUCTION:
        # min over vertices; ties go to the lowest grid index
        pick = lambda lv, rv, lp, rp: (rv < lv) | ((rv == lv) & (rp < lp))
        doubled = [2 * n - 1 for n in dims]
    else:
        # max over incident top cells; ties go to the lowest grid index
        pick = lambda lv, rv, lp, rp: (rv > lv) | ((rv == lv) & (rp < lp))
        doubled = [2 * n + 1 for n in dims]

    for ax in range(len(dims)):
        vals, pts = _pool_axis(vals, pts, ax, doubled[ax], pick)

    vals.flags.writeable = False
    pts.flags.writeable = False
    flat = np.asarray(fld.values, dtype=np.float64).reshape(-1)
    flat.flags.writeable = False
    return FilteredComplex(fld.shape, construction, vals, pts, flat)


def boundary(cplx: FilteredComplex, cell: Cell | int) -> list[Cell]:
    """The 2*dim codimension-1 faces of a cell (empty for 0-cells)."""
    if isinstance(cell, (int, np.integer)):
        cell = cplx.cell(int(cell))
    ddims = cplx.doubled_dims
    strides = np.array([int(np.prod(ddims[a + 1:])) for a in range(len(ddims))], dtype=np.int64)
    faces = []
    for ax, c in enumerate(cell.coords):
        if c % 2 == 1:
            for sign in (-1, 1):
                faces.append(cplx.cell(cell.id + sign * int(strides[ax])))
    return faces


_CELL_ID_CACHE: dict = {}


def cells_of_dim(doubled_dims: tuple[int, ...], d: int) -> np.ndarray:
    """Sorted doubled-grid ids of all d-cells (those with d odd coordinates).

    Cached per (shape, d): the enumeration is shape-only and the barcode
    hot path asks for it on every call.  The returned array is read-only.
    """
    key = (tuple(doubled_dims), d)
    hit = _CELL_ID_CACHE.get(key)
    if hit is not None:
        return hit
    ids = _cells_of_dim(tuple(doubled_dims), d)
    ids.flags.writeable = False
    if len(_CELL_ID_CACHE) > 64:  # drop stale shapes; tests sweep many sizes
        _CELL_ID_CACHE.clear()
    _CELL_ID_CACHE[key] = ids
    return ids


def _cells_of_dim(doubled_dims: tuple[int, ...], d: int) -> np.ndarray:
    n = len(doubled_dims)
    if not 0 <= d <= n:
        raise ValueError(f"cell dimension {d} out of range [0, {n}]")
    chunks = []
    for odd_axes in combinations(range(n), d):
        ranges = []
        for a in range(n):
            if a in odd_axes:
                ranges.append(np.arange(1, doubled_dims[a], 2, dtype=np.int64))
            else:
                ranges.append(np.arange(0, doubled_dims[a], 2, dtype=np.int64))
        if any(r.size == 0 for r in ranges):
            continue
        mesh = np.meshgrid(*ranges, indexing="ij")
        chunks.append(np.ravel_multi_index(mesh, doubled_dims).ravel())
    if not chunks:
        return np.empty(0, dtype=np.int64)
    return np.sort(np.concatenate(chunks))


def cell_counts_at(cplx: FilteredComplex, p: float) -> list[int]:
    """Number of cells per dimension present at threshold p (value >= p)."""
    flat = cplx.cell_values.reshape(-1)
    counts = []
    for d in range(cplx.ndim + 1):
        ids = cells_of_dim(cplx.doubled_dims, d)
        counts.append(int(np.count_nonzero(flat[ids] >= p)))
    return counts

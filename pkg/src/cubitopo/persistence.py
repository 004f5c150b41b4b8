"""Persistence barcodes with critical-cell locations.

Dim-0 features come from an elder-rule union-find over grid points sorted
by descending value; higher dimensions from mod-2 boundary-matrix reduction
processed top dimension first so that paired cells clear columns of the
block below (twist optimization).  Superlevel filtrations over a full grid
always terminate in the complete, contractible box complex, so the single
surviving component is the only essential feature; its death is pinned to
p = 0, the infimum of the probability domain.

Zero-persistence pairs are counted per dimension but never materialized:
they are invisible to exports, ranking, Betti counting and the loss.

Barcodes store their intervals as flat arrays (a random field produces
tens of thousands of noise bars); ``Bar`` objects are built lazily.
"""

from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .complexes import (
    Cell,
    FilteredComplex,
    V_CONSTRUCTION,
    build_complex,
    cells_of_dim,
)
from .grid import ScalarField


@dataclass(frozen=True)
class Bar:
    """One persistence interval under the descending-p convention.

    ``birth >= death``; the essential feature has ``death == 0.0`` and no
    death cell.  ``birth_point``/``death_point`` are the flat grid indices
    whose values realize the critical values (the handles used for
    gradient scatter).
    """

    dim: int
    birth: float
    death: float
    birth_cell: Cell
    death_cell: Cell | None
    birth_point: int
    death_point: int | None

    @property
    def persistence(self) -> float:
        return self.birth - self.death

    @property
    def essential(self) -> bool:
        return self.death_cell is None


@dataclass(frozen=True)
class Barcode:
    """All nonzero-persistence bars of one field, plus zero-pair counts.

    Array layout: entry i describes one bar; ``death_cells``/``death_points``
    hold -1 for the essential bar.  ``zero_counts[d]`` counts the
    zero-persistence pairs of dimension d that were suppressed.
    """

    field_id: str
    construction: str
    ndim: int
    doubled_dims: tuple[int, ...]
    dims: np.ndarray = field(repr=False)
    births: np.ndarray = field(repr=False)
    deaths: np.ndarray = field(repr=False)
    birth_cells: np.ndarray = field(repr=False)
    death_cells: np.ndarray = field(repr=False)
    birth_points: np.ndarray = field(repr=False)
    death_points: np.ndarray = field(repr=False)
    zero_counts: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return int(self.dims.size)

    @property
    def persistences(self) -> np.ndarray:
        return self.births - self.deaths

    def _cell(self, cell_id: int) -> Cell:
        coords = tuple(int(c) for c in np.unravel_index(cell_id, self.doubled_dims))
        return Cell(int(cell_id), coords, sum(c % 2 for c in coords))

    def _bar(self, i: int) -> Bar:
        dc = int(self.death_cells[i])
        return Bar(
            int(self.dims[i]),
            float(self.births[i]),
            float(self.deaths[i]),
            self._cell(int(self.birth_cells[i])),
            self._cell(dc) if dc >= 0 else None,
            int(self.birth_points[i]),
            int(self.death_points[i]) if dc >= 0 else None,
        )

    @property
    def bars(self) -> tuple[Bar, ...]:
        return tuple(self._bar(i) for i in range(len(self)))

    def dim_indices(self, dim: int) -> np.ndarray:
        return np.flatnonzero(self.dims == dim)

    def rank_order(self, dim: int) -> np.ndarray:
        """Indices of dim-d bars by descending persistence.

        Ties break by higher birth, then by lower birth-cell id: a total,
        deterministic order.
        """
        idx = self.dim_indices(dim)
        if idx.size == 0:
            return idx
        pers = self.births[idx] - self.deaths[idx]
        order = np.lexsort((self.birth_cells[idx], -self.births[idx], -pers))
        return idx[order]

    def betti_at(self, p: float) -> tuple[int, ...]:
        """Betti numbers at threshold p: bars with birth >= p > death."""
        alive = (self.births >= p) & (p > self.deaths)
        return tuple(int(np.count_nonzero(alive & (self.dims == d))) for d in range(self.ndim))


def rank_bars(barcode: Barcode, dim: int) -> list[Bar]:
    """Bars of one dimension in descending-persistence rank order."""
    if dim < 0:
        raise ValueError("dim must be >= 0")
    return [barcode._bar(int(i)) for i in barcode.rank_order(dim)]


def _default_threads() -> int:
    env = os.environ.get("CUBITOPO_THREADS", "")
    if env.strip():
        try:
            n = int(env)
            if n >= 1:
                return n
        except ValueError:
            pass
    return os.cpu_count() or 1


def _argsort_desc(vals: np.ndarray) -> np.ndarray:
    """Stable argsort by descending value (ties keep ascending position).

    Non-negative doubles order like their uint64 bit patterns, which lets
    numpy use radix sort; anything else falls back to a stable mergesort.
    """
    w = vals + 0.0  # fresh buffer; also normalizes -0.0
    if w.size == 0:
        return np.empty(0, dtype=np.int64)
    if np.min(w) >= 0.0:
        key = np.iinfo(np.uint64).max - w.view(np.uint64)
        return np.argsort(key, kind="stable")
    return np.argsort(-w, kind="stable")


def _t_offsets(n: int) -> np.ndarray:
    offs = []
    for idx in np.ndindex(*(3,) * n):
        off = [i - 1 for i in idx]
        if any(off):
            offs.append(off)
    return np.array(offs, dtype=np.int64)


_STATIC_CACHE: dict = {}


def _edge_endpoints(ddims: tuple[int, ...], gdims: tuple[int, ...]) -> tuple[np.ndarray, np.ndarray]:
    """Grid-point endpoints of every 1-cell, in enumeration order (V mode)."""
    key = ("edge", ddims)
    hit = _STATIC_CACHE.get(key)
    if hit is not None:
        return hit
    ids = cells_of_dim(ddims, 1)
    coords = np.unravel_index(ids, ddims)
    u = np.zeros(ids.size, dtype=np.int64)
    v = np.zeros(ids.size, dtype=np.int64)
    for a, c in enumerate(coords):
        odd = (c & 1).astype(bool)
        u = u * gdims[a] + (np.where(odd, c - 1, c) >> 1)
        v = v * gdims[a] + (np.where(odd, c + 1, c) >> 1)
    u.flags.writeable = False
    v.flags.writeable = False
    if len(_STATIC_CACHE) > 128:
        _STATIC_CACHE.clear()
    _STATIC_CACHE[key] = (u, v)
    return u, v


def _dual_endpoints(ddims: tuple[int, ...]) -> tuple[np.ndarray, np.ndarray]:
    """Dense top-cell indices flanking every (N-1)-cell; out-of-grid = ntop."""
    key = ("dual", ddims)
    hit = _STATIC_CACHE.get(key)
    if hit is not None:
        return hit
    n = len(ddims)
    ids = cells_of_dim(ddims, n - 1)
    coords = np.unravel_index(ids, ddims)
    tdims = [(d - 1) >> 1 for d in ddims]
    ntop = int(np.prod(tdims))
    tu = np.zeros(ids.size, dtype=np.int64)
    tv = np.zeros(ids.size, dtype=np.int64)
    oob_u = np.zeros(ids.size, dtype=bool)
    oob_v = np.zeros(ids.size, dtype=bool)
    for a, c in enumerate(coords):
        even = (c & 1) == 0
        oob_u |= even & (c == 0)
        oob_v |= even & (c == ddims[a] - 1)
        cu = np.where(even, c - 2, c - 1) >> 1
        cv = np.where(even, c, c - 1) >> 1
        tu = tu * tdims[a] + cu
        tv = tv * tdims[a] + cv
    tu[oob_u] = ntop
    tv[oob_v] = ntop
    tu.flags.writeable = False
    tv.flags.writeable = False
    if len(_STATIC_CACHE) > 128:
        _STATIC_CACHE.clear()
    _STATIC_CACHE[key] = (tu, tv)
    return tu, tv


def _point_cell_ids(cplx: FilteredComplex, pts: np.ndarray) -> np.ndarray:
    """Doubled-grid ids of the cells representing grid points."""
    dims = cplx.shape.dims
    coords = np.unravel_index(pts, dims)
    if cplx.construction == V_CONSTRUCTION:
        dc = [2 * c for c in coords]
    else:
        dc = [2 * c + 1 for c in coords]
    return np.ravel_multi_index(dc, cplx.doubled_dims)


def compute_barcode(cplx: FilteredComplex, max_dim: int | None = None, field_id: str = "") -> Barcode:
    """Barcode of a filtered complex for dimensions 0..max_dim."""
    n = cplx.ndim
    if max_dim is None:
        max_dim = n - 1
    if not 0 <= max_dim <= n - 1:
        raise ValueError(f"max_dim must be in [0, {n - 1}], got {max_dim}")

    vals = cplx.point_values
    ddims = cplx.doubled_dims
    ddims_arr = np.array(ddims, dtype=np.int64)
    gdims_arr = np.array(cplx.shape.dims, dtype=np.int64)
    dflat = cplx.cell_values.reshape(-1)
    pflat = cplx.cell_points.reshape(-1)
    strides = np.array([int(np.prod(ddims[a + 1:])) for a in range(n)], dtype=np.int64)

    zero_counts = {d: 0 for d in range(n)}
    out_dims: list[np.ndarray] = []
    out_births: list[np.ndarray] = []
    out_deaths: list[np.ndarray] = []
    out_bcells: list[np.ndarray] = []
    out_dcells: list[np.ndarray] = []
    out_bpts: list[np.ndarray] = []
    out_dpts: list[np.ndarray] = []

    def emit(d, births, deaths, bcells, dcells, bpts, dpts):
        out_dims.append(np.full(births.size, d, dtype=np.int8))
        out_births.append(births)
        out_deaths.append(deaths)
        out_bcells.append(bcells.astype(np.int64))
        out_dcells.append(dcells.astype(np.int64))
        out_bpts.append(bpts.astype(np.int64))
        out_dpts.append(dpts.astype(np.int64))

    def sorted_desc(d):
        ids = cells_of_dim(ddims, d)
        return ids[_argsort_desc(dflat[ids])]

    edges_desc = None
    edge_order = None
    tree_edges = None
    if cplx.construction == V_CONSTRUCTION:
        # dim 0 by Kruskal: 1-cells are exactly the 4-/6-adjacency, with
        # filtration value equal to the min endpoint
        edge_ids = cells_of_dim(ddims, 1)
        edge_order = _argsort_desc(dflat[edge_ids])
        edges_desc = edge_ids[edge_order]
        eu, ev = _edge_endpoints(ddims, cplx.shape.dims)
        mb, mpos, ess_pt = _kernels.kruskal_dim0(
            np.ascontiguousarray(eu[edge_order]), np.ascontiguousarray(ev[edge_order]), vals
        )
        me = edges_desc[mpos]
        tree_edges = me  # negative 1-cells: every dim-0 merge, zero bars included
        bvals = vals[mb]
        dvals = dflat[me]
        keep = bvals > dvals
        zero_counts[0] += int(np.count_nonzero(~keep))
        kb, ke = mb[keep], me[keep]
        emit(0, bvals[keep], dvals[keep], _point_cell_ids(cplx, kb), ke, kb, pflat[ke])
    else:
        # dim 0 by elder-rule scan over grid points (8-/26-neighbourhoods)
        order = _argsort_desc(vals)
        rank = np.empty_like(order)
        rank[order] = np.arange(order.size, dtype=np.int64)
        mb, ma, _ = _kernels.union_find_merges(order, rank, gdims_arr, _t_offsets(n))
        ess_pt = int(order[0])
        bvals = vals[mb]
        dvals = vals[ma]
        keep = bvals > dvals
        zero_counts[0] += int(np.count_nonzero(~keep))
        kb, ka = mb[keep], ma[keep]
        # death cell is the arriving top cell; its value equals the merge value
        emit(0, bvals[keep], dvals[keep], _point_cell_ids(cplx, kb), _point_cell_ids(cplx, ka), kb, ka)

    ess_pt = int(ess_pt)
    ess_birth = float(vals[ess_pt])
    if ess_birth > 0.0:
        emit(
            0,
            np.array([ess_birth]),
            np.array([0.0]),
            _point_cell_ids(cplx, np.array([ess_pt])),
            np.array([-1]),
            np.array([ess_pt]),
            np.array([-1]),
        )
    else:
        zero_counts[0] += 1

    if max_dim >= 1:
        # top dimension through the complement's dual graph; the reversed
        # descending order is ascending by value with ties by descending id
        if n == 2 and edge_order is not None:
            top_desc, top_order = edges_desc, edge_order
        else:
            top_ids_nm1 = cells_of_dim(ddims, n - 1)
            top_order = _argsort_desc(dflat[top_ids_nm1])
            top_desc = top_ids_nm1[top_order]
        tu, tv = _dual_endpoints(ddims)
        asc = top_order[::-1]
        top_ids = cells_of_dim(ddims, n)
        mpos2, mtop = _kernels.dual_uf_top(
            np.ascontiguousarray(tu[asc]), np.ascontiguousarray(tv[asc]), dflat[top_ids]
        )
        me2 = top_desc[::-1][mpos2]
        mt2 = top_ids[mtop]
        bvals = dflat[me2]
        dvals = dflat[mt2]
        keep = bvals > dvals
        zero_counts[n - 1] += int(np.count_nonzero(~keep))
        if n - 1 <= max_dim:
            ke, kt = me2[keep], mt2[keep]
            emit(n - 1, bvals[keep], dvals[keep], ke, kt, pflat[ke], pflat[kt])

        if n == 3:
            # middle dimension by boundary reduction; the 2-cells paired in
            # the dual sweep are creators there, so their columns clear
            cleared = np.zeros(dflat.size, dtype=bool)
            cleared[me2] = True
            cols = top_desc[~cleared[top_desc]]
            if edges_desc is None:
                edges_desc = sorted_desc(1)
            row_rank = np.full(dflat.size, -1, dtype=np.int32)
            row_rank[edges_desc] = np.arange(edges_desc.size, dtype=np.int32)
            if tree_edges is not None:
                # compression: rows of negative 1-cells (the dim-0 merge
                # edges) never carry pivots and can be dropped up front
                row_rank[tree_edges] = -2
            pr, pc = _kernels.reduce_boundary(
                np.ascontiguousarray(cols), edges_desc.size, row_rank, ddims_arr, strides
            )
            row_cells = edges_desc[pr.astype(np.int64)]
            col_cells = cols[pc]
            bv = dflat[row_cells]
            dv = dflat[col_cells]
            keep = bv > dv
            zero_counts[1] += int(np.count_nonzero(~keep))
            if 1 <= max_dim:
                rc, cc = row_cells[keep], col_cells[keep]
                emit(1, bv[keep], dv[keep], rc, cc, pflat[rc], pflat[cc])

    return Barcode(
        field_id,
        cplx.construction,
        n,
        tuple(ddims),
        np.concatenate(out_dims),
        np.concatenate(out_births),
        np.concatenate(out_deaths),
        np.concatenate(out_bcells),
        np.concatenate(out_dcells),
        np.concatenate(out_bpts),
        np.concatenate(out_dpts),
        zero_counts,
    )


def barcode_of_field(
    fld: ScalarField, construction: str = V_CONSTRUCTION, max_dim: int | None = None, field_id: str = ""
) -> Barcode:
    return compute_barcode(build_complex(fld, construction), max_dim, field_id)


def barcodes_parallel(
    fields: list[ScalarField],
    construction: str = V_CONSTRUCTION,
    max_dim: int | None = None,
    threads: int | None = None,
    field_ids: list[str] | None = None,
) -> list[Barcode]:
    """Barcodes of several fields; output order matches input order.

    Each field is independent, so results are identical to the sequential
    computation regardless of worker count.  Per-field failures re-raise
    with the offending index.
    """
    if not fields:
        raise ValueError("empty field list")
    if field_ids is None:
        field_ids = [""] * len(fields)
    threads = threads if threads and threads >= 1 else _default_threads()

    def one(i: int) -> Barcode:
        try:
            return barcode_of_field(fields[i], construction, max_dim, field_ids[i])
        except Exception as e:
            raise RuntimeError(f"barcode of field {i} failed: {e}") from e

    if threads == 1 or len(fields) == 1:
        return [one(i) for i in range(len(fields))]
    with ThreadPoolExecutor(max_workers=min(threads, len(fields))) as pool:
        return list(pool.map(one, range(len(fields))))


def format_barcode_csv(barcode: Barcode, points: bool = False) -> str:
    """Barcode as CSV: dim,birth,death,persistence,birth_cell,death_cell.

    Bars appear dimension-ascending, rank order within each dimension;
    cells print as doubled-coordinate tuples.  ``points=True`` appends the
    flat grid indices of the critical points.
    """
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["dim", "birth", "death", "persistence", "birth_cell", "death_cell"]
    if points:
        header += ["birth_point", "death_point"]
    w.writerow(header)
    for d in range(barcode.ndim):
        for i in barcode.rank_order(d):
            b = barcode._bar(int(i))
            row = [
                b.dim,
                repr(b.birth),
                repr(b.death),
                repr(b.persistence),
                str(b.birth_cell.coords),
                str(b.death_cell.coords) if b.death_cell is not None else "",
            ]
            if points:
                row += [b.birth_point, b.death_point if b.death_point is not None else ""]
            w.writerow(row)
    return buf.getvalue()


def write_barcode_csv(barcode: Barcode, path, points: bool = False):
    with open(path, "w", newline="") as f:
        f.write(format_barcode_csv(barcode, points))

"""Hot loops of the persistence engine.

Plain-Python definitions, jitted with numba when it is importable (nogil so
barcode workers can share cores, cached so CLI cold starts stay cheap).
The uncompiled fallback runs the identical code, so results are the same
either way, only slower.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


@njit(nogil=True, cache=True)
def _find(parent, x):
    root = x
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:  # path compression
        nxt = parent[x]
        parent[x] = root
        x = nxt
    return root


@njit(nogil=True, cache=True)
def union_find_merges(order, rank, dims, offsets):
    """Elder-rule union-find over grid points in filtration order.

    ``order`` lists flat grid indices sorted by descending value (ties by
    ascending index); ``rank`` is its inverse.  ``offsets`` holds the
    neighbourhood as coordinate steps, scanned in a fixed order.  Each merge
    is recorded as (birth point of the dying component, arriving point,
    already-present neighbour).
    """
    npts = order.shape[0]
    nax = dims.shape[0]
    noff = offsets.shape[0]
    parent = np.arange(npts, dtype=np.int64)
    birth = np.arange(npts, dtype=np.int64)

    merge_birth = np.empty(npts, dtype=np.int64)
    merge_at = np.empty(npts, dtype=np.int64)
    merge_nbr = np.empty(npts, dtype=np.int64)
    nmerge = 0

    coords = np.empty(nax, dtype=np.int64)
    for i in range(npts):
        v = order[i]
        rem = v
        for a in range(nax - 1, -1, -1):
            coords[a] = rem % dims[a]
            rem //= dims[a]
        for o in range(noff):
            u = 0
            ok = True
            for a in range(nax):
                c = coords[a] + offsets[o, a]
                if c < 0 or c >= dims[a]:
                    ok = False
                    break
                u = u * dims[a] + c
            if not ok:
                continue
            if rank[u] >= rank[v]:  # neighbour not yet in the filtration
                continue
            ru = _find(parent, u)
            rv = _find(parent, v)
            if ru == rv:
                continue
            if rank[birth[ru]] < rank[birth[rv]]:
                elder, younger = ru, rv
            else:
                elder, younger = rv, ru
            merge_birth[nmerge] = birth[younger]
            merge_at[nmerge] = v
            merge_nbr[nmerge] = u
            nmerge += 1
            parent[younger] = elder
    return merge_birth[:nmerge], merge_at[:nmerge], merge_nbr[:nmerge]


@njit(nogil=True, cache=True)
def kruskal_dim0(us, vs, pvals):
    """Dim-0 merges via Kruskal over 1-cells in filtration order (V mode).

    ``us``/``vs`` are the grid-point endpoints of the 1-cells, already in
    descending (value, ascending id) order; 1-cells encode exactly the
    4-/6-adjacency and their value is the min endpoint, so this scan is
    the elder-rule sweep.  As the root with the extremal birth always
    becomes the parent, every root is its component's birth point.
    Returns (birth points of dying components, merge positions, essential
    birth point).
    """
    npts = pvals.shape[0]
    parent = np.arange(npts, dtype=np.int64)
    ne = us.shape[0]
    merge_birth = np.empty(ne, dtype=np.int64)
    merge_pos = np.empty(ne, dtype=np.int64)
    nmerge = 0
    for i in range(ne):
        ru = _find(parent, us[i])
        rv = _find(parent, vs[i])
        if ru == rv:
            continue
        if pvals[ru] > pvals[rv] or (pvals[ru] == pvals[rv] and ru < rv):
            elder, younger = ru, rv
        else:
            elder, younger = rv, ru
        merge_birth[nmerge] = younger
        merge_pos[nmerge] = i
        nmerge += 1
        parent[younger] = elder
    return merge_birth[:nmerge], merge_pos[:nmerge], _find(parent, 0)


@njit(nogil=True, cache=True)
def dual_uf_top(tus, tvs, tvals):
    """Top-dimension pairs via union-find over the complement's dual graph.

    Dual nodes are the top cells (dense lexicographic indices) plus the
    outside node ``ntop``; ``tus``/``tvs`` give each (N-1)-cell's incident
    top cells in ascending filtration order, with out-of-grid sides mapped
    to the outside node.  Scanning dual edges in ascending value replays
    the superlevel sweep backwards: each merge pairs the edge (feature
    birth) with the dying component's minimal top cell (feature death).
    The outside node is always elder and never produces a pair; as roots
    carry their component's minimal member, no birth table is needed.
    """
    ntop = tvals.shape[0]
    omega = ntop
    parent = np.arange(ntop + 1, dtype=np.int64)
    ne = tus.shape[0]
    merge_pos = np.empty(ne, dtype=np.int64)
    merge_top = np.empty(ne, dtype=np.int64)
    nmerge = 0
    for i in range(ne):
        ru = _find(parent, tus[i])
        rv = _find(parent, tvs[i])
        if ru == rv:
            continue
        if ru == omega:
            elder, younger = ru, rv
        elif rv == omega:
            elder, younger = rv, ru
        elif tvals[ru] < tvals[rv] or (tvals[ru] == tvals[rv] and ru < rv):
            elder, younger = ru, rv
        else:
            elder, younger = rv, ru
        merge_pos[nmerge] = i
        merge_top[nmerge] = younger
        nmerge += 1
        parent[younger] = elder
    return merge_pos[:nmerge], merge_top[:nmerge]


@njit(nogil=True, cache=True)
def reduce_boundary(col_ids, nrows, row_rank, ddims, strides):
    """Mod-2 column reduction of one boundary block (dim d+1 over dim d).

    ``col_ids``: doubled-grid ids of the (d+1)-cells in filtration order,
    cleared columns already removed.  ``row_rank``: doubled id -> filtration
    rank of the d-cells (int32, -1 elsewhere; -2 marks compressed-away rows
    of negative d-cells, which can never carry a pivot); ``nrows`` d-cells
    exist.  Returns (paired row ranks, paired column positions); columns
    that reduce to zero are creators and produce no pair.
    """
    ncols = col_ids.shape[0]
    nax = ddims.shape[0]

    pivot_start = np.full(nrows, -1, dtype=np.int64)
    pivot_len = np.zeros(nrows, dtype=np.int32)

    pool_cap = 4 * ncols + 64
    pool = np.empty(pool_cap, dtype=np.int32)
    pool_used = 0

    cap = 64
    cur = np.empty(cap, dtype=np.int32)
    tmp = np.empty(cap, dtype=np.int32)

    pair_row = np.empty(ncols, dtype=np.int32)
    pair_col = np.empty(ncols, dtype=np.int64)
    npairs = 0

    faces = np.empty(2 * nax, dtype=np.int32)
    for j in range(ncols):
        cid = col_ids[j]
        nf = 0
        rem = cid
        for a in range(nax - 1, -1, -1):
            c = rem % ddims[a]
            rem //= ddims[a]
            if c & 1:
                r0 = row_rank[cid - strides[a]]
                if r0 >= 0:
                    faces[nf] = r0
                    nf += 1
                r1 = row_rank[cid + strides[a]]
                if r1 >= 0:
                    faces[nf] = r1
                    nf += 1
        for x in range(1, nf):  # insertion sort ascending
            key = faces[x]
            y = x - 1
            while y >= 0 and faces[y] > key:
                faces[y + 1] = faces[y]
                y -= 1
            faces[y + 1] = key
        clen = nf
        for x in range(nf):
            cur[x] = faces[x]

        while clen > 0:
            low = cur[clen - 1]
            if pivot_start[low] < 0:
                if pool_used + clen > pool_cap:
                    new_cap = pool_cap * 2
                    while pool_used + clen > new_cap:
                        new_cap *= 2
                    new_pool = np.empty(new_cap, dtype=np.int32)
                    new_pool[:pool_used] = pool[:pool_used]
                    pool = new_pool
                    pool_cap = new_cap
                pivot_start[low] = pool_used
                pivot_len[low] = clen
                for x in range(clen):
                    pool[pool_used + x] = cur[x]
                pool_used += clen
                pair_row[npairs] = low
                pair_col[npairs] = j
                npairs += 1
                break
            s = pivot_start[low]
            olen = pivot_len[low]
            need = clen + olen
            if need > cap:
                new_cap = cap * 2
                while need > new_cap:
                    new_cap *= 2
                new_cur = np.empty(new_cap, dtype=np.int32)
                new_tmp = np.empty(new_cap, dtype=np.int32)
                new_cur[:clen] = cur[:clen]
                cur = new_cur
                tmp = new_tmp
                cap = new_cap
            a_i = 0
            b_i = 0
            m = 0
            while a_i < clen and b_i < olen:  # sorted symmetric difference
                av = cur[a_i]
                bv = pool[s + b_i]
                if av == bv:
                    a_i += 1
                    b_i += 1
                elif av < bv:
                    tmp[m] = av
                    m += 1
                    a_i += 1
                else:
                    tmp[m] = bv
                    m += 1
                    b_i += 1
            while a_i < clen:
                tmp[m] = cur[a_i]
                m += 1
                a_i += 1
            while b_i < olen:
                tmp[m] = pool[s + b_i]
                m += 1
                b_i += 1
            swap = cur
            cur = tmp
            tmp = swap
            clen = m
    return pair_row[:npairs], pair_col[:npairs]


def warmup():
    """Trigger jit compilation on toy inputs (cheap no-op without numba)."""
    order = np.array([0, 1], dtype=np.int64)
    rank = np.array([0, 1], dtype=np.int64)
    dims = np.array([2, 1], dtype=np.int64)
    offsets = np.array([[-1, 0], [1, 0]], dtype=np.int64)
    union_find_merges(order, rank, dims, offsets)
    kruskal_dim0(np.array([0], dtype=np.int64), np.array([1], dtype=np.int64), np.array([1.0, 0.5]))
    dual_uf_top(np.array([0], dtype=np.int64), np.array([1], dtype=np.int64), np.array([0.2]))
    col_ids = np.array([1], dtype=np.int64)
    row_rank = np.array([0, -1, 1], dtype=np.int32)
    ddims = np.array([3], dtype=np.int64)
    strides = np.array([1], dtype=np.int64)
    reduce_boundary(col_ids, 2, row_rank, ddims, strides)

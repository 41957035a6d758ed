"""Hot numeric kernels, each with a numba ``@njit`` build and a pure-numpy fallback.

The backend is chosen once at import time. Set ``SPILLNET_BACKEND=numpy`` to
force the fallback path (useful for debugging and for the kernel benchmark);
any other value, or an environment where numba fails to import, selects numba
when available. All kernels operate on CSR-style ``(indptr, indices)`` int64
arrays so both lanes share the same calling convention.
"""

from __future__ import annotations

import os

import numpy as np

_REQUESTED = os.environ.get("SPILLNET_BACKEND", "numba").strip().lower()

try:
    if _REQUESTED == "numpy":
        raise ImportError
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised via the env flag
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


def active_backend() -> str:
    """Name of the kernel lane in use, ``"numba"`` or ``"numpy"``."""
    return "numba" if _HAVE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# truncated BFS shells
# ---------------------------------------------------------------------------


def _shells_numpy(indptr, indices, smax):
    n = indptr.size - 1
    stamp = np.full(n, -1, dtype=np.int64)
    order_parts = []
    dist_parts = []
    node_ptr = np.zeros(n + 1, dtype=np.int64)
    for src in range(n):
        frontier = np.array([src], dtype=np.int64)
        stamp[src] = src
        levels = [frontier]
        for s in range(1, smax + 1):
            if frontier.size == 0:
                break
            starts = indptr[frontier]
            lens = indptr[frontier + 1] - starts
            total = int(lens.sum())
            if total == 0:
                frontier = frontier[:0]
                continue
            # gather all neighbor slices of the frontier in one shot
            offs = np.repeat(starts - np.cumsum(lens) + lens, lens) + np.arange(total)
            cand = np.unique(indices[offs])
            cand = cand[stamp[cand] != src]
            stamp[cand] = src
            frontier = cand
            if cand.size:
                levels.append(cand)
        order = np.concatenate(levels)
        dist = np.repeat(np.arange(len(levels), dtype=np.int64),
                         [lv.size for lv in levels])
        order_parts.append(order)
        dist_parts.append(dist)
        node_ptr[src + 1] = node_ptr[src] + order.size
    return (node_ptr,
            np.concatenate(order_parts) if order_parts else np.zeros(0, np.int64),
            np.concatenate(dist_parts) if dist_parts else np.zeros(0, np.int64))


@njit(cache=True)
def _bfs_one(indptr, indices, src, smax, stamp, dist, queue):
    # standard queue BFS, truncated at smax; returns the visited count
    stamp[src] = src
    dist[src] = 0
    queue[0] = src
    head = 0
    tail = 1
    while head < tail:
        v = queue[head]
        head += 1
        dv = dist[v]
        if dv >= smax:
            continue
        for e in range(indptr[v], indptr[v + 1]):
            w = indices[e]
            if stamp[w] != src:
                stamp[w] = src
                dist[w] = dv + 1
                queue[tail] = w
                tail += 1
    return tail


@njit(cache=True)
def _shells_numba(indptr, indices, smax):
    n = indptr.size - 1
    stamp = np.full(n, -1, dtype=np.int64)
    dist = np.zeros(n, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    node_ptr = np.zeros(n + 1, dtype=np.int64)
    for src in range(n):
        cnt = _bfs_one(indptr, indices, src, smax, stamp, dist, queue)
        node_ptr[src + 1] = node_ptr[src] + cnt
    order = np.empty(node_ptr[n], dtype=np.int64)
    dists = np.empty(node_ptr[n], dtype=np.int64)
    stamp[:] = -1
    for src in range(n):
        cnt = _bfs_one(indptr, indices, src, smax, stamp, dist, queue)
        base = node_ptr[src]
        for t in range(cnt):
            order[base + t] = queue[t]
            dists[base + t] = dist[queue[t]]
    return node_ptr, order, dists


def truncated_shells(indptr, indices, smax):
    """BFS from every node, truncated at distance ``smax``.

    Returns ``(node_ptr, order, dist)`` where ``order[node_ptr[i]:node_ptr[i+1]]``
    lists the nodes within distance smax of i (i itself first, then by level)
    and ``dist`` holds their exact distances. Nodes beyond smax are absent.
    """
    if _HAVE_NUMBA:
        return _shells_numba(indptr, indices, np.int64(smax))
    return _shells_numpy(indptr, indices, int(smax))


# ---------------------------------------------------------------------------
# second-order path rows
# ---------------------------------------------------------------------------


def _second_order_numpy(indptr, indices, exclude_triangles):
    n = indptr.size - 1
    row_parts = []
    cnt_parts = []
    rp = np.zeros(n + 1, dtype=np.int64)
    for i in range(n):
        nbrs = indices[indptr[i]:indptr[i + 1]]
        if nbrs.size == 0:
            continue
        starts = indptr[nbrs]
        lens = indptr[nbrs + 1] - starts
        total = int(lens.sum())
        if total == 0:
            continue
        offs = np.repeat(starts - np.cumsum(lens) + lens, lens) + np.arange(total)
        cand = indices[offs]
        counts = np.bincount(cand, minlength=n)
        counts[i] = 0
        if exclude_triangles:
            counts[nbrs] = 0
        cols = np.nonzero(counts)[0]
        row_parts.append(cols)
        cnt_parts.append(counts[cols].astype(np.float64))
        rp[i + 1] = cols.size
    np.cumsum(rp, out=rp)
    if row_parts:
        return rp, np.concatenate(row_parts), np.concatenate(cnt_parts)
    return rp, np.zeros(0, np.int64), np.zeros(0, np.float64)


@njit(cache=True)
def _second_order_numba(indptr, indices, exclude_triangles):
    n = indptr.size - 1
    scratch = np.zeros(n, dtype=np.float64)
    touched = np.empty(n, dtype=np.int64)
    is_nbr = np.full(n, -1, dtype=np.int64)
    rp = np.zeros(n + 1, dtype=np.int64)
    # pass 1: count distinct second-order endpoints per node
    for i in range(n):
        if exclude_triangles:
            for e in range(indptr[i], indptr[i + 1]):
                is_nbr[indices[e]] = i
        ntouch = 0
        for e in range(indptr[i], indptr[i + 1]):
            j = indices[e]
            for f in range(indptr[j], indptr[j + 1]):
                k = indices[f]
                if k == i:
                    continue
                if exclude_triangles and is_nbr[k] == i:
                    continue
                if scratch[k] == 0.0:
                    touched[ntouch] = k
                    ntouch += 1
                scratch[k] += 1.0
        rp[i + 1] = rp[i] + ntouch
        for t in range(ntouch):
            scratch[touched[t]] = 0.0
    cols = np.empty(rp[n], dtype=np.int64)
    cnts = np.empty(rp[n], dtype=np.float64)
    is_nbr[:] = -1
    # pass 2: fill, keeping each row's columns sorted
    for i in range(n):
        if exclude_triangles:
            for e in range(indptr[i], indptr[i + 1]):
                is_nbr[indices[e]] = i
        ntouch = 0
        for e in range(indptr[i], indptr[i + 1]):
            j = indices[e]
            for f in range(indptr[j], indptr[j + 1]):
                k = indices[f]
                if k == i:
                    continue
                if exclude_triangles and is_nbr[k] == i:
                    continue
                if scratch[k] == 0.0:
                    touched[ntouch] = k
                    ntouch += 1
                scratch[k] += 1.0
        row = np.sort(touched[:ntouch])
        base = rp[i]
        for t in range(row.size):
            cols[base + t] = row[t]
            cnts[base + t] = scratch[row[t]]
            scratch[row[t]] = 0.0
    return rp, cols, cnts


def second_order_rows(indptr, indices, exclude_triangles):
    """Per-node path counts to second-order endpoints.

    Entry (i, k) counts the paths i-j-k with j a shared neighbor, k != i, and,
    when ``exclude_triangles`` is set, k not a direct neighbor of i. Returned
    as a CSR triple ``(indptr, cols, counts)`` with sorted columns.
    """
    if _HAVE_NUMBA:
        return _second_order_numba(indptr, indices, exclude_triangles)
    return _second_order_numpy(indptr, indices, exclude_triangles)


# ---------------------------------------------------------------------------
# pairwise score sums for the HAC meat
# ---------------------------------------------------------------------------


def _hac_pair_sum_numpy(psi, nbr_indptr, nbr_indices):
    gathered = psi[nbr_indices]
    cs = np.vstack([np.zeros((1, psi.shape[1])), np.cumsum(gathered, axis=0)])
    seg = cs[nbr_indptr[1:]] - cs[nbr_indptr[:-1]]
    return psi.T @ seg


@njit(cache=True)
def _hac_pair_sum_numba(psi, nbr_indptr, nbr_indices):
    n, d = psi.shape
    out = np.zeros((d, d), dtype=np.float64)
    for i in range(n):
        for e in range(nbr_indptr[i], nbr_indptr[i + 1]):
            j = nbr_indices[e]
            for a in range(d):
                pa = psi[i, a]
                if pa == 0.0:
                    continue
                for b in range(d):
                    out[a, b] += pa * psi[j, b]
    return out


def hac_pair_sum(psi, nbr_indptr, nbr_indices):
    """Sum of outer products ``psi_i psi_j'`` over the listed (i, j) pairs."""
    psi = np.ascontiguousarray(psi, dtype=np.float64)
    if _HAVE_NUMBA:
        return _hac_pair_sum_numba(psi, nbr_indptr, nbr_indices)
    return _hac_pair_sum_numpy(psi, nbr_indptr, nbr_indices)


# ---------------------------------------------------------------------------
# row-aligned sparse dots (conditional second moments of linear exposures)
# ---------------------------------------------------------------------------


def _row_pair_dots_numpy(ap, ac, av, bp, bc, bv, scale):
    n = ap.size - 1
    out = np.zeros(n, dtype=np.float64)
    for i in range(n):
        ia = ac[ap[i]:ap[i + 1]]
        if ia.size == 0:
            continue
        ib = bc[bp[i]:bp[i + 1]]
        if ib.size == 0:
            continue
        pos = np.searchsorted(ia, ib)
        pos[pos == ia.size] = 0
        hit = ia[pos] == ib
        if not hit.any():
            continue
        va = av[ap[i]:ap[i + 1]]
        vb = bv[bp[i]:bp[i + 1]]
        cols = ib[hit]
        out[i] = np.sum(va[pos[hit]] * vb[hit] * scale[cols])
    return out


@njit(cache=True)
def _row_pair_dots_numba(ap, ac, av, bp, bc, bv, scale):
    n = ap.size - 1
    out = np.zeros(n, dtype=np.float64)
    for i in range(n):
        sa, ea = ap[i], ap[i + 1]
        sb, eb = bp[i], bp[i + 1]
        if ea == sa or eb == sb:
            continue
        # both column lists are sorted: merge walk
        x = sa
        y = sb
        acc = 0.0
        while x < ea and y < eb:
            ca = ac[x]
            cb = bc[y]
            if ca == cb:
                acc += av[x] * bv[y] * scale[ca]
                x += 1
                y += 1
            elif ca < cb:
                x += 1
            else:
                y += 1
        out[i] = acc
    return out


def row_pair_dots(a, b, scale):
    """Per-row dot products sum_k a[i,k] b[i,k] scale[k] of two CSR matrices.

    ``a`` and ``b`` are ``(indptr, cols, vals)`` triples with sorted columns;
    ``scale`` is a dense per-coordinate weight vector.
    """
    ap, ac, av = a
    bp, bc, bv = b
    scale = np.ascontiguousarray(scale, dtype=np.float64)
    if _HAVE_NUMBA:
        return _row_pair_dots_numba(ap, ac, av, bp, bc, bv, scale)
    return _row_pair_dots_numpy(ap, ac, av, bp, bc, bv, scale)


# ---------------------------------------------------------------------------
# shared CSR helpers (plain numpy in both lanes)
# ---------------------------------------------------------------------------


def neighbor_value_sums(indptr, indices, values):
    """Row sums sum_j values[j] over each node's neighbor list."""
    gathered = values[indices]
    cs = np.concatenate([[0.0], np.cumsum(gathered)])
    return cs[indptr[1:]] - cs[indptr[:-1]]


def neighbor_value_products(indptr, indices, values):
    """Row products prod_j values[j] over each node's neighbor list.

    Empty rows give 1. Only used for closed-form any-treated-neighbor means,
    so row lengths are small and a per-row product is cheap enough.
    """
    n = indptr.size - 1
    gathered = values[indices]
    out = np.ones(n, dtype=np.float64)
    for i in range(n):
        lo, hi = indptr[i], indptr[i + 1]
        if hi > lo:
            out[i] = np.prod(gathered[lo:hi])
    return out

"""Periodic cell lists for fixed-radius neighbor queries.

The box is cut into cells of edge ``>= R / s`` (``s`` subdivisions, up to 3)
and a ball of radius ``R`` around a particle lies in the ``(2s+1)^dims``
block of cells around its own. Particles are stored sorted by cell, so
each block decomposes into a few contiguous index ranges. Every range
carries the periodic shift of its cells, which removes the minimum-image
branch from the inner loop.

Boxes narrower than three cells along some axis fall back to unit
subdivision with an explicit minimum-image wrap. Very sparse boxes get
coarser cells so memory stays proportional to the particle count.

Each particle's sum is accumulated in a fixed order, so serial and threaded
kernels give bit-identical results.
"""

from __future__ import annotations

from functools import lru_cache
import itertools

import numba
import numpy as np

MAX_SUBDIVISIONS = 3
MAX_TABLE_ENTRIES = 4_000_000
MIN_CELL_CAP = 4096


@numba.njit(cache=True)
def _cell_coords(x, box, ncell):
    n, dims = x.shape
    coords = np.empty((n, dims), dtype=np.int64)
    for i in range(n):
        for a in range(dims):
            c = int(x[i, a] / box[a] * ncell[a])
            if c >= ncell[a]:
                c = ncell[a] - 1
            elif c < 0:
                c = 0
            coords[i, a] = c
    return coords


@numba.njit(cache=True, inline="always")
def _wrap(dx, box, half):
    return dx - box if dx > half else (dx + box if dx < -half else dx)


@numba.njit(cache=True, inline="always")
def _delta(xj, xi, shift, box, half, wrap):
    # (xj - xi) + shift reproduces the wrapped difference bit for bit
    dx = xj - xi
    return _wrap(dx, box, half) if wrap else dx + shift


# Branchless accumulation of w * v with w in {0, 1}; adding +0.0 keeps the
# sums bit-identical to skipping non-neighbors.

@numba.njit(cache=True)
def _currents_cell2(c, xs, vs, r2, start, nr, lo, hi, shift, box, half, wrap, out):
    bx, by = box[0], box[1]
    hx, hy = half[0], half[1]
    for i in range(start[c], start[c + 1]):
        xi, yi = xs[i, 0], xs[i, 1]
        sx = 0.0
        sy = 0.0
        for k in range(nr[c]):
            ox, oy = shift[c, k, 0], shift[c, k, 1]
            if wrap:
                for j in range(start[lo[c, k]], start[hi[c, k]]):
                    dx = _wrap(xs[j, 0] - xi, bx, hx)
                    dy = _wrap(xs[j, 1] - yi, by, hy)
                    w = 1.0 if dx * dx + dy * dy <= r2 else 0.0
                    sx += w * vs[j, 0]
                    sy += w * vs[j, 1]
            else:
                for j in range(start[lo[c, k]], start[hi[c, k]]):
                    dx = (xs[j, 0] - xi) + ox
                    dy = (xs[j, 1] - yi) + oy
                    w = 1.0 if dx * dx + dy * dy <= r2 else 0.0
                    sx += w * vs[j, 0]
                    sy += w * vs[j, 1]
        out[i, 0] = sx
        out[i, 1] = sy


@numba.njit(cache=True)
def _currents_cell3(c, xs, vs, r2, start, nr, lo, hi, shift, box, half, wrap, out):
    for i in range(start[c], start[c + 1]):
        xi, yi, zi = xs[i, 0], xs[i, 1], xs[i, 2]
        sx = 0.0
        sy = 0.0
        sz = 0.0
        for k in range(nr[c]):
            for j in range(start[lo[c, k]], start[hi[c, k]]):
                dx = _delta(xs[j, 0], xi, shift[c, k, 0], box[0], half[0], wrap)
                dy = _delta(xs[j, 1], yi, shift[c, k, 1], box[1], half[1], wrap)
                dz = _delta(xs[j, 2], zi, shift[c, k, 2], box[2], half[2], wrap)
                w = 1.0 if dx * dx + dy * dy + dz * dz <= r2 else 0.0
                sx += w * vs[j, 0]
                sy += w * vs[j, 1]
                sz += w * vs[j, 2]
        out[i, 0] = sx
        out[i, 1] = sy
        out[i, 2] = sz


@numba.njit(cache=True)
def _currents_serial(xs, vs, r2, start, nr, lo, hi, shift, box, half, wrap):
    out = np.empty(vs.shape)
    for c in range(nr.shape[0]):
        if xs.shape[1] == 2:
            _currents_cell2(c, xs, vs, r2, start, nr, lo, hi, shift, box, half, wrap, out)
        else:
            _currents_cell3(c, xs, vs, r2, start, nr, lo, hi, shift, box, half, wrap, out)
    return out


@numba.njit(cache=True, parallel=True)
def _currents_parallel(xs, vs, r2, start, nr, lo, hi, shift, box, half, wrap):
    out = np.empty(vs.shape)
    for c in numba.prange(nr.shape[0]):
        if xs.shape[1] == 2:
            _currents_cell2(c, xs, vs, r2, start, nr, lo, hi, shift, box, half, wrap, out)
        else:
            _currents_cell3(c, xs, vs, r2, start, nr, lo, hi, shift, box, half, wrap, out)
    return out


@numba.njit(cache=True)
def _pairs(xs, r2, start, nr, lo, hi, shift, box, half, wrap, fill, out_i, out_j):
    count = 0
    dims = xs.shape[1]
    for c in range(nr.shape[0]):
        for i in range(start[c], start[c + 1]):
            for k in range(nr[c]):
                for j in range(start[lo[c, k]], start[hi[c, k]]):
                    dist2 = 0.0
                    for a in range(dims):
                        dx = _delta(xs[j, a], xs[i, a], shift[c, k, a], box[a], half[a], wrap)
                        dist2 += dx * dx
                    if dist2 <= r2:
                        if fill:
                            out_i[count] = i
                            out_j[count] = j
                        count += 1
    return count


def stencil_offsets(ncell, reach=1):
    """Distinct neighbor-cell offsets in ``{-reach..reach}^dims`` modulo the grid."""
    seen = {}
    for off in itertools.product(range(-reach, reach + 1), repeat=len(ncell)):
        key = tuple(o % n for o, n in zip(off, ncell))
        seen.setdefault(key, off)
    return np.array(sorted(seen.values()), dtype=np.int64)


def _capped(ncell, limit):
    # coarser cells stay exact (edges only grow); this bounds memory for sparse boxes
    total = float(np.prod(ncell.astype(float)))
    if total <= limit:
        return ncell
    scale = (limit / total) ** (1.0 / len(ncell))
    return np.maximum(1, np.floor(ncell * scale)).astype(np.int64)


def grid_shape(box, radius, n=0):
    """Subdivisions ``s`` and cells per axis for a box, radius and particle count.

    ``s`` is the largest value up to 3 leaving at least ``2s + 1`` cells of
    edge ``>= R/s`` per axis; ``s = 0`` selects the wrap fallback with
    cells of edge ``>= R``. The total cell count is capped near
    ``max(4096, 2n)``.
    """
    box = np.asarray(box, dtype=float)
    limit = max(MIN_CELL_CAP, 2 * n)
    for s in range(MAX_SUBDIVISIONS, 0, -1):
        ncell = _capped(np.floor(box / (radius / s)).astype(np.int64), limit)
        entries = int(np.prod(ncell)) * (2 * s + 1) ** len(box)
        if ncell.min() >= 2 * s + 1 and entries <= MAX_TABLE_ENTRIES:
            return s, ncell
    return 0, _capped(np.maximum(1, np.floor(box / radius).astype(np.int64)), limit)


def choose_subdivisions(box, radius, n=0):
    """Subdivision count picked by :func:`grid_shape` (0 means wrap fallback)."""
    return grid_shape(box, radius, n)[0]


@lru_cache(maxsize=16)
def _range_table(ncell, reach, box, wrap):
    """Per-cell contiguous cell ranges ``[lo, hi)`` and their periodic shifts.

    Consecutive stencil entries whose flat cell ids follow each other and
    share a shift are merged into one range.
    """
    ncell_arr = np.asarray(ncell, dtype=np.int64)
    box_arr = np.asarray(box, dtype=float)
    dims = len(ncell)
    grid = np.indices(ncell).reshape(dims, -1).T
    offsets = stencil_offsets(ncell, reach) if wrap else np.array(
        list(itertools.product(range(-reach, reach + 1), repeat=dims)), dtype=np.int64)
    cells, shifts = [], []
    for off in offsets:
        raw = grid + off
        cells.append(np.ravel_multi_index(tuple((raw % ncell_arr).T), ncell))
        if wrap:
            shifts.append(np.zeros(raw.shape))
        else:
            shifts.append(np.where(raw < 0, -box_arr, np.where(raw >= ncell_arr, box_arr, 0.0)))
    cells = np.stack(cells, axis=1)
    shifts = np.stack(shifts, axis=1)
    n_cells, n_off = cells.shape
    new = np.ones((n_cells, n_off), dtype=bool)
    new[:, 1:] = ~((cells[:, 1:] == cells[:, :-1] + 1)
                   & np.all(shifts[:, 1:] == shifts[:, :-1], axis=-1))
    last = np.ones_like(new)
    last[:, :-1] = new[:, 1:]
    rid = np.cumsum(new, axis=1) - 1
    nr = rid[:, -1] + 1
    width = int(nr.max())
    lo = np.zeros((n_cells, width), dtype=np.int64)
    hi = np.zeros((n_cells, width), dtype=np.int64)
    shift = np.zeros((n_cells, width, dims))
    rows, cols = np.nonzero(new)
    lo[rows, rid[rows, cols]] = cells[rows, cols]
    shift[rows, rid[rows, cols]] = shifts[rows, cols]
    rows, cols = np.nonzero(last)
    hi[rows, rid[rows, cols]] = cells[rows, cols] + 1
    for arr in (nr, lo, hi, shift):
        arr.setflags(write=False)
    return nr.astype(np.int64), lo, hi, shift


class CellList:
    """Cell list for positions ``x`` (shape ``(n, dims)``) in a periodic box.

    Particles are stored sorted by cell; ``order[p]`` is the original index of
    sorted slot ``p``.
    """

    def __init__(self, x, box, radius):
        x = np.ascontiguousarray(x, dtype=float)
        self.box = np.asarray(box, dtype=float)
        self.half = 0.5 * self.box
        self.radius = float(radius)
        if self.radius > self.box.min() / 2:
            raise ValueError("interaction radius must not exceed half the box")
        self.subdivisions, self.ncell = grid_shape(self.box, self.radius, x.shape[0])
        self.wrap = self.subdivisions == 0
        reach = max(1, self.subdivisions)
        coords = _cell_coords(x, self.box, self.ncell)
        flat = np.ravel_multi_index(tuple(coords.T), tuple(self.ncell))
        self.order = np.argsort(flat, kind="stable")
        counts = np.bincount(flat, minlength=int(np.prod(self.ncell)))
        self.start = np.concatenate(([0], np.cumsum(counts))).astype(np.int64)
        self.xs = np.ascontiguousarray(x[self.order])
        self.table = _range_table(tuple(int(n) for n in self.ncell), reach,
                                  tuple(float(b) for b in self.box), self.wrap)

    def _args(self):
        return (self.radius**2, self.start, *self.table, self.box, self.half, self.wrap)

    def currents(self, v, parallel=False):
        """``J_k``: sum of ``v_j`` over all ``j`` within distance ``R`` of ``k`` (self included)."""
        kernel = _currents_parallel if parallel else _currents_serial
        vs = np.ascontiguousarray(np.asarray(v, dtype=float)[self.order])
        sorted_out = kernel(self.xs, vs, *self._args())
        out = np.empty_like(sorted_out)
        out[self.order] = sorted_out
        return out

    def pairs(self):
        """All ordered pairs ``(i, j)`` within distance ``R``, including ``i == j``."""
        args = self._args()
        empty = np.empty(0, dtype=np.int64)
        count = _pairs(self.xs, *args, False, empty, empty)
        out_i = np.empty(count, dtype=np.int64)
        out_j = np.empty(count, dtype=np.int64)
        _pairs(self.xs, *args, True, out_i, out_j)
        return self.order[out_i], self.order[out_j]


def brute_force_pairs(x, box, radius):
    """O(n^2) reference for :meth:`CellList.pairs` (same metric arithmetic)."""
    x = np.asarray(x, dtype=float)
    box = np.asarray(box, dtype=float)
    dist2 = np.zeros((x.shape[0], x.shape[0]))
    for a in range(x.shape[1]):
        dx = x[None, :, a] - x[:, None, a]
        dx = np.where(dx > box[a] / 2, dx - box[a], np.where(dx < -box[a] / 2, dx + box[a], dx))
        dist2 += dx * dx
    return np.nonzero(dist2 <= radius**2)

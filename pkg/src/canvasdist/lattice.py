"""Canvas grids, their lattices, and anchor systems.

A warp of an [m] x [n] canvas is digitally represented by an (m*n, 2) matrix
of transformed grid coordinates in lexicographic order. The lattice connects
Chebyshev-neighboring grid points and enumerates the pairs of incident edges
meeting at 45 degrees; those pairs are where local stretch discrepancies are
measured. An anchor system parameterizes warps by a coarse subgrid of control
points, expanding them to the full grid through a sparse double-convex-
combination weight matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
import math

import numpy as np
import scipy.sparse as sp

__all__ = [
    "identity_transform",
    "CanvasLattice",
    "build_lattice",
    "AnchorSystem",
    "build_anchor_system",
    "apply_anchors",
    "anchor_indices",
    "anchor_chain",
]


def identity_transform(m: int, n: int) -> np.ndarray:
    """The identity warp: row k is the k-th lexicographic grid coordinate."""
    if m < 1 or n < 1:
        raise ValueError(f"grid dimensions must be positive, got {m}x{n}")
    return _identity_cached(m, n).copy()


@lru_cache(maxsize=64)
def _identity_cached(m: int, n: int) -> np.ndarray:
    rows, cols = np.divmod(np.arange(m * n), n)
    out = np.stack([rows, cols], axis=1).astype(np.float64)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class CanvasLattice:
    """Edges between Chebyshev neighbors plus the 45-degree edge pairs.

    `edges` holds flat vertex index pairs; `neighbor_pairs` holds edge index
    pairs whose rest directions, taken from the shared vertex, meet at
    exactly 45 degrees (always one axis edge and one diagonal). Rest lengths
    are 1 for axis edges and sqrt(2) for diagonals.
    """

    m: int
    n: int
    edges: np.ndarray
    neighbor_pairs: np.ndarray
    rest_lengths: np.ndarray

    @property
    def edge_count(self) -> int:
        return self.edges.shape[0]

    @property
    def pair_count(self) -> int:
        return self.neighbor_pairs.shape[0]


def build_lattice(m: int, n: int) -> CanvasLattice:
    """Build (and cache) the lattice of an [m] x [n] canvas grid."""
    if m < 2 or n < 2:
        raise ValueError(f"lattice needs at least a 2x2 grid, got {m}x{n}")
    return _lattice_cached(m, n)


@lru_cache(maxsize=64)
def _lattice_cached(m: int, n: int) -> CanvasLattice:
    def vid(i, j):
        return i * n + j

    edges = []
    rests = []
    for i in range(m):
        for j in range(n):
            if j + 1 < n:
                edges.append((vid(i, j), vid(i, j + 1)))
                rests.append(1.0)
            if i + 1 < m:
                edges.append((vid(i, j), vid(i + 1, j)))
                rests.append(1.0)
            if i + 1 < m and j + 1 < n:
                edges.append((vid(i, j), vid(i + 1, j + 1)))
                rests.append(math.sqrt(2.0))
            if i + 1 < m and j - 1 >= 0:
                edges.append((vid(i, j), vid(i + 1, j - 1)))
                rests.append(math.sqrt(2.0))

    # incident directions at each vertex: (edge index, unit step to the other end)
    incident: list[list[tuple[int, tuple[int, int]]]] = [[] for _ in range(m * n)]
    for e, (u, v) in enumerate(edges):
        du = (v // n - u // n, v % n - u % n)
        incident[u].append((e, du))
        incident[v].append((e, (-du[0], -du[1])))

    pairs = []
    for around in incident:
        axes = [(e, d) for e, d in around if d[0] == 0 or d[1] == 0]
        diags = [(e, d) for e, d in around if d[0] != 0 and d[1] != 0]
        for ea, da in axes:
            for ed, dd in diags:
                if da[0] * dd[0] + da[1] * dd[1] == 1:  # cos 45 between the rest directions
                    pairs.append((ea, ed))

    edges_arr = np.asarray(edges, dtype=np.int64)
    pairs_arr = np.asarray(pairs, dtype=np.int64)
    rests_arr = np.asarray(rests, dtype=np.float64)
    for a in (edges_arr, pairs_arr, rests_arr):
        a.flags.writeable = False
    return CanvasLattice(m, n, edges_arr, pairs_arr, rests_arr)


@dataclass(frozen=True)
class AnchorSystem:
    """A coarse control grid over [m] x [n] with its interpolation weights.

    `weights` is a (m*n, anchor_count) row-stochastic sparse matrix with at
    most four nonzeros per row: the double convex combination of the corners
    of the smallest enclosing anchor rectangle. `anchor_flat` maps each
    anchor (in anchor-grid lexicographic order) to its flat full-grid index,
    so anchor rows of an expanded warp reproduce the control coordinates
    exactly.
    """

    m: int
    n: int
    anchor_rows: np.ndarray
    anchor_cols: np.ndarray
    weights: sp.csr_matrix = field(repr=False)
    anchor_flat: np.ndarray

    @property
    def anchor_shape(self) -> tuple[int, int]:
        return (len(self.anchor_rows), len(self.anchor_cols))

    @property
    def anchor_count(self) -> int:
        return len(self.anchor_rows) * len(self.anchor_cols)

    def anchor_positions(self) -> np.ndarray:
        """Grid coordinates of the anchors, shape (anchor_count, 2)."""
        r = np.repeat(self.anchor_rows, len(self.anchor_cols))
        c = np.tile(self.anchor_cols, len(self.anchor_rows))
        return np.stack([r, c], axis=1).astype(np.float64)


def _axis_cells(extent: int, anchors: np.ndarray):
    """Cell index and interpolation fraction for every coordinate 0..extent-1.

    A coordinate sitting exactly on an interior anchor belongs to the cell
    with the larger indices (half-open cells), which keeps weight rows unique
    and makes anchor rows exact one-hots.
    """
    coords = np.arange(extent)
    cell = np.clip(np.searchsorted(anchors, coords, side="right") - 1, 0, len(anchors) - 2)
    lo = anchors[cell]
    hi = anchors[cell + 1]
    frac = (coords - lo) / (hi - lo).astype(np.float64)
    return cell, frac


def build_anchor_system(m: int, n: int, anchor_rows, anchor_cols) -> AnchorSystem:
    """Construct the weight matrix of an anchor grid over [m] x [n].

    Anchor rows/cols must be sorted, distinct, and include both extremes of
    their axis so the anchor hull covers the whole grid.
    """
    rows = np.asarray(anchor_rows, dtype=np.int64)
    cols = np.asarray(anchor_cols, dtype=np.int64)
    return _anchor_cached(m, n, tuple(rows.tolist()), tuple(cols.tolist()))


@lru_cache(maxsize=256)
def _anchor_cached(m: int, n: int, rows_t: tuple, cols_t: tuple) -> AnchorSystem:
    if m < 2 or n < 2:
        raise ValueError(f"anchor systems need at least a 2x2 grid, got {m}x{n}")
    rows = np.asarray(rows_t, dtype=np.int64)
    cols = np.asarray(cols_t, dtype=np.int64)
    for name, idx, extent in (("rows", rows, m), ("cols", cols, n)):
        if idx.size < 2 or np.any(np.diff(idx) <= 0):
            raise ValueError(f"anchor {name} must be sorted, distinct, and at least two")
        if idx[0] != 0 or idx[-1] != extent - 1:
            raise ValueError(
                f"anchor {name} must span the grid (convex hull violation): "
                f"got {idx.tolist()} for extent {extent}"
            )

    ncols_anchor = len(cols)
    cell_r, frac_r = _axis_cells(m, rows)
    cell_c, frac_c = _axis_cells(n, cols)

    gi = np.repeat(np.arange(m), n)
    gj = np.tile(np.arange(n), m)
    cr = cell_r[gi]
    cc = cell_c[gj]
    fr = frac_r[gi]
    fc = frac_c[gj]

    # corners of the enclosing anchor rectangle, anchor-grid lexicographic ids
    top_lo = cr * ncols_anchor + cc
    top_hi = cr * ncols_anchor + cc + 1
    bot_lo = (cr + 1) * ncols_anchor + cc
    bot_hi = (cr + 1) * ncols_anchor + cc + 1

    data = np.stack(
        [(1 - fr) * (1 - fc), (1 - fr) * fc, fr * (1 - fc), fr * fc], axis=1
    ).ravel()
    indices = np.stack([top_lo, top_hi, bot_lo, bot_hi], axis=1).ravel()
    indptr = np.arange(0, 4 * m * n + 1, 4)
    weights = sp.csr_matrix((data, indices, indptr), shape=(m * n, len(rows) * ncols_anchor))
    weights.eliminate_zeros()
    weights.sort_indices()

    anchor_flat = (rows[:, None] * n + cols[None, :]).ravel()
    anchor_flat.flags.writeable = False
    rows.flags.writeable = False
    cols.flags.writeable = False
    return AnchorSystem(m, n, rows, cols, weights, anchor_flat)


def apply_anchors(system: AnchorSystem, anchor_warp) -> np.ndarray:
    """Expand anchor coordinates to the full grid: weights @ anchor_warp."""
    aw = np.asarray(anchor_warp, dtype=np.float64)
    if aw.shape != (system.anchor_count, 2):
        raise ValueError(
            f"anchor warp must have shape ({system.anchor_count}, 2), got {aw.shape}"
        )
    if not np.all(np.isfinite(aw)):
        raise ValueError("anchor warp contains non-finite coordinates")
    return system.weights @ aw


def anchor_indices(extent: int, count: int) -> np.ndarray:
    """`count` near-evenly spaced grid indices including both endpoints."""
    if extent < 1:
        raise ValueError("extent must be positive")
    if extent == 1:
        return np.zeros(1, dtype=np.int64)
    count = max(2, min(int(count), extent))
    return np.unique(np.round(np.linspace(0, extent - 1, count)).astype(np.int64))


def _size_ladder(size: int) -> list[int]:
    """Anchor grid sizes 2, 4, 10, 28, ... capped at the image size."""
    if size < 2:
        raise ValueError("image size must be at least 2")
    sizes = []
    k = 0
    while 3**k + 1 < size:
        sizes.append(3**k + 1)
        k += 1
    sizes.append(size)
    return sizes


def anchor_chain(size: int, cutoff0: float, decay: float, steps: int) -> list[tuple[int, float]]:
    """Coarse-to-fine schedule of (anchor grid size, kernel cutoff) stages.

    Anchor sizes walk the 3**i + 1 ladder capped at `size`; cutoffs follow
    the geometric sequence cutoff0 * decay**j. When the two chains have
    different lengths the shorter one is padded with its final value.
    """
    if not 0.0 < decay < 1.0:
        raise ValueError("decay must lie strictly between 0 and 1")
    if cutoff0 <= 0.0 or steps < 1:
        raise ValueError("cutoff0 must be positive and steps >= 1")
    sizes = _size_ladder(size)
    cutoffs = [cutoff0 * decay**j for j in range(steps)]
    stages = max(len(sizes), len(cutoffs))
    sizes = sizes + [sizes[-1]] * (stages - len(sizes))
    cutoffs = cutoffs + [cutoffs[-1]] * (stages - len(cutoffs))
    return list(zip(sizes, cutoffs))

"""Compact sets as unions of dyadic cells in a chart.

A cell set lives on the grid ``side = base / 2**level`` anchored at the chart
origin; cell ``i`` on an axis is ``[i*side, (i+1)*side]``.  Periodic axes
carry indices in ``[0, period/side)``.

Cells are stored as a lexicographically sorted array of integer
multi-indices; the same order is produced by 64-bit packed keys, which are
used for set operations, lookups and serialization.

Binary layout (little endian)::

    b"CSET" | u8 version | u8 dim | i16 level | u8 role | u16 name_len | name
    | f64[dim] base | u64 count | i64[count] sorted packed keys
"""
from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage, stats

from .groups import GroupChart, haar_left_density, haar_right_density, parse_group

ROLES = ("exact", "outer", "inner")
_ROLE_CODE = {r: i for i, r in enumerate(ROLES)}
_MAGIC = b"CSET"
_VERSION = 1
DENSE_LIMIT = 120_000_000
SNAP = 1e-9


class CoverageWarning(UserWarning):
    """Product cells fell outside the chart domain and were clipped."""


class CoverageError(RuntimeError):
    pass


def _bits(dim: int) -> int:
    return min(21, 63 // dim)


def pack(idx: np.ndarray) -> np.ndarray:
    idx = np.asarray(idx, dtype=np.int64)
    d = idx.shape[1]
    b = _bits(d)
    off = np.int64(1) << np.int64(b - 1)
    if idx.size and (idx.min() < -off or idx.max() >= off):
        raise OverflowError(f"cell index out of packable range for dim {d}")
    key = np.zeros(idx.shape[0], dtype=np.int64)
    for k in range(d):
        key = (key << np.int64(b)) | (idx[:, k] + off)
    return key


def unpack(keys: np.ndarray, dim: int) -> np.ndarray:
    keys = np.asarray(keys, dtype=np.int64)
    b = _bits(dim)
    off = np.int64(1) << np.int64(b - 1)
    mask = (np.int64(1) << np.int64(b)) - 1
    out = np.empty((keys.shape[0], dim), dtype=np.int64)
    k = keys.copy()
    for j in range(dim - 1, -1, -1):
        out[:, j] = (k & mask) - off
        k = k >> np.int64(b)
    return out


@dataclass(frozen=True, eq=False)
class CellSet:
    chart: GroupChart
    level: int
    keys: np.ndarray
    role: str = "exact"
    base: Optional[np.ndarray] = None
    notes: tuple = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}")
        base = self.chart.base_side if self.base is None else np.asarray(self.base, dtype=float)
        if base.shape != (self.chart.dim,) or np.any(base <= 0):
            raise ValueError("base must be a positive vector of chart dimension")
        object.__setattr__(self, "base", base)
        keys = np.unique(np.asarray(self.keys, dtype=np.int64))
        object.__setattr__(self, "keys", keys)
        self.periods()

    # -------------------------------------------------------------- geometry
    @classmethod
    def from_indices(cls, chart, level, idx, role="exact", base=None, **kw) -> "CellSet":
        idx = np.asarray(idx, dtype=np.int64).reshape(-1, chart.dim)
        return cls(chart, level, pack(idx), role, base, **kw)

    @property
    def side(self) -> np.ndarray:
        return self.base / float(2 ** self.level)

    def periods(self) -> np.ndarray:
        """Number of cells around each periodic axis (0 elsewhere)."""
        n = np.zeros(self.chart.dim, dtype=np.int64)
        for k in np.flatnonzero(self.chart.periodic):
            q = self.chart.period[k] / self.side[k]
            if abs(q - round(q)) > 1e-9 or round(q) < 1:
                raise ValueError(f"grid does not tile the period on axis {k}")
            n[k] = int(round(q))
        return n

    @property
    def idx(self) -> np.ndarray:
        return unpack(self.keys, self.chart.dim)

    def __len__(self) -> int:
        return int(self.keys.shape[0])

    @property
    def empty(self) -> bool:
        return len(self) == 0

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        i = self.idx.astype(float)
        return i * self.side, (i + 1.0) * self.side

    def centers(self) -> np.ndarray:
        return (self.idx + 0.5) * self.side

    def cell_volume(self) -> float:
        return float(np.prod(self.side))

    def with_role(self, role: str) -> "CellSet":
        return CellSet(self.chart, self.level, self.keys, role, self.base, self.notes, dict(self.meta))

    def same_grid(self, other: "CellSet") -> bool:
        return other.chart is self.chart and np.allclose(other.base, self.base, rtol=1e-12)

    # ----------------------------------------------------------- membership
    def point_index(self, pts: np.ndarray) -> np.ndarray:
        pts = self.chart.wrap(np.asarray(pts, dtype=float))
        i = np.floor(pts / self.side).astype(np.int64)
        return self._reduce(i)

    def _reduce(self, i: np.ndarray) -> np.ndarray:
        n = self.periods()
        for k in np.flatnonzero(n):
            i[..., k] = np.mod(i[..., k], n[k])
        return i

    def has_cells(self, idx: np.ndarray) -> np.ndarray:
        if self.empty:
            return np.zeros(len(idx), dtype=bool)
        q = pack(self._reduce(np.asarray(idx, dtype=np.int64).copy()))
        pos = np.searchsorted(self.keys, q)
        pos = np.minimum(pos, len(self.keys) - 1)
        return self.keys[pos] == q

    def contains_points(self, pts: np.ndarray, closed: bool = True, tol: float = 1e-9) -> np.ndarray:
        """Membership of points in the union of closed cells.  A point within
        ``tol`` (relative to the cell side) of a grid face also probes the
        neighbouring cell."""
        pts = self.chart.wrap(np.atleast_2d(np.asarray(pts, dtype=float)))
        r = pts / self.side
        i = np.floor(r).astype(np.int64)
        hit = self.has_cells(i)
        if not closed:
            return hit
        frac = r - i
        d = self.chart.dim
        lowface = frac < tol
        highface = frac > 1.0 - tol
        shifts = []
        for k in range(d):
            shifts.append(np.where(lowface[:, k], -1, np.where(highface[:, k], 1, 0)))
        shifts = np.stack(shifts, axis=1)
        near = np.flatnonzero(np.any(shifts != 0, axis=1))
        if near.size:
            # probe every combination of neighbouring cells across the nearby faces
            for mask in range(1, 2 ** d):
                sel = np.array([(mask >> k) & 1 for k in range(d)], dtype=np.int64)
                cand = i[near] + shifts[near] * sel
                ok = np.all((shifts[near] != 0) | (sel == 0), axis=1)
                hit[near[ok]] |= self.has_cells(cand[ok])
        return hit

    def issubset(self, other: "CellSet") -> bool:
        a, b = _common_level(self, other)
        return bool(np.all(np.isin(a.keys, b.keys)))

    def boundary(self) -> "CellSet":
        """Cells with at least one face neighbour outside the set."""
        if self.empty:
            return self
        idx = self.idx
        inner = np.ones(len(idx), dtype=bool)
        for k in range(self.chart.dim):
            for s in (-1, 1):
                nb = idx.copy()
                nb[:, k] += s
                inner &= self.has_cells(nb)
        return CellSet(self.chart, self.level, self.keys[~inner], self.role, self.base)

    def to_bytes(self) -> bytes:
        name = self.chart.name.encode("utf-8")
        head = _MAGIC + struct.pack("<BBhBH", _VERSION, self.chart.dim, self.level,
                                    _ROLE_CODE[self.role], len(name))
        body = struct.pack(f"<{self.chart.dim}d", *self.base) + struct.pack("<Q", len(self))
        return head + name + body + self.keys.astype("<i8").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes, chart: Optional[GroupChart] = None) -> "CellSet":
        if data[:4] != _MAGIC:
            raise ValueError("not a cell-set blob")
        ver, dim, level, role, nlen = struct.unpack_from("<BBhBH", data, 4)
        if ver != _VERSION:
            raise ValueError(f"unsupported cell-set version {ver}")
        pos = 4 + struct.calcsize("<BBhBH")
        name = data[pos:pos + nlen].decode("utf-8")
        pos += nlen
        base = np.array(struct.unpack_from(f"<{dim}d", data, pos))
        pos += 8 * dim
        (count,) = struct.unpack_from("<Q", data, pos)
        pos += 8
        keys = np.frombuffer(data, dtype="<i8", count=count, offset=pos).astype(np.int64)
        chart = chart or parse_group(name)
        if chart.dim != dim:
            raise ValueError("chart dimension does not match blob")
        return cls(chart, level, keys, ROLES[role], base)

    def to_json(self) -> str:
        return json.dumps({
            "chart": self.chart.name, "level": self.level, "role": self.role,
            "base": [float(b) for b in self.base], "cells": self.idx.tolist(),
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text: str, chart: Optional[GroupChart] = None) -> "CellSet":
        obj = json.loads(text)
        chart = chart or parse_group(obj["chart"])
        return cls.from_indices(chart, int(obj["level"]), np.array(obj["cells"], dtype=np.int64),
                                obj["role"], np.array(obj["base"], dtype=float))


# ------------------------------------------------------------------ builders

def _snap(r: np.ndarray, tol: float = 1e-9) -> tuple[np.ndarray, np.ndarray]:
    near = np.round(r)
    aligned = np.abs(r - near) <= tol * np.maximum(1.0, np.abs(r))
    return np.where(aligned, near, r), aligned


def from_box(chart: GroupChart, lo, hi, level: int, base=None) -> CellSet:
    """Cells meeting the box.  Grid-aligned boxes give role ``exact``,
    anything else an outer cover."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if lo.shape != (chart.dim,) or hi.shape != (chart.dim,):
        raise ValueError("box corners must have chart dimension")
    if np.any(lo >= hi):
        raise ValueError("need lo < hi componentwise")
    per = chart.periodic
    if np.any((lo < chart.lower) & ~per) or np.any((hi > chart.upper) & ~per):
        raise ValueError(f"box outside the domain of {chart.name}")
    tmp = CellSet(chart, level, np.zeros(0, dtype=np.int64), base=base)
    side = tmp.side
    a, al = _snap(lo / side)
    b, bl = _snap(hi / side)
    i0 = np.floor(a).astype(np.int64)
    i1 = np.ceil(b).astype(np.int64) - 1
    n = tmp.periods()
    for k in np.flatnonzero(n):
        if i1[k] - i0[k] + 1 >= n[k]:
            i0[k], i1[k] = 0, n[k] - 1
    # a cell touching an open domain bound is not inside the domain
    for k in range(chart.dim):
        if not per[k] and np.isfinite(chart.lower[k]) and i0[k] * side[k] <= chart.lower[k]:
            raise ValueError(f"box reaches the open domain bound on axis {k}")
    axes = [np.arange(i0[k], i1[k] + 1) for k in range(chart.dim)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, chart.dim)
    role = "exact" if bool(np.all(al) and np.all(bl)) else "outer"
    return CellSet.from_indices(chart, level, tmp._reduce(grid), role, tmp.base)


def from_predicate(chart: GroupChart, lo, hi, level: int, keep, base=None, role="outer") -> CellSet:
    """Cells of the box grid for which ``keep(cell_lo, cell_hi)`` holds."""
    box = from_box(chart, lo, hi, level, base)
    clo, chi = box.bounds()
    mask = np.asarray(keep(clo, chi), dtype=bool)
    return CellSet(chart, level, box.keys[mask], role, box.base)


def dilate(S: CellSet, steps: int = 1) -> CellSet:
    """S together with every cell within ``steps`` cells in the max norm."""
    keys = S.keys
    for _ in range(steps):
        # sweeping the axes one after another yields the full 3^d neighbourhood
        for a in range(S.chart.dim):
            idx = unpack(keys, S.chart.dim)
            parts = [keys]
            for sgn in (-1, 1):
                nb = idx.copy()
                nb[:, a] += sgn
                parts.append(pack(S._reduce(nb)))
            keys = np.unique(np.concatenate(parts))
    return CellSet(S.chart, S.level, keys, S.role, S.base, meta=dict(S.meta))


def refine(S: CellSet, new_level: int) -> CellSet:
    if new_level < S.level:
        raise ValueError("refine cannot coarsen")
    k = new_level - S.level
    if k == 0:
        return S
    f = 2 ** k
    d = S.chart.dim
    offs = np.stack(np.meshgrid(*[np.arange(f)] * d, indexing="ij"), axis=-1).reshape(-1, d)
    idx = (S.idx[:, None, :] * f + offs[None, :, :]).reshape(-1, d)
    return CellSet.from_indices(S.chart, new_level, idx, S.role, S.base, meta=dict(S.meta))


def _common_level(A: CellSet, B: CellSet) -> tuple[CellSet, CellSet]:
    if not A.same_grid(B):
        raise ValueError("cell sets live on different grids")
    L = max(A.level, B.level)
    return refine(A, L), refine(B, L)


def _union_role(a: str, b: str) -> str:
    if a == b:
        return a
    if "exact" in (a, b):
        return b if a == "exact" else a
    raise ValueError("cannot merge an inner estimate with an outer cover")


def union(A: CellSet, B: CellSet) -> CellSet:
    role = _union_role(A.role, B.role) if not (A.empty or B.empty) else (B.role if A.empty else A.role)
    a, b = _common_level(A, B)
    return CellSet(A.chart, a.level, np.union1d(a.keys, b.keys), role, A.base)


def intersect(A: CellSet, B: CellSet) -> CellSet:
    a, b = _common_level(A, B)
    return CellSet(A.chart, a.level, np.intersect1d(a.keys, b.keys), a.role, A.base)


# ---------------------------------------------------------------- measures

def _density(chart: GroupChart, pts: np.ndarray, side: str) -> np.ndarray:
    if side == "left":
        return haar_left_density(chart, pts)
    if side == "right":
        return haar_right_density(chart, pts)
    raise ValueError("side must be 'left' or 'right'")


def _invariant_axes(chart: GroupChart, side: str) -> tuple[int, ...]:
    # left translation along a left-shift axis is a coordinate shift, so the
    # left density does not depend on that coordinate; likewise on the right
    return chart.left_shift_axes if side == "left" else chart.right_shift_axes


def density_at(chart: GroupChart, pts: np.ndarray, side: str = "left") -> np.ndarray:
    """Haar density at many points, evaluated once per distinct projection
    onto the axes the density can depend on."""
    pts = np.asarray(pts, dtype=float)
    inv = list(_invariant_axes(chart, side))
    if inv:
        pts = pts.copy()
        pts[:, inv] = chart.identity[inv]
    uniq, back = np.unique(pts, axis=0, return_inverse=True)
    return _density(chart, uniq, side)[back.reshape(-1)]


def measure(S: CellSet, side: str = "left", chunk: int = 2_000_000) -> tuple[float, float]:
    """Haar measure of the cell union: midpoint rule per cell, refined once
    into 2^d sub-cells.  Returns (refined value, |refined - coarse|)."""
    if S.empty:
        return 0.0, 0.0
    chart = S.chart
    d = chart.dim
    vol = S.cell_volume()
    # quadrature nodes on the quarter-cell lattice: centres at 4i+2, sub-cell
    # midpoints at 4i+1 and 4i+3
    subs = np.stack(np.meshgrid(*[np.array([1, 3])] * d, indexing="ij"), axis=-1).reshape(-1, d)
    offs = np.vstack([np.full((1, d), 2), subs]).astype(np.int64)
    weights = np.concatenate([[1.0], np.full(len(subs), 1.0 / len(subs))])
    inv = list(_invariant_axes(chart, side))
    q = 4 * S.idx
    if inv:
        q[:, inv] = 0
        keys, cnt = np.unique(pack(q), return_counts=True)
        q = unpack(keys, d)
    else:
        cnt = np.ones(len(q), dtype=np.int64)
    tot = np.zeros(2)
    quarter = S.side / 4.0
    for s in range(0, len(q), max(1, chunk // len(offs))):
        qq = q[s:s + chunk // len(offs)]
        pts = ((qq[:, None, :] + offs[None, :, :]) * quarter).reshape(-1, d)
        if inv:
            pts[:, inv] = chart.identity[inv]
        dens = _density(chart, chart.wrap(pts), side).reshape(len(qq), len(offs))
        w = cnt[s:s + len(qq)]
        tot[0] += float(w @ dens[:, 0])
        tot[1] += float(w @ (dens[:, 1:] @ weights[1:]))
    coarse, fine = (float(v) for v in tot * vol)
    return fine, abs(fine - coarse)


# ---------------------------------------------------------- product kernel

def _boxes(idx: np.ndarray, axes: tuple[int, ...]) -> tuple[np.ndarray, np.ndarray]:
    """Greedy merge of cells into boxes along the given axes.
    Returns (start index, extent in cells)."""
    start = np.asarray(idx, dtype=np.int64).copy()
    ext = np.ones_like(start)
    d = start.shape[1] if start.ndim == 2 else 0
    for a in axes:
        if len(start) == 0:
            break
        others = [k for k in range(d) if k != a]
        cols = [start[:, a]] + [ext[:, k] for k in others] + [start[:, k] for k in others]
        order = np.lexsort(cols)
        s, e = start[order], ext[order]
        same = np.ones(len(s), dtype=bool)
        same[0] = False
        same[1:] &= np.all(s[1:, others] == s[:-1, others], axis=1)
        same[1:] &= np.all(e[1:] [:, others] == e[:-1][:, others], axis=1)
        same[1:] &= s[1:, a] == s[:-1, a] + e[:-1, a]
        run = np.cumsum(~same) - 1
        first = np.flatnonzero(~same)
        total = np.bincount(run, weights=e[:, a]).astype(np.int64)
        start = s[first]
        ext = e[first]
        ext[:, a] = total
    return start, ext


def _enclosures(chart: GroupChart, X: CellSet, Y: CellSet, xb, yb, pad: float, chunk: int,
                mode: str = "corner", out_side=None, slice_cells: float = 2.0, max_slices: int = 64):
    """Yield (lo, hi) enclosure boxes for all pairs of X boxes and Y boxes.

    The product is evaluated at the centre and at every corner of the free
    (non-shift) axes of the pair.  A least-squares linear model through the
    corners gives the first-order extent ``w``.

    * ``mode='jacobian'``: centre +- pad * w.
    * ``mode='corner'``: hull of the corners, widened by pad times the largest
      departure of a corner from the linear model (zero for multi-affine laws).
    * ``mode='sliced'``: the linear model image is cut along each free axis
      into pieces spanning about one output cell, and each piece is boxed and
      widened like the corner mode.  A long oblique image then costs a chain
      of small boxes instead of its bounding box.
    """
    d = chart.dim
    lx = np.zeros(d, dtype=bool)
    lx[list(chart.left_shift_axes)] = True
    ry = np.zeros(d, dtype=bool)
    ry[list(chart.right_shift_axes)] = True
    xs, xe = xb
    ys, ye = yb
    hx, hy = X.side, Y.side
    # representative point of each box: lower face on shift axes, centre elsewhere
    xc = xs * hx + np.where(lx, 0.0, 0.5 * hx)
    yc = ys * hy + np.where(ry, 0.0, 0.5 * hy)
    free = [(0, k) for k in np.flatnonzero(~lx)] + [(1, k) for k in np.flatnonzero(~ry)]
    nf = len(free)
    signs = np.array([[1.0 if (m >> f) & 1 else -1.0 for f in range(nf)] for m in range(2 ** nf)])
    xlen = np.where(lx, xe * hx, 0.0)
    ylen = np.where(ry, ye * hy, 0.0)
    nx, ny = len(xs), len(ys)
    total = nx * ny
    nm = len(signs)
    da = np.zeros((nm, d))
    db = np.zeros((nm, d))
    for f, (side, k) in enumerate(free):
        if side == 0:
            da[:, k] = 0.5 * signs[:, f] * hx[k]
        else:
            db[:, k] = 0.5 * signs[:, f] * hy[k]
    proj = signs.T / nm
    for s in range(0, total, chunk):
        pid = np.arange(s, min(total, s + chunk))
        i, j = pid // ny, pid % ny
        a, b = xc[i], yc[j]
        n = len(pid)
        c = chart.multiply(a, b)
        raw = chart.multiply((a[None] + da[:, None]).reshape(-1, d), (b[None] + db[:, None]).reshape(-1, d))
        corners = (np.tile(c, (nm, 1)) + chart.diff(raw, np.tile(c, (nm, 1)))).reshape(nm, n, d)
        # slopes of the least-squares linear model through the corners
        slope = (proj @ corners.reshape(nm, n * d)).reshape(nf, n, d)
        w = np.abs(slope).sum(axis=0)
        if mode == "jacobian":
            lo, hi = c - pad * w, c + pad * w
        elif mode in ("corner", "sliced"):
            model = c[None] + (signs @ slope.reshape(nf, n * d)).reshape(nm, n, d)
            dev = np.abs(corners - model).max(axis=0)
            if mode == "sliced":
                lo, hi, rep = _slice_boxes(c, slope, pad * dev, out_side * slice_cells, max_slices)
                i, j = i[rep], j[rep]
            else:
                lo = np.minimum(corners.min(axis=0), c) - pad * dev
                hi = np.maximum(corners.max(axis=0), c) + pad * dev
        else:
            raise ValueError(f"unknown enclosure mode {mode!r}")
        yield lo, hi + xlen[i] + ylen[j]


def _slice_boxes(c, slope, margin, piece, max_slices):
    """Cover the zonotope c + sum_f slope_f [-1, 1] (widened by margin) with
    boxes no wider than ``piece`` per free axis where possible.  Returns lo,
    hi and the source pair of each box."""
    nf, n, d = slope.shape
    span = (2.0 * np.abs(slope) / piece).max(axis=2)
    cuts = np.clip(np.ceil(span), 1, max_slices).astype(np.int64)
    # keep the number of pieces per pair bounded
    while True:
        total = cuts.prod(axis=0)
        over = total > max_slices
        if not over.any():
            break
        f = np.argmax(np.where(over[None], cuts, 0), axis=0)
        cols = np.flatnonzero(over)
        cuts[f[cols], cols] = np.maximum(1, cuts[f[cols], cols] // 2)
    total = cuts.prod(axis=0)
    rep = np.repeat(np.arange(n), total)
    q = np.arange(len(rep)) - np.repeat(np.cumsum(total) - total, total)
    centre = c[rep].copy()
    half = margin[rep].copy()
    for f in range(nf):
        k = cuts[f, rep]
        pos = q % k
        q = q // k
        sf = slope[f, rep]
        centre += sf * ((2.0 * pos + 1.0) / k - 1.0)[:, None]
        half += np.abs(sf) / k[:, None]
    return centre - half, centre + half, rep


class _Raster:
    """Growable difference array accumulating a union of closed boxes."""

    def __init__(self, side: np.ndarray, nper: np.ndarray):
        self.side = side
        self.nper = nper
        self.dim = len(side)
        self.origin = None
        self.diff = None

    def _index_boxes(self, lo, hi):
        # closed cells: a box ending within SNAP cell widths of a grid face does
        # not claim the neighbouring cell
        i0 = np.floor(lo / self.side + SNAP).astype(np.int64)
        i1 = np.ceil(hi / self.side - SNAP).astype(np.int64) - 1
        i1 = np.maximum(i1, i0)
        for k in np.flatnonzero(self.nper):
            n = self.nper[k]
            full = (i1[:, k] - i0[:, k] + 1) >= n
            i0[full, k] = 0
            i1[full, k] = n - 1
            shift = np.floor_divide(i0[:, k], n) * n
            i0[:, k] -= shift
            i1[:, k] -= shift
            wrap = i1[:, k] >= n
            if wrap.any():
                a0, a1 = i0[wrap].copy(), i1[wrap].copy()
                a0[:, k] = 0
                a1[:, k] -= n
                i1[wrap, k] = n - 1
                i0 = np.concatenate([i0, a0])
                i1 = np.concatenate([i1, a1])
        return i0, i1

    def _ensure(self, lo_idx, hi_idx):
        lo_idx = lo_idx.copy()
        hi_idx = hi_idx.copy()
        for k in np.flatnonzero(self.nper):
            lo_idx[k], hi_idx[k] = 0, self.nper[k] - 1
        if self.diff is not None:
            old_top = self.origin + np.array(self.diff.shape) - 2
            if np.all(lo_idx >= self.origin) and np.all(hi_idx <= old_top):
                return
            slack = np.where(self.nper > 0, 0, np.array(self.diff.shape) // 4)
            lo_idx = np.minimum(lo_idx, self.origin - slack)
            hi_idx = np.maximum(hi_idx, old_top + slack)
            for k in np.flatnonzero(self.nper):
                lo_idx[k], hi_idx[k] = 0, self.nper[k] - 1
        shape = tuple(int(v) for v in (hi_idx - lo_idx + 2))
        if float(np.prod(shape, dtype=np.float64)) > DENSE_LIMIT:
            raise MemoryError(f"product grid {shape} exceeds the dense limit; lower out_level")
        new = np.zeros(shape, dtype=np.int32)
        if self.diff is not None:
            off = self.origin - lo_idx
            sl = tuple(slice(int(o), int(o) + s) for o, s in zip(off, self.diff.shape))
            new[sl] = self.diff
        self.origin, self.diff = lo_idx, new

    def add(self, lo: np.ndarray, hi: np.ndarray) -> None:
        i0, i1 = self._index_boxes(lo, hi)
        if len(i0) == 0:
            return
        self._ensure(i0.min(axis=0), i1.max(axis=0))
        shape = self.diff.shape
        a = i0 - self.origin
        b = i1 - self.origin + 1
        strides = np.array([int(np.prod(shape[k + 1:])) for k in range(self.dim)], dtype=np.int64)
        flats, signs = [], []
        for mask in range(2 ** self.dim):
            sel = np.array([(mask >> k) & 1 for k in range(self.dim)], dtype=bool)
            corner = np.where(sel, b, a)
            flats.append(corner @ strides)
            signs.append(np.full(len(a), -1.0 if sel.sum() % 2 else 1.0))
        acc = np.bincount(np.concatenate(flats), weights=np.concatenate(signs), minlength=self.diff.size)
        self.diff += acc.reshape(shape).astype(np.int32)

    def result(self):
        if self.diff is None:
            return np.zeros(self.dim, dtype=np.int64), np.zeros((0,) * self.dim, dtype=bool)
        cov = self.diff
        for k in range(self.dim):
            cov = np.cumsum(cov, axis=k, dtype=np.int32)
        return self.origin, cov[tuple(slice(0, s - 1) for s in cov.shape)] > 0


def _fill_enclosed(covered: np.ndarray, nper: np.ndarray) -> np.ndarray:
    """Add every complement component that does not reach the outer margin
    along a non-periodic axis."""
    dim = covered.ndim
    pad = [(0, 0) if nper[k] else (1, 1) for k in range(dim)]
    free = ~np.pad(covered, pad, constant_values=False)
    labels, nlab = ndimage.label(free, structure=ndimage.generate_binary_structure(dim, 1))
    if nlab == 0:
        return covered
    parent = np.arange(nlab + 1)

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for k in np.flatnonzero(nper):
        a = np.take(labels, 0, axis=k).ravel()
        b = np.take(labels, labels.shape[k] - 1, axis=k).ravel()
        for u, v in set(zip(a[(a > 0) & (b > 0)].tolist(), b[(a > 0) & (b > 0)].tolist())):
            ru, rv = find(u), find(v)
            if ru != rv:
                parent[max(ru, rv)] = min(ru, rv)
    roots = np.array([find(x) for x in range(nlab + 1)])
    outside = set()
    for k in range(dim):
        if nper[k]:
            continue
        for face in (0, labels.shape[k] - 1):
            f = np.take(labels, face, axis=k)
            outside.update(roots[np.unique(f[f > 0])].tolist())
    inside_lab = np.array([x > 0 and roots[x] not in outside for x in range(nlab + 1)])
    enclosed = inside_lab[labels]
    core = tuple(slice(1, -1) if not nper[k] else slice(None) for k in range(dim))
    return covered | enclosed[core]


def _dense_to_idx(origin: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return np.argwhere(mask).astype(np.int64) + origin


def product_set(X: CellSet, Y: CellSet, out_level: Optional[int] = None, *, out_base=None,
                pad: float = 1.5, method: str = "auto", enclosure: str = "sliced",
                strict: bool = False, chunk: int = 100_000) -> CellSet:
    """Certified outer cover of X.Y.

    Each pair of cell boxes is enclosed by its centre product padded by
    ``pad`` times the first-order (secant Jacobian) extent.  Boxes are merged
    along axes on which left (for X) or right (for Y) translation acts as a
    coordinate shift; the enclosure is then swept along the merged extent.
    With ``method='boundary'`` only boundary cells are paired and the interior
    is recovered by filling the enclosed complement components, which is sound
    because the boundary of X.Y lies in (boundary X).(boundary Y)."""
    chart = X.chart
    if Y.chart is not chart:
        raise ValueError("X and Y live on different charts")
    if out_level is None:
        out_level = max(X.level, Y.level)
    if out_level < max(X.level, Y.level) and out_base is None:
        raise ValueError("out_level must be at least the input levels")
    base = X.base if out_base is None else np.asarray(out_base, dtype=float)
    proto = CellSet(chart, out_level, np.zeros(0, dtype=np.int64), "outer", base)
    if X.empty or Y.empty:
        return proto
    nper = proto.periods()
    if method == "auto":
        big = len(X) * len(Y) > 4_000_000
        method = "boundary" if big and not np.all(chart.periodic) else "pairs"
    if method == "boundary":
        if np.all(chart.periodic):
            raise ValueError("boundary method needs a non-periodic axis")
        # boundary(XY) lies in boundary(X).boundary(Y), hence in either
        # boundary(X).Y or X.boundary(Y); each factor contributes whichever of
        # its full or boundary box decomposition is smaller
        xb = min(_boxes(X.idx, chart.left_shift_axes), _boxes(X.boundary().idx, chart.left_shift_axes),
                 key=lambda b: len(b[0]))
        yb = min(_boxes(Y.idx, chart.right_shift_axes), _boxes(Y.boundary().idx, chart.right_shift_axes),
                 key=lambda b: len(b[0]))
    elif method == "pairs":
        xb = _boxes(X.idx, chart.left_shift_axes)
        yb = _boxes(Y.idx, chart.right_shift_axes)
    else:
        raise ValueError(f"unknown product method {method!r}")
    raster = _Raster(proto.side, nper)
    for lo, hi in _enclosures(chart, X, Y, xb, yb, pad, chunk, enclosure, proto.side):
        raster.add(lo, hi)
    origin, cov = raster.result()
    if method == "boundary":
        cov = _fill_enclosed(cov, nper)
    idx = _dense_to_idx(origin, cov)
    notes = []
    lo = idx * proto.side
    ok = np.ones(len(idx), dtype=bool)
    for k in range(chart.dim):
        if chart.periodic[k]:
            continue
        ok &= (lo[:, k] > chart.lower[k]) & (lo[:, k] + proto.side[k] < chart.upper[k])
    if not ok.all():
        msg = f"{int((~ok).sum())} product cells outside the domain of {chart.name} were clipped"
        if strict:
            raise CoverageError(msg)
        warnings.warn(msg, CoverageWarning, stacklevel=2)
        notes.append(msg)
        idx = idx[ok]
    meta = {"pad": pad, "method": method, "enclosure": enclosure, "pairs": int(len(xb[0]) * len(yb[0]))}
    return CellSet.from_indices(chart, out_level, idx, "outer", base, notes=tuple(notes), meta=meta)


def sample_points(S: CellSet, n: int, rng: np.random.Generator) -> np.ndarray:
    """Points drawn uniformly in chart coordinates over the cells of S."""
    pick = rng.integers(0, len(S), size=n)
    u = rng.random((n, S.chart.dim))
    return S.chart.wrap((S.idx[pick] + u) * S.side)


def product_set_inner(X: CellSet, Y: CellSet, out_level: Optional[int] = None, samples: int = 100_000,
                      seed: int = 0, *, k: int = 3, out_base=None, batch: int = 250_000) -> CellSet:
    """Monte-Carlo inner estimate of X.Y: a cell is kept when it received at
    least ``k`` sampled products and each of its 2d face neighbours received
    at least one.  Statistical, not certified."""
    chart = X.chart
    if Y.chart is not chart:
        raise ValueError("X and Y live on different charts")
    if samples < 1:
        raise ValueError("samples must be positive")
    if out_level is None:
        out_level = max(X.level, Y.level)
    base = X.base if out_base is None else np.asarray(out_base, dtype=float)
    proto = CellSet(chart, out_level, np.zeros(0, dtype=np.int64), "inner", base)
    if X.empty or Y.empty:
        return proto
    rng = np.random.default_rng(seed)
    # strata: X x Y, boundary(X) x boundary(Y), and the two mixed pairings;
    # the boundary of X.Y is reached only through boundary pairs
    bX, bY = X.boundary(), Y.boundary()
    strata = [(X, Y), (bX, bY), (bX, Y), (X, bY)]
    keys_acc, cnt_acc = [], []
    done = 0
    step = 0
    per = max(1, min(batch, -(-samples // len(strata))))
    while done < samples:
        m = min(per, samples - done)
        A, B = strata[step % len(strata)]
        step += 1
        p = chart.multiply(sample_points(A, m, rng), sample_points(B, m, rng))
        p = p[chart.in_domain(p) | np.all(chart.periodic)]
        kk, cc = np.unique(pack(proto.point_index(p)), return_counts=True)
        keys_acc.append(kk)
        cnt_acc.append(cc)
        done += m
    allk = np.concatenate(keys_acc)
    allc = np.concatenate(cnt_acc)
    keys, inv = np.unique(allk, return_inverse=True)
    counts = np.bincount(inv, weights=allc).astype(np.int64)
    hit = CellSet(chart, out_level, keys, "inner", base)
    idx = hit.idx
    nb_ok = np.ones(len(idx), dtype=bool)
    for a in range(chart.dim):
        for s in (-1, 1):
            nb = idx.copy()
            nb[:, a] += s
            nb_ok &= hit.has_cells(nb)
    keep = nb_ok & (counts >= k)
    # Poisson variance of the marking decision for corroborated cells
    p = stats.poisson.sf(k - 1, counts[nb_ok])
    sigma_cells = float(np.sqrt(np.sum(p * (1.0 - p))))
    meta = {"samples": int(samples), "seed": int(seed), "k": int(k), "mc_sigma_cells": sigma_cells,
            "hit_cells": int(len(keys))}
    return CellSet(chart, out_level, keys[keep], "inner", base, meta=meta)

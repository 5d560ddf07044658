"""Fibre lengths over a quotient by an axis-aligned normal subgroup.

A split names the chart axes spanning a normal subgroup H.  The quotient G/H
is parametrized by the remaining axes through the section that puts the
identity's H coordinates on the H axes.  The fibre length of a set at a
quotient point q is the H-measure of sigma(q)^-1 Omega intersected with H,
computed from the group law; H coordinates are assumed to be Haar
coordinates of H and the fibre map z -> sigma(q)^-1 (q, z) to act axis by
axis, both of which hold for every split built here.
"""
from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .groups import GroupChart, affine, euclidean, heisenberg, parse_group
from .cells import CellSet, measure, pack, product_set, unpack


class SplitError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FiberSplit:
    group: GroupChart
    axes: tuple[int, ...]
    quotient_density: Callable[[np.ndarray], np.ndarray]
    name: str = ""

    @property
    def quotient_axes(self) -> tuple[int, ...]:
        return tuple(k for k in range(self.group.dim) if k not in self.axes)

    def section(self, q: np.ndarray) -> np.ndarray:
        q = np.asarray(q, float)
        g = np.broadcast_to(self.group.identity, q.shape[:-1] + (self.group.dim,)).copy()
        g[..., list(self.quotient_axes)] = q
        return g

    def h_coords(self, g: np.ndarray) -> np.ndarray:
        return np.asarray(g)[..., list(self.axes)]

    def validate(self, samples: int = 200, seed: int = 0, tol: float = 1e-9) -> None:
        """Check on random samples that H is a subgroup and is normal."""
        G = self.group
        rng = np.random.default_rng(seed)
        qa = list(self.quotient_axes)

        def in_h(x):
            return np.allclose(x[:, qa], G.identity[qa], atol=tol, rtol=tol)

        def h_elements():
            h = np.broadcast_to(G.identity, (samples, G.dim)).copy()
            h[:, list(self.axes)] = G.random_elements(rng, samples)[:, list(self.axes)]
            return h

        h1, h2 = h_elements(), h_elements()
        g = G.random_elements(rng, samples)
        if not (in_h(G.multiply(h1, h2)) and in_h(G.invert(h1))):
            raise SplitError(f"axes {self.axes} of {G.name} do not form a subgroup")
        if not in_h(G.multiply(G.multiply(g, h1), G.invert(g))):
            raise SplitError(f"axes {self.axes} of {G.name} do not form a normal subgroup")


def center_split() -> FiberSplit:
    """Heisenberg group over its centre; the quotient is the (x, y) plane."""
    return FiberSplit(heisenberg(), (2,), lambda q: np.ones(np.shape(q)[:-1]), "heis3/center")


def coordinate_split(d: int, axes) -> FiberSplit:
    axes = tuple(sorted(int(a) for a in axes))
    if not axes or any(a < 0 or a >= d for a in axes) or len(axes) == d:
        raise SplitError("need a proper nonempty set of axes")
    return FiberSplit(euclidean(d), axes, lambda q: np.ones(np.shape(q)[:-1]), f"r:{d}/{axes}")


def modular_kernel_split() -> FiberSplit:
    """Affine group over the translations b; the quotient a > 0 carries da / a."""
    return FiberSplit(affine(), (1,), lambda q: 1.0 / np.asarray(q, float)[..., 0], "aff/kernel")


def split_for(group, axes=None) -> FiberSplit:
    chart = parse_group(group) if isinstance(group, str) else group
    if chart.name == "heis3" and axes in (None, (2,), [2]):
        return center_split()
    if chart.name == "aff" and axes in (None, (1,), [1]):
        return modular_kernel_split()
    if chart.name.startswith("r:"):
        return coordinate_split(chart.dim, axes if axes is not None else (chart.dim - 1,))
    raise SplitError(f"no fibre split for {chart.name} with axes {axes}")


# ----------------------------------------------------------------- profiles

@dataclass
class FiberProfile:
    split: FiberSplit
    centers: np.ndarray            # (N, k) quotient coordinates of quotient cells
    values: np.ndarray             # fibre lengths
    weights: np.ndarray            # quotient measure of each cell
    level: int
    role: str = "exact"
    meta: dict = field(default_factory=dict)

    def superlevel_measure(self, t: float) -> float:
        return superlevel_measure(self, t)

    @property
    def max(self) -> float:
        return float(self.values.max()) if len(self.values) else 0.0

    def integral(self, power: float = 1.0) -> float:
        return float(np.sum(self.weights * self.values ** power))

    def to_csv(self) -> str:
        buf = io.StringIO()
        k = self.centers.shape[1]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"q{i}" for i in range(k)] + ["value", "weight"])
        for c, v, m in zip(self.centers, self.values, self.weights):
            w.writerow([repr(float(x)) for x in c] + [repr(float(v)), repr(float(m))])
        return buf.getvalue()


def _check_split(split: FiberSplit, S: CellSet):
    if S.chart.name != split.group.name:
        raise SplitError(f"set lives on {S.chart.name}, split on {split.group.name}")
    if any(S.chart.periodic[list(split.axes)]):
        raise SplitError("periodic fibre axes are not supported")


def _columns(split: FiberSplit, S: CellSet):
    """Group the cells of S by quotient cell: (quotient idx, inverse map)."""
    qa = list(split.quotient_axes)
    qidx = S.idx[:, qa]
    uq, inv = np.unique(qidx, axis=0, return_inverse=True)
    return uq, inv.ravel()


def _quotient_weights(split: FiberSplit, S: CellSet, centers: np.ndarray) -> np.ndarray:
    qa = list(split.quotient_axes)
    vol = float(np.prod(S.side[qa]))
    # Simpson in each quotient direction on the cell
    h = S.side[qa]
    acc = np.zeros(len(centers))
    nodes = [(-0.5, 1 / 6), (0.0, 4 / 6), (0.5, 1 / 6)]
    grids = np.meshgrid(*[range(3)] * len(qa), indexing="ij")
    for combo in zip(*[g.ravel() for g in grids]):
        off = np.array([nodes[c][0] for c in combo]) * h
        wt = np.prod([nodes[c][1] for c in combo])
        acc += wt * split.quotient_density(centers + off)
    return acc * vol


def _fiber_lengths(split: FiberSplit, S: CellSet, qcent: np.ndarray) -> np.ndarray:
    """H-measure of every cell of S seen from the section point over its column."""
    G = split.group
    ha = list(split.axes)
    lo = S.idx * S.side
    length = np.ones(len(S))
    sig_inv = G.invert(split.section(qcent))
    base = lo.copy()
    base[:, list(split.quotient_axes)] = qcent
    h0 = split.h_coords(G.multiply(sig_inv, base))
    for j, a in enumerate(ha):
        top = base.copy()
        top[:, a] += S.side[a]
        h1 = split.h_coords(G.multiply(sig_inv, top))
        length *= np.abs(h1[:, j] - h0[:, j])
    return length


def fiber_profile(split: FiberSplit, omega: CellSet) -> FiberProfile:
    _check_split(split, omega)
    qa = list(split.quotient_axes)
    if omega.empty:
        k = len(qa)
        return FiberProfile(split, np.zeros((0, k)), np.zeros(0), np.zeros(0), omega.level, omega.role)
    uq, inv = _columns(split, omega)
    centers = (uq + 0.5) * omega.side[qa]
    lengths = _fiber_lengths(split, omega, centers[inv])
    values = np.bincount(inv, weights=lengths, minlength=len(uq))
    weights = _quotient_weights(split, omega, centers)
    return FiberProfile(split, centers, values, weights, omega.level, omega.role,
                        {"side": omega.side[qa].tolist()})


def quotient_integral_check(split: FiberSplit, omega: CellSet) -> float:
    """|mu_G(omega) - integral of the fibre length over G/H| / mu_G(omega)."""
    m = measure(omega, "left")[0]
    if m <= 0:
        raise ValueError("quotient integral check needs positive measure")
    p = fiber_profile(split, omega)
    return abs(m - p.integral()) / m


def superlevel_measure(p: FiberProfile, t: float) -> float:
    if t < 0:
        raise ValueError("superlevel threshold must be nonnegative")
    return float(p.weights[p.values >= t].sum())


def layer_cake(p: FiberProfile, r: float, nodes: int = 20_000) -> float:
    """Integral of r t^(r-1) times the superlevel measure at t, by quadrature in t."""
    top = p.max
    if top == 0:
        return 0.0
    order = np.argsort(p.values)
    v = p.values[order]
    tail = np.cumsum(p.weights[order][::-1])[::-1]          # measure of {f >= v_i}
    t = (np.arange(nodes) + 0.5) * (top / nodes)
    pos = np.searchsorted(v, t, side="left")
    lev = np.where(pos < len(v), tail[np.minimum(pos, len(v) - 1)], 0.0)
    return float(np.sum(r * t ** (r - 1) * lev) * (top / nodes))


def spillover_exponents(n1: int, n2: int) -> tuple[float, float]:
    """(alpha, beta / n2); the ratio beta / n2 simplifies to 1 / (n1 + n2 - 1),
    which also covers n2 = 0."""
    if n1 < 1 or n2 < 0:
        raise ValueError("need n1 >= 1 and n2 >= 0")
    gamma = n1 + n2 - 1
    if gamma == 0:
        raise ValueError("the functional is undefined for n1 + n2 = 1")
    return (n1 - 1) / gamma, 1.0 / gamma


def spillover_F(p: FiberProfile, n1: int, n2: int, t: float) -> float:
    if not t > 0:
        raise ValueError("spillover functional needs t > 0")
    alpha, e = spillover_exponents(n1, n2)
    return float(t ** alpha * superlevel_measure(p, t ** n1) ** e)


# ----------------------------------------------------------------- inner fibres of XY

def _runs(split: FiberSplit, S: CellSet):
    """Per quotient cell the maximal runs of cells along the (single) fibre axis.

    Returns quotient index array, and run arrays (column id, z_lo, z_hi)."""
    a = split.axes[0]
    qa = list(split.quotient_axes)
    order = np.lexsort([S.idx[:, a]] + [S.idx[:, k] for k in reversed(qa)])
    idx = S.idx[order]
    q = idx[:, qa]
    z = idx[:, a]
    new_col = np.r_[True, np.any(q[1:] != q[:-1], axis=1)]
    new_run = new_col | np.r_[True, z[1:] != z[:-1] + 1]
    col = np.cumsum(new_col) - 1
    starts = np.flatnonzero(new_run)
    ends = np.r_[starts[1:], len(z)] - 1
    uq = q[new_col]
    h = S.side[a]
    return uq, col[starts], z[starts] * h, (z[ends] + 1) * h


def product_fiber_inner(split: FiberSplit, X: CellSet, Y: CellSet, targets: np.ndarray,
                        chunk: int = 400_000) -> np.ndarray:
    """Lower bounds for the fibre lengths of XY over the quotient points
    ``targets``.

    For every target q and every quotient cell of X with centre q1, the point
    q2 = pi(sigma(q1)^-1 sigma(q)) is located among the quotient cells of Y;
    each pair of fibre runs then contributes the image interval of
    (q1, z) . (q2, w) in the fibre over q.  The union length of these
    intervals is a lower bound for the fibre length of XY at q.
    """
    if len(split.axes) != 1:
        raise SplitError("inner product fibres need a one-dimensional fibre")
    G = split.group
    a = split.axes[0]
    qa = list(split.quotient_axes)
    xq, xcol, xz0, xz1 = _runs(split, X)
    yq, ycol, yz0, yz1 = _runs(split, Y)
    xc = (xq + 0.5) * X.side[qa]
    yside = Y.side[qa]
    ykeys = pack(yq)
    yorder = np.argsort(ykeys)
    ykeys_sorted = ykeys[yorder]
    # runs of each Y column as a CSR table
    ystart = np.searchsorted(ycol, np.arange(len(yq)), side="left")
    ycount = np.bincount(ycol, minlength=len(yq))
    xstart = np.searchsorted(xcol, np.arange(len(xq)), side="left")
    xcount = np.bincount(xcol, minlength=len(xq))
    nt = len(targets)
    sig_t_inv_all = G.invert(split.section(targets))
    pieces_t, pieces_lo, pieces_hi = [], [], []
    per = max(1, chunk // max(len(xq), 1))
    # zero first, then every per-axis sign pattern of a tiny nudge
    nudges = [np.asarray(v) * 1e-9 for v in itertools.product((0.0, -1.0, 1.0), repeat=len(qa))]
    for s in range(0, nt, per):
        ti = np.arange(s, min(nt, s + per))
        T, C = np.meshgrid(ti, np.arange(len(xq)), indexing="ij")
        T, C = T.ravel(), C.ravel()
        g1 = split.section(xc[C])
        gq = split.section(targets[T])
        q2 = G.multiply(G.invert(g1), gq)[:, qa]
        found = np.full(len(T), -1, dtype=np.int64)
        # closed cells: a point on a face may belong to either neighbour
        for nudge in nudges:
            cell = np.floor(q2 / yside + nudge).astype(np.int64)
            key = pack(cell)
            pos = np.searchsorted(ykeys_sorted, key)
            pos = np.minimum(pos, len(ykeys_sorted) - 1)
            hit = (ykeys_sorted[pos] == key) & (found < 0)
            found[hit] = yorder[pos[hit]]
        ok = found >= 0
        T, C, Yc, q2 = T[ok], C[ok], found[ok], q2[ok]
        if len(T) == 0:
            continue
        # enumerate run pairs
        nx, ny = xcount[C], ycount[Yc]
        npair = nx * ny
        rep = np.repeat(np.arange(len(T)), npair)
        k = np.arange(len(rep)) - np.repeat(np.cumsum(npair) - npair, npair)
        xr = xstart[C[rep]] + k // ny[rep]
        yr = ystart[Yc[rep]] + k % ny[rep]
        p_lo = split.section(xc[C[rep]])
        p_lo[:, a] = xz0[xr]
        p_hi = p_lo.copy()
        p_hi[:, a] = xz1[xr]
        w_lo = split.section(q2[rep])
        w_lo[:, a] = yz0[yr]
        w_hi = w_lo.copy()
        w_hi[:, a] = yz1[yr]
        sig = sig_t_inv_all[T[rep]]
        h_lo = G.multiply(sig, G.multiply(p_lo, w_lo))[:, a]
        h_hi = G.multiply(sig, G.multiply(p_hi, w_hi))[:, a]
        pieces_t.append(T[rep])
        pieces_lo.append(np.minimum(h_lo, h_hi))
        pieces_hi.append(np.maximum(h_lo, h_hi))
    out = np.zeros(nt)
    if not pieces_t:
        return out
    t = np.concatenate(pieces_t)
    lo = np.concatenate(pieces_lo)
    hi = np.concatenate(pieces_hi)
    # union length per target: shift each target's intervals into its own lane
    span = float(hi.max() - lo.min()) + 1.0
    off = t * span - lo.min()
    lo, hi = lo + off, hi + off
    order = np.lexsort([lo, t])
    t, lo, hi = t[order], lo[order], hi[order]
    reach = np.maximum.accumulate(hi)
    prev = np.r_[-np.inf, reach[:-1]]
    first = np.r_[True, t[1:] != t[:-1]]
    prev[first] = -np.inf
    gain = np.maximum(0.0, hi - np.maximum(lo, prev))
    np.add.at(out, t, gain)
    return out


def product_fiber_profile(split: FiberSplit, X: CellSet, Y: CellSet, P: Optional[CellSet] = None) -> FiberProfile:
    """Inner fibre profile of XY over the quotient cells of an outer cover P."""
    _check_split(split, X)
    _check_split(split, Y)
    if P is None:
        P = product_set(X, Y)
    qa = list(split.quotient_axes)
    uq, _ = _columns(split, P)
    centers = (uq + 0.5) * P.side[qa]
    values = product_fiber_inner(split, X, Y, centers)
    weights = _quotient_weights(split, P, centers)
    return FiberProfile(split, centers, values, weights, P.level, "inner", {"side": P.side[qa].tolist()})


@dataclass
class ConvexityResult:
    worst: float
    at: tuple[float, float]
    t1: np.ndarray
    t2: np.ndarray
    margins: np.ndarray


def spillover_convexity_check(split: FiberSplit, X: CellSet, Y: CellSet, n1: int, n2: int,
                              grid: int = 50, P: Optional[CellSet] = None) -> ConvexityResult:
    """Worst margin of F_XY(t1 + t2) - F_X(t1) - F_Y(t2) over a grid of levels.

    The grid spans (0, T] on each side where T^n1 is the largest fibre length
    of the factor; XY fibres use the inner estimate."""
    fx = fiber_profile(split, X)
    fy = fiber_profile(split, Y)
    fxy = product_fiber_profile(split, X, Y, P)
    t1 = fx.max ** (1.0 / n1) * np.arange(1, grid + 1) / grid
    t2 = fy.max ** (1.0 / n1) * np.arange(1, grid + 1) / grid
    Fx = np.array([spillover_F(fx, n1, n2, t) for t in t1])
    Fy = np.array([spillover_F(fy, n1, n2, t) for t in t2])
    S = t1[:, None] + t2[None, :]
    Fxy = np.vectorize(lambda t: spillover_F(fxy, n1, n2, t))(S)
    M = Fxy - Fx[:, None] - Fy[None, :]
    i, j = np.unravel_index(np.argmin(M), M.shape)
    return ConvexityResult(float(M[i, j]), (float(t1[i]), float(t2[j])), t1, t2, M)


# ----------------------------------------------------------------- deficit bound

def _deficit_ratio(logr: np.ndarray, a: float, b: float, n: int, eps: float) -> np.ndarray:
    r = np.exp(logr)
    e = 1.0 / (n + 1)
    u = (r * a * b) ** e
    v = (r * (a + eps) * (b + eps)) ** e
    return (v - u) / ((1.0 + u) * (1.0 + v))


GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def scale_deficit(a: float, b: float, n: int, eps: float, *, bracket=(1e-8, 1e8),
                  scan: int = 64, tol: float = 1e-12) -> float:
    """Supremum over r > 0 of the deficit ratio bounding the excess of the
    two-sided functional for sets with nearly constant modular value.

    The same expression covers n = 0, where the exponent 1/(n+1) equals 1.
    The search scans log r over the bracket, then runs golden-section search
    around the best scan point."""
    if a <= 0 or b <= 0 or eps < 0 or n < 0:
        raise ValueError("need a, b > 0, eps >= 0 and n >= 0")
    if eps == 0:
        return 0.0
    lo, hi = math.log(bracket[0]), math.log(bracket[1])
    xs = np.linspace(lo, hi, scan)
    fs = _deficit_ratio(xs, a, b, n, eps)
    k = int(np.argmax(fs))
    # expand outward if the maximum sits on the bracket edge
    while k in (0, len(xs) - 1):
        step = hi - lo
        lo, hi = (lo - step, lo) if k == 0 else (hi, hi + step)
        xs = np.linspace(lo, hi, scan)
        fs = _deficit_ratio(xs, a, b, n, eps)
        k = int(np.argmax(fs))
        if hi - lo > 1e4:
            break
    x0, x1 = xs[max(k - 1, 0)], xs[min(k + 1, len(xs) - 1)]
    c = x1 - GOLDEN * (x1 - x0)
    d = x0 + GOLDEN * (x1 - x0)
    fc = float(_deficit_ratio(np.array(c), a, b, n, eps))
    fd = float(_deficit_ratio(np.array(d), a, b, n, eps))
    while x1 - x0 > tol:
        if fc > fd:
            x1, d, fd = d, c, fc
            c = x1 - GOLDEN * (x1 - x0)
            fc = float(_deficit_ratio(np.array(c), a, b, n, eps))
        else:
            x0, c, fc = c, d, fd
            d = x0 + GOLDEN * (x1 - x0)
            fd = float(_deficit_ratio(np.array(d), a, b, n, eps))
    return float(max(fc, fd, fs[k]))

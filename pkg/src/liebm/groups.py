"""Concrete Lie groups given by coordinate charts.

Every chart carries a vectorized group law.  Haar densities and the modular
function are derived from the law itself through translation Jacobians; the
closed forms attached to catalog charts are used only as cross-checks.

Conventions
-----------
* Coordinates are numpy arrays with the chart dimension on the last axis;
  every map here broadcasts over leading axes.
* The left Haar density is normalized by ``lambda(identity) = 1``.
* The modular function satisfies ``mu(A x) = Delta(x) mu(A)`` and the right
  Haar density is ``lambda / Delta``.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np

TWO_PI = 2.0 * math.pi

Law = Callable[[np.ndarray, np.ndarray], np.ndarray]
Map = Callable[[np.ndarray], np.ndarray]


class ChartDomainError(ValueError):
    """A point lies outside the chart domain or the chart is degenerate there."""


@dataclass(frozen=True)
class DimensionProfile:
    d: int
    m: int
    h: int = 0

    def __post_init__(self):
        if not (0 <= self.m <= self.d):
            raise ValueError(f"need 0 <= m <= d, got m={self.m}, d={self.d}")
        if self.h < 0 or self.h > (self.d - self.m) // 3:
            raise ValueError(f"helix dimension {self.h} violates h <= floor(n/3)")

    @property
    def n(self) -> int:
        return self.d - self.m

    @property
    def bm_exponent(self) -> int:
        return self.n - self.h

    def __add__(self, other: "DimensionProfile") -> "DimensionProfile":
        return DimensionProfile(self.d + other.d, self.m + other.m, self.h + other.h)

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.d, self.m, self.h, self.n)


# distance bounds over cells: (lo, hi) arrays of shape (N, d) -> (dmin, dmax)
DistanceBounds = Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True, eq=False)
class GroupChart:
    name: str
    dim: int
    multiply: Law
    invert: Map
    identity: np.ndarray
    profile: DimensionProfile
    lower: np.ndarray
    upper: np.ndarray
    period: np.ndarray
    base_side: np.ndarray
    left_shift_axes: tuple[int, ...] = ()
    right_shift_axes: tuple[int, ...] = ()
    left_density_closed: Optional[Map] = None
    modular_closed: Optional[Map] = None
    quotient_distance: Optional[Map] = None
    quotient_distance_bounds: Optional[DistanceBounds] = None
    # box (lo, hi) containing every g with quotient distance <= r
    ball_box: Optional[Callable[[float], tuple[np.ndarray, np.ndarray]]] = None
    expr: str = ""
    factors: tuple["GroupChart", ...] = field(default=())

    @property
    def periodic(self) -> np.ndarray:
        return self.period > 0

    @property
    def unimodular(self) -> bool:
        if self.modular_closed is None:
            return False
        rng = np.random.default_rng(0)
        g = self.random_elements(rng, 32)
        return bool(np.allclose(self.modular_closed(g), 1.0, rtol=1e-12))

    def wrap(self, x: np.ndarray) -> np.ndarray:
        """Reduce periodic coordinates into [0, period)."""
        if not self.periodic.any():
            return x
        x = np.array(x, dtype=float, copy=True)
        for k in np.flatnonzero(self.periodic):
            p = self.period[k]
            v = np.mod(x[..., k], p)
            x[..., k] = np.where(v >= p, v - p, v)
        return x

    def diff(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Coordinate difference a - b, taken modulo the period on periodic axes."""
        d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
        for k in np.flatnonzero(self.periodic):
            p = self.period[k]
            d[..., k] = d[..., k] - p * np.round(d[..., k] / p)
        return d

    def in_domain(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        ok = np.all(np.isfinite(x), axis=-1)
        ok &= np.all((x > self.lower) | self.periodic, axis=-1)
        ok &= np.all((x < self.upper) | self.periodic, axis=-1)
        return ok

    def check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ChartDomainError(f"{self.name}: expected {self.dim} coordinates, got {x.shape[-1]}")
        if not np.all(self.in_domain(x)):
            raise ChartDomainError(f"{self.name}: point outside chart domain")
        return x

    def random_elements(self, rng: np.random.Generator, size: int, scale: float = 1.0) -> np.ndarray:
        """Seeded sample of elements in a moderate region of the chart."""
        x = rng.uniform(-scale, scale, size=(size, self.dim))
        for k in range(self.dim):
            if self.period[k] > 0:
                x[:, k] = rng.uniform(0.0, self.period[k], size=size)
            elif np.isfinite(self.lower[k]):
                x[:, k] = self.lower[k] + np.exp(rng.uniform(-scale, scale, size=size))
        return x


@dataclass(frozen=True)
class Element:
    chart: GroupChart
    coords: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=float).reshape(-1)
        object.__setattr__(self, "coords", self.chart.check(c))

    def __mul__(self, other: "Element") -> "Element":
        if other.chart is not self.chart:
            raise ValueError("elements live on different charts")
        return Element(self.chart, self.chart.multiply(self.coords, other.coords))

    def inverse(self) -> "Element":
        return Element(self.chart, self.chart.invert(self.coords))


# ---------------------------------------------------------------- derivatives

def _fd_step(chart: GroupChart, at: np.ndarray) -> np.ndarray:
    # step scaled to the coordinate magnitude; Richardson removes the O(h^2) term
    return 1e-3 * np.maximum(1.0, np.abs(at))


def _translation_jacobian(chart: GroupChart, g: np.ndarray, side: str) -> np.ndarray:
    """Jacobian at the identity of y -> g.y (side='left') or y -> y.g (side='right').

    Central differences with one Richardson step; shape (..., d, d)."""
    g = np.asarray(g, dtype=float)
    e = chart.identity
    step = _fd_step(chart, e)

    def law(y):
        y = np.broadcast_to(y, g.shape)
        return chart.multiply(g, y) if side == "left" else chart.multiply(y, g)

    cols = []
    for j in range(chart.dim):
        de = np.zeros(chart.dim)
        de[j] = 1.0

        def central(s):
            return chart.diff(law(e + s * de), law(e - s * de)) / (2.0 * s)

        s = step[j]
        cols.append((4.0 * central(s / 2.0) - central(s)) / 3.0)
    return np.stack(cols, axis=-1)


def left_translation_jacobian(chart: GroupChart, g: np.ndarray) -> np.ndarray:
    return _translation_jacobian(chart, g, "left")


def right_translation_jacobian(chart: GroupChart, g: np.ndarray) -> np.ndarray:
    return _translation_jacobian(chart, g, "right")


def haar_left_density(chart: GroupChart, g) -> np.ndarray:
    """Left Haar density 1/|det J| with J the Jacobian of y -> g.y at the identity."""
    g = np.asarray(g, dtype=float)
    if g.shape[-1] != chart.dim:
        raise ChartDomainError(f"{chart.name}: expected {chart.dim} coordinates")
    if not np.all(chart.in_domain(g)):
        raise ChartDomainError(f"{chart.name}: point outside chart domain")
    det = np.abs(np.linalg.det(left_translation_jacobian(chart, g)))
    if np.any(det < 1e-300) or not np.all(np.isfinite(det)):
        raise ChartDomainError(f"{chart.name}: singular translation Jacobian")
    return 1.0 / det


def modular_value(chart: GroupChart, g) -> np.ndarray:
    """Delta(g) = lambda(g) |det D(y -> y.g)(e)|, so that mu(A g) = Delta(g) mu(A)."""
    g = np.asarray(g, dtype=float)
    lam = haar_left_density(chart, g)
    det = np.abs(np.linalg.det(right_translation_jacobian(chart, g)))
    return lam * det


def haar_right_density(chart: GroupChart, g) -> np.ndarray:
    """lambda(g) / Delta(g), a right-invariant density with the same normalization at e."""
    return haar_left_density(chart, g) / modular_value(chart, g)


# ------------------------------------------------------------------ catalog

def _ones(x):
    return np.ones(np.shape(x)[:-1])


def euclidean(d: int) -> GroupChart:
    def dist(x):
        return np.linalg.norm(np.asarray(x, dtype=float), axis=-1)

    def bounds(lo, hi):
        near = np.clip(0.0, lo, hi)
        far = np.maximum(np.abs(lo), np.abs(hi))
        return np.linalg.norm(near, axis=-1), np.linalg.norm(far, axis=-1)

    axes = tuple(range(d))
    return GroupChart(
        name=f"r:{d}", dim=d,
        multiply=lambda x, y: np.asarray(x, float) + np.asarray(y, float),
        invert=lambda x: -np.asarray(x, float),
        identity=np.zeros(d), profile=DimensionProfile(d, 0, 0),
        lower=np.full(d, -np.inf), upper=np.full(d, np.inf),
        period=np.zeros(d), base_side=np.ones(d),
        left_shift_axes=axes, right_shift_axes=axes,
        left_density_closed=_ones, modular_closed=_ones,
        quotient_distance=dist, quotient_distance_bounds=bounds,
        ball_box=lambda r: (np.full(d, -float(r)), np.full(d, float(r))),
        expr=f"r:{d}",
    )


def torus(d: int) -> GroupChart:
    """The torus (R/Z)^d in coordinates [0, 1)^d."""
    def wrap(v):
        v = np.mod(v, 1.0)
        return np.where(v >= 1.0, v - 1.0, v)

    def zero_bounds(lo, hi):
        z = np.zeros(np.shape(lo)[:-1])
        return z, z

    axes = tuple(range(d))
    return GroupChart(
        name=f"t:{d}", dim=d,
        multiply=lambda x, y: wrap(np.asarray(x, float) + np.asarray(y, float)),
        invert=lambda x: wrap(-np.asarray(x, float)),
        identity=np.zeros(d), profile=DimensionProfile(d, d, 0),
        lower=np.zeros(d), upper=np.ones(d),
        period=np.ones(d), base_side=np.ones(d),
        left_shift_axes=axes, right_shift_axes=axes,
        left_density_closed=_ones, modular_closed=_ones,
        quotient_distance=_ones_to_zero, quotient_distance_bounds=zero_bounds,
        ball_box=lambda r: (np.zeros(d), np.ones(d)),
        expr=f"t:{d}",
    )


def _ones_to_zero(x):
    return np.zeros(np.shape(x)[:-1])


def heisenberg() -> GroupChart:
    """Upper unitriangular 3x3 matrices: (x,y,z)(x',y',z') = (x+x', y+y', z+z'+xy')."""
    def mul(p, q):
        p = np.asarray(p, float)
        q = np.asarray(q, float)
        out = p + q
        out[..., 2] += p[..., 0] * q[..., 1]
        return out

    def inv(p):
        p = np.asarray(p, float)
        out = -p
        out[..., 2] = p[..., 0] * p[..., 1] - p[..., 2]
        return out

    return GroupChart(
        name="heis3", dim=3, multiply=mul, invert=inv,
        identity=np.zeros(3), profile=DimensionProfile(3, 0, 0),
        lower=np.full(3, -np.inf), upper=np.full(3, np.inf),
        period=np.zeros(3), base_side=np.ones(3),
        left_shift_axes=(1, 2), right_shift_axes=(0, 2),
        left_density_closed=_ones, modular_closed=_ones,
        expr="heis3",
    )


def affine() -> GroupChart:
    """Orientation-preserving affine maps x -> a x + b of the line, a > 0."""
    def mul(p, q):
        p = np.asarray(p, float)
        q = np.asarray(q, float)
        a = p[..., 0] * q[..., 0]
        b = p[..., 0] * q[..., 1] + p[..., 1]
        return np.stack([a, b], axis=-1)

    def inv(p):
        p = np.asarray(p, float)
        return np.stack([1.0 / p[..., 0], -p[..., 1] / p[..., 0]], axis=-1)

    return GroupChart(
        name="aff", dim=2, multiply=mul, invert=inv,
        identity=np.array([1.0, 0.0]), profile=DimensionProfile(2, 0, 0),
        lower=np.array([0.0, -np.inf]), upper=np.full(2, np.inf),
        period=np.zeros(2), base_side=np.ones(2),
        left_shift_axes=(1,), right_shift_axes=(),
        left_density_closed=lambda p: np.asarray(p, float)[..., 0] ** -2.0,
        modular_closed=lambda p: 1.0 / np.asarray(p, float)[..., 0],
        expr="aff",
    )


# SL(2,R) in Iwasawa coordinates g = k(theta) a(t) n(u) with
# k = rotation, a = diag(e^t, e^-t), n = [[1, u], [0, 1]].

def iwasawa_to_matrix(c: np.ndarray) -> np.ndarray:
    c = np.asarray(c, float)
    th, t, u = c[..., 0], c[..., 1], c[..., 2]
    co, si = np.cos(th), np.sin(th)
    et, emt = np.exp(t), np.exp(-t)
    m = np.empty(c.shape[:-1] + (2, 2))
    m[..., 0, 0] = co * et
    m[..., 1, 0] = si * et
    m[..., 0, 1] = co * et * u - si * emt
    m[..., 1, 1] = si * et * u + co * emt
    return m


def matrix_to_iwasawa(m: np.ndarray) -> np.ndarray:
    """Gram-Schmidt on the columns of an SL(2,R) matrix."""
    m = np.asarray(m, float)
    a, c = m[..., 0, 0], m[..., 1, 0]
    b, d = m[..., 0, 1], m[..., 1, 1]
    r2 = a * a + c * c
    th = np.mod(np.arctan2(c, a), TWO_PI)
    th = np.where(th >= TWO_PI, th - TWO_PI, th)
    t = 0.5 * np.log(r2)
    u = (a * b + c * d) / r2
    return np.stack([th, t, u], axis=-1)


def _sl2_mul(p, q):
    # k1 a1 n1 k2 a2 n2: the leading rotation only shifts theta, so only the
    # product (a1 n1)(k2 a2 n2) is formed explicitly
    p = np.asarray(p, float)
    q = np.asarray(q, float)
    e1 = np.exp(p[..., 1])
    u1 = p[..., 2]
    c2, s2 = np.cos(q[..., 0]), np.sin(q[..., 0])
    e2 = np.exp(q[..., 1])
    u2 = q[..., 2]
    q00, q10 = c2 * e2, s2 * e2
    q01 = q00 * u2 - s2 / e2
    q11 = q10 * u2 + c2 / e2
    a = e1 * (q00 + u1 * q10)
    c = q10 / e1
    b = e1 * (q01 + u1 * q11)
    d = q11 / e1
    r2 = a * a + c * c
    th = np.mod(p[..., 0] + np.arctan2(c, a), TWO_PI)
    th = np.where(th >= TWO_PI, th - TWO_PI, th)
    return np.stack([th, 0.5 * np.log(r2), (a * b + c * d) / r2], axis=-1)


def _sl2_inv(p):
    m = iwasawa_to_matrix(p)
    inv = np.empty_like(m)
    inv[..., 0, 0] = m[..., 1, 1]
    inv[..., 1, 1] = m[..., 0, 0]
    inv[..., 0, 1] = -m[..., 0, 1]
    inv[..., 1, 0] = -m[..., 1, 0]
    return matrix_to_iwasawa(inv)


def _hyperbolic_phi(s, u):
    # cosh d(i, z) - 1 for z = s (u + i)
    return 0.5 * (s * u * u + (s - 1.0) ** 2 / s)


def _sl2_distance(c):
    c = np.asarray(c, float)
    s = np.exp(2.0 * c[..., 1])
    return np.arccosh(1.0 + _hyperbolic_phi(s, c[..., 2]))


def _sl2_distance_bounds(lo, hi):
    s0, s1 = np.exp(2.0 * lo[..., 1]), np.exp(2.0 * hi[..., 1])
    u0, u1 = lo[..., 2], hi[..., 2]
    ustar = np.clip(0.0, u0, u1)
    sstar = np.clip(1.0 / np.sqrt(1.0 + ustar * ustar), s0, s1)
    phimin = _hyperbolic_phi(sstar, ustar)
    umax = np.maximum(np.abs(u0), np.abs(u1))
    phimax = np.maximum(_hyperbolic_phi(s0, umax), _hyperbolic_phi(s1, umax))
    return np.arccosh(1.0 + phimin), np.arccosh(1.0 + phimax)


def _sl2_ball_box(r: float):
    # d(i, g.i) >= 2|t|, and s u^2 / 2 <= cosh r - 1 with s >= e^-r
    umax = math.sqrt(2.0 * (math.cosh(r) - 1.0) * math.exp(r))
    return np.array([0.0, -r / 2, -umax]), np.array([TWO_PI, r / 2, umax])


def sl2r() -> GroupChart:
    return GroupChart(
        name="sl2r", dim=3, multiply=_sl2_mul, invert=_sl2_inv,
        identity=np.zeros(3), profile=DimensionProfile(3, 1, 0),
        lower=np.array([0.0, -np.inf, -np.inf]), upper=np.array([TWO_PI, np.inf, np.inf]),
        period=np.array([TWO_PI, 0.0, 0.0]), base_side=np.array([TWO_PI, 1.0, 1.0]),
        left_shift_axes=(0,), right_shift_axes=(2,),
        left_density_closed=lambda c: np.exp(2.0 * np.asarray(c, float)[..., 1]),
        modular_closed=_ones,
        quotient_distance=_sl2_distance, quotient_distance_bounds=_sl2_distance_bounds,
        ball_box=_sl2_ball_box,
        expr="sl2r",
    )


def product(*charts: GroupChart) -> GroupChart:
    """Direct product; coordinates are concatenated in order."""
    if len(charts) < 2:
        raise ValueError("product needs at least two factors")
    dims = [c.dim for c in charts]
    offs = np.concatenate([[0], np.cumsum(dims)])
    D = int(offs[-1])

    def split(x):
        x = np.asarray(x, float)
        return [x[..., offs[i]:offs[i + 1]] for i in range(len(charts))]

    def mul(p, q):
        return np.concatenate([c.multiply(a, b) for c, a, b in zip(charts, split(p), split(q))], axis=-1)

    def inv(p):
        return np.concatenate([c.invert(a) for c, a in zip(charts, split(p))], axis=-1)

    def prod_map(attr):
        fs = [getattr(c, attr) for c in charts]
        if any(f is None for f in fs):
            return None

        def f(x):
            out = 1.0
            for fi, xi in zip(fs, split(x)):
                out = out * fi(xi)
            return out
        return f

    dist = None
    bounds = None
    if all(c.quotient_distance is not None for c in charts):
        def dist(x):
            return np.sqrt(sum(c.quotient_distance(xi) ** 2 for c, xi in zip(charts, split(x))))

        def bounds(lo, hi):
            lo_s, hi_s = split(lo), split(hi)
            parts = [c.quotient_distance_bounds(a, b) for c, a, b in zip(charts, lo_s, hi_s)]
            return (np.sqrt(sum(p[0] ** 2 for p in parts)), np.sqrt(sum(p[1] ** 2 for p in parts)))

    ball = None
    if all(c.ball_box is not None for c in charts):
        def ball(r):
            parts = [c.ball_box(r) for c in charts]
            return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])

    profile = charts[0].profile
    for c in charts[1:]:
        profile = profile + c.profile
    left = tuple(int(offs[i] + a) for i, c in enumerate(charts) for a in c.left_shift_axes)
    right = tuple(int(offs[i] + a) for i, c in enumerate(charts) for a in c.right_shift_axes)
    name = "prod(" + ",".join(c.name for c in charts) + ")"
    return GroupChart(
        name=name, dim=D, multiply=mul, invert=inv,
        identity=np.concatenate([c.identity for c in charts]), profile=profile,
        lower=np.concatenate([c.lower for c in charts]), upper=np.concatenate([c.upper for c in charts]),
        period=np.concatenate([c.period for c in charts]), base_side=np.concatenate([c.base_side for c in charts]),
        left_shift_axes=left, right_shift_axes=right,
        left_density_closed=prod_map("left_density_closed"), modular_closed=prod_map("modular_closed"),
        quotient_distance=dist, quotient_distance_bounds=bounds, ball_box=ball,
        expr="prod(" + ",".join(c.expr for c in charts) + ")",
        factors=tuple(charts),
    )


def catalog(rank: int = 2) -> list[GroupChart]:
    """One instance of every catalog family; ``rank`` sets the dimension of R^d and T^d."""
    return [
        euclidean(rank), torus(rank), heisenberg(), affine(), sl2r(),
        product(euclidean(1), heisenberg()), product(torus(1), euclidean(1)),
    ]


# ------------------------------------------------------------- name grammar

_TOKEN = re.compile(r"\s*(prod|sl2r|aff|heis3|[rt]:\d+|[(),])")


def _split_args(s: str) -> list[str]:
    out, depth, cur = [], 0, []
    for ch in s:
        if ch == "," and depth == 0:
            out.append("".join(cur))
            cur = []
            continue
        depth += (ch == "(") - (ch == ")")
        if depth < 0:
            raise ValueError(f"unbalanced parentheses in {s!r}")
        cur.append(ch)
    out.append("".join(cur))
    return [a.strip() for a in out]


def parse_group(name: str) -> GroupChart:
    """Parse ``sl2r | aff | heis3 | r:<d> | t:<d> | prod(g, g, ...)``.

    Equal names (ignoring case and whitespace) return the same chart object."""
    return _parse_group("".join(name.split()).lower())


@lru_cache(maxsize=None)
def _parse_group(s: str) -> GroupChart:
    name = s
    simple = {"sl2r": sl2r, "aff": affine, "heis3": heisenberg}
    if s in simple:
        return simple[s]()
    m = re.fullmatch(r"([rt]):(\d+)", s)
    if m:
        d = int(m.group(2))
        if d < 1:
            raise ValueError(f"dimension must be positive in {name!r}")
        return euclidean(d) if m.group(1) == "r" else torus(d)
    if s.startswith("prod(") and s.endswith(")"):
        args = _split_args(s[5:-1])
        if len(args) < 2 or any(not a for a in args):
            raise ValueError(f"prod needs at least two factors: {name!r}")
        return product(*(parse_group(a) for a in args))
    raise ValueError(
        f"unknown group {name!r}; expected sl2r, aff, heis3, r:<d>, t:<d> or prod(...)")


def group_names() -> Sequence[str]:
    return ("sl2r", "aff", "heis3", "r:<d>", "t:<d>", "prod(g, g, ...)")

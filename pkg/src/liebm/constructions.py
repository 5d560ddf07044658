"""Near-extremal set families and a small search harness.

Tubes are preimages of quotient-metric balls, slabs are thin thickenings of a
set inside the kernel of the modular function, and the collapse pair is a two
box family on the affine group whose product barely exceeds its right factor.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .groups import GroupChart, affine, parse_group
from .cells import CellSet, from_box, from_predicate, measure, product_set


class ConstructionError(ValueError):
    """The requested construction is not available or not feasible."""


# ----------------------------------------------------------------- tubes

COVERS = ("outer", "inner", "midpoint")


@dataclass(frozen=True)
class TubeSpec:
    """Tube of quotient radius ``delta`` at dyadic ``level``.

    ``cover`` selects the cells kept: ``outer`` keeps every cell meeting the
    closed ball, ``inner`` only cells inside it, ``midpoint`` cells whose
    centre lies inside.  The midpoint set is itself a compact set close to the
    tube and is tagged ``exact``: experiments that study a single set use it
    as that set.  The grid base is the bounding box of the ball of radius
    ``grid_radius`` (default ``delta``), so tubes built with a common
    ``grid_radius`` share a grid.
    """
    group: GroupChart
    delta: float
    level: int
    cover: str = "outer"
    grid_radius: Optional[float] = None

    def __post_init__(self):
        if isinstance(self.group, str):
            object.__setattr__(self, "group", parse_group(self.group))
        if not self.delta > 0:
            raise ConstructionError("tube radius must be positive")
        if self.cover not in COVERS:
            raise ConstructionError(f"cover must be one of {COVERS}")
        if self.group.ball_box is None or self.group.quotient_distance_bounds is None:
            raise ConstructionError(f"{self.group.name} has no quotient metric for tubes")
        if self.group.name == "sl2r" and self.delta > 5.0:
            raise ConstructionError("tube radius beyond the representable range of the chart")


def tube_grid(chart: GroupChart, radius: float) -> np.ndarray:
    lo, hi = chart.ball_box(radius)
    return np.where(chart.periodic, chart.period, hi - lo)


def tube(spec: TubeSpec) -> CellSet:
    chart, delta = spec.group, float(spec.delta)
    base = tube_grid(chart, spec.grid_radius or delta)
    lo, hi = chart.ball_box(delta)
    h = base / 2.0 ** spec.level
    pad = np.where(chart.periodic, 0.0, h)
    lo, hi = lo - pad, hi + pad

    def keep(clo, chi):
        if spec.cover == "midpoint":
            return chart.quotient_distance(0.5 * (clo + chi)) <= delta
        dmin, dmax = chart.quotient_distance_bounds(clo, chi)
        return dmax <= delta if spec.cover == "inner" else dmin <= delta

    role = {"outer": "outer", "inner": "inner", "midpoint": "exact"}[spec.cover]
    S = from_predicate(chart, lo, hi, spec.level, keep, base=base, role=role)
    return CellSet(chart, S.level, S.keys, role, S.base, meta={"delta": delta, "cover": spec.cover})


def ball_measure_ratio(chart: GroupChart, r1: float, r2: float) -> float:
    """Closed-form mu(D_r1) / mu(D_r2) for catalog charts with a quotient metric."""
    if isinstance(chart, str):
        chart = parse_group(chart)
    factors = chart.factors or (chart,)
    dims = 0
    hyperbolic = 0
    for c in factors:
        if c.name.startswith("r:"):
            dims += c.dim
        elif c.name == "sl2r":
            hyperbolic += 1
        elif not c.name.startswith("t:"):
            raise ConstructionError(f"no ball volume formula for {c.name}")
    if hyperbolic == 0:
        return (r1 / r2) ** dims
    if hyperbolic == 1 and dims == 0:
        return (math.cosh(r1) - 1.0) / (math.cosh(r2) - 1.0)
    raise ConstructionError("ball volume formula only for one hyperbolic factor alone")


# ----------------------------------------------------------------- slabs

@dataclass(frozen=True)
class SlabSpec:
    """Slab ``[1, e^thickness] x [0, width]`` in the affine group.

    The b-axis is the kernel of the modular function and the a-axis is the
    one-parameter scaling subgroup transversal to it.
    """
    thickness: float
    width: float = 1.0
    level: int = 7
    group: Optional[GroupChart] = None

    def __post_init__(self):
        g = self.group
        if isinstance(g, str):
            g = parse_group(g)
        if g is not None and g.name != "aff":
            raise ConstructionError("slabs are built on the affine group only")
        if not (self.thickness > 0 and self.width > 0):
            raise ConstructionError("slab thickness and width must be positive")


def slab(spec: SlabSpec) -> CellSet:
    chart = spec.group if isinstance(spec.group, GroupChart) else affine()
    lo = np.array([1.0, 0.0])
    hi = np.array([math.exp(spec.thickness), spec.width])
    base = _anchored_base(lo, hi, spec.level)
    S = from_box(chart, lo, hi, spec.level, base=base)
    return CellSet(chart, S.level, S.keys, S.role, S.base,
                   meta={"thickness": spec.thickness, "width": spec.width})


def slab_measures(thickness: float, width: float = 1.0) -> dict:
    """Closed-form left/right measures of the slab and of its square."""
    e = thickness
    mu = width * (1.0 - math.exp(-e))
    nu = width * e
    # X^2: for a = a1 a2 in [1, e^{2e}] the b-fibre is [0, w (1 + min(a, e^e))]
    def fib(a):
        return width * (1.0 + np.minimum(a, math.exp(e)))
    a = np.linspace(1.0, math.exp(2 * e), 200_001)
    f = fib(a)
    mu2 = float(np.trapezoid(f / a ** 2, a))
    nu2 = float(np.trapezoid(f / a, a))
    return {"mu_X": mu, "nu_X": nu, "mu_X2": mu2, "nu_X2": nu2}


def _anchored_base(lo: np.ndarray, hi: np.ndarray, level: int) -> np.ndarray:
    """Grid base whose cells are about (hi - lo) / 2^level and whose grid
    contains the lower corner as a node."""
    n = 2 ** level
    side = (hi - lo) / n
    out = side.copy()
    for k in range(len(lo)):
        if lo[k] != 0.0:
            r = abs(lo[k]) / side[k]
            out[k] = abs(lo[k]) / math.ceil(r * (1.0 - 1e-12))
    return out * n


# ----------------------------------------------------------------- collapse

@dataclass
class CollapsePair:
    X: CellSet
    Y: CellSet
    params: dict
    closed_ratio: float       # closed-form bound on mu(XY) / mu(Y)
    constant: float           # C with closed_ratio = 1 + C s
    out_base: np.ndarray = field(repr=False, default=None)

    def product(self, level: Optional[int] = None, **kw) -> CellSet:
        return product_set(self.X, self.Y, level, out_base=self.out_base, **kw)


def collapse_pair(s: float, alpha: float = 1.0, beta: float = 1.0, *, rho: float = 0.001,
                  level: int = 7) -> CollapsePair:
    """Two boxes on the affine group with mu(X) = alpha, mu(Y) = beta and
    mu(XY) close to mu(Y).

    X = [A, A(1+s^2)] x [0, bX] and Y = [A', A'(1+s)] x [0, bY] with A = 1,
    bX solved from mu(X) = alpha, bY = bX / (A rho) and A' from mu(Y) = beta.
    """
    if not (0 < s <= 0.2):
        raise ConstructionError("collapse needs 0 < s <= 0.2")
    if not (alpha > 0 and beta > 0 and 0 < rho < 1):
        raise ConstructionError("collapse needs alpha, beta > 0 and 0 < rho < 1")
    A = 1.0
    bX = alpha * A * (1 + s * s) / (s * s)
    bY = bX / (A * rho)
    A2 = bY * s / ((1 + s) * beta)
    if not all(np.isfinite([bX, bY, A2])) or A2 <= 0:
        raise ConstructionError(f"collapse parameters infeasible at s={s}")
    chart = affine()
    xlo, xhi = np.array([A, 0.0]), np.array([A * (1 + s * s), bX])
    ylo, yhi = np.array([A2, 0.0]), np.array([A2 * (1 + s), bY])
    X = from_box(chart, xlo, xhi, level, base=_anchored_base(xlo, xhi, level))
    Y = from_box(chart, ylo, yhi, level, base=_anchored_base(ylo, yhi, level))
    # XY lies in [A A', A A'(1+s^2)(1+s)] x [0, A(1+s^2) bY + bX]
    plo = np.array([A * A2, 0.0])
    phi = np.array([A * A2 * (1 + s * s) * (1 + s), A * (1 + s * s) * bY + bX])
    closed = float((1.0 - 1.0 / ((1 + s * s) * (1 + s))) / (A * A2) * phi[1] / beta)
    params = {"s": s, "alpha": alpha, "beta": beta, "rho": rho, "A": A, "bX": bX, "A2": A2, "bY": bY}
    return CollapsePair(X, Y, params, closed, (closed - 1.0) / s, _anchored_base(plo, phi, level))


# ----------------------------------------------------------------- stability

@dataclass
class StabilityResult:
    X: CellSet
    X1: CellSet
    delta: float
    delta1: float
    ratio: float          # measured mu(X1 X) / mu(X)
    bound: float          # (2 + eps)^n
    oracle: Optional[float]


def stability_pair(group, eps: float, delta: float = 0.1, *, level: int = 5,
                   growth: float = 1.2) -> StabilityResult:
    """Nested tubes X = D_delta inside X1 = D_{growth delta} with
    mu(X1 X) < (2 + eps)^n mu(X) measured on the grid."""
    chart = parse_group(group) if isinstance(group, str) else group
    d1 = growth * delta
    X = tube(TubeSpec(chart, delta, level, "outer", grid_radius=d1))
    X1 = tube(TubeSpec(chart, d1, level, "outer", grid_radius=d1))
    if not X.issubset(X1):
        raise ConstructionError("inner tube is not contained in the outer tube")
    P = product_set(X1, X)
    ratio = measure(P)[0] / measure(X)[0]
    n = chart.profile.bm_exponent
    bound = (2.0 + eps) ** n
    try:
        oracle = ball_measure_ratio(chart, delta + d1, delta)
    except ConstructionError:
        oracle = None
    if not ratio < bound:
        raise ConstructionError(
            f"stability bound not reached at level {level}: ratio {ratio:.4f} >= {bound:.4f}")
    return StabilityResult(X, X1, delta, d1, ratio, bound, oracle)


# ----------------------------------------------------------------- search

@dataclass
class Family:
    """A parametric family of set pairs with a bounded parameter box.

    ``evaluate(params)`` returns a dict of measurements containing at least the
    key named by ``objective``; smaller is better.
    """
    name: str
    lower: np.ndarray
    upper: np.ndarray
    evaluate: Callable[[np.ndarray], dict]
    objective: str
    names: Sequence[str] = ()


@dataclass
class SearchResult:
    params: np.ndarray
    value: float
    record: dict
    evaluations: int
    exhausted: bool
    trail: list


def minimize_product(family: Family, budget: int = 60, seed: int = 0, *, objective: Optional[str] = None,
                     tol: float = 1e-3, restarts: int = 3) -> SearchResult:
    """Coordinate descent with random restarts on the family's parameter box.

    Steps start at a quarter of each parameter range and halve after a sweep
    without improvement.  Evaluations are cached and the whole run is a
    deterministic function of the seed.
    """
    key = objective or family.objective
    lo, hi = np.asarray(family.lower, float), np.asarray(family.upper, float)
    rng = np.random.default_rng(seed)
    cache: dict = {}
    trail: list = []
    best = (math.inf, None, None)

    def f(p):
        nonlocal best
        p = np.clip(p, lo, hi)
        k = tuple(np.round(p, 12))
        if k not in cache:
            if len(cache) >= budget:
                raise StopIteration
            rec = family.evaluate(p)
            cache[k] = rec
            trail.append({"params": p.tolist(), key: rec[key]})
            if rec[key] < best[0]:
                best = (rec[key], p.copy(), rec)
        return cache[k][key]

    starts = [0.5 * (lo + hi)] + [rng.uniform(lo, hi) for _ in range(max(0, restarts - 1))]
    exhausted = False
    try:
        for x in starts:
            fx = f(x)
            step = 0.25 * (hi - lo)
            while np.any(step > tol * (hi - lo)):
                improved = False
                for k in range(len(x)):
                    for sgn in (1.0, -1.0):
                        y = x.copy()
                        y[k] = np.clip(y[k] + sgn * step[k], lo[k], hi[k])
                        fy = f(y)
                        if fy < fx:
                            x, fx, improved = y, fy, True
                            break
                if not improved:
                    step = step / 2
    except StopIteration:
        exhausted = True
    value, params, rec = best
    return SearchResult(params, value, rec, len(cache), exhausted, trail)


def box_family(level: int = 6) -> Family:
    """Axis boxes X = [0,a]x[0,b], Y = [0,c]x[0,d] in R^2 with a = 1."""
    from .bm import check_bm
    chart = parse_group("r:2")

    def ev(p):
        b, c, d = p
        X = from_box(chart, [0, 0], [1.0, b], level)
        Y = from_box(chart, [0, 0], [c, d], level)
        rep = check_bm(chart, X, Y, inner=False)
        return {"deficit": 1.0 - rep.lhs_optimistic, "lhs": rep.lhs_optimistic}

    return Family("box", np.array([0.25, 0.25, 0.25]), np.array([2.0, 2.0, 2.0]), ev, "deficit",
                  ("b", "c", "d"))


def tube_family(level: int = 7, lo: float = 0.1, hi: float = 0.4) -> Family:
    """SL(2,R) tube radius; the objective is mu(X^2) / mu(X)."""
    chart = parse_group("sl2r")

    def ev(p):
        X = tube(TubeSpec(chart, float(p[0]), level, "midpoint"))
        P = product_set(X, X)
        mx = measure(X)[0]
        return {"ratio": measure(P)[0] / mx}

    return Family("tube", np.array([lo]), np.array([hi]), ev, "ratio", ("delta",))


def collapse_family(level: int = 6) -> Family:
    """Collapse pairs over (s, log10 rho); objective mu(XY) / (mu(X) + mu(Y))."""
    def ev(p):
        pair = collapse_pair(float(p[0]), 1.0, 1.0, rho=10.0 ** float(p[1]), level=level)
        m = measure(pair.product())[0]
        mx, my = measure(pair.X)[0], measure(pair.Y)[0]
        return {"excess": m / (mx + my), "mu_XY": m, "mu_X": mx, "mu_Y": my}

    return Family("collapse", np.array([0.02, -3.0]), np.array([0.2, -1.0]), ev, "excess", ("s", "log10_rho"))


FAMILIES = {"box": box_family, "tube": tube_family, "collapse": collapse_family}

"""Brunn-Minkowski type functionals and per-pair verdict reports."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

from .groups import GroupChart, parse_group
from .cells import CellSet, dilate, measure, product_set, product_set_inner


def holder_norm(x: float, y: float, n: int) -> float:
    """(x^(1/n) + y^(1/n))^n, and max(x, y) for n = 0."""
    if x < 0 or y < 0:
        raise ValueError("holder_norm needs nonnegative inputs")
    if n < 0:
        raise ValueError("exponent must be nonnegative")
    if n == 0:
        return float(max(x, y))
    return float((x ** (1.0 / n) + y ** (1.0 / n)) ** n)


def bm_lhs(nu_X: float, nu_XY: float, mu_Y: float, mu_XY: float, n: int) -> float:
    """(nu(X)/nu(XY))^(1/n) + (mu(Y)/mu(XY))^(1/n); the max of the two ratios when n = 0."""
    if nu_XY <= 0 or mu_XY <= 0:
        raise ValueError("product measures must be positive")
    if n < 0:
        raise ValueError("exponent must be nonnegative")
    a, b = nu_X / nu_XY, mu_Y / mu_XY
    if n == 0:
        return float(max(a, b))
    return float(a ** (1.0 / n) + b ** (1.0 / n))


def kemperman_lhs(nu_X: float, nu_XY: float, mu_Y: float, mu_XY: float) -> float:
    return bm_lhs(nu_X, nu_XY, mu_Y, mu_XY, 1)


def mccrudden_lhs(mu_X: float, mu_Y: float, mu_XY: float, exponent: int) -> float:
    """(mu(X)/mu(XY))^(1/k) + (mu(Y)/mu(XY))^(1/k) for a unimodular group."""
    return bm_lhs(mu_X, mu_XY, mu_Y, mu_XY, exponent)


# default Monte-Carlo budget for the inner estimate, per outer cell of XY
SAMPLES_PER_CELL = 40

CSV_COLUMNS = (
    "group", "exponent_used", "level_X", "level_Y", "out_level", "samples", "seed",
    "nu_X", "nu_X_err", "mu_Y", "mu_Y_err",
    "nu_XY_inner", "nu_XY_outer", "mu_XY_inner", "mu_XY_outer",
    "lhs_conservative", "lhs_optimistic", "deficit", "allowance", "verdict",
)


@dataclass
class BMReport:
    group: str
    exponent_used: int
    nu_X: float
    nu_X_err: float
    mu_Y: float
    mu_Y_err: float
    nu_XY_inner: float
    nu_XY_outer: float
    mu_XY_inner: float
    mu_XY_outer: float
    lhs_conservative: float
    lhs_optimistic: float
    allowance: float
    level_X: int
    level_Y: int
    out_level: int
    samples: int
    seed: int
    meta: dict = field(default_factory=dict)

    @property
    def deficit(self) -> float:
        return 1.0 - self.lhs_conservative

    @property
    def passed(self) -> bool:
        # an empty inner estimate certifies nothing
        return math.isfinite(self.lhs_conservative) and self.lhs_conservative <= 1.0 + self.allowance

    @property
    def verdict(self) -> str:
        return "PASS" if self.passed else "FAIL"

    def row(self) -> dict:
        d = asdict(self)
        d["deficit"] = self.deficit
        d["verdict"] = self.verdict
        return {k: d[k] for k in CSV_COLUMNS}

    def to_csv(self, header: bool = True) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
        if header:
            w.writeheader()
        w.writerow({k: _fmt(v) for k, v in self.row().items()})
        return buf.getvalue()

    def to_json(self) -> str:
        d = asdict(self)
        d["deficit"] = self.deficit
        d["verdict"] = self.verdict
        return json.dumps(d, sort_keys=True, indent=2)


def _fmt(v):
    if isinstance(v, float):
        return repr(float(v))
    return v


def _lhs(nu_X, nu_XY, mu_Y, mu_XY, n):
    if nu_XY <= 0 or mu_XY <= 0:
        return math.inf
    return bm_lhs(nu_X, nu_XY, mu_Y, mu_XY, n)


def check_bm(group, X: CellSet, Y: CellSet, n: Optional[int] = None, *, out_level: Optional[int] = None,
             samples: Optional[int] = None, seed: int = 0, inner: bool = True, **product_kw) -> BMReport:
    """Measure X, Y and both estimates of XY and evaluate the functional.

    The conservative value uses the inner estimate of XY, which undercounts XY
    and therefore overstates the left-hand side.  The allowance propagates
    through the functional the quadrature error bounds, three Monte-Carlo
    standard deviations of the inner estimate and the measure of the one-cell
    layer just outside the inner estimate (the resolution limit of a cell estimate).
    """
    chart: GroupChart = parse_group(group) if isinstance(group, str) else group
    if X.chart is not chart or Y.chart is not chart:
        chart = X.chart
    if n is None:
        n = chart.profile.bm_exponent
    nu_X, enu = measure(X, "right")
    mu_Y, emu = measure(Y, "left")
    if nu_X <= 0 or mu_Y <= 0:
        raise ValueError("X and Y need positive measure")
    P = product_set(X, Y, out_level, **product_kw)
    mu_o, emu_o = measure(P, "left")
    nu_o, enu_o = measure(P, "right")
    if samples is None:
        samples = SAMPLES_PER_CELL * len(P)
    if inner:
        Q = product_set_inner(X, Y, P.level, samples=samples, seed=seed, out_base=P.base)
        mu_i, emu_i = measure(Q, "left")
        nu_i, enu_i = measure(Q, "right")
        sig = Q.meta["mc_sigma_cells"]
        cv = P.cell_volume()
        # the Monte-Carlo band is expressed through the mean density of XY
        dens_l = mu_o / max(len(P), 1) / cv if len(P) else 0.0
        dens_r = nu_o / max(len(P), 1) / cv if len(P) else 0.0
        smu, snu = 3 * sig * cv * dens_l, 3 * sig * cv * dens_r
        # the inner estimate can only miss XY near its own boundary: one cell
        # layer along that boundary bounds the resolution part of the error
        if not Q.empty:
            grown = dilate(Q)
            smu += measure(grown, "left")[0] - mu_i
            snu += measure(grown, "right")[0] - nu_i
    else:
        Q = None
        mu_i, nu_i, emu_i, enu_i, smu, snu = mu_o, nu_o, emu_o, enu_o, 0.0, 0.0
    lhs_c = _lhs(nu_X, nu_i, mu_Y, mu_i, n)
    lhs_o = _lhs(nu_X, nu_o, mu_Y, mu_o, n)
    # first-order propagation of measure errors through the functional
    lo = _lhs(max(nu_X - enu, 0.0), nu_i + enu_i + snu, max(mu_Y - emu, 0.0), mu_i + emu_i + smu, n)
    allowance = max(0.0, lhs_c - lo) if math.isfinite(lhs_c) else math.inf
    meta = {"pad": P.meta.get("pad"), "method": P.meta.get("method"), "enclosure": P.meta.get("enclosure"),
            "pairs": P.meta.get("pairs"), "cells_XY_outer": len(P),
            "cells_XY_inner": len(Q) if Q is not None else None}
    return BMReport(chart.name, int(n), nu_X, enu, mu_Y, emu, nu_i, nu_o, mu_i, mu_o, lhs_c, lhs_o,
                    allowance, X.level, Y.level, P.level, samples if inner else 0, seed, meta)


def reports_to_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in reports:
        w.writerow({k: _fmt(v) for k, v in r.row().items()})
    return buf.getvalue()

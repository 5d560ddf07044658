"""Config-driven experiment runner.

Usage examples::

    liebm --experiment bm_check --group r:2 --levels 5,6,7 --seed 0
    liebm --config runs/tube.ini --out results/tube
    liebm --experiment dim_eval --param "expr=ext_rpos(open_sub(heis3))"
    liebm --list
    liebm --describe collapse

A config file is INI with an ``[experiment]`` section (kind, group, levels,
samples, seed, threads, out, strict) and an optional ``[params]`` section
holding the experiment parameters.  Command-line flags override the file.

Each run writes ``<out>.csv`` (one row per level, frozen column order) and
``<out>.json`` (config echo, rows, allowances, timings, content hash).  The
exit code is 0 when every row passes, 1 when some row fails and 2 on
configuration errors.
"""
from __future__ import annotations

import argparse
import configparser
import contextlib
import csv
import hashlib
import io
import json
import math
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np

from . import __version__
from .groups import GroupChart, parse_group
from .cells import CoverageError, from_box, measure, product_set
from .bm import check_bm, CSV_COLUMNS as BM_COLUMNS
from . import constructions as con
from . import dimcalc, fiber

CSV_FORMAT_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Param:
    name: str
    kind: type
    default: Any
    help: str


@dataclass(frozen=True)
class Kind:
    name: str
    summary: str
    params: tuple
    columns: tuple
    stochastic: bool = False
    default_group: Optional[str] = None
    uses_levels: bool = True


def _floats(s) -> list[float]:
    if isinstance(s, (list, tuple)):
        return [float(x) for x in s]
    return [float(x) for x in str(s).replace(";", ",").split(",") if x.strip()]


def _ints(s) -> list[int]:
    if isinstance(s, (list, tuple)):
        return [int(x) for x in s]
    return [int(x) for x in str(s).replace(";", ",").split(",") if x.strip()]


KINDS: dict[str, Kind] = {}


def _kind(name, summary, params, columns, **kw):
    KINDS[name] = Kind(name, summary, tuple(Param(*p) for p in params), tuple(columns), **kw)


_kind("bm_check", "Brunn-Minkowski functional for two boxes, with inner and outer estimates of XY",
      [("x_lo", _floats, None, "lower corner of X (default: group's unit box)"),
       ("x_hi", _floats, None, "upper corner of X"),
       ("y_lo", _floats, None, "lower corner of Y (default: X)"),
       ("y_hi", _floats, None, "upper corner of Y"),
       ("exponent", int, None, "exponent n (default: n - h of the group)")],
      ("level",) + BM_COLUMNS, stochastic=True, default_group="r:2")
_kind("tube_sharpness", "mu(D^2) / mu(D) for the tube D of quotient radius delta",
      [("delta", float, 0.1, "quotient radius"),
       ("cover", str, "midpoint", "cell selection: outer, inner or midpoint")],
      ("level", "delta", "cells", "mu_X", "mu_X2", "ratio", "oracle", "lower_bound", "allowance", "verdict"),
      default_group="sl2r")
_kind("slab_sharpness", "functional with exponent p for the affine slab and its square",
      [("thickness", float, 0.05, "log-thickness of the slab along the scaling axis"),
       ("width", float, 1.0, "width along the modular kernel"),
       ("p", float, 0.4, "exponent applied to both ratios")],
      ("level", "thickness", "mu_X", "nu_X", "mu_X2", "nu_X2", "lhs", "lhs_closed", "allowance", "verdict"),
      default_group="aff")
_kind("collapse", "affine box pair whose product barely exceeds its right factor",
      [("s", float, 0.05, "shape parameter in (0, 0.2]"),
       ("alpha", float, 1.0, "target mu(X)"),
       ("beta", float, 1.0, "target mu(Y)"),
       ("rho", float, 0.001, "ratio of the b-extents of X and Y"),
       ("bound", float, 1.1, "pass when mu(XY) <= bound mu(Y)")],
      ("level", "s", "mu_X", "mu_Y", "mu_XY", "grid_ratio", "closed_ratio", "allowance", "verdict"),
      default_group="aff")
_kind("stability", "nested tubes X in X1 with mu(X1 X) < (2 + eps)^n mu(X)",
      [("eps", float, 0.5, "slack in the base 2 + eps"),
       ("delta", float, 0.1, "radius of the inner tube"),
       ("growth", float, 1.2, "radius ratio of the outer to the inner tube")],
      ("level", "delta", "delta1", "ratio", "bound", "oracle", "allowance", "verdict"),
      default_group="sl2r")
_kind("fiber_suite", "quotient integral, layer cake and spillover convexity over a fibre split",
      [("x_lo", _floats, None, "lower corner of X (default: group's unit box)"),
       ("x_hi", _floats, None, "upper corner of X"),
       ("axes", _ints, None, "fibre axes (default: the group's standard split)"),
       ("n1", int, None, "exponent of the fibre group (default: its dimension)"),
       ("n2", int, None, "exponent of the quotient (default: its dimension)"),
       ("grid", int, 50, "levels per side in the convexity grid"),
       ("allowance", float, 0.02, "tolerated negative convexity margin")],
      ("level", "quotient_error_X", "quotient_error_X2", "layer_cake_error", "convexity_margin",
       "allowance", "verdict"),
      default_group="heis3")
_kind("dim_eval", "dimension calculus of a group expression",
      [("expr", str, None, "group expression (default: the --group string)")],
      ("expr", "supported", "d", "m", "h", "n", "exponent", "helix_bound", "rule", "reason", "verdict"),
      uses_levels=False)
_kind("optimize", "coordinate-descent search over a set family",
      [("family", str, "box", "one of: " + ", ".join(con.FAMILIES)),
       ("budget", int, 40, "maximum number of family evaluations"),
       ("restarts", int, 3, "starting points including the box midpoint")],
      ("level", "family", "params", "value", "evaluations", "exhausted", "verdict"),
      stochastic=True)


def list_experiments() -> str:
    return "\n".join(f"{k.name:16s} {k.summary}" for k in KINDS.values())


def describe(kind: str) -> str:
    if kind not in KINDS:
        raise ConfigError(f"unknown experiment {kind!r}; known: {', '.join(KINDS)}")
    k = KINDS[kind]
    lines = [f"{k.name}: {k.summary}"]
    if k.default_group:
        lines.append(f"  default group: {k.default_group}")
    lines.append(f"  stochastic (seed required): {'yes' if k.stochastic else 'no'}")
    lines.append("  parameters:")
    for p in k.params:
        d = "" if p.default is None else f" [default {p.default}]"
        lines.append(f"    {p.name}: {p.help}{d}")
    lines.append("  csv columns: " + ", ".join(k.columns))
    return "\n".join(lines)


# ----------------------------------------------------------------- config

@dataclass
class ExperimentConfig:
    kind: str
    group: Optional[str] = None
    levels: list = field(default_factory=list)
    samples: Optional[int] = None
    seed: Optional[int] = None
    threads: int = 1
    out: Optional[str] = None
    strict: bool = False
    params: dict = field(default_factory=dict)

    def validate(self) -> "ExperimentConfig":
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment {self.kind!r}; run --list for the known kinds")
        k = KINDS[self.kind]
        if self.group is None:
            self.group = k.default_group
        if k.uses_levels:
            if not self.levels:
                raise ConfigError("level schedule is empty; pass --levels, e.g. --levels 5,6,7")
            if any(b <= a for a, b in zip(self.levels, self.levels[1:])):
                raise ConfigError(f"level schedule must be strictly increasing, got {self.levels}")
            if self.levels[0] < 0:
                raise ConfigError("levels must be nonnegative")
        if k.stochastic and self.seed is None:
            raise ConfigError(f"{self.kind} is stochastic: a seed is mandatory (--seed)")
        if self.samples is not None and self.samples < 1:
            raise ConfigError("samples must be positive")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")
        known = {p.name: p for p in k.params}
        parsed = {}
        for name, raw in self.params.items():
            if name not in known:
                raise ConfigError(f"{self.kind} has no parameter {name!r}; known: {', '.join(known) or 'none'}")
            try:
                parsed[name] = raw if not isinstance(raw, str) else known[name].kind(raw)
            except ValueError as exc:
                raise ConfigError(f"bad value {raw!r} for {name}: {exc}") from None
        for p in k.params:
            parsed.setdefault(p.name, p.default)
        self.params = parsed
        return self

    def canonical(self) -> dict:
        d = asdict(self)
        d.pop("out")
        return d


def load_config(path: str) -> ExperimentConfig:
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise ConfigError(f"cannot read config file {path!r}")
    if "experiment" not in cp:
        raise ConfigError(f"{path}: missing [experiment] section")
    e = cp["experiment"]
    allowed = {"kind", "group", "levels", "samples", "seed", "threads", "out", "strict"}
    extra = set(e) - allowed
    if extra:
        raise ConfigError(f"{path}: unknown keys in [experiment]: {', '.join(sorted(extra))}")
    if "kind" not in e:
        raise ConfigError(f"{path}: [experiment] needs a kind")
    try:
        return ExperimentConfig(
            kind=e["kind"].strip(), group=e.get("group"),
            levels=_ints(e.get("levels", "")),
            samples=e.getint("samples") if "samples" in e else None,
            seed=e.getint("seed") if "seed" in e else None,
            threads=e.getint("threads", 1), out=e.get("out"),
            strict=e.getboolean("strict", False),
            params=dict(cp["params"]) if "params" in cp else {},
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def content_hash(cfg: ExperimentConfig) -> str:
    """Git blob hash of the canonical JSON of the inputs."""
    body = json.dumps(cfg.canonical(), sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha1(b"blob %d\0" % len(body) + body).hexdigest()


# ----------------------------------------------------------------- runners

def _default_box(chart: GroupChart) -> tuple[list, list]:
    if chart.factors:
        lo, hi = [], []
        for c in chart.factors:
            a, b = _default_box(c)
            lo += a
            hi += b
        return lo, hi
    if chart.name == "aff":
        return [1.0, 0.0], [2.0, 1.0]
    if chart.name == "sl2r":
        return [0.0, -0.25, -0.25], [0.5, 0.25, 0.25]
    if chart.name.startswith("t:"):
        return [0.0] * chart.dim, [0.5] * chart.dim
    return [0.0] * chart.dim, [1.0] * chart.dim


def _box(chart, lo, hi, level, label):
    dlo, dhi = _default_box(chart)
    lo = dlo if lo is None else lo
    hi = dhi if hi is None else hi
    if len(lo) != chart.dim or len(hi) != chart.dim:
        raise ConfigError(f"{label} corners need {chart.dim} coordinates on {chart.name}")
    try:
        return from_box(chart, lo, hi, level)
    except ValueError as exc:
        raise ConfigError(f"{label}: {exc}") from None


def _verdict(ok: bool) -> str:
    return "PASS" if ok else "FAIL"


def _rel_err(pairs) -> float:
    return float(sum(e / v for v, e in pairs if v > 0))


def run_bm_check(cfg, chart, level, p):
    X = _box(chart, p["x_lo"], p["x_hi"], level, "X")
    ylo = p["y_lo"] if p["y_lo"] is not None else p["x_lo"]
    yhi = p["y_hi"] if p["y_hi"] is not None else p["x_hi"]
    Y = _box(chart, ylo, yhi, level, "Y")
    rep = check_bm(chart, X, Y, p["exponent"], samples=cfg.samples, seed=cfg.seed, strict=cfg.strict)
    row = {"level": level, **rep.row()}
    return row, {"meta": rep.meta}


def run_tube(cfg, chart, level, p):
    try:
        X = con.tube(con.TubeSpec(chart, p["delta"], level, p["cover"]))
    except con.ConstructionError as exc:
        raise ConfigError(str(exc)) from None
    P = product_set(X, X, strict=cfg.strict)
    mx, ex = measure(X)
    mp, ep = measure(P)
    ratio = mp / mx
    try:
        oracle = con.ball_measure_ratio(chart, 2 * p["delta"], p["delta"])
    except con.ConstructionError:
        oracle = math.nan
    lower = 2.0 ** chart.profile.bm_exponent
    allow = _rel_err([(mx, ex), (mp, ep)])
    row = {"level": level, "delta": p["delta"], "cells": len(X), "mu_X": mx, "mu_X2": mp, "ratio": ratio,
           "oracle": oracle, "lower_bound": lower, "allowance": allow,
           "verdict": _verdict(ratio >= lower * (1 - allow))}
    return row, {"pairs": P.meta.get("pairs"), "enclosure": P.meta.get("enclosure")}


def run_slab(cfg, chart, level, p):
    try:
        X = con.slab(con.SlabSpec(p["thickness"], p["width"], level, chart))
    except con.ConstructionError as exc:
        raise ConfigError(str(exc)) from None
    P = product_set(X, X, strict=cfg.strict)
    mx, ex = measure(X, "left")
    nx, enx = measure(X, "right")
    mp, ep = measure(P, "left")
    npp, enp = measure(P, "right")
    q = p["p"]
    lhs = (nx / npp) ** q + (mx / mp) ** q
    c = con.slab_measures(p["thickness"], p["width"])
    closed = (c["nu_X"] / c["nu_X2"]) ** q + (c["mu_X"] / c["mu_X2"]) ** q
    # the outer cover of X^2 only lowers the functional, so the verdict is one-sided
    allow = q * _rel_err([(mx, ex), (nx, enx), (mp, ep), (npp, enp)])
    row = {"level": level, "thickness": p["thickness"], "mu_X": mx, "nu_X": nx, "mu_X2": mp, "nu_X2": npp,
           "lhs": lhs, "lhs_closed": closed, "allowance": allow, "verdict": _verdict(lhs - allow > 1.0)}
    return row, {}


def run_collapse(cfg, chart, level, p):
    try:
        pair = con.collapse_pair(p["s"], p["alpha"], p["beta"], rho=p["rho"], level=level)
    except con.ConstructionError as exc:
        raise ConfigError(str(exc)) from None
    P = pair.product(strict=cfg.strict)
    mx, ex = measure(pair.X)
    my, ey = measure(pair.Y)
    mp, ep = measure(P)
    ratio = mp / my
    allow = _rel_err([(my, ey), (mp, ep)])
    ok = ratio <= p["bound"] * (1 + allow) and pair.closed_ratio <= p["bound"]
    row = {"level": level, "s": p["s"], "mu_X": mx, "mu_Y": my, "mu_XY": mp, "grid_ratio": ratio,
           "closed_ratio": pair.closed_ratio, "allowance": allow, "verdict": _verdict(ok)}
    return row, {"params": pair.params}


def run_stability(cfg, chart, level, p):
    try:
        res = con.stability_pair(chart, p["eps"], p["delta"], level=level, growth=p["growth"])
        ok = True
        row_vals = (res.delta, res.delta1, res.ratio, res.bound, res.oracle)
        ex = measure(res.X)
    except con.ConstructionError as exc:
        if "not reached" not in str(exc):
            raise ConfigError(str(exc)) from None
        ok = False
        row_vals = (p["delta"], p["growth"] * p["delta"], math.nan, (2 + p["eps"]) ** chart.profile.bm_exponent,
                    None)
        ex = (1.0, 0.0)
    d, d1, ratio, bound, oracle = row_vals
    row = {"level": level, "delta": d, "delta1": d1, "ratio": ratio, "bound": bound,
           "oracle": math.nan if oracle is None else oracle, "allowance": ex[1] / ex[0],
           "verdict": _verdict(ok)}
    return row, {}


def run_fiber(cfg, chart, level, p):
    try:
        split = fiber.split_for(chart, tuple(p["axes"]) if p["axes"] else None)
        split.validate()
    except fiber.SplitError as exc:
        raise ConfigError(str(exc)) from None
    X = _box(chart, p["x_lo"], p["x_hi"], level, "X")
    P = product_set(X, X, strict=cfg.strict)
    e1 = fiber.quotient_integral_check(split, X)
    e2 = fiber.quotient_integral_check(split, P)
    prof = fiber.fiber_profile(split, X)
    lc = max(abs(fiber.layer_cake(prof, r) - prof.integral(r)) / prof.integral(r) for r in (1, 2, 3))
    n1 = p["n1"] if p["n1"] is not None else len(split.axes)
    n2 = p["n2"] if p["n2"] is not None else len(split.quotient_axes)
    conv = fiber.spillover_convexity_check(split, X, X, n1, n2, p["grid"], P=P)
    ok = e1 < 1e-2 and e2 < 1e-2 and lc < 1e-2 and conv.worst >= -p["allowance"]
    row = {"level": level, "quotient_error_X": e1, "quotient_error_X2": e2, "layer_cake_error": lc,
           "convexity_margin": conv.worst, "allowance": p["allowance"], "verdict": _verdict(ok)}
    return row, {"split": split.name, "n1": n1, "n2": n2, "worst_at": conv.at}


def run_dim(cfg, p):
    text = p["expr"] or cfg.group
    if not text:
        raise ConfigError("dim_eval needs an expression (--param expr=... or --group)")
    try:
        ev = dimcalc.eval_profile(dimcalc.parse_expr(text))
    except dimcalc.ExprError as exc:
        raise ConfigError(str(exc)) from None
    sup = ev.supported
    return {"expr": text, "supported": sup, "d": ev.d, "m": ev.m, "h": ev.h, "n": ev.n,
            "exponent": ev.n - ev.h if sup else None,
            "helix_bound": (ev.h <= ev.n // 3) if sup else None,
            "rule": ev.rule, "reason": ev.reason,
            "verdict": _verdict(ev.h <= ev.n // 3) if sup else "UNSUPPORTED"}


def run_optimize(cfg, chart, level, p):
    if p["family"] not in con.FAMILIES:
        raise ConfigError(f"unknown family {p['family']!r}; known: {', '.join(con.FAMILIES)}")
    fam = con.FAMILIES[p["family"]](level=level)
    res = con.minimize_product(fam, budget=p["budget"], seed=cfg.seed, restarts=p["restarts"])
    params = ";".join(f"{n}={v!r}" for n, v in zip(fam.names, res.params.tolist()))
    row = {"level": level, "family": fam.name, "params": params, "value": res.value,
           "evaluations": res.evaluations, "exhausted": res.exhausted, "verdict": "PASS"}
    return row, {"trail": res.trail}


RUNNERS: dict[str, Callable] = {
    "bm_check": run_bm_check, "tube_sharpness": run_tube, "slab_sharpness": run_slab,
    "collapse": run_collapse, "stability": run_stability, "fiber_suite": run_fiber, "optimize": run_optimize,
}


def _limit_threads(n: int):
    # numpy kernels here are single-threaded; this only caps BLAS pools when present
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        return contextlib.nullcontext()
    return threadpool_limits(limits=n)


def _cell(v):
    if isinstance(v, float):
        return repr(float(v))
    if v is None:
        return ""
    return v


def rows_to_csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({c: _cell(r.get(c)) for c in columns})
    return buf.getvalue()


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, np.integer):
        return int(x)
    return x


@dataclass
class RunResult:
    csv: str
    report: dict
    exit_code: int


def run(cfg: ExperimentConfig) -> RunResult:
    cfg.validate()
    kind = KINDS[cfg.kind]
    rows, extras, timings = [], [], []
    with _limit_threads(cfg.threads):
        if cfg.kind == "dim_eval":
            t0 = time.perf_counter()
            rows.append(run_dim(cfg, cfg.params))
            timings.append(time.perf_counter() - t0)
            extras.append({})
        else:
            chart = None
            if cfg.kind != "optimize":
                try:
                    chart = parse_group(cfg.group)
                except ValueError as exc:
                    raise ConfigError(str(exc)) from None
            for level in cfg.levels:
                t0 = time.perf_counter()
                row, extra = RUNNERS[cfg.kind](cfg, chart, level, cfg.params)
                timings.append(time.perf_counter() - t0)
                rows.append(row)
                extras.append(extra)
    ok = all(r["verdict"] == "PASS" for r in rows)
    body = rows_to_csv(kind.columns, rows)
    report = {
        "artifact_version": __version__,
        "csv_format_version": CSV_FORMAT_VERSION,
        "config": cfg.canonical(),
        "content_hash": content_hash(cfg),
        "columns": list(kind.columns),
        "rows": rows,
        "details": extras,
        "timings_s": timings,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "passed": ok,
    }
    return RunResult(body, _jsonable(report), 0 if ok else 1)


# ----------------------------------------------------------------- entry point

def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="liebm", description="Brunn-Minkowski experiments on Lie groups.")
    ap.add_argument("--config", help="INI file with [experiment] and [params] sections")
    ap.add_argument("--experiment", help="experiment kind (see --list)")
    ap.add_argument("--group", help="group name, e.g. sl2r, aff, heis3, r:2, prod(r:1,heis3)")
    ap.add_argument("--levels", help="comma-separated increasing level schedule")
    ap.add_argument("--samples", type=int, help="Monte-Carlo samples for inner estimates")
    ap.add_argument("--seed", type=int, help="random seed (required for stochastic kinds)")
    ap.add_argument("--threads", type=int, help="cap on numeric library threads")
    ap.add_argument("--out", help="output path prefix; writes <out>.csv and <out>.json")
    ap.add_argument("--strict", action="store_true", default=None, help="treat clipping warnings as failures")
    ap.add_argument("--param", action="append", default=[], metavar="NAME=VALUE",
                    help="experiment parameter, repeatable")
    ap.add_argument("--list", action="store_true", help="list experiment kinds")
    ap.add_argument("--describe", metavar="KIND", help="describe one experiment kind")
    return ap


def config_from_args(ns) -> ExperimentConfig:
    cfg = load_config(ns.config) if ns.config else None
    if cfg is None:
        if not ns.experiment:
            raise ConfigError("pass --experiment or --config (see --list)")
        cfg = ExperimentConfig(kind=ns.experiment)
    elif ns.experiment:
        cfg.kind = ns.experiment
    for name in ("group", "samples", "seed", "threads", "out", "strict"):
        v = getattr(ns, name)
        if v is not None:
            setattr(cfg, name, v)
    if ns.levels is not None:
        try:
            cfg.levels = _ints(ns.levels)
        except ValueError:
            raise ConfigError(f"bad level schedule {ns.levels!r}") from None
    for item in ns.param:
        if "=" not in item:
            raise ConfigError(f"--param expects NAME=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        cfg.params[k.strip()] = v.strip()
    return cfg


def main(argv=None) -> int:
    ns = _parser().parse_args(argv)
    try:
        if ns.list:
            print(list_experiments())
            return 0
        if ns.describe:
            print(describe(ns.describe))
            return 0
        cfg = config_from_args(ns)
        res = run(cfg)
    except (ConfigError, CoverageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if cfg.out:
        out = Path(cfg.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        Path(f"{out}.csv").write_text(res.csv, encoding="utf-8")
        Path(f"{out}.json").write_text(json.dumps(res.report, sort_keys=True, indent=2) + "\n",
                                            encoding="utf-8")
    else:
        sys.stdout.write(res.csv)
    for r in res.report["rows"]:
        tag = r.get("level", r.get("expr"))
        print(f"{cfg.kind} [{tag}]: {r['verdict']}", file=sys.stderr)
    return res.exit_code


if __name__ == "__main__":
    sys.exit(main())

"""Symbolic dimension calculus over group expressions.

Leaves are atoms with declared (d, m, h); inner nodes combine profiles only
through rules that are known to hold, and anything else evaluates to an
UNSUPPORTED result carrying a reason.  Unsupported results are sticky.

Grammar::

    expr := atom | prod(expr, expr, ...) | ext_lie(expr, expr[, semisimple])
          | ext_rpos(expr) | quot_compact(expr, k) | open_sub(expr)
    atom := R | T | Z | compact(k) | sl2r | sl2r_cover | heis3 | aff
          | r:<d> | t:<d>
"""
from __future__ import annotations

import random
import re
from dataclasses import dataclass, field
from typing import Optional, Union

from .groups import DimensionProfile


class ExprError(ValueError):
    """Malformed expression."""


@dataclass(frozen=True)
class Atom:
    name: str
    d: int
    m: int
    h: int
    connected: bool = True
    semisimple: bool = False
    source: str = ""


@dataclass(frozen=True)
class DirectProduct:
    factors: tuple


@dataclass(frozen=True)
class ConnectedLieExtension:
    kernel: "GroupExpr"
    quotient: "GroupExpr"
    semisimple: bool = False


@dataclass(frozen=True)
class RposQuotientExtension:
    kernel: "GroupExpr"


@dataclass(frozen=True)
class QuotientByCompact:
    inner: "GroupExpr"
    k: int


@dataclass(frozen=True)
class OpenSubgroup:
    inner: "GroupExpr"


GroupExpr = Union[Atom, DirectProduct, ConnectedLieExtension, RposQuotientExtension,
                  QuotientByCompact, OpenSubgroup]


@dataclass(frozen=True)
class Evaluation:
    """Outcome of evaluating an expression.

    ``n`` may be known even when the result is unsupported (a non-semisimple
    connected extension determines n but not h)."""
    supported: bool
    d: Optional[int] = None
    m: Optional[int] = None
    h: Optional[int] = None
    connected: bool = False
    semisimple: bool = False
    rule: str = ""
    reason: str = ""
    trace: tuple = field(default=(), compare=False)

    @property
    def n(self) -> Optional[int]:
        return None if self.d is None or self.m is None else self.d - self.m

    @property
    def profile(self) -> DimensionProfile:
        if not self.supported:
            raise Unsupported(self.reason)
        return DimensionProfile(self.d, self.m, self.h)

    def __str__(self):
        if not self.supported:
            return f"UNSUPPORTED: {self.reason}"
        return f"d={self.d} m={self.m} h={self.h} n={self.n} exponent={self.n - self.h} [{self.rule}]"


class Unsupported(ValueError):
    """Raised when a profile is requested from an unsupported evaluation."""


def _unsupported(reason: str, **kw) -> Evaluation:
    return Evaluation(False, reason=reason, **kw)


# ------------------------------------------------------------------ atoms

def compact(k: int) -> Atom:
    if k < 0:
        raise ExprError("compact(k) needs k >= 0")
    return Atom(f"compact({k})", k, k, 0, True, False, "connected compact group: every direction is compact")


def euclid(d: int) -> Atom:
    return Atom(f"r:{d}", d, 0, 0, True, False, "vector group: no nontrivial compact subgroup")


def torus(d: int) -> Atom:
    return Atom(f"t:{d}", d, d, 0, True, False, "torus: compact")


ATOMS = {
    "r": euclid(1),
    "t": torus(1),
    "z": Atom("Z", 0, 0, 0, False, False, "discrete: dimension zero"),
    "sl2r": Atom("sl2r", 3, 1, 0, True, True, "Iwasawa KAN with K = SO(2) compact and finite centre"),
    "sl2r_cover": Atom("sl2r_cover", 3, 0, 1, True, True,
                       "universal cover: K lifts to R, centre of rank one"),
    "heis3": Atom("heis3", 3, 0, 0, True, False, "simply connected nilpotent: no compact subgroup"),
    "aff": Atom("aff", 2, 0, 0, True, False, "simply connected solvable: no compact subgroup"),
}


# ------------------------------------------------------------------ evaluation

def eval_profile(e) -> Evaluation:
    if isinstance(e, str):
        e = parse_expr(e)
    if isinstance(e, Atom):
        return Evaluation(True, e.d, e.m, e.h, e.connected, e.semisimple, f"atom {e.name}: {e.source}")
    if isinstance(e, DirectProduct):
        if len(e.factors) < 2:
            raise ExprError("prod needs at least two factors")
        parts = [eval_profile(f) for f in e.factors]
        bad = next((p for p in parts if not p.supported), None)
        if bad is not None:
            return _unsupported(bad.reason)
        return Evaluation(True, sum(p.d for p in parts), sum(p.m for p in parts), sum(p.h for p in parts),
                          all(p.connected for p in parts), all(p.semisimple for p in parts),
                          "direct product: all dimensions add")
    if isinstance(e, ConnectedLieExtension):
        k, q = eval_profile(e.kernel), eval_profile(e.quotient)
        for p in (k, q):
            if not p.supported:
                return _unsupported(p.reason)
        if not (k.connected and q.connected):
            return _unsupported(
                "extension with a disconnected term: additivity fails in general, e.g. "
                "1 -> Z -> R -> T -> 1 has n(R) = 1 but n(Z) = n(T) = 0")
        d = k.d + q.d
        n = k.n + q.n
        if not e.semisimple:
            return _unsupported(
                "helix dimension of a non-semisimple connected extension is not determined "
                "by the terms (n alone adds)", d=d, m=d - n, connected=True)
        if not (k.semisimple and q.semisimple):
            return _unsupported("semisimple extension with a non-semisimple term")
        return Evaluation(True, d, d - n, k.h + q.h, True, True,
                          "connected semisimple extension: n and h add")
    if isinstance(e, RposQuotientExtension):
        k = eval_profile(e.kernel)
        if not k.supported:
            return _unsupported(k.reason)
        return Evaluation(True, k.d + 1, k.m, k.h, k.connected, False,
                          "extension by the positive reals: n grows by one, h preserved")
    if isinstance(e, QuotientByCompact):
        p = eval_profile(e.inner)
        if not p.supported:
            return _unsupported(p.reason)
        if e.k < 0 or e.k > p.m:
            return _unsupported(f"a compact normal subgroup of dimension {e.k} exceeds m = {p.m}")
        return Evaluation(True, p.d - e.k, p.m - e.k, p.h, p.connected, p.semisimple,
                          "quotient by a compact normal subgroup: n and h preserved")
    if isinstance(e, OpenSubgroup):
        p = eval_profile(e.inner)
        if not p.supported:
            return _unsupported(p.reason)
        return Evaluation(True, p.d, p.m, p.h, p.connected, p.semisimple,
                          "open subgroup: d, m and h preserved")
    raise ExprError(f"not a group expression: {e!r}")


def check_helix_bound(e) -> bool:
    ev = _eval(e)
    if not ev.supported:
        raise Unsupported(ev.reason)
    return ev.h <= ev.n // 3


def bm_exponent(e) -> int:
    ev = _eval(e)
    if not ev.supported:
        raise Unsupported(ev.reason)
    return ev.n - ev.h


def _eval(e) -> Evaluation:
    return eval_profile(parse_expr(e) if isinstance(e, str) else e)


# ------------------------------------------------------------------ parsing

_TOK = re.compile(r"\s*(?:([A-Za-z_][A-Za-z0-9_]*(?::\d+)?)|(\d+)|([(),]))")


def _tokenize(s: str) -> list[str]:
    out, pos = [], 0
    s = s.strip()
    while pos < len(s):
        m = _TOK.match(s, pos)
        if not m or m.end() == pos:
            raise ExprError(f"unexpected character at {pos} in {s!r}")
        out.append(m.group(m.lastindex))
        pos = m.end()
        while pos < len(s) and s[pos].isspace():
            pos += 1
    return out


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0
        self.text = text

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else None

    def take(self, want=None):
        t = self.peek()
        if t is None or (want is not None and t != want):
            raise ExprError(f"expected {want or 'token'} in {self.text!r}, got {t!r}")
        self.i += 1
        return t

    def args(self):
        self.take("(")
        out = [self.arg()]
        while self.peek() == ",":
            self.take(",")
            out.append(self.arg())
        self.take(")")
        return out

    def arg(self):
        t = self.peek()
        if t is not None and t.isdigit():
            return int(self.take())
        return self.expr()

    def expr(self) -> GroupExpr:
        t = self.take()
        low = t.lower()
        if low in ("prod", "ext_lie", "ext_rpos", "quot_compact", "open_sub", "compact"):
            a = self.args()
            return _build(low, a, self.text)
        m = re.fullmatch(r"([rt]):(\d+)", low)
        if m:
            d = int(m.group(2))
            if d < 1:
                raise ExprError(f"dimension must be positive in {t!r}")
            return euclid(d) if m.group(1) == "r" else torus(d)
        if low in ATOMS:
            return ATOMS[low]
        if low in ("semisimple", "ss"):
            raise ExprError(f"flag {t!r} outside ext_lie")
        raise ExprError(f"unknown atom {t!r}")

    def parse(self) -> GroupExpr:
        e = self.expr()
        if self.peek() is not None:
            raise ExprError(f"trailing input in {self.text!r}")
        return e


def _is_expr(x):
    return not isinstance(x, int)


def _build(op, a, text) -> GroupExpr:
    if op == "compact":
        if len(a) != 1 or _is_expr(a[0]):
            raise ExprError("compact(k) takes one integer")
        return compact(a[0])
    if op == "prod":
        if len(a) < 2 or not all(map(_is_expr, a)):
            raise ExprError("prod takes two or more expressions")
        return DirectProduct(tuple(a))
    if op == "ext_lie":
        if len(a) not in (2, 3) or not (_is_expr(a[0]) and _is_expr(a[1])) or (len(a) == 3 and a[2] != 1):
            raise ExprError("ext_lie takes (kernel, quotient[, semisimple])")
        return ConnectedLieExtension(a[0], a[1], len(a) == 3)
    if op == "ext_rpos":
        if len(a) != 1 or not _is_expr(a[0]):
            raise ExprError("ext_rpos takes one expression")
        return RposQuotientExtension(a[0])
    if op == "quot_compact":
        if len(a) != 2 or not _is_expr(a[0]) or _is_expr(a[1]):
            raise ExprError("quot_compact takes (expression, k)")
        return QuotientByCompact(a[0], a[1])
    if len(a) != 1 or not _is_expr(a[0]):
        raise ExprError("open_sub takes one expression")
    return OpenSubgroup(a[0])


def parse_expr(text: str) -> GroupExpr:
    # the semisimple flag is a bare word in third position of ext_lie
    text = re.sub(r",\s*(semisimple|ss)\s*\)", ", 1)", text, flags=re.I)
    return _Parser(text).parse()


def to_string(e: GroupExpr) -> str:
    if isinstance(e, Atom):
        return e.name
    if isinstance(e, DirectProduct):
        return "prod(" + ", ".join(map(to_string, e.factors)) + ")"
    if isinstance(e, ConnectedLieExtension):
        return f"ext_lie({to_string(e.kernel)}, {to_string(e.quotient)}{', semisimple' if e.semisimple else ''})"
    if isinstance(e, RposQuotientExtension):
        return f"ext_rpos({to_string(e.kernel)})"
    if isinstance(e, QuotientByCompact):
        return f"quot_compact({to_string(e.inner)}, {e.k})"
    return f"open_sub({to_string(e.inner)})"


def random_expr(rng: random.Random, depth: int = 3, supported_only: bool = True) -> GroupExpr:
    """Random expression tree; with ``supported_only`` every node is licensed."""
    leaves = [ATOMS["r"], ATOMS["t"], ATOMS["sl2r"], ATOMS["sl2r_cover"], ATOMS["heis3"],
              ATOMS["aff"], compact(rng.randint(0, 3)), euclid(rng.randint(1, 3))]
    if not supported_only:
        leaves.append(ATOMS["z"])
    if depth <= 0 or rng.random() < 0.3:
        return rng.choice(leaves)
    op = rng.choice(["prod", "ext_lie", "ext_rpos", "quot", "open"])
    if op == "prod":
        return DirectProduct((random_expr(rng, depth - 1, supported_only), random_expr(rng, depth - 1, supported_only)))
    if op == "ext_lie":
        if supported_only:
            ss = [ATOMS["sl2r"], ATOMS["sl2r_cover"]]
            a = rng.choice(ss) if depth == 1 else _random_semisimple(rng, depth - 1)
            b = rng.choice(ss) if depth == 1 else _random_semisimple(rng, depth - 1)
            return ConnectedLieExtension(a, b, True)
        return ConnectedLieExtension(random_expr(rng, depth - 1, False), random_expr(rng, depth - 1, False),
                                     rng.random() < 0.5)
    if op == "ext_rpos":
        return RposQuotientExtension(random_expr(rng, depth - 1, supported_only))
    if op == "open":
        return OpenSubgroup(random_expr(rng, depth - 1, supported_only))
    inner = random_expr(rng, depth - 1, supported_only)
    ev = eval_profile(inner)
    k = rng.randint(0, ev.m) if ev.supported else rng.randint(0, 2)
    return QuotientByCompact(inner, k)


def _random_semisimple(rng: random.Random, depth: int) -> GroupExpr:
    ss = [ATOMS["sl2r"], ATOMS["sl2r_cover"]]
    if depth <= 0 or rng.random() < 0.4:
        return rng.choice(ss)
    if rng.random() < 0.5:
        return DirectProduct((_random_semisimple(rng, depth - 1), _random_semisimple(rng, depth - 1)))
    return ConnectedLieExtension(_random_semisimple(rng, depth - 1), _random_semisimple(rng, depth - 1), True)

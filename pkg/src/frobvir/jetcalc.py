"""Differential-polynomial calculus on jet variables.

Expressions live in one chart: jets of ``v`` or of ``u`` (the test families
``a``, ``b``, ``c`` may appear alongside either).  The ring ``A`` consists of
polynomials in jets of positive order with coefficients in the base
coordinates; the larger ring ``S`` also allows inverse powers of first jets
and logarithms of first jets.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable

from .symcore import (
    ONE,
    ZERO,
    Atom,
    Expr,
    IntegrationError,
    coefficients,
    derive,
    diff,
    integrate,
    jet,
    jet_atom,
)


class MixedChartError(ValueError):
    pass


class NotExact(ValueError):
    """The input is not a total x-derivative."""


class DegreeTooLow(ValueError):
    pass


class DegreeMismatch(ValueError):
    pass


class _Mixed:
    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self) -> str:
        return "Mixed"


MIXED = _Mixed()


class Order(Enum):
    LESS = "Less"
    GREATER = "Greater"
    EQUAL = "Equal"
    INCOMPARABLE = "Incomparable"


# ---------------------------------------------------------------------------
# chart bookkeeping


def jet_atoms(f: Expr) -> set[Atom]:
    return {a for a in f.free_atoms() if a.is_jet}


def chart_of(f: Expr) -> str | None:
    """'v', 'u' or None (no base-coordinate jets)."""
    fams = {a.kind for a in f.free_atoms() if a.kind in ("v", "u")}
    if len(fams) > 1:
        raise MixedChartError("expression mixes v and u jets")
    return fams.pop() if fams else None


def max_order(f: Expr, family: str | None = None, index: int | None = None) -> int:
    """Largest jet order occurring (-1 if no jets of the requested kind)."""
    n = -1
    for a in jet_atoms(f):
        if family is not None and a.kind != family:
            continue
        if index is not None and a.index != index:
            continue
        n = max(n, a.order)
    return n


def indices(f: Expr, family: str) -> list[int]:
    return sorted({a.index for a in jet_atoms(f) if a.kind == family})


# ---------------------------------------------------------------------------
# derivations


def _dx_rule(a: Atom):
    if a.is_jet:
        return jet(a.kind, a.index, a.order + 1)
    return None


def dx(f: Expr) -> Expr:
    """Total x-derivative."""
    chart_of(f)
    return derive(f, _dx_rule)


def dx_n(f: Expr, n: int) -> Expr:
    for _ in range(n):
        f = dx(f)
    return f


def jet_partial(f: Expr, family: str, index: int, order: int) -> Expr:
    return diff(f, jet_atom(family, index, order))


def var_deriv(f: Expr, index: int, family: str | None = None) -> Expr:
    """Euler-Lagrange derivative with respect to the jet family ``family``/index."""
    if family is None:
        family = chart_of(f) or "u"
    n = max_order(f, family, index)
    out = ZERO
    for s in range(n, -1, -1):
        # Horner: out = d/du^{s} f - dx(out)
        out = jet_partial(f, family, index, s) - dx(out)
    return out


# ---------------------------------------------------------------------------
# degree and membership


def _mono_degree(mono: tuple):
    deg = 0
    for a, e in mono:
        if a.is_jet:
            deg += a.order * e
        elif a.is_function:
            if any(b.is_jet and b.order > 0 for b in a.free_atoms()):
                return MIXED
    return deg


def _poly_degree(p: dict):
    deg = None
    for m in p:
        d = _mono_degree(m)
        if d is MIXED:
            return MIXED
        if deg is None:
            deg = d
        elif d != deg:
            return MIXED
    return deg


def diff_degree(f: Expr):
    """Differential degree if ``f`` is homogeneous, else MIXED.  Zero has degree 0."""
    if f.is_zero():
        return 0
    dn = _poly_degree(f.num)
    if dn is MIXED:
        return MIXED
    if f.den is None:
        return dn
    dd = _poly_degree(f.den)
    if dd is MIXED:
        return MIXED
    return dn - dd


def homogeneous_parts(f: Expr) -> dict[int, Expr]:
    """Split by differential degree (denominator must be jet-free)."""
    if f.den is not None and _poly_degree(f.den) != 0:
        raise ValueError("denominator depends on jets")
    parts: dict[int, dict] = {}
    for m, c in f.num.items():
        d = _mono_degree(m)
        if d is MIXED:
            raise ValueError("log or exp of jets has no degree")
        parts.setdefault(d, {})[m] = c
    den = f.denominator()
    return {d: Expr(p, None) / den for d, p in sorted(parts.items())}


def _jetty(a: Atom) -> bool:
    return any(b.is_jet and b.order > 0 for b in a.free_atoms())


def is_polynomial(f: Expr) -> bool:
    """True iff f lies in A: no negative powers of jets, no jet-dependent log/exp,
    and a denominator depending on base coordinates only."""
    if f.den is not None:
        for m in f.den:
            for a, _ in m:
                if (a.is_jet and a.order > 0) or (a.is_function and _jetty(a)):
                    return False
    for m in f.num:
        for a, e in m:
            if a.is_jet and a.order > 0 and e < 0:
                return False
            if a.is_function and _jetty(a):
                return False
    return True


def in_S(f: Expr) -> bool:
    """Membership in S: like A but inverse first jets and log of first jets allowed."""
    if f.den is not None:
        for m in f.den:
            for a, _ in m:
                if (a.is_jet and a.order > 0) or (a.is_function and _jetty(a)):
                    return False
    for m in f.num:
        for a, e in m:
            if a.is_jet and a.order > 1 and e < 0:
                return False
            if a.is_function and _jetty(a):
                if a.kind != "log":
                    return False
                arg = a.arg
                if not (arg.den is None and len(arg.num) == 1):
                    return False
                (mm, c), = arg.num.items()
                if not (c == 1 and len(mm) == 1 and mm[0][1] == 1 and mm[0][0].order == 1):
                    return False
    return True


# ---------------------------------------------------------------------------
# exactness


def _check_closed(f: Expr, family: str) -> None:
    for i in indices(f, family):
        r = var_deriv(f, i, family)
        if r:
            raise NotExact(f"variational derivative {family}{i} is {r}")


def _peel(f: Expr, family: str) -> Expr:
    """Potential g with dx(g) = f, assuming all variational derivatives vanish."""
    g = ZERO
    guard = 0
    while True:
        guard += 1
        if guard > 64:
            raise NotExact("no progress while peeling jet orders")
        n = max_order(f, family)
        if n <= 0:
            q = f.as_scalar()
            if q is None or q != 0:
                raise NotExact(f"remainder {f} is not a total derivative")
            return g
        idx = [i for i in indices(f, family) if max_order(f, family, i) == n]
        tops = [jet_atom(family, i, n) for i in idx]
        try:
            coeffs = coefficients(f, tops)
        except ValueError as exc:
            raise NotExact(f"top jets enter non-linearly: {exc}") from None
        slopes = {}
        for ex, c in coeffs.items():
            if sum(ex) == 0:
                continue
            if sum(ex) != 1 or any(e < 0 for e in ex):
                raise NotExact("top jets enter non-linearly")
            slopes[ex.index(1)] = c
        lower = [jet_atom(family, i, n - 1) for i in idx]
        h = ZERO
        for k, var in enumerate(lower):
            rem = slopes.get(k, ZERO) - diff(h, var)
            for prev in lower[:k]:
                if rem.depends_on(prev):
                    raise NotExact("top-order coefficients are not a gradient")
            try:
                h = h + integrate(rem, var)
            except IntegrationError as exc:
                raise NotExact(f"cannot integrate: {exc}") from None
        if h.is_zero():
            raise NotExact("top-order part does not integrate")
        g = g + h
        f = f - dx(h)


def _drop_constant(g: Expr) -> Expr:
    if g.den is None and () in g.num:
        return g - Expr({(): g.num[()]}, None)
    return g


def integrate_x(f: Expr, family: str | None = None, allow_low_degree: bool = False) -> Expr:
    """g with dx(g) = f and zero constant term.

    Elements of S outside A are accepted from degree 2 on, unless
    ``allow_low_degree`` is set.
    """
    if f.is_zero():
        return ZERO
    if family is None:
        family = chart_of(f) or "u"
    _check_closed(f, family)
    if not is_polynomial(f) and not allow_low_degree:
        deg = diff_degree(f)
        if deg is not MIXED and deg < 2:
            raise DegreeTooLow(f"degree {deg} element outside A")
        if deg is MIXED:
            for d, part in homogeneous_parts(f).items():
                if d < 2 and not is_polynomial(part):
                    raise DegreeTooLow(f"degree {d} component outside A")
    return _drop_constant(_peel(f, family))


@dataclass(frozen=True)
class DoubleIntegral:
    T: Expr
    input_order: int
    output_order: int

    @property
    def order_drop(self) -> int:
        return self.input_order - self.output_order


def double_integrate_T(Q: Iterable[Expr], eta_first_row: Iterable) -> DoubleIntegral:
    """T with dx(dx(T)) = sum_a eta_{1a} Q^a."""
    s = ZERO
    for q, e in zip(Q, eta_first_row):
        s = s + Expr.coerce(e) * q
    if s.is_zero():
        return DoubleIntegral(ZERO, -1, -1)
    family = chart_of(s) or "u"
    first = integrate_x(s, family, allow_low_degree=True)
    T = integrate_x(first, family, allow_low_degree=True)
    return DoubleIntegral(T, max_order(s, family), max_order(T, family))


# ---------------------------------------------------------------------------
# the partial order on monomials


def partition_of(m: Expr) -> tuple[int, ...]:
    """Jet orders of a monomial (with multiplicity), sorted descending."""
    if m.den is not None or len(m.num) != 1:
        raise ValueError("not a monomial")
    (mono, _), = m.num.items()
    parts = []
    for a, e in mono:
        if a.is_jet and a.order > 0:
            if e < 0:
                raise ValueError("negative jet power in a monomial of A")
            parts.extend([a.order] * e)
        elif a.is_function and _jetty(a):
            raise ValueError("jet-dependent function atom in a monomial of A")
    return tuple(sorted(parts, reverse=True))


def _jet_part(m: Expr) -> tuple:
    (mono, _), = m.num.items()
    return tuple((a, e) for a, e in mono if a.is_jet and a.order > 0)


def mono_compare(a: Expr, b: Expr) -> Order:
    """Compare monomials of equal differential degree by their jet partitions.

    Partitions are ordered lexicographically (a total order); distinct
    monomials with the same partition are incomparable.
    """
    pa, pb = partition_of(a), partition_of(b)
    if sum(pa) != sum(pb):
        raise DegreeMismatch(f"degrees {sum(pa)} and {sum(pb)} differ")
    if pa == pb:
        return Order.EQUAL if _jet_part(a) == _jet_part(b) else Order.INCOMPARABLE
    return Order.LESS if pa < pb else Order.GREATER


def precedes(a: Expr, b: Expr) -> bool:
    return mono_compare(a, b) is Order.LESS


__all__ = [
    "MIXED",
    "Order",
    "MixedChartError",
    "NotExact",
    "DegreeTooLow",
    "DegreeMismatch",
    "DoubleIntegral",
    "chart_of",
    "max_order",
    "indices",
    "dx",
    "dx_n",
    "jet_partial",
    "var_deriv",
    "diff_degree",
    "homogeneous_parts",
    "is_polynomial",
    "in_S",
    "integrate_x",
    "double_integrate_T",
    "partition_of",
    "mono_compare",
    "precedes",
]

"""Exact symbolic expressions with a unique canonical form.

An :class:`Expr` is a rational function ``N/D`` over a set of atoms:

* named indeterminates (base coordinates ``v1``/``u1``, their x-jets
  ``v1_2``, times ``t1_0``, one-point functions ``f1_0``, test covector
  jets ``a1_3``/``b1``/``c2_1``, and the parameters ``lambda`` and ``eps``);
* ``exp(...)`` atoms, one per monomial direction of the exponent, carrying a
  rational exponent (so ``exp(v2)*exp(v2)`` is ``exp(2*v2)``);
* opaque ``log(...)`` atoms.

``N`` is a Laurent polynomial in the atoms; ``D`` is an ordinary polynomial
with no monomial factor, coprime to ``N`` and with leading coefficient 1.
Monomial atoms are units, so this representation is unique and equality of
values is equality of representations.  Coefficients are exact rationals
(:class:`gmpy2.mpq`).
"""

from __future__ import annotations

import math
import re
from functools import lru_cache
from typing import Callable, Iterable, Mapping

from gmpy2 import mpq, is_square, isqrt
from sympy import symbols as _sp_symbols
from sympy.polys.domains import QQ
from sympy.polys.rings import PolyRing

Scalar = mpq

__all__ = [
    "Scalar",
    "Atom",
    "Expr",
    "ParseError",
    "IntegrationError",
    "parse",
    "to_str",
    "simplify",
    "sym",
    "jet",
    "const",
    "exp_",
    "log_",
    "derive",
    "diff",
    "subs",
    "integrate",
    "sqrt_exact",
    "ZERO",
    "ONE",
]


class ParseError(ValueError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class IntegrationError(ValueError):
    """The antiderivative is outside the supported fragment."""


# ---------------------------------------------------------------------------
# atoms

_RANK = {
    "lambda": 0,
    "eps": 1,
    "t": 2,
    "f": 3,
    "v": 4,
    "u": 5,
    "a": 6,
    "b": 7,
    "c": 8,
    "exp": 20,
    "log": 21,
}
JET_KINDS = frozenset("vuabc")
_ATOMS: dict[tuple, "Atom"] = {}


class Atom:
    """Interned indeterminate or function atom.  Compare by identity."""

    __slots__ = ("kind", "index", "order", "arg", "key", "_free", "name")

    def __init__(self, kind: str, index: int, order: int, arg: "Expr | None"):
        self.kind = kind
        self.index = index
        self.order = order
        self.arg = arg
        if arg is None:
            self.key = (_RANK[kind], index, order)
            self._free = frozenset((self,))
            if kind in ("lambda", "eps"):
                self.name = kind
            elif kind in ("t", "f"):
                self.name = f"{kind}{index}_{order}"
            else:
                self.name = f"{kind}{index}" + (f"_{order}" if order else "")
        else:
            self.key = (_RANK[kind], str(arg))
            self._free = arg.free_atoms()
            self.name = kind

    @property
    def is_function(self) -> bool:
        return self.arg is not None

    @property
    def is_jet(self) -> bool:
        return self.kind in JET_KINDS

    def free_atoms(self) -> frozenset:
        return self._free

    def __repr__(self) -> str:
        if self.arg is None:
            return self.name
        return f"{self.kind}({self.arg})"

    def __reduce__(self):
        return (_atom, (self.kind, self.index, self.order, self.arg))


def _atom(kind: str, index: int = 0, order: int = 0, arg: "Expr | None" = None) -> Atom:
    k = (kind, index, order, arg)
    a = _ATOMS.get(k)
    if a is None:
        a = _ATOMS[k] = Atom(kind, index, order, arg)
    return a


# ---------------------------------------------------------------------------
# monomials and polynomials
#
# A monomial is a tuple of (atom, exponent) pairs sorted by atom key; an
# exponent is an int, or an mpq for exp atoms.  A polynomial is a dict
# monomial -> nonzero mpq.

_ONE_Q = mpq(1)


def _norm_exp(e):
    if type(e) is int:
        return e
    return int(e) if e.denominator == 1 else e


def _mono_mul(m1: tuple, m2: tuple) -> tuple:
    if not m1:
        return m2
    if not m2:
        return m1
    d = dict(m1)
    for a, e in m2:
        s = d.get(a, 0) + e
        if s:
            d[a] = _norm_exp(s)
        else:
            del d[a]
    return tuple(sorted(d.items(), key=_akey))


def _akey(pair):
    return pair[0].key


def _mono_pow(m: tuple, k) -> tuple:
    return tuple((a, _norm_exp(e * k)) for a, e in m)


def _mono_div(m: tuple, d: dict) -> tuple:
    if not d:
        return m
    out = dict(m)
    for a, e in d.items():
        s = out.get(a, 0) - e
        if s:
            out[a] = _norm_exp(s)
        else:
            out.pop(a, None)
    return tuple(sorted(out.items(), key=_akey))


def _poly_add(p: dict, q: dict, sign: int = 1) -> dict:
    out = dict(p)
    for m, c in q.items():
        v = out.get(m)
        if v is None:
            out[m] = c if sign == 1 else -c
        else:
            v = v + c if sign == 1 else v - c
            if v:
                out[m] = v
            else:
                del out[m]
    return out


def _poly_mul(p: dict, q: dict) -> dict:
    if len(p) == 1 and () in p:
        c = p[()]
        return {m: c * v for m, v in q.items()}
    if len(q) == 1 and () in q:
        c = q[()]
        return {m: c * v for m, v in p.items()}
    out: dict = {}
    for m1, c1 in p.items():
        for m2, c2 in q.items():
            m = _mono_mul(m1, m2)
            c = c1 * c2
            v = out.get(m)
            if v is None:
                out[m] = c
            else:
                v += c
                if v:
                    out[m] = v
                else:
                    del out[m]
    return out


def _poly_pow(p: dict, k: int) -> dict:
    if len(p) == 1:
        (m, c), = p.items()
        return {_mono_pow(m, k): c**k}
    result = {(): _ONE_Q}
    base = p
    while k:
        if k & 1:
            result = _poly_mul(result, base)
        k >>= 1
        if k:
            base = _poly_mul(base, base)
    return result


def _poly_scale(p: dict, c) -> dict:
    return {m: v * c for m, v in p.items()}


def _mono_degree(m: tuple):
    return sum((e for _, e in m), 0)


def _term_key(item):
    m = item[0]
    return (-_mono_degree(m), tuple((a.key, -e) for a, e in m))


def _sorted_terms(p: dict) -> list:
    return sorted(p.items(), key=_term_key)


def _poly_atoms(p: dict) -> set:
    out = set()
    for m in p:
        for a, _ in m:
            out.add(a)
    return out


# ---------------------------------------------------------------------------
# gcd through sympy's sparse polynomial rings


@lru_cache(maxsize=None)
def _ring(n: int) -> PolyRing:
    return PolyRing(_sp_symbols(f"g0:{n}"), QQ)


def _poly_gcd_cofactors(num: dict, den: dict) -> tuple[dict, dict]:
    """Return (num/g, den/g) with g = gcd(num, den); num may be Laurent."""
    atoms = sorted(_poly_atoms(num) | _poly_atoms(den), key=lambda a: a.key)
    idx = {a: i for i, a in enumerate(atoms)}
    n = len(atoms)
    scale = [1] * n
    shift = [0] * n
    for p in (num, den):
        for m in p:
            for a, e in m:
                i = idx[a]
                if type(e) is not int:
                    scale[i] = math.lcm(scale[i], int(e.denominator))
    for m in num:
        for a, e in m:
            i = idx[a]
            if e < shift[i]:
                shift[i] = e

    def to_ring(p, sh):
        d = {}
        base = [int(-sh[i] * scale[i]) for i in range(n)]
        for m, c in p.items():
            v = list(base)
            for a, e in m:
                i = idx[a]
                v[i] = int((e - sh[i]) * scale[i])
            d[tuple(v)] = c
        return d

    R = _ring(n)
    pn = R.from_dict(to_ring(num, shift))
    pd = R.from_dict(to_ring(den, [0] * n))
    _, cn, cd = pn.cofactors(pd)

    def back(p, sh):
        out = {}
        for v, c in p.items():
            m = []
            for i, k in enumerate(v):
                e = _norm_exp(mpq(k, scale[i]) + sh[i]) if scale[i] != 1 else k + sh[i]
                if e:
                    m.append((atoms[i], e))
            out[tuple(m)] = mpq(c)
        return out

    return back(cn, shift), back(cd, [0] * n)


# ---------------------------------------------------------------------------
# expressions


class Expr:
    """Immutable canonical rational function.  See module docstring."""

    __slots__ = ("num", "den", "_hash", "_str", "_free")

    def __init__(self, num: dict, den: dict | None):
        # use the module constructors; this assumes canonical input
        self.num = num
        self.den = den
        self._hash = None
        self._str = None
        self._free = None

    # -- construction ------------------------------------------------------
    @staticmethod
    def _poly(p: dict) -> "Expr":
        return Expr(p, None)

    @staticmethod
    def from_atom(a: Atom, e=1) -> "Expr":
        return Expr({((a, e),): _ONE_Q}, None)

    @staticmethod
    def coerce(x) -> "Expr":
        if isinstance(x, Expr):
            return x
        if isinstance(x, (int, type(_ONE_Q))):
            q = mpq(x)
            return Expr({(): q}, None) if q else ZERO
        if isinstance(x, str):
            return parse(x)
        try:
            from fractions import Fraction

            if isinstance(x, Fraction):
                return Expr.coerce(mpq(x.numerator, x.denominator))
        except ImportError:  # pragma: no cover
            pass
        raise TypeError(f"cannot convert {type(x).__name__} to Expr")

    # -- predicates ----------------------------------------------------------
    def is_zero(self) -> bool:
        return not self.num

    def __bool__(self) -> bool:
        return bool(self.num)

    def is_constant(self) -> bool:
        return self.den is None and all(m == () for m in self.num)

    def as_scalar(self):
        """The rational value if constant, else None."""
        if not self.num:
            return mpq(0)
        if self.is_constant():
            return self.num[()]
        return None

    def is_polynomial(self) -> bool:
        """No denominator and no negative exponents."""
        if self.den is not None:
            return False
        return all(e > 0 for m in self.num for _, e in m)

    def free_atoms(self) -> frozenset:
        """Indeterminates the value depends on (looking inside exp/log)."""
        if self._free is None:
            s = set()
            for p in (self.num, self.den or {}):
                for a in _poly_atoms(p):
                    s |= a.free_atoms()
            self._free = frozenset(s)
        return self._free

    def atoms(self) -> set:
        """Top-level atoms including exp/log atoms themselves."""
        s = _poly_atoms(self.num)
        if self.den:
            s |= _poly_atoms(self.den)
        return s

    def depends_on(self, a: Atom) -> bool:
        return a in self.free_atoms()

    def numerator(self) -> "Expr":
        return Expr(self.num, None)

    def denominator(self) -> "Expr":
        return Expr(self.den, None) if self.den else ONE

    def terms(self) -> list["Expr"]:
        """Numerator terms (each divided by the denominator), in print order."""
        out = []
        for m, c in _sorted_terms(self.num):
            out.append(_make({m: c}, self.den))
        return out

    # -- arithmetic ----------------------------------------------------------
    def __add__(self, other) -> "Expr":
        other = Expr.coerce(other)
        if not other.num:
            return self
        if not self.num:
            return other
        if self.den is None and other.den is None:
            p = _poly_add(self.num, other.num)
            return Expr(p, None) if p else ZERO
        if self.den == other.den:
            return _make(_poly_add(self.num, other.num), self.den)
        d1 = self.den or {(): _ONE_Q}
        d2 = other.den or {(): _ONE_Q}
        n = _poly_add(_poly_mul(self.num, d2), _poly_mul(other.num, d1))
        return _make(n, _poly_mul(d1, d2))

    __radd__ = __add__

    def __neg__(self) -> "Expr":
        return Expr({m: -c for m, c in self.num.items()}, self.den)

    def __sub__(self, other) -> "Expr":
        return self + (-Expr.coerce(other))

    def __rsub__(self, other) -> "Expr":
        return Expr.coerce(other) + (-self)

    def __mul__(self, other) -> "Expr":
        other = Expr.coerce(other)
        if not self.num or not other.num:
            return ZERO
        if self.den is None and other.den is None:
            return Expr(_poly_mul(self.num, other.num), None)
        if other.den is None and len(other.num) == 1 and () in other.num:
            c = other.num[()]
            return Expr(_poly_scale(self.num, c), self.den)
        if self.den is None and len(self.num) == 1 and () in self.num:
            c = self.num[()]
            return Expr(_poly_scale(other.num, c), other.den)
        d = _poly_mul(self.den or {(): _ONE_Q}, other.den or {(): _ONE_Q})
        return _make(_poly_mul(self.num, other.num), d)

    __rmul__ = __mul__

    def reciprocal(self) -> "Expr":
        if not self.num:
            raise ZeroDivisionError("division by zero expression")
        return _make(self.den or {(): _ONE_Q}, self.num)

    def __truediv__(self, other) -> "Expr":
        other = Expr.coerce(other)
        if other.den is None and len(other.num) == 1:
            (m, c), = other.num.items()
            if not m:
                return Expr(_poly_scale(self.num, 1 / c), self.den) if self.num else ZERO
        return self * other.reciprocal()

    def __rtruediv__(self, other) -> "Expr":
        return Expr.coerce(other) * self.reciprocal()

    def __pow__(self, k) -> "Expr":
        k = int(k)
        if k == 0:
            return ONE
        if k < 0:
            return self.reciprocal() ** (-k)
        if not self.num:
            return ZERO
        n = _poly_pow(self.num, k)
        d = _poly_pow(self.den, k) if self.den else None
        return Expr(n, d)

    # -- identity --------------------------------------------------------------
    def __eq__(self, other) -> bool:
        if not isinstance(other, Expr):
            try:
                other = Expr.coerce(other)
            except TypeError:
                return NotImplemented
        return self.num == other.num and self.den == other.den

    def __ne__(self, other) -> bool:
        r = self.__eq__(other)
        return r if r is NotImplemented else not r

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash(
                (frozenset(self.num.items()), frozenset(self.den.items()) if self.den else None)
            )
        return self._hash

    def __str__(self) -> str:
        if self._str is None:
            self._str = _print(self)
        return self._str

    def __repr__(self) -> str:
        return f"Expr({str(self)!r})"

    def __reduce__(self):
        return (parse, (str(self),))


def _make(num: dict, den: dict | None) -> Expr:
    """Canonicalize num/den (both possibly Laurent)."""
    if not num:
        return ZERO
    if den is None:
        return Expr(num, None)
    if not den:
        raise ZeroDivisionError("division by zero expression")
    # strip the monomial content of the denominator
    content: dict = {}
    first = True
    for m in den:
        me = dict(m)
        if first:
            content = me
            first = False
            continue
        for a in list(content):
            e = me.get(a, 0)
            if e < content[a]:
                content[a] = e
        for a, e in me.items():
            if a not in content and e < 0:
                content[a] = e
    # atoms absent from some term have min exponent <= 0
    if content:
        for m in den:
            me = dict(m)
            for a in list(content):
                if a not in me and content[a] > 0:
                    content[a] = 0
        content = {a: e for a, e in content.items() if e}
    if content:
        den = {_mono_div(m, content): c for m, c in den.items()}
        num = {_mono_div(m, content): c for m, c in num.items()}
    if len(den) == 1:
        (m, c), = den.items()
        if m:
            raise AssertionError("denominator content not stripped")
        if c != 1:
            num = _poly_scale(num, 1 / c)
        return Expr(num, None)
    if len(num) > 1:
        num, den = _poly_gcd_cofactors(num, den)
        if len(den) == 1:
            (m, c), = den.items()
            if m:
                return _make(num, den)
            return Expr(_poly_scale(num, 1 / c), None)
    lead = _sorted_terms(den)[0][1]
    if lead != 1:
        inv = 1 / lead
        num = _poly_scale(num, inv)
        den = _poly_scale(den, inv)
    return Expr(num, den)


ZERO = Expr({}, None)
ONE = Expr({(): _ONE_Q}, None)


def const(q) -> Expr:
    """Rational constant; accepts int, mpq, Fraction, or 'a/b' text."""
    if isinstance(q, str):
        return parse(q)
    return Expr.coerce(q)


# ---------------------------------------------------------------------------
# named constructors

_JET_RE = re.compile(r"^([vuabc])(\d+)(?:_(\d+))?$")
_TIME_RE = re.compile(r"^([tf])(\d+)_(\d+)$")


def _symbol_atom(name: str) -> Atom | None:
    if name in ("lambda", "eps"):
        return _atom(name)
    m = _JET_RE.match(name)
    if m:
        i = int(m.group(1) and m.group(2))
        if i < 1:
            return None
        return _atom(m.group(1), i, int(m.group(3) or 0))
    m = _TIME_RE.match(name)
    if m:
        i = int(m.group(2))
        if i < 1:
            return None
        return _atom(m.group(1), i, int(m.group(3)))
    return None


def sym(name: str) -> Expr:
    a = _symbol_atom(name)
    if a is None:
        raise ValueError(f"unknown identifier {name!r}")
    return Expr.from_atom(a)


def symbol_atom(name: str) -> Atom:
    a = _symbol_atom(name)
    if a is None:
        raise ValueError(f"unknown identifier {name!r}")
    return a


def jet_atom(family: str, index: int, order: int = 0) -> Atom:
    if family not in JET_KINDS and family not in ("t", "f"):
        raise ValueError(f"unknown jet family {family!r}")
    return _atom(family, index, order)


def jet(family: str, index: int, order: int = 0) -> Expr:
    return Expr.from_atom(jet_atom(family, index, order))


def exp_(arg) -> Expr:
    """exp(arg), split into exp atoms per monomial direction."""
    arg = Expr.coerce(arg)
    if not arg.num:
        return ONE
    if arg.den is not None:
        lead = _sorted_terms(arg.num)[0][1]
        basis = arg / Expr.coerce(lead)
        return Expr.from_atom(_atom("exp", arg=basis), _norm_exp(lead))
    out = ONE
    for m, c in arg.num.items():
        if len(m) == 1 and m[0][0].kind == "log" and m[0][1] == 1 and c.denominator == 1:
            out = out * m[0][0].arg ** int(c)
            continue
        basis = Expr({m: _ONE_Q}, None)
        out = out * Expr.from_atom(_atom("exp", arg=basis), _norm_exp(c))
    return out


def log_(arg) -> Expr:
    arg = Expr.coerce(arg)
    if not arg.num:
        raise ValueError("log(0)")
    if arg == ONE:
        return ZERO
    if arg.den is None and len(arg.num) == 1:
        (m, c), = arg.num.items()
        if c == 1 and m and all(a.kind == "exp" for a, _ in m):
            out = ZERO
            for a, e in m:
                out = out + a.arg * Expr.coerce(e)
            return out
    return Expr.from_atom(_atom("log", arg=arg))


# ---------------------------------------------------------------------------
# printing


def _fmt_q(q) -> str:
    q = mpq(q)
    if q.denominator == 1:
        return str(q.numerator)
    return f"{q.numerator}/{q.denominator}"


def _fmt_factor(a: Atom, e) -> str:
    if a.kind == "exp":
        return f"exp({a.arg * Expr.coerce(e)})"
    base = f"log({a.arg})" if a.kind == "log" else a.name
    if e == 1:
        return base
    return f"{base}^{e}"


def _fmt_poly(p: dict) -> str:
    if not p:
        return "0"
    parts = []
    for i, (m, c) in enumerate(_sorted_terms(p)):
        neg = c < 0
        a = -c if neg else c
        factors = [_fmt_factor(at, e) for at, e in m]
        if not factors:
            body = _fmt_q(a)
        elif a == 1:
            body = "*".join(factors)
        else:
            body = _fmt_q(a) + "*" + "*".join(factors)
        if i == 0:
            parts.append(("-" if neg else "") + body)
        else:
            parts.append((" - " if neg else " + ") + body)
    return "".join(parts)


def _print(e: Expr) -> str:
    if e.den is None:
        return _fmt_poly(e.num)
    return f"({_fmt_poly(e.num)})/({_fmt_poly(e.den)})"


def to_str(e: Expr) -> str:
    return str(e)


def simplify(e) -> Expr:
    """Canonical form.  Expressions are always canonical, so this only coerces."""
    if isinstance(e, str):
        return parse(e)
    return Expr.coerce(e)


# ---------------------------------------------------------------------------
# parsing

_TOKEN_RE = re.compile(r"\s*(?:(\d+)|([A-Za-z][A-Za-z0-9_]*)|(\S))")


def _tokenize(text: str):
    tokens = []
    pos = 0
    line_starts = [0] + [i + 1 for i, ch in enumerate(text) if ch == "\n"]

    def where(p):
        line = 0
        for k, s in enumerate(line_starts):
            if s <= p:
                line = k
        return line + 1, p - line_starts[line] + 1

    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            break
        start = m.start(m.lastindex) if m.lastindex else m.end()
        if m.group(1) is not None:
            tokens.append(("int", m.group(1), where(start)))
        elif m.group(2) is not None:
            tokens.append(("id", m.group(2), where(start)))
        elif m.group(3) is not None:
            ch = m.group(3)
            if ch not in "+-*/^()":
                raise ParseError(f"unexpected character {ch!r}", *where(start))
            tokens.append(("op", ch, where(start)))
        pos = m.end()
    tokens.append(("end", "", where(len(text))))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def take(self):
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, value):
        t = self.take()
        if t[1] != value or t[0] == "end":
            raise ParseError(f"expected {value!r}, found {t[1] or 'end of input'!r}", *t[2])
        return t

    def parse(self) -> Expr:
        e = self.expr()
        t = self.peek()
        if t[0] != "end":
            raise ParseError(f"unexpected {t[1]!r}", *t[2])
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.term()
            e = e + rhs if op == "+" else e - rhs
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op, _, pos = self.take()[1], None, self.toks[self.i - 1][2]
            rhs = self.unary()
            if op == "*":
                e = e * rhs
            else:
                if rhs.is_zero():
                    raise ParseError("division by zero", *pos)
                e = e / rhs
        return e

    def unary(self) -> Expr:
        t = self.peek()
        if t[0] == "op" and t[1] in ("+", "-"):
            self.take()
            e = self.unary()
            return -e if t[1] == "-" else e
        return self.power()

    def power(self) -> Expr:
        base = self.primary()
        t = self.peek()
        if t[0] == "op" and t[1] == "^":
            self.take()
            pos = self.peek()[2]
            k = self.unary()
            q = k.as_scalar()
            if q is None or q.denominator != 1:
                raise ParseError("exponent must be an integer constant", *pos)
            if q < 0 and base.is_zero():
                raise ParseError("division by zero", *pos)
            return base ** int(q)
        return base

    def primary(self) -> Expr:
        t = self.take()
        kind, val, pos = t
        if kind == "int":
            return Expr.coerce(int(val))
        if kind == "id":
            if val in ("exp", "log"):
                self.expect("(")
                inner = self.expr()
                self.expect(")")
                if val == "exp":
                    return exp_(inner)
                if inner.is_zero():
                    raise ParseError("log of zero", *pos)
                return log_(inner)
            a = _symbol_atom(val)
            if a is None:
                raise ParseError(f"unknown identifier {val!r}", *pos)
            return Expr.from_atom(a)
        if kind == "op" and val == "(":
            e = self.expr()
            self.expect(")")
            return e
        raise ParseError(f"unexpected {val or 'end of input'!r}", *pos)


def parse(text: str) -> Expr:
    """Parse expression text into canonical form."""
    return _Parser(text).parse()


# ---------------------------------------------------------------------------
# derivations, substitution


def _poly_partial(p: dict, a: Atom) -> dict:
    out: dict = {}
    for m, c in p.items():
        for k, (b, e) in enumerate(m):
            if b is a:
                if e == 1:
                    nm = m[:k] + m[k + 1 :]
                else:
                    nm = m[:k] + ((b, _norm_exp(e - 1)),) + m[k + 1 :]
                v = out.get(nm, 0) + c * e
                if v:
                    out[nm] = v
                else:
                    out.pop(nm, None)
                break
    return out


def derive(e: Expr, rule: Callable[[Atom], "Expr | None"], _cache: dict | None = None) -> Expr:
    """Apply the derivation defined by its values on indeterminates.

    ``rule(atom)`` gives the image of a plain indeterminate (None for zero);
    exp/log atoms are handled by the chain rule.
    """
    cache = {} if _cache is None else _cache

    def image(a: Atom) -> Expr:
        r = cache.get(a)
        if r is not None:
            return r
        if a.kind == "exp":
            d = derive(a.arg, rule, cache)
            r = d * Expr.from_atom(a) if d else ZERO
        elif a.kind == "log":
            d = derive(a.arg, rule, cache)
            r = d / a.arg if d else ZERO
        else:
            r = rule(a)
            r = ZERO if r is None else Expr.coerce(r)
        cache[a] = r
        return r

    def dpoly(p: dict) -> Expr:
        out = ZERO
        for a in sorted(_poly_atoms(p), key=lambda x: x.key):
            img = image(a)
            if img:
                part = _poly_partial(p, a)
                if part:
                    out = out + Expr(part, None) * img
        return out

    dn = dpoly(e.num)
    if e.den is None:
        return dn
    dd = dpoly(e.den)
    if not dd:
        return _make(dn.num, e.den) if dn.den is None else dn * Expr(e.den, None).reciprocal()
    D = Expr(e.den, None)
    N = Expr(e.num, None)
    return (dn * D - N * dd) / (D * D)


def diff(e: Expr, var) -> Expr:
    """Partial derivative with respect to an indeterminate (Atom, name or Expr)."""
    a = _as_atom(var)
    if not e.depends_on(a):
        return ZERO
    return derive(e, lambda b: ONE if b is a else None)


def _as_atom(var) -> Atom:
    if isinstance(var, Atom):
        return var
    if isinstance(var, str):
        return symbol_atom(var)
    if isinstance(var, Expr) and var.den is None and len(var.num) == 1:
        (m, c), = var.num.items()
        if c == 1 and len(m) == 1 and m[0][1] == 1 and not m[0][0].is_function:
            return m[0][0]
    raise ValueError(f"{var!r} is not an indeterminate")


def subs(e: Expr, mapping: Mapping) -> Expr:
    """Substitute indeterminates (keys: Atom or name) by expressions."""
    mp = {_as_atom(k): Expr.coerce(v) for k, v in mapping.items()}
    if not mp:
        return e
    keys = frozenset(mp)
    return _subs(e, mp, keys, {})


def _subs(e: Expr, mp: dict, keys: frozenset, cache: dict) -> Expr:
    if not (e.free_atoms() & keys):
        return e

    def factor(a: Atom, k) -> Expr:
        ck = (a, k)
        r = cache.get(ck)
        if r is not None:
            return r
        if a.kind == "exp":
            r = exp_(_subs(a.arg, mp, keys, cache) * Expr.coerce(k)) if (a.free_atoms() & keys) else Expr.from_atom(a, k)
        elif a.kind == "log":
            r = log_(_subs(a.arg, mp, keys, cache)) ** k if (a.free_atoms() & keys) else Expr.from_atom(a, k)
        elif a in mp:
            r = mp[a] ** k
        else:
            r = Expr.from_atom(a, k)
        cache[ck] = r
        return r

    def spoly(p: dict) -> Expr:
        out = ZERO
        for m, c in p.items():
            t = Expr({(): c}, None)
            for a, k in m:
                t = t * factor(a, k)
            out = out + t
        return out

    n = spoly(e.num)
    if e.den is None:
        return n
    return n / spoly(e.den)


def coefficients(e: Expr, atoms: Iterable[Atom]) -> dict[tuple, Expr]:
    """View ``e`` as a Laurent polynomial in ``atoms``.

    Returns exponent tuples (aligned with ``atoms``) -> coefficient.  The
    denominator and every exp/log atom must be free of ``atoms``.
    """
    atoms = list(atoms)
    aset = set(atoms)
    pos = {a: i for i, a in enumerate(atoms)}
    if e.den and (_poly_atoms(e.den) & aset or any(a.free_atoms() & aset for a in _poly_atoms(e.den))):
        raise ValueError("denominator depends on the selected indeterminates")
    groups: dict[tuple, dict] = {}
    for m, c in e.num.items():
        ex = [0] * len(atoms)
        rest = []
        for a, k in m:
            if a in pos:
                ex[pos[a]] = k
            else:
                if a.is_function and a.free_atoms() & aset:
                    raise ValueError(f"{a!r} depends on the selected indeterminates")
                rest.append((a, k))
        groups.setdefault(tuple(ex), {})[tuple(rest)] = c
    return {k: _make(p, e.den) for k, p in groups.items()}


# ---------------------------------------------------------------------------
# antiderivatives


def _antideriv_term(k, a_exp, m_log, x: Expr, expx: "Expr | None", logx: "Expr | None") -> Expr:
    """Antiderivative of x^k * exp(a x) * log(x)^m."""
    if a_exp == 0 and m_log == 0:
        if k == -1:
            return log_(x)
        return x ** (k + 1) / Expr.coerce(k + 1)
    if m_log == 0:
        if k < 0:
            raise IntegrationError("x^k exp(ax) with k < 0 has no elementary antiderivative")
        a = Expr.coerce(a_exp)
        total = ZERO
        fact = 1
        for j in range(k + 1):
            if j:
                fact *= k - j + 1
            term = x ** (k - j) * Expr.coerce(fact) / a ** (j + 1)
            total = total + (term if j % 2 == 0 else -term)
        return total * exp_(x * a)
    if a_exp != 0:
        raise IntegrationError("mixed exp/log integrand")
    L = logx if logx is not None else log_(x)
    if k == -1:
        return L ** (m_log + 1) / Expr.coerce(m_log + 1)
    kp = Expr.coerce(k + 1)
    rest = _antideriv_term(k, 0, m_log - 1, x, expx, L)
    return x ** (k + 1) * L**m_log / kp - Expr.coerce(m_log) / kp * rest


def integrate(e: Expr, var) -> Expr:
    """Antiderivative with respect to an indeterminate, zero constant of integration.

    Supports integrands that are sums of x^k exp(a x) log(x)^m times factors
    free of x, over a denominator free of x.
    """
    a = _as_atom(var)
    e = Expr.coerce(e)
    if not e.depends_on(a):
        return e * Expr.from_atom(a)
    if e.den and any(a in b.free_atoms() for b in _poly_atoms(e.den)):
        raise IntegrationError(f"denominator depends on {a.name}")
    x = Expr.from_atom(a)
    xarg = x
    out = ZERO
    groups: dict = {}
    for m, c in e.num.items():
        k = 0
        aexp = mpq(0)
        mlog = 0
        rest = []
        for b, p in m:
            if b is a:
                k = p
            elif b.kind == "exp" and a in b.free_atoms():
                if b.arg != xarg:
                    raise IntegrationError(f"unsupported exponential {b!r}")
                aexp = mpq(p)
            elif b.kind == "log" and a in b.free_atoms():
                if b.arg != xarg or p < 0:
                    raise IntegrationError(f"unsupported logarithm {b!r}")
                mlog = p
            else:
                rest.append((b, p))
        groups.setdefault((k, aexp, mlog), {})[tuple(rest)] = c
    for (k, aexp, mlog), p in sorted(groups.items(), key=lambda kv: (str(kv[0][0]), str(kv[0][1]), kv[0][2])):
        out = out + Expr(p, None) * _antideriv_term(k, aexp, mlog, x, None, None)
    if e.den:
        out = out * Expr(e.den, None).reciprocal()
    return out


# ---------------------------------------------------------------------------
# exact square roots


def _sqrt_q(q):
    q = mpq(q)
    if q < 0 or not (is_square(q.numerator) and is_square(q.denominator)):
        return None
    return mpq(isqrt(q.numerator), isqrt(q.denominator))


def _sqrt_poly(p: dict) -> dict | None:
    if len(p) == 1:
        (m, c), = p.items()
        r = _sqrt_q(c)
        if r is None:
            return None
        nm = []
        for a, e in m:
            if a.kind == "exp":
                nm.append((a, _norm_exp(mpq(e) / 2)))
            elif e % 2:
                return None
            else:
                nm.append((a, e // 2))
        return {tuple(nm): r}
    # general case: square root by factorization
    atoms = sorted(_poly_atoms(p), key=lambda a: a.key)
    from sympy import factor_list as _fl  # local: only for multi-term radicands

    e = Expr(p, None)
    mapping = {}
    names = _sp_symbols(f"s0:{len(atoms)}")
    scale = {}
    for i, a in enumerate(atoms):
        den = 1
        for m in p:
            for b, k in m:
                if b is a and type(k) is not int:
                    den = math.lcm(den, int(k.denominator))
        scale[a] = den
        mapping[a] = names[i]
    from sympy import Integer, Rational

    terms = []
    for m, c in p.items():
        t = Rational(int(c.numerator), int(c.denominator))
        for a, k in m:
            t *= mapping[a] ** Integer(int(k * scale[a]))
        terms.append(t)
    coeff, facs = _fl(sum(terms))
    r = _sqrt_q(mpq(int(coeff.p), int(coeff.q)))
    if r is None:
        return None
    root = Expr.coerce(r)
    back = {names[i]: atoms[i] for i in range(len(atoms))}
    for f, mult in facs:
        if mult % 2:
            return None
        fp = f.as_poly(*names).as_dict()
        d = {}
        for ex, cf in fp.items():
            mono = []
            for i, k in enumerate(ex):
                if k:
                    a = back[names[i]]
                    mono.append((a, _norm_exp(mpq(k, scale[a]))))
            d[tuple(sorted(mono, key=_akey))] = mpq(int(cf.p), int(cf.q))
        root = root * Expr(d, None) ** (mult // 2)
    if root * root != e:
        return None
    return root.num


def sqrt_exact(e) -> Expr | None:
    """Square root within the expression fragment, or None if there is none."""
    e = Expr.coerce(e)
    if not e.num:
        return ZERO
    n = _sqrt_poly(e.num)
    if n is None:
        return None
    if e.den is None:
        return Expr(n, None)
    d = _sqrt_poly(e.den)
    if d is None:
        return None
    return _make(n, d)

"""Virasoro operators and the generating derivation D(lambda).

Rational functions of ``lambda`` with poles at the canonical coordinates are
held as :class:`PoleSum` objects: a map ``(i, k) -> coefficient`` standing for
``coefficient * (u^i - lambda)^(-k)`` plus a lambda-free regular part.  All
coefficients are lambda-free expressions in the u-chart.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import comb, factorial
from typing import Iterable, Mapping, Sequence

from gmpy2 import mpq

from .frobman import CanonicalChart, CheckReport, FrobeniusManifold, change_chart
from .hierarchy import FlowTable, OmegaTable
from .jetcalc import (
    Order,
    diff_degree,
    dx,
    is_polynomial,
    max_order,
    mono_compare,
)
from .symcore import ONE, ZERO, Atom, Expr, coefficients, derive, diff, jet, jet_atom, subs, symbol_atom


class JetOrderExceedsFixture(ValueError):
    pass


class NotRationalInLambda(ValueError):
    pass


class WindowTooSmall(ValueError):
    pass


class MissingFixture(ValueError):
    pass


class NoSolutionInAnsatz(ValueError):
    pass


class NoPolynomialSolution(ValueError):
    pass


LAMBDA = symbol_atom("lambda")
LAM = Expr.from_atom(LAMBDA)


def _u(i: int, s: int = 0) -> Expr:
    return jet("u", i, s)


# ---------------------------------------------------------------------------
# pole sums


class PoleSum:
    __slots__ = ("terms", "regular")

    def __init__(self, terms: Mapping | None = None, regular: Expr = ZERO):
        self.terms = {k: v for k, v in (terms or {}).items() if v}
        self.regular = regular

    @staticmethod
    def pole(i: int, k: int, coeff: Expr = ONE) -> "PoleSum":
        return PoleSum({(i, k): Expr.coerce(coeff)})

    def __add__(self, other: "PoleSum") -> "PoleSum":
        t = dict(self.terms)
        for k, v in other.terms.items():
            t[k] = t[k] + v if k in t else v
        return PoleSum(t, self.regular + other.regular)

    def __neg__(self) -> "PoleSum":
        return PoleSum({k: -v for k, v in self.terms.items()}, -self.regular)

    def __sub__(self, other: "PoleSum") -> "PoleSum":
        return self + (-other)

    def scale(self, c) -> "PoleSum":
        c = Expr.coerce(c)
        if not c:
            return PoleSum()
        return PoleSum({k: v * c for k, v in self.terms.items()}, self.regular * c)

    def is_zero(self) -> bool:
        return not self.terms and not self.regular

    def __eq__(self, other) -> bool:
        if not isinstance(other, PoleSum):
            return NotImplemented
        return (self - other).is_zero()

    def dx(self) -> "PoleSum":
        """Total x-derivative (lambda is a constant)."""
        out = PoleSum(regular=dx(self.regular))
        for (i, k), c in self.terms.items():
            out = out + PoleSum({(i, k): dx(c), (i, k + 1): -k * c * _u(i, 1)})
        return out

    def max_order(self, i: int) -> int:
        return max((k for (j, k) in self.terms if j == i), default=0)

    def coeff(self, i: int, k: int) -> Expr:
        return self.terms.get((i, k), ZERO)

    def coeff_lambda_minus_u(self, i: int, k: int) -> Expr:
        """Coefficient of (lambda - u^i)^(-k)."""
        c = self.coeff(i, k)
        return -c if k % 2 else c

    def to_expr(self) -> Expr:
        out = self.regular
        for (i, k), c in sorted(self.terms.items()):
            out = out + c * (_u(i) - LAM) ** (-k)
        return out

    def expansion(self, m: int) -> Expr:
        """Coefficient of lambda^(-m-2) in the expansion at lambda = infinity."""
        if m == -2:
            return self.regular
        out = ZERO
        for (i, k), c in self.terms.items():
            e = m + 2 - k
            if e < 0:
                continue
            term = c * Expr.coerce(comb(m + 1, k - 1)) * _u(i) ** e
            out = out + (term if k % 2 == 0 else -term)
        return out

    def __repr__(self) -> str:
        parts = [f"({c})*(u{i}-lambda)^-{k}" for (i, k), c in sorted(self.terms.items())]
        if self.regular:
            parts.append(str(self.regular))
        return "PoleSum(" + " + ".join(parts or ["0"]) + ")"


def partial_fractions(e: Expr, n: int) -> PoleSum:
    """Decompose a rational function of lambda with poles only at u^1..u^n."""
    e = Expr.coerce(e)
    if not e.depends_on(LAMBDA):
        return PoleSum(regular=e)
    den = e.denominator()
    remaining = e
    out = PoleSum()
    for i in range(1, n + 1):
        root = _u(i)
        lin = root - LAM
        k = 0
        d = den
        while d.depends_on(LAMBDA) and not subs(d, {LAMBDA: root}):
            d = d / lin
            k += 1
        if k == 0:
            continue
        g = e * lin**k
        # g is regular at lambda = u^i; Taylor coefficients in (u^i - lambda)
        cur = g
        for m in range(k):
            val = subs(cur, {LAMBDA: root})
            if val.depends_on(LAMBDA):
                raise NotRationalInLambda("coefficient still depends on lambda")
            c = val / Expr.coerce(factorial(m))
            if m % 2:
                c = -c
            if c:
                out = out + PoleSum.pole(i, k - m, c)
            cur = diff(cur, LAMBDA)
    rest = e - out.to_expr()
    if rest.depends_on(LAMBDA):
        raise NotRationalInLambda(f"lambda-dependence outside the poles at u^i: {rest}")
    return out + PoleSum(regular=rest)


# ---------------------------------------------------------------------------
# the constants of the top pole


def double_factorial(k: int) -> int:
    if k <= 0:
        return 1
    r = 1
    while k > 1:
        r *= k
        k -= 2
    return r


def c_constant(N: int) -> mpq:
    if N < 0:
        raise ValueError("N must be non-negative")
    s = sum(comb(N, l) * double_factorial(2 * l - 3) * double_factorial(2 * N - 2 * l + 1) for l in range(1, N + 1))
    return mpq(factorial(N)) + mpq(s, 2**N)


# ---------------------------------------------------------------------------
# D(lambda)


class DLambdaOp:
    """The derivation D(lambda) on u-chart jet expressions.

    ``weights[(i, j)]`` is (psi_j / psi_i) gamma_ij as a u-chart expression;
    ``fixture[(i, r)]`` holds B_{i,r} for r >= 2.
    """

    def __init__(self, n: int, weights: Mapping | None = None, fixture: Mapping | None = None):
        self.n = n
        self.weights = {k: Expr.coerce(v) for k, v in (weights or {}).items()}
        self._first: dict = {}
        self.B: dict = {}
        for i in range(1, n + 1):
            self.B[(i, 1)] = self.b1(i)
        for (i, r), val in (fixture or {}).items():
            ps = val if isinstance(val, PoleSum) else partial_fractions(Expr.coerce(val), n)
            if r == 1:
                if ps != self.B[(i, 1)]:
                    raise NotRationalInLambda(f"fixture B_{i},1 disagrees with the closed form")
                continue
            self.B[(i, r)] = ps

    @staticmethod
    def from_chart(C: CanonicalChart, fixture: Mapping | None = None) -> "DLambdaOp":
        w = {}
        for i in range(C.n):
            for j in range(C.n):
                if i != j:
                    w[(i + 1, j + 1)] = C.gamma_weighted(i, j, "u")
        return DLambdaOp(C.n, w, fixture)

    def weight(self, i: int, j: int) -> Expr:
        return self.weights.get((i, j), ZERO)

    def b1(self, i: int) -> PoleSum:
        ux = _u(i, 1)
        out = PoleSum.pole(i, 2, -ux / 2)
        for j in range(1, self.n + 1):
            if j == i:
                continue
            h = self.weight(i, j)
            if h:
                out = out + PoleSum({(j, 1): -ux * h, (i, 1): ux * h})
        return out

    def first_sum(self, i: int, r: int) -> PoleSum:
        key = (i, r)
        res = self._first.get(key)
        if res is None:
            res = PoleSum.pole(i, 1) if r == 0 else self.first_sum(i, r - 1).dx()
            self._first[key] = res
        return res

    def max_fixture_order(self) -> int:
        return max((r for (_, r) in self.B), default=1)

    def on_jet(self, i: int, r: int) -> PoleSum:
        """Image of u^{i,r}."""
        out = self.first_sum(i, r)
        if r >= 1:
            b = self.B.get((i, r))
            if b is None:
                raise JetOrderExceedsFixture(f"B_{i},{r} is not supplied")
            out = out + b
        return out

    def apply(self, F: Expr) -> PoleSum:
        F = Expr.coerce(F)
        if F.depends_on(LAMBDA):
            raise ValueError("D(lambda) acts on lambda-free expressions")
        out = PoleSum()
        atoms = sorted((a for a in F.free_atoms() if a.kind == "u"), key=lambda a: a.key)
        for a in atoms:
            d = diff(F, a)
            if d:
                out = out + self.on_jet(a.index, a.order).scale(d)
        return out


# ---------------------------------------------------------------------------
# leading terms and pole profiles


@dataclass
class LeadingAction:
    i: int
    k: int
    leading: Expr  # coefficient of u^{i,k} (u^i - lambda)^-2
    gamma_coeff: Expr | None  # coefficient multiplying u^{i,k} h_ij in the j-pole
    remainder: PoleSum
    remainder_ok: bool


def _jet_monomials(e: Expr) -> list[Expr]:
    if e.den is not None and any(a.is_jet and a.order > 0 for a in e.denominator().free_atoms()):
        raise ValueError("jet-dependent denominator")
    out = []
    for m, _ in e.num.items():
        jm = tuple((a, x) for a, x in m if a.is_jet and a.order > 0)
        out.append(Expr({jm: ONE.num[()]}, None))
    return out


def _linear_coeff(e: Expr, atom: Atom) -> Expr:
    """Jet-free part of the coefficient of ``atom`` (to the first power) in e."""
    c = coefficients(e, [atom]).get((1,), ZERO)
    jetfree = ZERO
    for t in c.terms():
        if not any(a.is_jet and a.order > 0 for a in t.free_atoms()):
            jetfree = jetfree + t
    return jetfree


def leading_action(D: DLambdaOp, i: int, k: int) -> LeadingAction:
    img = D.on_jet(i, k)
    target = jet_atom("u", i, k)
    uk = _u(i, k)
    lead = _linear_coeff(img.coeff(i, 2), target)
    gam = None
    expected = PoleSum.pole(i, 2, -(1 + mpq(k, 2)) * uk)
    for j in range(1, D.n + 1):
        if j == i:
            continue
        h = D.weight(i, j)
        if not h:
            continue
        gc = _linear_coeff(img.coeff(j, 1), target) / h
        if gam is None:
            gam = gc
        expected = expected + PoleSum({(j, 1): -k * uk * h, (i, 1): k * uk * h})
    rem = img - expected
    ok = True
    for coeff in list(rem.terms.values()) + ([rem.regular] if rem.regular else []):
        for mono in _jet_monomials(coeff):
            try:
                if mono_compare(mono, uk) is not Order.LESS:
                    ok = False
            except Exception:
                ok = False
    return LeadingAction(i, k, lead, gam, rem, ok)


@dataclass
class PoleProfile:
    i: int
    top_order: int  # largest pole order present
    bound: int  # N + 1
    coefficient: Expr  # coefficient of (lambda - u^i)^(-N-1)
    expected: Expr
    matches: bool


def pole_profile(D: DLambdaOp, F: Expr) -> list[PoleProfile]:
    F = Expr.coerce(F)
    N = max(max_order(F, "u"), 0)
    img = D.apply(F)
    out = []
    for i in range(1, D.n + 1):
        top = img.max_order(i)
        coeff = img.coeff_lambda_minus_u(i, N + 1)
        expected = -Expr.coerce(c_constant(N)) * _u(i, 1) ** N * diff(F, jet_atom("u", i, N))
        out.append(PoleProfile(i, top, N + 1, coeff, expected, coeff == expected and top <= N + 1))
    return out


def regular_at_infinity(P: PoleSum) -> bool:
    return not P.regular


# ---------------------------------------------------------------------------
# Virasoro coefficients and genus-zero flows


Label = tuple  # (alpha, p)


@dataclass
class VirasoroCoeffs:
    n: int
    mmax: int
    pmax: int  # every entry with indices <= pmax is present for m <= mmax
    a: dict  # m -> {(A, B): mpq}, ordered pairs, symmetric
    b: dict  # m -> {(A, B): mpq}: coefficient of t~^A d/dt^B
    c: dict  # m -> {(A, B): mpq}
    trace_term: mpq = mpq(0)

    def check_symmetry(self) -> CheckReport:
        for name, tab in (("a", self.a), ("c", self.c)):
            for m, entries in tab.items():
                for (A, B), val in entries.items():
                    if entries.get((B, A), 0) != val:
                        return CheckReport(False, f"{name}-symmetry", (m, A, B), Expr.coerce(val))
        return CheckReport(True, "symmetry")

    def perturbed(self, table: str, m: int, key, delta) -> "VirasoroCoeffs":
        import copy

        V = copy.deepcopy(self)
        tab = getattr(V, table).setdefault(m, {})
        tab[key] = tab.get(key, mpq(0)) + mpq(delta)
        return V


def trace_term(mu: Sequence) -> mpq:
    return sum((mpq(1, 4) - mpq(x) ** 2 for x in mu), mpq(0)) / 4


def t_var(A: Label) -> Expr:
    return jet("t", A[0], A[1])


def f_var(A: Label) -> Expr:
    return jet("f", A[0], A[1])


def t_shifted(A: Label) -> Expr:
    t = t_var(A)
    return t - ONE if A == (1, 1) else t


def _in_window(A: Label, P: int) -> bool:
    return 0 <= A[1] <= P


def _need(V: VirasoroCoeffs, m: int, P: int) -> None:
    if m > V.mmax or m < -1:
        raise WindowTooSmall(f"no coefficients for m = {m}")
    if P > V.pmax:
        raise WindowTooSmall(f"window {P} exceeds fixture coverage {V.pmax}")


def genus0_generator(V: VirasoroCoeffs, m: int, P: int) -> Expr:
    """d F_0 / d s_m restricted to times and one-point functions with level <= P."""
    _need(V, m, P)
    out = ZERO
    for (A, B), x in sorted(V.a.get(m, {}).items()):
        if _in_window(A, P) and _in_window(B, P):
            out = out + Expr.coerce(x) * f_var(A) * f_var(B)
    for (A, B), x in sorted(V.b.get(m, {}).items()):
        if _in_window(A, P) and _in_window(B, P):
            out = out + Expr.coerce(x) * t_shifted(A) * f_var(B)
    for (A, B), x in sorted(V.c.get(m, {}).items()):
        if _in_window(A, P) and _in_window(B, P):
            out = out + Expr.coerce(x) * t_shifted(A) * t_shifted(B)
    return out


def _labels(n: int, P: int) -> list[Label]:
    return [(a, p) for p in range(P + 1) for a in range(1, n + 1)]


def _max_index(e: Expr) -> int:
    return max((a.order for a in e.free_atoms() if a.kind in ("t", "f")), default=-1)


def commutation_check(V: VirasoroCoeffs, k: int, l: int, P: int | None = None) -> CheckReport:
    """[d/ds_k, d/ds_l] F_0 = (l - k) d F_0/d s_{k+l} on the window."""
    P = V.pmax if P is None else P
    if k + l > V.mmax:
        raise WindowTooSmall(f"k + l = {k + l} exceeds m_max = {V.mmax}")
    Q = P - max(abs(k), abs(l))
    if Q < 0:
        raise WindowTooSmall(f"window {P} too small for (k, l) = ({k}, {l})")
    Pk, Pl = genus0_generator(V, k, P), genus0_generator(V, l, P)
    lhs = ZERO
    for A in _labels(V.n, P):
        tA, fA = jet_atom("t", *A), jet_atom("f", *A)
        lhs = lhs + diff(Pl, fA) * diff(Pk, tA) - diff(Pk, fA) * diff(Pl, tA)
    rhs = ZERO if k == l else Expr.coerce(l - k) * genus0_generator(V, k + l, P)
    res = _restrict(lhs - rhs, Q)
    if res:
        return CheckReport(False, "commutation", (k, l), res)
    return CheckReport(True, "commutation", data={"certified_levels": Q})


def _restrict(e: Expr, Q: int) -> Expr:
    """Drop monomials containing a time or one-point function of level > Q."""
    keep = ZERO
    for t in e.terms():
        if _max_index(t) <= Q:
            keep = keep + t
    return keep


# ---------------------------------------------------------------------------
# total derivatives on the tau-cover


class TauCover:
    """Derivatives along t^{A} of expressions in times, one-point functions and v-jets."""

    def __init__(self, M: FrobeniusManifold, FT: FlowTable, OT: OmegaTable):
        self.M = M
        self.FT = FT
        self.OT = OT

    def d_t(self, e: Expr, B: Label) -> Expr:
        if B not in self.FT.flows:
            raise WindowTooSmall(f"flow {B} outside the computed window")

        def rule(a: Atom):
            if a.kind == "t":
                return ONE if (a.index, a.order) == B else None
            if a.kind == "f":
                key = ((a.index, a.order), B)
                if key not in self.OT.omega:
                    raise WindowTooSmall(f"two-point function {key} outside the window")
                return self.OT.omega[key]
            if a.kind == "v":
                return self.FT.jet_image(B, a.index, a.order)
            return None

        return derive(e, rule)

    def d_x(self, e: Expr) -> Expr:
        return self.d_t(e, (1, 0))


@dataclass
class GenusZeroFlow:
    m: int
    F0: Expr
    f: dict
    v: list


def virasoro_flow_genus0(V: VirasoroCoeffs, m: int, cover: TauCover, P: int) -> GenusZeroFlow:
    gen = genus0_generator(V, m, P)
    fl = {A: cover.d_t(gen, A) for A in _labels(V.n, P)}
    M = cover.M
    vs = []
    for a in range(M.n):
        s = ZERO
        for b in range(M.n):
            if M.eta_inv[a][b]:
                s = s + M.eta_inv[a][b] * cover.d_x(fl[(b + 1, 0)])
        vs.append(s)
    return GenusZeroFlow(m, gen, fl, vs)


def d_m_action(V: VirasoroCoeffs, m: int, Q: Expr, cover: TauCover, P: int) -> Expr:
    """D_m Q for a v-jet expression Q; raises if times or one-point functions survive."""
    flow = virasoro_flow_genus0(V, m, cover, P)
    gen = flow.F0
    out = ZERO
    for B in _labels(V.n, P):
        coeff = diff(gen, jet_atom("f", *B))
        if coeff:
            out = out + coeff * cover.d_t(Q, B)

    def rule(a: Atom):
        if a.kind == "v":
            e = flow.v[a.index - 1]
            for _ in range(a.order):
                e = cover.d_x(e)
            return e
        return None

    out = out - derive(Q, rule)
    if any(a.kind in ("t", "f") for a in out.free_atoms()):
        raise WindowTooSmall(f"D_{m} action did not reduce to jets on window {P}")
    return out


def d_operator_consistency(
    V: VirasoroCoeffs,
    D: DLambdaOp,
    cover: TauCover,
    C: CanonicalChart,
    Q: Expr,
    ms: Iterable[int],
    P: int,
) -> CheckReport:
    """Compare D_m Q with the lambda^(-m-2) coefficient of D(lambda)Q."""
    Qu = change_chart(Q, C, "v_to_u") if C.n and any(a.kind == "v" for a in Q.free_atoms()) else Q
    Qv = change_chart(Q, C, "u_to_v") if any(a.kind == "u" for a in Q.free_atoms()) else Q
    img = D.apply(Qu)
    for m in ms:
        lhs = d_m_action(V, m, Qv, cover, P)
        lhs_u = change_chart(lhs, C, "v_to_u") if any(a.kind == "v" for a in lhs.free_atoms()) else lhs
        rhs = img.expansion(m)
        if lhs_u != rhs:
            return CheckReport(False, "d-operator", (m,), lhs_u - rhs)
    return CheckReport(True, "d-operator")


def omega_contraction(V: VirasoroCoeffs, m: int, OT: OmegaTable) -> Expr:
    out = ZERO
    for (A, B), x in sorted(V.a.get(m, {}).items()):
        key = (A, B)
        if key not in OT.omega:
            raise WindowTooSmall(f"two-point function {key} not computed")
        out = out + Expr.coerce(x) * OT.omega[key]
    return out


@dataclass
class Genus1Residual:
    m: int
    via_dlambda: Expr
    via_virasoro: Expr | None

    @property
    def ok(self) -> bool:
        return not self.via_dlambda and (self.via_virasoro is None or not self.via_virasoro)


def genus1_residual(
    V: VirasoroCoeffs,
    D: DLambdaOp,
    C: CanonicalChart,
    OT: OmegaTable,
    F1: Expr,
    ms: Iterable[int],
    cover: TauCover | None = None,
    P: int | None = None,
) -> list[Genus1Residual]:
    """Residual of D_m F1 + a_m Omega + delta_{m,0} trace term, for each m."""
    F1u = F1 if not any(a.kind == "v" for a in F1.free_atoms()) else change_chart(F1, C, "v_to_u")
    img = D.apply(F1u)
    out = []
    for m in ms:
        _need(V, m, 0)
        rhs_v = -omega_contraction(V, m, OT)
        rhs_u = change_chart(rhs_v, C, "v_to_u") if any(a.kind == "v" for a in rhs_v.free_atoms()) else rhs_v
        if m == 0:
            rhs_u = rhs_u - Expr.coerce(V.trace_term)
        r1 = img.expansion(m) - rhs_u
        r2 = None
        if cover is not None:
            F1v = change_chart(F1u, C, "u_to_v")
            lhs = d_m_action(V, m, F1v, cover, V.pmax if P is None else P)
            r2 = lhs - (rhs_v - (Expr.coerce(V.trace_term) if m == 0 else ZERO))
        out.append(Genus1Residual(m, r1, r2))
    return out


# ---------------------------------------------------------------------------
# linearization step


def ansatz_basis(
    n: int,
    degree: int,
    max_jet: int,
    coeff_degree: int,
    max_inverse: int = 0,
) -> list[Expr]:
    """Monomials of S_degree with jets of order <= max_jet, times u-monomials.

    First jets may carry negative exponents down to -max_inverse.  Polynomial
    elements come first.
    """
    firsts = list(range(1, n + 1))
    highs = [(i, s) for i in range(1, n + 1) for s in range(2, max_jet + 1)]
    budget = degree + n * max_inverse
    jet_monos = []
    for hexp in itertools.product(*[range(budget // s + 1) for _, s in highs]):
        rest = degree - sum(e * s for e, (_, s) in zip(hexp, highs))
        # split ``rest`` over the first jets, each exponent >= -max_inverse
        for fexp in itertools.product(range(-max_inverse, rest + n * max_inverse + 1), repeat=n):
            if sum(fexp) != rest or -sum(e for e in fexp if e < 0) > max_inverse:
                continue
            m = ONE
            for i, e in zip(firsts, fexp):
                if e:
                    m = m * _u(i, 1) ** e
            for (i, s), e in zip(highs, hexp):
                if e:
                    m = m * _u(i, s) ** e
            jet_monos.append(m)
    base_monos = []
    for exps in itertools.product(range(coeff_degree + 1), repeat=n):
        if sum(exps) <= coeff_degree:
            b = ONE
            for i, e in enumerate(exps):
                if e:
                    b = b * _u(i + 1) ** e
            base_monos.append(b)
    basis = sorted({j * b for j in jet_monos for b in base_monos}, key=lambda x: (not is_polynomial(x), str(x)))
    return [b for b in basis if diff_degree(b) == degree]


def _lcm(a: Expr, b: Expr) -> Expr:
    q = a / b
    return a * q.denominator()


def _flatten(ps: PoleSum) -> dict:
    out = dict(ps.terms)
    if ps.regular:
        out[(0, 0)] = ps.regular
    return out


@dataclass
class LinearizationResult:
    G: Expr
    coefficients: dict
    polynomial: bool
    verified: bool
    basis_size: int


def linearization_step(O: PoleSum, D: DLambdaOp, basis: Sequence[Expr]) -> LinearizationResult:
    """Solve D(lambda) G = O with G in the span of ``basis``."""
    from sympy.polys.domains import QQ
    from sympy.polys.matrices import DomainMatrix

    images = [_flatten(D.apply(b)) for b in basis]
    target = _flatten(O)
    keys = sorted(set(target).union(*[set(im) for im in images]))
    rows: list[list] = []
    rhs: list = []
    for key in keys:
        exprs = [im.get(key, ZERO) for im in images]
        t = target.get(key, ZERO)
        den = ONE
        for e in exprs + [t]:
            if e.den is not None:
                den = _lcm(den, e.denominator())
        polys = [e * den for e in exprs]
        tp = t * den
        monos = set()
        for p in polys + [tp]:
            if p.den is not None:
                raise NotRationalInLambda("denominator clearing failed")
            monos.update(p.num)
        for mono in sorted(monos, key=str):
            rows.append([p.num.get(mono, 0) for p in polys])
            rhs.append(tp.num.get(mono, 0))
    ncol = len(basis)
    if not rows:
        return LinearizationResult(ZERO, {}, True, True, ncol)
    aug = [[QQ(int(x.numerator), int(x.denominator)) if x else QQ(0) for x in row] + [QQ(int(y.numerator), int(y.denominator)) if y else QQ(0)] for row, y in zip(rows, rhs)]
    A = DomainMatrix(aug, (len(aug), ncol + 1), QQ)
    R, pivots = A.rref()
    if ncol in pivots:
        raise NoSolutionInAnsatz("right-hand side is not in the image of the ansatz")
    Rl = R.to_Matrix()
    sol = {}
    for r, pc in enumerate(pivots):
        val = Rl[r, ncol]
        if val:
            sol[pc] = mpq(int(val.p), int(val.q))
    G = ZERO
    for j, v in sorted(sol.items()):
        G = G + Expr.coerce(v) * basis[j]
    verified = D.apply(G) == O
    poly = is_polynomial(G)
    if not poly:
        raise NoPolynomialSolution(f"solution {G} lies outside A")
    return LinearizationResult(G, {str(basis[j]): v for j, v in sol.items()}, poly, verified, ncol)


def miura_update(G: Expr, M: FrobeniusManifold, C: CanonicalChart, FT: FlowTable) -> list[Expr]:
    """eta^{ab} d_x d_{t^{b,0}} G in the v-chart: the shift of the coordinates induced by G."""
    from .hierarchy import t_derivative

    Gv = change_chart(G, C, "u_to_v") if any(a.kind == "u" for a in G.free_atoms()) else G
    out = []
    for a in range(M.n):
        s = ZERO
        for b in range(M.n):
            if M.eta_inv[a][b]:
                s = s + M.eta_inv[a][b] * dx(t_derivative(Gv, (b + 1, 0), FT))
        out.append(s)
    return out


# ---------------------------------------------------------------------------
# fixture I/O


def coeffs_from_records(n: int, records: Mapping, mu: Sequence | None = None) -> VirasoroCoeffs:
    """Build coefficient tables from {"a": [[m, al, p, be, q, value], ...], ...}."""
    tabs = {"a": {}, "b": {}, "c": {}}
    for name in tabs:
        for rec in records.get(name, []):
            m, al, p, be, q, val = rec
            tabs[name].setdefault(int(m), {})[((int(al), int(p)), (int(be), int(q)))] = mpq(str(val))
    mmax = int(records.get("mmax", max([m for t in tabs.values() for m in t] or [-1])))
    pmax = int(records.get("pmax", 0))
    tr = mpq(str(records["trace"])) if "trace" in records else (trace_term(mu) if mu is not None else mpq(0))
    return VirasoroCoeffs(n, mmax, pmax, tabs["a"], tabs["b"], tabs["c"], tr)


def coeffs_to_records(V: VirasoroCoeffs) -> dict:
    def fmt(q):
        q = mpq(q)
        return str(q.numerator) if q.denominator == 1 else f"{q.numerator}/{q.denominator}"

    out: dict = {"mmax": V.mmax, "pmax": V.pmax, "trace": fmt(V.trace_term)}
    for name in ("a", "b", "c"):
        recs = []
        for m in sorted(getattr(V, name)):
            for (A, B), val in sorted(getattr(V, name)[m].items()):
                recs.append([m, A[0], A[1], B[0], B[1], fmt(val)])
        out[name] = recs
    return out


def b_fixture_from_records(records: Iterable) -> dict:
    """[(i, r, expression-text), ...] -> {(i, r): Expr}."""
    from .symcore import parse

    return {(int(i), int(r)): parse(e) if isinstance(e, str) else Expr.coerce(e) for i, r, e in records}

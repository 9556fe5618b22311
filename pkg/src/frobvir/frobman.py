"""Frobenius manifolds in flat coordinates.

A manifold is given by its potential ``F(v1..vn)``, Euler field, charge and
monodromy data ``(mu, R)``.  The flat metric and structure constants are
derived from ``F``.  This module checks associativity and
quasi-homogeneity, builds the theta-table of the deformed flat connection,
and constructs canonical coordinates with their Lame/rotation data.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

from gmpy2 import mpq

from . import jetcalc
from .symcore import (
    ONE,
    ZERO,
    Expr,
    IntegrationError,
    diff,
    integrate,
    jet,
    jet_atom,
    parse,
    sqrt_exact,
    subs,
)


class DegenerateMetric(ValueError):
    pass


class IntegrabilityFailure(ValueError):
    pass


class NotSemisimple(ValueError):
    pass


class NoClosedForm(ValueError):
    pass


# ---------------------------------------------------------------------------
# small exact linear algebra over Expr


def mat_inverse(M: Sequence[Sequence[Expr]]) -> list[list[Expr]]:
    n = len(M)
    A = [[Expr.coerce(x) for x in row] + [ONE if i == j else ZERO for j in range(n)] for i, row in enumerate(M)]
    for col in range(n):
        piv = next((r for r in range(col, n) if A[r][col]), None)
        if piv is None:
            raise ZeroDivisionError("singular matrix")
        A[col], A[piv] = A[piv], A[col]
        inv = A[col][col].reciprocal()
        A[col] = [x * inv for x in A[col]]
        for r in range(n):
            if r != col and A[r][col]:
                f = A[r][col]
                A[r] = [x - f * y for x, y in zip(A[r], A[col])]
    return [row[n:] for row in A]


def mat_det(M: Sequence[Sequence[Expr]]) -> Expr:
    n = len(M)
    if n == 1:
        return Expr.coerce(M[0][0])
    if n == 2:
        return M[0][0] * M[1][1] - M[0][1] * M[1][0]
    total = ZERO
    for j in range(n):
        if M[0][j]:
            minor = [row[:j] + row[j + 1 :] for row in M[1:]]
            t = M[0][j] * mat_det(minor)
            total = total + (t if j % 2 == 0 else -t)
    return total


def base(i: int, chart: str = "v") -> Expr:
    return jet(chart, i, 0)


# ---------------------------------------------------------------------------
# reports


@dataclass
class CheckReport:
    ok: bool
    name: str
    witness: tuple | None = None
    residual: Expr | None = None
    data: dict = field(default_factory=dict)

    def __bool__(self) -> bool:
        return self.ok

    def describe(self) -> str:
        if self.ok:
            return f"{self.name}: ok"
        return f"{self.name}: violation at {self.witness}, residual {self.residual}"


# ---------------------------------------------------------------------------
# the manifold


class FrobeniusManifold:
    def __init__(
        self,
        n: int,
        potential,
        euler: Sequence,
        charge,
        mu: Sequence,
        R: Sequence[Sequence] | None = None,
        name: str = "",
    ):
        self.n = n
        self.name = name
        self.F = Expr.coerce(potential)
        self.euler = [Expr.coerce(e) for e in euler]
        self.d = mpq(charge) if not isinstance(charge, str) else mpq(charge)
        self.mu = [mpq(m) if not isinstance(m, str) else mpq(m) for m in mu]
        if R is None:
            R = [[0] * n for _ in range(n)]
        # R[g][a] is the entry with upper index g, lower index a
        self.R = [[mpq(x) if not isinstance(x, str) else mpq(x) for x in row] for row in R]
        if len(self.euler) != n or len(self.mu) != n or len(self.R) != n:
            raise ValueError("dimension mismatch in manifold data")
        for a in self.F.free_atoms():
            if not (a.kind == "v" and a.order == 0 and 1 <= a.index <= n):
                raise ValueError(f"potential depends on {a.name}")
        self.coords = [base(i) for i in range(1, n + 1)]
        self._third = {}
        self._eta = None
        self._eta_inv = None
        self._c = None

    # -- derived tensors ---------------------------------------------------
    def third(self, a: int, b: int, c: int) -> Expr:
        key = tuple(sorted((a, b, c)))
        r = self._third.get(key)
        if r is None:
            x, y, z = key
            r = diff(diff(diff(self.F, self.coords[x]), self.coords[y]), self.coords[z])
            self._third[key] = r
        return r

    @property
    def eta(self) -> list[list[Expr]]:
        if self._eta is None:
            n = self.n
            eta = [[self.third(0, a, b) for b in range(n)] for a in range(n)]
            for row in eta:
                for x in row:
                    if not x.is_constant() and x:
                        raise DegenerateMetric(f"metric entry {x} is not constant")
            if not mat_det(eta):
                raise DegenerateMetric("metric is degenerate")
            self._eta = eta
        return self._eta

    @property
    def eta_inv(self) -> list[list[Expr]]:
        if self._eta_inv is None:
            self._eta_inv = mat_inverse(self.eta)
        return self._eta_inv

    def c(self, g: int, a: int, b: int) -> Expr:
        """Structure constant with upper index g (0-based indices)."""
        if self._c is None:
            n = self.n
            self._c = {}
            for x in range(n):
                for y in range(x, n):
                    for z in range(n):
                        s = ZERO
                        for l in range(n):
                            if self.eta_inv[z][l]:
                                s = s + self.eta_inv[z][l] * self.third(l, x, y)
                        self._c[(z, x, y)] = s
                        self._c[(z, y, x)] = s
        return self._c[(g, a, b)]

    def c_up(self, a: int, b: int, g: int) -> Expr:
        """c^{ab}_g = eta^{al} c^b_{lg}."""
        s = ZERO
        for l in range(self.n):
            if self.eta_inv[a][l]:
                s = s + self.eta_inv[a][l] * self.c(b, l, g)
        return s

    def r_shift(self) -> list[Expr]:
        out = []
        for a, e in enumerate(self.euler):
            out.append(subs(e, {self.coords[b]: ZERO for b in range(self.n)}))
        return out

    def apply_euler(self, f: Expr) -> Expr:
        s = ZERO
        for a, e in enumerate(self.euler):
            if e:
                d = diff(f, self.coords[a])
                if d:
                    s = s + e * d
        return s


# ---------------------------------------------------------------------------
# checks


def check_wdvv(M: FrobeniusManifold, first_only: bool = True) -> CheckReport:
    n = M.n
    eta_inv = M.eta_inv
    bad = []
    for a, b, g, d in itertools.product(range(n), repeat=4):
        lhs = ZERO
        rhs = ZERO
        for l in range(n):
            for m in range(n):
                if eta_inv[l][m]:
                    lhs = lhs + M.third(a, b, l) * eta_inv[l][m] * M.third(m, g, d)
                    rhs = rhs + M.third(d, b, l) * eta_inv[l][m] * M.third(m, g, a)
        res = lhs - rhs
        if res:
            bad.append(((a + 1, b + 1, g + 1, d + 1), res))
            if first_only:
                break
    if bad:
        w, r = bad[0]
        return CheckReport(False, "wdvv", w, r, {"violations": len(bad)})
    return CheckReport(True, "wdvv")


def _quadratic_split(q: Expr, coords: list[Expr]):
    """Return (A, B, C) if q is a polynomial of degree <= 2 in coords, else None."""
    if not q.is_polynomial():
        return None
    n = len(coords)
    atoms = [jet_atom("v", i + 1) for i in range(n)]
    aset = set(atoms)
    A = [[ZERO] * n for _ in range(n)]
    B = [ZERO] * n
    C = ZERO
    for m, c in q.num.items():
        if any(a not in aset for a, _ in m):
            return None
        deg = sum(e for _, e in m)
        cq = Expr.coerce(c)
        if deg == 0:
            C = cq
        elif deg == 1:
            B[atoms.index(m[0][0])] = cq
        elif deg == 2:
            if len(m) == 1:
                i = atoms.index(m[0][0])
                A[i][i] = cq * 2
            else:
                i, j = atoms.index(m[0][0]), atoms.index(m[1][0])
                A[i][j] = cq
                A[j][i] = cq
        else:
            return None
    return A, B, C


def check_euler(M: FrobeniusManifold) -> CheckReport:
    """E(F) - (3-d)F must be at most quadratic; also checks the form of E."""
    n = M.n
    for a, e in enumerate(M.euler):
        for b in range(n):
            want = (1 - M.d / 2 - M.mu[a]) if a == b else mpq(0)
            got = diff(e, M.coords[b])
            if got != Expr.coerce(want):
                return CheckReport(False, "euler-field", (a + 1, b + 1), got - Expr.coerce(want))
    q = M.apply_euler(M.F) - Expr.coerce(3 - M.d) * M.F
    split = _quadratic_split(q, M.coords)
    if split is None:
        return CheckReport(False, "euler", ("E(F)-(3-d)F",), q)
    A, B, C = split
    return CheckReport(True, "euler", data={"A": A, "B": B, "C": C})


def check_unit(M: FrobeniusManifold) -> CheckReport:
    for g in range(M.n):
        for b in range(M.n):
            want = ONE if g == b else ZERO
            if M.c(g, 0, b) != want:
                return CheckReport(False, "unit", (g + 1, b + 1), M.c(g, 0, b) - want)
    return CheckReport(True, "unit")


# ---------------------------------------------------------------------------
# theta recursion


def gradient_potential(grad: Sequence[Expr], coords: Sequence[Expr]) -> Expr:
    """phi with d(phi)/d(coords[k]) = grad[k], zero constant; raises if not closed."""
    phi = ZERO
    for k, x in enumerate(coords):
        rem = grad[k] - diff(phi, x)
        for prev in coords[:k]:
            if rem.depends_on(jetcalc_atom(prev)):
                raise IntegrabilityFailure(f"1-form is not closed (component {k + 1})")
        try:
            phi = phi + integrate(rem, x)
        except IntegrationError as exc:
            raise IntegrabilityFailure(f"cannot integrate component {k + 1}: {exc}") from None
    return phi


def jetcalc_atom(x: Expr):
    (m, _), = x.num.items()
    return m[0][0]


def _drop_const(e: Expr) -> Expr:
    if e.den is None and () in e.num:
        return e - Expr({(): e.num[()]}, None)
    return e


@dataclass
class ThetaTable:
    n: int
    pmax: int
    theta: dict  # (alpha, p) -> Expr, 1-based alpha
    nonunique: list = field(default_factory=list)

    def __getitem__(self, key) -> Expr:
        return self.theta[key]


def _r_terms(M: FrobeniusManifold, table: dict, alpha: int, beta: int, p: int) -> Expr:
    """sum_{k=1}^{p} (R_k)^g_alpha d_beta theta_{g,p-k} (0-based alpha, beta)."""
    s = ZERO
    for g in range(M.n):
        r = M.R[g][alpha]
        if not r:
            continue
        k = M.mu[g] - M.mu[alpha]
        if k.denominator != 1 or k < 1 or k > p:
            continue
        s = s + Expr.coerce(r) * diff(table[(g + 1, p - int(k))], M.coords[beta])
    return s


def check_r_grading(M: FrobeniusManifold) -> CheckReport:
    for g in range(M.n):
        for a in range(M.n):
            if M.R[g][a]:
                k = M.mu[g] - M.mu[a]
                if k.denominator != 1 or k < 1:
                    return CheckReport(False, "R-grading", (g + 1, a + 1), Expr.coerce(M.R[g][a]))
    return CheckReport(True, "R-grading")


def theta(M: FrobeniusManifold, pmax: int) -> ThetaTable:
    n = M.n
    X = M.coords
    table: dict = {}
    flags = []
    for a in range(n):
        t0 = ZERO
        for b in range(n):
            t0 = t0 + M.eta[a][b] * X[b]
        table[(a + 1, 0)] = t0
    for p in range(pmax):
        for a in range(n):
            prev = table[(a + 1, p)]
            dprev = [diff(prev, X[l]) for l in range(n)]
            grad = []
            for b in range(n):
                row = []
                for g in range(n):
                    h = ZERO
                    for l in range(n):
                        cl = M.c(l, b, g)
                        if cl and dprev[l]:
                            h = h + cl * dprev[l]
                    row.append(h)
                grad.append(_drop_const(gradient_potential(row, X)))
            s = Expr.coerce(p + 1 + M.mu[a])
            fixed = []
            for b in range(n):
                sb = s + Expr.coerce(M.mu[b])
                # R-terms only reach levels <= p, already in the table
                rhs = M.apply_euler(grad[b]) - sb * grad[b] - _r_terms(M, table, a, b, p + 1)
                if not rhs.is_constant() and rhs:
                    raise IntegrabilityFailure(
                        f"theta_{a + 1},{p + 1}: quasi-homogeneity leaves non-constant residual {rhs}"
                    )
                if sb.as_scalar() == 0:
                    if rhs:
                        raise IntegrabilityFailure(
                            f"theta_{a + 1},{p + 1}: resonant direction {b + 1} inconsistent"
                        )
                    flags.append((a + 1, p + 1, b + 1))
                    fixed.append(grad[b])
                else:
                    fixed.append(grad[b] + rhs / sb)
            table[(a + 1, p + 1)] = _drop_const(gradient_potential(fixed, X))
    return ThetaTable(n, pmax, table, flags)


def check_theta(M: FrobeniusManifold, T: ThetaTable) -> CheckReport:
    """Recursion and quasi-homogeneity residuals for every entry."""
    n = M.n
    X = M.coords
    for a in range(n):
        t0 = ZERO
        for b in range(n):
            t0 = t0 + M.eta[a][b] * X[b]
        if T.theta[(a + 1, 0)] != t0:
            return CheckReport(False, "theta-initial", (a + 1, 0), T.theta[(a + 1, 0)] - t0)
    for p in range(T.pmax + 1):
        for a in range(n):
            th = T.theta[(a + 1, p)]
            for b in range(n):
                db = diff(th, X[b])
                res = M.apply_euler(db) - Expr.coerce(p + M.mu[a] + M.mu[b]) * db - _r_terms(M, T.theta, a, b, p)
                if res:
                    return CheckReport(False, "theta-homogeneity", (a + 1, p, b + 1), res)
                if p == 0:
                    continue
                prev = T.theta[(a + 1, p - 1)]
                for g in range(n):
                    lhs = diff(db, X[g])
                    rhs = ZERO
                    for l in range(n):
                        rhs = rhs + M.c(l, b, g) * diff(prev, X[l])
                    if lhs != rhs:
                        return CheckReport(False, "theta-recursion", (a + 1, p, b + 1, g + 1), lhs - rhs)
    return CheckReport(True, "theta")


# ---------------------------------------------------------------------------
# canonical coordinates


@dataclass(frozen=True)
class Radical:
    """coeff * sqrt(radicand); radicand == 1 when the root is rational."""

    coeff: Expr
    radicand: Expr

    @staticmethod
    def make(coeff: Expr, radicand: Expr) -> "Radical":
        if not coeff:
            return Radical(ZERO, ONE)
        r = sqrt_exact(radicand)
        if r is not None:
            return Radical(coeff * r, ONE)
        return Radical(coeff, radicand)

    def is_zero(self) -> bool:
        return self.coeff.is_zero()

    def __str__(self) -> str:
        if self.radicand == ONE:
            return str(self.coeff)
        return f"({self.coeff})*sqrt({self.radicand})"


class CanonicalChart:
    """Canonical coordinates of a semisimple manifold.

    ``u_of_v`` is always available; ``v_of_u`` only when supplied or derivable.
    Jacobians and metric data are held in the v-chart; ``to_u`` rewrites a
    v-chart expression in canonical coordinates when the inverse map is known.
    """

    def __init__(self, M: FrobeniusManifold, u_of_v: Sequence[Expr], v_of_u: Sequence[Expr] | None = None):
        self.M = M
        self.n = M.n
        self.u_of_v = [Expr.coerce(x) for x in u_of_v]
        self.v_of_u = [Expr.coerce(x) for x in v_of_u] if v_of_u is not None else None
        n = self.n
        X = M.coords
        self.du_dv = [[diff(self.u_of_v[i], X[a]) for a in range(n)] for i in range(n)]
        try:
            inv = mat_inverse(self.du_dv)
        except ZeroDivisionError:
            raise NotSemisimple("canonical coordinates are functionally dependent") from None
        # dv_du[a][i] = d v^a / d u^i
        self.dv_du = inv
        self.f_v = []
        for i in range(n):
            s = ZERO
            for a in range(n):
                for b in range(n):
                    if M.eta[a][b]:
                        s = s + M.eta[a][b] * inv[a][i] * inv[b][i]
            if not s:
                raise NotSemisimple(f"f_{i + 1} vanishes")
            self.f_v.append(s)
        self.J_v = mat_det(inv)

    # -- chart maps --------------------------------------------------------
    def d_u(self, f: Expr, i: int) -> Expr:
        """d f / d u^i for a function of the flat coordinates (0-based i)."""
        s = ZERO
        for a in range(self.n):
            if self.dv_du[a][i]:
                d = diff(f, self.M.coords[a])
                if d:
                    s = s + self.dv_du[a][i] * d
        return s

    def to_u(self, f: Expr) -> Expr:
        if self.v_of_u is None:
            raise NoClosedForm("inverse canonical map not available")
        return subs(f, {jet_atom("v", a + 1): self.v_of_u[a] for a in range(self.n)})

    # -- Lame and rotation data --------------------------------------------
    def f(self, i: int, chart: str = "u") -> Expr:
        return self.to_u(self.f_v[i]) if chart == "u" else self.f_v[i]

    def J(self, chart: str = "u") -> Expr:
        return self.to_u(self.J_v) if chart == "u" else self.J_v

    def df(self, i: int, j: int) -> Expr:
        """d_i f_j in the v-chart."""
        return self.d_u(self.f_v[j], i)

    def gamma_weighted(self, i: int, j: int, chart: str = "u") -> Expr:
        """(psi_j / psi_i) * gamma_ij = d_i f_j / (2 f_i)."""
        e = self.df(i, j) / (2 * self.f_v[i])
        return self.to_u(e) if chart == "u" else e

    def gamma(self, i: int, j: int) -> Radical:
        """gamma_ij = d_i f_j / (2 sqrt(f_i f_j)), v-chart."""
        return Radical.make(self.df(i, j) / 2, (self.f_v[i] * self.f_v[j]).reciprocal())

    def lame(self, i: int) -> Radical:
        return Radical.make(ONE, self.f_v[i])

    # -- residual checks -----------------------------------------------------
    def check(self) -> CheckReport:
        M, n = self.M, self.n
        X = [[self.dv_du[a][i] for a in range(n)] for i in range(n)]
        for i in range(n):
            for j in range(n):
                for g in range(n):
                    s = ZERO
                    for a in range(n):
                        for b in range(n):
                            if X[i][a] and X[j][b]:
                                s = s + M.c(g, a, b) * X[i][a] * X[j][b]
                    if i == j:
                        s = s - X[i][g]
                    if s:
                        return CheckReport(False, "idempotency", (i + 1, j + 1, g + 1), s)
                if i != j:
                    s = ZERO
                    for a in range(n):
                        for b in range(n):
                            if M.eta[a][b]:
                                s = s + M.eta[a][b] * X[i][a] * X[j][b]
                    if s:
                        return CheckReport(False, "diagonality", (i + 1, j + 1), s)
        if self.v_of_u is not None:
            for i in range(n):
                back = subs(self.u_of_v[i], {jet_atom("v", a + 1): self.v_of_u[a] for a in range(n)})
                if back != jet("u", i + 1):
                    return CheckReport(False, "inverse-map", (i + 1,), back - jet("u", i + 1))
        return CheckReport(True, "canonical-chart")


def multiplication_operator(M: FrobeniusManifold) -> list[list[Expr]]:
    """U^g_b = E^a c^g_{ab}."""
    n = M.n
    return [
        [sum((M.euler[a] * M.c(g, a, b) for a in range(n) if M.euler[a]), ZERO) for b in range(n)]
        for g in range(n)
    ]


def _invert_affine_1d(u: Expr) -> Expr | None:
    v = jet_atom("v", 1)
    slope = diff(u, v)
    if not slope.is_constant() or not slope:
        return None
    offset = u - slope * jet("v", 1)
    return (jet("u", 1) - offset) / slope


def canonical_chart(
    M: FrobeniusManifold,
    u_of_v: Sequence | None = None,
    v_of_u: Sequence | None = None,
) -> CanonicalChart:
    """Eigenvalues of E-multiplication.  Closed forms for n <= 2; otherwise supply u_of_v."""
    n = M.n
    U = multiplication_operator(M)
    if u_of_v is None:
        if n == 1:
            u_of_v = [U[0][0]]
        elif n == 2:
            tr = U[0][0] + U[1][1]
            det = U[0][0] * U[1][1] - U[0][1] * U[1][0]
            disc = tr * tr - 4 * det
            if not disc:
                raise NotSemisimple("repeated eigenvalue of the multiplication operator")
            root = sqrt_exact(disc)
            if root is None:
                raise NoClosedForm(f"discriminant {disc} has no rational square root")
            u_of_v = [(tr + root) / 2, (tr - root) / 2]
        else:
            raise NoClosedForm("closed-form canonical coordinates need n <= 2 or supplied data")
    u_of_v = [Expr.coerce(x) for x in u_of_v]
    # each supplied root must annihilate the characteristic polynomial
    for i, ui in enumerate(u_of_v):
        shifted = [[U[g][b] - (ui if g == b else ZERO) for b in range(n)] for g in range(n)]
        if mat_det(shifted):
            raise NotSemisimple(f"u{i + 1} is not an eigenvalue of E-multiplication")
    if len(set(u_of_v)) != n:
        raise NotSemisimple("repeated eigenvalue of the multiplication operator")
    if v_of_u is None and n == 1:
        inv = _invert_affine_1d(u_of_v[0])
        v_of_u = [inv] if inv is not None else None
    chart = CanonicalChart(M, u_of_v, v_of_u)
    rep = chart.check()
    if not rep.ok:
        raise NotSemisimple(rep.describe())
    return chart


def is_irreducible(C: CanonicalChart) -> bool:
    if C.n < 2:
        raise ValueError("irreducibility is defined for n >= 2")
    return _connected(C.n, lambda i, j: bool(C.df(i, j)))


def _connected(n: int, edge) -> bool:
    seen = {0}
    stack = [0]
    while stack:
        i = stack.pop()
        for j in range(n):
            if j not in seen and (edge(i, j) or edge(j, i)):
                seen.add(j)
                stack.append(j)
    return len(seen) == n


def is_irreducible_metric(f: Sequence[Expr], chart: str = "u") -> bool:
    """Irreducibility straight from a diagonal metric given in canonical coordinates."""
    n = len(f)
    if n < 2:
        raise ValueError("irreducibility is defined for n >= 2")
    return _connected(n, lambda i, j: i != j and bool(diff(f[j], jet_atom(chart, i + 1))))


# ---------------------------------------------------------------------------
# change of chart on jets


def _prolong(images: list[Expr], family: str, order: int) -> dict:
    out = {}
    for i, img in enumerate(images):
        cur = img
        for s in range(order + 1):
            out[jet_atom(family, i + 1, s)] = cur
            if s < order:
                cur = jetcalc.dx(cur)
    return out


def change_chart(f: Expr, C: CanonicalChart, direction: str = "v_to_u") -> Expr:
    if direction == "v_to_u":
        if C.v_of_u is None:
            raise NoClosedForm("inverse canonical map not available")
        src, images = "v", C.v_of_u
    elif direction == "u_to_v":
        src, images = "u", C.u_of_v
    else:
        raise ValueError(f"unknown direction {direction!r}")
    order = max(jetcalc.max_order(f, src), 0)
    return subs(f, _prolong(images, src, order))


# ---------------------------------------------------------------------------
# built-in catalog


def kdv() -> FrobeniusManifold:
    return FrobeniusManifold(1, parse("v1^3/6"), [parse("v1")], 0, [0], name="kdv")


def a2() -> FrobeniusManifold:
    return FrobeniusManifold(
        2,
        parse("v1^2*v2/2 + v2^4/72"),
        [parse("v1"), parse("2/3*v2")],
        mpq(1, 3),
        [mpq(-1, 6), mpq(1, 6)],
        name="a2",
    )


def p1() -> FrobeniusManifold:
    return FrobeniusManifold(
        2,
        parse("v1^2*v2/2 + exp(v2)"),
        [parse("v1"), parse("2")],
        1,
        [mpq(-1, 2), mpq(1, 2)],
        [[0, 0], [2, 0]],
        name="p1",
    )


def p1_chart(M: FrobeniusManifold | None = None) -> CanonicalChart:
    M = M or p1()
    return canonical_chart(
        M,
        v_of_u=[parse("(u1+u2)/2"), parse("2*log((u1-u2)/4)")],
    )


CATALOG = {"kdv": kdv, "a2": a2, "p1": p1}

"""Local Poisson bivectors, pencils, Miura conjugation and central invariants.

An operator is stored as ``P = sum_g eps^(2g) sum_j A_{g,j} d_x^j`` with
matrix coefficients; the bracket it encodes is
``{w^a(x), w^b(y)} = sum eps^(2g) A^{ab}_{g,j}(x) delta^(j)(x-y)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb, factorial
from typing import Sequence

from gmpy2 import mpq

from .frobman import CheckReport, FrobeniusManifold, CanonicalChart, mat_inverse
from .jetcalc import dx, dx_n, max_order, var_deriv
from .symcore import ONE, ZERO, Atom, Expr, coefficients, derive, diff, jet, jet_atom, subs, symbol_atom


class NotInvertibleLeadingTerm(ValueError):
    pass


EPS = symbol_atom("eps")

# opmat: dict (a, b) -> {j: Expr}, 0-based indices; a series is a list of opmats by genus


def _add_into(target: dict, a: int, b: int, j: int, val: Expr) -> None:
    if not val:
        return
    slot = target.setdefault((a, b), {})
    cur = slot.get(j)
    new = val if cur is None else cur + val
    if new:
        slot[j] = new
    else:
        slot.pop(j, None)
        if not slot:
            del target[(a, b)]


@dataclass
class PoissonOp:
    n: int
    terms: list  # terms[g] is an opmat
    family: str = "v"

    @property
    def gmax(self) -> int:
        return len(self.terms) - 1

    def coeff(self, g: int, a: int, b: int, j: int) -> Expr:
        if g >= len(self.terms):
            return ZERO
        return self.terms[g].get((a, b), {}).get(j, ZERO)

    def records(self) -> list[tuple]:
        """(g, k, alpha, beta, expr) with k = 2g + 1 - j, sorted."""
        out = []
        for g, mat in enumerate(self.terms):
            for (a, b), slot in mat.items():
                for j, e in slot.items():
                    out.append((g, 2 * g + 1 - j, a + 1, b + 1, e))
        out.sort(key=lambda r: (r[0], r[1], r[2], r[3]))
        return out

    @staticmethod
    def from_records(n: int, records, family: str = "v") -> "PoissonOp":
        terms: list = []
        for g, k, a, b, e in records:
            while len(terms) <= g:
                terms.append({})
            _add_into(terms[g], a - 1, b - 1, 2 * g + 1 - k, Expr.coerce(e))
        return PoissonOp(n, terms or [{}], family)

    def plus(self, other: "PoissonOp", scale=1) -> "PoissonOp":
        terms = [dict((k, dict(v)) for k, v in m.items()) for m in self.terms]
        s = Expr.coerce(scale)
        for g, mat in enumerate(other.terms):
            while len(terms) <= g:
                terms.append({})
            for (a, b), slot in mat.items():
                for j, e in slot.items():
                    _add_into(terms[g], a, b, j, s * e)
        return PoissonOp(self.n, terms, self.family)

    def truncate(self, gmax: int) -> "PoissonOp":
        return PoissonOp(self.n, self.terms[: gmax + 1], self.family)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PoissonOp):
            return NotImplemented
        return self.n == other.n and [r for r in self.records()] == [r for r in other.records()]


@dataclass
class PoissonPencil:
    first: PoissonOp
    second: PoissonOp


# ---------------------------------------------------------------------------
# construction


def genus0_pencil(M: FrobeniusManifold) -> PoissonPencil:
    n = M.n
    p1: dict = {}
    p2: dict = {}
    for a in range(n):
        for b in range(n):
            _add_into(p1, a, b, 1, M.eta_inv[a][b])
            g = ZERO
            for e in range(n):
                if M.euler[e]:
                    g = g + M.euler[e] * M.c_up(a, b, e)
            _add_into(p2, a, b, 1, g)
            gam = ZERO
            for c in range(n):
                cc = M.c_up(a, b, c)
                if cc:
                    gam = gam + Expr.coerce(mpq(1, 2) - M.mu[b]) * cc * jet("v", c + 1, 1)
            _add_into(p2, a, b, 0, gam)
    return PoissonPencil(PoissonOp(n, [p1]), PoissonOp(n, [p2]))


def deform(P: PoissonOp, records) -> PoissonOp:
    """Add dispersive records (g, k, alpha, beta, expr) to an operator."""
    return P.plus(PoissonOp.from_records(P.n, records, P.family))


# ---------------------------------------------------------------------------
# action


def _apply_mat(mat: dict, cov: Sequence[Expr], n: int) -> list[Expr]:
    out = [ZERO] * n
    cache: dict = {}
    for (a, b), slot in mat.items():
        for j, e in slot.items():
            key = (b, j)
            d = cache.get(key)
            if d is None:
                d = cache[key] = dx_n(cov[b], j)
            if d:
                out[a] = out[a] + e * d
    return out


def apply_op(P: PoissonOp, covector: Sequence, gmax: int | None = None) -> list[Expr]:
    """sum_g eps^(2g) P_g(covector); the eps powers are kept explicitly."""
    cov = [Expr.coerce(x) for x in covector]
    if len(cov) != P.n:
        raise ValueError("covector dimension mismatch")
    out = [ZERO] * P.n
    top = P.gmax if gmax is None else min(gmax, P.gmax)
    for g in range(top + 1):
        part = _apply_mat(P.terms[g], cov, P.n)
        w = Expr.from_atom(EPS, 2 * g) if g else ONE
        for a in range(P.n):
            if part[a]:
                out[a] = out[a] + w * part[a]
    return out


# ---------------------------------------------------------------------------
# Jacobi identity via test covectors


def _test_cov(family: str, n: int) -> list[Expr]:
    return [jet(family, i + 1, 0) for i in range(n)]


def _dot(x: Sequence[Expr], y: Sequence[Expr]) -> Expr:
    s = ZERO
    for p, q in zip(x, y):
        if p and q:
            s = s + p * q
    return s


def _euler_vec(f: Expr, n: int, family: str) -> list[Expr]:
    return [var_deriv(f, i + 1, family) for i in range(n)]


def _jacobi_form(Pm: dict, Qm: dict, n: int, family: str) -> Expr:
    """sum over cyclic (a,b,c) of E_w(a . P b) . Q c, reduced by the c-variational derivative."""
    A, B, C = _test_cov("a", n), _test_cov("b", n), _test_cov("c", n)
    PA, PB, PC = (_apply_mat(Pm, X, n) for X in (A, B, C))
    QA, QB, QC = (_apply_mat(Qm, X, n) for X in (A, B, C))
    J = (
        _dot(_euler_vec(_dot(A, PB), n, family), QC)
        + _dot(_euler_vec(_dot(B, PC), n, family), QA)
        + _dot(_euler_vec(_dot(C, PA), n, family), QB)
    )
    return J


def _residual(J: Expr, n: int) -> list[Expr]:
    return [var_deriv(J, i + 1, "c") for i in range(n)]


def _graded_pairs(P: PoissonOp, Q: PoissonOp, order: int):
    for g1 in range(len(P.terms)):
        for g2 in range(len(Q.terms)):
            if g1 + g2 == order:
                yield g1, g2


def _first_bad(res: list[Expr]):
    for i, r in enumerate(res):
        if r:
            return i, r
    return None


def _schouten(P: PoissonOp, Q: PoissonOp, eps_order: int | None, name: str, symmetric: bool) -> CheckReport:
    n = P.n
    top = (P.gmax + Q.gmax) if eps_order is None else eps_order
    for order in range(top + 1):
        J = ZERO
        for g1, g2 in _graded_pairs(P, Q, order):
            J = J + _jacobi_form(P.terms[g1], Q.terms[g2], n, P.family)
            if symmetric:
                J = J + _jacobi_form(Q.terms[g2], P.terms[g1], n, P.family)
        bad = _first_bad(_residual(J, n))
        if bad:
            return CheckReport(False, name, (f"eps^{2 * order}", f"c{bad[0] + 1}"), bad[1])
    return CheckReport(True, name, data={"certified_through": 2 * top})


def jacobi_check(P: PoissonOp, eps_order: int | None = None) -> CheckReport:
    """Schouten [P,P] through eps^(2*eps_order); exact for finite operators by default."""
    return _schouten(P, P, eps_order, "jacobi", symmetric=False)


def compatibility_check(pencil: PoissonPencil, eps_order: int | None = None) -> CheckReport:
    return _schouten(pencil.first, pencil.second, eps_order, "compatibility", symmetric=True)


def antisymmetry_check(P: PoissonOp) -> CheckReport:
    n = P.n
    A, B = _test_cov("a", n), _test_cov("b", n)
    for g, mat in enumerate(P.terms):
        s = _dot(A, _apply_mat(mat, B, n)) + _dot(B, _apply_mat(mat, A, n))
        res = [var_deriv(s, i + 1, "a") for i in range(n)]
        bad = _first_bad(res)
        if bad:
            return CheckReport(False, "antisymmetry", (g, f"a{bad[0] + 1}"), bad[1])
    return CheckReport(True, "antisymmetry")


# ---------------------------------------------------------------------------
# operator algebra on eps-series


def _compose(A: dict, B: dict, n: int) -> dict:
    """(A o B) for matrix differential operators."""
    out: dict = {}
    for (a, c), sa in A.items():
        for (c2, b), sb in B.items():
            if c != c2:
                continue
            for i, x in sa.items():
                for j, y in sb.items():
                    d = y
                    for k in range(i + 1):
                        if k:
                            d = dx(d)
                        if d:
                            _add_into(out, a, b, i - k + j, Expr.coerce(comb(i, k)) * x * d)
    return out


def _adjoint(A: dict) -> dict:
    """Formal adjoint: transpose and sum (-d)^j o a_j."""
    out: dict = {}
    for (a, b), slot in A.items():
        for j, x in slot.items():
            # (-d)^j o x = (-1)^j sum_k C(j,k) (d^(j-k) x) d^k
            for k in range(j, -1, -1):
                coeff = dx_n(x, j - k)
                if coeff:
                    sign = -1 if j % 2 else 1
                    _add_into(out, b, a, k, Expr.coerce(sign * comb(j, k)) * coeff)
    return out


def _series_mul(X: list, Y: list, n: int, gmax: int) -> list:
    out = [{} for _ in range(gmax + 1)]
    for g1, A in enumerate(X):
        for g2, B in enumerate(Y):
            if g1 + g2 > gmax or not A or not B:
                continue
            for (a, b), slot in _compose(A, B, n).items():
                for j, e in slot.items():
                    _add_into(out[g1 + g2], a, b, j, e)
    return out


def _eps_split(e: Expr) -> dict[int, Expr]:
    """Coefficients of eps^(2g)."""
    out = {}
    for ex, c in coefficients(e, [EPS]).items():
        k = ex[0]
        if k < 0 or k % 2:
            raise ValueError("map must be a series in eps^2")
        out[k // 2] = c
    return out


def _frechet(map_: Sequence[Expr], n: int, gmax: int, family: str) -> list:
    """Linearization of w = w(v-jets; eps) as an eps-series of operator matrices."""
    L = [{} for _ in range(gmax + 1)]
    for a, w in enumerate(map_):
        for g, part in _eps_split(w).items():
            if g > gmax:
                continue
            for b in range(n):
                for s in range(max_order(part, family, b + 1) + 1):
                    d = diff(part, jet_atom(family, b + 1, s))
                    if d:
                        _add_into(L[g], a, b, s, d)
    return L


@dataclass
class MiuraMap:
    """w^a = images[a], a series in eps^2 over jets of the source chart."""

    images: list
    family: str = "v"

    @property
    def n(self) -> int:
        return len(self.images)


def _linear_part(map_: MiuraMap):
    n = map_.n
    A = [[ZERO] * n for _ in range(n)]
    b = []
    for a, w in enumerate(map_.images):
        w0 = _eps_split(w).get(0, ZERO)
        const = w0
        for c in range(n):
            d = diff(w0, jet_atom(map_.family, c + 1))
            if not d.is_constant() and d:
                raise NotInvertibleLeadingTerm(f"leading term of w{a + 1} is not affine")
            A[a][c] = d
            const = const - d * jet(map_.family, c + 1)
        if not const.is_constant() and const:
            raise NotInvertibleLeadingTerm(f"leading term of w{a + 1} is not affine")
        b.append(const)
    try:
        Ainv = mat_inverse(A)
    except ZeroDivisionError:
        raise NotInvertibleLeadingTerm("leading term is singular") from None
    return A, Ainv, b


def _truncate(e: Expr, gmax: int) -> Expr:
    if not e.depends_on(EPS):
        return e
    out = ZERO
    for g, c in _eps_split(e).items():
        if g <= gmax:
            out = out + (c * Expr.from_atom(EPS, 2 * g) if g else c)
    return out


def _taylor(f: Expr, h: Sequence[Expr], family: str, gmax: int) -> Expr:
    """f evaluated at jets shifted by h (each h of eps-order >= 2), truncated."""
    if all(not x for x in h):
        return f
    n = len(h)

    def rule(a: Atom):
        if a.kind == family:
            return jet("a", a.index, a.order)
        return None

    out = f
    term = f
    cache: dict = {}

    def image(i: int, s: int) -> Expr:
        key = (i, s)
        r = cache.get(key)
        if r is None:
            r = h[i - 1] if s == 0 else _truncate(dx(image(i, s - 1)), gmax)
            cache[key] = r
        return r

    for k in range(1, gmax + 1):
        term = derive(term, rule)
        if not term:
            break
        placeholders = {}
        for atom in term.free_atoms():
            if atom.kind == "a":
                placeholders[atom] = image(atom.index, atom.order)
        val = subs(term, placeholders) / Expr.coerce(factorial(k))
        out = out + _truncate(val, gmax)
    return _truncate(out, gmax)


def invert_map(map_: MiuraMap, gmax: int) -> list[Expr]:
    """v = v(w) through eps^(2 gmax), written with the same jet family."""
    n, fam = map_.n, map_.family
    A, Ainv, b = _linear_part(map_)
    base = []
    for c in range(n):
        s = ZERO
        for a in range(n):
            if Ainv[c][a]:
                s = s + Ainv[c][a] * (jet(fam, a + 1) - b[a])
        base.append(s)
    # nonlinear tail N(v) = w(v) - A v - b
    tail = []
    for a, w in enumerate(map_.images):
        t = w
        for c in range(n):
            if A[a][c]:
                t = t - A[a][c] * jet(fam, c + 1)
        tail.append(_truncate(t - b[a], gmax))
    # v = base(w) - Ainv N(v); iterate
    v = list(base)
    for _ in range(gmax):
        shift = [v[c] - jet(fam, c + 1) for c in range(n)]
        Nv = [_taylor(_linear_sub(t, base, fam), _shift_after_linear(shift, A, fam), fam, gmax) for t in tail]
        v = []
        for c in range(n):
            s = base[c]
            for a in range(n):
                if Ainv[c][a] and Nv[a]:
                    s = s - Ainv[c][a] * Nv[a]
            v.append(_truncate(s, gmax))
    return v


def _linear_sub(f: Expr, base: Sequence[Expr], fam: str) -> Expr:
    """f(v) with v replaced by the affine inverse (jets prolonged)."""
    if all(b == jet(fam, i + 1) for i, b in enumerate(base)):
        return f
    mapping = {}
    for i, img in enumerate(base):
        top = max(max_order(f, fam, i + 1), 0)
        cur = img
        for s in range(top + 1):
            mapping[jet_atom(fam, i + 1, s)] = cur
            cur = dx(cur)
    return subs(f, mapping)


def _shift_after_linear(shift: Sequence[Expr], A, fam: str) -> list[Expr]:
    """Displacement in the affine image coordinates: A * shift."""
    n = len(shift)
    out = []
    for a in range(n):
        s = ZERO
        for c in range(n):
            if A[a][c] and shift[c]:
                s = s + A[a][c] * shift[c]
        out.append(s)
    return out


def miura_conjugate(P: PoissonOp, map_: MiuraMap, gmax: int) -> PoissonOp:
    """The operator L P L^dagger written in the new coordinates, through eps^(2 gmax)."""
    n, fam = P.n, map_.family
    A, Ainv, b = _linear_part(map_)
    L = _frechet(map_.images, n, gmax, fam)
    Lt = [_adjoint(x) for x in L]
    Pser = [P.terms[g] if g < len(P.terms) else {} for g in range(gmax + 1)]
    conj = _series_mul(_series_mul(L, Pser, n, gmax), Lt, n, gmax)
    vw = invert_map(map_, gmax)
    base = []
    for c in range(n):
        s = ZERO
        for a in range(n):
            if Ainv[c][a]:
                s = s + Ainv[c][a] * (jet(fam, a + 1) - b[a])
        base.append(s)
    # v(w) = base(w + A*shift), so coefficients are Taylor-expanded in that direction
    shift_lin = _shift_after_linear([vw[c] - base[c] for c in range(n)], A, fam)
    terms = [{} for _ in range(gmax + 1)]
    for g, mat in enumerate(conj):
        for (a, bb), slot in mat.items():
            for j, e in slot.items():
                val = _taylor_general(e, base, shift_lin, fam, gmax - g)
                for g2, c in _eps_split(val).items():
                    if g + g2 <= gmax:
                        _add_into(terms[g + g2], a, bb, j, c)
    return PoissonOp(n, terms, fam)


def _taylor_general(f: Expr, base: Sequence[Expr], shift: Sequence[Expr], fam: str, gmax: int) -> Expr:
    """f(v) at v = base(w) + shift(w)."""
    g = _linear_sub(f, base, fam)
    return _taylor(g, shift, fam, gmax)


# ---------------------------------------------------------------------------
# central invariants


@dataclass
class CentralInvariants:
    values: list

    def __iter__(self):
        return iter(self.values)


def central_invariants(pencil: PoissonPencil, chart: CanonicalChart) -> CentralInvariants:
    """c_i = (Q2^{ii} - u^i Q1^{ii}) / (3 (g1^{ii})^2) in canonical coordinates.

    Q1, Q2 are the eps^2 d_x^3 coefficients of the two operators and g1 the
    leading symbol of the first; all transformed with du/dv.
    """
    n = chart.n
    J = chart.du_dv

    def transformed(op: PoissonOp, g: int, j: int, i: int) -> Expr:
        s = ZERO
        for a in range(n):
            for b in range(n):
                x = op.coeff(g, a, b, j)
                if x and J[i][a] and J[i][b]:
                    s = s + J[i][a] * J[i][b] * x
        return s

    out = []
    for i in range(n):
        f = transformed(pencil.first, 0, 1, i)
        q1 = transformed(pencil.first, 1, 3, i)
        q2 = transformed(pencil.second, 1, 3, i)
        c = (q2 - chart.u_of_v[i] * q1) / (3 * f * f)
        try:
            c = chart.to_u(c)
        except ValueError:
            pass
        out.append(c)
    return CentralInvariants(out)


def kdv_deformed_pencil(q=None) -> PoissonPencil:
    """delta' and v delta' + 1/2 v_x delta + eps^2 q delta''' (q defaults to 1/8)."""
    from .frobman import kdv

    q = mpq(1, 8) if q is None else q
    P = genus0_pencil(kdv())
    return PoissonPencil(P.first, deform(P.second, [(1, 0, 1, 1, Expr.coerce(q))]))

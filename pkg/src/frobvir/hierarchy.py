"""Principal Hierarchy flows and the genus-zero two-point functions."""

from __future__ import annotations

from dataclasses import dataclass, field

from .frobman import (
    CheckReport,
    FrobeniusManifold,
    IntegrabilityFailure,
    ThetaTable,
    gradient_potential,
)
from .jetcalc import dx
from .symcore import ZERO, Atom, Expr, derive, diff, jet


@dataclass
class FlowTable:
    n: int
    pmax: int
    flows: dict  # (alpha, p) -> list of n Exprs (d v^lambda / d t^{alpha,p})
    _jets: dict = field(default_factory=dict, repr=False)

    def __getitem__(self, key) -> list[Expr]:
        return self.flows[key]

    def jet_image(self, key, lam: int, s: int) -> Expr:
        """dx^s of the lambda-component of a flow (cached)."""
        k = (key, lam, s)
        r = self._jets.get(k)
        if r is None:
            r = self.flows[key][lam - 1] if s == 0 else dx(self.jet_image(key, lam, s - 1))
            self._jets[k] = r
        return r


def flows(M: FrobeniusManifold, T: ThetaTable, pmax: int | None = None) -> FlowTable:
    if pmax is None:
        pmax = T.pmax - 1
    if pmax + 1 > T.pmax:
        raise ValueError(f"theta table reaches level {T.pmax}, flows up to {pmax} need {pmax + 1}")
    n = M.n
    out = {}
    for a in range(1, n + 1):
        for p in range(pmax + 1):
            th = T.theta[(a, p + 1)]
            grads = [dx(diff(th, M.coords[g])) for g in range(n)]
            comps = []
            for lam in range(n):
                s = ZERO
                for g in range(n):
                    if M.eta_inv[lam][g]:
                        s = s + M.eta_inv[lam][g] * grads[g]
                comps.append(s)
            out[(a, p)] = comps
    return FlowTable(n, pmax, out)


def t_derivative(f: Expr, flow: tuple, FT: FlowTable) -> Expr:
    """Derivative of a v-jet expression along the flow labelled ``flow``."""

    def rule(a: Atom):
        if a.kind == "v":
            return FT.jet_image(flow, a.index, a.order)
        return None

    return derive(f, rule)


def _labels(n: int, P: int):
    return [(a, p) for p in range(P + 1) for a in range(1, n + 1)]


def commutativity_check(FT: FlowTable, up_to: int | None = None) -> CheckReport:
    P = FT.pmax if up_to is None else up_to
    labels = _labels(FT.n, P)
    for i, A in enumerate(labels):
        for B in labels[i + 1 :]:
            for lam in range(FT.n):
                r = t_derivative(FT.flows[B][lam], A, FT) - t_derivative(FT.flows[A][lam], B, FT)
                if r:
                    return CheckReport(False, "commutativity", (A, B, lam + 1), r)
    return CheckReport(True, "commutativity")


def tau_symmetry_check(M: FrobeniusManifold, T: ThetaTable, FT: FlowTable, up_to: int | None = None) -> CheckReport:
    P = FT.pmax if up_to is None else up_to
    labels = _labels(M.n, P)
    for i, A in enumerate(labels):
        for B in labels[i:]:
            r = t_derivative(T.theta[A], B, FT) - t_derivative(T.theta[B], A, FT)
            if r:
                return CheckReport(False, "tau-symmetry", (A, B), r)
    return CheckReport(True, "tau-symmetry")


@dataclass
class OmegaTable:
    n: int
    pmax: int
    omega: dict  # ((alpha,p),(beta,q)) -> Expr

    def __getitem__(self, key) -> Expr:
        A, B = key
        return self.omega[(A, B)]


def omega_gradient(M: FrobeniusManifold, T: ThetaTable, A, B) -> list[Expr]:
    """d_mu Omega_{A;B} = d_g theta_A eta^{gl} c^nu_{l mu} d_nu theta_B."""
    n = M.n
    X = M.coords
    dA = [diff(T.theta[A], X[g]) for g in range(n)]
    dB = [diff(T.theta[B], X[v]) for v in range(n)]
    # w^l = d_g theta_A eta^{gl}
    w = []
    for l in range(n):
        s = ZERO
        for g in range(n):
            if M.eta_inv[g][l] and dA[g]:
                s = s + dA[g] * M.eta_inv[g][l]
        w.append(s)
    grad = []
    for m in range(n):
        s = ZERO
        for l in range(n):
            if not w[l]:
                continue
            for v in range(n):
                c = M.c(v, l, m)
                if c and dB[v]:
                    s = s + w[l] * c * dB[v]
        grad.append(s)
    return grad


def _drop_const(e: Expr) -> Expr:
    if e.den is None and () in e.num:
        return e - Expr({(): e.num[()]}, None)
    return e


def omega(M: FrobeniusManifold, T: ThetaTable, pmax: int | None = None) -> OmegaTable:
    if pmax is None:
        pmax = T.pmax - 1
    if pmax + 1 > T.pmax:
        raise ValueError("theta table too short for the requested two-point functions")
    labels = _labels(M.n, pmax)
    out = {}
    for i, A in enumerate(labels):
        for B in labels[i:]:
            grad = omega_gradient(M, T, A, B)
            if B[1] == 0 or A[1] == 0:
                low, high = (B, A) if B[1] == 0 else (A, B)
                val = diff(T.theta[(high[0], high[1] + 1)], M.coords[low[0] - 1])
                for m in range(M.n):
                    if diff(val, M.coords[m]) != grad[m]:
                        raise IntegrabilityFailure(f"Omega{A}{B}: boundary value disagrees with gradient")
            else:
                val = _drop_const(gradient_potential(grad, M.coords))
            out[(A, B)] = val
            out[(B, A)] = val
    return OmegaTable(M.n, pmax, out)


def omega_check(M: FrobeniusManifold, T: ThetaTable, FT: FlowTable, OT: OmegaTable) -> CheckReport:
    """Defining identities of the two-point functions on every stored entry."""
    for (A, B), val in sorted(OT.omega.items()):
        if OT.omega[(B, A)] != val:
            return CheckReport(False, "omega-symmetry", (A, B), val - OT.omega[(B, A)])
        if B == (1, 0) and val != T.theta[A]:
            return CheckReport(False, "omega-unit", (A, B), val - T.theta[A])
        if B[1] == 0 and val != diff(T.theta[(A[0], A[1] + 1)], M.coords[B[0] - 1]):
            return CheckReport(False, "omega-boundary", (A, B), val)
        if B[1] <= FT.pmax:
            r = dx(val) - t_derivative(T.theta[A], B, FT)
            if r:
                return CheckReport(False, "omega-exactness", (A, B), r)
    return CheckReport(True, "omega")


def flows_from_theta_without_metric(M: FrobeniusManifold, T: ThetaTable, pmax: int) -> FlowTable:
    """The flows with the inverse metric omitted; only useful as a corrupted table in tests."""
    out = {}
    for a in range(1, M.n + 1):
        for p in range(pmax + 1):
            th = T.theta[(a, p + 1)]
            out[(a, p)] = [dx(diff(th, M.coords[g])) for g in range(M.n)]
    return FlowTable(M.n, pmax, out)


def base_jet(i: int, s: int = 0) -> Expr:
    return jet("v", i, s)

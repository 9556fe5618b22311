"""Command-line front end.

Every command writes a deterministic report (human-readable or JSON) and exits
with 0 on success, 1 on a mathematical violation and 2 on bad input.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Any

from . import frobman, hierarchy, jetcalc, poisson, virasoro
from .config import ConfigError, ManifoldConfig, load
from .symcore import Expr, ParseError, parse, to_str

EXIT_OK, EXIT_VIOLATION, EXIT_INPUT = 0, 1, 2


class Refused(Exception):
    """Validation failed before the requested computation."""


def _plain(x: Any) -> Any:
    if isinstance(x, Expr):
        return to_str(x)
    if isinstance(x, (tuple, list)):
        return [_plain(y) for y in x]
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if x is None or isinstance(x, (bool, int, str)):
        return x
    return str(x)


def _check(rep: frobman.CheckReport) -> dict:
    out = {"name": rep.name, "ok": rep.ok}
    if not rep.ok:
        out["witness"] = _plain(rep.witness)
        out["residual"] = _plain(rep.residual)
    return out


def _label(A) -> str:
    return f"{A[0]},{A[1]}"


class Report:
    def __init__(self, command: str, config: str | None):
        self.command = command
        self.config = config
        self.checks: list[dict] = []
        self.results: dict = {}
        self.notes: list[str] = []

    def add(self, rep: frobman.CheckReport | dict) -> bool:
        d = rep if isinstance(rep, dict) else _check(rep)
        self.checks.append(d)
        return d["ok"]

    @property
    def ok(self) -> bool:
        return all(c["ok"] for c in self.checks)

    def as_dict(self) -> dict:
        return {
            "command": self.command,
            "config": self.config,
            "ok": self.ok,
            "checks": self.checks,
            "results": self.results,
            "notes": self.notes,
        }

    def render(self, fmt: str) -> str:
        if fmt == "machine":
            return json.dumps(self.as_dict(), indent=2, sort_keys=True) + "\n"
        lines = [f"{self.command}: {self.config or '-'}"]
        for c in self.checks:
            if c["ok"]:
                lines.append(f"  [pass] {c['name']}")
            else:
                lines.append(f"  [FAIL] {c['name']} at {c.get('witness')}: {c.get('residual')}")
        for key, val in self.results.items():
            lines.extend(_render_value(key, val, 1))
        for n in self.notes:
            lines.append(f"  note: {n}")
        lines.append("result: " + ("ok" if self.ok else "violation"))
        return "\n".join(lines) + "\n"


def _render_value(key: str, val: Any, depth: int) -> list[str]:
    pad = "  " * depth
    if isinstance(val, dict):
        out = [f"{pad}{key}:"]
        for k, v in val.items():
            out.extend(_render_value(k, v, depth + 1))
        return out
    if isinstance(val, list) and val and isinstance(val[0], (list, dict)):
        out = [f"{pad}{key}:"]
        for v in val:
            out.append(f"{pad}  {json.dumps(v, sort_keys=True)}")
        return out
    return [f"{pad}{key}: {json.dumps(val) if not isinstance(val, str) else val}"]


# ---------------------------------------------------------------------------
# commands


def _validate(cfg: ManifoldConfig, rep: Report) -> frobman.FrobeniusManifold:
    M = cfg.manifold()
    rep.add(frobman.check_wdvv(M))
    rep.add(frobman.check_euler(M))
    return M


def _require_valid(cfg: ManifoldConfig, command: str) -> frobman.FrobeniusManifold:
    pre = Report(command, cfg.name)
    M = _validate(cfg, pre)
    if not pre.ok:
        bad = next(c for c in pre.checks if not c["ok"])
        raise Refused(f"{bad['name']} fails at {bad.get('witness')}")
    return M


def cmd_validate(cfg: ManifoldConfig, args) -> Report:
    rep = Report("validate", cfg.name)
    M = _validate(cfg, rep)
    if not rep.ok:
        return rep
    try:
        C = cfg.chart(M)
    except frobman.NoClosedForm as exc:
        rep.notes.append(f"canonical chart skipped: {exc}")
        return rep
    except frobman.NotSemisimple as exc:
        rep.add({"name": "canonical-chart", "ok": False, "witness": None, "residual": str(exc)})
        return rep
    rep.add(C.check())
    rep.results["canonical"] = [to_str(u) for u in C.u_of_v]
    if M.n >= 2:
        irr = frobman.is_irreducible(C)
        rep.add({"name": "irreducible", "ok": irr, "witness": None, "residual": None} if not irr else {"name": "irreducible", "ok": True})
    return rep


def cmd_hierarchy(cfg: ManifoldConfig, args) -> Report:
    M = _require_valid(cfg, "hierarchy")
    P = args.pmax if args.pmax is not None else cfg.truncation("pmax", 2)
    rep = Report("hierarchy", cfg.name)
    T = frobman.theta(M, P + 1)
    rep.add(frobman.check_theta(M, T))
    for a, p, b in T.nonunique:
        rep.notes.append(f"theta_{a},{p}: direction {b} is resonant, normalization not unique")
    FT = hierarchy.flows(M, T, P)
    OT = hierarchy.omega(M, T, P)
    rep.add(hierarchy.commutativity_check(FT))
    rep.add(hierarchy.tau_symmetry_check(M, T, FT))
    rep.add(hierarchy.omega_check(M, T, FT, OT))
    rep.results["theta"] = {_label(k): to_str(v) for k, v in sorted(T.theta.items())}
    rep.results["flows"] = {_label(k): [to_str(x) for x in v] for k, v in sorted(FT.flows.items())}
    rep.results["omega"] = {
        f"{_label(A)};{_label(B)}": to_str(v) for (A, B), v in sorted(OT.omega.items()) if (A[1], A[0]) <= (B[1], B[0])
    }
    return rep


def cmd_pencil(cfg: ManifoldConfig, args) -> Report:
    M = _require_valid(cfg, "pencil")
    g = args.gmax if args.gmax is not None else cfg.truncation("gmax", 1)
    rep = Report("pencil", cfg.name)
    pen = cfg.pencil(M)
    P1, P2 = pen.first.truncate(g), pen.second.truncate(g)
    pen = poisson.PoissonPencil(P1, P2)
    rep.results["first"] = [_plain(r) for r in P1.records()]
    rep.results["second"] = [_plain(r) for r in P2.records()]
    for name, op in (("first", P1), ("second", P2)):
        r = poisson.antisymmetry_check(op)
        r.name = f"antisymmetry({name})"
        rep.add(r)
        r = poisson.jacobi_check(op, 2 * g)
        r.name = f"jacobi({name})"
        rep.add(r)
    rep.add(poisson.compatibility_check(pen, 2 * g))
    try:
        C = cfg.chart(M)
    except frobman.NoClosedForm as exc:
        rep.notes.append(f"central invariants skipped: {exc}")
        return rep
    rep.results["central_invariants"] = [to_str(c) for c in poisson.central_invariants(pen, C)]
    return rep


def _virasoro_setup(cfg: ManifoldConfig, M, P: int):
    V = cfg.virasoro_coeffs()
    C = cfg.chart(M)
    D = virasoro.DLambdaOp.from_chart(C, cfg.b_fixture())
    T = frobman.theta(M, P + 1)
    FT = hierarchy.flows(M, T, P)
    OT = hierarchy.omega(M, T, P)
    return V, C, D, virasoro.TauCover(M, FT, OT), OT


def cmd_virasoro(cfg: ManifoldConfig, args) -> Report:
    M = _require_valid(cfg, "virasoro")
    if not cfg.has_virasoro():
        raise virasoro.MissingFixture(f"{cfg.name}: no Virasoro coefficient fixture")
    V0 = cfg.virasoro_coeffs()
    mmax = args.mmax if args.mmax is not None else cfg.truncation("mmax", min(V0.mmax, 2))
    window = cfg.truncation("window", min(V0.pmax, 6))
    P = mmax + 2
    rep = Report("virasoro", cfg.name)
    V, C, D, cover, OT = _virasoro_setup(cfg, M, P)
    rep.add(V.check_symmetry())
    top = min(mmax + 1, V0.mmax)
    pairs = [(k, l) for k in range(-1, top + 1) for l in range(k, top + 1) if k + l <= mmax]
    certified = {}
    for k, l in pairs:
        r = virasoro.commutation_check(V, k, l, window)
        r.name = f"commutation({k},{l})"
        rep.add(r)
        certified[f"{k},{l}"] = r.data.get("certified_levels")
    rep.results["commutation_window"] = certified
    ms = list(range(-1, mmax + 1))
    for a in range(1, M.n + 1):
        for q in (parse(f"v{a}"), parse(f"v{a}_1^2")):
            r = virasoro.d_operator_consistency(V, D, cover, C, q, ms, P)
            r.name = f"d-operator({to_str(q)})"
            rep.add(r)
    F1 = cfg.F1()
    if F1 is None:
        rep.notes.append("no F1 configured; genus-one residual skipped")
    else:
        res = virasoro.genus1_residual(V, D, C, OT, F1, ms, cover, P)
        rep.results["genus1_residual"] = {str(r.m): to_str(r.via_dlambda) for r in res}
        for r in res:
            rep.add({"name": f"genus1(m={r.m})", "ok": r.ok, "witness": [r.m], "residual": _plain(r.via_dlambda or r.via_virasoro)})
    return rep


def cmd_integrate(cfg: ManifoldConfig | None, args) -> Report:
    rep = Report("integrate", cfg.name if cfg else None)
    rep.results["input"] = args.expr
    try:
        if args.twice:
            comps = [parse(x) for x in args.expr.split(";")]
            row = cfg.manifold().eta[0] if cfg is not None else [1] * len(comps)
            if len(comps) != len(row):
                raise ConfigError(f"expected {len(row)} components, got {len(comps)}")
            res = jetcalc.double_integrate_T(comps, row)
            rep.results["T"] = to_str(res.T)
            rep.results["order_drop"] = res.order_drop
        else:
            g = jetcalc.integrate_x(parse(args.expr))
            rep.results["potential"] = to_str(g)
        rep.add({"name": "exact", "ok": True})
    except (jetcalc.NotExact, jetcalc.DegreeTooLow) as exc:
        rep.add({"name": "exact", "ok": False, "witness": type(exc).__name__, "residual": str(exc)})
    return rep


def cmd_poles(cfg: ManifoldConfig, args) -> Report:
    M = _require_valid(cfg, "poles")
    rep = Report("poles", cfg.name)
    C = cfg.chart(M)
    D = virasoro.DLambdaOp.from_chart(C, cfg.b_fixture())
    F = parse(args.expr)
    img = D.apply(F)
    rep.results["input"] = to_str(F)
    rep.results["image"] = {f"{i},{k}": to_str(c) for (i, k), c in sorted(img.terms.items())}
    rep.add({"name": "regular-at-infinity", "ok": virasoro.regular_at_infinity(img)} if virasoro.regular_at_infinity(img)
            else {"name": "regular-at-infinity", "ok": False, "witness": None, "residual": to_str(img.regular)})
    for p in virasoro.pole_profile(D, F):
        d = {"name": f"top-pole(u{p.i})", "ok": p.matches}
        if not p.matches:
            d.update(witness=[p.i, p.top_order], residual=to_str(p.coefficient - p.expected))
        rep.add(d)
        rep.results[f"top_pole_u{p.i}"] = {"order": p.bound, "coefficient": to_str(p.coefficient)}
    return rep


COMMANDS = {
    "validate": cmd_validate,
    "hierarchy": cmd_hierarchy,
    "pencil": cmd_pencil,
    "virasoro": cmd_virasoro,
    "integrate": cmd_integrate,
    "poles": cmd_poles,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="frobvir", description="Frobenius manifolds, hierarchies and Virasoro checks")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="config path or catalog:<name>.json")
        p.add_argument("--out", help="write the report here instead of stdout")
        p.add_argument("--format", choices=("human", "machine"), default="human")

    common(sub.add_parser("validate", help="WDVV, Euler field, canonical chart"))
    p = sub.add_parser("hierarchy", help="flows and two-point functions")
    common(p)
    p.add_argument("--pmax", type=int)
    p = sub.add_parser("pencil", help="bihamiltonian pencil checks and central invariants")
    common(p)
    p.add_argument("--gmax", type=int)
    p = sub.add_parser("virasoro", help="Virasoro commutation and genus-one checks")
    common(p)
    p.add_argument("--mmax", type=int)
    p = sub.add_parser("integrate", help="invert the total x-derivative")
    common(p, config_required=False)
    p.add_argument("expr", help="expression; for --twice, components separated by ';'")
    p.add_argument("--twice", action="store_true", help="double integration against the first row of eta")
    p = sub.add_parser("poles", help="pole profile of D(lambda) F")
    common(p)
    p.add_argument("expr")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load(args.config) if args.config else None
        rep = COMMANDS[args.command](cfg, args)
    except (ConfigError, ParseError, virasoro.MissingFixture, virasoro.JetOrderExceedsFixture,
            virasoro.WindowTooSmall, virasoro.NotRationalInLambda) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Refused as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_VIOLATION
    text = rep.render(args.format)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK if rep.ok else EXIT_VIOLATION


if __name__ == "__main__":
    raise SystemExit(main())

"""Regenerate the shipped KdV fixtures from their closed forms.

Virasoro coefficients (shifted times, t~^{1,1} = t^{1,1} - 1):
    a_m^{k,l}   = (2k+1)!!(2l+1)!! / 2^{m+2},        k + l = m - 1
    b_{m;k}^{k+m} = (2k+2m+1)!! / ((2k-1)!! 2^{m+1})
    c_{-1;0,0}  = 1/2
B_{1,r} from the recursion B_{1,r} = dx B_{1,r-1} + sum_j g_j Bell_{r,j}(v_x, v_xx, ...)
with g_j = (-1)^j (2j-1)!!/2^j (u - lambda)^(-1-j).
"""

import json
import sys
from pathlib import Path

from gmpy2 import mpq

from frobvir import virasoro as vi
from frobvir.jetcalc import dx
from frobvir.symcore import Expr, derive, jet, jet_atom, parse, subs, to_str

df = vi.double_factorial


def kdv_coeffs(mmax: int, pmax: int) -> vi.VirasoroCoeffs:
    a, b = {}, {}
    for m in range(-1, mmax + 1):
        for k in range(0, m):
            l = m - 1 - k
            if k <= pmax and l <= pmax:
                a.setdefault(m, {})[((1, k), (1, l))] = mpq(df(2 * k + 1) * df(2 * l + 1), 2 ** (m + 2))
        for k in range(pmax + 1):
            if 0 <= k + m <= pmax:
                b.setdefault(m, {})[((1, k), (1, k + m))] = mpq(df(2 * k + 2 * m + 1), df(2 * k - 1) * 2 ** (m + 1))
    c = {-1: {((1, 0), (1, 0)): mpq(1, 2)}}
    return vi.VirasoroCoeffs(1, mmax, pmax, a, b, c, mpq(1, 16))


def kdv_B(rmax: int) -> dict:
    u, lam = jet("u", 1), vi.LAM
    out = {1: parse("-1/2*u1_1") * (u - lam) ** -2}

    def dxc(e):
        # placeholder c1_j stands for the j-th derivative of a function of u
        def rule(a):
            if a.kind == "c":
                return jet("c", 1, a.order + 1) * jet("u", 1, 1)
            if a.kind == "u":
                return jet("u", 1, a.order + 1)
            return None

        return derive(e, rule)

    cur = jet("c", 1, 0)
    for r in range(1, rmax + 1):
        cur = dxc(cur)
        if r == 1:
            continue
        sub = {
            jet_atom("c", 1, j): Expr.coerce(mpq((-1) ** j * df(2 * j - 1), 2**j)) * (u - lam) ** (-1 - j)
            for j in range(r + 1)
        }
        out[r] = dx(out[r - 1]) + subs(cur, sub)
    return out


def pole_text(e: Expr) -> str:
    ps = vi.partial_fractions(e, 1)
    parts = [f"({to_str(c)})*(u{i} - lambda)^-{k}" for (i, k), c in sorted(ps.terms.items())]
    return " + ".join(parts)


def dump_records(obj: dict) -> str:
    lines = ["{"]
    keys = list(obj)
    for n, key in enumerate(keys):
        val = obj[key]
        tail = "," if n + 1 < len(keys) else ""
        if isinstance(val, list):
            lines.append(f"  {json.dumps(key)}: [")
            for j, rec in enumerate(val):
                lines.append("    " + json.dumps(rec) + ("," if j + 1 < len(val) else ""))
            lines.append("  ]" + tail)
        else:
            lines.append(f"  {json.dumps(key)}: {json.dumps(val)}{tail}")
    lines.append("}")
    return "\n".join(lines) + "\n"


def main(dest: Path) -> None:
    V = kdv_coeffs(4, 10)
    (dest / "fixture_kdv_virasoro.json").write_text(dump_records(vi.coeffs_to_records(V)))
    B = kdv_B(4)
    print(json.dumps([[1, r, pole_text(e)] for r, e in sorted(B.items())], indent=2))


if __name__ == "__main__":
    main(Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).resolve().parents[1] / "src/frobvir/catalog")

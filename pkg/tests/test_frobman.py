from __future__ import annotations

import itertools

import pytest
import sympy
from gmpy2 import mpq

from frobvir import frobman as fm
from frobvir.symcore import ONE, ZERO, parse

CORRUPTED = "1/2*v1^2*v3 + 1/2*v1*v2^2 + v2^3*v3"


def _corrupted():
    return fm.FrobeniusManifold(3, parse(CORRUPTED), [parse("v1"), parse("v2"), parse("v3")], 0, [0, 0, 0])


def _sympy_wdvv_residual(F_text: str, n: int, a: int, b: int, g: int, d: int):
    """Independent WDVV evaluation: sympy differentiation and matrix inverse."""
    X = sympy.symbols(f"v1:{n + 1}")
    F = sympy.sympify(F_text.replace("^", "**"), locals={str(x): x for x in X})
    third = lambda i, j, k: sympy.diff(F, X[i], X[j], X[k])
    eta = sympy.Matrix(n, n, lambda i, j: third(0, i, j))
    inv = eta.inv()
    lhs = sum(third(a, b, l) * inv[l, m] * third(m, g, d) for l in range(n) for m in range(n))
    rhs = sum(third(d, b, l) * inv[l, m] * third(m, g, a) for l in range(n) for m in range(n))
    return sympy.expand(lhs - rhs)


@pytest.mark.parametrize("M", [fm.kdv(), fm.a2(), fm.p1()], ids=lambda M: M.name)
def test_catalog_manifolds_pass_all_checks(M):
    assert fm.check_wdvv(M).ok
    assert fm.check_euler(M).ok
    assert fm.check_unit(M).ok
    assert fm.check_r_grading(M).ok


def test_corrupted_potential_names_a_witness():
    rep = fm.check_wdvv(_corrupted())
    assert not rep.ok
    assert rep.witness == (2, 2, 3, 3)
    assert rep.residual == parse("-36*v2^2")
    full = fm.check_wdvv(_corrupted(), first_only=False)
    assert full.data["violations"] > 1


def test_repeated_pairing_quadruple_is_trivial():
    # with three equal indices both pairings give the same product
    assert _sympy_wdvv_residual(CORRUPTED, 3, 1, 1, 1, 2) == 0


def test_corrupted_potential_against_sympy():
    assert _sympy_wdvv_residual(CORRUPTED, 3, 1, 1, 2, 2) == sympy.sympify("-36*v2**2")
    # every quadruple agrees with the independent evaluation
    M = _corrupted()
    for a, b, g, d in itertools.product(range(3), repeat=4):
        lhs = ZERO
        rhs = ZERO
        for l in range(3):
            for m in range(3):
                e = M.eta_inv[l][m]
                if e:
                    lhs = lhs + M.third(a, b, l) * e * M.third(m, g, d)
                    rhs = rhs + M.third(d, b, l) * e * M.third(m, g, a)
        oracle = _sympy_wdvv_residual(CORRUPTED, 3, a, b, g, d)
        assert sympy.expand(sympy.sympify(str(lhs - rhs).replace("^", "**")) - oracle) == 0


def test_exponential_manifold_wdvv_against_sympy():
    for q in itertools.product(range(2), repeat=4):
        assert _sympy_wdvv_residual("1/2*v1^2*v2 + exp(v2)", 2, *q) == 0


def test_euler_violations():
    M = fm.kdv()
    doubled = fm.FrobeniusManifold(1, M.F, [parse("2*v1")], 0, [0])
    assert not fm.check_euler(doubled).ok
    bad_charge = fm.FrobeniusManifold(2, parse("1/2*v1^2*v2 + exp(v2)"), [parse("v1"), parse("2")], 2, ["-1/2", "1/2"])
    assert not fm.check_euler(bad_charge).ok


def test_euler_quadratic_part():
    rep = fm.check_euler(fm.p1())
    A, B, C = rep.data["A"], rep.data["B"], rep.data["C"]
    # E(F) - 2F = v1^2 for the exponential manifold
    assert A[0][0] == parse("2") and B == [ZERO, ZERO] and C == ZERO


def test_degenerate_metric():
    with pytest.raises(fm.DegenerateMetric):
        _ = fm.FrobeniusManifold(2, parse("v1^3/6 + v2^3/6"), [parse("v1"), parse("v2")], 0, [0, 0]).eta


def test_structure_constants_have_unit():
    M = fm.p1()
    for g in range(2):
        for b in range(2):
            assert M.c(g, 0, b) == (ONE if g == b else ZERO)


def test_theta_exponential_manifold():
    M = fm.p1()
    T = fm.theta(M, 2)
    assert T[(1, 1)] == parse("v1*v2")
    assert T[(2, 1)] == parse("1/2*v1^2 + exp(v2)")
    assert T[(1, 2)] == parse("1/2*v1^2*v2 + v2*exp(v2) - 2*exp(v2)")
    assert fm.check_theta(M, T).ok


def test_theta_kdv_and_a2():
    T = fm.theta(fm.kdv(), 4)
    for p in range(5):
        assert T[(1, p)] * parse(str(sympy.factorial(p + 1))) == parse(f"v1^{p + 1}")
    M = fm.a2()
    assert fm.check_theta(M, fm.theta(M, 3)).ok


def test_theta_check_detects_corruption():
    M = fm.p1()
    T = fm.theta(M, 2)
    T.theta[(1, 2)] = T.theta[(1, 2)] + parse("v1^3")
    assert not fm.check_theta(M, T).ok


def test_canonical_chart_exponential_manifold():
    C = fm.p1_chart()
    assert C.check().ok
    f = [C.f(i) for i in range(2)]
    assert f[0] == parse("2/(u1 - u2)") and f[1] == parse("-2/(u1 - u2)")
    assert C.J() == parse("-2/(u1 - u2)")
    assert C.gamma_weighted(0, 1) == parse("1/2/(u1 - u2)")
    assert fm.is_irreducible(C)
    assert fm.is_irreducible_metric(f)


def test_canonical_chart_needs_square_root_for_a2():
    with pytest.raises(fm.NoClosedForm):
        fm.canonical_chart(fm.a2())


def test_chart_change_round_trip():
    C = fm.p1_chart()
    f = parse("v1_1*v2_2 + exp(v2)*v1")
    there = fm.change_chart(f, C, "v_to_u")
    back = fm.change_chart(there, C, "u_to_v")
    assert back == f


def test_reducible_metric():
    assert not fm.is_irreducible_metric([parse("u1"), parse("u2")])
    assert fm.is_irreducible_metric([parse("u1*u2"), parse("u2")])


def test_rational_data_types():
    M = fm.p1()
    assert M.d == mpq(1) and M.mu == [mpq(-1, 2), mpq(1, 2)]
    assert M.r_shift() == [ZERO, parse("2")]

from __future__ import annotations

import random
from math import comb, factorial

import pytest
from gmpy2 import mpq
from hypothesis import given, settings
from hypothesis import strategies as st

from frobvir import virasoro as vi
from frobvir.symcore import ZERO, Expr, jet, parse

LAM = vi.LAM


def _dfact(k: int) -> int:
    return 1 if k <= 0 else k * _dfact(k - 2)


def _oracle_C(N: int) -> mpq:
    return mpq(factorial(N)) + mpq(sum(comb(N, l) * _dfact(2 * l - 3) * _dfact(2 * N - 2 * l + 1) for l in range(1, N + 1)), 2**N)


@pytest.fixture(scope="module")
def kdv_V(kdv_cfg):
    return kdv_cfg.virasoro_coeffs()


def test_constants():
    assert [vi.c_constant(N) for N in (1, 2, 3)] == [mpq(3, 2), mpq(15, 4), mpq(105, 8)]
    assert vi.c_constant(0) == 1
    for N in range(8):
        assert vi.c_constant(N) == _oracle_C(N)
    with pytest.raises(ValueError):
        vi.c_constant(-1)


def test_pole_sum_expansion():
    ps = vi.PoleSum.pole(1, 2, parse("3"))
    # 3/(u-lambda)^2 = 3 sum_n (n+1) u^n lambda^(-n-2)
    assert ps.expansion(-1) == ZERO
    for m in range(4):
        assert ps.expansion(m) == parse(f"{3 * (m + 1)}*u1^{m}")
    assert vi.PoleSum.pole(1, 1).expansion(-1) == parse("-1")


def test_pole_sum_dx_matches_expression():
    ps = vi.PoleSum({(1, 2): parse("u1_1"), (2, 1): parse("u1*u2_2")})
    from frobvir.jetcalc import dx

    assert ps.dx().to_expr() == dx(ps.to_expr())


@settings(max_examples=40)
@given(st.integers(0, 10**6))
def test_partial_fractions_round_trip(seed):
    rng = random.Random(seed)
    ps = vi.PoleSum()
    for _ in range(rng.randint(1, 4)):
        i, k = rng.randint(1, 2), rng.randint(1, 4)
        ps = ps + vi.PoleSum.pole(i, k, Expr.coerce(rng.randint(-3, 3)) * jet("u", rng.randint(1, 2), rng.randint(0, 2)))
    back = vi.partial_fractions(ps.to_expr(), 2)
    assert back == ps


def test_partial_fractions_rejects_other_poles():
    with pytest.raises(vi.NotRationalInLambda):
        vi.partial_fractions(parse("1/(lambda - 1)"), 1)
    with pytest.raises(vi.NotRationalInLambda):
        vi.partial_fractions(parse("lambda*u1_1 + 1/(u1 - lambda)"), 1)
    assert vi.partial_fractions(parse("lambda/(u1 - lambda)"), 1) == vi.PoleSum({(1, 1): parse("u1")}, parse("-1"))


def test_first_jet_image(kdv_dlambda, p1_dlambda):
    la = vi.leading_action(kdv_dlambda, 1, 1)
    assert la.leading == parse("-3/2")
    assert la.remainder.is_zero()
    for i in (1, 2):
        la = vi.leading_action(p1_dlambda, i, 1)
        assert la.leading == parse("-3/2")
        assert la.gamma_coeff == parse("-1")
        assert la.remainder.is_zero()


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_leading_action_higher_jets(kdv_dlambda, k):
    la = vi.leading_action(kdv_dlambda, 1, k)
    assert la.leading == Expr.coerce(-(1 + mpq(k, 2)))
    assert la.remainder_ok


def test_genus_one_anchor(kdv_dlambda):
    img = kdv_dlambda.apply(parse("1/24*log(u1_1)"))
    assert img == vi.PoleSum.pole(1, 2, parse("-1/16"))


def test_second_jet_image(kdv_dlambda):
    img = kdv_dlambda.apply(parse("u1_2"))
    assert img == vi.PoleSum({(1, 2): parse("-2*u1_2"), (1, 3): parse("15/4*u1_1^2")})


def test_fixture_matches_recursion(kdv_dlambda):
    # dx-recursion for the KdV periods, written independently of the fixture
    from frobvir.jetcalc import dx

    def bell(r):
        # d_x^r of phi(u) in terms of phi^(j) u-jets: returns {j: coefficient}
        table = {0: parse("1")}
        for _ in range(r):
            nxt = {}
            for j, c in table.items():
                nxt[j + 1] = nxt.get(j + 1, ZERO) + c * parse("u1_1")
                if dx(c):
                    nxt[j] = nxt.get(j, ZERO) + dx(c)
            table = nxt
        return table

    u = parse("u1")
    B = parse("-1/2*u1_1") * (u - LAM) ** -2
    for r in range(2, 5):
        g = ZERO
        for j, c in bell(r).items():
            g = g + c * Expr.coerce(mpq((-1) ** j * _dfact(2 * j - 1), 2**j)) * (u - LAM) ** (-1 - j)
        B = dx(B) + g
        assert kdv_dlambda.B[(1, r)].to_expr() == B


def test_missing_fixture_order(p1_dlambda):
    with pytest.raises(vi.JetOrderExceedsFixture):
        p1_dlambda.apply(parse("u1_2"))


def _random_S1(rng, n):
    f = ZERO
    for _ in range(rng.randint(1, 4)):
        m = Expr.coerce(rng.randint(-4, 4) or 1)
        for i in range(1, n + 1):
            m = m * jet("u", i) ** rng.randint(0, 2) * jet("u", i, 1) ** rng.randint(-2, 3)
        f = f + m
    if rng.random() < 0.5:
        f = f + Expr.coerce(rng.randint(1, 3)) * parse(f"log(u{rng.randint(1, n)}_1)")
    return f


@pytest.mark.parametrize("name", ["kdv", "p1"])
def test_top_pole_law_first_order(name, kdv_dlambda, p1_dlambda):
    D = {"kdv": kdv_dlambda, "p1": p1_dlambda}[name]
    rng = random.Random(11)
    for _ in range(20):
        F = _random_S1(rng, D.n)
        for prof in vi.pole_profile(D, F):
            assert prof.matches, (str(F), prof)
        assert vi.regular_at_infinity(D.apply(F))


def test_top_pole_law_second_order(kdv_dlambda):
    for F in ["u1_2", "u1*u1_2^2/u1_1", "u1_2*u1_1 + log(u1_1)", "u1_3*u1_1^-1"]:
        for prof in vi.pole_profile(kdv_dlambda, parse(F)):
            assert prof.matches


def test_kdv_coefficients_against_closed_form(kdv_V):
    for m in range(-1, kdv_V.mmax + 1):
        for (A, B), val in kdv_V.a.get(m, {}).items():
            k, l = A[1], B[1]
            assert k + l == m - 1
            assert val == mpq(_dfact(2 * k + 1) * _dfact(2 * l + 1), 2 ** (m + 2))
        for (A, B), val in kdv_V.b.get(m, {}).items():
            k = A[1]
            assert B[1] == k + m
            assert val == mpq(_dfact(2 * k + 2 * m + 1), _dfact(2 * k - 1) * 2 ** (m + 1))
    assert kdv_V.c == {-1: {((1, 0), (1, 0)): mpq(1, 2)}}
    assert kdv_V.trace_term == mpq(1, 16) == vi.trace_term([0])
    assert kdv_V.check_symmetry().ok


def test_string_equation_generator(kdv_V):
    assert vi.genus0_generator(kdv_V, -1, 2) == parse("1/2*t1_0^2 + t1_1*f1_0 + t1_2*f1_1 - f1_0")


@pytest.mark.parametrize("k,l", [(-1, 0), (-1, 1), (0, 1), (0, 2), (1, 1), (-1, 3)])
def test_commutation(kdv_V, k, l):
    assert vi.commutation_check(kdv_V, k, l, 6).ok


def test_commutation_detects_perturbation(kdv_V):
    bad = kdv_V.perturbed("a", 2, ((1, 0), (1, 1)), 1)
    bad = bad.perturbed("a", 2, ((1, 1), (1, 0)), 1)
    rep = vi.commutation_check(bad, -1, 2, 6)
    assert not rep.ok and rep.witness == (-1, 2)


def test_window_limits(kdv_V):
    with pytest.raises(vi.WindowTooSmall):
        vi.commutation_check(kdv_V, 2, 3, 6)
    with pytest.raises(vi.WindowTooSmall):
        vi.commutation_check(kdv_V, -1, 1, 0)
    with pytest.raises(vi.WindowTooSmall):
        vi.genus0_generator(kdv_V, 0, kdv_V.pmax + 1)


def test_d_operator_consistency(kdv_V, kdv_tables, kdv_cfg, kdv_dlambda):
    M, T, FT, OT = kdv_tables
    cover = vi.TauCover(M, FT, OT)
    C = kdv_cfg.chart(M)
    for Q in ("v1", "v1^2", "v1_1", "v1*v1_2"):
        assert vi.d_operator_consistency(kdv_V, kdv_dlambda, cover, C, parse(Q), [-1, 0, 1, 2], 5).ok


def test_d_minus_one_acts_as_minus_d_dv(kdv_V, kdv_tables):
    M, T, FT, OT = kdv_tables
    cover = vi.TauCover(M, FT, OT)
    assert vi.d_m_action(kdv_V, -1, parse("v1^3"), cover, 5) == parse("-3*v1^2")


def test_genus_one_residual(kdv_V, kdv_tables, kdv_cfg, kdv_dlambda):
    M, T, FT, OT = kdv_tables
    cover = vi.TauCover(M, FT, OT)
    C = kdv_cfg.chart(M)
    res = vi.genus1_residual(kdv_V, kdv_dlambda, C, OT, parse("1/24*log(u1_1)"), [-1, 0, 1, 2, 3], cover, 5)
    assert all(r.ok for r in res)
    wrong = vi.genus1_residual(kdv_V, kdv_dlambda, C, OT, parse("1/12*log(u1_1)"), [0], cover, 5)
    assert not wrong[0].ok


def test_coefficient_records_round_trip(kdv_V):
    again = vi.coeffs_from_records(1, vi.coeffs_to_records(kdv_V))
    assert (again.a, again.b, again.c, again.trace_term) == (kdv_V.a, kdv_V.b, kdv_V.c, kdv_V.trace_term)


def test_linearization_recovers_polynomial(kdv_dlambda):
    basis = vi.ansatz_basis(1, 2, 2, 2, max_inverse=2)
    P = parse("(u1^2 - 3)*u1_2 + 5/2*u1*u1_1^2")
    res = vi.linearization_step(kdv_dlambda.apply(P), kdv_dlambda, basis)
    assert res.G == P and res.verified and res.polynomial


def test_linearization_failures(kdv_dlambda):
    basis = vi.ansatz_basis(1, 2, 2, 1, max_inverse=2)
    with pytest.raises(vi.NoPolynomialSolution):
        vi.linearization_step(kdv_dlambda.apply(parse("u1_2^2/u1_1^2")), kdv_dlambda, basis)
    with pytest.raises(vi.NoSolutionInAnsatz):
        vi.linearization_step(vi.PoleSum.pole(1, 5, parse("u1_1^2")), kdv_dlambda, basis)


def test_linearization_two_components(p1_dlambda):
    basis = vi.ansatz_basis(2, 2, 1, 1)
    P = parse("u1*u1_1*u2_1 - u2_1^2")
    assert vi.linearization_step(p1_dlambda.apply(P), p1_dlambda, basis).G == P


def test_ansatz_basis_shape():
    basis = vi.ansatz_basis(1, 2, 2, 0, max_inverse=2)
    assert {str(b) for b in basis} == {"u1_1^2", "u1_2", "u1_1^-2*u1_2^2"}
    assert basis[0].is_polynomial()


def test_miura_update(kdv_tables, kdv_cfg):
    M, T, FT, OT = kdv_tables
    C = kdv_cfg.chart(M)
    shift = vi.miura_update(parse("u1_1^2"), M, C, FT)
    from frobvir.jetcalc import dx
    from frobvir.hierarchy import t_derivative

    assert shift == [dx(t_derivative(parse("v1_1^2"), (1, 0), FT))]

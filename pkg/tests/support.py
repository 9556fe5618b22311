"""Shared generators and the acceptance-result registry."""

from __future__ import annotations

import random

from gmpy2 import mpq

from frobvir.symcore import ZERO, Expr, jet

# filled in by test_acceptance; printed once at the end of the session
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def random_rational(rng: random.Random, span: int = 5) -> mpq:
    num = rng.randint(-span, span)
    while num == 0:
        num = rng.randint(-span, span)
    return mpq(num, rng.randint(1, 4))


def random_diff_poly(rng: random.Random, n: int, family: str, max_jet: int, terms: int = 4) -> Expr:
    """Random element of A: sums of jet monomials with base-coordinate monomial coefficients."""
    out = ZERO
    for _ in range(terms):
        m = Expr.coerce(random_rational(rng))
        for i in range(1, n + 1):
            m = m * jet(family, i) ** rng.randint(0, 2)
        for _ in range(rng.randint(0, 3)):
            m = m * jet(family, rng.randint(1, n), rng.randint(1, max_jet))
        out = out + m
    return out

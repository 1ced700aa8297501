from __future__ import annotations

import math

import mpmath as mp
import pytest
from hypothesis import given, settings, strategies as st

from ymlab.constants import make_coeff_table, make_dimension_params
from ymlab.errors import DomainError


def test_d10_closed_form(p10):
    assert p10.gamma == pytest.approx(4.0, abs=1e-14)
    assert p10.alpha == pytest.approx(2.0, abs=1e-14)
    assert p10.omega == pytest.approx(2.0, abs=1e-14)
    assert p10.gamma_tilde == pytest.approx(6.0, abs=1e-14)
    assert p10.lambda1 == pytest.approx(-2.0, abs=1e-14)
    assert p10.lambda2 == pytest.approx(-4.0, abs=1e-14)
    assert p10.gamma * p10.gamma_tilde == pytest.approx(24.0, abs=1e-12)


def test_d11_values(p11):
    root = (11 - math.sqrt(11 * 11 - 12 * 11 + 24)) / 2
    assert p11.gamma == pytest.approx(root, rel=1e-15)
    assert p11.gamma == pytest.approx(3.697224, abs=5e-7)
    assert 2.0 / p11.alpha == pytest.approx(1.17840, abs=1e-5)


def test_rejects_low_dimension():
    with pytest.raises(DomainError):
        make_dimension_params(9)


@given(st.integers(min_value=10, max_value=64))
def test_root_identities(d):
    p = make_dimension_params(d)
    r1, r2 = p.quadratic_residuals()
    assert abs(r1) < 1e-12 and abs(r2) < 1e-12
    assert p.gamma < p.gamma_tilde
    assert p.gamma + p.gamma_tilde == pytest.approx(d, rel=1e-14)
    assert p.gamma * p.gamma_tilde == pytest.approx(3 * (d - 2), rel=1e-13)
    assert p.lambda1 == -p.alpha
    assert p.omega == pytest.approx(p.gamma_tilde - p.gamma, rel=1e-13)
    assert p.lambda2 == pytest.approx(2 - p.gamma_tilde, rel=1e-13)
    if d >= 11:
        assert 2.0 < p.gamma < 4.0


def test_coefficient_examples(p11):
    t = make_coeff_table(p11, 8)
    m = 11 / 2 - p11.gamma
    assert t.a[1][0] == pytest.approx(-4 * (m + 1), rel=1e-14)
    assert t.a[1][0] == pytest.approx(-11.211103, abs=1e-6)
    assert t.c[1][0] == pytest.approx(t.a[1][0], rel=1e-14)
    assert t.C[1] == pytest.approx(1 / (4 * (m + 1)), rel=1e-14)
    assert t.C[1] == pytest.approx(0.0891972, abs=1e-7)


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=10, max_value=30))
def test_table_matches_factorial_oracle(d):
    p = make_dimension_params(d)
    t = make_coeff_table(p, 8)
    mp.mp.dps = 40
    m = mp.mpf(d) / 2 - (mp.mpf(d) - mp.sqrt(mp.mpf(d) ** 2 - 12 * d + 24)) / 2
    for i in range(9):
        assert t.a[i][i] == 1.0
        for j in range(i):
            # a_ij = 4^{i-j} i!/j! * (-1)^{i-j} binom-like ratio of rising factorials
            exact = (-1) ** (i - j) * mp.mpf(4) ** (i - j) * mp.factorial(i) / (mp.factorial(j) * mp.factorial(i - j))
            exact *= mp.rf(m + j + 1, i - j)
            assert float(t.a[i][j]) == pytest.approx(float(exact), rel=1e-10)
            A = 4 * (j + 1) * (float(m) + j + 1)
            assert t.a[i][j + 1] * A == pytest.approx((j - i) * t.a[i][j], rel=1e-12)
            assert t.a[i][j] == pytest.approx(t.c[i][j] * t.C[j], rel=1e-12)

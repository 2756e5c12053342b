from __future__ import annotations

import math

import numpy as np
import pytest

from chemoverify.comparison import (OdeTrace, advance_psi, advance_U, advance_V_general, advance_V_monotone,
                                    check_domination, is_nonincreasing, rk4)
from chemoverify.motility import find_s_star, preset, split


def integrate(step, y, dt, n):
    for _ in range(n):
        y = step(y, dt)
    return y


def test_rk4_exact_on_cubic_growth():
    # y' = 1 -> exact for any dt; y' = y -> Taylor polynomial of degree 4
    assert rk4(lambda y: 1.0, 2.0, 0.3) == pytest.approx(2.3, abs=1e-15)
    dt = 0.1
    assert rk4(lambda y: y, 1.0, dt) == pytest.approx(sum(dt ** k / math.factorial(k) for k in range(5)), abs=1e-15)


def test_V_monotone_stationary_when_sup_equals_V():
    g = preset("power_growth", k=2)
    assert advance_V_monotone(1.3, 0.01, 1.3, g) == 1.3


def test_V_monotone_example_against_reference():
    g = preset("power_growth", k=1)
    step = lambda y, dt: advance_V_monotone(y, dt, 1.0, g)
    # dV/dt = (1 - V) V at V = 2 is -2
    assert (step(2.0, 1e-7) - 2.0) / 1e-7 == pytest.approx(-2.0, rel=1e-6)
    coarse = integrate(step, 2.0, 1e-3, 500)
    fine = integrate(step, 2.0, 1e-5, 50000)
    assert abs(coarse - fine) <= 1e-10
    exact = 1.0 / (1.0 - 0.5 * math.exp(-0.5))  # logistic solution
    assert fine == pytest.approx(exact, abs=1e-12)


def test_U_examples():
    assert advance_U(2.0, 0.1, 1.0, 0.0) == 2.0
    assert advance_U(1.5, 0.1, 1.5, 3.0) == 1.5
    step = lambda y, dt: advance_U(y, dt, 1.0, 1.0)
    assert (step(2.0, 1e-7) - 2.0) / 1e-7 == pytest.approx(-2.0, rel=1e-6)
    assert abs(integrate(step, 2.0, 2e-3, 250) - integrate(step, 2.0, 2e-5, 25000)) <= 1e-10


def test_psi_examples(rng):
    assert advance_psi(0.7, 0.1, 0.7, 2.0, 0.5) == 0.7
    for _ in range(5):
        sup_phi, gp, yinv, psi0 = rng.random(4) + 0.2
        step = lambda y, dt: advance_psi(y, dt, sup_phi, gp, yinv)
        assert abs(integrate(step, psi0, 1e-3, 300) - integrate(step, psi0, 1e-5, 30000)) <= 1e-10


@pytest.fixture(scope="module")
def wobble():
    gamma = preset("wobble", a=0.5, b=1)
    s_star = find_s_star(gamma, 0.1, 2.0)
    return split(gamma, s_star, 0.1, s_cap=100.0)


def test_V_general_stationary_at_s_star(wobble):
    s = wobble.s_star
    assert advance_V_general(s, 0.05, 0.9 * s, wobble) == s


def test_V_general_reduces_to_monotone_case():
    gamma = preset("power_growth", k=2)
    sp = split(gamma, 1.5, 0.5, s_cap=50.0)
    V = 2.4
    for sup_v in (1.7, 2.0, 2.4):
        a = advance_V_general(V, 0.01, sup_v, sp)
        b = advance_V_monotone(V, 0.01, sup_v, gamma)
        assert a == pytest.approx(b, abs=1e-12)


def test_V_general_stays_below_s_star(wobble):
    s = wobble.s_star
    dt = 0.01
    V = s
    for n in range(2000):
        V = advance_V_general(V, dt, s * (1 - math.exp(-n * dt)), wobble)
        assert V <= s + 1e-9


def test_V_general_right_hand_side(wobble):
    gamma = wobble.gamma
    s = wobble.s_star
    V, sup_v = s + 2.0, s + 0.5
    expected = (gamma(s) + wobble.gamma_i(sup_v) - gamma(V)) * V + wobble.Gamma_d(V)
    assert (advance_V_general(V, 1e-7, sup_v, wobble) - V) / 1e-7 == pytest.approx(expected, rel=1e-5)
    step = lambda y, dt: advance_V_general(y, dt, sup_v, wobble)
    assert abs(integrate(step, V, 1e-3, 50) - integrate(step, V, 1e-5, 5000)) <= 1e-10


def test_trace_records_in_order():
    tr = OdeTrace("U_concave", 2.0, Y=1.0)
    tr.advance(0.1, sup_u=1.0)
    tr.record(0.1)
    assert tr.times == [0.0, 0.1] and tr.values[0] == 2.0 and tr.values[1] < 2.0
    with pytest.raises(ValueError):
        tr.record(0.1)
    with pytest.raises(ValueError):
        OdeTrace("W", 1.0)


def test_domination_flat_margins_equal_slack():
    t = np.linspace(0, 1, 11)
    rep = check_domination(t, np.full(11, 2.0), np.full(11, 2.0), 0.01)
    assert rep.ok and rep.worst_margin == pytest.approx(0.01, abs=1e-15) and rep.samples == 11


def test_domination_halved_trace_flags_first_sample():
    t = np.linspace(0, 1, 11)
    field_sup = 2.0 - 0.1 * t
    rep = check_domination(t, field_sup, 0.5 * (2.0 - 0.05 * t), 1e-3)
    assert not rep.ok and rep.first_violation == 0.0


def test_is_nonincreasing():
    assert is_nonincreasing([3, 2, 2, 1]) == (True, 0.0)
    ok, rise = is_nonincreasing([3, 2, 2.5, 1])
    assert not ok and rise == 0.5
    assert is_nonincreasing([3, 2, 2.5], tol=0.6)[0]
    assert is_nonincreasing([1.0]) == (True, 0.0)

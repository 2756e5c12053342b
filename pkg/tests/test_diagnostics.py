from __future__ import annotations

import math

import numpy as np
import pytest

from chemoverify.diagnostics import (CHECKS, COLUMNS, BoundLedger, Monitor, MonitorSettings, check_mass,
                                     check_stabilization, check_v_floor, continuous_dependence_experiment,
                                     dissipation, evaluate, identity_residual, liapunov_series,
                                     tolerance_constant)
from chemoverify.dynamics import Simulator, StepControl
from chemoverify.errors import Negativity
from chemoverify.grid import build_grid, h1_energy
from chemoverify.motility import preset


def monitored(gamma, u_fn, T, n=32, dim=1, conservative=True, **settings):
    g = build_grid(dim, [1.0] * dim, [n] * dim)
    sim = Simulator(g, gamma, conservative=conservative)
    mon = Monitor(sim, MonitorSettings(**settings))
    traj = sim.run(sim.init_state(g.evaluate(u_fn)), StepControl(T=T), [mon])
    assert traj.ok
    return sim, mon.ledger


def by_key(verdicts):
    return {v.key: v for v in verdicts}


@pytest.fixture(scope="module")
def flat():
    return monitored(preset("power_growth", k=2), lambda x: 1.5 + 0 * x, 0.2)[1]


@pytest.fixture(scope="module")
def bump():
    return monitored(preset("power_growth", k=1), lambda x: 1 + 0.5 * np.cos(np.pi * x), 0.3)[1]


def test_ledger_append_fills_missing_with_nan():
    led = BoundLedger()
    led.append(t=0.0, mass=1.0)
    assert set(led.rows[0]) == set(COLUMNS)
    assert math.isnan(led.rows[0]["V"])


def test_flat_run_all_pass(flat):
    verdicts = evaluate(flat)
    assert [v.key for v in verdicts] == list(CHECKS)
    assert all(v.status == "pass" for v in verdicts), [(v.key, v.detail) for v in verdicts]
    np.testing.assert_allclose(flat.column("V"), 1.5, rtol=1e-13)
    np.testing.assert_allclose(flat.column("psi"), 1.5 ** 3, rtol=1e-13)
    E = flat.column("E")
    np.testing.assert_allclose(E, 1.5 ** 2 / 2, rtol=1e-13)
    np.testing.assert_allclose(flat.column("dissipation")[1:], 0.0, atol=1e-20)


def test_flat_run_margins(flat):
    assert check_mass(flat).margin == pytest.approx(1e-11 * flat.meta["m0"], rel=1e-6)
    floor = check_v_floor(flat)
    assert floor.status == "pass"
    # rows of the Green's matrix sum to one, so omega_h <= 1/|Omega|
    assert flat.meta["omega_star_h"] <= 1.0 / flat.meta["measure"]
    stab = check_stabilization(flat)
    assert stab.margin == pytest.approx(1e-3, abs=1e-12)


def test_bump_run_passes_and_decays(bump):
    verdicts = by_key(evaluate(bump))
    for key in ("mass", "v_floor", "elliptic_sup", "invariant_region", "u_bounds", "v_ceiling",
                "ode_domination", "liapunov"):
        assert verdicts[key].status == "pass", verdicts[key].detail
    assert verdicts["v_floor"].margin > 0.1
    E = bump.column("E")
    assert np.all(np.diff(E) < 0)
    assert np.all(bump.column("dissipation")[1:] < 0)


def test_tolerance_constant():
    assert tolerance_constant(2.0) == 30.0


def test_identity_residual_small_against_dissipation(bump):
    res = identity_residual(bump)
    assert 0 < res < 0.05 * np.nanmax(np.abs(bump.column("dissipation")))


def test_dissipation_of_constant_is_zero():
    g = build_grid(2, [1.0, 1.0], (6, 6))
    sim = Simulator(g, preset("sqrt"))
    assert dissipation(g.field(2.0), sim) == 0.0


def test_dissipation_matches_energy_rate_in_small_step_limit():
    g = build_grid(1, 1.0, 24)
    sim = Simulator(g, preset("power_growth", k=2))
    s = sim.init_state(g.evaluate(lambda x: 1 + 0.3 * np.cos(np.pi * x)))
    dt = 1e-7
    rate = (h1_energy(sim.step(s, dt).v, g) - h1_energy(s.v, g)) / dt
    assert rate == pytest.approx(dissipation(s.v, sim), rel=0.05)


def test_nonconservative_fixture_fails_mass():
    _, led = monitored(preset("power_growth", k=1), lambda x: 1 + 0.5 * np.cos(np.pi * x), 0.05,
                       conservative=False)
    v = check_mass(led)
    assert v.status == "fail" and v.margin < 0


def test_floor_fixture_fails(bump):
    led = BoundLedger(dict(bump.meta), [dict(r) for r in bump.rows])
    led.rows[3]["inf_v"] = 0.5 * led.meta["m0"] * led.meta["omega_star_h"]
    assert check_v_floor(led).status == "fail"


def test_halved_trace_fails_at_first_sample(bump):
    led = BoundLedger(dict(bump.meta), [dict(r, V=r["V"] / 2) for r in bump.rows])
    v = by_key(evaluate(led, ["ode_domination"]))["ode_domination"]
    assert v.status == "fail" and "V violated first at t=0" in v.detail


def test_decreasing_gamma_skips_mg_checks():
    _, led = monitored(preset("exp_decay", chi=1.0), lambda x: 1 + 0.5 * np.cos(np.pi * x), 0.05)
    verdicts = by_key(evaluate(led))
    for key in ("invariant_region", "u_bounds", "liapunov", "v_ceiling", "ode_domination"):
        assert verdicts[key].status == "skip"
        assert verdicts[key].detail.startswith("HypothesisNotMet")
    assert verdicts["mass"].status == "pass"


def test_log_concave_checks_second_u_bound():
    _, led = monitored(preset("log_concave"), lambda x: 1 + 0.9 * np.cos(np.pi * x), 0.3)
    v = by_key(evaluate(led))["u_bounds"]
    assert v.status == "pass" and "u_le_uin" in v.extra
    assert not np.all(np.isnan(led.column("U")))


def test_convex_gamma_checks_first_bound_only(bump):
    _, led = monitored(preset("power_growth", k=2), lambda x: 1 + 0.9 * np.cos(np.pi * x), 0.3)
    v = by_key(evaluate(led))["u_bounds"]
    assert v.status == "pass" and "u_le_uin" not in v.extra
    assert np.all(np.isnan(led.column("U")))


def test_short_run_not_yet_stabilized(bump):
    _, led = monitored(preset("power_growth", k=1), lambda x: 1 + 0.5 * np.cos(np.pi * x), 0.01)
    v = check_stabilization(led)
    assert v.status == "fail" and v.detail.startswith("not yet stabilized")


def test_liapunov_series_returns_energy(bump):
    E, verdict = liapunov_series(bump)
    np.testing.assert_array_equal(E, bump.column("E"))
    assert verdict.passed and "identity_residual" in verdict.extra


def test_wobble_uses_general_trace():
    gamma = preset("wobble", a=0.5, b=1)
    _, led = monitored(gamma, lambda x: 3 + 2.7 * np.cos(np.pi * x), 0.1)
    assert not led.meta["hyp_mg"] and led.meta["s_star"] is not None
    assert np.all(np.isnan(led.column("V")))
    verdicts = by_key(evaluate(led))
    assert verdicts["v_ceiling"].status == "pass"
    assert verdicts["ode_domination"].status == "pass"
    assert np.all(led.column("V_general") <= led.meta["s_star"] + 1e-9)


def test_evaluate_subset_and_once_each(bump):
    verdicts = evaluate(bump, ["mass", "liapunov", "mass"])
    assert [v.key for v in verdicts] == ["mass", "liapunov"]


def test_continuous_dependence_zero_and_negative():
    g = build_grid(1, 1.0, 16)
    sim = Simulator(g, preset("power_growth", k=1))
    x = g.axes()[0]
    u = 1 + 0.5 * np.cos(np.pi * x)
    rep = continuous_dependence_experiment(sim, u, np.cos(2 * np.pi * x), [0.0, 0.1, 0.05], T=0.05)
    assert rep.distances[-1] == 0.0 and rep.deltas[-1] == 0.0
    assert rep.monotone and rep.passed
    with pytest.raises(Negativity):
        continuous_dependence_experiment(sim, u, -10 * np.ones_like(x), [0.1], T=0.05)

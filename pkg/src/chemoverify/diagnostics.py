"""
The bound ledger: every quantitative claim evaluated on a discrete trajectory.

``Monitor`` is the run observer. It advances the comparison ODEs every step,
records one ledger row per sample, and stores the run constants (initial
extrema, s*, omega*_h, tolerances) in ``ledger.meta``. The ``check_*``
functions are pure functions of a ledger, so verdicts can be recomputed from
the serialized files alone.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import __version__
from .comparison import OdeTrace, check_domination, is_nonincreasing
from .dynamics import SimulationState, Simulator, StepControl
from .elliptic import GREEN_MAX_CELLS, omega_star_discrete, omega_star_spot
from .errors import HypothesisNotMet, Negativity, NoSStarFound, QuadratureFailure
from .grid import grad_norm_sq, h1_energy, laplacian_neumann, max_face_gradient
from .motility import SplitMotility, default_s_cap, find_s_star, split

COLUMNS = ("t", "mass", "sup_u", "inf_u", "sup_v", "inf_v", "sup_phi",
           "V", "U", "psi", "E", "dissipation", "V_general", "dE_dt", "dt")

MASS_RTOL = 1e-11
FLOOR_ATOL = 1e-10
DELTA_STAB = 1e-3
V_GENERAL_ATOL = 1e-9


@dataclass
class BoundLedger:
    meta: dict = field(default_factory=dict)
    rows: list[dict] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([row[name] for row in self.rows], dtype=float)

    def append(self, **values) -> None:
        row = {name: math.nan for name in COLUMNS}
        row.update(values)
        self.rows.append(row)


@dataclass(frozen=True)
class Verdict:
    key: str
    status: str  # "pass" | "fail" | "skip"
    margin: float
    detail: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.status == "pass"


def tolerance_constant(gamma_at_anchor: float) -> float:
    return 10.0 * (1.0 + gamma_at_anchor)


def dissipation(v: np.ndarray, sim: Simulator) -> float:
    """-int (v gamma'(v) + gamma(v)) |grad v|^2 - int gamma(v) |Delta v|^2 on the grid.

    The face coefficient is the average of the two adjacent cell values.
    """
    g = sim.grid
    gamma = sim.gamma
    coeff = v * gamma.deriv(v) + gamma(v)
    face = 0.0
    for axis, h in enumerate(g.h):
        d = np.diff(v, axis=axis) / h
        lo = [slice(None)] * v.ndim
        hi = [slice(None)] * v.ndim
        lo[axis] = slice(0, -1)
        hi[axis] = slice(1, None)
        face += float(np.sum(0.5 * (coeff[tuple(lo)] + coeff[tuple(hi)]) * d * d))
    lap = laplacian_neumann(v, g)
    return -(face + float(np.sum(gamma(v) * lap * lap))) * g.w


@dataclass
class MonitorSettings:
    v_star: float | None = None        # override the Green's-matrix floor
    s_cap: float | None = None
    record_inputs: bool = False        # keep per-step ODE inputs for oracle checks
    odes: bool = True
    energy: bool = True


class Monitor:
    """Run observer that fills a ``BoundLedger``."""

    def __init__(self, sim: Simulator, settings: MonitorSettings | None = None, meta: dict | None = None):
        self.sim = sim
        self.settings = settings or MonitorSettings()
        self.ledger = BoundLedger(meta=dict(meta or {}))
        self.traces: dict[str, OdeTrace] = {}
        self.split: SplitMotility | None = None
        self.inputs: list[tuple[float, float, float, float, float]] = []
        self._dt_max = 0.0

    # -- setup ---------------------------------------------------------------
    def on_start(self, state: SimulationState) -> None:
        sim, gamma, grid = self.sim, self.sim.gamma, self.sim.grid
        meta = self.ledger.meta
        vin_min, vin_max = state.inf_v, state.sup_v
        meta.update(
            version=__version__,
            dimension=grid.dimension,
            extent=list(grid.extent),
            cells=list(grid.cells),
            h_max=grid.h_max,
            measure=grid.measure,
            motility=gamma.describe(),
            m0=state.mass,
            vin_min=vin_min,
            vin_max=vin_max,
            uin_sup=state.sup_u,
            phi_in_sup=state.sup_phi,
            gamma_vin_min=float(gamma(vin_min)),
            gprime_vin_min=float(gamma.deriv(vin_min)),
        )
        if grid.size <= GREEN_MAX_CELLS:
            omega, method = omega_star_discrete(sim.op), "green_scan"
        else:
            omega, method = omega_star_spot(sim.op), "corner_spot"
        meta.update(omega_star_h=omega, omega_method=method)
        v_star = self.settings.v_star if self.settings.v_star is not None else state.mass * omega
        v_star = min(v_star, vin_min)
        meta["v_star"] = v_star

        mg = gamma.is_nondecreasing_on(vin_min, vin_max)
        concave = mg and gamma.is_concave_on(vin_min, vin_max)
        meta.update(hyp_mg=mg, hyp_concave=concave)

        s_cap = self.settings.s_cap or default_s_cap(vin_max)
        try:
            s_star = find_s_star(gamma, v_star, vin_max, s_cap)
            meta.update(s_star=s_star, gamma_s_star=float(gamma(s_star)), s_cap=s_cap)
            anchor = float(gamma(s_star))
        except NoSStarFound as exc:
            s_star = None
            meta.update(s_star=None, gamma_s_star=None, s_cap=s_cap, s_star_error=str(exc))
            anchor = float(gamma(vin_max))
        C = tolerance_constant(anchor)
        meta.update(tol_C=C, tol_h=C * grid.h_max ** 2)

        if self.settings.odes:
            if mg:
                self.traces["V"] = OdeTrace("V_monotone", vin_max, gamma=gamma)
                self.traces["psi"] = OdeTrace("psi", state.sup_phi, Y_inv=float(gamma(vin_min)))
            if concave:
                self.traces["U"] = OdeTrace("U_concave", state.sup_u, Y=float(gamma.deriv(vin_min)))
            # for globally nondecreasing gamma the general trace coincides with V
            if s_star is not None and not gamma.nondecreasing:
                try:
                    self.split = split(gamma, s_star, v_star, max(s_cap, s_star * 1.5))
                    self.traces["V_general"] = OdeTrace("V_general", s_star, split=self.split)
                except QuadratureFailure as exc:
                    meta["split_error"] = str(exc)
        self._record(state, None, None)

    # -- per step ------------------------------------------------------------
    def on_step(self, prev: SimulationState, state: SimulationState, dt: float, sample: bool) -> None:
        self._dt_max = max(self._dt_max, dt)
        if self.traces:
            gprime = float(np.max(self.sim.gamma.deriv(prev.v))) if "psi" in self.traces else math.nan
            for trace in self.traces.values():
                trace.advance(dt, sup_v=prev.sup_v, sup_u=prev.sup_u, sup_phi=prev.sup_phi, sup_gprime_v=gprime)
            if self.settings.record_inputs:
                self.inputs.append((dt, prev.sup_v, prev.sup_u, prev.sup_phi, gprime))
        if sample:
            for trace in self.traces.values():
                trace.record(state.t)
            self._record(state, prev, dt)

    def _record(self, state: SimulationState, prev: SimulationState | None, dt: float | None) -> None:
        row = dict(t=state.t, mass=state.mass, sup_u=state.sup_u, inf_u=state.inf_u,
                   sup_v=state.sup_v, inf_v=state.inf_v, sup_phi=state.sup_phi)
        for name, trace in self.traces.items():
            row[name] = trace.value
        if self.settings.energy:
            grid = self.sim.grid
            row["E"] = h1_energy(state.v, grid)
            if prev is not None:
                row["dissipation"] = dissipation(prev.v, self.sim)
                row["dE_dt"] = (row["E"] - h1_energy(prev.v, grid)) / dt
                row["dt"] = dt
        self.ledger.append(**row)

    def on_finish(self, state: SimulationState) -> None:
        meta = self.ledger.meta
        grid = self.sim.grid
        mean = meta["m0"] / grid.measure
        meta.update(
            t_final=state.t,
            steps=state.steps,
            dt_max_seen=self._dt_max,
            final_dev_u=float(np.max(np.abs(state.u - mean))),
            final_dev_v=float(np.max(np.abs(state.v - mean))),
            final_grad_v=max_face_gradient(state.v, grid),
        )


# ---------------------------------------------------------------------------
# checks


def check_mass(ledger: BoundLedger) -> Verdict:
    m0 = ledger.meta["m0"]
    drift = float(np.max(np.abs(ledger.column("mass") - m0)))
    allowed = MASS_RTOL * m0
    return Verdict("mass", "pass" if drift <= allowed else "fail", allowed - drift,
                   f"max |m(t) - m(0)| = {drift:.3e} (allowed {allowed:.3e})")


def check_v_floor(ledger: BoundLedger, omega_star_h: float | None = None) -> Verdict:
    meta = ledger.meta
    omega = meta["omega_star_h"] if omega_star_h is None else omega_star_h
    floor = meta["m0"] * omega - FLOOR_ATOL
    low = float(np.min(ledger.column("inf_v")))
    margin = low - floor
    return Verdict("v_floor", "pass" if margin >= 0 else "fail", margin,
                   f"min inf v = {low:.6g} vs m*omega_h = {meta['m0'] * omega:.6g} ({meta['omega_method']})")


def _require_mg(ledger: BoundLedger, what: str) -> None:
    if not ledger.meta["hyp_mg"]:
        raise HypothesisNotMet(f"{what}: gamma' >= 0 fails on [{ledger.meta['vin_min']:.6g}, "
                               f"{ledger.meta['vin_max']:.6g}]")


def check_invariant_region(ledger: BoundLedger) -> Verdict:
    _require_mg(ledger, "invariant region")
    meta = ledger.meta
    tol = meta["tol_h"]
    lo = float(np.min(ledger.column("inf_v")))
    hi = float(np.max(ledger.column("sup_v")))
    violation = max(hi - meta["vin_max"], meta["vin_min"] - lo, 0.0)
    margin = min(lo - (meta["vin_min"] - tol), (meta["vin_max"] + tol) - hi)
    return Verdict("invariant_region", "pass" if margin >= 0 else "fail", margin,
                   f"v in [{lo:.10g}, {hi:.10g}], v_in range [{meta['vin_min']:.10g}, {meta['vin_max']:.10g}], "
                   f"tol_h = {tol:.3e}", {"violation": violation})


def check_u_bounds(ledger: BoundLedger) -> Verdict:
    """Both u-bounds from initial data, plus the phi bound that comes with them."""
    _require_mg(ledger, "u bounds")
    meta = ledger.meta
    tol = meta["tol_h"]
    sup_u = float(np.max(ledger.column("sup_u")))
    sup_phi = float(np.max(ledger.column("sup_phi")))
    bound1 = meta["phi_in_sup"] / meta["gamma_vin_min"]
    margins = {"u_le_phi_bound": bound1 + tol - sup_u, "phi_le_phi_in": meta["phi_in_sup"] + tol - sup_phi}
    if meta["hyp_concave"]:
        margins["u_le_uin"] = meta["uin_sup"] + tol - sup_u
    margin = min(margins.values())
    detail = ", ".join(f"{k}: {v:.3e}" for k, v in margins.items())
    if not meta["hyp_concave"]:
        detail += " (gamma'' <= 0 fails; second bound not checked)"
    return Verdict("u_bounds", "pass" if margin >= 0 else "fail", margin, detail, margins)


def check_v_ceiling(ledger: BoundLedger) -> Verdict:
    meta = ledger.meta
    if meta.get("s_star") is None:
        raise HypothesisNotMet(f"no s* available: {meta.get('s_star_error', '')}")
    hi = float(np.max(ledger.column("sup_v")))
    margin = meta["s_star"] + meta["tol_h"] - hi
    return Verdict("v_ceiling", "pass" if margin >= 0 else "fail", margin,
                   f"max sup v = {hi:.10g} vs s* = {meta['s_star']:.10g}")


def check_elliptic_sup(ledger: BoundLedger) -> Verdict:
    gap = ledger.column("sup_u") * (1 + 1e-12) - ledger.column("sup_v")
    margin = float(np.min(gap))
    return Verdict("elliptic_sup", "pass" if margin >= 0 else "fail", margin, "sup v <= sup u at every sample")


_DOMINATION = {
    "V": ("sup_v", "V_monotone"),
    "V_general": ("sup_v", "V_general"),
    "U": ("sup_u", "U_concave"),
    "psi": ("sup_phi", "psi"),
}


def check_ode_domination(ledger: BoundLedger) -> Verdict:
    """Each enabled trace dominates its field, and the traces move the right way."""
    meta = ledger.meta
    tol = meta["tol_h"]
    t = ledger.column("t")
    margins: dict[str, float] = {}
    notes = []
    for col, (field_name, kind) in _DOMINATION.items():
        values = ledger.column(col)
        if np.all(np.isnan(values)):
            continue
        report = check_domination(t, ledger.column(field_name), values, tol)
        margins[f"{col}_domination"] = report.worst_margin
        if report.first_violation is not None:
            notes.append(f"{col} violated first at t={report.first_violation:.6g}")
        if col == "V_general":
            margins["V_general_le_s_star"] = meta["s_star"] + V_GENERAL_ATOL - float(np.max(values))
        else:
            _, rise = is_nonincreasing(values)
            margins[f"{col}_nonincreasing"] = tol - rise
    if not margins:
        raise HypothesisNotMet("no comparison ODE applies to this run")
    margin = min(margins.values())
    detail = ", ".join(f"{k}: {v:.3e}" for k, v in margins.items())
    if notes:
        detail += "; " + "; ".join(notes)
    return Verdict("ode_domination", "pass" if margin >= 0 else "fail", margin, detail, margins)


def liapunov_series(ledger: BoundLedger) -> tuple[np.ndarray, Verdict]:
    """E(t_n) and the verdict that it is nonincreasing up to C (h^2 + dt) max E.

    The dissipation-identity residual is reported alongside; its refinement
    behaviour is judged across runs by ``identity_refinement_ratio``.
    """
    _require_mg(ledger, "Liapunov decay")
    meta = ledger.meta
    E = ledger.column("E")
    tol_E = meta["tol_C"] * (meta["h_max"] ** 2 + meta["dt_max_seen"]) * float(np.max(E))
    _, rise = is_nonincreasing(E)
    residual = identity_residual(ledger)
    return E, Verdict("liapunov", "pass" if rise <= tol_E else "fail", tol_E - rise,
                      f"largest rise of E = {rise:.3e} (tol_E = {tol_E:.3e}); identity residual = {residual:.3e}",
                      {"identity_residual": residual})


def identity_residual(ledger: BoundLedger) -> float:
    """max |(E_{n+1} - E_n)/dt - D(t_n)| over full-size steps."""
    dt = ledger.column("dt")
    rate = ledger.column("dE_dt")
    D = ledger.column("dissipation")
    ok = np.isfinite(rate) & np.isfinite(D)
    if not np.any(ok):
        return math.nan
    # the last step is shortened to land on T; tiny steps only amplify roundoff in E
    ok &= dt >= 0.5 * np.nanmax(dt)
    return float(np.max(np.abs(rate[ok] - D[ok])))


def identity_refinement_ratio(coarse: BoundLedger, fine: BoundLedger) -> float:
    return identity_residual(coarse) / identity_residual(fine)


def stabilization_distance(ledger: BoundLedger) -> float:
    meta = ledger.meta
    return meta["final_dev_u"] + meta["final_dev_v"] + meta["final_grad_v"]


def check_stabilization(ledger: BoundLedger, delta: float = DELTA_STAB) -> Verdict:
    meta = ledger.meta
    dist = stabilization_distance(ledger)
    status = "pass" if dist <= delta else "fail"
    detail = (f"|u - m/|Omega||_inf = {meta['final_dev_u']:.3e}, |v - m/|Omega||_inf = {meta['final_dev_v']:.3e}, "
              f"max |grad v| = {meta['final_grad_v']:.3e} at t = {meta['t_final']:.6g}")
    if status == "fail":
        detail = "not yet stabilized: " + detail
    return Verdict("stabilization", status, delta - dist, detail)


CHECKS: dict[str, Callable[[BoundLedger], Verdict]] = {
    "mass": check_mass,
    "v_floor": check_v_floor,
    "elliptic_sup": check_elliptic_sup,
    "invariant_region": check_invariant_region,
    "u_bounds": check_u_bounds,
    "v_ceiling": check_v_ceiling,
    "ode_domination": check_ode_domination,
    "liapunov": lambda ledger: liapunov_series(ledger)[1],
    "stabilization": check_stabilization,
}


def evaluate(ledger: BoundLedger, enabled=None, delta_stab: float = DELTA_STAB) -> list[Verdict]:
    """Run every enabled check; failed hypotheses become explicit skips."""
    names = list(CHECKS) if enabled is None else [n for n in CHECKS if n in set(enabled)]
    verdicts = []
    for name in names:
        try:
            if name == "stabilization":
                verdicts.append(check_stabilization(ledger, delta_stab))
            else:
                verdicts.append(CHECKS[name](ledger))
        except HypothesisNotMet as exc:
            verdicts.append(Verdict(name, "skip", math.nan, f"HypothesisNotMet: {exc}"))
    return verdicts


# ---------------------------------------------------------------------------
# continuous dependence


@dataclass(frozen=True)
class DependenceReport:
    deltas: tuple[float, ...]
    distances: tuple[float, ...]
    monotone: bool
    ratio_spread: float     # max(D/delta) / min(D/delta) over nonzero deltas
    bounded: bool

    @property
    def passed(self) -> bool:
        return self.monotone and self.bounded


def paired_distance(sim: Simulator, u_a: np.ndarray, u_b: np.ndarray, T: float, sigma: float = 0.9) -> float:
    """max over steps of |u_a - u_b|_inf + |v_a - v_b|_inf, stepping both runs in lockstep."""
    ctrl = StepControl(T=T, sigma=sigma)
    a = sim.init_state(u_a)
    b = sim.init_state(u_b)
    dist = float(np.max(np.abs(a.u - b.u)) + np.max(np.abs(a.v - b.v)))
    while a.t < T:
        dt = min(sim.stable_dt(a, ctrl), sim.stable_dt(b, ctrl), T - a.t)
        a = sim.step(a, dt)
        b = sim.step(b, dt)
        dist = max(dist, float(np.max(np.abs(a.u - b.u)) + np.max(np.abs(a.v - b.v))))
    return dist


def continuous_dependence_experiment(sim: Simulator, u_in: np.ndarray, perturbation: np.ndarray,
                                     deltas, T: float, spread_limit: float = 2.0) -> DependenceReport:
    """D(delta) for u_in + delta * perturbation, each paired with the base run."""
    deltas = tuple(sorted((float(d) for d in deltas), reverse=True))
    for d in deltas:
        if np.min(u_in + d * perturbation) < 0:
            raise Negativity(f"perturbation with delta={d} makes the initial data negative")
    distances = tuple(0.0 if d == 0 else paired_distance(sim, u_in, u_in + d * perturbation, T) for d in deltas)
    monotone = all(distances[i + 1] <= distances[i] for i in range(len(distances) - 1))
    ratios = [D / d for D, d in zip(distances, deltas) if d > 0]
    spread = max(ratios) / min(ratios) if ratios and min(ratios) > 0 else math.inf if ratios else 1.0
    return DependenceReport(deltas, distances, monotone, spread, spread <= spread_limit)

"""
Explicit conservative time stepping for u_t = Delta(u gamma(v)), v = A^{-1} u.

One step is ``u+ = u + dt * Delta_h(u gamma(v))`` followed by a fresh elliptic
solve for v. The stencil has zero column sums, so mass is conserved up to
roundoff, and under ``stable_dt`` every new cell value is a nonnegative
combination of old ones.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Protocol, Sequence

import numpy as np

from .elliptic import HelmholtzOperator
from .errors import DtUnderflow, Negativity, NonConvergence, SchemeFailure, ZeroMass
from .grid import Grid, laplacian_neumann
from .motility import MotilityFunction

NEGATIVITY_TOL = 1e-13


@dataclass(frozen=True)
class SimulationState:
    t: float
    u: np.ndarray = field(repr=False)
    v: np.ndarray = field(repr=False)
    phi: np.ndarray = field(repr=False)
    steps: int
    mass: float
    sup_u: float
    inf_u: float
    sup_v: float
    inf_v: float
    sup_phi: float


@dataclass(frozen=True)
class StepControl:
    T: float
    sigma: float = 0.9
    dt_min: float = 1e-12
    dt_max: float = math.inf
    max_steps: int = 100_000_000
    cadence: int | None = None

    def __post_init__(self):
        if not (0 < self.sigma <= 1):
            raise ValueError(f"CFL safety factor must lie in (0, 1], got {self.sigma}")
        if not (0 < self.dt_min <= self.dt_max):
            raise ValueError(f"need 0 < dt_min <= dt_max, got {self.dt_min}, {self.dt_max}")
        if self.T < 0:
            raise ValueError("end time must be nonnegative")
        if self.cadence is not None and self.cadence < 1:
            raise ValueError("cadence must be a positive step count")


class Observer(Protocol):
    def on_start(self, state: SimulationState) -> None: ...

    def on_step(self, prev: SimulationState, state: SimulationState, dt: float, sample: bool) -> None: ...

    def on_finish(self, state: SimulationState) -> None: ...


@dataclass
class Trajectory:
    initial: SimulationState
    final: SimulationState
    status: str = "completed"
    error: str | None = None
    error_kind: str | None = None
    cadence: int = 1
    sample_times: list[float] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.error is None


class Simulator:
    """Couples a grid, a motility function and the factorized Helmholtz operator.

    ``conservative=False`` swaps in a leaky boundary stencil; it exists only to
    build negative fixtures for the verification harness.
    """

    def __init__(self, grid: Grid, gamma: MotilityFunction, solver: str = "direct",
                 conservative: bool = True, op: HelmholtzOperator | None = None):
        self.grid = grid
        self.gamma = gamma
        self.op = op if op is not None else HelmholtzOperator(grid, solver)
        self.conservative = conservative

    def _state(self, t: float, u: np.ndarray, v: np.ndarray, steps: int) -> SimulationState:
        phi = u * self.gamma(v)
        if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(v))):
            raise SchemeFailure(f"non-finite values at t={t!r}")
        return SimulationState(
            t=t, u=u, v=v, phi=phi, steps=steps,
            mass=float(np.sum(u)) * self.grid.w,
            sup_u=float(u.max()), inf_u=float(u.min()),
            sup_v=float(v.max()), inf_v=float(v.min()),
            sup_phi=float(phi.max()),
        )

    def init_state(self, u_in: np.ndarray) -> SimulationState:
        u = np.array(u_in, dtype=float)
        if u.shape != self.grid.shape:
            raise ValueError(f"initial data shape {u.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(u)):
            raise ValueError("initial data must be finite")
        if u.min() < 0:
            raise Negativity(f"initial data has min {u.min()!r} < 0")
        if np.sum(u) * self.grid.w <= 0:
            raise ZeroMass("initial data has zero mass")
        return self._state(0.0, u, self.op.solve(u), 0)

    def stable_dt(self, state: SimulationState, ctrl: StepControl) -> float:
        """sigma h^2 / (2 dim max gamma(v)), clamped to [dt_min, dt_max]."""
        gmax = float(np.max(self.gamma(state.v)))
        dt = ctrl.sigma * self.grid.h_min ** 2 / (2 * self.grid.dimension * gmax)
        if not (dt >= ctrl.dt_min):
            raise DtUnderflow(f"stable dt {dt!r} < dt_min {ctrl.dt_min!r} at t={state.t!r} "
                              f"(max gamma(v) = {gmax!r})")
        return min(dt, ctrl.dt_max)

    def flux_divergence(self, phi: np.ndarray) -> np.ndarray:
        lap = laplacian_neumann(phi, self.grid)
        if not self.conservative:
            # leak a tenth of the first cell's flux through the boundary face
            h = self.grid.h[0]
            lap[(0,) * phi.ndim] -= 0.1 * phi[(0,) * phi.ndim] / (h * h)
        return lap

    def step(self, state: SimulationState, dt: float) -> SimulationState:
        u = state.u + dt * self.flux_divergence(state.phi)
        floor = -NEGATIVITY_TOL * state.sup_u
        umin = float(u.min())
        if umin < floor:
            raise SchemeFailure(f"u dropped to {umin!r} at t={state.t + dt!r}")
        v = self.op.solve(u)
        return self._state(state.t + dt, u, v, state.steps + 1)

    def run(self, state: SimulationState, ctrl: StepControl,
            observers: Sequence[Observer] = ()) -> Trajectory:
        """Advance to ``ctrl.T`` (or ``ctrl.max_steps``), notifying observers.

        Observers see every step; ``sample`` is set at the cadence and on the
        last step. Runtime failures halt the run and are reported on the
        returned trajectory rather than raised.
        """
        for ob in observers:
            ob.on_start(state)
        traj = Trajectory(initial=state, final=state, sample_times=[state.t])
        try:
            if state.t < ctrl.T:
                dt0 = self.stable_dt(state, ctrl)
                cadence = ctrl.cadence or max(1, math.ceil(ctrl.T / (1000 * dt0)))
                traj.cadence = cadence
                n = 0
                while state.t < ctrl.T and n < ctrl.max_steps:
                    dt = self.stable_dt(state, ctrl)
                    remaining = ctrl.T - state.t
                    last_step = dt >= remaining
                    dt = remaining if last_step else dt
                    new = self.step(state, dt)
                    if last_step:
                        new = replace(new, t=ctrl.T)
                    n += 1
                    sample = last_step or n % cadence == 0 or n >= ctrl.max_steps
                    for ob in observers:
                        ob.on_step(state, new, dt, sample)
                    if sample:
                        traj.sample_times.append(new.t)
                    state = new
                if state.t < ctrl.T:
                    traj.status = "max_steps"
        except (DtUnderflow, SchemeFailure, NonConvergence) as exc:
            traj.status = "halted"
            traj.error = str(exc)
            traj.error_kind = type(exc).__name__
        traj.final = state
        for ob in observers:
            ob.on_finish(state)
        return traj

"""
Spatially flat supersolutions driven by the simulation's own sup-norms.

Each trace integrates one scalar ODE with classical RK4, one substep per PDE
step, with the coupling norms frozen at their start-of-step values:

* ``V_monotone``: dV/dt = (gamma(sup v) - gamma(V)) V,            V(0) = sup v_in
* ``V_general``:  dV/dt = [gamma(s*) + gamma_i(sup v) - gamma(V)] V + Gamma_d(V),  V(0) = s*
* ``U_concave``:  dU/dt = Y U (sup u - U),                        U(0) = sup u_in
* ``psi``:        dpsi/dt = (sup gamma'(v) / Y_inv) psi (sup phi - psi),  psi(0) = sup u_in gamma(v_in)
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .motility import MotilityFunction, SplitMotility

KINDS = ("V_monotone", "V_general", "U_concave", "psi")


def rk4(f: Callable[[float], float], y: float, dt: float) -> float:
    """One classical RK4 step of the autonomous scalar ODE y' = f(y)."""
    k1 = f(y)
    k2 = f(y + 0.5 * dt * k1)
    k3 = f(y + 0.5 * dt * k2)
    k4 = f(y + dt * k3)
    return y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _scalar(fn, s: float) -> float:
    return float(fn(s))


def advance_V_monotone(V: float, dt: float, sup_v: float, gamma: MotilityFunction) -> float:
    g_sup = _scalar(gamma, sup_v)
    return rk4(lambda y: (g_sup - _scalar(gamma, y)) * y, V, dt)


def advance_V_general(V: float, dt: float, sup_v: float, split: SplitMotility) -> float:
    gamma = split.gamma
    g_star = split.gamma_at_s_star
    # gamma_i and Gamma_d vanish at and below s*, which is where V sits in practice
    gi = split.gamma_i(sup_v) if sup_v > split.s_star else 0.0
    coeff = g_star + gi

    def f(y):
        Gd = split.Gamma_d(y) if y > split.s_star else 0.0
        return (coeff - _scalar(gamma, y)) * y + Gd

    return rk4(f, V, dt)


def advance_U(U: float, dt: float, sup_u: float, Y: float) -> float:
    return rk4(lambda y: Y * y * (sup_u - y), U, dt)


def advance_psi(psi: float, dt: float, sup_phi: float, sup_gprime_v: float, Y_inv: float) -> float:
    rate = sup_gprime_v / Y_inv
    return rk4(lambda y: rate * y * (sup_phi - y), psi, dt)


@dataclass
class OdeTrace:
    """Time samples of one comparison ODE, advanced alongside the PDE."""
    kind: str
    value: float
    gamma: MotilityFunction | None = None
    split: SplitMotility | None = None
    Y: float = 0.0
    Y_inv: float = 1.0
    times: list[float] = field(default_factory=list)
    values: list[float] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown trace kind {self.kind!r}")
        if not self.times:
            self.times.append(0.0)
            self.values.append(self.value)

    def advance(self, dt: float, sup_v: float = math.nan, sup_u: float = math.nan,
                sup_phi: float = math.nan, sup_gprime_v: float = math.nan) -> float:
        if self.kind == "V_monotone":
            self.value = advance_V_monotone(self.value, dt, sup_v, self.gamma)
        elif self.kind == "V_general":
            self.value = advance_V_general(self.value, dt, sup_v, self.split)
        elif self.kind == "U_concave":
            self.value = advance_U(self.value, dt, sup_u, self.Y)
        else:
            self.value = advance_psi(self.value, dt, sup_phi, sup_gprime_v, self.Y_inv)
        return self.value

    def record(self, t: float) -> None:
        if t <= self.times[-1]:
            raise ValueError(f"trace samples must increase in time ({t} after {self.times[-1]})")
        self.times.append(t)
        self.values.append(self.value)


@dataclass(frozen=True)
class DominationReport:
    """Margins ode(t) + slack - sup_field(t); negative entries are violations."""
    slack: float
    worst_margin: float
    worst_time: float
    first_violation: float | None
    samples: int

    @property
    def ok(self) -> bool:
        return self.first_violation is None


def check_domination(times, field_sup, ode_values, slack: float) -> DominationReport:
    times = np.asarray(times, dtype=float)
    margins = np.asarray(ode_values, dtype=float) + slack - np.asarray(field_sup, dtype=float)
    if margins.size == 0:
        return DominationReport(slack, math.inf, math.nan, None, 0)
    k = int(np.argmin(margins))
    bad = np.flatnonzero(margins < 0)
    first = float(times[bad[0]]) if bad.size else None
    return DominationReport(slack, float(margins[k]), float(times[k]), first, int(margins.size))


def is_nonincreasing(values, tol: float = 0.0) -> tuple[bool, float]:
    """Whether successive values never rise by more than ``tol``; also the largest rise."""
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        return True, 0.0
    rise = float(np.max(np.diff(values)))
    return rise <= tol, max(rise, 0.0)

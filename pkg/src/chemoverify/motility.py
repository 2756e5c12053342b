"""
Motility functions, the s* anchor, and the monotone splitting of gamma.

Above the anchor s*, gamma is split into a nondecreasing part gamma_i (the
integral of the positive part of gamma') and a nonincreasing part gamma_d
(the integral of the negative part), with Gamma_d the antiderivative of
gamma_d anchored at s*. All three vanish on [v*, s*].
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import MotilityError, NoSStarFound, QuadratureFailure

EPS_OPT = 1e-6
EPS_QUAD = 1e-8
MEMO_LEVELS = 14
PROBE_POINTS = 1000
MAX_SUBINTERVALS = 2 ** 22

Fn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class MotilityFunction:
    name: str
    params: dict
    eval: Fn
    deriv: Fn
    deriv2: Fn
    nondecreasing: bool = False
    claims_unbounded: bool = False
    concave: bool = False

    def __call__(self, s):
        return self.eval(s)

    def is_nondecreasing_on(self, lo: float, hi: float, points: int = PROBE_POINTS) -> bool:
        """gamma' >= 0 on [lo, hi]: analytic flag first, then a dense probe."""
        if self.nondecreasing:
            return True
        s = np.linspace(lo, hi, points) if hi > lo else np.array([lo])
        return bool(np.all(self.deriv(s) >= 0.0))

    def is_concave_on(self, lo: float, hi: float, points: int = PROBE_POINTS) -> bool:
        if self.concave:
            return True
        s = np.linspace(lo, hi, points) if hi > lo else np.array([lo])
        return bool(np.all(self.deriv2(s) <= 0.0))

    def describe(self) -> str:
        args = ", ".join(f"{k}={v!r}" for k, v in sorted(self.params.items()))
        return f"{self.name}({args})"


def _positive(name: str, value) -> float:
    if value is None:
        raise MotilityError(f"{name} is required")
    value = float(value)
    if not (math.isfinite(value) and value > 0):
        raise MotilityError(f"{name} must be positive, got {value}")
    return value


def _power_decay(k):
    return (lambda s: np.power(s, -k),
            lambda s: -k * np.power(s, -k - 1),
            lambda s: k * (k + 1) * np.power(s, -k - 2))


def _power_growth(k):
    return (lambda s: np.power(s, k),
            lambda s: k * np.power(s, k - 1),
            lambda s: k * (k - 1) * np.power(s, k - 2))


def _exp(c):
    return (lambda s: np.exp(c * s),
            lambda s: c * np.exp(c * s),
            lambda s: c * c * np.exp(c * s))


def _wobble(a, b):
    return (lambda s: s * (1.0 + a * np.sin(b * s)),
            lambda s: 1.0 + a * np.sin(b * s) + a * b * s * np.cos(b * s),
            lambda s: 2.0 * a * b * np.cos(b * s) - a * b * b * s * np.sin(b * s))


PRESETS = ("power_decay", "power_growth", "exp_growth", "exp_decay", "log_concave", "sqrt", "wobble")

# parameters each preset accepts, with defaults (None = required)
PRESET_PARAMS = {
    "power_decay": {"k": None},
    "power_growth": {"k": None},
    "exp_growth": {"chi": None},
    "exp_decay": {"chi": None},
    "log_concave": {},
    "sqrt": {},
    "wobble": {"a": 0.5, "b": 1.0},
}


def preset(name: str, **params) -> MotilityFunction:
    """Build one of the named motility presets with analytic derivatives."""
    if name not in PRESET_PARAMS:
        raise MotilityError(f"unknown motility preset {name!r}; choose from {', '.join(PRESETS)}")
    allowed = PRESET_PARAMS[name]
    extra = set(params) - set(allowed)
    if extra:
        raise MotilityError(f"preset {name!r} does not take parameters {sorted(extra)}")
    p = {key: params.get(key, default) for key, default in allowed.items()}

    if name == "power_decay":
        k = _positive("k", p["k"])
        fns, flags = _power_decay(k), dict()
    elif name == "power_growth":
        k = _positive("k", p["k"])
        fns, flags = _power_growth(k), dict(nondecreasing=True, claims_unbounded=True, concave=k <= 1)
    elif name == "exp_growth":
        chi = _positive("chi", p["chi"])
        fns, flags = _exp(chi), dict(nondecreasing=True, claims_unbounded=True)
    elif name == "exp_decay":
        chi = _positive("chi", p["chi"])
        fns, flags = _exp(-chi), dict()
    elif name == "log_concave":
        fns = (np.log1p, lambda s: 1.0 / (1.0 + s), lambda s: -1.0 / (1.0 + s) ** 2)
        flags = dict(nondecreasing=True, claims_unbounded=True, concave=True)
    elif name == "sqrt":
        fns = (np.sqrt, lambda s: 0.5 / np.sqrt(s), lambda s: -0.25 * np.power(s, -1.5))
        flags = dict(nondecreasing=True, claims_unbounded=True, concave=True)
    else:
        a, b = p["a"], p["b"]
        a = _positive("a", a)
        b = _positive("b", b)
        if a >= 1.0:
            raise MotilityError(f"wobble needs 0 < a < 1 for gamma > 0, got a={a}")
        fns, flags = _wobble(a, b), dict(claims_unbounded=True)
    p = {k: float(v) for k, v in p.items()}
    return MotilityFunction(name, p, *fns, **flags)


# ---------------------------------------------------------------------------
# s* search


def _golden_max(f: Callable[[float], float], a: float, b: float, tol: float) -> float:
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        # ties move right so the largest maximizer wins
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def largest_maximizer(gamma: MotilityFunction, lo: float, hi: float,
                      tol: float = EPS_OPT, samples: int | None = None) -> float:
    """Largest s in [lo, hi] where gamma attains its maximum, to within ``tol``."""
    if samples is None:
        samples = min(max(4097, int(256 * (hi - lo)) + 1), 2 ** 18 + 1)
    s = np.linspace(lo, hi, samples)
    g = gamma(s)
    top = g.max()
    k = int(np.flatnonzero(g >= top - 1e-14 * abs(top))[-1])
    if k == samples - 1:
        return hi
    left = s[max(k - 1, 0)]
    right = s[k + 1]
    best = _golden_max(lambda x: float(gamma(x)), left, right, tol)
    # the refined point must not lose to the lattice point it started from
    return best if float(gamma(best)) >= float(g[k]) else float(s[k])


def default_s_cap(vin_sup: float) -> float:
    return max(1e3, 100.0 * vin_sup)


def find_s_star(gamma: MotilityFunction, v_star: float, vin_sup: float,
                s_cap: float | None = None, tol: float = EPS_OPT) -> float:
    """Anchor s* >= vin_sup with gamma(s*) = max of gamma over [v_star, s*].

    Scans [v_star, j * vin_sup] for j = 1, 2, ... and returns the largest
    maximizer of the first interval whose largest maximizer reaches vin_sup.
    """
    if not (0 < v_star <= vin_sup):
        raise ValueError(f"need 0 < v_star <= vin_sup, got {v_star}, {vin_sup}")
    if s_cap is None:
        s_cap = default_s_cap(vin_sup)
    if s_cap < vin_sup:
        raise ValueError("s_cap below vin_sup")
    j = 1
    while True:
        hi = min(j * vin_sup, s_cap)
        s_j = largest_maximizer(gamma, v_star, hi, tol)
        if s_j >= vin_sup:
            return s_j
        if hi >= s_cap:
            raise NoSStarFound(
                f"{gamma.describe()}: largest maximizer on [{v_star:g}, {s_cap:g}] is {s_j:g} < {vin_sup:g}")
        j += 1


# ---------------------------------------------------------------------------
# quadrature


def adaptive_simpson(f, a, b, tol: float, max_depth: int = 60, indexed: bool = False) -> np.ndarray:
    """Vectorized adaptive Simpson over many intervals at once.

    ``a`` and ``b`` are arrays of interval endpoints and every interval gets the
    absolute tolerance ``tol``. ``f(t)`` must accept arrays; with
    ``indexed=True`` it is called as ``f(t, idx)`` where ``idx`` gives the
    original interval each abscissa belongs to.
    """
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    shape = a.shape
    a = a.ravel().copy()
    b = b.ravel().copy()
    owner = np.arange(a.size)
    g = (lambda t, idx: f(t, idx)) if indexed else (lambda t, idx: f(t))
    result = np.zeros(a.size)
    m = 0.5 * (a + b)
    fa, fm, fb = g(a, owner), g(m, owner), g(b, owner)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    eps = np.full(a.size, float(tol))
    for _ in range(max_depth):
        if owner.size > MAX_SUBINTERVALS:
            break
        flm = g(0.5 * (a + m), owner)
        frm = g(0.5 * (m + b), owner)
        left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
        right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
        delta = left + right - whole
        if not np.all(np.isfinite(delta)):
            raise QuadratureFailure("integrand is not finite on the interval")
        done = np.abs(delta) <= 15.0 * eps
        np.add.at(result, owner[done], (left + right + delta / 15.0)[done])
        keep = ~done
        if not np.any(keep):
            return result.reshape(shape)
        owner = np.concatenate([owner[keep], owner[keep]])
        a, b = np.concatenate([a[keep], m[keep]]), np.concatenate([m[keep], b[keep]])
        fa, fb = np.concatenate([fa[keep], fm[keep]]), np.concatenate([fm[keep], fb[keep]])
        fm = np.concatenate([flm[keep], frm[keep]])
        whole = np.concatenate([left[keep], right[keep]])
        eps = np.concatenate([eps[keep], eps[keep]]) / 2.0
        m = 0.5 * (a + b)
    raise QuadratureFailure(f"adaptive Simpson did not converge ({owner.size} subintervals left)")


# ---------------------------------------------------------------------------
# splitting


def _pos(g):
    return np.maximum(g, 0.0)


def _neg(g):
    return np.minimum(g, 0.0)


def _increments(d: Fn, a: np.ndarray, b: np.ndarray, tol: float):
    """Per-interval integrals of (gamma')_+, -(gamma')_- and (b - t) * (-(gamma')_-)."""
    gi = adaptive_simpson(lambda t: _pos(d(t)), a, b, tol)
    gd = adaptive_simpson(lambda t: _neg(d(t)), a, b, tol)
    weighted = adaptive_simpson(lambda t, idx: (b[idx] - t) * _neg(d(t)), a, b, tol, indexed=True)
    return gi, gd, weighted


@dataclass(frozen=True)
class SplitMotility:
    """gamma = gamma(s*) + gamma_i + gamma_d above s*, all pieces zero below.

    Cumulative integrals are tabulated at construction on a lattice anchored at
    s*. Evaluation between lattice nodes adds one local adaptive-Simpson
    integral, so values keep the full quadrature accuracy.
    """
    gamma: MotilityFunction
    s_star: float
    v_star: float
    s_cap: float
    eps_quad: float
    nodes: np.ndarray = field(repr=False)
    gi_nodes: np.ndarray = field(repr=False)
    gd_nodes: np.ndarray = field(repr=False)
    Gd_nodes: np.ndarray = field(repr=False)

    @property
    def gamma_at_s_star(self) -> float:
        return float(self.gamma(self.s_star))

    def evaluate(self, s):
        """(gamma_i, gamma_d, Gamma_d) at ``s``."""
        s = np.asarray(s, dtype=float)
        scalar = s.ndim == 0
        s = np.atleast_1d(s)
        gi = np.zeros_like(s)
        gd = np.zeros_like(s)
        Gd = np.zeros_like(s)
        above = s > self.s_star
        if np.any(above):
            x = s[above]
            k = np.clip(np.searchsorted(self.nodes, x, side="right") - 1, 0, self.nodes.size - 1)
            a = self.nodes[k]
            dgi, dgd, w = _increments(self.gamma.deriv, a, x, self.eps_quad / 4.0)
            gi[above] = self.gi_nodes[k] + dgi
            gd[above] = self.gd_nodes[k] + dgd
            Gd[above] = self.Gd_nodes[k] + self.gd_nodes[k] * (x - a) + w
        if scalar:
            return float(gi[0]), float(gd[0]), float(Gd[0])
        return gi, gd, Gd

    def gamma_i(self, s):
        return self.evaluate(s)[0]

    def gamma_d(self, s):
        return self.evaluate(s)[1]

    def Gamma_d(self, s):
        return self.evaluate(s)[2]

    def G(self, s):
        """Gamma_d(s) - s gamma_d(s); nondecreasing above s*."""
        _, gd, Gd = self.evaluate(s)
        return Gd - np.asarray(s, dtype=float) * gd


def split(gamma: MotilityFunction, s_star: float, v_star: float, s_cap: float | None = None,
          eps_quad: float = EPS_QUAD, levels: int = MEMO_LEVELS) -> SplitMotility:
    """Tabulate gamma_i, gamma_d and Gamma_d on [s*, s_cap] and return the split."""
    if s_cap is None:
        s_cap = default_s_cap(s_star)
    if not (0 < v_star <= s_star < s_cap):
        raise ValueError(f"need 0 < v_star <= s_star < s_cap, got {v_star}, {s_star}, {s_cap}")
    spacing = (s_cap - v_star) / 2 ** levels
    count = max(int(math.ceil((s_cap - s_star) / spacing)), 1)
    nodes = s_star + spacing * np.arange(count + 1)
    a, b = nodes[:-1], nodes[1:]
    gi, gd, weighted = _increments(gamma.deriv, a, b, eps_quad / (4.0 * count))
    gi_nodes = _kahan_cumsum(gi)
    gd_nodes = _kahan_cumsum(gd)
    # int_a^b gamma_d = gamma_d(a) (b - a) + int_a^b (b - t) min(gamma'(t), 0) dt
    Gd_nodes = _kahan_cumsum(gd_nodes[:-1] * (b - a) + weighted)
    return SplitMotility(gamma, float(s_star), float(v_star), float(s_cap), float(eps_quad),
                         nodes, gi_nodes, gd_nodes, Gd_nodes)


def _kahan_cumsum(x: np.ndarray) -> np.ndarray:
    """Compensated running sum with a leading zero."""
    out = np.empty(x.size + 1)
    out[0] = 0.0
    total = comp = 0.0
    for i, xi in enumerate(x.tolist(), start=1):
        y = xi - comp
        t = total + y
        comp = (t - total) - y
        total = t
        out[i] = total
    return out

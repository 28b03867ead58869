"""Minimal-norm steering of the connector through the fluid amplitudes.

For ``dr/dt = -grad Phi(r) + S(r) z`` the control that makes ``r`` follow a
path ``Gamma`` is ``z = S^+(Gamma) (Gamma' + grad Phi(Gamma))`` with the
pseudoinverse ``S^+ = S^T (S S^T)^-1``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import solve_ivp

from .potentials import PotentialSpec, grad_phi
from .spectral_fluid import FluidParams, ModeSet, stokes_columns

__all__ = [
    "DegenerateStokesError",
    "PlanningError",
    "ConditioningWarning",
    "ControlBoundWarning",
    "RANK_RTOL",
    "StokesMatrix",
    "PathPlan",
    "ControlSignal",
    "stokes_matrix",
    "gram_inverse",
    "min_norm_solve",
    "plan_path",
    "control_bound",
    "synthesize_control",
    "track",
    "verify_tracking",
]

RANK_RTOL = 1e-10
COND_WARN = 1e8


class DegenerateStokesError(ValueError):
    pass


class PlanningError(ValueError):
    pass


class ConditioningWarning(RuntimeWarning):
    pass


class ControlBoundWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class StokesMatrix:
    entries: np.ndarray
    r: np.ndarray
    rank2: bool
    cond: float

    @classmethod
    def from_entries(cls, entries, r=None) -> "StokesMatrix":
        entries = np.asarray(entries, dtype=float)
        if entries.ndim != 2 or entries.shape[0] != 2:
            raise ValueError("Stokes matrix must be 2 x N")
        sv = np.linalg.svd(entries, compute_uv=False)
        smax = sv[0] if len(sv) else 0.0
        rank2 = len(sv) == 2 and smax > 0 and sv[1] > RANK_RTOL * smax
        cond = float(smax / sv[1]) if len(sv) == 2 and sv[1] > 0 else math.inf
        return cls(entries, None if r is None else np.asarray(r, float), bool(rank2), cond)


def stokes_matrix(ms: ModeSet, fp: FluidParams, r) -> StokesMatrix:
    """Columns ``sin(lam k_j.r) k_j^perp / |k_j|``."""
    r = np.asarray(r, dtype=float).reshape(2)
    return StokesMatrix.from_entries(stokes_columns(ms, fp, r), r)


def _as_stokes(S) -> StokesMatrix:
    return S if isinstance(S, StokesMatrix) else StokesMatrix.from_entries(S)


def gram_inverse(S) -> np.ndarray:
    """``(S S^T)^-1`` from the 2 x 2 adjugate of the Gram matrix."""
    S = _as_stokes(S)
    if not S.rank2:
        raise DegenerateStokesError("degenerate Stokes matrix")
    if S.cond > COND_WARN:
        warnings.warn(f"Stokes matrix condition number {S.cond:.3g}", ConditioningWarning, stacklevel=2)
    s1, s2 = S.entries
    a, b, d = s1 @ s1, s1 @ s2, s2 @ s2
    det = a * d - b * b
    return np.array([[d, -b], [-b, a]]) / det


def min_norm_solve(S, b) -> np.ndarray:
    """Minimal-norm ``z`` with ``S z = b``."""
    S = _as_stokes(S)
    return S.entries.T @ (gram_inverse(S) @ np.asarray(b, dtype=float))


# path planning ----------------------------------------------------------------


def _segment_distance(p, q) -> float:
    d = q - p
    dd = d @ d
    if dd == 0:
        return float(np.hypot(*p))
    s = np.clip(-(p @ d) / dd, 0.0, 1.0)
    return float(np.hypot(*(p + s * d)))


@dataclass
class PathPlan:
    """At most two unit-speed line segments inside the annulus ``[eps1, sqrt(2) R0]``."""

    segments: list
    eps1: float
    R0: float
    lengths: np.ndarray = field(init=False)
    total_time: float = field(init=False)

    def __post_init__(self):
        self.segments = [(np.asarray(a, float), np.asarray(b, float)) for a, b in self.segments]
        self.lengths = np.array([np.hypot(*(b - a)) for a, b in self.segments])
        self.total_time = float(self.lengths.sum())

    @property
    def breakpoints(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.lengths)])

    def _locate(self, t):
        t = np.asarray(t, dtype=float)
        bp = self.breakpoints
        i = np.clip(np.searchsorted(bp, t, side="right") - 1, 0, len(self.segments) - 1)
        return t, i, bp

    def position(self, t) -> np.ndarray:
        if not self.segments:
            raise ValueError("empty plan")
        t, i, bp = self._locate(t)
        starts = np.array([a for a, _ in self.segments])
        vel = self._velocities()
        return starts[i] + (t - bp[i])[..., None] * vel[i]

    def velocity(self, t) -> np.ndarray:
        t, i, _ = self._locate(t)
        return self._velocities()[i]

    def _velocities(self):
        return np.array([(b - a) / L for (a, b), L in zip(self.segments, self.lengths)])

    def to_dict(self) -> dict:
        return {
            "segments": [[a.tolist(), b.tolist()] for a, b in self.segments],
            "eps1": self.eps1,
            "R0": self.R0,
            "total_time": self.total_time,
        }


def plan_path(r0, r_star, eps1: float, R0: float, angle_grid: int = 720, radius_grid: int = 32) -> PathPlan:
    """Connect two annulus points by one segment, or two via a waypoint.

    The waypoint is first tried on the mid-radius circle along the angular
    bisector; if that dips out of the annulus, a grid of angles and radii is
    searched for the shortest feasible two-segment path.
    """
    r0 = np.asarray(r0, float).reshape(2)
    r_star = np.asarray(r_star, float).reshape(2)
    outer = math.sqrt(2.0) * R0
    if not 0 < eps1 < outer:
        raise ValueError("need 0 < eps1 < sqrt(2) R0")
    tol = 1e-12 * outer
    for p in (r0, r_star):
        rho = np.hypot(*p)
        if rho < eps1 - tol or rho > outer + tol:
            raise PlanningError(f"endpoint {p.tolist()} outside annulus [{eps1}, {outer}]")

    def ok(p, q):
        return _segment_distance(p, q) >= eps1 - tol and max(np.hypot(*p), np.hypot(*q)) <= outer + tol

    if np.array_equal(r0, r_star):
        return PathPlan([], eps1, R0)
    if ok(r0, r_star):
        return PathPlan([(r0, r_star)], eps1, R0)
    mid = 0.5 * (eps1 + outer)
    a0, a1 = math.atan2(r0[1], r0[0]), math.atan2(r_star[1], r_star[0])
    bis = a0 + 0.5 * math.remainder(a1 - a0, 2 * math.pi)
    w = mid * np.array([math.cos(bis), math.sin(bis)])
    if ok(r0, w) and ok(w, r_star):
        return PathPlan([(r0, w), (w, r_star)], eps1, R0)
    best, best_len = None, math.inf
    for rad in np.linspace(eps1, outer, radius_grid):
        for ang in np.linspace(0.0, 2 * math.pi, angle_grid, endpoint=False):
            w = rad * np.array([math.cos(ang), math.sin(ang)])
            length = np.hypot(*(w - r0)) + np.hypot(*(r_star - w))
            if length < best_len and ok(r0, w) and ok(w, r_star):
                best, best_len = w, length
    if best is None:
        raise PlanningError("no two-segment path inside the annulus")
    return PathPlan([(r0, best), (best, r_star)], eps1, R0)


# control synthesis ------------------------------------------------------------


def control_bound(ms: ModeSet, spec: PotentialSpec, eps1: float, R0: float, n: int = 4000) -> float:
    """``N^3 (1 + max |grad Phi|)`` over the annulus ``[eps1, sqrt(2) R0]``."""
    rho = np.linspace(eps1, math.sqrt(2.0) * R0, n)
    return len(ms) ** 3 * (1.0 + float(np.max(np.abs(spec.dphi(rho)))))


def _control_at(plan: PathPlan, spec, ms, fp, t, velocity=None) -> np.ndarray:
    g = plan.position(t)
    v = plan.velocity(t) if velocity is None else velocity
    S = stokes_matrix(ms, fp, g)
    if not S.rank2:
        raise DegenerateStokesError(f"degenerate Stokes matrix at t={float(t)!r}, r={g.tolist()}")
    return min_norm_solve(S, v + grad_phi(spec, g))


@dataclass
class ControlSignal:
    """Sampled control ``z(t)``; piecewise linear between samples.

    Repeated sample times mark a jump (the path's corner). When ``exact``
    is set, calling the signal evaluates the minimal-norm control directly.
    """

    times: np.ndarray
    z: np.ndarray
    sup_norm: float
    bound: float = math.inf
    exact: Optional[Callable[[float], np.ndarray]] = None

    @property
    def duration(self) -> float:
        return float(self.times[-1]) if len(self.times) else 0.0

    def interpolate(self, t: float) -> np.ndarray:
        t = float(t)
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        i = min(max(i, 0), len(self.times) - 2)
        t0, t1 = self.times[i], self.times[i + 1]
        if t1 == t0:
            return self.z[i + 1].copy()
        s = (t - t0) / (t1 - t0)
        return (1 - s) * self.z[i] + s * self.z[i + 1]

    def __call__(self, t: float) -> np.ndarray:
        if self.exact is not None:
            return self.exact(t)
        return self.interpolate(t)


def synthesize_control(
    plan: PathPlan,
    spec: PotentialSpec,
    ms: ModeSet,
    fp: FluidParams,
    samples_per_unit: int = 256,
    bound: Optional[float] = None,
) -> ControlSignal:
    """Sample the minimal-norm control along ``plan``.

    The sup norm is compared with ``bound`` (default ``N^3 (1 + max |grad Phi|)``)
    and a ``ControlBoundWarning`` is issued when it is exceeded.
    """
    if bound is None:
        bound = control_bound(ms, spec, plan.eps1, plan.R0)
    if not plan.segments:
        z0 = np.zeros((1, len(ms)))
        return ControlSignal(np.zeros(1), z0, 0.0, bound, None)
    times, zs = [], []
    bp = plan.breakpoints
    vel = plan._velocities()
    for j, L in enumerate(plan.lengths):
        m = max(1, int(math.ceil(L * samples_per_unit)))
        for t in np.linspace(bp[j], bp[j + 1], m + 1):
            times.append(t)
            zs.append(_control_at(plan, spec, ms, fp, t, vel[j]))
    times = np.array(times)
    zs = np.array(zs)
    sup = float(np.max(np.sqrt((zs**2).sum(-1))))
    if sup > bound:
        warnings.warn(f"control sup norm {sup:.6g} exceeds bound {bound:.6g}", ControlBoundWarning, stacklevel=2)

    return ControlSignal(times, zs, sup, bound, _exact_evaluator(plan, spec, ms, fp))


def _exact_evaluator(plan: PathPlan, spec, ms, fp):
    """Fast scalar evaluation of the minimal-norm control at time ``t``.

    Same formula as the sampled control, with the Gram inverse written out
    and no rank check; sampling already checked the path.
    """
    bp = plan.breakpoints
    starts = np.array([a for a, _ in plan.segments])
    vel = plan._velocities()
    lk = fp.lam * ms.k
    ukp = ms.unit_kperp
    nseg = len(plan.segments)
    total = plan.total_time

    def exact(t):
        t = min(max(float(t), 0.0), total)
        i = min(int(np.searchsorted(bp, t, side="right")) - 1, nseg - 1)
        g = starts[i] + (t - bp[i]) * vel[i]
        rho = math.hypot(g[0], g[1])
        b = vel[i] + float(spec.dphi_over_r(rho)) * g
        cols = ukp * np.sin(lk @ g)
        s1, s2 = cols
        a, c, d = s1 @ s1, s1 @ s2, s2 @ s2
        det = a * d - c * c
        w0 = (d * b[0] - c * b[1]) / det
        w1 = (a * b[1] - c * b[0]) / det
        return w0 * s1 + w1 * s2

    return exact


def _jacobian(spec: PotentialSpec, ms: ModeSet, fp: FluidParams, r, z):
    rho = float(np.hypot(*r))
    f = float(spec.dphi_over_r(rho))
    d2 = float(spec.d2phi(rho))
    u = r / rho
    hess = f * np.eye(2) + (d2 - f) * np.outer(u, u)
    phase = fp.lam * (ms.k @ r)
    w = fp.lam * np.cos(phase) * z  # d/dr of sin(lam k.r) z_k is lam cos(.) z_k k
    jf = (ms.unit_kperp * w) @ ms.k
    return -hess + jf


def track(
    signal: ControlSignal,
    plan: PathPlan,
    spec,
    ms,
    fp,
    perturbation=None,
    rtol=1e-11,
    atol=1e-13,
    points_per_piece=64,
    blowup: Optional[float] = None,
):
    """Integrate ``dr/dt = -grad Phi(r) + S(r) (z(t) + perturbation(t))``
    from the plan's start; returns ``(times, r, Gamma)``.

    Integration stops early once ``|r - Gamma|`` exceeds ``blowup``
    (default ``sqrt(2) R0``, the annulus scale); the returned arrays then
    end at that time.
    """
    if not plan.segments:
        g = np.zeros((1, 2))
        return np.zeros(1), g, g
    knots = set(plan.breakpoints.tolist())
    if perturbation is not None:
        knots |= set(getattr(perturbation, "knots", []))
    knots = np.array(sorted(k for k in knots if 0 <= k <= plan.total_time))

    def zt(t):
        z = signal(t)
        if perturbation is not None:
            z = z + perturbation(t)
        return z

    lk = fp.lam * ms.k
    ukp = ms.unit_kperp

    def rhs(t, r):
        rho = math.hypot(r[0], r[1])
        return -float(spec.dphi_over_r(rho)) * r + (ukp * np.sin(lk @ r)) @ zt(t)

    def jac(t, r):
        return _jacobian(spec, ms, fp, r, zt(t))

    if blowup is None:
        blowup = math.sqrt(2.0) * plan.R0

    def diverged(t, r):
        return np.hypot(*(r - plan.position(t))) - blowup

    diverged.terminal = True

    r = plan.position(0.0)
    ts, rs = [np.array([0.0])], [r[None, :]]
    for a, b in zip(knots[:-1], knots[1:]):
        if b <= a:
            continue
        sol = solve_ivp(
            rhs,
            (a, b),
            r,
            method="Radau",
            jac=jac,
            events=diverged,
            rtol=rtol,
            atol=atol,
            dense_output=True,
        )
        if not sol.success:
            raise RuntimeError(f"tracking integration failed on [{a}, {b}]: {sol.message}")
        end = sol.t[-1]
        tt = np.linspace(a, end, points_per_piece + 1)[1:]
        ts.append(tt)
        rs.append(sol.sol(tt).T)
        if sol.status == 1:
            break
        r = sol.y[:, -1]
    times = np.concatenate(ts)
    return times, np.concatenate(rs), plan.position(times)


class TubePerturbation:
    """Piecewise-linear random perturbation with values in the ``eps``-ball."""

    def __init__(self, duration: float, n_modes: int, eps: float, rng, spacing: float = 0.05):
        m = max(1, int(math.ceil(duration / spacing)))
        self.knots = np.linspace(0.0, duration, m + 1)
        d = rng.standard_normal((m + 1, n_modes))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        self.values = eps * rng.uniform(0.0, 1.0, (m + 1, 1)) * d

    def __call__(self, t):
        t = min(max(float(t), self.knots[0]), self.knots[-1])
        i = min(int(np.searchsorted(self.knots, t, side="right")) - 1, len(self.knots) - 2)
        s = (t - self.knots[i]) / (self.knots[i + 1] - self.knots[i])
        return (1 - s) * self.values[i] + s * self.values[i + 1]


def verify_tracking(signal: ControlSignal, plan: PathPlan, spec, ms, fp, tube_eps: float, rng, **kw) -> float:
    """Sup over the plan of ``|Gamma(t) - r(t)|`` when the control is perturbed
    by a random path inside the ``tube_eps`` tube."""
    if tube_eps < 0:
        raise ValueError("tube_eps must be >= 0")
    pert = None
    if tube_eps > 0 and plan.segments:
        pert = TubePerturbation(plan.total_time, len(ms), tube_eps, rng)
    _, r, g = track(signal, plan, spec, ms, fp, pert, **kw)
    return float(np.max(np.hypot(*(g - r).T)))

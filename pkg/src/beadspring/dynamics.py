"""Integration of the connector / fluid-mode Markov system.

One step of size ``dt`` is a Strang splitting: exact OU half step for the
fluid amplitudes, a deterministic RK4 solve of

    dr/dt = -grad Phi(r) + U(r, z)

with the amplitudes frozen at their half-step value, then the second exact
OU half step. The RK4 part takes per-trajectory substeps bounded by the
local stiffness, so ensembles stay bit-identical to single runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import rng as _rng
from .potentials import PotentialSpec, grad_phi, stiffness
from .spectral_fluid import (
    FluidParams,
    FluidState,
    ModeSet,
    center_of_mass_velocity,
    connector_forcing,
    ou_transition,
    stationary_variance,
)

__all__ = [
    "OriginGuardError",
    "SystemState",
    "SimParams",
    "Batch",
    "Trajectory",
    "drift_r",
    "step",
    "step_batch",
    "integrate",
    "simulate",
    "run_ensemble",
    "OBSERVABLES",
    "stationary_state",
    "summarize",
]


class OriginGuardError(RuntimeError):
    pass


@dataclass(frozen=True)
class SystemState:
    """Full Markov state: connector, fluid amplitudes, optional center of mass."""

    r: np.ndarray
    fluid: FluidState
    m: Optional[np.ndarray] = None
    time: float = 0.0
    step_count: int = 0

    def __post_init__(self):
        object.__setattr__(self, "r", np.array(self.r, dtype=float).reshape(2))
        if self.m is not None:
            object.__setattr__(self, "m", np.array(self.m, dtype=float).reshape(2))

    @classmethod
    def at(cls, r, z, y=None, m=None, time=0.0) -> "SystemState":
        return cls(np.asarray(r, float), FluidState(z, y, time), m, time)


@dataclass(frozen=True)
class SimParams:
    fluid: FluidParams
    potential: PotentialSpec
    dt: float = 0.01
    kappa: float = 0.0
    r_min_guard: float = 1e-8
    track_center_of_mass: bool = False
    # with track_center_of_mass: whether m moves, and whether y is driven by noise
    evolve_center_of_mass: bool = True
    cosine_noise: bool = True
    substep_cfl: float = 0.25
    max_halvings: int = 20
    stride: int = 10

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if self.kappa < 0:
            raise ValueError("kappa must be >= 0")
        if not self.r_min_guard > 0:
            raise ValueError("r_min_guard must be > 0")
        if not 0 < self.substep_cfl <= 2.5:
            raise ValueError("substep_cfl must lie in (0, 2.5]")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")


@dataclass
class Batch:
    """A synchronously stepped group of trajectories (arrays, leading axis n)."""

    r: np.ndarray
    z: np.ndarray
    y: Optional[np.ndarray] = None
    m: Optional[np.ndarray] = None
    time: float = 0.0
    step: int = 0
    ids: np.ndarray = field(default=None)

    def __post_init__(self):
        self.r = np.array(self.r, dtype=float).reshape(-1, 2)
        self.z = np.array(self.z, dtype=float).reshape(len(self.r), -1)
        if self.y is not None:
            self.y = np.array(self.y, dtype=float).reshape(self.z.shape)
        if self.m is not None:
            self.m = np.array(self.m, dtype=float).reshape(-1, 2)
        if self.ids is None:
            self.ids = np.arange(len(self.r))
        self.ids = np.asarray(self.ids, dtype=np.int64)

    def __len__(self):
        return len(self.r)

    @classmethod
    def from_states(cls, states: Sequence[SystemState], ids=None) -> "Batch":
        s0 = states[0]
        if any(s.step_count != s0.step_count or s.time != s0.time for s in states):
            raise ValueError("batched states must share time and step count")
        has_y = s0.fluid.y is not None
        has_m = s0.m is not None
        return cls(
            r=np.stack([s.r for s in states]),
            z=np.stack([s.fluid.z for s in states]),
            y=np.stack([s.fluid.y for s in states]) if has_y else None,
            m=np.stack([s.m for s in states]) if has_m else None,
            time=s0.time,
            step=s0.step_count,
            ids=ids,
        )

    def state(self, i: int) -> SystemState:
        return SystemState(
            self.r[i].copy(),
            FluidState(self.z[i].copy(), None if self.y is None else self.y[i].copy(), self.time),
            None if self.m is None else self.m[i].copy(),
            self.time,
            self.step,
        )

    def copy(self) -> "Batch":
        return Batch(
            self.r.copy(),
            self.z.copy(),
            None if self.y is None else self.y.copy(),
            None if self.m is None else self.m.copy(),
            self.time,
            self.step,
            self.ids.copy(),
        )


def _check(params: SimParams, ms: ModeSet, b: Batch):
    if b.z.shape[1] != len(ms):
        raise ValueError(f"state has {b.z.shape[1]} fluid modes, mode set has {len(ms)}")
    if params.track_center_of_mass and (b.m is None or b.y is None):
        raise ValueError("center-of-mass tracking needs m and cosine amplitudes y")


def _forcing(params, ms, r, z, y, m):
    if params.track_center_of_mass:
        return connector_forcing(ms, params.fluid, r, z, y, m)
    return connector_forcing(ms, params.fluid, r, z)


def _drift(params: SimParams, ms: ModeSet, r, z, y=None, m=None):
    return -grad_phi(params.potential, r) + _forcing(params, ms, r, z, y, m)


def drift_r(state: SystemState, params: SimParams, ms: ModeSet) -> np.ndarray:
    """``-grad Phi(r) + U(r, z)`` (center-of-mass form when tracked)."""
    b = Batch.from_states([state])
    _check(params, ms, b)
    return _drift(params, ms, b.r, b.z, b.y, b.m)[0]


def _rate_bound(params, ms, r, z, y, m):
    rho = np.hypot(r[:, 0], r[:, 1])
    lip = stiffness(params.potential, rho)
    coef = np.abs(z)
    if params.track_center_of_mass and y is not None:
        coef = coef + np.abs(y)
    fl = params.fluid.lam * (coef * ms.knorm).sum(axis=-1)
    return lip + (2.0 if params.track_center_of_mass and params.evolve_center_of_mass else 1.0) * fl


def _raw_grad(pot: PotentialSpec, r):
    # NaN instead of an exception at singular points, so bad rows get retried
    rho = np.hypot(r[:, 0], r[:, 1])
    f = pot.dphi_over_r(rho)
    f = np.where((rho < pot.r_max) & ((rho > 0) | (not pot.singular)), f, np.nan)
    return f[:, None] * r


def _substeps(params: SimParams, ms: ModeSet, r, m, z, y, dt: float):
    """Deterministic RK4 over ``dt`` with per-row adaptive substeps."""
    pot = params.potential
    evolve_m = params.track_center_of_mass and params.evolve_center_of_mass
    use_m = params.track_center_of_mass
    r = r.copy()
    m = None if m is None else m.copy()
    rem = np.full(len(r), float(dt))
    shrink = np.zeros(len(r), dtype=np.int64)
    cfl = params.substep_cfl

    def f(ri, mi, zi, yi):
        dr = -_raw_grad(pot, ri) + (
            connector_forcing(ms, params.fluid, ri, zi, yi, mi) if use_m else connector_forcing(ms, params.fluid, ri, zi)
        )
        dm = center_of_mass_velocity(ms, params.fluid, ri, mi, zi, yi) if evolve_m else 0.0
        return dr, dm

    for _ in range(10_000_000):
        idx = np.nonzero(rem > 0)[0]
        if len(idx) == 0:
            return r, m
        ri, zi = r[idx], z[idx]
        yi = None if y is None else y[idx]
        mi = None if m is None else m[idx]
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            lip = _rate_bound(params, ms, ri, zi, yi, mi)
            h = np.minimum(rem[idx], np.where(lip > 0, cfl / lip, np.inf)) * 0.5 ** shrink[idx]
            hc = h[:, None]
            k1, l1 = f(ri, mi, zi, yi)
            k2, l2 = f(ri + 0.5 * hc * k1, None if mi is None else mi + 0.5 * hc * l1, zi, yi)
            k3, l3 = f(ri + 0.5 * hc * k2, None if mi is None else mi + 0.5 * hc * l2, zi, yi)
            k4, l4 = f(ri + hc * k3, None if mi is None else mi + hc * l3, zi, yi)
            r_new = ri + hc / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            rho_new = np.hypot(r_new[:, 0], r_new[:, 1])
        ok = np.isfinite(rho_new) & (rho_new < pot.r_max)
        if pot.singular:
            ok &= rho_new >= params.r_min_guard
        acc = idx[ok]
        r[acc] = r_new[ok]
        if evolve_m:
            m_new = mi + hc / 6.0 * (l1 + 2.0 * l2 + 2.0 * l3 + l4)
            m[acc] = m_new[ok]
        rem[acc] = np.where(h[ok] >= rem[acc], 0.0, rem[acc] - h[ok])
        shrink[acc] = 0
        rej = idx[~ok]
        shrink[rej] += 1
        if np.any(shrink[rej] > params.max_halvings):
            raise OriginGuardError(
                f"origin guard exhausted after {params.max_halvings} halvings "
                "(dt too large or potential not repulsive at the origin)"
            )
    raise RuntimeError("substep budget exceeded")


def step_batch(b: Batch, params: SimParams, ms: ModeSet, noise: _rng.CounterNoise, dt: Optional[float] = None) -> Batch:
    """Advance every trajectory of ``b`` by one splitting step."""
    _check(params, ms, b)
    dt = params.dt if dt is None else float(dt)
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    if dt == 0:
        return b.copy()
    n, N = b.z.shape
    decay, std = ou_transition(ms, params.fluid, 0.5 * dt)
    z = decay * b.z + std * noise.normals(b.ids, b.step, _rng.Z_FIRST, N)
    y = b.y
    if y is not None:
        if params.cosine_noise:
            y = decay * y + std * noise.normals(b.ids, b.step, _rng.Y_FIRST, N)
        else:
            y = decay * y
    r, m = _substeps(params, ms, b.r, b.m, z, y, dt)
    if params.kappa > 0:
        r = r + params.kappa * math.sqrt(2.0 * dt) * noise.normals(b.ids, b.step, _rng.KAPPA, 2)
        if params.potential.singular and np.any(np.hypot(r[:, 0], r[:, 1]) < params.r_min_guard):
            raise OriginGuardError("origin guard exhausted: additive noise crossed the guard radius")
    z = decay * z + std * noise.normals(b.ids, b.step, _rng.Z_SECOND, N)
    if y is not None:
        if params.cosine_noise:
            y = decay * y + std * noise.normals(b.ids, b.step, _rng.Y_SECOND, N)
        else:
            y = decay * y
    return Batch(r, z, y, m, b.time + dt, b.step + 1, b.ids)


def step(state: SystemState, params: SimParams, ms: ModeSet, rng: _rng.Stream, dt: Optional[float] = None) -> SystemState:
    """One step of a single trajectory; ``rng`` is its noise stream."""
    if (params.dt if dt is None else dt) == 0:
        return state
    b = Batch.from_states([state], ids=[rng.trajectory])
    return step_batch(b, params, ms, rng.noise, dt).state(0)


# observables -----------------------------------------------------------------


def _obs_V(b, lyapunov):
    if lyapunov is None:
        raise ValueError("observable 'V' needs Lyapunov parameters")
    rho2 = (b.r**2).sum(-1)
    zz = (b.z**2).sum(-1)
    if b.y is not None:
        zz = zz + (b.y**2).sum(-1)
    return np.maximum(rho2, lyapunov.R0**2) + lyapunov.eta * zz


OBSERVABLES: dict[str, Callable] = {
    "r": lambda b, lp: b.r.copy(),
    "norm_r": lambda b, lp: np.hypot(b.r[:, 0], b.r[:, 1]),
    "z": lambda b, lp: b.z.copy(),
    "norm_z": lambda b, lp: np.sqrt((b.z**2).sum(-1)),
    "y": lambda b, lp: None if b.y is None else b.y.copy(),
    "m": lambda b, lp: None if b.m is None else b.m.copy(),
    "V": _obs_V,
}


@dataclass
class Trajectory:
    """Recorded samples of one trajectory."""

    times: np.ndarray
    data: dict
    seed: int
    index: int
    params: SimParams
    min_norm_r: float
    final: SystemState

    def __getitem__(self, name):
        return self.data[name]


def integrate(
    b: Batch,
    params: SimParams,
    ms: ModeSet,
    horizon: float,
    noise: _rng.CounterNoise,
    observers: Sequence[str] = ("r", "norm_r", "z"),
    stride: Optional[int] = None,
    lyapunov=None,
    on_step: Optional[Callable[[Batch], None]] = None,
):
    """Step ``b`` over ``horizon``; returns ``(final, times, records, min_norm_r)``.

    ``records[name]`` has shape ``(len(times), n, ...)``. The last step is
    shortened so the run ends exactly at ``b.time + horizon``; the final
    state is always recorded. ``on_step`` sees every intermediate batch.
    """
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    for name in observers:
        if name not in OBSERVABLES:
            raise ValueError(f"unknown observable {name!r}; choose from {sorted(OBSERVABLES)}")
    stride = params.stride if stride is None else int(stride)
    n_steps = int(math.ceil(horizon / params.dt - 1e-9)) if horizon > 0 else 0
    t0 = b.time
    times = [b.time]
    records = {name: [OBSERVABLES[name](b, lyapunov)] for name in observers}
    min_r = np.hypot(b.r[:, 0], b.r[:, 1])
    for i in range(1, n_steps + 1):
        dt = min(params.dt, t0 + horizon - b.time) if i == n_steps else params.dt
        b = step_batch(b, params, ms, noise, dt)
        # times from the step index, so they do not accumulate rounding
        b.time = t0 + horizon if i == n_steps else t0 + i * params.dt
        min_r = np.minimum(min_r, np.hypot(b.r[:, 0], b.r[:, 1]))
        if on_step is not None:
            on_step(b)
        if i % stride == 0 or i == n_steps:
            times.append(b.time)
            for name in observers:
                records[name].append(OBSERVABLES[name](b, lyapunov))
    out = {}
    for name, vals in records.items():
        out[name] = None if vals[0] is None else np.stack(vals)
    return b, np.array(times), out, min_r


def simulate(
    initial: SystemState,
    params: SimParams,
    ms: ModeSet,
    horizon: float,
    observers: Sequence[str] = ("r", "norm_r", "z"),
    rng: Optional[_rng.Stream] = None,
    stride: Optional[int] = None,
    lyapunov=None,
) -> Trajectory:
    """Run one trajectory and record ``observers`` every ``stride`` steps."""
    if rng is None:
        rng = _rng.Stream(0, 0)
    b = Batch.from_states([initial], ids=[rng.trajectory])
    final, times, rec, min_r = integrate(b, params, ms, horizon, rng.noise, observers, stride, lyapunov)
    data = {k: (None if v is None else v[:, 0]) for k, v in rec.items()}
    return Trajectory(times, data, rng.noise.seed, rng.trajectory, params, float(min_r[0]), final.state(0))


def _initial_batch(initials, n: int, ids) -> Batch:
    if isinstance(initials, SystemState):
        states = [initials] * n
    elif callable(initials):
        states = [initials(i) for i in range(n)]
    else:
        states = list(initials)
        if len(states) != n:
            raise ValueError(f"got {len(states)} initial states for n={n}")
    return Batch.from_states(states, ids=ids)


def summarize(index: int, times, rec, min_r, final: Batch, j: int) -> dict:
    norm_r = rec["norm_r"][:, j] if "norm_r" in rec else None
    out = {
        "index": int(index),
        "t_final": float(final.time),
        "r_final": [float(final.r[j, 0]), float(final.r[j, 1])],
        "norm_r_final": float(np.hypot(*final.r[j])),
        "min_norm_r": float(min_r[j]),
        "norm_z_final": float(np.sqrt((final.z[j] ** 2).sum())),
    }
    if norm_r is not None:
        out["mean_norm_r"] = float(norm_r.mean())
    return out


def run_ensemble(
    initials,
    params: SimParams,
    ms: ModeSet,
    horizon: float,
    observers: Sequence[str] = ("norm_r",),
    master_seed: int = 0,
    n: int = 1,
    stride: Optional[int] = None,
    lyapunov=None,
    batch_size: int = 4096,
    return_trajectories: bool = False,
):
    """Run ``n`` independent trajectories; trajectory ``i`` uses stream
    ``(master_seed, i)`` so results do not depend on batching.

    ``initials`` is one state (replicated), a list of ``n`` states or a
    callable ``i -> SystemState``. Returns a list of summary dicts, plus the
    trajectories when ``return_trajectories`` is set.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    noise = _rng.CounterNoise(master_seed)
    observers = tuple(dict.fromkeys(tuple(observers) + ("norm_r",)))
    summaries, trajs = [], []
    for start in range(0, n, batch_size):
        ids = np.arange(start, min(n, start + batch_size))
        if isinstance(initials, (list, tuple)):
            b = _initial_batch([initials[i] for i in ids], len(ids), ids)
        elif callable(initials) and not isinstance(initials, SystemState):
            b = _initial_batch([initials(int(i)) for i in ids], len(ids), ids)
        else:
            b = _initial_batch(initials, len(ids), ids)
        final, times, rec, min_r = integrate(b, params, ms, horizon, noise, observers, stride, lyapunov)
        for j, i in enumerate(ids):
            summaries.append(summarize(i, times, rec, min_r, final, j))
            if return_trajectories:
                data = {k: (None if v is None else v[:, j]) for k, v in rec.items()}
                trajs.append(Trajectory(times, data, master_seed, int(i), params, float(min_r[j]), final.state(j)))
    return (summaries, trajs) if return_trajectories else summaries


def stationary_state(ms: ModeSet, fp: FluidParams, r, noise: _rng.CounterNoise, index: int = 0, with_cosine: bool = False, m=None) -> SystemState:
    """Initial state with fluid amplitudes drawn from their stationary law."""
    std = np.sqrt(stationary_variance(ms, fp))
    z = std * noise.normals([index], 0, _rng.INIT_Z, len(ms))[0]
    y = std * noise.normals([index], 0, _rng.INIT_Y, len(ms))[0] if with_cosine else None
    return SystemState.at(r, z, y, m)

"""Monte Carlo and linear-algebra checks of the long-time behaviour.

Every estimator here is a reduction over independent trajectories driven
by the counter-based noise in :mod:`beadspring.rng`, so results depend only
on the seed and not on batching.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy import stats

from . import rng as _rng
from .control import ControlSignal
from .dynamics import Batch, SimParams, SystemState, integrate, step_batch
from .potentials import PotentialSpec, hookean, verify_assumptions
from .spectral_fluid import (
    FluidParams,
    ModeSet,
    ou_rates,
    ou_transition,
    sigma_norm,
    stationary_variance,
    stokes_columns,
)

__all__ = [
    "LyapunovParams",
    "EscapeStats",
    "ErgodicityReport",
    "DriftEstimate",
    "HookeanReport",
    "OUStatistics",
    "lyapunov_value",
    "choose_lyapunov_params",
    "estimate_drift",
    "hookean_decay_test",
    "escape_time_stats",
    "bad_set_radius",
    "hormander_matrix",
    "hormander_rank_check",
    "ergodic_convergence",
    "ks_distance",
    "tube_occupancy",
    "ou_statistics",
    "wilson_interval",
]

SeedLike = Union[int, _rng.CounterNoise, np.random.Generator]


def _noise(rng: SeedLike) -> _rng.CounterNoise:
    if isinstance(rng, _rng.CounterNoise):
        return rng
    if isinstance(rng, _rng.Stream):
        return rng.noise
    if isinstance(rng, np.random.Generator):
        return _rng.CounterNoise(int(rng.integers(0, 2**63 - 1)))
    return _rng.CounterNoise(int(rng))


def wilson_interval(k: int, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        return 0.0, 1.0
    p = k / n
    den = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    lo = 0.0 if k == 0 else max(0.0, centre - half)
    hi = 1.0 if k == n else min(1.0, centre + half)
    return lo, hi


# Lyapunov function ------------------------------------------------------------


@dataclass(frozen=True)
class LyapunovParams:
    """Constants of ``V = max(|r|^2, R0^2) + eta ||z||^2`` and its drift bound.

    ``C1`` follows ``eta beta nu lam^2 ||sigma||_0^2``; ``C1_generator`` is
    the offset ``2 eta beta nu ||sigma||_0^2`` produced by applying the OU
    generator to ``eta ||z||^2`` directly, kept for comparison.
    """

    R0: float
    eta: float
    delta: float
    a: float
    C1: float
    C2: float
    k_min: float
    gamma: float = float("nan")
    C1_generator: float = float("nan")

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("Lyapunov decay rate a must be > 0")
        if not self.eta > 0:
            raise ValueError("eta must be > 0")

    def to_dict(self) -> dict:
        return asdict(self)


def lyapunov_value(state: SystemState, lp: LyapunovParams) -> float:
    """``max(|r|^2, R0^2) + eta ||z||^2``; cosine amplitudes count when present."""
    zz = float(np.sum(state.fluid.z**2))
    if state.fluid.y is not None:
        zz += float(np.sum(state.fluid.y**2))
    return max(float(state.r @ state.r), lp.R0**2) + lp.eta * zz


def choose_lyapunov_params(gamma: float, fp: FluidParams, ms: ModeSet, R0: float, delta: float) -> LyapunovParams:
    """Smallest admissible ``eta`` for a given ``delta``.

    Raises
    ------
    ValueError
        If ``delta`` is outside ``(0, min(1, lam^2 nu k_min^2 / gamma))``; the
        message names the bound.
    """
    if not gamma > 0:
        raise ValueError("gamma must be > 0")
    k_min = ms.k_min
    theta = fp.lam**2 * fp.nu * k_min**2
    bound = min(1.0, theta / gamma)
    if not 0 < delta < bound:
        raise ValueError(f"delta={delta!r} outside the admissible range (0, {bound!r}) = (0, min(1, lam^2 nu k_min^2 / gamma))")
    eta = 1.0 / (gamma * (1.0 - delta) * (theta - delta * gamma))
    a = min(delta * gamma, 2.0 * theta)
    s0 = sigma_norm(ms, 0.0) ** 2
    C1 = eta * fp.beta * fp.nu * fp.lam**2 * s0
    C2 = 2.0 * theta * R0**2 + C1
    return LyapunovParams(
        R0=float(R0),
        eta=float(eta),
        delta=float(delta),
        a=float(a),
        C1=float(C1),
        C2=float(C2),
        k_min=float(k_min),
        gamma=float(gamma),
        C1_generator=float(2.0 * eta * fp.beta * fp.nu * s0),
    )


@dataclass
class DriftEstimate:
    """Affine envelope ``E V(X_t) <= c0 V(x0) + c1`` fitted over initials."""

    c0: float
    c1: float
    c0_se: float
    c1_se: float
    t: float
    records: list = field(default_factory=list)
    n_fit: int = 0

    @property
    def c0_upper95(self) -> float:
        return self.c0 + 1.6448536269514722 * self.c0_se

    @property
    def envelope_violations(self) -> int:
        return sum(not r["envelope_ok"] for r in self.records)


def estimate_drift(
    initials: Sequence[SystemState],
    params: SimParams,
    ms: ModeSet,
    lp: LyapunovParams,
    t: float,
    n: int,
    rng: SeedLike,
    fit_threshold: Optional[float] = None,
) -> DriftEstimate:
    """Monte Carlo ``E V(X_t)`` from each initial and the fitted envelope.

    Each initial is replicated ``n`` times. The regression of the means on
    ``V(x0)`` uses the initials with ``V(x0) > fit_threshold`` (default
    ``2 C2 / a``), weighted by their standard errors. Each record also checks
    ``E V <= exp(-a t) V(x0) + (C2 / a)(1 - exp(-a t))`` with a three standard
    error allowance.
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    if n < 100:
        raise ValueError("n must be >= 100")
    initials = list(initials)
    v0 = np.array([lyapunov_value(s, lp) for s in initials])
    if t == 0:
        recs = [
            {"V0": float(v), "mean": float(v), "se": 0.0, "bound": float(v), "envelope_ok": True}
            for v in v0
        ]
        return DriftEstimate(1.0, 0.0, 0.0, 0.0, 0.0, recs, len(recs))
    noise = _noise(rng)
    states = [s for s in initials for _ in range(n)]
    b = Batch.from_states(states)
    final, _, rec, _ = integrate(b, params, ms, t, noise, ("V",), stride=10**9, lyapunov=lp)
    vt = rec["V"][-1].reshape(len(initials), n)
    means = vt.mean(axis=1)
    ses = vt.std(axis=1, ddof=1) / math.sqrt(n)
    decay = math.exp(-lp.a * t)
    bounds = decay * v0 + lp.C2 / lp.a * (1.0 - decay)
    recs = [
        {
            "V0": float(v),
            "mean": float(m),
            "se": float(s),
            "bound": float(bd),
            "envelope_ok": bool(m <= bd + 3.0 * s),
        }
        for v, m, s, bd in zip(v0, means, ses, bounds)
    ]
    thr = 2.0 * lp.C2 / lp.a if fit_threshold is None else fit_threshold
    use = v0 > thr
    if use.sum() < 2:
        raise ValueError(f"need at least two initials with V(x0) > {thr:.6g} to fit the envelope")
    X = np.column_stack([v0[use], np.ones(use.sum())])
    w = 1.0 / np.maximum(ses[use], 1e-300)
    coef, *_ = np.linalg.lstsq(X * w[:, None], means[use] * w, rcond=None)
    resid = (means[use] - X @ coef) * w
    dof = max(int(use.sum()) - 2, 1)
    scale = max(float(resid @ resid) / dof, 1.0)
    cov = np.linalg.inv((X * w[:, None]).T @ (X * w[:, None])) * scale
    return DriftEstimate(
        float(coef[0]),
        float(coef[1]),
        float(math.sqrt(cov[0, 0])),
        float(math.sqrt(cov[1, 1])),
        float(t),
        recs,
        int(use.sum()),
    )


# Hookean degeneracy -------------------------------------------------------------


@dataclass
class HookeanReport:
    empirical_rate: float
    lln_threshold: float
    lln_limit: float
    horizon: float
    final_ratio: np.ndarray
    envelope_ok: np.ndarray
    max_envelope_excess: float

    @property
    def all_envelope_ok(self) -> bool:
        return bool(np.all(self.envelope_ok))

    def to_dict(self) -> dict:
        return {
            "empirical_rate": self.empirical_rate,
            "lln_threshold": self.lln_threshold,
            "lln_limit": self.lln_limit,
            "horizon": self.horizon,
            "max_final_ratio": float(np.max(self.final_ratio)),
            "envelope_ok_fraction": float(np.mean(self.envelope_ok)),
            "max_envelope_excess": self.max_envelope_excess,
        }


def hookean_decay_test(
    gamma: float,
    ms: ModeSet,
    fp: FluidParams,
    horizon: float,
    n: int,
    rng: SeedLike,
    r0=(1.0, 0.0),
    dt: float = 0.01,
    slack: float = 1e-6,
) -> HookeanReport:
    """Ensemble collapse of the connector under a linear spring.

    Returns the median of ``log|r(T)|^2 / T`` together with the threshold
    ``-2 gamma + 2 lam sqrt(beta) ||sigma||_0`` and the almost-sure limit of
    the pathwise bound, ``-2 gamma + 2 sqrt(beta) sqrt(2/pi) sum sigma_k``.
    Every recorded time is checked against the envelope

        |r(t)|^2 <= |r(0)|^2 exp(-2 gamma t + 2 lam int sum |k| |z_k|)

    with the integral taken by the trapezoid rule and relative ``slack``.
    Fluid amplitudes start from their stationary law.
    """
    if not gamma > 0:
        raise ValueError("gamma must be > 0")
    noise = _noise(rng)
    params = SimParams(fp, hookean(gamma), dt=dt, stride=1)
    std = np.sqrt(stationary_variance(ms, fp))
    ids = np.arange(n)
    z0 = std * noise.normals(ids, 0, _rng.INIT_Z, len(ms))
    r0 = np.broadcast_to(np.asarray(r0, float), (n, 2))
    b = Batch(r0, z0, ids=ids)
    _, times, rec, _ = integrate(b, params, ms, horizon, noise, ("norm_r", "z"), stride=1)
    rho = rec["norm_r"]
    w = (np.abs(rec["z"]) * ms.knorm).sum(-1)
    integral = np.concatenate([np.zeros((1, n)), np.cumsum(0.5 * np.diff(times)[:, None] * (w[1:] + w[:-1]), axis=0)])
    log_env = 2.0 * np.log(rho[0]) - 2.0 * gamma * times[:, None] + 2.0 * fp.lam * integral
    excess = 2.0 * np.log(rho) - log_env
    ok = np.all(excess <= math.log1p(slack), axis=0)
    T = float(times[-1])
    rate = float(np.median(2.0 * np.log(rho[-1]) / T)) if T > 0 else float("nan")
    sig0 = sigma_norm(ms, 0.0)
    thr = -2.0 * gamma + 2.0 * fp.lam * math.sqrt(fp.beta) * sig0
    lim = -2.0 * gamma + 2.0 * math.sqrt(fp.beta) * math.sqrt(2.0 / math.pi) * float(np.sum(np.abs(ms.sigmas)))
    return HookeanReport(rate, thr, lim, T, rho[-1] / rho[0], ok, float(np.max(excess)))


# escape from the origin ---------------------------------------------------------


@dataclass
class EscapeStats:
    eps: float
    M: float
    M_tilde: float
    n: int
    p_escape_unit_time: float
    max_escape_time: float
    stderr: float
    ci_low: float
    ci_high: float
    n_escaped: int
    min_norm_r: float
    horizon: float

    def to_dict(self) -> dict:
        return asdict(self)


def escape_time_stats(
    spec: PotentialSpec,
    ms: ModeSet,
    fp: FluidParams,
    eps: float,
    M: float,
    M_tilde: float,
    n: int,
    rng: SeedLike,
    horizon: float = 10.0,
    dt: float = 0.01,
    r_floor: float = 1e-4,
    certificate=None,
) -> EscapeStats:
    """Exit of the ``eps``-ball with a moderate fluid.

    ``|r0|`` is uniform on ``[r_floor, eps]`` with a uniform direction and
    ``z0`` is uniform in the ball ``||z|| < M`` (``z0 = 0`` when ``M = 0``).
    The exit time is the first recorded time with ``|r| >= eps`` and
    ``||z|| < M_tilde``; runs that never exit report ``inf``.
    """
    cert = verify_assumptions(spec) if certificate is None else certificate
    if not cert.passed_small_r:
        raise ValueError("potential not certified near the origin")
    if not 0 < eps <= cert.eps0:
        raise ValueError(f"eps={eps!r} must lie in (0, eps0={cert.eps0!r}]")
    if not M_tilde > M >= 0:
        raise ValueError("need M_tilde > M >= 0")
    noise = _noise(rng)
    ids = np.arange(n)
    N = len(ms)
    u = noise.normals(ids, 0, _rng.AUX, 3 + N)
    unif = stats.norm.cdf(u[:, :2])
    rad = r_floor + (eps - r_floor) * unif[:, 0]
    ang = 2 * math.pi * unif[:, 1]
    r0 = rad[:, None] * np.column_stack([np.cos(ang), np.sin(ang)])
    if M > 0:
        d = u[:, 3:]
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        zr = M * stats.norm.cdf(u[:, 2]) ** (1.0 / N)
        z0 = zr[:, None] * d
    else:
        z0 = np.zeros((n, N))
    params = SimParams(fp, spec, dt=dt, stride=1)
    b = Batch(r0, z0, ids=ids)
    tau = np.full(n, np.inf)

    def watch(bb):
        hit = (np.hypot(bb.r[:, 0], bb.r[:, 1]) >= eps) & (np.sqrt((bb.z**2).sum(-1)) < M_tilde) & ~np.isfinite(tau)
        tau[hit] = bb.time

    watch(b)
    _, _, _, min_r = integrate(b, params, ms, horizon, noise, (), stride=10**9, on_step=watch)
    k = int(np.sum(tau <= 1.0))
    p = k / n
    lo, hi = wilson_interval(k, n)
    esc = np.isfinite(tau)
    return EscapeStats(
        eps=float(eps),
        M=float(M),
        M_tilde=float(M_tilde),
        n=int(n),
        p_escape_unit_time=p,
        max_escape_time=float(np.max(tau)),
        stderr=math.sqrt(p * (1 - p) / n),
        ci_low=lo,
        ci_high=hi,
        n_escaped=int(esc.sum()),
        min_norm_r=float(np.min(min_r)),
        horizon=float(horizon),
    )


def bad_set_radius(
    spec: PotentialSpec,
    ms: ModeSet,
    fp: FluidParams,
    lp: LyapunovParams,
    n: int,
    rng: SeedLike,
    grid: Optional[Sequence[float]] = None,
    certificate=None,
    **kw,
) -> tuple[float, EscapeStats]:
    """Largest ``eps`` on ``grid`` whose unit-time escape probability has a
    positive lower confidence bound, with ``M = R0`` and
    ``M_tilde = sqrt(2) R0 / eta``.
    """
    cert = verify_assumptions(spec) if certificate is None else certificate
    if grid is None:
        grid = cert.eps0 * np.array([1.0, 0.5, 0.25, 0.125])
    M, Mt = lp.R0, math.sqrt(2.0) * lp.R0 / lp.eta
    if not Mt > M:
        raise ValueError(f"M_tilde={Mt!r} must exceed M=R0={M!r}; eta is too large")
    noise = _noise(rng)
    last = None
    for eps in sorted(grid, reverse=True):
        st = escape_time_stats(spec, ms, fp, float(eps), M, Mt, n, noise, certificate=cert, **kw)
        last = st
        if st.ci_low > 0:
            return float(eps), st
    raise ValueError(f"no eps on the grid passes the unit-time escape criterion (last: {last})")


# Hoermander bracket condition --------------------------------------------------


def hormander_matrix(ms: ModeSet, fp: FluidParams, r) -> np.ndarray:
    """Columns ``B_k = (0, e_k)`` followed by ``[A, B_k] = (S_k(r), -lam^2 nu |k|^2 e_k)``."""
    N = len(ms)
    S = stokes_columns(ms, fp, np.asarray(r, float).reshape(2))
    B = np.vstack([np.zeros((2, N)), np.eye(N)])
    AB = np.vstack([S, -np.diag(ou_rates(ms, fp))])
    return np.hstack([B, AB])


def hormander_rank_check(ms: ModeSet, fp: FluidParams, spec: Optional[PotentialSpec], r, rtol: float = 1e-10) -> tuple[int, bool]:
    """Numerical rank of the noise directions and their first brackets.

    The drift's potential part does not enter the brackets, so ``spec`` is
    accepted only for interface symmetry.
    """
    H = hormander_matrix(ms, fp, r)
    sv = np.linalg.svd(H, compute_uv=False)
    rank = int(np.sum(sv > rtol * sv[0])) if sv[0] > 0 else 0
    return rank, rank == H.shape[0]


# convergence of laws ------------------------------------------------------------


def ks_distance(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov statistic."""
    return float(stats.ks_2samp(np.asarray(a), np.asarray(b)).statistic)


@dataclass
class ErgodicityReport:
    """KS distances of the ``|r|`` marginals of two ensembles over time.

    ``noise_floor`` is the same-law distance expected at this ensemble size,
    from split halves scaled by ``1/sqrt(2)``; ``critical`` is the 95%
    two-sample KS critical value. The log-linear fit uses the times whose
    distance exceeds ``critical``.
    """

    times: list
    distances: list
    noise_floor: list
    critical: float
    fitted_rate: float
    fitted_prefactor: float
    residuals: list
    n: int

    @property
    def trend_decreasing(self) -> bool:
        d = self.distances
        for i in range(len(d) - 1):
            if d[i] <= self.critical:
                break
            if not (d[i + 1] < d[i] or d[i + 1] <= self.critical):
                return False
        return True

    def to_dict(self) -> dict:
        out = asdict(self)
        out["trend_decreasing"] = self.trend_decreasing
        return out


def ergodic_convergence(
    initA: SystemState,
    initB: SystemState,
    params: SimParams,
    ms: ModeSet,
    times: Sequence[float],
    n: int,
    rng: SeedLike,
    rng_b: Optional[SeedLike] = None,
) -> ErgodicityReport:
    """Distance between the ``|r|`` laws of ensembles started at ``initA``
    and ``initB``.

    Ensemble B uses ``rng_b`` (default: the next seed), so passing the same
    seed for both couples the ensembles path by path.
    """
    times = sorted(float(t) for t in times)
    if not times or times[0] < 0:
        raise ValueError("times must be nonnegative")
    na = _noise(rng)
    nb = _rng.CounterNoise(na.seed + 1) if rng_b is None else _noise(rng_b)

    def run(init, noise):
        b = Batch.from_states([init] * n)
        out, t_prev = [], 0.0
        for t in times:
            b, _, _, _ = integrate(b, params, ms, t - t_prev, noise, (), stride=10**9)
            t_prev = t
            out.append(np.hypot(b.r[:, 0], b.r[:, 1]))
        return out

    ra, rb = run(initA, na), run(initB, nb)
    h = n // 2
    dist, floor = [], []
    for a, b in zip(ra, rb):
        dist.append(ks_distance(a, b))
        half = 0.5 * (ks_distance(a[:h], a[h:]) + ks_distance(b[:h], b[h:]))
        floor.append(half / math.sqrt(2.0))
    critical = 1.358 * math.sqrt(2.0 / n)
    d = np.array(dist)
    use = d > critical
    rate = pref = float("nan")
    resid: list = []
    if use.sum() >= 2:
        tt = np.array(times)[use]
        slope, icpt = np.polyfit(tt, np.log(d[use]), 1)
        rate, pref = float(-slope), float(math.exp(icpt))
        resid = (np.log(d[use]) - (icpt + slope * tt)).tolist()
    return ErgodicityReport(times, dist, floor, critical, rate, pref, resid, int(n))


# fluid statistics ---------------------------------------------------------------


def tube_occupancy(
    ms: ModeSet,
    fp: FluidParams,
    reference: ControlSignal,
    tube_eps: float,
    n: int,
    rng: SeedLike,
    dt: float = 0.01,
) -> float:
    """Fraction of OU paths from ``z_ref(0)`` staying within ``tube_eps`` of
    ``z_ref`` at every time of a ``dt`` grid over the control's duration."""
    if not tube_eps > 0:
        raise ValueError("tube_eps must be > 0")
    T = reference.duration
    if T <= 0:
        return 1.0
    if math.isinf(tube_eps):
        return 1.0
    noise = _noise(rng)
    m = max(1, int(math.ceil(T / dt)))
    grid = np.linspace(0.0, T, m + 1)
    ids = np.arange(n)
    z = np.broadcast_to(reference(0.0), (n, len(ms))).copy()
    inside = np.ones(n, dtype=bool)
    for i in range(1, m + 1):
        decay, std = ou_transition(ms, fp, grid[i] - grid[i - 1])
        z = decay * z + std * noise.normals(ids, i, _rng.AUX, len(ms))
        dev = np.sqrt(((z - reference(grid[i])) ** 2).sum(-1))
        inside &= dev < tube_eps
    return float(inside.mean())


@dataclass
class OUStatistics:
    """Per-mode stationary variance and lag autocorrelation of the fluid."""

    variance: np.ndarray
    variance_expected: np.ndarray
    variance_se: np.ndarray
    lags: np.ndarray
    autocorr: np.ndarray
    autocorr_expected: np.ndarray
    autocorr_se: np.ndarray
    n: int

    def z_scores(self):
        zv = (self.variance - self.variance_expected) / self.variance_se
        za = (self.autocorr - self.autocorr_expected) / self.autocorr_se
        return zv, za

    def within(self, k: float = 3.0) -> bool:
        zv, za = self.z_scores()
        return bool(np.all(np.abs(zv) <= k) and np.all(np.abs(za) <= k))


def ou_statistics(
    ms: ModeSet,
    fp: FluidParams,
    n: int,
    rng: SeedLike,
    lags: Sequence[float] = (0.05, 0.1, 0.25, 0.5, 1.0),
    dt: float = 0.01,
) -> OUStatistics:
    """Sample ``n`` stationary amplitudes, push each through the exact
    transition in steps of ``dt`` and compare with ``beta sigma^2 / (lam^2 |k|^2)``
    and ``exp(-lam^2 nu |k|^2 lag)``.

    Standard errors: ``var sqrt(2 / (n - 1))`` for the variance and
    ``(1 - rho^2) / sqrt(n)`` for the correlation.
    """
    noise = _noise(rng)
    ids = np.arange(n)
    var = stationary_variance(ms, fp)
    z0 = np.sqrt(var) * noise.normals(ids, 0, _rng.INIT_Z, len(ms))
    lags = np.asarray(sorted(lags), dtype=float)
    z = z0.copy()
    t, step = 0.0, 0
    ac, vs = [], []
    for lag in lags:
        while t < lag - 1e-12:
            h = min(dt, lag - t)
            decay, std = ou_transition(ms, fp, h)
            step += 1
            z = decay * z + std * noise.normals(ids, step, _rng.AUX, len(ms))
            t += h
        ac.append([np.corrcoef(z0[:, j], z[:, j])[0, 1] for j in range(len(ms))])
        vs.append(z.var(axis=0, ddof=1))
    ac = np.array(ac)
    # variance after the longest lag, so the transition's invariance is exercised
    emp_var = vs[-1]
    expected = np.exp(-np.outer(lags, ou_rates(ms, fp)))
    return OUStatistics(
        variance=emp_var,
        variance_expected=var,
        variance_se=var * math.sqrt(2.0 / (n - 1)),
        lags=lags,
        autocorr=ac,
        autocorr_expected=expected,
        autocorr_se=(1.0 - expected**2) / math.sqrt(n) + 1e-300,
        n=int(n),
    )

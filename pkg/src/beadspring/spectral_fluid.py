"""Finite-mode stochastic Stokes field.

The velocity field on the periodic box of side ``L = 2*pi/lam`` is

    u(x) = sum_k (cos(lam k.x) y_k + sin(lam k.x) z_k) kperp / |k|

with every amplitude an independent Ornstein-Uhlenbeck process

    dz_k = -lam^2 nu |k|^2 z_k dt + sqrt(2 beta nu) sigma_k dW_k.

Only one wavevector of each ``+-k`` pair is kept since the real expansion
already carries both signs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

__all__ = [
    "ModeIndex",
    "ModeSet",
    "FluidParams",
    "FluidState",
    "build_mode_set",
    "default_mode_set",
    "sigma_norm",
    "ou_rates",
    "stationary_variance",
    "ou_transition",
    "stationary_sample",
    "ou_step_exact",
    "stokes_columns",
    "connector_forcing",
    "center_of_mass_velocity",
    "eval_velocity",
    "eval_field",
    "forcing_ratio",
]


@dataclass(frozen=True)
class ModeIndex:
    k: tuple[int, int]

    def __post_init__(self):
        k = (int(self.k[0]), int(self.k[1]))
        if k == (0, 0):
            raise ValueError("mode k must be nonzero")
        object.__setattr__(self, "k", k)

    @property
    def kperp(self) -> tuple[int, int]:
        return (-self.k[1], self.k[0])

    @property
    def norm(self) -> float:
        return math.hypot(*self.k)

    def canonical(self) -> "ModeIndex":
        """The lexicographically larger of ``k`` and ``-k``."""
        neg = (-self.k[0], -self.k[1])
        return ModeIndex(max(self.k, neg))


def _direction(k: tuple[int, int]) -> tuple[int, int]:
    # unique key for the line spanned by k
    kx, ky = k
    g = math.gcd(kx, ky)
    kx, ky = kx // g, ky // g
    if kx < 0 or (kx == 0 and ky < 0):
        kx, ky = -kx, -ky
    return (kx, ky)


class ModeSet:
    """An ordered, finite set of active wavevectors with spectral weights.

    Parameters
    ----------
    modes : sequence of ModeIndex or integer pairs
    sigmas : sequence of float
        Per-mode weight ``sigma_k`` (the noise amplitude, not its square).
    """

    def __init__(self, modes: Sequence, sigmas: Sequence[float]):
        modes = tuple(m if isinstance(m, ModeIndex) else ModeIndex(tuple(m)) for m in modes)
        sigmas = np.asarray(sigmas, dtype=float).reshape(-1)
        if len(modes) == 0:
            raise ValueError("empty mode set")
        if len(sigmas) != len(modes):
            raise ValueError("need one sigma per mode")
        if np.any(sigmas < 0) or not np.all(np.isfinite(sigmas)):
            raise ValueError("sigmas must be finite and nonnegative")
        if len({m.canonical() for m in modes}) != len(modes):
            raise ValueError("duplicate mode (k and -k count as the same mode)")
        self.modes = modes
        self.sigmas = sigmas
        self.sigmas.setflags(write=False)
        self.k = np.array([m.k for m in modes], dtype=float)
        self.kperp = np.array([m.kperp for m in modes], dtype=float)
        self.knorm = np.hypot(self.k[:, 0], self.k[:, 1])
        # columns kperp/|k|, shape (2, N)
        self.unit_kperp = (self.kperp / self.knorm[:, None]).T.copy()
        for a in (self.k, self.kperp, self.knorm, self.unit_kperp):
            a.setflags(write=False)
        self.pairwise_independent_count = len({_direction(m.k) for m in modes})

    def __len__(self):
        return len(self.modes)

    def __eq__(self, other):
        return (
            isinstance(other, ModeSet)
            and self.modes == other.modes
            and np.array_equal(self.sigmas, other.sigmas)
        )

    def __repr__(self):
        ks = ", ".join(f"{m.k}" for m in self.modes)
        return f"ModeSet([{ks}], sigmas={self.sigmas.tolist()})"

    @property
    def k_min(self) -> float:
        return float(self.knorm.min())

    def with_sigmas(self, sigmas) -> "ModeSet":
        return ModeSet(self.modes, np.broadcast_to(np.asarray(sigmas, float), (len(self),)))

    def to_text(self) -> str:
        return "".join(f"{m.k[0]} {m.k[1]} {float(s)!r}\n" for m, s in zip(self.modes, self.sigmas))

    @classmethod
    def from_text(cls, text: str) -> "ModeSet":
        modes, sigmas = [], []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ValueError(f"line {lineno}: expected 'kx ky sigma', got {line!r}")
            try:
                modes.append((int(parts[0]), int(parts[1])))
                sigmas.append(float(parts[2]))
            except ValueError as exc:
                raise ValueError(f"line {lineno}: {exc}") from None
        return cls(modes, sigmas)


def build_mode_set(
    k_max: int,
    shape: Optional[Callable[[float], float]] = None,
    exclusions: Iterable = (),
) -> ModeSet:
    """All wavevectors with ``0 < |k| <= k_max``, one per ``+-k`` pair.

    ``shape`` is the radial profile, ``sigma_k = shape(|k|)``; it defaults
    to the constant 1.
    """
    if int(k_max) < 1:
        raise ValueError("k_max must be >= 1")
    k_max = int(k_max)
    if shape is None:
        shape = lambda _: 1.0  # noqa: E731
    excluded = {(m if isinstance(m, ModeIndex) else ModeIndex(tuple(m))).canonical() for m in exclusions}
    modes = []
    for kx in range(0, k_max + 1):
        for ky in range(-k_max, k_max + 1):
            if (kx, ky) == (0, 0) or kx * kx + ky * ky > k_max * k_max:
                continue
            mode = ModeIndex((kx, ky))
            if mode.canonical() != mode or mode in excluded:
                continue
            modes.append(mode)
    if not modes:
        raise ValueError("empty mode set")
    # sort by |k| then lexicographically (descending) for a stable layout
    modes.sort(key=lambda m: (m.k[0] ** 2 + m.k[1] ** 2, -m.k[0], -m.k[1]))
    sigmas = [float(shape(m.norm)) for m in modes]
    if any(s < 0 for s in sigmas):
        raise ValueError("shape must be nonnegative")
    return ModeSet(modes, sigmas)


def default_mode_set() -> ModeSet:
    """Three pairwise independent unit-weight modes (1,0), (0,1), (1,1)."""
    return ModeSet([(1, 0), (0, 1), (1, 1)], [1.0, 1.0, 1.0])


@dataclass(frozen=True)
class FluidParams:
    """``lam = 2*pi/L`` (inverse length), viscosity ``nu``, noise strength ``beta``.

    ``beta`` is kept free: it is ``k_B T / 4 pi^2`` in one normalisation of
    the model and ``k_B T / 2 pi`` in another.
    """

    lam: float = 0.5
    nu: float = 4.0
    beta: float = 0.25

    def __post_init__(self):
        for name in ("lam", "nu", "beta"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be strictly positive, got {v}")

    @property
    def L(self) -> float:
        return 2.0 * math.pi / self.lam


@dataclass(frozen=True)
class FluidState:
    z: np.ndarray
    y: Optional[np.ndarray] = None
    time: float = 0.0

    def __post_init__(self):
        z = np.array(self.z, dtype=float).reshape(-1)
        object.__setattr__(self, "z", z)
        if self.y is not None:
            y = np.array(self.y, dtype=float).reshape(-1)
            if y.shape != z.shape:
                raise ValueError("y and z must have the same length")
            object.__setattr__(self, "y", y)

    @property
    def norm_sq(self) -> float:
        s = float(np.dot(self.z, self.z))
        if self.y is not None:
            s += float(np.dot(self.y, self.y))
        return s


def sigma_norm(ms: ModeSet, s: float) -> float:
    """``sqrt(sum_k sigma_k^2 |k|^(-2s))``."""
    return float(np.sqrt(np.sum(ms.sigmas**2 * ms.knorm ** (-2.0 * s))))


def ou_rates(ms: ModeSet, fp: FluidParams) -> np.ndarray:
    """Mean-reversion rates ``lam^2 nu |k|^2``."""
    return fp.lam**2 * fp.nu * ms.knorm**2


def stationary_variance(ms: ModeSet, fp: FluidParams) -> np.ndarray:
    """``beta sigma_k^2 / (lam^2 |k|^2)``, the ratio of the squared noise
    coefficient ``2 beta nu sigma^2`` to twice the rate."""
    return fp.beta * ms.sigmas**2 / (fp.lam**2 * ms.knorm**2)


def ou_transition(ms: ModeSet, fp: FluidParams, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-mode ``(decay, increment std)`` of the exact OU transition over ``dt``."""
    theta = ou_rates(ms, fp)
    decay = np.exp(-theta * dt)
    std = np.sqrt(stationary_variance(ms, fp) * -np.expm1(-2.0 * theta * dt))
    return decay, std


def _check_length(ms, fs):
    if fs.z.shape != (len(ms),):
        raise ValueError(f"fluid state has {fs.z.size} modes, mode set has {len(ms)}")


def stationary_sample(ms: ModeSet, fp: FluidParams, rng, with_cosine: bool = False, time: float = 0.0) -> FluidState:
    """Draw every amplitude from its stationary Gaussian law.

    ``rng`` is anything with a numpy-style ``standard_normal(size)``.
    """
    std = np.sqrt(stationary_variance(ms, fp))
    z = std * rng.standard_normal(len(ms))
    y = std * rng.standard_normal(len(ms)) if with_cosine else None
    return FluidState(z, y, time)


def ou_step_exact(fs: FluidState, fp: FluidParams, ms: ModeSet, dt: float, rng) -> FluidState:
    """Advance all amplitudes by ``dt`` with the exact Gaussian transition."""
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    _check_length(ms, fs)
    if dt == 0:
        return fs
    decay, std = ou_transition(ms, fp, dt)
    z = decay * fs.z + std * rng.standard_normal(len(ms))
    y = None
    if fs.y is not None:
        y = decay * fs.y + std * rng.standard_normal(len(ms))
    return FluidState(z, y, fs.time + dt)


def stokes_columns(ms: ModeSet, fp: FluidParams, r: np.ndarray) -> np.ndarray:
    """The 2 x N matrix with columns ``sin(lam k.r) kperp/|k|``; batched over
    leading axes of ``r``."""
    r = np.asarray(r, dtype=float)
    phase = fp.lam * (r[..., 0:1] * ms.k[:, 0] + r[..., 1:2] * ms.k[:, 1])
    return np.sin(phase)[..., None, :] * ms.unit_kperp


def connector_forcing(ms: ModeSet, fp: FluidParams, r, z, y=None, m=None) -> np.ndarray:
    """Half the velocity difference between the two beads.

    With ``m`` (center of mass) and cosine amplitudes ``y`` the coefficient
    of mode k is ``cos(lam k.m) z_k - sin(lam k.m) y_k``; otherwise it is
    ``z_k``. Batched over leading axes.
    """
    r = np.asarray(r, dtype=float)
    z = np.asarray(z, dtype=float)
    phase = fp.lam * (r[..., 0:1] * ms.k[:, 0] + r[..., 1:2] * ms.k[:, 1])
    coef = z
    if m is not None:
        m = np.asarray(m, dtype=float)
        mphase = fp.lam * (m[..., 0:1] * ms.k[:, 0] + m[..., 1:2] * ms.k[:, 1])
        coef = np.cos(mphase) * z
        if y is not None:
            coef = coef - np.sin(mphase) * np.asarray(y, dtype=float)
    w = np.sin(phase) * coef
    ux = (w * ms.unit_kperp[0]).sum(axis=-1)
    uy = (w * ms.unit_kperp[1]).sum(axis=-1)
    return np.stack([ux, uy], axis=-1)


def center_of_mass_velocity(ms: ModeSet, fp: FluidParams, r, m, z, y=None) -> np.ndarray:
    """Mean bead velocity, ``sum_k [cos(lam k.m) y_k + sin(lam k.m) z_k] cos(lam k.r) kperp/|k|``."""
    r = np.asarray(r, dtype=float)
    m = np.asarray(m, dtype=float)
    phase = fp.lam * (r[..., 0:1] * ms.k[:, 0] + r[..., 1:2] * ms.k[:, 1])
    mphase = fp.lam * (m[..., 0:1] * ms.k[:, 0] + m[..., 1:2] * ms.k[:, 1])
    coef = np.sin(mphase) * np.asarray(z, dtype=float)
    if y is not None:
        coef = coef + np.cos(mphase) * np.asarray(y, dtype=float)
    w = np.cos(phase) * coef
    ux = (w * ms.unit_kperp[0]).sum(axis=-1)
    uy = (w * ms.unit_kperp[1]).sum(axis=-1)
    return np.stack([ux, uy], axis=-1)


def eval_velocity(ms: ModeSet, fs: FluidState, fp: FluidParams, r, m=None) -> np.ndarray:
    """Connector forcing ``U(r, z)``; passing ``m`` selects the
    center-of-mass form, which needs the cosine amplitudes."""
    _check_length(ms, fs)
    if m is not None and fs.y is None:
        raise ValueError("cosine modes required")
    return connector_forcing(ms, fp, r, fs.z, fs.y, m)


def eval_field(ms: ModeSet, fs: FluidState, fp: FluidParams, x) -> np.ndarray:
    """Full velocity field ``u(x)`` from both sine and cosine amplitudes."""
    _check_length(ms, fs)
    if fs.y is None:
        raise ValueError("cosine modes required")
    x = np.asarray(x, dtype=float)
    phase = fp.lam * (x[..., 0:1] * ms.k[:, 0] + x[..., 1:2] * ms.k[:, 1])
    w = np.cos(phase) * fs.y + np.sin(phase) * fs.z
    ux = (w * ms.unit_kperp[0]).sum(axis=-1)
    uy = (w * ms.unit_kperp[1]).sum(axis=-1)
    return np.stack([ux, uy], axis=-1)


def forcing_ratio(ms: ModeSet, fp: FluidParams, n: int, rng) -> float:
    """Largest observed ``|U(r,z)|^2 / ||z||^2`` over random ``(r, z)``.

    Cauchy-Schwarz only guarantees ``N``; values above 1 show that the
    unit-constant pathwise bound does not hold for this mode set.
    """
    r = rng.uniform(0.0, fp.L, size=(n, 2))
    z = rng.standard_normal((n, len(ms)))
    u = connector_forcing(ms, fp, r, z)
    return float(np.max((u**2).sum(-1) / (z**2).sum(-1)))

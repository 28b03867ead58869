"""Radial spring potentials and numerical certificates for their growth
and near-origin repulsion constants."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq, minimize_scalar

__all__ = [
    "PotentialSpec",
    "PotentialCertificate",
    "SingularPointError",
    "hookean",
    "linear_rest",
    "power_law",
    "fene_repulsive",
    "parse_potential",
    "phi",
    "grad_phi",
    "stiffness",
    "verify_assumptions",
    "sublevel_extent",
]


class SingularPointError(ValueError):
    pass


_PARAMS = {
    "hookean": ("gamma",),
    "linear_rest": ("gamma", "R"),
    "power_law": ("q", "alpha"),
    "fene_repulsive": ("gamma_f", "R", "alpha_rep"),
}
_ALIASES = {"fene_repulsive": {"gamma": "gamma_f", "alpha": "alpha_rep"}}


@dataclass(frozen=True)
class PotentialSpec:
    """One member of a spring-potential family.

    ``hookean``         gamma |r|^2 / 2
    ``linear_rest``     gamma (|r| - R)^2 / 2
    ``power_law``       |r|^(2q) / (2q) + |r|^(-alpha) / alpha
    ``fene_repulsive``  -gamma_f R^2 ln(1 - |r|^2/R^2) / 2 + |r|^(-alpha_rep) / alpha_rep
    """

    variant: str
    params: tuple[tuple[str, float], ...]

    def __post_init__(self):
        if self.variant not in _PARAMS:
            raise ValueError(f"unknown potential {self.variant!r}; expected one of {sorted(_PARAMS)}")
        given = dict(self.params)
        names = _PARAMS[self.variant]
        if set(given) != set(names):
            raise ValueError(f"{self.variant} takes parameters {names}, got {sorted(given)}")
        for name in names:
            v = float(given[name])
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{self.variant}: {name} must be positive, got {v}")
        if self.variant == "power_law" and given["q"] < 1:
            raise ValueError("power_law: q must be >= 1")
        object.__setattr__(self, "params", tuple((n, float(given[n])) for n in names))

    def __getitem__(self, name):
        return dict(self.params)[name]

    @property
    def singular(self) -> bool:
        """True when the gradient is undefined or infinite at the origin."""
        return self.variant != "hookean"

    @property
    def r_max(self) -> float:
        return self["R"] if self.variant == "fene_repulsive" else math.inf

    def to_text(self) -> str:
        return " ".join([self.variant] + [f"{n}={v!r}" for n, v in self.params])

    # radial profile -------------------------------------------------------

    def value(self, rho):
        p = dict(self.params)
        rho = np.asarray(rho, dtype=float)
        if self.variant == "hookean":
            return 0.5 * p["gamma"] * rho**2
        if self.variant == "linear_rest":
            return 0.5 * p["gamma"] * (rho - p["R"]) ** 2
        if self.variant == "power_law":
            q, a = p["q"], p["alpha"]
            return rho ** (2 * q) / (2 * q) + rho ** (-a) / a
        g, R, a = p["gamma_f"], p["R"], p["alpha_rep"]
        return -0.5 * g * R**2 * np.log1p(-(rho**2) / R**2) + rho ** (-a) / a

    def dphi(self, rho):
        """Radial derivative ``Phi'(rho)``."""
        return self.dphi_over_r(rho) * np.asarray(rho, dtype=float)

    def dphi_over_r(self, rho):
        """``Phi'(rho) / rho``; the gradient is this times ``r``."""
        p = dict(self.params)
        rho = np.asarray(rho, dtype=float)
        if self.variant == "hookean":
            return np.full_like(rho, p["gamma"])
        if self.variant == "linear_rest":
            return p["gamma"] * (1.0 - p["R"] / rho)
        if self.variant == "power_law":
            q, a = p["q"], p["alpha"]
            return rho ** (2 * q - 2) - rho ** (-a - 2)
        g, R, a = p["gamma_f"], p["R"], p["alpha_rep"]
        return g / (1.0 - rho**2 / R**2) - rho ** (-a - 2)

    def d2phi(self, rho):
        p = dict(self.params)
        rho = np.asarray(rho, dtype=float)
        if self.variant in ("hookean", "linear_rest"):
            return np.full_like(rho, p["gamma"])
        if self.variant == "power_law":
            q, a = p["q"], p["alpha"]
            return (2 * q - 1) * rho ** (2 * q - 2) + (a + 1) * rho ** (-a - 2)
        g, R, a = p["gamma_f"], p["R"], p["alpha_rep"]
        u = rho**2 / R**2
        return g * (1.0 + u) / (1.0 - u) ** 2 + (a + 1) * rho ** (-a - 2)


def hookean(gamma: float) -> PotentialSpec:
    return PotentialSpec("hookean", (("gamma", gamma),))


def linear_rest(gamma: float, R: float) -> PotentialSpec:
    return PotentialSpec("linear_rest", (("gamma", gamma), ("R", R)))


def power_law(q: float = 1.0, alpha: float = 12.0) -> PotentialSpec:
    return PotentialSpec("power_law", (("q", q), ("alpha", alpha)))


def fene_repulsive(gamma_f: float, R: float, alpha_rep: float) -> PotentialSpec:
    return PotentialSpec("fene_repulsive", (("gamma_f", gamma_f), ("R", R), ("alpha_rep", alpha_rep)))


def parse_potential(text: str) -> PotentialSpec:
    """Parse ``"power_law q=1 alpha=12"`` style descriptions."""
    parts = text.split()
    if not parts:
        raise ValueError("empty potential description")
    variant, params = parts[0], {}
    aliases = _ALIASES.get(variant, {})
    for item in parts[1:]:
        if "=" not in item:
            raise ValueError(f"potential parameter {item!r} is not key=value")
        key, val = item.split("=", 1)
        key = aliases.get(key, key)
        if key in params:
            raise ValueError(f"duplicate potential parameter {key!r}")
        try:
            params[key] = float(val)
        except ValueError:
            raise ValueError(f"potential parameter {key}={val!r} is not a number") from None
    return PotentialSpec(variant, tuple(params.items()))


def _radius(spec: PotentialSpec, r):
    r = np.asarray(r, dtype=float)
    rho = np.hypot(r[..., 0], r[..., 1])
    if spec.singular and np.any(rho == 0):
        raise SingularPointError("singular point: |r| = 0")
    if np.any(rho >= spec.r_max):
        raise SingularPointError("beyond extensibility: |r| >= R")
    return r, rho


def phi(spec: PotentialSpec, r):
    """Potential energy at connector ``r`` (batched over leading axes)."""
    _, rho = _radius(spec, r)
    out = spec.value(rho)
    return float(out) if np.ndim(out) == 0 else out


def grad_phi(spec: PotentialSpec, r) -> np.ndarray:
    """Exact gradient ``Phi'(|r|) r / |r|``."""
    r, rho = _radius(spec, r)
    return spec.dphi_over_r(rho)[..., None] * r


def stiffness(spec: PotentialSpec, rho):
    """Spectral radius of the Hessian of a radial potential at radius ``rho``."""
    return np.maximum(np.abs(spec.d2phi(rho)), np.abs(spec.dphi_over_r(rho)))


@dataclass(frozen=True)
class PotentialCertificate:
    """Grid-verified constants.

    ``grad Phi(r).r >= gamma |r|^2`` for ``R0 <= |r| <= R_probe`` and
    ``-grad Phi(r).r >= c`` for ``r_floor <= |r| <= eps0``.
    ``small_r_vanishes`` flags a repulsion that decays towards the floor,
    i.e. the constant ``c`` would not survive the limit ``|r| -> 0``.
    """

    R0: float
    gamma: float
    eps0: float
    c: float
    r_floor: float
    R_probe: float
    passed_large_r: bool
    passed_small_r: bool
    small_r_vanishes: bool = False


def _refined_min(f, grid, values):
    i = int(np.argmin(values))
    best = float(values[i])
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    if hi > lo:
        res = minimize_scalar(f, bounds=(lo, hi), method="bounded", options={"xatol": 1e-12 * hi})
        best = min(best, float(res.fun))
    return best


def verify_assumptions(
    spec: PotentialSpec,
    R_probe: float = 50.0,
    r_floor: float = 1e-4,
    grid_n: int = 2000,
    R0: float | None = None,
    eps0: float | None = None,
) -> PotentialCertificate:
    """Scan ``|r|`` on a log grid and certify the potential's constants.

    Unless given, ``R0`` is twice the outermost zero of ``grad Phi . r``
    and ``eps0`` half the innermost zero of ``-grad Phi . r``; ``gamma``
    and ``c`` are the refined grid minima over the respective ranges.
    """
    if not 0 < r_floor < R_probe:
        raise ValueError("need 0 < r_floor < R_probe")
    if grid_n < 100:
        raise ValueError("grid_n must be >= 100")
    R_hi = min(R_probe, spec.r_max * (1 - 1e-9))
    grid = np.geomspace(r_floor, R_hi, grid_n)
    outward = lambda x: float(spec.dphi(x) * x)  # noqa: E731  grad Phi(r).r
    g = spec.dphi(grid) * grid

    # coercivity at large |r|
    if R0 is None:
        neg = np.nonzero(g <= 0)[0]
        if len(neg) == 0:
            R0 = r_floor
        else:
            i = neg[-1]
            root = grid[i] if i == len(grid) - 1 else brentq(outward, grid[i], grid[i + 1], xtol=1e-15)
            R0 = min(2.0 * root, 0.5 * (root + R_hi))
    R0 = float(R0)
    if R0 >= R_hi:
        gamma, passed_large = -math.inf, False
    else:
        sub = np.concatenate([[R0], grid[grid > R0]])
        ratio = lambda x: outward(x) / x**2  # noqa: E731
        gamma = _refined_min(ratio, sub, spec.dphi_over_r(sub))
        passed_large = gamma > 0

    # repulsion near the origin
    repel = lambda x: -outward(x)  # noqa: E731
    vanishes = False
    if eps0 is None:
        pos = -g > 0
        if not pos[0]:
            eps0 = math.nan
        else:
            bad = np.nonzero(~pos)[0]
            if len(bad) == 0:
                eps0 = 0.5 * R_hi
            else:
                j = bad[0]
                root = brentq(repel, grid[j - 1], grid[j], xtol=1e-15)
                eps0 = 0.5 * root
    eps0 = float(eps0)
    if not (eps0 > r_floor):
        c, passed_small = -math.inf, False
    else:
        sub = np.concatenate([grid[grid < eps0], [eps0]])
        c = _refined_min(repel, sub, -spec.dphi(sub) * sub)
        vanishes = repel(r_floor / 10.0) < c
        passed_small = c > 0 and not vanishes
    return PotentialCertificate(
        R0=R0,
        gamma=float(gamma),
        eps0=eps0,
        c=float(c),
        r_floor=float(r_floor),
        R_probe=float(R_hi),
        passed_large_r=bool(passed_large),
        passed_small_r=bool(passed_small),
        small_r_vanishes=bool(vanishes),
    )


def sublevel_extent(spec: PotentialSpec, level: float, r_floor: float = 1e-4, R_probe: float = 1e3, n: int = 20000):
    """Smallest and largest grid radius with ``Phi <= level``; ``None`` if empty."""
    grid = np.geomspace(r_floor, min(R_probe, spec.r_max * (1 - 1e-12)), n)
    inside = grid[spec.value(grid) <= level]
    if len(inside) == 0:
        return None
    return float(inside.min()), float(inside.max())

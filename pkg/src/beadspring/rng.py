"""Counter-based Gaussian noise.

Every normal variate is a pure function of ``(seed, trajectory, step,
channel, slot)``, so ensembles can be evaluated in any order or batch
composition and still reproduce bit for bit.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

__all__ = ["CounterNoise", "Stream"]

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)

# noise channels used by the integrator
Z_FIRST, Z_SECOND, Y_FIRST, Y_SECOND, KAPPA, INIT_Z, INIT_Y, AUX = range(8)


def _mix(x: np.ndarray) -> np.ndarray:
    # splitmix64 finalizer; uint64 arithmetic wraps
    x = x + _GOLDEN
    x = (x ^ (x >> _S30)) * _M1
    x = (x ^ (x >> _S27)) * _M2
    return x ^ (x >> _S31)


class CounterNoise:
    """Stateless source of standard normals keyed by integer counters."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._key = _mix(np.array([self.seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64))[0]

    def normals(self, ids, step: int, channel: int, size: int) -> np.ndarray:
        """Standard normals of shape ``(len(ids), size)``."""
        ids = np.asarray(ids, dtype=np.uint64).reshape(-1, 1)
        with np.errstate(over="ignore"):
            h = _mix(self._key + ids)
            h = _mix(h + np.uint64(int(step) & 0xFFFFFFFFFFFFFFFF))
            slots = (np.uint64(channel) << np.uint64(40)) + np.arange(size, dtype=np.uint64)
            h = _mix(h + slots[None, :])
        u = ((h >> _S11).astype(np.float64) + 0.5) * 2.0**-53
        return ndtri(u)

    def stream(self, trajectory: int) -> "Stream":
        return Stream(self, trajectory)

    def __repr__(self):
        return f"CounterNoise(seed={self.seed})"


class Stream:
    """The noise of a single trajectory."""

    def __init__(self, noise: CounterNoise | int, trajectory: int = 0):
        if not isinstance(noise, CounterNoise):
            noise = CounterNoise(noise)
        self.noise = noise
        self.trajectory = int(trajectory)

    def normals(self, step: int, channel: int, size: int) -> np.ndarray:
        return self.noise.normals([self.trajectory], step, channel, size)[0]

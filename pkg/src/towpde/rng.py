"""Counter-based uniforms for reproducible, batch-independent Monte Carlo.

Each draw is a pure function of ``(seed, trajectory, step, slot)`` built
from the SplitMix64 finalizer, so results do not depend on how
trajectories are batched, ordered or spread over threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_TRAJ = np.uint64(0xD1B54A32D192ED03)
SLOTS_PER_STEP = 64


def mix64(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@dataclass(frozen=True)
class RngSpec:
    seed: int

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def bits(self, traj, step: int, slot: int) -> np.ndarray:
        if not 0 <= slot < SLOTS_PER_STEP:
            raise ValueError("slot out of range")
        traj = np.asarray(traj, dtype=np.uint64)
        with np.errstate(over="ignore"):
            key = mix64(np.array([self.seed], dtype=np.uint64) + _GAMMA)
            x = mix64(key ^ (traj * _TRAJ))
            ctr = np.uint64(step * SLOTS_PER_STEP + slot + 1)
            return mix64(x + ctr * _GAMMA)

    def uniforms(self, traj, step: int, slot: int) -> np.ndarray:
        """Uniforms on ``(0, 1]`` (53-bit resolution)."""
        b = self.bits(traj, step, slot)
        return ((b >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53


def hash_uniforms(seed: int, step: int, points: np.ndarray, slot: int = 0) -> np.ndarray:
    """Uniforms on ``(0, 1]`` determined by a seed, a step index and float coordinates."""
    pts = np.ascontiguousarray(points, dtype=np.float64)
    words = pts.view(np.uint64).reshape(len(pts), -1)
    with np.errstate(over="ignore"):
        acc = mix64(np.full(len(pts), seed, dtype=np.uint64) + _GAMMA)
        acc = mix64(acc ^ np.uint64(step * SLOTS_PER_STEP + slot + 1))
        for j in range(words.shape[1]):
            acc = mix64(acc ^ (words[:, j] * _TRAJ))
    return ((acc >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53

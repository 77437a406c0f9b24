"""
Synthetic fixtures: smooth disks, Gaussian blobs, rigid rotation and the
manufactured Stokes problem. Used by the self-test and the test suite.
"""
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .grid import ScalarField, VectorField

DISK_SIZE = 64
DISK_RADIUS = 12.0
DISK_EDGE = 1.5
DISK_OUTSIDE = 50.0
DISK_INSIDE = 200.0


def smooth_disk(
    width: int = DISK_SIZE,
    height: int = DISK_SIZE,
    center: Optional[Tuple[float, float]] = None,
    radius: float = DISK_RADIUS,
    edge: float = DISK_EDGE,
    inside: float = DISK_INSIDE,
    outside: float = DISK_OUTSIDE,
) -> ScalarField:
    """Disk with a tanh edge of width ``edge`` pixels."""
    cx, cy = center if center is not None else ((width - 1) / 2.0, (height - 1) / 2.0)
    y, x = np.mgrid[0:height, 0:width].astype(np.float64)
    r = np.hypot(x - cx, y - cy)
    profile = 0.5 * (1.0 - np.tanh((r - radius) / edge))
    return ScalarField(outside + (inside - outside) * profile)


def translated_disk_pair(
    shift: float = 4.0, size: int = DISK_SIZE, **kwargs
) -> Tuple[ScalarField, ScalarField, ScalarField]:
    """(u0, uT, truth at T/2) for a disk moving ``shift`` pixels along x."""
    c = (size - 1) / 2.0
    u0 = smooth_disk(size, size, (c - shift / 2.0, c), **kwargs)
    uT = smooth_disk(size, size, (c + shift / 2.0, c), **kwargs)
    mid = smooth_disk(size, size, (c, c), **kwargs)
    return u0, uT, mid


def gaussian_blob(
    width: int,
    height: int,
    center: Tuple[float, float],
    sigma: float,
    amplitude: float = 100.0,
    background: float = 0.0,
) -> ScalarField:
    y, x = np.mgrid[0:height, 0:width].astype(np.float64)
    r2 = (x - center[0]) ** 2 + (y - center[1]) ** 2
    return ScalarField(background + amplitude * np.exp(-r2 / (2.0 * sigma ** 2)))


def rotation_field(
    width: int, height: int, omega: float = 1.0, center: Optional[Tuple[float, float]] = None
) -> VectorField:
    """Rigid rotation (v, w) = ω·(−(y − cy), x − cx), counterclockwise for ω > 0."""
    cx, cy = center if center is not None else ((width - 1) / 2.0, (height - 1) / 2.0)
    y, x = np.mgrid[0:height, 0:width].astype(np.float64)
    return VectorField(-omega * (y - cy), omega * (x - cx))


def step_profile(width: int = 64, height: int = 8, edge: int = 32,
                 left: float = 1.0, right: float = 0.0) -> ScalarField:
    """Rows equal to ``left`` for i < edge and ``right`` elsewhere."""
    row = np.where(np.arange(width) < edge, left, right)
    return ScalarField(np.tile(row, (height, 1)))


def _poly(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """x²(1−x)² and its first three derivatives."""
    return (
        x ** 2 - 2.0 * x ** 3 + x ** 4,
        2.0 * x - 6.0 * x ** 2 + 4.0 * x ** 3,
        2.0 - 12.0 * x + 12.0 * x ** 2,
        -12.0 + 24.0 * x,
    )


@dataclass(frozen=True)
class ManufacturedStokes:
    """Closed-form solution of λΔb + ∇q = f on the unit square.

    Stream function ψ = x²(1−x)²y²(1−y)², b = (∂ψ/∂y, −∂ψ/∂x), q = x³ − 1/4.
    """

    lam: float = 1.0

    def velocity(self, x: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        X, Xp, _, _ = _poly(x)
        Y, Yp, _, _ = _poly(y)
        return X * Yp, -Xp * Y

    def pressure(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return np.asarray(x) ** 3 - 0.25 + 0.0 * np.asarray(y)

    def force(self, x: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        X, Xp, Xpp, Xppp = _poly(x)
        Y, Yp, Ypp, Yppp = _poly(y)
        lap_b1 = Xpp * Yp + X * Yppp
        lap_b2 = -(Xppp * Y + Xp * Ypp)
        return self.lam * lap_b1 + 3.0 * np.asarray(x) ** 2, self.lam * lap_b2

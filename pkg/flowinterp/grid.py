"""
Field containers and resampling shared by all solvers.

Holds the scalar/vector grids, the piecewise-constant time flow, backtrace maps,
the bicubic image pyramid, natural cubic-spline warping and bilinear flow sampling.
All arrays are stored row-major as ``(height, width)`` with index units (h = 1 pixel
unless ``spacing`` says otherwise).
"""
import logging
import math
from dataclasses import dataclass
from typing import Iterator, Sequence, Tuple, Union

import numpy as np
from scipy.interpolate import NdBSpline, make_interp_spline

# Configure logger
logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

MIN_SIZE = 4
MIN_DOWNSAMPLE_SIZE = 8
CATMULL_ROM_A = -0.5


class FlowInterpError(Exception):
    """Base exception for flowinterp errors."""
    pass


class DimensionError(FlowInterpError, ValueError):
    """Raised when field sizes violate a precondition (too small, mismatched)."""
    pass


class CflViolationError(FlowInterpError):
    """Raised when an explicit transport step exceeds the CFL bound."""
    pass


class DegenerateElementError(FlowInterpError):
    """Raised when a mesh triangle has non-positive area."""
    pass


class StokesConvergenceError(FlowInterpError):
    """Raised when the saddle-point solver misses its tolerance."""

    def __init__(self, message: str, residual: float, iterations: int) -> None:
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class NonFiniteCostError(FlowInterpError):
    """Raised when a segregation loop produces NaN/Inf values."""

    def __init__(self, message: str, iteration: int) -> None:
        super().__init__(message)
        self.iteration = iteration


class ImageIOError(FlowInterpError):
    """Raised when an image, flow or config file cannot be read or written."""
    pass


class ConfigError(FlowInterpError, ValueError):
    """Raised on invalid configuration values."""
    pass


def _frozen(array: np.ndarray) -> np.ndarray:
    out = np.array(array, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out


def _check_finite(name: str, array: np.ndarray) -> None:
    if not np.all(np.isfinite(array)):
        raise ValueError(f"{name} contains NaN or Inf values")


@dataclass(frozen=True, eq=False)
class ScalarField:
    """A W×H real-valued grid (image, adjoint state, pressure).

    Attributes:
        values: Array of shape (height, width); copied and made read-only.
        spacing: Grid step h (default: 1.0 pixel).
    """

    values: np.ndarray
    spacing: float = 1.0

    def __post_init__(self) -> None:
        values = _frozen(self.values)
        if values.ndim != 2:
            raise DimensionError(f"ScalarField needs a 2-D array, got shape {values.shape}")
        if values.shape[0] < MIN_SIZE or values.shape[1] < MIN_SIZE:
            raise DimensionError(
                f"ScalarField must be at least {MIN_SIZE}x{MIN_SIZE}, "
                f"got {values.shape[1]}x{values.shape[0]}"
            )
        _check_finite("ScalarField", values)
        if self.spacing <= 0:
            raise ValueError("spacing must be positive")
        object.__setattr__(self, "values", values)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    @classmethod
    def zeros(cls, width: int, height: int, spacing: float = 1.0) -> "ScalarField":
        return cls(np.zeros((height, width)), spacing)

    @classmethod
    def constant(cls, width: int, height: int, value: float, spacing: float = 1.0) -> "ScalarField":
        return cls(np.full((height, width), float(value)), spacing)

    def same_grid(self, other: "Union[ScalarField, VectorField]") -> bool:
        return self.shape == other.shape and self.spacing == other.spacing

    def require_same_grid(self, other: "Union[ScalarField, VectorField]") -> None:
        if self.shape != other.shape:
            raise DimensionError(
                f"grid mismatch: {self.width}x{self.height} vs {other.width}x{other.height}"
            )

    def map(self, fn) -> "ScalarField":
        return ScalarField(fn(self.values), self.spacing)

    def __add__(self, other: "Union[ScalarField, float]") -> "ScalarField":
        if isinstance(other, ScalarField):
            self.require_same_grid(other)
            return ScalarField(self.values + other.values, self.spacing)
        return ScalarField(self.values + other, self.spacing)

    def __sub__(self, other: "Union[ScalarField, float]") -> "ScalarField":
        if isinstance(other, ScalarField):
            self.require_same_grid(other)
            return ScalarField(self.values - other.values, self.spacing)
        return ScalarField(self.values - other, self.spacing)

    def __mul__(self, factor: float) -> "ScalarField":
        return ScalarField(self.values * factor, self.spacing)

    __rmul__ = __mul__

    def __neg__(self) -> "ScalarField":
        return ScalarField(-self.values, self.spacing)

    def __repr__(self) -> str:
        return f"ScalarField({self.width}x{self.height}, h={self.spacing})"


@dataclass(frozen=True, eq=False)
class VectorField:
    """A W×H grid of 2-vectors (v, w) sampled at pixel centers.

    The model requires b = 0 on the boundary ring; the operations that produce flows
    (upsampling, Stokes solves, control right-hand sides) guarantee it, while the
    constructor accepts any finite field.
    """

    v: np.ndarray
    w: np.ndarray
    spacing: float = 1.0

    def __post_init__(self) -> None:
        v = _frozen(self.v)
        w = _frozen(self.w)
        if v.shape != w.shape or v.ndim != 2:
            raise DimensionError(f"component shapes differ: {v.shape} vs {w.shape}")
        if v.shape[0] < MIN_SIZE or v.shape[1] < MIN_SIZE:
            raise DimensionError(
                f"VectorField must be at least {MIN_SIZE}x{MIN_SIZE}, "
                f"got {v.shape[1]}x{v.shape[0]}"
            )
        _check_finite("VectorField", v)
        _check_finite("VectorField", w)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "w", w)

    @property
    def width(self) -> int:
        return self.v.shape[1]

    @property
    def height(self) -> int:
        return self.v.shape[0]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.v.shape

    @classmethod
    def zeros(cls, width: int, height: int, spacing: float = 1.0) -> "VectorField":
        return cls(np.zeros((height, width)), np.zeros((height, width)), spacing)

    @classmethod
    def uniform(
        cls, width: int, height: int, v: float, w: float, spacing: float = 1.0
    ) -> "VectorField":
        return cls(np.full((height, width), float(v)), np.full((height, width), float(w)), spacing)

    def max_speed(self) -> float:
        """Largest component magnitude max(|v|_max, |w|_max)."""
        return float(max(np.abs(self.v).max(), np.abs(self.w).max()))

    def is_zero(self) -> bool:
        return not (np.any(self.v) or np.any(self.w))

    def with_zero_boundary(self) -> "VectorField":
        v = np.array(self.v)
        w = np.array(self.w)
        for comp in (v, w):
            comp[0, :] = comp[-1, :] = 0.0
            comp[:, 0] = comp[:, -1] = 0.0
        return VectorField(v, w, self.spacing)

    @property
    def boundary_is_zero(self) -> bool:
        ring = np.concatenate([
            self.v[0, :], self.v[-1, :], self.v[:, 0], self.v[:, -1],
            self.w[0, :], self.w[-1, :], self.w[:, 0], self.w[:, -1],
        ])
        return not np.any(ring)

    def require_same_grid(self, other: "Union[ScalarField, VectorField]") -> None:
        if self.shape != other.shape:
            raise DimensionError(
                f"grid mismatch: {self.width}x{self.height} vs {other.width}x{other.height}"
            )

    def __add__(self, other: "VectorField") -> "VectorField":
        self.require_same_grid(other)
        return VectorField(self.v + other.v, self.w + other.w, self.spacing)

    def __sub__(self, other: "VectorField") -> "VectorField":
        self.require_same_grid(other)
        return VectorField(self.v - other.v, self.w - other.w, self.spacing)

    def __mul__(self, factor: float) -> "VectorField":
        return VectorField(self.v * factor, self.w * factor, self.spacing)

    __rmul__ = __mul__

    def __neg__(self) -> "VectorField":
        return VectorField(-self.v, -self.w, self.spacing)

    def __repr__(self) -> str:
        return f"VectorField({self.width}x{self.height}, max_speed={self.max_speed():.4g})"


@dataclass(frozen=True, eq=False)
class TimeFlow:
    """Piecewise-constant-in-time flow b(t, ·) over [0, T].

    Sample k is valid on [kT/N_t, (k+1)T/N_t).
    """

    horizon: float
    samples: Tuple[VectorField, ...]

    def __post_init__(self) -> None:
        samples = tuple(self.samples)
        if not samples:
            raise ValueError("TimeFlow needs at least one sample")
        if self.horizon <= 0:
            raise ValueError("horizon T must be positive")
        first = samples[0]
        for sample in samples[1:]:
            first.require_same_grid(sample)
        object.__setattr__(self, "samples", samples)

    @classmethod
    def stationary(cls, b: VectorField, horizon: float = 1.0) -> "TimeFlow":
        return cls(horizon, (b,))

    @classmethod
    def zeros(
        cls, width: int, height: int, horizon: float = 1.0, n_t: int = 1, spacing: float = 1.0
    ) -> "TimeFlow":
        return cls(horizon, tuple(VectorField.zeros(width, height, spacing) for _ in range(n_t)))

    @property
    def n_t(self) -> int:
        return len(self.samples)

    @property
    def width(self) -> int:
        return self.samples[0].width

    @property
    def height(self) -> int:
        return self.samples[0].height

    @property
    def spacing(self) -> float:
        return self.samples[0].spacing

    def __iter__(self) -> Iterator[VectorField]:
        return iter(self.samples)

    def interval(self, k: int) -> Tuple[float, float]:
        step = self.horizon / self.n_t
        return k * step, (k + 1) * step

    def boundaries(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.n_t + 1)

    def index_at(self, t: float) -> int:
        k = int(math.floor(t * self.n_t / self.horizon))
        return min(max(k, 0), self.n_t - 1)

    def sample_at(self, t: float) -> VectorField:
        return self.samples[self.index_at(t)]

    def max_speed(self) -> float:
        return max(sample.max_speed() for sample in self.samples)

    def is_zero(self) -> bool:
        return all(sample.is_zero() for sample in self.samples)

    def reversed(self) -> "TimeFlow":
        """Time-reversed, sign-flipped flow: b̃(t') = −b(T − t')."""
        return TimeFlow(self.horizon, tuple(-sample for sample in reversed(self.samples)))

    def map(self, fn) -> "TimeFlow":
        return TimeFlow(self.horizon, tuple(fn(sample) for sample in self.samples))

    def __add__(self, other: "TimeFlow") -> "TimeFlow":
        if other.n_t != self.n_t:
            raise DimensionError(f"time sample mismatch: {self.n_t} vs {other.n_t}")
        return TimeFlow(self.horizon, tuple(a + b for a, b in zip(self.samples, other.samples)))

    def __neg__(self) -> "TimeFlow":
        return self.map(lambda sample: -sample)


@dataclass(frozen=True, eq=False)
class BacktraceMap:
    """Foot points of the characteristics for every pixel, clamped to the grid rectangle."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self) -> None:
        x = np.array(self.x, dtype=np.float64)
        y = np.array(self.y, dtype=np.float64)
        if x.shape != y.shape or x.ndim != 2:
            raise DimensionError(f"coordinate shapes differ: {x.shape} vs {y.shape}")
        height, width = x.shape
        np.clip(x, 0.0, width - 1, out=x)
        np.clip(y, 0.0, height - 1, out=y)
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def width(self) -> int:
        return self.x.shape[1]

    @property
    def height(self) -> int:
        return self.x.shape[0]

    @classmethod
    def identity(cls, width: int, height: int) -> "BacktraceMap":
        y, x = np.mgrid[0:height, 0:width].astype(np.float64)
        return cls(x, y)

    def is_identity(self) -> bool:
        y, x = np.mgrid[0:self.height, 0:self.width]
        return bool(np.array_equal(self.x, x) and np.array_equal(self.y, y))


def _catmull_rom(s: np.ndarray) -> np.ndarray:
    a = CATMULL_ROM_A
    s = np.abs(s)
    out = np.zeros_like(s)
    near = s <= 1.0
    far = (s > 1.0) & (s < 2.0)
    out[near] = (a + 2.0) * s[near] ** 3 - (a + 3.0) * s[near] ** 2 + 1.0
    out[far] = a * s[far] ** 3 - 5.0 * a * s[far] ** 2 + 8.0 * a * s[far] - 4.0 * a
    return out


def bicubic_matrix(n_in: int, coords: np.ndarray, stretch: float = 1.0) -> np.ndarray:
    """Dense 1-D Catmull–Rom interpolation matrix with edge-replicated samples.

    Row k holds the weights that evaluate the interpolant at ``coords[k]``. With
    ``stretch > 1`` the kernel is widened (antialiased decimation) and rows are
    renormalised.
    """
    coords = np.asarray(coords, dtype=np.float64)
    radius = 2.0 * stretch
    lo = np.ceil(coords - radius).astype(int)
    n_taps = int(np.ceil(2 * radius)) + 1
    taps = lo[:, None] + np.arange(n_taps)[None, :]
    weights = _catmull_rom((coords[:, None] - taps) / stretch)
    if stretch != 1.0:
        weights /= weights.sum(axis=1, keepdims=True)
    matrix = np.zeros((coords.size, n_in))
    rows = np.repeat(np.arange(coords.size), n_taps)
    np.add.at(matrix, (rows, np.clip(taps, 0, n_in - 1).ravel()), weights.ravel())
    return matrix


def _resample(values: np.ndarray, xs: np.ndarray, ys: np.ndarray, stretch: float = 1.0) -> np.ndarray:
    mx = bicubic_matrix(values.shape[1], xs, stretch)
    my = bicubic_matrix(values.shape[0], ys, stretch)
    return my @ values @ mx.T


def downsample_bicubic(f: ScalarField, antialias: bool = False) -> ScalarField:
    """Halve a field: evaluate the bicubic interpolant at sample points (2i, 2j).

    Output size is ceil(width/2) × ceil(height/2).

    Raises:
        DimensionError: If width or height is below 8.
    """
    if f.width < MIN_DOWNSAMPLE_SIZE or f.height < MIN_DOWNSAMPLE_SIZE:
        raise DimensionError(
            f"cannot downsample a {f.width}x{f.height} field "
            f"(needs at least {MIN_DOWNSAMPLE_SIZE}x{MIN_DOWNSAMPLE_SIZE})"
        )
    out_w = (f.width + 1) // 2
    out_h = (f.height + 1) // 2
    xs = 2.0 * np.arange(out_w)
    ys = 2.0 * np.arange(out_h)
    stretch = 2.0 if antialias else 1.0
    logger.debug(f"Downsampling {f.width}x{f.height} -> {out_w}x{out_h} (antialias={antialias})")
    return ScalarField(_resample(f.values, xs, ys, stretch), f.spacing)


def _coarse_coordinates(n_coarse: int, n_fine: int) -> np.ndarray:
    if (n_fine + 1) // 2 == n_coarse:
        return np.arange(n_fine) / 2.0
    return np.arange(n_fine) * (n_coarse / n_fine)


def upsample_flow_bicubic(b: VectorField, target_w: int, target_h: int) -> VectorField:
    """Bicubically upsample a flow to the next-finer pyramid level.

    Both components are multiplied by ``target_w / width`` so displacements keep
    their size in pixels; the boundary ring of the result is zero.

    Raises:
        DimensionError: If the target aspect ratio differs by more than one pixel.
    """
    factor = target_w / b.width
    if abs(b.height * factor - target_h) > 1.0:
        raise DimensionError(
            f"aspect mismatch upsampling {b.width}x{b.height} to {target_w}x{target_h}"
        )
    xs = _coarse_coordinates(b.width, target_w)
    ys = _coarse_coordinates(b.height, target_h)
    v = _resample(b.v, xs, ys) * factor
    w = _resample(b.w, xs, ys) * factor
    logger.debug(f"Upsampled flow {b.width}x{b.height} -> {target_w}x{target_h} (x{factor:g})")
    return VectorField(v, w, b.spacing).with_zero_boundary()


def upsample_flow(flow: TimeFlow, target_w: int, target_h: int) -> TimeFlow:
    return flow.map(lambda sample: upsample_flow_bicubic(sample, target_w, target_h))


def natural_spline(values: np.ndarray) -> NdBSpline:
    """Tensor-product cubic spline with natural (zero second derivative) ends.

    Coefficients are fitted along x for every row, then along y for every
    coefficient column; evaluation takes points as (y, x).
    """
    height, width = values.shape
    along_x = make_interp_spline(np.arange(width, dtype=float), values, k=3,
                                 bc_type="natural", axis=1)
    along_y = make_interp_spline(np.arange(height, dtype=float), along_x.c, k=3,
                                 bc_type="natural", axis=1)
    return NdBSpline((along_y.t, along_x.t), along_y.c, 3)


def warp(f: ScalarField, m: BacktraceMap) -> ScalarField:
    """Evaluate the natural cubic-spline interpolant of ``f`` at the map coordinates."""
    if (m.width, m.height) != (f.width, f.height):
        raise DimensionError(
            f"map {m.width}x{m.height} does not match field {f.width}x{f.height}"
        )
    if m.is_identity():
        return f
    spline = natural_spline(f.values)
    points = np.stack([m.y.ravel(), m.x.ravel()], axis=-1)
    return ScalarField(spline(points).reshape(f.shape), f.spacing)


def sample_flow_bilinear(b: VectorField, x: ArrayLike, y: ArrayLike) -> Tuple[ArrayLike, ArrayLike]:
    """Bilinear blend of the four surrounding pixel values, per component.

    Accepts scalars or arrays; coordinates are clamped to the grid rectangle.
    """
    scalar = np.ndim(x) == 0 and np.ndim(y) == 0
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, b.width - 1)
    y = np.clip(np.asarray(y, dtype=np.float64), 0.0, b.height - 1)
    i0 = np.minimum(np.floor(x).astype(int), b.width - 2)
    j0 = np.minimum(np.floor(y).astype(int), b.height - 2)
    tx = x - i0
    ty = y - j0

    def blend(comp: np.ndarray) -> np.ndarray:
        return ((1.0 - tx) * (1.0 - ty) * comp[j0, i0]
                + tx * (1.0 - ty) * comp[j0, i0 + 1]
                + (1.0 - tx) * ty * comp[j0 + 1, i0]
                + tx * ty * comp[j0 + 1, i0 + 1])

    v, w = blend(b.v), blend(b.w)
    if scalar:
        return float(v), float(w)
    return v, w


def pyramid_shapes(width: int, height: int, levels: int) -> Sequence[Tuple[int, int]]:
    """(width, height) of levels 0..L, finest first."""
    shapes = [(width, height)]
    for _ in range(levels):
        w, h = shapes[-1]
        shapes.append(((w + 1) // 2, (h + 1) // 2))
    return shapes


def max_pyramid_levels(width: int, height: int) -> int:
    """Deepest L for which every level but the coarsest can still be halved."""
    levels = 0
    while min(width, height) >= MIN_DOWNSAMPLE_SIZE:
        width, height = (width + 1) // 2, (height + 1) // 2
        levels += 1
    return levels


def build_pyramid(f: ScalarField, levels: int, antialias: bool = False) -> Sequence[ScalarField]:
    """Fields of levels 0..L, finest first."""
    pyramid = [f]
    for _ in range(levels):
        pyramid.append(downsample_bicubic(pyramid[-1], antialias=antialias))
    return pyramid

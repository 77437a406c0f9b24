"""
Tests for field containers, pyramid resampling and warping.
"""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowinterp.grid import (
    BacktraceMap,
    DimensionError,
    ScalarField,
    TimeFlow,
    VectorField,
    build_pyramid,
    downsample_bicubic,
    max_pyramid_levels,
    pyramid_shapes,
    sample_flow_bilinear,
    upsample_flow,
    upsample_flow_bicubic,
    warp,
)


def keys_kernel(s):
    """Catmull–Rom kernel, a = -0.5, written out per sample."""
    s = abs(s)
    if s <= 1.0:
        return 1.5 * s ** 3 - 2.5 * s ** 2 + 1.0
    if s < 2.0:
        return -0.5 * s ** 3 + 2.5 * s ** 2 - 4.0 * s + 2.0
    return 0.0


def dense_bicubic(values, x, y):
    """Evaluate the edge-replicated bicubic interpolant at one point."""
    height, width = values.shape
    total = 0.0
    for n in range(int(np.floor(y)) - 2, int(np.floor(y)) + 4):
        for m in range(int(np.floor(x)) - 2, int(np.floor(x)) + 4):
            weight = keys_kernel(x - m) * keys_kernel(y - n)
            if weight:
                total += weight * values[min(max(n, 0), height - 1), min(max(m, 0), width - 1)]
    return total


class TestScalarField:
    """Test ScalarField construction and arithmetic."""

    def test_shape_and_spacing(self):
        """Test width/height follow the (height, width) array layout."""
        f = ScalarField(np.zeros((5, 7)), spacing=0.5)
        assert (f.width, f.height) == (7, 5)
        assert f.spacing == 0.5

    def test_values_are_read_only(self):
        """Test that stored values cannot be mutated."""
        f = ScalarField.zeros(6, 6)
        with pytest.raises(ValueError):
            f.values[0, 0] = 1.0

    def test_constructor_copies(self):
        """Test the caller's array is not aliased."""
        raw = np.ones((4, 4))
        f = ScalarField(raw)
        raw[0, 0] = 9.0
        assert f.values[0, 0] == 1.0

    def test_too_small(self):
        """Test the 4×4 minimum."""
        with pytest.raises(DimensionError):
            ScalarField(np.zeros((3, 8)))

    def test_rejects_nan(self):
        """Test non-finite values are refused."""
        values = np.zeros((4, 4))
        values[1, 2] = np.nan
        with pytest.raises(ValueError):
            ScalarField(values)

    def test_arithmetic(self):
        """Test +, -, scalar * and negation."""
        a = ScalarField.constant(4, 4, 2.0)
        b = ScalarField.constant(4, 4, 3.0)
        assert np.all((a + b).values == 5.0)
        assert np.all((a - b).values == -1.0)
        assert np.all((2.0 * a).values == 4.0)
        assert np.all((-a).values == -2.0)
        assert np.all((a + 1.0).values == 3.0)

    def test_mismatched_grids(self):
        """Test arithmetic across different grids raises."""
        with pytest.raises(DimensionError):
            ScalarField.zeros(4, 4) + ScalarField.zeros(5, 4)


class TestVectorField:
    """Test VectorField helpers."""

    def test_uniform_and_speed(self):
        """Test max_speed is the largest component magnitude."""
        b = VectorField.uniform(6, 5, 1.5, -2.0)
        assert b.max_speed() == 2.0
        assert not b.is_zero()

    def test_zero_boundary(self):
        """Test the boundary ring is cleared and the interior kept."""
        b = VectorField.uniform(6, 6, 1.0, 1.0)
        assert not b.boundary_is_zero
        ringless = b.with_zero_boundary()
        assert ringless.boundary_is_zero
        assert np.all(ringless.v[1:-1, 1:-1] == 1.0)

    def test_component_shape_mismatch(self):
        """Test differing component shapes raise."""
        with pytest.raises(DimensionError):
            VectorField(np.zeros((4, 4)), np.zeros((4, 5)))


class TestTimeFlow:
    """Test piecewise-constant time flows."""

    def test_intervals(self):
        """Test sample k covers [kT/N_t, (k+1)T/N_t)."""
        samples = tuple(VectorField.uniform(4, 4, k, 0.0) for k in range(4))
        flow = TimeFlow(2.0, samples)
        assert flow.n_t == 4
        assert flow.interval(1) == (0.5, 1.0)
        assert flow.index_at(0.0) == 0
        assert flow.index_at(0.49) == 0
        assert flow.index_at(0.5) == 1
        assert flow.index_at(2.0) == 3
        np.testing.assert_allclose(flow.boundaries(), [0.0, 0.5, 1.0, 1.5, 2.0])

    def test_reversed(self):
        """Test reversal flips both order and sign."""
        flow = TimeFlow(1.0, (VectorField.uniform(4, 4, 1.0, 0.0), VectorField.uniform(4, 4, 2.0, 0.0)))
        back = flow.reversed()
        assert back.samples[0].v[0, 0] == -2.0
        assert back.samples[1].v[0, 0] == -1.0

    def test_needs_samples(self):
        """Test an empty TimeFlow is refused."""
        with pytest.raises(ValueError):
            TimeFlow(1.0, ())

    def test_mixed_grids(self):
        """Test samples must share dimensions."""
        with pytest.raises(DimensionError):
            TimeFlow(1.0, (VectorField.zeros(4, 4), VectorField.zeros(5, 4)))


class TestBacktraceMap:
    """Test BacktraceMap clamping."""

    def test_clamped(self):
        """Test coordinates are clamped to the grid rectangle."""
        m = BacktraceMap(np.full((4, 5), -3.0), np.full((4, 5), 10.0))
        assert np.all(m.x == 0.0)
        assert np.all(m.y == 3.0)

    def test_identity(self):
        """Test the identity map is recognised."""
        assert BacktraceMap.identity(6, 4).is_identity()


class TestDownsample:
    """Test bicubic halving."""

    def test_constant(self):
        """Test constants are reproduced."""
        out = downsample_bicubic(ScalarField.constant(16, 16, 7.25))
        assert out.shape == (8, 8)
        np.testing.assert_allclose(out.values, 7.25, atol=1e-12)

    def test_linear_ramp(self):
        """Test a ramp in x keeps its physical values at sample points 2i."""
        y, x = np.mgrid[0:16, 0:16].astype(float)
        out = downsample_bicubic(ScalarField(x))
        expected = 2.0 * np.tile(np.arange(8.0), (8, 1))
        np.testing.assert_allclose(out.values, expected, atol=1e-9)

    def test_matches_dense_oracle(self, rng):
        """Test against per-pixel kernel evaluation at (2i, 2j)."""
        values = rng.uniform(0.0, 255.0, (16, 16))
        out = downsample_bicubic(ScalarField(values))
        expected = np.array([[dense_bicubic(values, 2 * i, 2 * j) for i in range(8)] for j in range(8)])
        np.testing.assert_allclose(out.values, expected, atol=1e-9)

    def test_odd_dimensions_round_up(self, rng):
        """Test odd sizes use ceil(n/2)."""
        out = downsample_bicubic(ScalarField(rng.uniform(size=(9, 11))))
        assert (out.width, out.height) == (6, 5)

    def test_too_small(self):
        """Test fields below 8 pixels cannot be halved."""
        with pytest.raises(DimensionError):
            downsample_bicubic(ScalarField.zeros(7, 16))

    def test_antialias_keeps_constants(self):
        """Test the widened kernel is renormalised."""
        out = downsample_bicubic(ScalarField.constant(16, 12, 3.0), antialias=True)
        np.testing.assert_allclose(out.values, 3.0, atol=1e-12)


class TestUpsampleFlow:
    """Test flow upsampling between pyramid levels."""

    def test_zero_flow(self):
        """Test zero flow stays zero."""
        out = upsample_flow_bicubic(VectorField.zeros(8, 8), 16, 16)
        assert out.shape == (16, 16)
        assert out.is_zero()

    def test_uniform_flow_scaled(self):
        """Test (1, 0) at 8×8 becomes (2, 0) in the 16×16 interior."""
        out = upsample_flow_bicubic(VectorField.uniform(8, 8, 1.0, 0.0), 16, 16)
        np.testing.assert_allclose(out.v[1:-1, 1:-1], 2.0, atol=1e-12)
        np.testing.assert_allclose(out.w, 0.0, atol=1e-12)
        assert out.boundary_is_zero

    def test_matches_dense_oracle(self, rng):
        """Test the interior against the dense kernel times the scale factor."""
        b = VectorField(rng.normal(size=(8, 8)), rng.normal(size=(8, 8)))
        out = upsample_flow_bicubic(b, 16, 16)
        for comp, result in ((b.v, out.v), (b.w, out.w)):
            expected = np.array([
                [2.0 * dense_bicubic(comp, i / 2.0, j / 2.0) for i in range(16)] for j in range(16)
            ])
            np.testing.assert_allclose(result[1:-1, 1:-1], expected[1:-1, 1:-1], atol=1e-9)

    def test_odd_target(self):
        """Test upsampling to an odd finer size."""
        out = upsample_flow_bicubic(VectorField.uniform(6, 5, 0.5, 0.5), 11, 9)
        assert (out.width, out.height) == (11, 9)
        assert out.boundary_is_zero

    def test_aspect_mismatch(self):
        """Test a target off by more than one pixel is refused."""
        with pytest.raises(DimensionError):
            upsample_flow_bicubic(VectorField.zeros(8, 8), 16, 24)

    def test_time_flow(self):
        """Test every time sample is upsampled."""
        flow = TimeFlow(1.0, (VectorField.uniform(8, 8, 1.0, 0.0), VectorField.uniform(8, 8, 0.0, 1.0)))
        out = upsample_flow(flow, 16, 16)
        assert out.n_t == 2
        assert out.samples[1].w[8, 8] == pytest.approx(2.0)


class TestWarp:
    """Test cubic-spline warping."""

    def test_identity(self, smooth_field):
        """Test the identity map leaves the field unchanged."""
        out = warp(smooth_field, BacktraceMap.identity(smooth_field.width, smooth_field.height))
        np.testing.assert_allclose(out.values, smooth_field.values, atol=1e-12)

    def test_integer_shift(self, random_field):
        """Test a shift by 3 pixels reproduces the samples."""
        y, x = np.mgrid[0:random_field.height, 0:random_field.width].astype(float)
        out = warp(random_field, BacktraceMap(x - 3.0, y))
        np.testing.assert_allclose(out.values[:, 3:], random_field.values[:, :-3], atol=1e-9)

    def test_half_pixel_ramp(self):
        """Test a half-pixel shift of a linear ramp is exact."""
        y, x = np.mgrid[0:12, 0:16].astype(float)
        ramp = ScalarField(3.0 * x + 2.0 * y)
        out = warp(ramp, BacktraceMap(x - 0.5, y + 0.5))
        expected = 3.0 * (x - 0.5) + 2.0 * (y + 0.5)
        np.testing.assert_allclose(out.values[1:-1, 1:-1], expected[1:-1, 1:-1], atol=1e-9)

    def test_overshoot_bounded(self, smooth_field, rng):
        """Test spline overshoot stays within a quarter of the data range."""
        y, x = np.mgrid[0:smooth_field.height, 0:smooth_field.width].astype(float)
        out = warp(smooth_field, BacktraceMap(x + rng.uniform(-1, 1, x.shape), y + rng.uniform(-1, 1, y.shape)))
        lo, hi = smooth_field.values.min(), smooth_field.values.max()
        spread = 0.25 * (hi - lo)
        assert np.all(np.isfinite(out.values))
        assert out.values.min() >= lo - spread
        assert out.values.max() <= hi + spread

    def test_size_mismatch(self, random_field):
        """Test a map of another size is refused."""
        with pytest.raises(DimensionError):
            warp(random_field, BacktraceMap.identity(8, 8))


class TestBilinear:
    """Test bilinear flow sampling."""

    def test_integer_point(self, rng):
        """Test integer coordinates return the stored pixel."""
        b = VectorField(rng.normal(size=(6, 7)), rng.normal(size=(6, 7)))
        v, w = sample_flow_bilinear(b, 3.0, 2.0)
        assert v == b.v[2, 3]
        assert w == b.w[2, 3]

    def test_midpoint(self):
        """Test the midpoint of {0, 0, 2, 2} is 1."""
        v = np.zeros((4, 4))
        v[:, 2] = 2.0
        v, _ = sample_flow_bilinear(VectorField(v, np.zeros((4, 4))), 1.5, 1.5)
        assert v == pytest.approx(1.0)

    def test_random_point(self, rng):
        """Test against the closed-form bilinear blend."""
        b = VectorField(rng.normal(size=(8, 8)), rng.normal(size=(8, 8)))
        x, y = 2.3, 5.7
        tx, ty = 0.3, 0.7
        expected = ((1 - tx) * (1 - ty) * b.v[5, 2] + tx * (1 - ty) * b.v[5, 3]
                    + (1 - tx) * ty * b.v[6, 2] + tx * ty * b.v[6, 3])
        v, _ = sample_flow_bilinear(b, x, y)
        assert v == pytest.approx(expected, abs=1e-12)

    def test_clamped_outside(self):
        """Test points outside the grid read the edge value."""
        b = VectorField.uniform(5, 5, 4.0, -1.0)
        assert sample_flow_bilinear(b, -2.0, 9.0) == (4.0, -1.0)

    @settings(max_examples=50, deadline=None)
    @given(
        a=st.floats(-5, 5), bx=st.floats(-5, 5), by=st.floats(-5, 5),
        x=st.floats(0, 9), y=st.floats(0, 6),
    )
    def test_exact_on_linear_fields(self, a, bx, by, x, y):
        """Test bilinear sampling reproduces affine fields."""
        gy, gx = np.mgrid[0:7, 0:10].astype(float)
        field = a + bx * gx + by * gy
        v, w = sample_flow_bilinear(VectorField(field, -field), x, y)
        expected = a + bx * x + by * y
        assert v == pytest.approx(expected, abs=1e-12)
        assert w == pytest.approx(-expected, abs=1e-12)

    def test_array_input(self):
        """Test arrays of points are sampled at once."""
        b = VectorField.uniform(6, 6, 1.0, 2.0)
        v, w = sample_flow_bilinear(b, np.array([0.5, 4.5]), np.array([1.0, 2.5]))
        np.testing.assert_allclose(v, [1.0, 1.0])
        np.testing.assert_allclose(w, [2.0, 2.0])


class TestPyramid:
    """Test pyramid construction."""

    def test_shapes(self):
        """Test level sizes halve with ceil rounding."""
        assert list(pyramid_shapes(64, 45, 3)) == [(64, 45), (32, 23), (16, 12), (8, 6)]

    def test_build_matches_shapes(self, disk_pair):
        """Test build_pyramid returns levels finest first."""
        u0, _, _ = disk_pair
        levels = build_pyramid(u0, 2)
        assert [(f.width, f.height) for f in levels] == list(pyramid_shapes(64, 64, 2))
        assert levels[0] is u0

    @pytest.mark.parametrize("size, deepest", [
        ((16, 16), 2),
        ((64, 64), 4),
        ((7, 40), 0),
        ((584, 388), 6),
    ])
    def test_max_levels(self, size, deepest):
        """Test the deepest pyramid a frame size supports."""
        assert max_pyramid_levels(*size) == deepest

    def test_max_levels_is_buildable(self, random_field):
        """Test the deepest pyramid builds and one more level is refused."""
        deepest = max_pyramid_levels(random_field.width, random_field.height)
        assert len(build_pyramid(random_field, deepest)) == deepest + 1
        with pytest.raises(DimensionError):
            build_pyramid(random_field, deepest + 1)

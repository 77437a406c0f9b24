"""
Tests for image and flow file I/O.
"""
import numpy as np
import pytest
from PIL import Image

from flowinterp.grid import ImageIOError, ScalarField, VectorField
from flowinterp.imaging import quantize, read_flo, read_image, write_flo, write_image


class TestImages:
    """Test frame reading and writing."""

    @pytest.mark.parametrize("name", ["frame.png", "frame.pgm"])
    def test_round_trip_8bit(self, tmp_path, smooth_field, name):
        """Test 8-bit frames come back within quantization error."""
        path = write_image(smooth_field, tmp_path / name)
        back = read_image(path)
        assert back.shape == smooth_field.shape
        assert np.abs(back.values - smooth_field.values).max() <= 0.5

    def test_pgm_is_binary_graymap(self, tmp_path, smooth_field):
        """Test .pgm output is a P5 file."""
        path = write_image(smooth_field, tmp_path / "frame.pgm")
        assert path.read_bytes()[:2] == b"P5"

    def test_float_output(self, tmp_path, smooth_field):
        """Test --float-out style writes keep full precision in a PFM."""
        path = write_image(smooth_field, tmp_path / "frame.png", float_out=True)
        assert path.suffix == ".pfm"
        back = read_image(path)
        np.testing.assert_allclose(back.values, smooth_field.values, rtol=1e-6)

    def test_color_luminance(self, tmp_path):
        """Test RGB input is converted with 0.299/0.587/0.114 weights."""
        rgb = np.zeros((6, 6, 3), dtype=np.uint8)
        rgb[...] = (10, 20, 30)
        Image.fromarray(rgb, "RGB").save(tmp_path / "color.png")
        back = read_image(tmp_path / "color.png")
        np.testing.assert_allclose(back.values, 18.15, atol=1e-9)

    def test_16bit_rescaled(self, tmp_path):
        """Test 16-bit grayscale is rescaled to [0, 255]."""
        raw = np.full((6, 8), 65535, dtype=np.uint16)
        raw[:, :4] = 0
        Image.fromarray(raw).save(tmp_path / "deep.png")
        back = read_image(tmp_path / "deep.png")
        np.testing.assert_allclose(back.values[:, :4], 0.0)
        np.testing.assert_allclose(back.values[:, 4:], 255.0)

    def test_quantize_clamps(self):
        """Test quantization rounds and clamps to 8 bits."""
        f = ScalarField(np.array([[-3.0, 12.4, 12.6, 300.0]] * 4))
        np.testing.assert_array_equal(quantize(f)[0], [0, 12, 13, 255])

    @pytest.mark.parametrize("name", ["frame.png", "frame.pgm"])
    def test_16bit_keeps_precision(self, tmp_path, smooth_field, name):
        """Test 16-bit frames come back within 1/257 of a gray level."""
        path = write_image(smooth_field, tmp_path / name, bit_depth=16)
        back = read_image(path)
        assert back.shape == smooth_field.shape
        assert np.abs(back.values - smooth_field.values).max() <= 0.5 / 257 + 1e-9

    def test_pgm16_layout(self, tmp_path, smooth_field):
        """Test 16-bit .pgm output is P5 with maxval 65535 and two bytes per sample."""
        path = write_image(smooth_field, tmp_path / "deep.pgm", bit_depth=16)
        header = f"P5\n{smooth_field.width} {smooth_field.height}\n65535\n".encode("ascii")
        data = path.read_bytes()
        assert data.startswith(header)
        assert len(data) == len(header) + 2 * smooth_field.width * smooth_field.height

    def test_quantize_16bit(self):
        """Test 16-bit quantization scales by 257 and clamps."""
        f = ScalarField(np.array([[-3.0, 1.0, 255.0, 300.0]] * 4))
        out = quantize(f, 16)
        assert out.dtype == np.uint16
        np.testing.assert_array_equal(out[0], [0, 257, 65535, 65535])

    def test_bad_bit_depth(self, tmp_path, smooth_field):
        """Test only 8 and 16 bits are written."""
        with pytest.raises(ValueError, match="bit_depth"):
            write_image(smooth_field, tmp_path / "frame.png", bit_depth=12)

    def test_missing_file(self, tmp_path):
        """Test a missing frame raises ImageIOError."""
        with pytest.raises(ImageIOError):
            read_image(tmp_path / "nope.png")

    def test_not_an_image(self, tmp_path):
        """Test garbage content raises ImageIOError."""
        bogus = tmp_path / "bogus.png"
        bogus.write_text("definitely not a PNG")
        with pytest.raises(ImageIOError):
            read_image(bogus)

    def test_too_small(self, tmp_path):
        """Test frames below 4×4 are refused."""
        Image.fromarray(np.zeros((3, 3), dtype=np.uint8)).save(tmp_path / "tiny.png")
        with pytest.raises(ImageIOError):
            read_image(tmp_path / "tiny.png")

    def test_unwritable(self, tmp_path, smooth_field):
        """Test a path under a regular file cannot be written."""
        blocker = tmp_path / "blocker"
        blocker.write_text("")
        with pytest.raises(ImageIOError):
            write_image(smooth_field, blocker / "frame.png")


class TestFlo:
    """Test Middlebury .flo files."""

    def test_round_trip(self, tmp_path, rng):
        """Test a flow comes back at float32 precision."""
        b = VectorField(rng.normal(size=(7, 9)), rng.normal(size=(7, 9)))
        back = read_flo(write_flo(b, tmp_path / "flow.flo"))
        assert (back.width, back.height) == (9, 7)
        np.testing.assert_allclose(back.v, b.v, rtol=1e-6, atol=1e-7)
        np.testing.assert_allclose(back.w, b.w, rtol=1e-6, atol=1e-7)

    def test_layout(self, tmp_path):
        """Test header and interleaved little-endian payload."""
        v = np.zeros((4, 5))
        w = np.zeros((4, 5))
        v[0, 1] = 1.5
        w[0, 1] = -2.0
        raw = write_flo(VectorField(v, w), tmp_path / "flow.flo").read_bytes()
        assert raw[:4] == b"PIEH"
        assert tuple(np.frombuffer(raw, "<i4", count=2, offset=4)) == (5, 4)
        payload = np.frombuffer(raw, "<f4", offset=12)
        assert payload.size == 40
        assert tuple(payload[2:4]) == (1.5, -2.0)

    def test_bad_magic(self, tmp_path):
        """Test a wrong magic number is refused."""
        path = tmp_path / "bad.flo"
        path.write_bytes(b"XXXX" + np.array([4, 4], "<i4").tobytes() + np.zeros(32, "<f4").tobytes())
        with pytest.raises(ImageIOError):
            read_flo(path)

    def test_truncated(self, tmp_path):
        """Test a short payload is refused."""
        path = tmp_path / "short.flo"
        path.write_bytes(b"PIEH" + np.array([4, 4], "<i4").tobytes() + np.zeros(10, "<f4").tobytes())
        with pytest.raises(ImageIOError):
            read_flo(path)

    def test_missing(self, tmp_path):
        """Test a missing flow file raises ImageIOError."""
        with pytest.raises(ImageIOError):
            read_flo(tmp_path / "missing.flo")

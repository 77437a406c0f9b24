"""
Pytest configuration and shared fixtures for flowinterp tests.
"""
import numpy as np
import pytest

from flowinterp.control import RunConfig
from flowinterp.grid import ScalarField, TimeFlow, VectorField
from flowinterp.imaging import write_image
from flowinterp.synthetic import gaussian_blob, rotation_field, translated_disk_pair


@pytest.fixture
def rng():
    """Seeded random generator."""
    return np.random.default_rng(1234)


@pytest.fixture
def smooth_field():
    """Smooth 24×20 test image."""
    y, x = np.mgrid[0:20, 0:24].astype(float)
    return ScalarField(100.0 + 40.0 * np.sin(0.3 * x) * np.cos(0.2 * y) + 0.5 * x)


@pytest.fixture
def random_field(rng):
    """Random 16×12 field."""
    return ScalarField(rng.uniform(0.0, 255.0, (12, 16)))


@pytest.fixture
def disk_pair():
    """64×64 disk moving 4 px to the right: (u0, uT, truth at T/2)."""
    return translated_disk_pair(4.0)


@pytest.fixture
def blob():
    """Gaussian blob away from the edges of a 64×64 grid."""
    return gaussian_blob(64, 64, (40.0, 32.0), 4.0, amplitude=100.0)


@pytest.fixture
def rotation_flow():
    """Slow rigid rotation (ω = 0.05) about the center of a 64×64 grid."""
    return TimeFlow.stationary(rotation_field(64, 64, 0.05))


@pytest.fixture
def zero_flow():
    """Zero flow on 64×64."""
    return TimeFlow.zeros(64, 64)


@pytest.fixture
def shift_flow():
    """Constant flow (1, 0) on 64×64 over T = 1."""
    return TimeFlow.stationary(VectorField.uniform(64, 64, 1.0, 0.0))


@pytest.fixture(scope="session")
def fast_config():
    """Single-level loop II settings that converge on the disk pair."""
    return RunConfig(pyramid_levels=0, lambda_star=5e4, n_loop=30, loop=2, stop_tol=1e-4)


@pytest.fixture(scope="session")
def tiny_config():
    """Few iterations, for plumbing tests."""
    return RunConfig(pyramid_levels=0, lambda_star=5e4, n_loop=2, loop=2, workers=1)


@pytest.fixture(scope="session")
def tiny_args(tiny_config):
    """Command-line flags equivalent to tiny_config."""
    return [
        "--levels", str(tiny_config.pyramid_levels),
        "--n-loop", str(tiny_config.n_loop),
        "--lambda-star", repr(tiny_config.lambda_star),
        "--workers", str(tiny_config.workers),
    ]


@pytest.fixture
def disk_files(tmp_path, disk_pair):
    """The disk pair written as PNG files, plus the mid-frame truth."""
    u0, uT, mid = disk_pair
    return (
        write_image(u0, tmp_path / "frame0.png"),
        write_image(uT, tmp_path / "frame1.png"),
        write_image(mid, tmp_path / "mid.png"),
    )


@pytest.fixture
def tmp_config_file(tmp_path):
    """A flat key = value config file."""
    config_file = tmp_path / "flowinterp.cfg"
    config_file.write_text("# test settings\nloop = 1\npyramid_levels = 2\nlambda_star = 2e5\n")
    return config_file

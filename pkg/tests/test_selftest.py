"""
Tests for the embedded self-test suite.
"""
from unittest import mock

import numpy as np
import pytest

from flowinterp.selftest import (
    CheckResult,
    all_passed,
    check_limiter,
    check_tvd,
    limiter_reference,
    rk4_order,
    run_selftest,
)
from flowinterp.transport import superbee


def minmod_is_not_superbee(r):
    """A valid TVD limiter that is not superbee."""
    r = np.asarray(r, dtype=float)
    return np.maximum(0.0, np.minimum(r, 1.0))


def overshooting_limiter(r):
    """Leaves the TVD region: φ(r) = 3 for every r."""
    return np.full_like(np.asarray(r, dtype=float), 3.0)


class TestLimiterChecks:
    """Test the limiter checks catch wrong limiters."""

    @pytest.mark.parametrize("r,expected", [(-1.0, 0.0), (0.25, 0.5), (0.75, 1.0), (1.5, 1.5), (3.0, 2.0)])
    def test_reference(self, r, expected):
        """Test the scalar reference superbee."""
        assert limiter_reference(r) == expected

    def test_superbee_passes(self):
        """Test the shipped limiter matches the reference."""
        passed, _ = check_limiter(superbee)
        assert passed

    def test_other_limiter_fails(self):
        """Test minmod is reported as a deviation."""
        passed, detail = check_limiter(minmod_is_not_superbee)
        assert not passed
        assert "deviation" in detail

    def test_tvd_passes(self):
        """Test superbee keeps monotone rows TVD."""
        passed, detail = check_tvd(superbee, n_profiles=10, n_steps=20)
        assert passed, detail

    def test_tvd_catches_overshoot(self):
        """Test a limiter outside the TVD region is caught."""
        passed, detail = check_tvd(overshooting_limiter, n_profiles=10, n_steps=20)
        assert not passed
        assert "gained total variation" in detail


class TestRk4Order:
    """Test the empirical order estimate."""

    def test_fourth_order(self):
        """Test the rotation backtrace converges at order about 4."""
        assert 3.7 <= rk4_order() <= 4.3


class TestRunSelftest:
    """Test the suite runner."""

    def test_quick_skips_stokes(self):
        """Test --quick leaves out the convergence study."""
        with mock.patch("flowinterp.selftest.check_translated_disk", return_value=(True, "ok")), \
                mock.patch("flowinterp.selftest.check_stokes") as stokes:
            results = run_selftest(quick=True)
        stokes.assert_not_called()
        assert [r.name for r in results] == [
            "superbee limiter values",
            "TVD property",
            "RK4 backtrace order",
            "translated disk interpolation",
        ]
        assert all_passed(results)

    def test_full_includes_stokes(self):
        """Test the full suite runs the convergence study."""
        with mock.patch("flowinterp.selftest.check_translated_disk", return_value=(True, "ok")), \
                mock.patch("flowinterp.selftest.check_stokes", return_value=(True, "orders")):
            results = run_selftest(quick=False)
        assert "Stokes manufactured solution" in [r.name for r in results]

    def test_bad_limiter_fails(self):
        """Test a corrupted limiter makes the suite fail."""
        with mock.patch("flowinterp.selftest.check_translated_disk", return_value=(True, "ok")):
            results = run_selftest(quick=True, limiter=overshooting_limiter)
        by_name = {r.name: r for r in results}
        assert not by_name["superbee limiter values"].passed
        assert not by_name["TVD property"].passed
        assert not all_passed(results)

    def test_crashing_check_is_failure(self):
        """Test an exception inside a check is reported, not raised."""
        with mock.patch("flowinterp.selftest.check_translated_disk", side_effect=RuntimeError("boom")):
            results = run_selftest(quick=True)
        last = results[-1]
        assert not last.passed
        assert "RuntimeError" in last.detail

    @pytest.mark.slow
    def test_translated_disk(self):
        """Test the real disk check passes."""
        results = run_selftest(quick=True)
        assert all_passed(results), [r for r in results if not r.passed]


class TestAllPassed:
    """Test the summary predicate."""

    def test_empty_is_not_success(self):
        """Test no results counts as failure."""
        assert not all_passed([])

    def test_mixed(self):
        """Test one failure fails the suite."""
        assert all_passed([CheckResult("a", True, "")])
        assert not all_passed([CheckResult("a", True, ""), CheckResult("b", False, "")])

"""
Embedded synthetic self-test suite (no external data needed).

Checks the limiter values, the TVD property, the RK4 backtrace order, Stokes
convergence on a manufactured solution and interpolation of a translated disk.
"""
import logging
import time
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np

from .control import RunConfig, estimate_flows, interpolate_at, static_baseline
from .grid import ScalarField, TimeFlow, VectorField
from .metrics import interpolation_error, total_variation
from .stokes import assemble, build_mesh, load_from_function, p1_l2_error, p2_l2_error, solve_saddle
from .synthetic import ManufacturedStokes, rotation_field, translated_disk_pair
from .transport import backtrace_rk4, superbee, tvd_step

# Configure logger
logger = logging.getLogger(__name__)

LIMITER_SAMPLES = (-1.0, 0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0)
RK4_STEPS = (0.2, 0.1, 0.05)
RK4_ORDER_RANGE = (3.7, 4.3)
STOKES_GRIDS = (17, 33, 65)
STOKES_TOL = 1e-11
DISK_CONFIG = RunConfig(pyramid_levels=0, lambda_star=5e4, n_loop=30, loop=2, stop_tol=1e-4)

Limiter = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def limiter_reference(r: float) -> float:
    return max(0.0, min(2.0 * r, 1.0), min(r, 2.0))


def check_limiter(limiter: Limiter = superbee) -> Tuple[bool, str]:
    worst = max(abs(float(limiter(np.array(r))) - limiter_reference(r)) for r in LIMITER_SAMPLES)
    return worst <= 1e-15, f"max deviation {worst:.3g}"


def check_tvd(limiter: Limiter = superbee, n_profiles: int = 200, n_steps: int = 50,
              seed: int = 0) -> Tuple[bool, str]:
    """Random monotone rows advected at σ = 0.1 must never gain total variation."""
    rng = np.random.default_rng(seed)
    width = 48
    b = VectorField.uniform(width, 4, 1.0, 0.0)
    violations = 0
    for _ in range(n_profiles):
        row = np.sort(rng.uniform(0.0, 255.0, width))
        if rng.random() < 0.5:
            row = row[::-1]
        u = ScalarField(np.tile(row, (4, 1)))
        tv = total_variation(u)
        for _ in range(n_steps):
            u = tvd_step(u, b, 0.1, limiter)
            new_tv = total_variation(u)
            if new_tv > tv * (1.0 + 1e-12) + 1e-10:
                violations += 1
                break
            tv = new_tv
    return violations == 0, f"{violations} of {n_profiles} profiles gained total variation"


def rk4_order(steps: Tuple[float, ...] = RK4_STEPS, size: int = 33, omega: float = 1.0) -> float:
    """Empirical order of the backtrace of a rigid rotation over t = 1."""
    c = (size - 1) / 2.0
    flow = TimeFlow.stationary(rotation_field(size, size, omega))
    y, x = np.mgrid[0:size, 0:size].astype(np.float64)
    inside = np.hypot(x - c, y - c) <= 0.6 * c
    angle = -omega
    ex = c + np.cos(angle) * (x - c) - np.sin(angle) * (y - c)
    ey = c + np.sin(angle) * (x - c) + np.cos(angle) * (y - c)
    errors = []
    for dt in steps:
        m = backtrace_rk4(flow, 1.0, dt)
        errors.append(float(np.max(np.hypot(m.x - ex, m.y - ey)[inside])))
    slope, _ = np.polyfit(np.log(steps), np.log(errors), 1)
    return float(slope)


def check_rk4_order() -> Tuple[bool, str]:
    order = rk4_order()
    lo, hi = RK4_ORDER_RANGE
    return lo <= order <= hi, f"empirical order {order:.3f}"


def stokes_convergence(grids: Tuple[int, ...] = STOKES_GRIDS, lam: float = 1.0
                       ) -> Tuple[float, float, List[float], List[float]]:
    """Velocity and pressure L² orders on the manufactured problem."""
    problem = ManufacturedStokes(lam)
    hs, velocity_errors, pressure_errors = [], [], []
    for n in grids:
        h = 1.0 / (n - 1)
        mesh = build_mesh(n, n, h)
        system = assemble(mesh, load_from_function(mesh, problem.force), lam)
        solution = solve_saddle(system, tol=STOKES_TOL)
        hs.append(h)
        velocity_errors.append(p2_l2_error(mesh, solution.nodal_velocity, problem.velocity))
        pressure_errors.append(p1_l2_error(mesh, solution.q.values.ravel(), problem.pressure))
    log_h = np.log(hs)
    velocity_order = float(np.polyfit(log_h, np.log(velocity_errors), 1)[0])
    pressure_order = float(np.polyfit(log_h, np.log(pressure_errors), 1)[0])
    return velocity_order, pressure_order, velocity_errors, pressure_errors


def check_stokes() -> Tuple[bool, str]:
    velocity_order, pressure_order, _, pressure_errors = stokes_convergence()
    stable = all(b <= a for a, b in zip(pressure_errors, pressure_errors[1:]))
    passed = velocity_order >= 2.5 and pressure_order >= 1.5 and stable
    return passed, f"velocity order {velocity_order:.2f}, pressure order {pressure_order:.2f}"


def check_translated_disk(cfg: RunConfig = DISK_CONFIG) -> Tuple[bool, str]:
    u0, uT, truth = translated_disk_pair(4.0)
    estimate = estimate_flows(u0, uT, cfg)
    frame = interpolate_at(u0, uT, estimate.forward, estimate.backward, cfg.horizon / 2.0, cfg)
    ie = interpolation_error(frame, truth)
    baseline = interpolation_error(static_baseline(u0, uT), truth)
    return ie < 0.5 * baseline, f"IE {ie:.3f} vs static baseline {baseline:.3f}"


def run_selftest(quick: bool = False, limiter: Optional[Limiter] = None) -> List[CheckResult]:
    """Run the suite; ``quick`` skips the Stokes convergence study.

    Args:
        limiter: Replacement flux limiter (negative-control hook).
    """
    limiter = limiter or superbee
    checks: List[Tuple[str, Callable[[], Tuple[bool, str]]]] = [
        ("superbee limiter values", lambda: check_limiter(limiter)),
        ("TVD property", lambda: check_tvd(limiter, n_profiles=50 if quick else 200)),
        ("RK4 backtrace order", check_rk4_order),
    ]
    if not quick:
        checks.append(("Stokes manufactured solution", check_stokes))
    checks.append(("translated disk interpolation", check_translated_disk))

    results = []
    for name, check in checks:
        start = time.perf_counter()
        try:
            passed, detail = check()
        except Exception as e:  # a crashing check is a failed check
            logger.exception(f"Self-test check '{name}' raised")
            passed, detail = False, f"raised {type(e).__name__}: {e}"
        elapsed = time.perf_counter() - start
        logger.info(f"{name}: {'ok' if passed else 'FAILED'} ({detail}, {elapsed:.1f}s)")
        results.append(CheckResult(name, passed, detail, elapsed))
    return results


def all_passed(results: List[CheckResult]) -> bool:
    return bool(results) and all(r.passed for r in results)

"""
Optimal-control iterations for frame interpolation.

Each iteration transports u0 forward under the current flow, transports the terminal
adjoint −(u(T) − u_T) backward, and solves a Stokes problem with right-hand side
p∇u for a divergence-free flow. Loop I replaces the flow with the Stokes solution
under a decreasing λ; loop II adds it as an increment under a fixed λ. Both run
coarse-to-fine over a bicubic pyramid.
"""
import dataclasses
import logging
import math
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .grid import (
    ConfigError,
    FlowInterpError,
    NonFiniteCostError,
    ScalarField,
    TimeFlow,
    VectorField,
    build_pyramid,
    max_pyramid_levels,
    upsample_flow,
)
from .metrics import interpolation_error
from .stokes import PRECONDITIONERS, SaddleSystem, StokesSolution, assemble, build_mesh, stokes_flow_update
from .transport import (
    SCHEMES,
    CflPolicy,
    TransportTrajectory,
    solve_transport,
    solve_transport_backward,
)

# Configure logger
logger = logging.getLogger(__name__)

LOOPS = (1, 2)
LAMBDA_SCHEDULES = ("geometric", "constant")
RHS_RULES = ("simpson", "sample")
LEVEL_RATIO_RANGE = (10 ** 0.2, 10 ** 0.5)
STAGNATION_COUNT = 2

_ALIASES = {
    "t": "horizon",
    "levels": "pyramid_levels",
    "nt": "n_t",
    "lambda": "lambda_star",
    "ratio": "lambda_level_ratio",
    "cfl": "sigma_cfl",
}
_SCHEME_ALIASES = {"char": "characteristic"}
_TRUE = ("1", "true", "yes", "on")
_FALSE = ("0", "false", "no", "off")


@dataclass(frozen=True)
class RunConfig:
    """All knobs of a run. Construct with keywords or from string mappings."""

    horizon: float = 1.0
    n_loop: int = 10
    lambda_star: float = 10 ** 5.25
    lambda_schedule: str = "geometric"
    kappa: float = 10 ** 0.1
    pyramid_levels: int = 3
    lambda_level_ratio: float = 10 ** 0.35
    sigma_cfl: float = 0.1
    dt_ode: float = 0.1
    n_t: int = 1
    scheme: str = "characteristic"
    stop_tol: float = 1e-3
    loop: int = 2
    stokes_tol: float = 1e-8
    stokes_max_iter: int = 0
    stokes_preconditioner: str = "two_level"
    rhs_rule: str = "simpson"
    pyramid_antialias: bool = False
    average: bool = True
    workers: int = 2
    crop_border: int = 0

    def __post_init__(self) -> None:
        checks = [
            (self.horizon > 0, "horizon must be positive"),
            (self.n_loop >= 1, "n_loop must be at least 1"),
            (self.lambda_star > 0, "lambda_star must be positive"),
            (self.lambda_schedule in LAMBDA_SCHEDULES,
             f"lambda_schedule must be one of {list(LAMBDA_SCHEDULES)}"),
            (self.kappa > 1.0 or self.lambda_schedule == "constant", "kappa must be > 1"),
            (self.pyramid_levels >= 0, "pyramid_levels must be >= 0"),
            (LEVEL_RATIO_RANGE[0] * (1 - 1e-12) <= self.lambda_level_ratio
             <= LEVEL_RATIO_RANGE[1] * (1 + 1e-12),
             "lambda_level_ratio must lie in [10^0.2, 10^0.5]"),
            (0.0 < self.sigma_cfl <= 1.0, "sigma_cfl must be in (0, 1]"),
            (self.dt_ode > 0, "dt_ode must be positive"),
            (self.n_t >= 1, "n_t must be at least 1"),
            (self.scheme in SCHEMES, f"scheme must be one of {list(SCHEMES)}"),
            (self.stop_tol >= 0, "stop_tol must be >= 0"),
            (self.loop in LOOPS, "loop must be 1 or 2"),
            (self.stokes_tol > 0, "stokes_tol must be positive"),
            (self.stokes_max_iter >= 0, "stokes_max_iter must be >= 0"),
            (self.stokes_preconditioner in PRECONDITIONERS,
             f"stokes_preconditioner must be one of {list(PRECONDITIONERS)}"),
            (self.rhs_rule in RHS_RULES, f"rhs_rule must be one of {list(RHS_RULES)}"),
            (self.workers >= 1, "workers must be at least 1"),
            (self.crop_border >= 0, "crop_border must be >= 0"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)

    @classmethod
    def keys(cls) -> List[str]:
        return [f.name for f in dataclasses.fields(cls)]

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any], base: Optional["RunConfig"] = None) -> "RunConfig":
        """Build a config from (possibly string-valued) overrides on top of ``base``.

        Raises:
            ConfigError: On unknown keys or values that cannot be coerced/validated.
        """
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        changes: Dict[str, Any] = {}
        for raw_key, raw in values.items():
            if raw is None:
                continue
            key = raw_key.strip().lower().replace("-", "_")
            key = _ALIASES.get(key, key)
            if key not in types:
                raise ConfigError(f"unknown configuration key '{raw_key}'")
            changes[key] = _coerce(key, types[key], raw)
        return dataclasses.replace(base or cls(), **changes)

    def replace(self, **changes: Any) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    def lambda_at(self, n: int, lam_star: Optional[float] = None) -> float:
        """λ^n of loop I: λ*·κ^{N_loop − n} (geometric) or λ* (constant)."""
        lam_star = self.lambda_star if lam_star is None else lam_star
        if self.lambda_schedule == "constant":
            return lam_star
        return lam_star * self.kappa ** (self.n_loop - n)

    def level_lambda(self, level: int) -> float:
        """λ of pyramid level ``level``: λ* at the coarsest level, ×ratio per finer level."""
        return self.lambda_star * self.lambda_level_ratio ** (self.pyramid_levels - level)

    def transport_policy(self) -> CflPolicy:
        return CflPolicy(self.sigma_cfl)


def _coerce(key: str, kind: Any, raw: Any) -> Any:
    try:
        if kind is bool:
            if isinstance(raw, bool):
                return raw
            text = str(raw).strip().lower()
            if text in _TRUE:
                return True
            if text in _FALSE:
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if kind is int:
            if isinstance(raw, float) and not raw.is_integer():
                raise ValueError(f"not an integer: {raw!r}")
            return int(str(raw).strip()) if isinstance(raw, str) else int(raw)
        if kind is float:
            return float(raw)
        text = str(raw).strip().lower()
        if key == "scheme":
            return _SCHEME_ALIASES.get(text, text)
        return text
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid value for '{key}': {e}") from e


@dataclass(frozen=True)
class LoopState:
    """Diagnostics of one loop iteration (n = 0 is the initial flow)."""

    iteration: int
    flow: TimeFlow = field(repr=False)
    terminal_mismatch: float
    data_term: float
    reg_term: float
    lam: float
    divergence_residual: float = 0.0
    increment: Optional[TimeFlow] = field(default=None, repr=False)

    @property
    def cost(self) -> float:
        return self.data_term + self.reg_term

    def to_dict(self) -> Dict[str, float]:
        return {
            "iteration": self.iteration,
            "lambda": self.lam,
            "terminal_mismatch": self.terminal_mismatch,
            "data_term": self.data_term,
            "reg_term": self.reg_term,
            "cost": self.cost,
            "divergence_residual": self.divergence_residual,
        }


@dataclass(frozen=True)
class LevelReport:
    """One pyramid level of a hierarchical run."""

    level: int
    width: int
    height: int
    lam: float
    history: Tuple[LoopState, ...]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "level": self.level,
            "width": self.width,
            "height": self.height,
            "lambda": self.lam,
            "history": [state.to_dict() for state in self.history],
        }


def adjoint_terminal(uT_computed: ScalarField, uT_given: ScalarField) -> ScalarField:
    """p(T) = −(u(T) − u_T)."""
    uT_computed.require_same_grid(uT_given)
    return -(uT_computed - uT_given)


def control_rhs(p: ScalarField, u: ScalarField) -> VectorField:
    """p∇u with centered differences (one-sided at the edges), boundary ring zeroed."""
    p.require_same_grid(u)
    h = u.spacing
    ux = np.gradient(u.values, h, axis=1, edge_order=1)
    uy = np.gradient(u.values, h, axis=0, edge_order=1)
    return VectorField(p.values * ux, p.values * uy, h).with_zero_boundary()


def terminal_mismatch(uT_computed: ScalarField, uT_given: ScalarField) -> float:
    """‖u(T) − u_T‖_{L²} with the h² cell weight."""
    uT_computed.require_same_grid(uT_given)
    diff = uT_computed.values - uT_given.values
    return float(math.sqrt(uT_computed.spacing ** 2 * np.sum(diff * diff)))


def regularization_term(flow: TimeFlow, lam: float) -> float:
    """λ/2·Σ_k |I_k|·h²·Σ‖∇_h b_k‖² with forward differences."""
    dt = flow.horizon / flow.n_t
    total = 0.0
    for b in flow:
        h = b.spacing
        for comp in (b.v, b.w):
            gx = np.diff(comp, axis=1) / h
            gy = np.diff(comp, axis=0) / h
            total += dt * h * h * (np.sum(gx * gx) + np.sum(gy * gy))
    return float(0.5 * lam * total)


def cost(state: LoopState, flow: TimeFlow, lam: float) -> float:
    """J(b) = ½‖u(T) − u_T‖² + λ/2·∫‖∇b‖² dt."""
    return 0.5 * state.terminal_mismatch ** 2 + regularization_term(flow, lam)


def _sample_times(flow: TimeFlow, rule: str) -> List[float]:
    n_t, horizon = flow.n_t, flow.horizon
    if rule == "simpson":
        return [i * horizon / (2 * n_t) for i in range(2 * n_t + 1)]
    return [(k + 0.5) * horizon / n_t for k in range(n_t)] + [horizon]


def _forward(u0: ScalarField, flow: TimeFlow, times: Sequence[float], cfg: RunConfig) -> TransportTrajectory:
    return solve_transport(u0, flow, times, cfg.scheme, cfg.transport_policy(), cfg.dt_ode)


def _interval_rhs(forward: TransportTrajectory, backward: TransportTrajectory,
                  flow: TimeFlow, k: int, rule: str) -> VectorField:
    a, b = flow.interval(k)
    mid = 0.5 * (a + b)

    def at(t: float) -> VectorField:
        return control_rhs(backward.at(t), forward.at(t))

    if rule == "sample":
        return at(mid)
    return (at(a) + at(mid) * 4.0 + at(b)) * (1.0 / 6.0)


def _stokes_updates(rhs: Sequence[VectorField], lam: float, cfg: RunConfig) -> List[StokesSolution]:
    max_iter = cfg.stokes_max_iter or None

    def solve(f: VectorField) -> StokesSolution:
        return stokes_flow_update(f, lam, cfg.stokes_tol, max_iter, cfg.stokes_preconditioner)

    if cfg.workers > 1 and len(rhs) > 1:
        with ThreadPoolExecutor(max_workers=min(cfg.workers, len(rhs))) as executor:
            return list(executor.map(solve, rhs))
    return [solve(f) for f in rhs]


def _make_state(n: int, flow: TimeFlow, uT_computed: ScalarField, uT: ScalarField, lam: float,
                divergence: float = 0.0, increment: Optional[TimeFlow] = None) -> LoopState:
    mismatch = terminal_mismatch(uT_computed, uT)
    data = 0.5 * mismatch ** 2
    reg = regularization_term(flow, lam)
    if not (math.isfinite(data) and math.isfinite(reg)):
        logger.error(f"Non-finite cost at iteration {n}: data={data}, reg={reg}")
        raise NonFiniteCostError(f"cost became non-finite at iteration {n}", iteration=n)
    return LoopState(n, flow, mismatch, data, reg, lam, divergence, increment)


def _initial_flow(u0: ScalarField, cfg: RunConfig, b_init: Optional[TimeFlow]) -> TimeFlow:
    if b_init is None:
        return TimeFlow.zeros(u0.width, u0.height, cfg.horizon, cfg.n_t, u0.spacing)
    u0.require_same_grid(b_init.samples[0])
    if abs(b_init.horizon - cfg.horizon) > 1e-12 * cfg.horizon:
        raise ConfigError(f"initial flow horizon {b_init.horizon} differs from T={cfg.horizon}")
    return b_init


def _segregation_loop(
    u0: ScalarField,
    uT: ScalarField,
    cfg: RunConfig,
    b_init: Optional[TimeFlow],
    lam_for: Callable[[int], float],
    accumulate: bool,
) -> Tuple[TimeFlow, List[LoopState]]:
    u0.require_same_grid(uT)
    flow = _initial_flow(u0, cfg, b_init)
    times = _sample_times(flow, cfg.rhs_rule)
    label = "II" if accumulate else "I"

    forward = _forward(u0, flow, times, cfg)
    history = [_make_state(0, flow, forward.final, uT, lam_for(1))]
    logger.info(f"Loop {label} n=0: mismatch {history[0].terminal_mismatch:.6g}")
    if accumulate and history[0].terminal_mismatch == 0.0:
        return flow, history

    stagnant = 0
    for n in range(1, cfg.n_loop + 1):
        lam = lam_for(n)
        try:
            pT = adjoint_terminal(forward.final, uT)
            backward = solve_transport_backward(
                pT, flow, times, cfg.scheme, cfg.transport_policy(), cfg.dt_ode
            )
            rhs = [_interval_rhs(forward, backward, flow, k, cfg.rhs_rule) for k in range(flow.n_t)]
            solutions = _stokes_updates(rhs, lam, cfg)
            update = TimeFlow(flow.horizon, tuple(s.b for s in solutions))
            new_flow = flow + update if accumulate else update
            forward = _forward(u0, new_flow, times, cfg)
        except FlowInterpError:
            raise
        except ValueError as e:
            # Field constructors reject NaN/Inf; arguments were validated up front
            logger.error(f"Loop {label} produced non-finite values at iteration {n}: {e}")
            raise NonFiniteCostError(f"non-finite values at iteration {n}: {e}", iteration=n) from e

        divergence = max(s.divergence for s in solutions)
        state = _make_state(n, new_flow, forward.final, uT, lam, divergence,
                            update if accumulate else None)
        previous = history[-1]
        history.append(state)
        flow = new_flow
        logger.info(
            f"Loop {label} n={n}: λ={lam:.4g}, mismatch {state.terminal_mismatch:.6g}, "
            f"cost {state.cost:.6g}"
        )

        if not accumulate:
            continue
        if state.terminal_mismatch == 0.0:
            break
        if state.terminal_mismatch > previous.terminal_mismatch:
            logger.warning(
                f"Loop II mismatch increased at n={n}: "
                f"{previous.terminal_mismatch:.6g} -> {state.terminal_mismatch:.6g}"
            )
        change = abs(state.terminal_mismatch - previous.terminal_mismatch)
        stagnant = stagnant + 1 if change < cfg.stop_tol * previous.terminal_mismatch else 0
        if stagnant >= STAGNATION_COUNT:
            logger.info(f"Loop II stagnated after {n} iterations")
            break
    return flow, history


def segregation_loop_I(
    u0: ScalarField,
    uT: ScalarField,
    cfg: RunConfig,
    b_init: Optional[TimeFlow] = None,
    lambda_star: Optional[float] = None,
) -> Tuple[TimeFlow, List[LoopState]]:
    """Loop I: b^n is the Stokes solution for p^{n−1}∇u^{n−1} with λ^n decreasing to λ*.

    Returns:
        The final flow and the history (n = 0..N_loop).
    """
    return _segregation_loop(
        u0, uT, cfg, b_init, lambda n: cfg.lambda_at(n, lambda_star), accumulate=False
    )


def segregation_loop_II(
    u0: ScalarField,
    uT: ScalarField,
    cfg: RunConfig,
    b_init: Optional[TimeFlow] = None,
    lambda_star: Optional[float] = None,
) -> Tuple[TimeFlow, List[LoopState]]:
    """Loop II: b^n = b^{n−1} + δb^{n−1}, δb solving the Stokes problem with fixed λ.

    Stops early once the mismatch vanishes or its relative change stays below
    ``cfg.stop_tol`` for two successive iterations.
    """
    lam = cfg.lambda_star if lambda_star is None else lambda_star
    return _segregation_loop(u0, uT, cfg, b_init, lambda n: lam, accumulate=True)


def run_loop(
    u0: ScalarField,
    uT: ScalarField,
    cfg: RunConfig,
    b_init: Optional[TimeFlow] = None,
    lambda_star: Optional[float] = None,
    loop: Optional[int] = None,
) -> Tuple[TimeFlow, List[LoopState]]:
    loop = cfg.loop if loop is None else loop
    if loop not in LOOPS:
        raise ValueError("loop must be 1 or 2")
    runner = segregation_loop_I if loop == 1 else segregation_loop_II
    return runner(u0, uT, cfg, b_init, lambda_star)


def hierarchical_solve(
    u0: ScalarField,
    uT: ScalarField,
    cfg: RunConfig,
    loop: Optional[int] = None,
    report: Optional[List[LevelReport]] = None,
) -> TimeFlow:
    """Run the chosen loop coarse-to-fine over levels L..0.

    The coarsest level starts from zero flow; each finer level starts from the
    bicubically upsampled flow of the level below. Per-level diagnostics are
    appended to ``report`` when given.

    Raises:
        ConfigError: If the frames are too small for ``cfg.pyramid_levels``.
    """
    u0.require_same_grid(uT)
    levels = cfg.pyramid_levels
    deepest = max_pyramid_levels(u0.width, u0.height)
    if levels > deepest:
        logger.error(f"pyramid_levels={levels} is too deep for {u0.width}x{u0.height} frames")
        raise ConfigError(
            f"pyramid_levels={levels} is too deep for {u0.width}x{u0.height} frames "
            f"(at most {deepest})"
        )
    pyramid0 = build_pyramid(u0, levels, cfg.pyramid_antialias)
    pyramidT = build_pyramid(uT, levels, cfg.pyramid_antialias)

    flow: Optional[TimeFlow] = None
    for level in range(levels, -1, -1):
        a, b = pyramid0[level], pyramidT[level]
        lam = cfg.level_lambda(level)
        b_init = None if flow is None else upsample_flow(flow, a.width, a.height)
        logger.info(f"Level {level}: {a.width}x{a.height}, λ*={lam:.4g}")
        flow, history = run_loop(a, b, cfg, b_init, lam, loop)
        if report is not None:
            report.append(LevelReport(level, a.width, a.height, lam, tuple(history)))
    assert flow is not None
    return flow


def transport_frame(u: ScalarField, flow: TimeFlow, t: float, cfg: Optional[RunConfig] = None) -> ScalarField:
    """u transported to time t under ``flow``."""
    cfg = cfg or RunConfig()
    if t < 0.0 or t > flow.horizon * (1.0 + 1e-12):
        raise ValueError(f"t must lie in [0, {flow.horizon}], got {t}")
    if t == 0.0:
        return u
    return _forward(u, flow, [t], cfg).final


def interpolate_at(
    u0: ScalarField,
    uT: ScalarField,
    flow_fwd: TimeFlow,
    flow_bwd: Optional[TimeFlow],
    t: float,
    cfg: Optional[RunConfig] = None,
) -> ScalarField:
    """½·[u0 transported to t + u_T transported to T − t under the swapped-pair flow].

    With ``flow_bwd=None`` only the forward interpolation is returned.
    """
    forward = transport_frame(u0, flow_fwd, t, cfg)
    if flow_bwd is None:
        return forward
    backward = transport_frame(uT, flow_bwd, flow_bwd.horizon - t, cfg)
    return (forward + backward) * 0.5


def static_baseline(u0: ScalarField, uT: ScalarField) -> ScalarField:
    return (u0 + uT) * 0.5


@dataclass(frozen=True)
class FlowEstimate:
    """Flows for the forward pair (u0, uT) and, when averaging, the swapped pair."""

    forward: TimeFlow
    backward: Optional[TimeFlow] = None
    forward_levels: Tuple[LevelReport, ...] = ()
    backward_levels: Tuple[LevelReport, ...] = ()

    @property
    def final_mismatch(self) -> float:
        return self.forward_levels[-1].history[-1].terminal_mismatch if self.forward_levels else math.nan


def estimate_flows(u0: ScalarField, uT: ScalarField, cfg: RunConfig) -> FlowEstimate:
    """Hierarchical flow for (u0, uT) and, if ``cfg.average``, for (uT, u0) concurrently."""
    pairs = {"forward": (u0, uT)}
    if cfg.average:
        pairs["backward"] = (uT, u0)
    reports: Dict[str, List[LevelReport]] = {name: [] for name in pairs}
    flows: Dict[str, TimeFlow] = {}

    workers = max(1, min(cfg.workers, len(pairs)))
    with ThreadPoolExecutor(max_workers=workers) as executor:
        future_to_name = {
            executor.submit(hierarchical_solve, a, b, cfg, None, reports[name]): name
            for name, (a, b) in pairs.items()
        }
        for future in as_completed(future_to_name):
            flows[future_to_name[future]] = future.result()

    return FlowEstimate(
        forward=flows["forward"],
        backward=flows.get("backward"),
        forward_levels=tuple(reports["forward"]),
        backward_levels=tuple(reports.get("backward", ())),
    )


@dataclass(frozen=True)
class SweepEntry:
    lambda_star: float
    terminal_mismatch: float
    ie: Optional[float] = None


@dataclass(frozen=True)
class SweepResult:
    entries: Tuple[SweepEntry, ...]
    best: SweepEntry

    def to_dict(self) -> Dict[str, Any]:
        return {
            "entries": [dataclasses.asdict(e) for e in self.entries],
            "best": dataclasses.asdict(self.best),
        }


def lambda_sweep(
    u0: ScalarField,
    uT: ScalarField,
    cfg: RunConfig,
    candidates: Sequence[float],
    truth: Optional[ScalarField] = None,
    t: Optional[float] = None,
) -> SweepResult:
    """Run the configured pipeline for each candidate λ* and pick the best one.

    Ranks by IE against ``truth`` at ``t`` (default T/2) when given, otherwise by
    the finest-level terminal mismatch.
    """
    if not candidates:
        raise ValueError("candidates must not be empty")
    t = cfg.horizon / 2.0 if t is None else t
    entries = []
    for lam in candidates:
        run_cfg = cfg.replace(lambda_star=float(lam))
        estimate = estimate_flows(u0, uT, run_cfg)
        ie = None
        if truth is not None:
            frame = interpolate_at(u0, uT, estimate.forward, estimate.backward, t, run_cfg)
            ie = interpolation_error(frame, truth, cfg.crop_border)
        entry = SweepEntry(float(lam), estimate.final_mismatch, ie)
        logger.info(f"Sweep λ*={lam:.4g}: mismatch {entry.terminal_mismatch:.6g}, IE {ie}")
        entries.append(entry)
    rank = (lambda e: e.ie) if truth is not None else (lambda e: e.terminal_mismatch)
    best = min(entries, key=rank)
    return SweepResult(tuple(entries), best)


def next_update_system(
    u0: ScalarField,
    uT: ScalarField,
    flow: TimeFlow,
    cfg: RunConfig,
    lam: Optional[float] = None,
    k: int = 0,
) -> SaddleSystem:
    """Saddle system the next loop iteration would solve for time sample ``k``."""
    u0.require_same_grid(uT)
    if not 0 <= k < flow.n_t:
        raise ValueError(f"time sample {k} out of range for n_t={flow.n_t}")
    times = _sample_times(flow, cfg.rhs_rule)
    forward = _forward(u0, flow, times, cfg)
    backward = solve_transport_backward(
        adjoint_terminal(forward.final, uT), flow, times, cfg.scheme, cfg.transport_policy(), cfg.dt_ode
    )
    rhs = _interval_rhs(forward, backward, flow, k, cfg.rhs_rule)
    mesh = build_mesh(rhs.width, rhs.height, rhs.spacing)
    return assemble(mesh, rhs, cfg.lambda_star if lam is None else lam)

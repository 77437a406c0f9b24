"""
flowinterp - Frame interpolation with divergence-free optimal-control optical flow.
"""

__version__ = "0.1.0"

from .grid import (
    BacktraceMap,
    CflViolationError,
    ConfigError,
    DegenerateElementError,
    DimensionError,
    FlowInterpError,
    ImageIOError,
    NonFiniteCostError,
    ScalarField,
    StokesConvergenceError,
    TimeFlow,
    VectorField,
    build_pyramid,
    downsample_bicubic,
    upsample_flow,
    upsample_flow_bicubic,
    warp,
)
from .transport import (
    CflPolicy,
    TransportTrajectory,
    backtrace_rk4,
    solve_transport,
    solve_transport_backward,
    solve_transport_characteristic,
    solve_transport_tvd,
    superbee,
    tvd_step,
)
from .stokes import (
    SaddleSystem,
    StokesSolution,
    TriMesh,
    assemble,
    build_mesh,
    solve_saddle,
    stokes_flow_update,
)
from .control import (
    LoopState,
    RunConfig,
    adjoint_terminal,
    control_rhs,
    cost,
    estimate_flows,
    hierarchical_solve,
    interpolate_at,
    lambda_sweep,
    segregation_loop_I,
    segregation_loop_II,
)
from .metrics import EvalReport, evaluate, interpolation_error, mass, total_variation

__all__ = [
    "BacktraceMap",
    "CflViolationError",
    "ConfigError",
    "DegenerateElementError",
    "DimensionError",
    "FlowInterpError",
    "ImageIOError",
    "NonFiniteCostError",
    "ScalarField",
    "StokesConvergenceError",
    "TimeFlow",
    "VectorField",
    "build_pyramid",
    "downsample_bicubic",
    "upsample_flow",
    "upsample_flow_bicubic",
    "warp",
    "CflPolicy",
    "TransportTrajectory",
    "backtrace_rk4",
    "solve_transport",
    "solve_transport_backward",
    "solve_transport_characteristic",
    "solve_transport_tvd",
    "superbee",
    "tvd_step",
    "SaddleSystem",
    "StokesSolution",
    "TriMesh",
    "assemble",
    "build_mesh",
    "solve_saddle",
    "stokes_flow_update",
    "LoopState",
    "RunConfig",
    "adjoint_terminal",
    "control_rhs",
    "cost",
    "estimate_flows",
    "hierarchical_solve",
    "interpolate_at",
    "lambda_sweep",
    "segregation_loop_I",
    "segregation_loop_II",
    "EvalReport",
    "evaluate",
    "interpolation_error",
    "mass",
    "total_variation",
]

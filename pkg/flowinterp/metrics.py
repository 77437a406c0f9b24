"""
Evaluation metrics: interpolation error, total variation, mass and divergence.
"""
import logging
import math
from dataclasses import asdict, dataclass
from typing import Dict, Optional

import numpy as np

from .grid import DimensionError, ScalarField, TimeFlow

# Configure logger
logger = logging.getLogger(__name__)


def _crop(values: np.ndarray, border: int) -> np.ndarray:
    if border <= 0:
        return values
    if 2 * border >= min(values.shape):
        raise DimensionError(f"crop border {border} leaves no pixels of a {values.shape[1]}x{values.shape[0]} field")
    return values[border:-border, border:-border]


def interpolation_error(u: ScalarField, u_true: ScalarField, crop_border: int = 0) -> float:
    """Root-mean-square difference sqrt(Σ(u − ũ)² / (M·N)).

    Args:
        crop_border: Pixels excluded along every edge (0 = whole image).
    """
    if u.shape != u_true.shape:
        raise DimensionError(
            f"size mismatch: {u.width}x{u.height} vs {u_true.width}x{u_true.height}"
        )
    diff = _crop(u.values, crop_border) - _crop(u_true.values, crop_border)
    return float(math.sqrt(np.mean(diff * diff)))


def total_variation(u: ScalarField) -> float:
    """h·Σ|u[j, i+1] − u[j, i]| + h·Σ|u[j+1, i] − u[j, i]| over all forward pairs."""
    values = u.values
    tv = np.abs(np.diff(values, axis=1)).sum() + np.abs(np.diff(values, axis=0)).sum()
    return float(u.spacing * tv)


def mass(u: ScalarField) -> float:
    return float(u.spacing ** 2 * u.values.sum())


def divergence_residual(flow: TimeFlow) -> float:
    """Largest RMS centered-difference divergence over the interior of each flow sample."""
    worst = 0.0
    for b in flow:
        div = ((b.v[1:-1, 2:] - b.v[1:-1, :-2]) + (b.w[2:, 1:-1] - b.w[:-2, 1:-1])) / (2.0 * b.spacing)
        worst = max(worst, float(math.sqrt(np.mean(div * div))))
    return worst


@dataclass(frozen=True)
class EvalReport:
    """Evaluation of an interpolated frame against a reference frame."""

    ie: float
    mass_drift: float
    tv_ratio: float
    div_residual: float
    crop_border: int = 0

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


def evaluate(
    u: ScalarField,
    u_true: ScalarField,
    flow: Optional[TimeFlow] = None,
    crop_border: int = 0,
) -> EvalReport:
    """IE plus relative mass drift, TV ratio and (optionally) flow divergence."""
    ie = interpolation_error(u, u_true, crop_border)
    m, m_true = mass(u), mass(u_true)
    mass_drift = abs(m - m_true) / abs(m_true) if m_true != 0.0 else abs(m - m_true)
    tv, tv_true = total_variation(u), total_variation(u_true)
    if tv_true > 0.0:
        tv_ratio = tv / tv_true
    else:
        tv_ratio = 1.0 if tv == 0.0 else tv
    div = divergence_residual(flow) if flow is not None else 0.0
    report = EvalReport(ie, mass_drift, tv_ratio, div, crop_border)
    logger.debug(f"Evaluation: {report}")
    return report

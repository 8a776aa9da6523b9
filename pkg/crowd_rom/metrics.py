"""
Error metrics between ground-truth and reconstructed density fields.

L2 errors are taken over cell values. W1 is solved exactly with POT's
network simplex over the supports of the two distributions, with
straight-line Euclidean ground cost between cell centers.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import ot
import pandas as pd
from scipy.spatial.distance import cdist

from .exceptions import (
    DomainError,
    SupportTooLargeError,
    TimeMisalignmentError,
    UnequalMassError,
    ZeroMassError,
)
from .grid_domain import Field, Grid

logger = logging.getLogger(__name__)

SUPPORT_PRUNE = 1e-14
DEFAULT_SUPPORT_CAP = 4_000_000
EMD_MAX_ITERATIONS = 10_000_000
MASS_RTOL = 1e-9
SUMMARY_PERCENTILES = (10, 90)
METRIC_NAMES = ("eps2", "eps2_rel", "w1")


class L2Errors(NamedTuple):
    eps2: float
    eps2_rel: float

    @property
    def relative_defined(self) -> bool:
        return not np.isnan(self.eps2_rel)


def _flat_pair(truth, approx) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(truth, Field) and isinstance(approx, Field):
        if not truth.grid.same_geometry(approx.grid):
            raise DomainError("Fields live on different grids")
    a = np.asarray(truth.flat if isinstance(truth, Field) else truth, dtype=np.float64).reshape(-1)
    b = np.asarray(approx.flat if isinstance(approx, Field) else approx, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise DomainError(f"Field sizes differ: {a.size} vs {b.size}")
    return a, b


def l2_errors(truth: Union[Field, np.ndarray], approx: Union[Field, np.ndarray]) -> L2Errors:
    """Absolute and relative L2 errors over cells.

    The relative error is NaN when the truth is all zero but the
    approximation is not; eps2 is still returned.
    """
    a, b = _flat_pair(truth, approx)
    eps2 = float(np.linalg.norm(a - b))
    norm = float(np.linalg.norm(a))
    if norm > 0:
        return L2Errors(eps2, eps2 / norm)
    if eps2 == 0:
        return L2Errors(0.0, 0.0)
    logger.warning("Relative L2 error undefined: ground truth has zero norm")
    return L2Errors(eps2, float("nan"))


# ---------------------------------------------------------------------------
# Wasserstein-1
# ---------------------------------------------------------------------------

def coarsen_field(values: np.ndarray, grid: Grid, factor: int) -> Tuple[np.ndarray, np.ndarray]:
    """Sum cell values over factor x factor blocks of fluid cells.

    Returns (block masses, block centers); a block's center is the centroid
    of its fluid cells. Partial blocks at the far edges are kept and blocks
    with no fluid cell are dropped.
    """
    if factor < 1:
        raise DomainError(f"Coarsening factor must be >= 1, got {factor}")
    values = np.asarray(values, dtype=np.float64).reshape(grid.shape)
    fluid = grid.fluid_mask
    if factor == 1:
        return values[fluid], grid.cell_centers()[fluid.reshape(-1)]

    ii, jj = np.nonzero(fluid)
    n_block_y = -(-grid.ny // factor)
    block = (ii // factor) * n_block_y + (jj // factor)
    n_blocks = (-(-grid.nx // factor)) * n_block_y
    counts = np.bincount(block, minlength=n_blocks)
    masses = np.bincount(block, weights=values[ii, jj], minlength=n_blocks)
    cx = np.bincount(block, weights=grid.x_centers[ii], minlength=n_blocks)
    cy = np.bincount(block, weights=grid.y_centers[jj], minlength=n_blocks)
    keep = counts > 0
    centers = np.column_stack([cx[keep] / counts[keep], cy[keep] / counts[keep]])
    return masses[keep], centers


def _support(masses: np.ndarray, renormalize: bool, label: str) -> Tuple[np.ndarray, np.ndarray]:
    masses = np.clip(masses, 0.0, None)
    total = masses.sum()
    if not total > 0:
        raise ZeroMassError(f"Distribution '{label}' has no mass")
    if renormalize:
        masses = masses / total
    keep = masses >= SUPPORT_PRUNE * masses.sum()
    return np.flatnonzero(keep), masses


def wasserstein1_points(
    a: np.ndarray,
    xa: np.ndarray,
    b: np.ndarray,
    xb: np.ndarray,
    renormalize: bool = True,
    support_cap: int = DEFAULT_SUPPORT_CAP,
) -> float:
    """Exact W1 between weighted point clouds with Euclidean ground cost"""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    support_a, a = _support(a, renormalize, "p")
    support_b, b = _support(b, renormalize, "q")
    if not renormalize:
        mass_a, mass_b = a.sum(), b.sum()
        if abs(mass_a - mass_b) > MASS_RTOL * max(mass_a, mass_b):
            raise UnequalMassError(f"Total masses differ: {mass_a:.17g} vs {mass_b:.17g}")

    if support_a.size * support_b.size > support_cap:
        raise SupportTooLargeError(
            f"Transport problem {support_a.size} x {support_b.size} exceeds the cap of "
            f"{support_cap} arcs; enable W1 coarsening"
        )

    weights_a = a[support_a]
    weights_b = b[support_b]
    weights_a = weights_a / weights_a.sum()
    weights_b = weights_b / weights_b.sum()
    cost = cdist(np.asarray(xa)[support_a], np.asarray(xb)[support_b])
    plan, log = ot.emd(weights_a, weights_b, cost, numItermax=EMD_MAX_ITERATIONS, log=True)
    if log.get("warning"):
        logger.warning(f"Network simplex: {log['warning']}")
    scale = a.sum() if not renormalize else 1.0
    return max(float(np.sum(plan * cost)) * scale, 0.0)


def wasserstein1(
    p: Union[Field, np.ndarray],
    q: Union[Field, np.ndarray],
    grid: Optional[Grid] = None,
    coarsen: int = 1,
    renormalize: bool = True,
    support_cap: int = DEFAULT_SUPPORT_CAP,
) -> float:
    """Exact W1 (meters) between two densities over the fluid cells.

    Both inputs are renormalized to unit mass unless ``renormalize`` is
    False, in which case unequal masses are rejected. Negative cell values
    are clipped to zero first.
    """
    if isinstance(p, Field):
        grid = p.grid
    if grid is None:
        raise DomainError("A grid is required for raw arrays")
    p_values, q_values = _flat_pair(p, q)
    a, centers_a = coarsen_field(p_values, grid, coarsen)
    b, centers_b = coarsen_field(q_values, grid, coarsen)
    return wasserstein1_points(a, centers_a, b, centers_b, renormalize, support_cap)


# ---------------------------------------------------------------------------
# Per-run evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ReconstructedRun:
    """Snapshots produced by a ROM, one (N,) row per time"""
    times: np.ndarray
    values: np.ndarray = field(repr=False)  # (T, N)
    grid: Grid = field(repr=False)
    run_id: int = 0
    label: str = ""


@dataclass(frozen=True, eq=False)
class ErrorSeries:
    times: np.ndarray
    eps2: np.ndarray
    eps2_rel: np.ndarray
    w1: np.ndarray
    w1_coarsen: int = 1
    run_id: int = 0

    def summary(self) -> Dict[str, Tuple[float, float, float]]:
        return summarize_values({name: getattr(self, name) for name in METRIC_NAMES})

    def to_frame(self) -> pd.DataFrame:
        """Per-snapshot rows followed by mean / p10 / p90 rows"""
        frame = pd.DataFrame(
            {
                "row": "snapshot",
                "t": self.times,
                "eps2": self.eps2,
                "eps2_rel": self.eps2_rel,
                "w1": self.w1,
            }
        )
        stats = self.summary()
        summary_rows = []
        for position, label in enumerate(("mean",) + tuple(f"p{p}" for p in SUMMARY_PERCENTILES)):
            row = {"row": label, "t": np.nan}
            row.update({name: stats[name][position] for name in METRIC_NAMES})
            summary_rows.append(row)
        return pd.concat([frame, pd.DataFrame(summary_rows)], ignore_index=True)


def summarize_values(series: Dict[str, np.ndarray]) -> Dict[str, Tuple[float, float, float]]:
    """(mean, P10, P90) per metric; NaNs are ignored"""
    out = {}
    for name, values in series.items():
        values = np.asarray(values, dtype=np.float64)
        values = values[~np.isnan(values)]
        if values.size == 0:
            out[name] = (float("nan"),) * 3
            continue
        low, high = np.percentile(values, SUMMARY_PERCENTILES)
        out[name] = (float(values.mean()), float(low), float(high))
    return out


def pooled_summary(series_list: Sequence[ErrorSeries]) -> Dict[str, Tuple[float, float, float]]:
    """Summary pooled over every (run, time) pair"""
    return summarize_values(
        {
            name: np.concatenate([getattr(s, name) for s in series_list]) if series_list else np.array([])
            for name in METRIC_NAMES
        }
    )


def _check_times(truth_times: np.ndarray, approx_times: np.ndarray) -> None:
    if truth_times.shape != approx_times.shape:
        raise TimeMisalignmentError(
            f"Snapshot counts differ: {truth_times.size} vs {approx_times.size}"
        )
    if truth_times.size and np.max(np.abs(truth_times - approx_times)) > 1e-9 * max(
        1.0, float(np.max(np.abs(truth_times)))
    ):
        raise TimeMisalignmentError("Snapshot times are not aligned")


def evaluate_run(
    truth_run,
    approx_run,
    compute_w1: bool = True,
    w1_coarsen: int = 1,
    support_cap: int = DEFAULT_SUPPORT_CAP,
) -> ErrorSeries:
    """Score every snapshot of ``approx_run`` against the aligned truth.

    Truth snapshots are normalized to unit mass before scoring; the
    approximation is taken as given.
    """
    truth_times = np.asarray(truth_run.times, dtype=np.float64)
    approx_times = np.asarray(approx_run.times, dtype=np.float64)
    _check_times(truth_times, approx_times)
    grid = truth_run.grid
    if not grid.same_geometry(approx_run.grid):
        raise DomainError("Truth and approximation live on different grids")

    truth_values = np.asarray(truth_run.values, dtype=np.float64)
    approx_values = np.asarray(approx_run.values, dtype=np.float64)
    sums = truth_values.sum(axis=1)
    if np.any(sums <= 0):
        raise ZeroMassError("Ground-truth snapshot without mass")
    truth_values = truth_values / sums[:, None]

    n_times = truth_times.size
    eps2 = np.empty(n_times)
    eps2_rel = np.empty(n_times)
    w1 = np.full(n_times, np.nan)
    for t in range(n_times):
        errors = l2_errors(truth_values[t], approx_values[t])
        eps2[t], eps2_rel[t] = errors.eps2, errors.eps2_rel
        if compute_w1:
            w1[t] = wasserstein1(
                truth_values[t], approx_values[t], grid, w1_coarsen, True, support_cap
            )
    if compute_w1 and w1_coarsen > 1:
        logger.debug(f"W1 computed on {w1_coarsen}x{w1_coarsen} coarsened supports")
    return ErrorSeries(
        truth_times, eps2, eps2_rel, w1, w1_coarsen, int(getattr(truth_run, "run_id", 0))
    )

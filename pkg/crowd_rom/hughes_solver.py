"""
Hughes crowd model solver.

Density follows a conservation law whose flux points down the gradient of a
travel-time potential; the potential solves an Eikonal equation with slowness
1 / f(rho) and is recomputed from the current density. The Eikonal part uses
fast sweeping (numba kernel), the density part a Godunov finite-volume update.

Boundary handling:
    density   periodic in x, zero flux through the y-walls and the obstacle
    potential phi = 0 on the last column (exit), not periodic, LARGE on obstacle
"""

import logging
import time as wallclock
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numba
import numpy as np
from pydantic import BaseModel, ConfigDict, Field as PydanticField, model_validator

from .enums import Quantity
from .exceptions import (
    ConservationError,
    DomainError,
    GeometryError,
    InfeasibleMassError,
    SolverError,
    StabilityError,
)
from .grid_domain import Field, Grid, density_field

logger = logging.getLogger(__name__)

LARGE_POTENTIAL = 1.0e10
GRADIENT_FLOOR = 1e-10
DENSITY_TOLERANCE = 1e-12

# (x direction, y direction) of the four Gauss-Seidel orderings
DEFAULT_SWEEP_ORDERS = ((1, 1), (-1, 1), (-1, -1), (1, -1))


class HughesParams(BaseModel):
    """Physical and numerical parameters of the Hughes model"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    v_f: float = PydanticField(1.0, gt=0.0, description="Free-flow speed (m/s)")
    rho_m: float = PydanticField(5.0, gt=0.0, description="Maximum density (people/m^2)")
    cfl: float = PydanticField(0.25, gt=0.0, le=0.5, description="Courant number")
    f_min: Optional[float] = PydanticField(
        None, gt=0.0, description="Speed floor (m/s); defaults to 1e-3 * v_f"
    )
    sweep_tol: float = PydanticField(1e-9, gt=0.0, description="Eikonal tolerance")
    max_sweeps: int = PydanticField(200, ge=1, description="Cap on sweep iterations")

    @model_validator(mode="before")
    @classmethod
    def _default_speed_floor(cls, data):
        if isinstance(data, dict) and data.get("f_min") is None:
            data = dict(data)
            data["f_min"] = 1e-3 * float(data.get("v_f", 1.0))
        return data

    @model_validator(mode="after")
    def _check_speed_floor(self):
        if self.f_min >= self.v_f:
            raise ValueError(f"f_min ({self.f_min}) must be well below v_f ({self.v_f})")
        return self


class GaussianIc(BaseModel):
    """Gaussian initial density, rescaled to a prescribed total mass"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    x0: float
    y0: float
    sigma_x: float = PydanticField(..., gt=0.0)
    sigma_y: float = PydanticField(..., gt=0.0)
    target_mass: float = PydanticField(10.0, ge=0.0, description="Total mass m (people)")


@dataclass(frozen=True, eq=False)
class SimulationRun:
    """Uniformly spaced density snapshots of one simulation"""
    params: HughesParams
    ic: GaussianIc
    grid: Grid
    snapshot_dt: float
    t_final: float
    densities: np.ndarray = field(repr=False)  # (n_snapshots, nx, ny)
    gamma0: float = 0.0
    n_substeps: int = 0
    wall_time: float = 0.0
    run_id: int = 0

    @property
    def n_snapshots(self) -> int:
        return self.densities.shape[0]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_snapshots) * self.snapshot_dt

    @property
    def values(self) -> np.ndarray:
        """(n_snapshots, nx*ny) flattened snapshots"""
        return self.densities.reshape(self.n_snapshots, -1)

    @property
    def fields(self) -> List[Field]:
        times = self.times
        return [density_field(self.grid, rho, t) for rho, t in zip(self.densities, times)]

    def masses(self) -> np.ndarray:
        fluid = self.grid.fluid_mask
        return self.densities[:, fluid].sum(axis=1) * self.grid.cell_area


# ---------------------------------------------------------------------------
# Speed law
# ---------------------------------------------------------------------------

def _check_density_range(rho: np.ndarray, params: HughesParams) -> None:
    if rho.size == 0:
        return
    low = float(np.min(rho))
    high = float(np.max(rho))
    if low < -DENSITY_TOLERANCE or high > params.rho_m * (1.0 + DENSITY_TOLERANCE):
        raise DomainError(
            f"Density range [{low:.6g}, {high:.6g}] outside [0, {params.rho_m}]"
        )


def speed(rho: Union[float, np.ndarray], params: HughesParams) -> Union[float, np.ndarray]:
    """Linear speed-density law with a floor: max(v_f (1 - rho/rho_m), f_min)"""
    arr = np.asarray(rho, dtype=np.float64)
    _check_density_range(arr, params)
    result = np.maximum(params.v_f * (1.0 - arr / params.rho_m), params.f_min)
    if np.ndim(rho) == 0:
        return float(result)
    return result


def _flux_magnitude(theta: np.ndarray, params: HughesParams) -> np.ndarray:
    return params.v_f * theta * (1.0 - theta / params.rho_m)


# ---------------------------------------------------------------------------
# Initial condition
# ---------------------------------------------------------------------------

def gaussian_ic(
    grid: Grid, ic: GaussianIc, params: Optional[HughesParams] = None
) -> Tuple[Field, float]:
    """Gaussian evaluated at cell centers, zeroed on the obstacle and rescaled
    to ``ic.target_mass``. Returns the field and the amplitude Gamma_0 used."""
    params = params or HughesParams()
    xc, yc = np.meshgrid(grid.x_centers, grid.y_centers, indexing="ij")
    shape = np.exp(
        -((xc - ic.x0) ** 2) / (2.0 * ic.sigma_x ** 2)
        - ((yc - ic.y0) ** 2) / (2.0 * ic.sigma_y ** 2)
    )
    shape[grid.obstacle_mask] = 0.0

    if ic.target_mass == 0.0:
        return density_field(grid, np.zeros(grid.shape)), 0.0

    unit_mass = shape.sum() * grid.cell_area
    gamma0 = ic.target_mass / unit_mass
    values = gamma0 * shape
    peak = float(values.max())
    if peak >= params.rho_m:
        raise InfeasibleMassError(
            f"Peak density {peak:.4g} reaches rho_m = {params.rho_m} "
            f"for target mass {ic.target_mass}"
        )
    return density_field(grid, values), float(gamma0)


# ---------------------------------------------------------------------------
# Eikonal: fast sweeping
# ---------------------------------------------------------------------------

@numba.njit(cache=True)
def _fast_sweep(phi, slowness, fixed, h, tol, max_iter, orders):
    nx, ny = phi.shape
    residual = np.inf
    for iteration in range(max_iter):
        residual = 0.0
        for o in range(orders.shape[0]):
            step_x = orders[o, 0]
            step_y = orders[o, 1]
            for ii in range(nx):
                i = ii if step_x > 0 else nx - 1 - ii
                for jj in range(ny):
                    j = jj if step_y > 0 else ny - 1 - jj
                    if fixed[i, j]:
                        continue
                    a = LARGE_POTENTIAL
                    if i > 0 and phi[i - 1, j] < a:
                        a = phi[i - 1, j]
                    if i < nx - 1 and phi[i + 1, j] < a:
                        a = phi[i + 1, j]
                    b = LARGE_POTENTIAL
                    if j > 0 and phi[i, j - 1] < b:
                        b = phi[i, j - 1]
                    if j < ny - 1 and phi[i, j + 1] < b:
                        b = phi[i, j + 1]
                    if a >= LARGE_POTENTIAL and b >= LARGE_POTENTIAL:
                        continue
                    fh = slowness[i, j] * h
                    if abs(a - b) >= fh:
                        candidate = min(a, b) + fh
                    else:
                        candidate = 0.5 * (a + b + np.sqrt(2.0 * fh * fh - (a - b) ** 2))
                    if candidate < phi[i, j]:
                        delta = phi[i, j] - candidate
                        if delta > residual:
                            residual = delta
                        phi[i, j] = candidate
        if residual < tol:
            return iteration + 1, residual
    return max_iter, residual


def _require_square_cells(grid: Grid) -> None:
    if not np.isclose(grid.dx, grid.dy, rtol=1e-12, atol=0.0):
        raise GeometryError(
            f"Solver needs dx == dy, got dx={grid.dx:g}, dy={grid.dy:g}"
        )


def _eikonal_array(
    grid: Grid,
    rho: np.ndarray,
    params: HughesParams,
    sweep_orders: Sequence[Tuple[int, int]] = DEFAULT_SWEEP_ORDERS,
) -> Tuple[np.ndarray, int]:
    slowness = 1.0 / speed(rho, params)  # g == 1
    fixed = grid.obstacle_mask.copy()
    fixed[-1, :] = True
    phi = np.full(grid.shape, LARGE_POTENTIAL)
    phi[-1, :] = 0.0
    orders = np.asarray(sweep_orders, dtype=np.int64)

    sweeps, residual = _fast_sweep(
        phi, slowness, fixed, grid.dx, params.sweep_tol, params.max_sweeps, orders
    )
    if residual >= params.sweep_tol:
        raise SolverError(
            f"Fast sweeping did not converge in {sweeps} iterations "
            f"(residual {residual:.3e})",
            residual=float(residual),
            sweeps=int(sweeps),
        )
    if np.any(phi[grid.fluid_mask] >= LARGE_POTENTIAL):
        raise SolverError("Fluid cells unreachable from the exit", float(residual), int(sweeps))
    logger.debug(f"Eikonal converged after {sweeps} sweep iterations")
    return phi, int(sweeps)


def solve_eikonal(
    grid: Grid,
    rho: Field,
    params: HughesParams,
    sweep_orders: Sequence[Tuple[int, int]] = DEFAULT_SWEEP_ORDERS,
) -> Field:
    """Travel-time potential for the current density.

    phi = 0 on the exit column (x = L side), LARGE on obstacle cells.
    """
    _require_square_cells(grid)
    if rho.quantity is not Quantity.DENSITY:
        raise DomainError("solve_eikonal needs a density field")
    phi, _ = _eikonal_array(grid, rho.values, params, sweep_orders)
    return Field(grid, phi, Quantity.POTENTIAL, rho.time)


# ---------------------------------------------------------------------------
# Godunov flux
# ---------------------------------------------------------------------------

def godunov_flux(
    rho_left: np.ndarray,
    rho_right: np.ndarray,
    direction_cos: np.ndarray,
    params: HughesParams,
) -> np.ndarray:
    """Vectorized Godunov flux for F(theta) = v_f theta (1 - theta/rho_m) * cos.

    Increasing data take the min of F over [rho_L, rho_R], decreasing data the
    max over [rho_R, rho_L]. The concave magnitude peaks at rho_m / 2.
    """
    left = np.asarray(rho_left, dtype=np.float64)
    right = np.asarray(rho_right, dtype=np.float64)
    cos = np.asarray(direction_cos, dtype=np.float64)

    q_left = _flux_magnitude(left, params)
    q_right = _flux_magnitude(right, params)
    low = np.minimum(left, right)
    high = np.maximum(left, right)
    critical = 0.5 * params.rho_m
    critical_inside = (low <= critical) & (critical <= high)
    q_max = np.where(
        critical_inside,
        _flux_magnitude(np.float64(critical), params),
        np.maximum(q_left, q_right),
    )
    q_min = np.minimum(q_left, q_right)

    increasing = left <= right
    use_max = increasing ^ (cos >= 0.0)
    return cos * np.where(use_max, q_max, q_min)


def godunov_flux_1d(
    rho_left: float,
    rho_right: float,
    direction_cos: float,
    params: Optional[HughesParams] = None,
) -> float:
    """Interface flux between two states for a frozen direction cosine."""
    params = params or HughesParams()
    _check_density_range(np.array([rho_left, rho_right]), params)
    if not -1.0 <= direction_cos <= 1.0:
        raise DomainError(f"Direction cosine {direction_cos} outside [-1, 1]")
    return float(godunov_flux(rho_left, rho_right, direction_cos, params))


# ---------------------------------------------------------------------------
# Density update
# ---------------------------------------------------------------------------

def _direction(gx: np.ndarray, gy: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Walking direction -grad(phi)/|grad(phi)|, zero below the gradient floor"""
    norm = np.hypot(gx, gy)
    ok = norm > GRADIENT_FLOOR
    safe = np.where(ok, norm, 1.0)
    return np.where(ok, -gx / safe, 0.0), np.where(ok, -gy / safe, 0.0)


def _step_arrays(
    grid: Grid,
    rho: np.ndarray,
    phi: np.ndarray,
    params: HughesParams,
    dt_max: Optional[float] = None,
) -> Tuple[np.ndarray, float]:
    _check_density_range(rho, params)
    dx, dy = grid.dx, grid.dy
    fluid = grid.fluid_mask

    # face validity: both neighbours are fluid
    x_open = fluid[:-1, :] & fluid[1:, :]
    y_open = fluid[:, :-1] & fluid[:, 1:]
    periodic_open = fluid[-1, :] & fluid[0, :]

    gx_face = (phi[1:, :] - phi[:-1, :]) / dx
    gy_face = (phi[:, 1:] - phi[:, :-1]) / dy

    # cell-centred phi_x: forward difference, backward at the exit/obstacle
    forward_ok = np.zeros(grid.shape, dtype=bool)
    forward_ok[:-1, :] = x_open
    backward_ok = np.zeros(grid.shape, dtype=bool)
    backward_ok[1:, :] = x_open
    forward = np.zeros(grid.shape)
    forward[:-1, :] = np.where(x_open, gx_face, 0.0)
    backward = np.zeros(grid.shape)
    backward[1:, :] = np.where(x_open, gx_face, 0.0)
    phi_x = np.where(forward_ok, forward, np.where(backward_ok, backward, 0.0))

    # cell-centred phi_y: mean of the open faces, so mirror images stay mirrored
    north_ok = np.zeros(grid.shape, dtype=bool)
    north_ok[:, :-1] = y_open
    south_ok = np.zeros(grid.shape, dtype=bool)
    south_ok[:, 1:] = y_open
    north = np.zeros(grid.shape)
    north[:, :-1] = np.where(y_open, gy_face, 0.0)
    south = np.zeros(grid.shape)
    south[:, 1:] = np.where(y_open, gy_face, 0.0)
    n_open = north_ok.astype(np.float64) + south_ok.astype(np.float64)
    phi_y = np.where(n_open > 0, (north + south) / np.maximum(n_open, 1.0), 0.0)

    # interior x-faces and the periodic face (nx-1 -> 0)
    cos_x, _ = _direction(gx_face, 0.5 * (phi_y[:-1, :] + phi_y[1:, :]))
    cos_periodic, _ = _direction(phi_x[-1, :], phi_y[-1, :])
    _, cos_y = _direction(0.5 * (phi_x[:, :-1] + phi_x[:, 1:]), gy_face)

    flux_x = np.where(x_open, godunov_flux(rho[:-1, :], rho[1:, :], cos_x, params), 0.0)
    flux_periodic = np.where(
        periodic_open, godunov_flux(rho[-1, :], rho[0, :], cos_periodic, params), 0.0
    )
    flux_y = np.where(y_open, godunov_flux(rho[:, :-1], rho[:, 1:], cos_y, params), 0.0)

    east = np.empty(grid.shape)
    east[:-1, :] = flux_x
    east[-1, :] = flux_periodic
    west = np.roll(east, 1, axis=0)
    north_flux = np.zeros(grid.shape)
    north_flux[:, :-1] = flux_y
    south_flux = np.zeros(grid.shape)
    south_flux[:, 1:] = flux_y

    # CFL from the cell velocities U = f(rho) * walking direction
    cell_cos_x, cell_cos_y = _direction(phi_x, phi_y)
    free_speed = params.v_f * (1.0 - rho / params.rho_m)
    u_x = np.abs(free_speed * cell_cos_x)[fluid]
    u_y = np.abs(free_speed * cell_cos_y)[fluid]
    speed_x = max(float(u_x.max()) if u_x.size else 0.0, params.f_min)
    speed_y = max(float(u_y.max()) if u_y.size else 0.0, params.f_min)
    dt = params.cfl * min(dx / speed_x, dy / speed_y)
    if not np.isfinite(dt) or dt <= 1e-12 * min(dx, dy) / params.v_f:
        raise StabilityError(f"CFL time step underflow (dt={dt:.3e})")
    if dt_max is not None and dt_max < dt:
        dt = dt_max

    updated = rho - (dt / dx) * (east - west) - (dt / dy) * (north_flux - south_flux)
    lowest = float(updated.min())
    if lowest < -DENSITY_TOLERANCE:
        raise ConservationError(f"Density fell to {lowest:.3e} after update")
    return updated, float(dt)


def step_density(
    rho: Field,
    phi: Field,
    params: HughesParams,
    dt_max: Optional[float] = None,
) -> Tuple[Field, float]:
    """Advance the density by one CFL-limited step for a frozen potential.

    ``dt_max`` shortens the step, e.g. to land on a snapshot time.
    """
    grid = rho.grid
    if not grid.same_geometry(phi.grid):
        raise GeometryError("Density and potential live on different grids")
    _require_square_cells(grid)
    if not np.all(np.isfinite(phi.values[grid.fluid_mask])):
        raise DomainError("Potential must be finite on fluid cells")
    updated, dt = _step_arrays(grid, rho.values, phi.values, params, dt_max)
    return density_field(grid, updated, rho.time + dt), dt


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------

def snapshot_count(t_final: float, snapshot_dt: float) -> int:
    return int(np.floor(t_final / snapshot_dt + 1e-9)) + 1


def run_simulation(
    grid: Grid,
    params: HughesParams,
    ic: GaussianIc,
    t_final: float,
    snapshot_dt: float,
    eikonal_stride: int = 1,
    run_id: int = 0,
) -> SimulationRun:
    """Integrate one initial condition and record uniformly spaced snapshots.

    CFL sub-steps are shortened so every snapshot time is hit exactly. The
    potential is re-solved every ``eikonal_stride`` sub-steps.
    """
    if snapshot_dt <= 0 or t_final < 0:
        raise DomainError(f"Invalid horizon t_final={t_final}, snapshot_dt={snapshot_dt}")
    if eikonal_stride < 1:
        raise DomainError(f"eikonal_stride must be >= 1, got {eikonal_stride}")
    _require_square_cells(grid)

    started = wallclock.perf_counter()
    initial, gamma0 = gaussian_ic(grid, ic, params)
    n_snapshots = snapshot_count(t_final, snapshot_dt)
    densities = np.empty((n_snapshots,) + grid.shape)
    densities[0] = initial.values

    rho = initial.values.copy()
    phi = None
    t = 0.0
    substeps = 0
    for k in range(1, n_snapshots):
        target = k * snapshot_dt
        while t < target:
            if phi is None or substeps % eikonal_stride == 0:
                phi, _ = _eikonal_array(grid, rho, params)
            remaining = target - t
            rho, dt = _step_arrays(grid, rho, phi, params, dt_max=remaining)
            substeps += 1
            if dt >= remaining or remaining - dt <= 1e-12 * snapshot_dt:
                t = target
            else:
                t += dt
        densities[k] = rho

    elapsed = wallclock.perf_counter() - started
    logger.info(
        f"Run {run_id}: {n_snapshots} snapshots, {substeps} sub-steps, "
        f"{elapsed:.1f}s wall time"
    )
    densities.setflags(write=False)
    return SimulationRun(
        params=params,
        ic=ic,
        grid=grid,
        snapshot_dt=float(snapshot_dt),
        t_final=float(t_final),
        densities=densities,
        gamma0=gamma0,
        n_substeps=substeps,
        wall_time=elapsed,
        run_id=run_id,
    )

#!/usr/bin/env python3
"""
Unit tests for the Hughes model solver: speed law, initial condition,
fast-sweeping Eikonal solver, Godunov flux and the density update
"""

import sys
import os
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '../..'))

import unittest

import numpy as np
from pydantic import ValidationError
from scipy.sparse import lil_matrix
from scipy.sparse.csgraph import dijkstra

from crowd_rom.exceptions import DomainError, GeometryError, InfeasibleMassError, SolverError
from crowd_rom.grid_domain import build_grid, density_field, total_mass
from crowd_rom.hughes_solver import (
    GaussianIc,
    HughesParams,
    gaussian_ic,
    godunov_flux,
    godunov_flux_1d,
    run_simulation,
    snapshot_count,
    solve_eikonal,
    speed,
    step_density,
)
from tests.fixtures.sample_data import small_grid

# 16-neighbour stencil keeps the graph metric within ~3% of Euclidean
STENCIL = [
    (di, dj)
    for di in range(-2, 3)
    for dj in range(-2, 3)
    if (di, dj) != (0, 0) and np.gcd(abs(di), abs(dj)) == 1
]


def dijkstra_travel_time(grid, slowness=1.0):
    """Shortest paths on the fluid-cell graph to the exit column"""
    nx, ny = grid.shape
    fluid = grid.fluid_mask
    graph = lil_matrix((nx * ny, nx * ny))
    for i in range(nx):
        for j in range(ny):
            if not fluid[i, j]:
                continue
            for di, dj in STENCIL:
                ti, tj = i + di, j + dj
                if not (0 <= ti < nx and 0 <= tj < ny):
                    continue
                box = fluid[min(i, ti):max(i, ti) + 1, min(j, tj):max(j, tj) + 1]
                if not box.all():
                    continue
                graph[i * ny + j, ti * ny + tj] = slowness * grid.dx * np.hypot(di, dj)
    exits = [(nx - 1) * ny + j for j in range(ny) if fluid[nx - 1, j]]
    distances = dijkstra(graph.tocsr(), indices=exits, min_only=True)
    return distances.reshape(nx, ny)


class TestSpeedLaw(unittest.TestCase):
    """Test the linear speed-density relation"""

    def setUp(self):
        self.params = HughesParams()

    def test_free_flow(self):
        self.assertEqual(speed(0.0, self.params), 1.0)

    def test_half_density(self):
        self.assertAlmostEqual(speed(2.5, self.params), 0.5)

    def test_floor_at_max_density(self):
        """rho = rho_m gives f_min, not zero"""
        self.assertEqual(speed(5.0, self.params), self.params.f_min)
        self.assertAlmostEqual(self.params.f_min, 1e-3)

    def test_out_of_range_rejected(self):
        with self.assertRaises(DomainError):
            speed(-0.1, self.params)
        with self.assertRaises(DomainError):
            speed(5.5, self.params)

    def test_params_validation(self):
        with self.assertRaises(ValidationError):
            HughesParams(cfl=0.75)
        with self.assertRaises(ValidationError):
            HughesParams(v_f=1.0, f_min=2.0)


class TestGaussianIc(unittest.TestCase):
    """Test the mass-rescaled Gaussian initial condition"""

    def setUp(self):
        self.grid = build_grid(100, 25, 20.0, 5.0, None)

    def test_target_mass(self):
        ic = GaussianIc(x0=2.5, y0=2.5, sigma_x=1.8, sigma_y=1.8, target_mass=10.0)
        field, _ = gaussian_ic(self.grid, ic)
        self.assertAlmostEqual(total_mass(field), 10.0, delta=1e-12 * 10.0 * 10)

    def test_unit_amplitude(self):
        """Target mass equal to the un-scaled Gaussian mass gives Gamma_0 = 1"""
        xc, yc = np.meshgrid(self.grid.x_centers, self.grid.y_centers, indexing="ij")
        shape = np.exp(-((xc - 2.5) ** 2) / (2 * 1.8 ** 2) - ((yc - 2.5) ** 2) / (2 * 1.8 ** 2))
        mass = shape.sum() * self.grid.cell_area
        ic = GaussianIc(x0=2.5, y0=2.5, sigma_x=1.8, sigma_y=1.8, target_mass=mass)
        field, gamma0 = gaussian_ic(self.grid, ic)
        self.assertAlmostEqual(gamma0, 1.0, places=12)
        self.assertLessEqual(field.values.max(), 1.0 + 1e-12)

    def test_zero_mass(self):
        ic = GaussianIc(x0=2.5, y0=2.5, sigma_x=1.8, sigma_y=1.8, target_mass=0.0)
        field, gamma0 = gaussian_ic(self.grid, ic)
        self.assertEqual(gamma0, 0.0)
        self.assertEqual(total_mass(field), 0.0)

    def test_obstacle_cells_zeroed(self):
        grid = small_grid()
        ic = GaussianIc(x0=10.0, y0=2.5, sigma_x=1.8, sigma_y=1.8)
        field, _ = gaussian_ic(grid, ic)
        self.assertTrue(np.all(field.values[grid.obstacle_mask] == 0.0))

    def test_infeasible_peak(self):
        ic = GaussianIc(x0=2.5, y0=2.5, sigma_x=0.1, sigma_y=0.1, target_mass=10.0)
        with self.assertRaises(InfeasibleMassError):
            gaussian_ic(self.grid, ic)


class TestEikonal(unittest.TestCase):
    """Test the fast-sweeping travel-time solver"""

    def setUp(self):
        self.params = HughesParams()

    def _empty(self, grid):
        return density_field(grid, np.zeros(grid.shape))

    def test_free_corridor_distance(self):
        """rho = 0 without an obstacle gives phi = L - x within 2 dx"""
        grid = small_grid(obstacle=False)
        phi = solve_eikonal(grid, self._empty(grid), self.params).values
        expected = grid.length_x - grid.x_centers[:, None]
        self.assertLessEqual(np.max(np.abs(phi - expected)), 2 * grid.dx)

    def test_exit_column_zero(self):
        grid = small_grid()
        phi = solve_eikonal(grid, self._empty(grid), self.params).values
        self.assertTrue(np.all(phi[-1, :] == 0.0))

    def test_matches_dijkstra_with_obstacle(self):
        """Obstacle detours agree with graph shortest paths within 2 dx"""
        grid = small_grid()
        phi = solve_eikonal(grid, self._empty(grid), self.params).values
        oracle = dijkstra_travel_time(grid)
        fluid = grid.fluid_mask
        self.assertLessEqual(np.max(np.abs(phi[fluid] - oracle[fluid])), 2 * grid.dx)

    def test_obstacle_lengthens_paths(self):
        """Cells blocked by the obstacle see a longer travel time"""
        grid = small_grid()
        free_grid = small_grid(obstacle=False)
        phi = solve_eikonal(grid, self._empty(grid), self.params).values
        free = solve_eikonal(free_grid, self._empty(free_grid), self.params).values
        fluid = grid.fluid_mask
        self.assertTrue(np.all(phi[fluid] >= free[fluid] - 1e-9))
        rows, cols = np.nonzero(grid.obstacle_mask)
        upstream = rows.min() - 1
        for j in np.unique(cols):
            self.assertGreater(phi[upstream, j], free[upstream, j])

    def test_anisotropic_cells_rejected(self):
        grid = build_grid(40, 20, 20.0, 5.0, None)
        with self.assertRaises(GeometryError):
            solve_eikonal(grid, self._empty(grid), self.params)

    def test_non_convergence_reports_residual(self):
        grid = small_grid()
        with self.assertRaises(SolverError) as ctx:
            solve_eikonal(grid, self._empty(grid), HughesParams(max_sweeps=1))
        self.assertEqual(ctx.exception.sweeps, 1)
        self.assertGreater(ctx.exception.residual, 0.0)

    def test_potential_is_causal(self):
        """phi >= 0 everywhere and zero only on the exit column"""
        grid = small_grid()
        rho, _ = gaussian_ic(grid, GaussianIc(x0=6.0, y0=2.0, sigma_x=1.7, sigma_y=1.9), self.params)
        phi = solve_eikonal(grid, rho, self.params).values
        self.assertGreaterEqual(phi.min(), 0.0)
        self.assertTrue(np.all(phi[-1, :] == 0.0))
        self.assertTrue(np.all(phi[:-1, :][grid.fluid_mask[:-1, :]] > 0.0))

    def test_sweep_order_invariance(self):
        """Any sequence of the four orderings converges to the same potential"""
        grid = small_grid()
        params = HughesParams(sweep_tol=1e-13, max_sweeps=500)
        rho, _ = gaussian_ic(grid, GaussianIc(x0=6.0, y0=2.0, sigma_x=1.7, sigma_y=1.9), params)
        reference = solve_eikonal(grid, rho, params).values
        for orders in (
            ((1, -1), (-1, -1), (-1, 1), (1, 1)),
            ((-1, -1), (1, 1), (1, -1), (-1, 1)),
        ):
            with self.subTest(orders=orders):
                phi = solve_eikonal(grid, rho, params, sweep_orders=orders).values
                fluid = grid.fluid_mask
                np.testing.assert_allclose(phi[fluid], reference[fluid], rtol=0.0, atol=1e-10)


class TestGodunovFlux(unittest.TestCase):
    """Test the closed-form Godunov flux against a brute-force scan"""

    def setUp(self):
        self.params = HughesParams()

    def test_matches_scan(self):
        """10,000 random triples agree with a 10^4-point min/max scan"""
        rng = np.random.default_rng(0)
        n = 10_000
        left = rng.uniform(0.0, 5.0, n)
        right = rng.uniform(0.0, 5.0, n)
        cos = rng.uniform(-1.0, 1.0, n)
        closed = godunov_flux(left, right, cos, self.params)

        s = np.linspace(0.0, 1.0, 10_000)
        for start in range(0, n, 500):
            stop = start + 500
            low = np.minimum(left[start:stop], right[start:stop])
            high = np.maximum(left[start:stop], right[start:stop])
            theta = low[:, None] + (high - low)[:, None] * s[None, :]
            # the concave flux peaks at rho_m / 2; include it when bracketed
            peak = np.where((low <= 2.5) & (2.5 <= high), 2.5, low)
            theta = np.hstack([theta, peak[:, None]])
            values = cos[start:stop, None] * theta * (1.0 - theta / 5.0)
            increasing = left[start:stop] <= right[start:stop]
            scan = np.where(increasing, values.min(axis=1), values.max(axis=1))
            np.testing.assert_allclose(closed[start:stop], scan, rtol=0.0, atol=1e-9)


    def test_monotone_in_states(self):
        """Nondecreasing in rho_L and nonincreasing in rho_R for cos > 0"""
        rng = np.random.default_rng(1)
        n = 20_000
        left = rng.uniform(0.0, 5.0, n)
        right = rng.uniform(0.0, 5.0, n)
        cos = rng.uniform(1e-3, 1.0, n)
        bump = rng.uniform(0.0, 1.0, n)
        base = godunov_flux(left, right, cos, self.params)
        higher_left = godunov_flux(np.minimum(left + bump, 5.0), right, cos, self.params)
        higher_right = godunov_flux(left, np.minimum(right + bump, 5.0), cos, self.params)
        self.assertTrue(np.all(higher_left >= base - 1e-12))
        self.assertTrue(np.all(higher_right <= base + 1e-12))

    def test_worked_example(self):
        """rho_L = 1, rho_R = 4, cos = 1 -> min(F(1), F(4)) = 0.8"""
        self.assertAlmostEqual(godunov_flux_1d(1.0, 4.0, 1.0, self.params), 0.8, places=12)

    def test_consistency(self):
        for rho in (0.0, 1.3, 2.5, 4.9):
            self.assertAlmostEqual(
                godunov_flux_1d(rho, rho, 0.6, self.params), 0.6 * rho * (1 - rho / 5.0), places=14
            )

    def test_zero_direction(self):
        self.assertEqual(godunov_flux_1d(1.0, 3.0, 0.0, self.params), 0.0)

    def test_out_of_range_rejected(self):
        with self.assertRaises(DomainError):
            godunov_flux_1d(-1.0, 2.0, 1.0, self.params)
        with self.assertRaises(DomainError):
            godunov_flux_1d(1.0, 2.0, 1.5, self.params)


class TestDensityUpdate(unittest.TestCase):
    """Test conservative density steps and full runs"""

    def setUp(self):
        self.params = HughesParams(sweep_tol=1e-13, max_sweeps=500)

    def test_empty_corridor_stays_empty(self):
        """rho = 0 stays 0 and dt = cfl dx / v_f"""
        grid = small_grid(obstacle=False)
        rho = density_field(grid, np.zeros(grid.shape))
        phi = solve_eikonal(grid, rho, self.params)
        updated, dt = step_density(rho, phi, self.params)
        self.assertTrue(np.all(updated.values == 0.0))
        self.assertAlmostEqual(dt, self.params.cfl * grid.dx / self.params.v_f, places=12)

    def test_step_conserves_mass(self):
        grid = small_grid()
        ic = GaussianIc(x0=3.0, y0=2.0, sigma_x=1.7, sigma_y=1.9)
        rho, _ = gaussian_ic(grid, ic, self.params)
        before = total_mass(rho)
        for _ in range(5):
            phi = solve_eikonal(grid, rho, self.params)
            rho, _ = step_density(rho, phi, self.params)
        self.assertLessEqual(abs(total_mass(rho) - before), 1e-12 * before)

    def test_mirror_symmetry(self):
        """A symmetric start about y = H/2 stays symmetric past the obstacle"""
        grid = small_grid()
        ic = GaussianIc(x0=8.0, y0=2.5, sigma_x=1.8, sigma_y=1.8)
        rho, _ = gaussian_ic(grid, ic, self.params)
        for _ in range(3):
            phi = solve_eikonal(grid, rho, self.params)
            rho, _ = step_density(rho, phi, self.params)
            np.testing.assert_allclose(rho.values, rho.values[:, ::-1], rtol=0.0, atol=1e-10)

    def test_dt_max_shortens_step(self):
        grid = small_grid()
        rho, _ = gaussian_ic(grid, GaussianIc(x0=3.0, y0=2.5, sigma_x=1.8, sigma_y=1.8), self.params)
        phi = solve_eikonal(grid, rho, self.params)
        _, dt = step_density(rho, phi, self.params, dt_max=1e-3)
        self.assertEqual(dt, 1e-3)

    def test_mismatched_grids_rejected(self):
        grid = small_grid()
        other = small_grid(obstacle=False)
        rho = density_field(grid, np.zeros(grid.shape))
        phi = solve_eikonal(other, density_field(other, np.zeros(other.shape)), self.params)
        with self.assertRaises(GeometryError):
            step_density(rho, phi, self.params)

    def test_snapshot_count(self):
        self.assertEqual(snapshot_count(70.0, 0.1), 701)
        self.assertEqual(snapshot_count(30.0, 0.1), 301)

    def test_short_run(self):
        """Snapshots land on the uniform time grid and conserve mass"""
        grid = small_grid()
        ic = GaussianIc(x0=2.5, y0=2.5, sigma_x=1.8, sigma_y=1.8)
        run = run_simulation(grid, HughesParams(), ic, t_final=0.5, snapshot_dt=0.1, run_id=4)
        self.assertEqual(run.n_snapshots, 6)
        np.testing.assert_allclose(run.times, np.arange(6) * 0.1)
        masses = run.masses()
        self.assertLess(np.max(np.abs(masses - masses[0])) / masses[0], 1e-10)
        self.assertGreaterEqual(run.densities.min(), -1e-9)
        self.assertLessEqual(run.densities.max(), 5.0)
        self.assertEqual(run.run_id, 4)
        self.assertGreater(run.n_substeps, 0)

    def test_stream_splits_around_obstacle(self):
        """A centred crowd passes the obstacle in two side lobes"""
        grid = small_grid()
        ic = GaussianIc(x0=2.5, y0=2.5, sigma_x=1.8, sigma_y=1.8)
        run = run_simulation(grid, HughesParams(), ic, t_final=8.0, snapshot_dt=1.0)
        band = grid.obstacle_mask.any(axis=1)
        blocked = np.flatnonzero(grid.obstacle_mask.any(axis=0))
        for index in (5, 6, 7, 8):
            rho = run.densities[index][band, :]
            below = rho[:, :blocked.min()].sum()
            above = rho[:, blocked.max() + 1:].sum()
            total = rho.sum()
            with self.subTest(t=run.times[index]):
                self.assertGreater(total, 0.0)
                self.assertGreater(below, 0.25 * total)
                self.assertGreater(above, 0.25 * total)


if __name__ == '__main__':
    unittest.main()

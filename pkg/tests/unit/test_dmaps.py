#!/usr/bin/env python3
"""
Unit tests for diffusion maps: spectral contract, diffusion distances,
Nystrom extension and persistence
"""

import sys
import os
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '../..'))

import shutil
import tempfile
import unittest
from pathlib import Path

import numpy as np
from scipy.spatial.distance import pdist, squareform

from crowd_rom.dmaps import (
    LatentEmbedding,
    diffusion_distances,
    dmaps_encode,
    fit_dmaps,
    kernel_matrix,
    load_model,
    markov_matrix,
    nystrom_extend,
    nystrom_extend_batch,
    save_model,
    spectral_gap_ratios,
)
from crowd_rom.enums import EmbeddingKind
from crowd_rom.exceptions import DomainError, LineageError
from crowd_rom.pod import fit_pod
from tests.fixtures.sample_data import random_unit_mass_matrix


class TestSpectralContract(unittest.TestCase):
    """Test the Markov chain and its eigenpairs"""

    def setUp(self):
        self.X = random_unit_mass_matrix(60, 80, seed=1)
        self.model = fit_dmaps(self.X, 6)

    def test_kernel_diagonal(self):
        kernel = kernel_matrix(self.X.data, self.model.epsilon)
        np.testing.assert_array_equal(np.diag(kernel), 1.0)

    def test_epsilon_is_median_distance(self):
        self.assertAlmostEqual(self.model.epsilon, float(np.median(pdist(self.X.data.T))))

    def test_row_stochastic(self):
        np.testing.assert_allclose(markov_matrix(self.model).sum(axis=1), 1.0, rtol=0, atol=1e-12)

    def test_trivial_pair(self):
        """lambda_0 = 1 with a constant right eigenvector"""
        self.assertAlmostEqual(self.model.trivial_eigenvalue, 1.0, delta=1e-8)
        vector = self.model.trivial_vector
        self.assertLessEqual(np.ptp(vector) / np.abs(vector).mean(), 1e-8)

    def test_retained_below_one(self):
        self.assertTrue(np.all(np.abs(self.model.eigenvalues) < 1.0))
        self.assertTrue(np.all(np.diff(self.model.eigenvalues) <= 0))

    def test_right_eigenvectors(self):
        """M u_i = lambda_i u_i"""
        markov = markov_matrix(self.model)
        u = self.model.right_eigenvectors
        np.testing.assert_allclose(markov @ u, u * self.model.eigenvalues, atol=1e-10)

    def test_left_right_biorthogonal(self):
        gram = self.model.left_eigenvectors.T @ self.model.right_eigenvectors
        np.testing.assert_allclose(gram, np.eye(6), atol=1e-10)

    def test_sign_convention(self):
        u = self.model.right_eigenvectors
        pivots = np.argmax(np.abs(u), axis=0)
        self.assertTrue(np.all(u[pivots, np.arange(6)] > 0))

    def test_three_collinear_points(self):
        """The first nontrivial eigenvector orders points along a line"""
        rng = np.random.default_rng(2)
        start, direction = rng.random(20), rng.standard_normal(20)
        points = np.column_stack([start, start + direction, start + 2 * direction])
        u = fit_dmaps(points, 1).right_eigenvectors[:, 0]
        steps = np.diff(u)
        self.assertTrue(np.all(steps > 0) or np.all(steps < 0))

    def test_too_few_snapshots(self):
        with self.assertRaises(DomainError):
            fit_dmaps(self.X.select(range(5)), 5)

    def test_spectral_gap_ratios(self):
        ratios = spectral_gap_ratios(self.model)
        self.assertEqual(ratios.shape, (5,))
        np.testing.assert_allclose(ratios, self.model.eigenvalues[1:] / self.model.eigenvalues[:-1])


class TestEmbedding(unittest.TestCase):
    """Test diffusion coordinates and diffusion distances"""

    def test_full_embedding_matches_diffusion_distance(self):
        """40 snapshots with d = 39 reproduce t = 1 diffusion distances"""
        X = random_unit_mass_matrix(60, 40, seed=3)
        model = fit_dmaps(X, 39)
        embedded = squareform(pdist(dmaps_encode(model).coords))
        brute = diffusion_distances(model)
        off = ~np.eye(40, dtype=bool)
        relative = np.abs(embedded[off] - brute[off]) / brute[off]
        self.assertLessEqual(relative.max(), 1e-6)

    def test_one_coordinate(self):
        model = fit_dmaps(random_unit_mass_matrix(60, 30, seed=4), 1)
        coords = dmaps_encode(model).coords
        np.testing.assert_allclose(coords[:, 0], model.eigenvalues[0] * model.right_eigenvectors[:, 0])

    def test_scale_invariance(self):
        """Scaling every snapshot rescales epsilon and leaves Y unchanged"""
        data = random_unit_mass_matrix(60, 30, seed=5).data
        base = dmaps_encode(fit_dmaps(data, 4)).coords
        scaled = fit_dmaps(3.0 * data, 4)
        np.testing.assert_allclose(dmaps_encode(scaled).coords, base, atol=1e-10)

    def test_permutation_equivariance(self):
        data = random_unit_mass_matrix(60, 30, seed=6).data
        order = np.random.default_rng(0).permutation(30)
        base = dmaps_encode(fit_dmaps(data, 4)).coords
        permuted = dmaps_encode(fit_dmaps(data[:, order], 4)).coords
        np.testing.assert_allclose(permuted, base[order], atol=1e-10)

    def test_truncation_is_nested(self):
        model = fit_dmaps(random_unit_mass_matrix(60, 30, seed=7), 5)
        small = model.truncated(2)
        np.testing.assert_array_equal(dmaps_encode(small).coords, dmaps_encode(model).coords[:, :2])

    def test_embedding_from_pod(self):
        X = random_unit_mass_matrix(60, 30, seed=8)
        embedding = LatentEmbedding.from_pod(fit_pod(X, 3), X)
        self.assertIs(embedding.kind, EmbeddingKind.POD)
        self.assertEqual(embedding.coords.shape, (30, 3))
        self.assertEqual(embedding.training_hash, X.content_hash())


class TestNystrom(unittest.TestCase):
    """Test out-of-sample extension"""

    def setUp(self):
        self.X = random_unit_mass_matrix(60, 50, seed=9)
        self.model = fit_dmaps(self.X, 5)
        self.coords = dmaps_encode(self.model).coords

    def test_training_points_reproduced(self):
        for m in (0, 17, 49):
            extension = nystrom_extend(self.model, self.X.column(m))
            self.assertFalse(extension.out_of_range)
            np.testing.assert_allclose(
                extension.coords, self.coords[m], rtol=1e-6, atol=1e-6 * np.abs(self.coords).max()
            )

    def test_batch_matches_single(self):
        batch = nystrom_extend_batch(self.model, self.X.data[:, :5])
        for m in range(5):
            np.testing.assert_allclose(batch[m], nystrom_extend(self.model, self.X.column(m)).coords, atol=1e-14)

    def test_far_query_flagged(self):
        far = self.X.column(0) + 1e3
        with self.assertLogs("crowd_rom.dmaps", level="WARNING"):
            extension = nystrom_extend(self.model, far)
        self.assertTrue(extension.out_of_range)
        self.assertTrue(np.all(np.isfinite(extension.coords)))

    def test_shape_mismatch(self):
        with self.assertRaises(DomainError):
            nystrom_extend(self.model, np.ones(7))


class TestPersistence(unittest.TestCase):

    def setUp(self):
        self.tmp = Path(tempfile.mkdtemp())

    def tearDown(self):
        shutil.rmtree(self.tmp)

    def test_round_trip(self):
        X = random_unit_mass_matrix(60, 30, seed=10)
        model = fit_dmaps(X, 4)
        save_model(model, self.tmp / "dmaps")
        again = load_model(self.tmp / "dmaps", X)
        self.assertEqual(again.epsilon, model.epsilon)
        np.testing.assert_array_equal(again.eigenvalues, model.eigenvalues)
        np.testing.assert_array_equal(again.right_eigenvectors, model.right_eigenvectors)

    def test_lineage_checked(self):
        X = random_unit_mass_matrix(60, 30, seed=10)
        save_model(fit_dmaps(X, 4), self.tmp / "dmaps")
        with self.assertRaises(LineageError):
            load_model(self.tmp / "dmaps", random_unit_mass_matrix(60, 30, seed=11))


if __name__ == '__main__':
    unittest.main()

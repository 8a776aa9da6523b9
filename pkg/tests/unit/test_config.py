#!/usr/bin/env python3
"""
Unit tests for pipeline configuration parsing, validation and hashing
"""

import sys
import os
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '../..'))

import json
import shutil
import tempfile
import unittest
from pathlib import Path

from pydantic import ValidationError

from crowd_rom.config import (
    EncoderSpec,
    ManifoldSpec,
    MvarSpec,
    PipelineConfig,
    config_hash,
    desk_profile,
    load_config,
    short_hash,
)
from crowd_rom.enums import EmbeddingKind
from crowd_rom.exceptions import ConfigError
from tests.fixtures.sample_data import tiny_config

CONFIG_DIR = Path(__file__).resolve().parents[2] / "configs"


class TestShippedConfigs(unittest.TestCase):
    """Test the JSON profiles in configs/"""

    def test_desk_matches_profile(self):
        config = load_config(CONFIG_DIR / "desk.json")
        self.assertEqual(config_hash(config), config_hash(desk_profile()))

    def test_full_profile(self):
        config = load_config(CONFIG_DIR / "full.json")
        self.assertEqual((config.grid.nx, config.grid.ny), (200, 50))
        self.assertEqual(config.splits.counts(), {"train": 40, "val": 20, "test": 40, "extra": 10})
        self.assertEqual(config.simulation.n_snapshots, 701)

    def test_subsampling_profiles(self):
        """Early stratum from the first 10 s; 6,000 snapshots at full scale"""
        full = load_config(CONFIG_DIR / "full.json").manifold.subsample
        self.assertEqual(full.total_count, 6000)
        self.assertEqual(full.early_window_s, 10.0)
        self.assertEqual(round(full.early_fraction * full.total_count), 4000)
        self.assertEqual(PipelineConfig().manifold.subsample.total_count, 6000)
        self.assertEqual(desk_profile().manifold.subsample.early_window_s, 10.0)

    def test_default_speed_floor(self):
        self.assertAlmostEqual(desk_profile().hughes.f_min, 1e-3)


class TestHashing(unittest.TestCase):
    """Test the config hash that names stage directories"""

    def test_stable(self):
        self.assertEqual(config_hash(tiny_config()), config_hash(tiny_config()))
        self.assertEqual(len(short_hash(tiny_config())), 12)

    def test_stage_dir_excluded(self):
        self.assertEqual(
            config_hash(tiny_config(stage_dir="/tmp/a")), config_hash(tiny_config(stage_dir="/tmp/b"))
        )

    def test_seed_changes_hash(self):
        self.assertNotEqual(config_hash(tiny_config(seed=3)), config_hash(tiny_config(seed=4)))

    def test_seed_overrides_split_plan(self):
        self.assertEqual(tiny_config(seed=9).split_plan().seed, 9)


class TestValidation(unittest.TestCase):
    """Test rejection of inconsistent configurations"""

    def test_unknown_key(self):
        with self.assertRaises(ValidationError):
            PipelineConfig.model_validate({"gird": {}})

    def test_auto_dimension_only_for_pod(self):
        EncoderSpec(kind=EmbeddingKind.POD, d="auto")
        with self.assertRaises(ValidationError):
            EncoderSpec(kind=EmbeddingKind.DMAPS, d="auto")

    def test_rom_dims_bounded_by_d(self):
        with self.assertRaises(ValidationError):
            EncoderSpec(kind=EmbeddingKind.POD, d=4, rom_dims=[5])

    def test_nonpositive_d(self):
        with self.assertRaises(ValidationError):
            EncoderSpec(kind=EmbeddingKind.POD, d=0)

    def test_lags_sorted_and_unique(self):
        self.assertEqual(MvarSpec(candidate_lags=[3, 1, 3, 2]).candidate_lags, [1, 2, 3])
        with self.assertRaises(ValidationError):
            MvarSpec(candidate_lags=[0, 1])

    def test_subsample_larger_than_training_set(self):
        base = tiny_config()
        manifold = base.manifold.model_copy(
            update={"subsample": base.manifold.subsample.model_copy(update={"total_count": 1000})}
        )
        with self.assertRaises(ValidationError):
            tiny_config(manifold=manifold)

    def test_lag_longer_than_trajectory(self):
        with self.assertRaises(ValidationError):
            tiny_config(mvar=MvarSpec(candidate_lags=[1, 40]))

    def test_bad_geometry(self):
        base = tiny_config()
        grid = base.grid.model_copy(update={"nx": 40, "ny": 10, "length_x": 1.0})
        with self.assertRaises(ValidationError):
            tiny_config(grid=grid)

    def test_duplicate_encoder_kinds(self):
        pod = tiny_config().manifold.encoders[0]
        with self.assertRaises(ValidationError):
            ManifoldSpec(encoders=[pod, pod])
        with self.assertRaises(ValidationError):
            ManifoldSpec(encoders=[])


class TestLoadConfig(unittest.TestCase):
    """Test reading config files"""

    def setUp(self):
        self.tmp = Path(tempfile.mkdtemp())

    def tearDown(self):
        shutil.rmtree(self.tmp)

    def test_missing_file(self):
        with self.assertRaises(ConfigError):
            load_config(self.tmp / "nope.json")

    def test_invalid_json(self):
        path = self.tmp / "broken.json"
        path.write_text("{ not json")
        with self.assertRaises(ConfigError):
            load_config(path)

    def test_not_an_object(self):
        path = self.tmp / "list.json"
        path.write_text("[1, 2]")
        with self.assertRaises(ConfigError):
            load_config(path)

    def test_round_trip(self):
        config = tiny_config()
        path = self.tmp / "tiny.json"
        path.write_text(json.dumps(config.model_dump(mode="json")))
        self.assertEqual(config_hash(load_config(path)), config_hash(config))


if __name__ == '__main__':
    unittest.main()

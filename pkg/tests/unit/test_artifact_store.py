#!/usr/bin/env python3
"""
Unit tests for stage directories, stage manifests and lineage tokens
"""

import sys
import os
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '../..'))

import json
import shutil
import tempfile
import unittest
from pathlib import Path

from crowd_rom.artifact_store import LocalArtifactStore, combine_hashes, file_sha256
from crowd_rom.enums import StageName
from crowd_rom.exceptions import ArtifactNotFoundError, LineageError

CONFIG_HASH = "ab" * 32


class TestLocalArtifactStore(unittest.TestCase):
    """Test the filesystem store"""

    def setUp(self):
        self.tmp = Path(tempfile.mkdtemp())
        self.store = LocalArtifactStore(self.tmp, CONFIG_HASH)

    def tearDown(self):
        shutil.rmtree(self.tmp)

    def write_output(self, stage, name, content):
        path = self.store.stage_path(stage) / name
        path.write_text(content)
        return path

    def test_layout(self):
        self.assertEqual(self.store.root, self.tmp / CONFIG_HASH[:12])
        self.assertEqual(self.store.stage_path(StageName.BUILD_MANIFOLD).name, "manifold")
        self.assertEqual(self.store.run_base(7).name, "run_0007")

    def test_manifest_records_outputs(self):
        output = self.write_output(StageName.TRAIN_ROM, "mvar_pod_d4.manifest.json", "{}")
        self.store.write_stage_manifest(StageName.TRAIN_ROM, "inputs", [output], {"n_models": 1})
        manifest = self.store.read_stage_manifest(StageName.TRAIN_ROM)
        self.assertEqual(manifest["stage"], "train-rom")
        self.assertEqual(manifest["config_hash"], CONFIG_HASH)
        self.assertEqual(manifest["outputs"], {"rom/mvar_pod_d4.manifest.json": file_sha256(output)})
        self.assertEqual(manifest["extra"], {"n_models": 1})

    def test_up_to_date(self):
        output = self.write_output(StageName.SIMULATE, "summary.csv", "a,b\n")
        self.assertFalse(self.store.is_up_to_date(StageName.SIMULATE, "inputs"))
        self.store.write_stage_manifest(StageName.SIMULATE, "inputs", [output])
        self.assertTrue(self.store.is_up_to_date(StageName.SIMULATE, "inputs"))
        self.assertFalse(self.store.is_up_to_date(StageName.SIMULATE, "other inputs"))

    def test_modified_output_is_stale(self):
        output = self.write_output(StageName.SIMULATE, "summary.csv", "a,b\n")
        self.store.write_stage_manifest(StageName.SIMULATE, "inputs", [output])
        output.write_text("a,c\n")
        with self.assertLogs("crowd_rom.artifact_store", level="INFO"):
            self.assertFalse(self.store.is_up_to_date(StageName.SIMULATE, "inputs"))

    def test_outputs_hash(self):
        with self.assertRaises(LineageError):
            self.store.outputs_hash(StageName.SIMULATE)
        output = self.write_output(StageName.SIMULATE, "summary.csv", "a,b\n")
        self.store.write_stage_manifest(StageName.SIMULATE, "inputs", [output])
        first = self.store.outputs_hash(StageName.SIMULATE)
        output.write_text("a,c\n")
        self.store.write_stage_manifest(StageName.SIMULATE, "inputs", [output])
        self.assertNotEqual(self.store.outputs_hash(StageName.SIMULATE), first)

    def test_list_artifacts(self):
        self.assertEqual(self.store.list_artifacts("runs"), [])
        for run_id in (2, 0, 1):
            Path(f"{self.store.run_base(run_id)}.manifest.json").write_text("{}")
        self.assertEqual(self.store.list_artifacts("runs"), ["run_0000", "run_0001", "run_0002"])
        with self.assertRaises(ArtifactNotFoundError) as ctx:
            self.store.list_artifacts("figures")
        self.assertIn("runs", str(ctx.exception))

    def test_timings_merge(self):
        self.store.record_timings(StageName.SIMULATE, {"wall_s": 1.0})
        path = self.store.record_timings(StageName.TRAIN_ROM, {"wall_s": 2.0})
        timings = json.loads(path.read_text())
        self.assertEqual(set(timings), {"simulate", "train-rom"})


class TestHashing(unittest.TestCase):

    def test_combine_is_order_sensitive(self):
        self.assertNotEqual(combine_hashes("a", "b"), combine_hashes("b", "a"))
        self.assertNotEqual(combine_hashes("ab"), combine_hashes("a", "b"))


if __name__ == '__main__':
    unittest.main()

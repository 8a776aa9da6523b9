#!/usr/bin/env python3
"""
Integration tests: the whole pipeline on a tiny corridor, through the CLI
and the stage API
"""

import sys
import os
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '../..'))

import json
import shutil
import tempfile
import unittest
from pathlib import Path

import numpy as np
import pandas as pd

from crowd_rom.config import short_hash
from crowd_rom.enums import StageName
from crowd_rom.exceptions import ArtifactNotFoundError
from crowd_rom.main import main
from crowd_rom.pipeline import PipelineContext, cmd_export, run_all
from tests.fixtures.sample_data import tiny_config


def deterministic_files(root: Path):
    """Stage outputs keyed by relative path, without wall-clock timings and exports"""
    return {
        p.relative_to(root).as_posix(): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file() and p.name != "timings.json" and p.relative_to(root).parts[0] != "export"
    }


class TestTinyPipeline(unittest.TestCase):
    """Run simulate -> build-manifold -> train-rom -> forecast-evaluate once
    and inspect what it leaves behind"""

    @classmethod
    def setUpClass(cls):
        cls.tmp = Path(tempfile.mkdtemp())
        cls.config = tiny_config()
        cls.config_path = cls.tmp / "tiny.json"
        cls.config_path.write_text(json.dumps(cls.config.model_dump(mode="json")))
        cls.stage_dir = cls.tmp / "runs"
        cls.exit_code = main(["all", "--config", str(cls.config_path), "--stage-dir", str(cls.stage_dir)])
        cls.root = cls.stage_dir / short_hash(cls.config)

    @classmethod
    def tearDownClass(cls):
        shutil.rmtree(cls.tmp)

    def test_exit_code(self):
        self.assertEqual(self.exit_code, 0)

    def test_simulations(self):
        runs = pd.read_csv(self.root / "simulate" / "runs.csv")
        self.assertEqual(len(runs), 6)
        self.assertEqual(list(runs["split"]), ["train"] * 3 + ["val", "test", "extra"])
        self.assertTrue((runs["status"] == "ok").all())
        self.assertTrue((runs["n_snapshots"] == 31).all())
        self.assertLess(runs["mass_drift_rel"].max(), 1e-10)
        self.assertTrue((self.root / "timings.json").exists())

    def test_manifold_reports(self):
        manifold = self.root / "manifold"
        for name in ("pod_spectrum.csv", "dmaps_spectrum.csv", "dmaps_embedding.csv", "baseline_summary.csv"):
            self.assertTrue((manifold / name).exists(), name)
        baseline = pd.read_csv(manifold / "baseline_summary.csv")
        self.assertEqual(
            sorted(zip(baseline["kind"], baseline["d"])),
            [("dmaps", 2), ("dmaps", 3), ("pod", 2), ("pod", 4)],
        )
        embedding = pd.read_csv(manifold / "dmaps_embedding.csv")
        self.assertEqual(list(embedding.columns), ["run_id", "t", "y1", "y2", "y3"])
        self.assertEqual(len(embedding), 60)

    def test_rom_reports(self):
        rom = self.root / "rom"
        bic = pd.read_csv(rom / "bic.csv")
        for model, rows in bic.groupby("model"):
            self.assertEqual(sorted(rows["lag"]), [1, 2, 3], model)
            self.assertEqual(int(rows["selected"].sum()), 1, model)
        stability = pd.read_csv(rom / "stability.csv")
        self.assertEqual(sorted(stability["model"]), ["dmaps_d3", "pod_d2", "pod_d4"])
        lags = pd.read_csv(rom / "lag_selection.csv")
        self.assertEqual(set(lags["full_scale_lag"]), {5, 8})

    def test_forecast_summaries(self):
        evaluate = self.root / "evaluate"
        for split in ("val", "test", "extra"):
            summary = pd.read_csv(evaluate / f"summary_{split}.csv")
            self.assertEqual(len(summary), 3)
            for column in ("model", "eps2_mean", "eps2_p10", "eps2_p90", "eps2_rel_mean", "w1_mean", "selected"):
                self.assertIn(column, summary.columns)
            self.assertTrue((summary["mass_deviation_max"] <= 1e-10).all())
            self.assertTrue((evaluate / f"summary_{split}.md").exists())
        selection = pd.read_csv(evaluate / "selection.csv")
        self.assertEqual(sorted(selection["kind"]), ["dmaps", "pod"])

    def test_error_series_layout(self):
        path = next((self.root / "evaluate" / "test" / "pod_d4").glob("run_*.csv"))
        frame = pd.read_csv(path)
        self.assertEqual(list(frame.columns), ["row", "t", "eps2", "eps2_rel", "w1"])
        self.assertEqual(list(frame["row"].iloc[-3:]), ["mean", "p10", "p90"])
        self.assertTrue(np.all(frame["w1"].iloc[:-3] >= 0))

    def test_rerun_is_a_no_op(self):
        before = deterministic_files(self.root)
        ctx = PipelineContext(self.config, str(self.stage_dir))
        results = run_all(ctx)
        self.assertTrue(all(result.skipped for result in results))
        self.assertEqual(deterministic_files(self.root), before)

    def test_forced_rerun_reproduces_outputs(self):
        """Parallel recomputation in a fresh directory gives the same bytes"""
        other_dir = self.tmp / "again"
        ctx = PipelineContext(self.config, str(other_dir), workers=2)
        results = run_all(ctx)
        self.assertTrue(all(result.ok for result in results))
        self.assertEqual(deterministic_files(other_dir / ctx.prefix), deterministic_files(self.root))

    def test_exports(self):
        ctx = PipelineContext(self.config, str(self.stage_dir))
        prefix = ctx.prefix

        snapshot = cmd_export(ctx, "snapshot", run_id=0, t=1.0).outputs[0]
        self.assertTrue(snapshot.name.startswith(prefix))
        self.assertEqual(len(pd.read_csv(snapshot)), 40 * 10)

        latent = cmd_export(ctx, "latent", run_id=4, kind="dmaps").outputs[0]
        self.assertEqual(list(pd.read_csv(latent).columns), ["t", "y1", "y2", "y3"])

        spectra = cmd_export(ctx, "spectra").outputs
        self.assertEqual(len(spectra), 2)

        errors = cmd_export(ctx, "errors", model="pod_d2", split="extra").outputs
        self.assertEqual(len(errors), 1)

        with self.assertRaises(ArtifactNotFoundError) as missing:
            cmd_export(ctx, "snapshot", run_id=99)
        self.assertEqual(missing.exception.available, [str(i) for i in range(6)])
        with self.assertRaises(ArtifactNotFoundError):
            cmd_export(ctx, "errors", model="pod_d7")

    def test_stage_manifests(self):
        for stage in (StageName.SIMULATE, StageName.BUILD_MANIFOLD, StageName.TRAIN_ROM, StageName.FORECAST_EVALUATE):
            manifest = json.loads((self.root / stage.directory / "stage_manifest.json").read_text())
            self.assertEqual(manifest["stage"], stage.value)
            self.assertEqual(manifest["extra"]["failures"], [])


if __name__ == '__main__':
    unittest.main()

"""
Pipeline stages: simulate -> build-manifold -> train-rom -> forecast-evaluate,
plus export of plot data.

Every stage writes under ``<stage_dir>/<config hash prefix>/`` and records a
stage manifest with the hash of its inputs; a stage whose inputs and
outputs are unchanged is skipped unless forced.
"""

import functools
import logging
import shutil
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from . import settings
from .artifact_store import LocalArtifactStore, combine_hashes
from .config import PipelineConfig, config_hash
from .dataset import (
    artifact_paths,
    load_dataset,
    load_run,
    sample_ics,
    save_dataset,
    save_run,
    subsample_for_manifold,
    write_csv,
    export_field_csv,
)
from .dmaps import fit_dmaps, load_model as load_dmaps, save_model as save_dmaps, spectral_gap_ratios
from .enums import EmbeddingKind, Split, StageName
from .exceptions import (
    ArtifactNotFoundError,
    CrowdRomError,
    LineageError,
    SamplingError,
)
from .hughes_solver import SimulationRun, run_simulation
from .metrics import ErrorSeries, ReconstructedRun, evaluate_run, pooled_summary
from .mvar import (
    LatentTrajectorySet,
    fit_mvar,
    load_model as load_mvar,
    long_horizon_norm_ratio,
    save_model as save_mvar,
)
from .notifications import StageNotifier, notify_stage
from .pod import cumulative_variance, fit_pod, load_basis, save_basis, select_rank
from .rom import (
    LatentCodec,
    dmaps_codec,
    forecast_run,
    latent_trajectories,
    model_name,
    pod_codec,
    truth_window,
    unit_mass_rows,
)

logger = logging.getLogger(__name__)

# lags chosen by BIC in the full-scale study, reported next to ours
FULL_SCALE_LAGS = {EmbeddingKind.POD.value: 5, EmbeddingKind.DMAPS.value: 8}
EXPORT_TARGETS = ("snapshot", "latent", "spectra", "errors")
METRIC_COLUMNS = ("eps2", "eps2_rel", "w1")


@dataclass
class StageResult:
    stage: StageName
    outputs: List[Path] = field(default_factory=list)
    failures: List[str] = field(default_factory=list)
    skipped: bool = False

    @property
    def ok(self) -> bool:
        return not self.failures


class PipelineContext:
    """Config, store and runtime options shared by the stages"""

    def __init__(
        self,
        config: PipelineConfig,
        stage_dir: Optional[str] = None,
        workers: Optional[int] = None,
        force: bool = False,
        notifier: Optional[StageNotifier] = None,
    ):
        self.config = config
        self.config_hash = config_hash(config)
        root = stage_dir or config.stage_dir or settings.DEFAULT_STAGE_DIR
        self.store = LocalArtifactStore(root, self.config_hash, settings.CONFIG_HASH_PREFIX_LEN)
        self.workers = max(1, int(workers or settings.DEFAULT_WORKERS))
        self.force = force
        self.notifier = notifier

    @property
    def prefix(self) -> str:
        return self.store.prefix

    def stage_dir(self, stage: StageName) -> Path:
        return self.store.stage_path(stage)

    def inputs_hash(self, stage: StageName, upstream: Sequence[StageName]) -> str:
        return combine_hashes(
            self.config_hash, stage.value, *(self.store.outputs_hash(s) for s in upstream)
        )

    def parallel_map(self, fn: Callable, tasks: Sequence) -> List:
        """Ordered map; inline when one worker is configured"""
        if self.workers == 1 or len(tasks) <= 1:
            return [fn(task) for task in tasks]
        with ProcessPoolExecutor(max_workers=min(self.workers, len(tasks))) as pool:
            return list(pool.map(fn, tasks))


def _run_stage(
    ctx: PipelineContext,
    stage: StageName,
    upstream: Sequence[StageName],
    body: Callable[[PipelineContext], Tuple[StageResult, Dict[str, Any], Dict[str, Any]]],
) -> StageResult:
    inputs_hash = ctx.inputs_hash(stage, upstream)
    if not ctx.force and ctx.store.is_up_to_date(stage, inputs_hash):
        logger.info(f"{stage.value}: up to date for config {ctx.prefix}, skipping")
        return StageResult(stage, skipped=True)

    logger.info(f"{stage.value}: starting (config {ctx.prefix})")
    started = time.perf_counter()
    try:
        result, extra, timings = body(ctx)
    except CrowdRomError as e:
        notify_stage(ctx.notifier, stage.value, ctx.prefix, False, time.perf_counter() - started, [str(e)])
        raise
    elapsed = time.perf_counter() - started

    extra = dict(extra)
    extra["failures"] = list(result.failures)
    ctx.store.write_stage_manifest(stage, inputs_hash, result.outputs, extra)
    timings["elapsed_s"] = elapsed
    ctx.store.record_timings(stage, timings)
    notify_stage(ctx.notifier, stage.value, ctx.prefix, True, elapsed, result.failures)
    logger.info(
        f"{stage.value}: finished in {elapsed:.1f}s with {len(result.outputs)} outputs "
        f"and {len(result.failures)} failures"
    )
    return result


def _stage_extra(ctx: PipelineContext, stage: StageName) -> Dict[str, Any]:
    manifest = ctx.store.read_stage_manifest(stage)
    if manifest is None:
        raise LineageError(f"Stage {stage.value} has not been run for config {ctx.prefix}")
    return manifest.get("extra", {})


def _with_payload(manifest_path: Path) -> List[Path]:
    return list(artifact_paths(manifest_path))


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def _simulate_one(task) -> Dict[str, Any]:
    spec, grid_spec, params, simulation, base = task
    record: Dict[str, Any] = {
        "run_id": spec.run_id,
        "split": spec.split,
        "ic": spec.ic.model_dump(),
        "error": None,
    }
    try:
        grid = grid_spec.build()
        run = run_simulation(
            grid,
            params,
            spec.ic,
            simulation.t_final,
            simulation.snapshot_dt,
            simulation.eikonal_stride,
            spec.run_id,
        )
        manifest = save_run(run, base, spec.split)
    except CrowdRomError as e:
        record["error"] = f"{type(e).__name__}: {e}"
        return record
    masses = run.masses()
    record.update(
        gamma0=run.gamma0,
        mass_initial=float(masses[0]),
        mass_final=float(masses[-1]),
        mass_drift_rel=float(np.max(np.abs(masses - masses[0])) / masses[0]) if masses[0] > 0 else 0.0,
        n_snapshots=run.n_snapshots,
        n_substeps=run.n_substeps,
        wall_time=run.wall_time,
        manifest=str(manifest),
    )
    return record


def _simulate_body(ctx: PipelineContext):
    config = ctx.config
    specs = sample_ics(config.split_plan())
    tasks = [
        (spec, config.grid, config.hughes, config.simulation, str(ctx.store.run_base(spec.run_id)))
        for split_specs in specs.values()
        for spec in split_specs
    ]
    logger.info(f"simulate: {len(tasks)} runs on {ctx.workers} worker(s)")
    records = ctx.parallel_map(_simulate_one, tasks)

    result = StageResult(StageName.SIMULATE)
    runs_by_split: Dict[str, List[int]] = {split: [] for split in specs}
    rows, timings = [], {}
    for record in records:
        row = {"run_id": record["run_id"], "split": record["split"]}
        row.update({name: record["ic"][name] for name in ("x0", "y0", "sigma_x", "sigma_y", "target_mass")})
        if record["error"]:
            logger.error(f"Run {record['run_id']} failed: {record['error']}")
            result.failures.append(f"run {record['run_id']}: {record['error']}")
            row["status"] = "failed"
        else:
            result.outputs.extend(_with_payload(Path(record["manifest"])))
            runs_by_split[record["split"]].append(record["run_id"])
            for name in ("gamma0", "mass_initial", "mass_final", "mass_drift_rel", "n_snapshots"):
                row[name] = record[name]
            row["status"] = "ok"
            timings[f"run_{record['run_id']:04d}"] = {
                "wall_time_s": record["wall_time"],
                "n_substeps": record["n_substeps"],
            }
        rows.append(row)

    columns = [
        "run_id", "split", "x0", "y0", "sigma_x", "sigma_y", "target_mass",
        "gamma0", "mass_initial", "mass_final", "mass_drift_rel", "n_snapshots", "status",
    ]
    frame = pd.DataFrame(rows).reindex(columns=columns)
    result.outputs.append(write_csv(frame, ctx.stage_dir(StageName.SIMULATE) / "runs.csv"))
    return result, {"runs": runs_by_split}, timings


def cmd_simulate(ctx: PipelineContext) -> StageResult:
    """Simulate every sampled initial condition and persist the runs"""
    return _run_stage(ctx, StageName.SIMULATE, [], _simulate_body)


def _split_run_ids(ctx: PipelineContext, split: Split) -> List[int]:
    return list(_stage_extra(ctx, StageName.SIMULATE).get("runs", {}).get(split.value, []))


def _load_split_runs(ctx: PipelineContext, split: Split) -> List[SimulationRun]:
    return [load_run(ctx.store.run_base(run_id)) for run_id in _split_run_ids(ctx, split)]


# ---------------------------------------------------------------------------
# Encoders, cached per process
# ---------------------------------------------------------------------------

@functools.lru_cache(maxsize=4)
def _training_matrix(manifold_dir: str):
    return load_dataset(Path(manifold_dir) / "training_snapshots")


@functools.lru_cache(maxsize=32)
def _load_codec(
    manifold_dir: str, kind_value: str, d: int, k: Optional[int], weight_power: float
) -> LatentCodec:
    kind = EmbeddingKind(kind_value)
    if kind is EmbeddingKind.POD:
        return pod_codec(load_basis(Path(manifold_dir) / "pod"), d)
    training = _training_matrix(manifold_dir)
    model = load_dmaps(Path(manifold_dir) / "dmaps", training)
    return dmaps_codec(model, training, d, k, weight_power)


@functools.lru_cache(maxsize=32)
def _load_run_cached(base: str) -> SimulationRun:
    return load_run(base)


def _codec(ctx: PipelineContext, kind_value: str, d: int) -> LatentCodec:
    lifter = ctx.config.lifter
    return _load_codec(
        str(ctx.stage_dir(StageName.BUILD_MANIFOLD)), kind_value, d, lifter.k, lifter.weight_power
    )


# ---------------------------------------------------------------------------
# build-manifold
# ---------------------------------------------------------------------------

def _baseline_one(task) -> Dict[str, Any]:
    """Encode -> decode reconstruction errors of one (kind, d) on one run"""
    manifold_dir, kind_value, d, k, weight_power, run_base, stride, evaluation = task
    codec = _load_codec(manifold_dir, kind_value, d, k, weight_power)
    run = _load_run_cached(run_base)
    window = truth_window(run, 0, stride)
    unit = unit_mass_rows(window.values)
    recon = codec.decode(codec.encode(unit))
    series = evaluate_run(
        window,
        ReconstructedRun(window.times, recon, run.grid, run.run_id, codec.name),
        evaluation.compute_w1,
        evaluation.w1_coarsen,
        evaluation.w1_support_cap,
    )
    return {"kind": kind_value, "d": d, "run_id": run.run_id, "series": series}


def _resolve_pod_d(X, spec) -> int:
    if spec.d != "auto":
        return int(spec.d)
    spectrum = fit_pod(X, 1).spectrum
    d = select_rank(spectrum, spec.variance_threshold)
    logger.info(f"POD rank {d} captures {spec.variance_threshold:.2%} of the variance")
    return d


def _build_manifold_body(ctx: PipelineContext):
    config = ctx.config
    out_dir = ctx.stage_dir(StageName.BUILD_MANIFOLD)
    result = StageResult(StageName.BUILD_MANIFOLD)

    train_runs = _load_split_runs(ctx, Split.TRAIN)
    if not train_runs:
        raise SamplingError("No successful training runs to learn a manifold from")
    sub = config.manifold.subsample
    X = subsample_for_manifold(
        train_runs, sub.early_window_s, sub.early_fraction, sub.total_count, config.seed
    )
    result.outputs.extend(_with_payload(save_dataset(X, out_dir / "training_snapshots")))
    _training_matrix.cache_clear()
    _load_codec.cache_clear()

    encoders: Dict[str, Dict[str, Any]] = {}
    for spec in config.manifold.encoders:
        kind = spec.kind.value
        if spec.kind is EmbeddingKind.POD:
            d = _resolve_pod_d(X, spec)
            basis = fit_pod(X, d)
            result.outputs.extend(
                _with_payload(save_basis(basis, out_dir / "pod", {"config_hash": ctx.config_hash}))
            )
            spectrum = pd.DataFrame(
                {
                    "index": np.arange(1, basis.spectrum.size + 1),
                    "eigenvalue": basis.spectrum,
                    "cumulative_variance": cumulative_variance(basis.spectrum),
                }
            )
        else:
            d = int(spec.d)
            model = fit_dmaps(X, d)
            result.outputs.extend(
                _with_payload(save_dmaps(model, out_dir / "dmaps", {"config_hash": ctx.config_hash}))
            )
            ratios = np.concatenate([[np.nan], spectral_gap_ratios(model)])
            spectrum = pd.DataFrame(
                {"index": np.arange(1, d + 1), "eigenvalue": model.eigenvalues, "gap_ratio": ratios}
            )
            coords = model.right_eigenvectors * model.eigenvalues
            embedding = pd.DataFrame({"run_id": X.run_ids, "t": X.times})
            for i in range(d):
                embedding[f"y{i + 1}"] = coords[:, i]
            result.outputs.append(write_csv(embedding, out_dir / "dmaps_embedding.csv"))
        result.outputs.append(write_csv(spectrum, out_dir / f"{kind}_spectrum.csv"))

        rom_dims = sorted(set(spec.rom_dims)) or [d]
        if max(rom_dims) > d:
            raise LineageError(f"{kind} ROM dimensions {rom_dims} exceed the fitted d = {d}")
        encoders[kind] = {
            "d": d,
            "rom_dims": rom_dims,
            "baseline_dims": sorted(set(dim for dim in spec.baseline_dims if dim <= d) | {d}),
        }

    result.outputs.extend(_write_baselines(ctx, encoders))
    return result, {"encoders": encoders}, {}


def _write_baselines(ctx: PipelineContext, encoders: Dict[str, Dict[str, Any]]) -> List[Path]:
    config = ctx.config
    out_dir = ctx.stage_dir(StageName.BUILD_MANIFOLD)
    bases = [str(ctx.store.run_base(run_id)) for run_id in _split_run_ids(ctx, config.evaluation.baseline_split)]
    if not bases:
        logger.warning(f"No {config.evaluation.baseline_split.value} runs; skipping baseline report")
        return []
    tasks = [
        (
            str(out_dir), kind, dim, config.lifter.k, config.lifter.weight_power,
            base, config.evaluation.baseline_stride, config.evaluation,
        )
        for kind, meta in encoders.items()
        for dim in meta["baseline_dims"]
        for base in bases
    ]
    outcomes = ctx.parallel_map(_baseline_one, tasks)

    outputs = []
    summary_rows = []
    for kind, meta in encoders.items():
        per_time = []
        for dim in meta["baseline_dims"]:
            series = [o["series"] for o in outcomes if o["kind"] == kind and o["d"] == dim]
            stacked = {name: np.vstack([getattr(s, name) for s in series]) for name in METRIC_COLUMNS}
            frame = pd.DataFrame({"d": dim, "t": series[0].times})
            for name in METRIC_COLUMNS:
                frame[name] = stacked[name].mean(axis=0)
            per_time.append(frame)
            summary = pooled_summary(series)
            row = {"kind": kind, "d": dim}
            for name in METRIC_COLUMNS:
                row[f"{name}_mean"], row[f"{name}_p10"], row[f"{name}_p90"] = summary[name]
            row["w1_coarsen"] = config.evaluation.w1_coarsen
            summary_rows.append(row)
        outputs.append(write_csv(pd.concat(per_time, ignore_index=True), out_dir / f"baseline_{kind}.csv"))
    outputs.append(write_csv(pd.DataFrame(summary_rows), out_dir / "baseline_summary.csv"))
    return outputs


def cmd_build_manifold(ctx: PipelineContext) -> StageResult:
    """Fit POD and/or DMs on the subsampled training snapshots and report
    baseline reconstruction errors"""
    return _run_stage(ctx, StageName.BUILD_MANIFOLD, [StageName.SIMULATE], _build_manifold_body)


# ---------------------------------------------------------------------------
# train-rom
# ---------------------------------------------------------------------------

def _train_rom_body(ctx: PipelineContext):
    config = ctx.config
    out_dir = ctx.stage_dir(StageName.TRAIN_ROM)
    result = StageResult(StageName.TRAIN_ROM)
    encoders = _stage_extra(ctx, StageName.BUILD_MANIFOLD)["encoders"]
    train_runs = _load_split_runs(ctx, Split.TRAIN)
    _load_codec.cache_clear()

    models, bic_rows, stability_rows, lag_rows = [], [], [], []
    for kind, meta in encoders.items():
        full = latent_trajectories(_codec(ctx, kind, meta["d"]), train_runs)
        for dim in meta["rom_dims"]:
            name = model_name(EmbeddingKind(kind), dim)
            trajset = LatentTrajectorySet(
                [(run_id, states[:, :dim]) for run_id, states in full.trajectories], full.dt
            )
            try:
                model = fit_mvar(trajset, config.mvar.fixed_lag, config.mvar.candidate_lags, kind=name)
            except CrowdRomError as e:
                logger.error(f"MVAR {name} failed: {e}")
                result.failures.append(f"{name}: {type(e).__name__}: {e}")
                continue
            result.outputs.extend(_with_payload(save_mvar(model, out_dir / f"mvar_{name}")))

            for lag, value in sorted(model.bic_table.items()):
                bic_rows.append(
                    {
                        "model": name, "lag": lag, "n_coefficients": lag * dim ** 2,
                        "bic": value, "selected": lag == model.lag,
                    }
                )
            warmup_states = trajset.trajectories[0][1]
            steps = config.evaluation.stability_horizon_factor * (warmup_states.shape[0] - model.lag)
            stability_rows.append(
                {
                    "model": name, "kind": kind, "d": dim, "lag": model.lag,
                    "spectral_radius": model.spectral_radius(),
                    "long_horizon_steps": steps,
                    "max_norm_ratio": long_horizon_norm_ratio(model, warmup_states[:model.lag], steps),
                }
            )
            lag_rows.append(
                {
                    "model": name, "kind": kind, "d": dim, "lag": model.lag,
                    "bic_selected": config.mvar.fixed_lag is None,
                    "full_scale_lag": FULL_SCALE_LAGS.get(kind),
                }
            )
            models.append({"name": name, "kind": kind, "d": dim, "lag": model.lag})

    if bic_rows:
        result.outputs.append(write_csv(pd.DataFrame(bic_rows), out_dir / "bic.csv"))
    result.outputs.append(write_csv(pd.DataFrame(stability_rows, columns=[
        "model", "kind", "d", "lag", "spectral_radius", "long_horizon_steps", "max_norm_ratio",
    ]), out_dir / "stability.csv"))
    result.outputs.append(write_csv(pd.DataFrame(lag_rows, columns=[
        "model", "kind", "d", "lag", "bic_selected", "full_scale_lag",
    ]), out_dir / "lag_selection.csv"))
    return result, {"models": models}, {}


def cmd_train_rom(ctx: PipelineContext) -> StageResult:
    """Encode the training runs and fit one MVAR per (encoder, d)"""
    return _run_stage(
        ctx, StageName.TRAIN_ROM, [StageName.SIMULATE, StageName.BUILD_MANIFOLD], _train_rom_body
    )


# ---------------------------------------------------------------------------
# forecast-evaluate
# ---------------------------------------------------------------------------

@functools.lru_cache(maxsize=32)
def _load_mvar_cached(path: str):
    return load_mvar(path)


def _evaluate_one(task) -> Dict[str, Any]:
    (manifold_dir, rom_dir, out_path, model_meta, lifter_k, weight_power,
     run_base, split, evaluation) = task
    record = {"model": model_meta["name"], "split": split, "error": None}
    try:
        codec = _load_codec(manifold_dir, model_meta["kind"], model_meta["d"], lifter_k, weight_power)
        model = _load_mvar_cached(str(Path(rom_dir) / f"mvar_{model_meta['name']}"))
        run = _load_run_cached(run_base)
        record["run_id"] = run.run_id
        recon = forecast_run(codec, model, run)
        series = evaluate_run(
            truth_window(run, model.lag),
            recon,
            evaluation.compute_w1,
            evaluation.w1_coarsen,
            evaluation.w1_support_cap,
        )
    except CrowdRomError as e:
        record["error"] = f"{type(e).__name__}: {e}"
        return record
    write_csv(series.to_frame(), out_path)
    record["series"] = series
    record["mass_deviation"] = float(np.max(np.abs(recon.values.sum(axis=1) - 1.0)))
    record["path"] = out_path
    return record


def _summary_row(meta: Dict[str, Any], series: List[ErrorSeries], records, coarsen: int) -> Dict[str, Any]:
    row: Dict[str, Any] = {
        "model": meta["name"],
        "display_name": EmbeddingKind.get_display_name(meta["kind"]),
        "kind": meta["kind"],
        "d": meta["d"],
        "lag": meta["lag"],
    }
    summary = pooled_summary(series)
    for name in METRIC_COLUMNS:
        row[f"{name}_mean"], row[f"{name}_p10"], row[f"{name}_p90"] = summary[name]
    row["w1_coarsen"] = coarsen
    row["mass_deviation_max"] = max((r["mass_deviation"] for r in records if not r["error"]), default=np.nan)
    row["n_runs"] = len(series)
    row["n_failed"] = sum(1 for r in records if r["error"])
    return row


def select_models(summary: pd.DataFrame, metric: str = "w1_mean") -> pd.DataFrame:
    """Best (kind, d) per encoder family; ties go to the smaller d"""
    rows = []
    for kind, group in summary.groupby("kind", sort=True):
        group = group[np.isfinite(group[metric].astype(float))]
        if group.empty:
            continue
        best = group.sort_values([metric, "d"], kind="mergesort").iloc[0]
        rows.append({"kind": kind, "model": best["model"], "d": int(best["d"]), "metric": metric, "value": best[metric]})
    return pd.DataFrame(rows, columns=["kind", "model", "d", "metric", "value"])


def _markdown_summary(summary: pd.DataFrame, split: str) -> str:
    def cell(row, name):
        return f"{row[name + '_mean']:.3g} ({row[name + '_p10']:.3g}, {row[name + '_p90']:.3g})"

    lines = [
        f"# {split} split: time-mean (P10, P90)",
        "",
        "| Model | d | l | eps2 | eps2_rel | W1 | selected |",
        "|---|---|---|---|---|---|---|",
    ]
    for _, row in summary.iterrows():
        lines.append(
            f"| {row['display_name']} | {row['d']} | {row['lag']} | {cell(row, 'eps2')} | "
            f"{cell(row, 'eps2_rel')} | {cell(row, 'w1')} | {'yes' if row['selected'] else ''} |"
        )
    factor = int(summary["w1_coarsen"].iloc[0]) if len(summary) else 1
    if factor > 1:
        lines.append("")
        lines.append(f"W1 computed on {factor}x{factor} coarsened supports.")
    return "\n".join(lines) + "\n"


def _forecast_evaluate_body(ctx: PipelineContext):
    config = ctx.config
    evaluation = config.evaluation
    out_dir = ctx.stage_dir(StageName.FORECAST_EVALUATE)
    manifold_dir = str(ctx.stage_dir(StageName.BUILD_MANIFOLD))
    rom_dir = str(ctx.stage_dir(StageName.TRAIN_ROM))
    result = StageResult(StageName.FORECAST_EVALUATE)
    models = _stage_extra(ctx, StageName.TRAIN_ROM).get("models", [])
    if not models:
        raise LineageError("No trained ROMs to evaluate")
    _load_codec.cache_clear()
    _load_mvar_cached.cache_clear()

    splits: List[Split] = []
    for split in [evaluation.selection_split] + list(evaluation.splits):
        if split not in splits:
            splits.append(split)

    tasks = []
    for split in splits:
        for meta in models:
            for run_id in _split_run_ids(ctx, split):
                out_path = str(out_dir / split.value / meta["name"] / f"run_{run_id:04d}.csv")
                tasks.append((
                    manifold_dir, rom_dir, out_path, meta, config.lifter.k,
                    config.lifter.weight_power, str(ctx.store.run_base(run_id)),
                    split.value, evaluation,
                ))
    logger.info(f"forecast-evaluate: {len(tasks)} (model, run) pairs on {ctx.workers} worker(s)")
    records = ctx.parallel_map(_evaluate_one, tasks)

    summaries: Dict[str, pd.DataFrame] = {}
    for split in splits:
        rows = []
        for meta in models:
            mine = [r for r in records if r["split"] == split.value and r["model"] == meta["name"]]
            for r in mine:
                if r["error"]:
                    message = f"{split.value}/{meta['name']}/run {r.get('run_id', '?')}: {r['error']}"
                    logger.error(message)
                    result.failures.append(message)
                else:
                    result.outputs.append(Path(r["path"]))
            series = [r["series"] for r in mine if not r["error"]]
            rows.append(_summary_row(meta, series, mine, evaluation.w1_coarsen))
        summaries[split.value] = pd.DataFrame(rows)

    metric = "w1_mean" if evaluation.compute_w1 else "eps2_rel_mean"
    selection = select_models(summaries[evaluation.selection_split.value], metric)
    result.outputs.append(write_csv(selection, out_dir / "selection.csv"))
    chosen = set(selection["model"])
    for split_value, summary in summaries.items():
        summary["selected"] = summary["model"].isin(chosen)
        result.outputs.append(write_csv(summary, out_dir / f"summary_{split_value}.csv"))
        md_path = out_dir / f"summary_{split_value}.md"
        md_path.write_text(_markdown_summary(summary, split_value))
        result.outputs.append(md_path)
    return result, {"splits": [s.value for s in splits]}, {}


def cmd_forecast_evaluate(ctx: PipelineContext) -> StageResult:
    """Forecast every evaluation run with every ROM and score it"""
    return _run_stage(
        ctx,
        StageName.FORECAST_EVALUATE,
        [StageName.SIMULATE, StageName.BUILD_MANIFOLD, StageName.TRAIN_ROM],
        _forecast_evaluate_body,
    )


def run_all(ctx: PipelineContext) -> List[StageResult]:
    return [
        cmd_simulate(ctx),
        cmd_build_manifold(ctx),
        cmd_train_rom(ctx),
        cmd_forecast_evaluate(ctx),
    ]


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

def _available_run_ids(ctx: PipelineContext) -> List[int]:
    return [int(name.split("_")[1]) for name in ctx.store.list_artifacts("runs")]


def _require_run(ctx: PipelineContext, run_id: Optional[int]) -> SimulationRun:
    available = _available_run_ids(ctx)
    if run_id is None or run_id not in available:
        raise ArtifactNotFoundError("run id", str(run_id), [str(i) for i in available])
    return load_run(ctx.store.run_base(run_id))


def cmd_export(
    ctx: PipelineContext,
    what: str,
    run_id: Optional[int] = None,
    t: Optional[float] = None,
    kind: Optional[str] = None,
    model: Optional[str] = None,
    split: Optional[str] = None,
) -> StageResult:
    """Write plot data under export/, every file name prefixed with the
    config hash"""
    if what not in EXPORT_TARGETS:
        raise ArtifactNotFoundError("export target", what, list(EXPORT_TARGETS))
    out_dir = ctx.stage_dir(StageName.EXPORT)
    result = StageResult(StageName.EXPORT)
    prefix = ctx.prefix

    if what == "snapshot":
        run = _require_run(ctx, run_id)
        t = run.t_final if t is None else t
        index = int(round(t / run.snapshot_dt))
        if not 0 <= index < run.n_snapshots or abs(index * run.snapshot_dt - t) > 1e-9 * max(1.0, abs(t)):
            raise ArtifactNotFoundError(
                "snapshot time", f"{t:g}", [f"multiples of {run.snapshot_dt:g} in [0, {run.t_final:g}]"]
            )
        path = out_dir / f"{prefix}_run_{run.run_id:04d}_t{run.times[index]:.3f}.csv"
        result.outputs.append(export_field_csv(run.densities[index], path, grid=run.grid))

    elif what == "latent":
        encoders = _stage_extra(ctx, StageName.BUILD_MANIFOLD).get("encoders", {})
        if kind not in encoders:
            raise ArtifactNotFoundError("encoder", str(kind), sorted(encoders))
        run = _require_run(ctx, run_id)
        codec = _codec(ctx, kind, encoders[kind]["d"])
        states = codec.encode(unit_mass_rows(run.values))
        frame = pd.DataFrame({"t": run.times})
        for i in range(states.shape[1]):
            frame[f"y{i + 1}"] = states[:, i]
        path = out_dir / f"{prefix}_latent_{kind}_run_{run.run_id:04d}.csv"
        result.outputs.append(write_csv(frame, path))

    elif what == "spectra":
        manifold_dir = ctx.stage_dir(StageName.BUILD_MANIFOLD)
        sources = sorted(manifold_dir.glob("*_spectrum.csv"))
        if not sources:
            raise ArtifactNotFoundError("spectrum", "*", [])
        for source in sources:
            target = out_dir / f"{prefix}_{source.name}"
            shutil.copyfile(source, target)
            result.outputs.append(target)

    else:
        available_models = [m["name"] for m in _stage_extra(ctx, StageName.TRAIN_ROM).get("models", [])]
        if model not in available_models:
            raise ArtifactNotFoundError("model", str(model), available_models)
        split = split or Split.TEST.value
        source_dir = ctx.stage_dir(StageName.FORECAST_EVALUATE) / split / model
        sources = sorted(source_dir.glob("run_*.csv"))
        if run_id is not None:
            sources = [s for s in sources if s.name == f"run_{run_id:04d}.csv"]
        if not sources:
            available = sorted(s.stem for s in source_dir.glob("run_*.csv"))
            raise ArtifactNotFoundError(f"{split} error series", str(run_id), available)
        for source in sources:
            target = out_dir / f"{prefix}_errors_{split}_{model}_{source.name}"
            shutil.copyfile(source, target)
            result.outputs.append(target)

    for path in result.outputs:
        logger.info(f"Exported {path}")
    return result

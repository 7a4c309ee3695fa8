"""Experiment orchestration on disk: generate, train, evaluate, predict.

Every command works out of one output directory:

    <out>/dataset/   manifest.json, checksums.json, task-*/sample-*.tlf
    <out>/train/     stage checkpoints, trainer state, losses.csv, eval matrix
    <out>/eval/      report.json and transect CSVs
    <out>/solve/     one-off oracle solves
    <out>/predict/   one-off model predictions

Generation is resumable: every finished sample is a valid TLF file plus a
completed marker in the manifest, so a rerun verifies and skips what exists
and solves only the remainder.  Training resumes from the last stage whose
model and trainer-state checkpoints are both present.
"""

from __future__ import annotations

import json
import os
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .bathymetry import BathymetryProfile, rasterize_mask
from .config import PipelineConfig
from .errors import ConfigError, FormatError
from .fields import GridSpec, MaskGrid, TLField
from .metrics import error_summary, transect
from .model import build_model, load_checkpoint, predict_tl, save_checkpoint
from .scenarios import (
    ScenarioSpec,
    TASK_FAMILY,
    TaskDataset,
    build_profile,
    draw_task_scenarios,
    make_task_dataset,
)
from .render import render_pgm
from .tlf import KIND_FIELD, KIND_MASK, TlfRecord, read_tlf, write_tlf
from .tlsolver import compute_tl_field
from .training import TrainingLog, load_trainer_state, run_sequence

__all__ = [
    "dataset_dir",
    "evaluate_checkpoint",
    "generate_dataset",
    "load_dataset",
    "predict_field",
    "solve_field",
    "train_model",
    "worker_count",
]

MANIFEST_FORMAT = 1
MANIFEST_NAME = "manifest.json"
CHECKSUMS_NAME = "checksums.json"
FINAL_CHECKPOINT = "final.tlf"


def worker_count() -> int:
    """Worker cap from OCEANTL_THREADS; absent or invalid means serial."""
    raw = os.environ.get("OCEANTL_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def dataset_dir(config: PipelineConfig) -> Path:
    return config.out_path / "dataset"


def _task_dirname(task_id: int) -> str:
    return f"task-{task_id}-{TASK_FAMILY[task_id]}"


def _sample_name(index: int) -> str:
    return f"sample-{index:03d}.tlf"


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2) + "\n")


def _write_sample(path: Path, mask: MaskGrid, fld: TLField) -> None:
    write_tlf(path, [
        TlfRecord("mask", KIND_MASK, mask.values),
        TlfRecord("field", KIND_FIELD, fld.values),
    ])


def _read_sample(path: Path, grid: GridSpec) -> tuple[MaskGrid, TLField]:
    by_name = {rec.name: rec for rec in read_tlf(path)}
    for needed in ("mask", "field"):
        if needed not in by_name:
            raise FormatError(f"{path}: sample is missing record '{needed}'")
    mask_values = by_name["mask"].values
    if mask_values.shape != grid.shape:
        raise FormatError(
            f"{path}: mask shape {mask_values.shape} does not match the "
            f"configured grid {grid.shape}"
        )
    mask = MaskGrid(grid=grid, values=mask_values.astype(np.uint8))
    fld = TLField(grid=grid, values=by_name["field"].values)
    return mask, fld


def _make_solver(config: PipelineConfig):
    medium = config.build_medium()

    def solve(profile: BathymetryProfile) -> TLField:
        return compute_tl_field(medium, profile, config.source,
                                config.grid, config.solver)

    return solve


def _fresh_manifest(config: PipelineConfig) -> dict:
    plan = draw_task_scenarios(config.dataset)
    tasks = []
    for task_id in config.dataset.tasks:
        specs = plan[task_id]
        tasks.append({
            "task_id": task_id,
            "family": TASK_FAMILY[task_id],
            "directory": _task_dirname(task_id),
            "n_samples": len(specs),
            "scenarios": [spec.to_json_dict() for spec in specs],
            "split": None,
            "norm_stats": None,
            "solve_seconds": [None] * len(specs),
        })
    return {"format": MANIFEST_FORMAT, "config": config.to_dict(), "tasks": tasks}


def _load_manifest(path: Path) -> dict:
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path} is not valid JSON: {exc}") from exc
    if doc.get("format") != MANIFEST_FORMAT:
        raise FormatError(
            f"{path}: unsupported manifest format {doc.get('format')!r}"
        )
    return doc


_GENERATION_SECTIONS = ("grid", "environment", "source", "solver", "dataset")


def _check_manifest_config(manifest: dict, config: PipelineConfig,
                           path: Path) -> None:
    """A dataset directory belongs to the generation-relevant config slice;
    training knobs may differ freely."""
    echo = config.to_dict()
    for section in _GENERATION_SECTIONS:
        if manifest["config"].get(section) != echo[section]:
            raise ConfigError(
                f"{path} was generated with a different '{section}' "
                "configuration; use a fresh output directory"
            )


def generate_dataset(config: PipelineConfig, *, echo=None) -> Path:
    """Solve every planned scenario into the dataset directory.

    Reruns verify existing samples (CRC plus shape) and solve only what is
    missing; completed runs are a no-op apart from verification.  Returns
    the dataset directory.
    """
    say = echo if echo is not None else (lambda message: None)
    root = dataset_dir(config)
    root.mkdir(parents=True, exist_ok=True)
    manifest_path = root / MANIFEST_NAME
    if manifest_path.exists():
        manifest = _load_manifest(manifest_path)
        _check_manifest_config(manifest, config, manifest_path)
    else:
        manifest = _fresh_manifest(config)
        _write_json(manifest_path, manifest)

    solve = _make_solver(config)
    workers = worker_count()
    for entry in manifest["tasks"]:
        task_root = root / entry["directory"]
        task_root.mkdir(exist_ok=True)
        specs = [ScenarioSpec(s["family"], s["params"], seed=s["seed"])
                 for s in entry["scenarios"]]
        pending = []
        for index in range(entry["n_samples"]):
            path = task_root / _sample_name(index)
            if path.exists() and entry["solve_seconds"][index] is not None:
                _read_sample(path, config.grid)  # raises on corruption
                continue
            pending.append(index)
        if pending:
            say(f"task {entry['task_id']} ({entry['family']}): solving "
                f"{len(pending)} of {entry['n_samples']} samples")

        def solve_one(index: int):
            profile = build_profile(specs[index])
            mask = rasterize_mask(profile, config.grid)
            start = time.perf_counter()
            fld = solve(profile)
            return index, mask, fld, time.perf_counter() - start

        if workers > 1 and len(pending) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = pool.map(solve_one, pending)
                for index, mask, fld, seconds in results:
                    _write_sample(task_root / _sample_name(index), mask, fld)
                    entry["solve_seconds"][index] = seconds
                    _write_json(manifest_path, manifest)
        else:
            for index in pending:
                index, mask, fld, seconds = solve_one(index)
                _write_sample(task_root / _sample_name(index), mask, fld)
                entry["solve_seconds"][index] = seconds
                _write_json(manifest_path, manifest)

    _finalize_manifest(config, manifest, root)
    _write_json(manifest_path, manifest)
    _write_checksums(manifest, root)
    say(f"dataset complete at {root}")
    return root


def _finalize_manifest(config: PipelineConfig, manifest: dict,
                       root: Path) -> None:
    """Fill in splits and normalization stats from the persisted samples."""
    for entry in manifest["tasks"]:
        task_root = root / entry["directory"]
        samples = [
            _read_sample(task_root / _sample_name(i), config.grid)
            for i in range(entry["n_samples"])
        ]
        ds = make_task_dataset(
            entry["task_id"], samples, config.dataset.split,
            seed=(config.dataset.seed, entry["task_id"], 101),
        )
        entry["split"] = {
            "train": list(ds.train_indices),
            "val": list(ds.val_indices),
            "test": list(ds.test_indices),
        }
        entry["norm_stats"] = [ds.norm_stats[0], ds.norm_stats[1]]


def _write_checksums(manifest: dict, root: Path) -> None:
    sums = {}
    for entry in manifest["tasks"]:
        for index in range(entry["n_samples"]):
            rel = f"{entry['directory']}/{_sample_name(index)}"
            sums[rel] = zlib.crc32((root / rel).read_bytes())
    _write_json(root / CHECKSUMS_NAME, {k: sums[k] for k in sorted(sums)})


def load_dataset(root) -> tuple[dict, list[TaskDataset]]:
    """Read a completed dataset directory back into task datasets.

    Returns the manifest (for config echo and solve timings) and the
    datasets in manifest task order.  Every sample file is CRC-verified on
    read.
    """
    root = Path(root)
    manifest = _load_manifest(root / MANIFEST_NAME)
    grid_doc = manifest["config"]["grid"]
    grid = GridSpec(
        n_range=int(grid_doc["n_range"]), n_depth=int(grid_doc["n_depth"]),
        range_extent_m=float(grid_doc["range_extent_m"]),
        depth_extent_m=float(grid_doc["depth_extent_m"]),
    )
    datasets = []
    for entry in manifest["tasks"]:
        if entry["norm_stats"] is None or entry["split"] is None:
            raise ConfigError(
                f"dataset at {root} is incomplete for task {entry['task_id']}; "
                "rerun generation"
            )
        task_root = root / entry["directory"]
        samples = [
            _read_sample(task_root / _sample_name(i), grid)
            for i in range(entry["n_samples"])
        ]
        datasets.append(TaskDataset(
            task_id=int(entry["task_id"]),
            samples=samples,
            split=tuple(manifest["config"]["dataset"]["split"]),
            train_indices=tuple(entry["split"]["train"]),
            val_indices=tuple(entry["split"]["val"]),
            test_indices=tuple(entry["split"]["test"]),
            norm_stats=(float(entry["norm_stats"][0]),
                        float(entry["norm_stats"][1])),
        ))
    return manifest, datasets


def _completed_stages(train_root: Path, datasets) -> int:
    """Stages 1..k whose model and trainer checkpoints both exist."""
    done = 0
    for stage, ds in enumerate(datasets, start=1):
        stem = train_root / f"stage{stage:02d}-task{ds.task_id}"
        if stem.with_suffix(".tlf").exists() and \
                Path(f"{stem}-opt.tlf").exists():
            done = stage
        else:
            break
    return done


def _merge_losses_csv(path: Path, log: TrainingLog) -> None:
    lines = ["stage,task,epoch,split,loss"]
    if path.exists():
        lines += [
            line for line in path.read_text().splitlines()[1:] if line
        ]
    lines += [f"{s},{t},{e},{split},{loss:.10g}" for s, t, e, split, loss
              in log.rows()]
    path.write_text("\n".join(lines) + "\n")


def _merge_matrix_json(path: Path, log: TrainingLog,
                       stage_tasks: list[int]) -> None:
    matrix = dict(log.eval_matrix)
    if path.exists():
        old = json.loads(path.read_text())
        for item in old.get("entries", []):
            matrix.setdefault((item["stage"], item["task"]), item["ssim"])
    entries = [{"stage": s, "task": t, "ssim": matrix[(s, t)]}
               for s, t in sorted(matrix)]
    _write_json(path, {"stage_tasks": stage_tasks, "entries": entries})


def train_model(config: PipelineConfig, dataset_root=None, *, echo=None):
    """Run the task sequence against a generated dataset, resuming from the
    last completed stage if checkpoints exist.

    Returns ``(state, TrainingLog, train_dir)``.  The log covers only the
    stages run by this call; ``losses.csv`` and ``eval-matrix.json`` on disk
    accumulate across resumes.
    """
    say = echo if echo is not None else (lambda message: None)
    root = Path(dataset_root) if dataset_root is not None else dataset_dir(config)
    manifest, datasets = load_dataset(root)
    _check_manifest_config(manifest, config, root / MANIFEST_NAME)
    train_root = config.out_path / "train"
    train_root.mkdir(parents=True, exist_ok=True)

    done = _completed_stages(train_root, datasets)
    opt = clock = None
    if done:
        stem = train_root / f"stage{done:02d}-task{datasets[done - 1].task_id}"
        state = load_checkpoint(stem.with_suffix(".tlf"))
        opt, clock = load_trainer_state(Path(f"{stem}-opt.tlf"), config.train)
        say(f"resuming after stage {done} of {len(datasets)}")
    else:
        state = build_model(config.model, seed=config.model_seed)

    log = TrainingLog()
    if done < len(datasets):
        state, log = run_sequence(
            state, datasets, config.train, checkpoint_dir=train_root,
            opt=opt, clock=clock, start_stage=done + 1,
        )
    save_checkpoint(state, train_root / FINAL_CHECKPOINT)
    _merge_losses_csv(train_root / "losses.csv", log)
    _merge_matrix_json(train_root / "eval-matrix.json", log,
                       [ds.task_id for ds in datasets])
    say(f"training complete; final checkpoint at {train_root / FINAL_CHECKPOINT}")
    return state, log, train_root


def _eval_samples(ds: TaskDataset):
    """Evaluation set with the same degenerate-split fallback the trainer
    uses: the test split, or everything when no test split exists."""
    indices = ds.test_indices or tuple(range(len(ds.samples)))
    return [(i, ds.samples[i]) for i in indices]


def evaluate_checkpoint(config: PipelineConfig, checkpoint_path=None,
                        dataset_root=None, *, echo=None) -> dict:
    """Score a checkpoint against a dataset's held-out samples.

    Writes ``report.json`` plus per-task transect CSVs under ``<out>/eval``
    and returns the report dict.
    """
    say = echo if echo is not None else (lambda message: None)
    root = Path(dataset_root) if dataset_root is not None else dataset_dir(config)
    ckpt = (Path(checkpoint_path) if checkpoint_path is not None
            else config.out_path / "train" / FINAL_CHECKPOINT)
    state = load_checkpoint(ckpt)
    if tuple(state.config.input_shape) != config.grid.shape:
        raise ConfigError(
            f"checkpoint grid {state.config.input_shape} does not match the "
            f"configured grid {config.grid.shape}"
        )
    manifest, datasets = load_dataset(root)
    eval_root = config.out_path / "eval"
    eval_root.mkdir(parents=True, exist_ok=True)

    by_task = {e["task_id"]: e for e in manifest["tasks"]}
    tasks_out = []
    # every sample has a recorded solve time, so the speed benchmark can
    # draw past the (possibly tiny) test splits up to the requested count
    speed_pool = []  # (solve_seconds or None, mask, task_id)
    for ds in datasets:
        entry = by_task[ds.task_id]
        for index, (mask, _) in enumerate(ds.samples):
            speed_pool.append((entry["solve_seconds"][index], mask, ds.task_id))
        reports = []
        train_ssims = []
        for index, (mask, fld) in _eval_samples(ds):
            pred = predict_tl(state, mask.values.astype(np.float64),
                              ds.task_id, clip_db=fld.clip_db)
            pred_field = TLField(grid=fld.grid, values=pred, clip_db=fld.clip_db)
            reports.append(error_summary(pred_field, fld, mask))
        for index in ds.train_indices:
            mask, fld = ds.samples[index]
            pred = predict_tl(state, mask.values.astype(np.float64),
                              ds.task_id, clip_db=fld.clip_db)
            pred_field = TLField(grid=fld.grid, values=pred, clip_db=fld.clip_db)
            train_ssims.append(error_summary(pred_field, fld, mask).ssim)

        first_index, (mask, fld) = _eval_samples(ds)[0]
        pred = predict_tl(state, mask.values.astype(np.float64), ds.task_id,
                          clip_db=fld.clip_db)
        pred_field = TLField(grid=fld.grid, values=pred, clip_db=fld.clip_db)
        transect_files = []
        for probe in config.eval.probe_depths_m:
            name = (f"transect-task{ds.task_id}-sample{first_index:03d}-"
                    f"{int(round(probe))}m.csv")
            transect(pred_field, fld, probe).to_csv(eval_root / name)
            transect_files.append(name)

        tasks_out.append({
            "task_id": ds.task_id,
            "family": entry["family"],
            "n_eval": len(reports),
            "mean_ssim": float(np.mean([r.ssim for r in reports])),
            "mean_ssim_water": float(np.mean([r.ssim_water for r in reports])),
            "mean_abs_db": float(np.mean([r.mean_abs_db for r in reports])),
            "rmse_db": float(np.mean([r.rmse_db for r in reports])),
            "p95_abs_db": float(np.mean([r.p95_abs_db for r in reports])),
            "mean_train_ssim": (float(np.mean(train_ssims))
                                if train_ssims else None),
            "transects": transect_files,
        })
        say(f"task {ds.task_id}: mean test SSIM "
            f"{tasks_out[-1]['mean_ssim']:.4f} over {len(reports)} samples")

    timed = [item for item in speed_pool if item[0] is not None]
    timed = timed[: config.eval.n_speed_fields]
    speed = None
    if timed:
        infer = []
        for _, mask, task_id in timed:
            start = time.perf_counter()
            predict_tl(state, mask.values.astype(np.float64), task_id)
            infer.append(time.perf_counter() - start)
        mean_solve = float(np.mean([s for s, _, _ in timed]))
        mean_infer = float(np.mean(infer))
        speed = {
            "n_fields": len(timed),
            "mean_solve_seconds": mean_solve,
            "mean_infer_seconds": mean_infer,
            "speedup": mean_solve / mean_infer,
        }
        say(f"inference speedup over the oracle solver: {speed['speedup']:.1f}x")

    report = {
        "checkpoint": str(ckpt),
        "dataset": str(root),
        "probe_depths_m": list(config.eval.probe_depths_m),
        "tasks": tasks_out,
        "mean_test_ssim": float(np.mean([t["mean_ssim"] for t in tasks_out])),
        "speed": speed,
    }
    _write_json(eval_root / "report.json", report)
    return report


def _resolve_task_id(state, task_id):
    if task_id is not None:
        return int(task_id)
    if not state.norm_stats:
        raise ConfigError("checkpoint has no normalization stats to predict with")
    return min(state.norm_stats)


def predict_field(config: PipelineConfig, checkpoint_path, bathy_csv, *,
                  task_id=None, echo=None):
    """One-shot inference for an external bathymetry profile.

    Returns ``(TLField, tlf_path, pgm_path, wall_seconds)``.
    """
    say = echo if echo is not None else (lambda message: None)
    state = load_checkpoint(Path(checkpoint_path))
    if tuple(state.config.input_shape) != config.grid.shape:
        raise ConfigError(
            f"checkpoint grid {state.config.input_shape} does not match the "
            f"configured grid {config.grid.shape}"
        )
    profile = BathymetryProfile.from_csv(bathy_csv)
    out_root = config.out_path / "predict"
    out_root.mkdir(parents=True, exist_ok=True)
    stem = Path(bathy_csv).stem

    start = time.perf_counter()
    mask = rasterize_mask(profile, config.grid)
    pred = predict_tl(state, mask.values.astype(np.float64),
                      _resolve_task_id(state, task_id))
    wall = time.perf_counter() - start

    fld = TLField(grid=config.grid, values=pred)
    tlf_path = out_root / f"{stem}-pred.tlf"
    pgm_path = out_root / f"{stem}-pred.pgm"
    _write_sample(tlf_path, mask, fld)
    render_pgm(pgm_path, fld.values)
    say(f"predicted {stem} in {wall:.3f} s -> {tlf_path}")
    return fld, tlf_path, pgm_path, wall


def solve_field(config: PipelineConfig, bathy_csv, *, echo=None):
    """One-shot oracle solve for an external bathymetry profile.

    Returns ``(TLField, tlf_path, pgm_path, wall_seconds)``.
    """
    say = echo if echo is not None else (lambda message: None)
    profile = BathymetryProfile.from_csv(bathy_csv)
    out_root = config.out_path / "solve"
    out_root.mkdir(parents=True, exist_ok=True)
    stem = Path(bathy_csv).stem

    solve = _make_solver(config)
    start = time.perf_counter()
    mask = rasterize_mask(profile, config.grid)
    fld = solve(profile)
    wall = time.perf_counter() - start

    tlf_path = out_root / f"{stem}-solve.tlf"
    pgm_path = out_root / f"{stem}-solve.pgm"
    _write_sample(tlf_path, mask, fld)
    render_pgm(pgm_path, fld.values)
    say(f"solved {stem} in {wall:.2f} s -> {tlf_path}")
    return fld, tlf_path, pgm_path, wall

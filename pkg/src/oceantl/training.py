"""Sequential task training with early stopping and exemplar replay.

The sequence loop trains tasks in order on one shared model.  After each
task it samples a small exemplar set from the *previous* task's training
split, extends the replay buffer with it, and retrains on the buffer, so a
task's own exemplars only enter the buffer at the following stage.  Weights
carry over between tasks; optimizer moments and the cosine-restart epoch
clock carry over too unless ``reset_optimizer`` is set.

Every random choice (batch shuffles, exemplar sampling) draws from its own
seeded stream keyed by (seed, task, purpose), so a full sequence is
reproducible bit for bit and disabling replay (``exemplars_per_task=0``)
leaves the remaining streams untouched.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, NumericsError, OceanTlError, ShapeError
from .metrics import ssim
from .model import (
    ModelState,
    _int_to_limbs,
    _limbs_to_int,
    backward,
    forward,
    forward_train,
    mse_loss,
    pad_input,
    predict_tl,
    save_checkpoint,
)
from .nn import LrSchedule, OptimizerState, adamw_step, cosine_warm_restart_lr
from .scenarios import TaskDataset, normalize
from .tlf import KIND_TENSOR, TlfRecord, read_tlf, write_tlf

__all__ = [
    "EarlyStopper",
    "EpochClock",
    "EpochRecord",
    "ReplayBuffer",
    "TaskLog",
    "TrainSpec",
    "TrainingLog",
    "construct_exemplar_set",
    "construct_replay_buffer",
    "forgetting_report",
    "load_trainer_state",
    "replay_train",
    "run_sequence",
    "save_trainer_state",
    "train_task",
]


@dataclass(frozen=True)
class TrainSpec:
    """Knobs for one task stage and for the replay pass."""

    n_epochs: int
    patience: int = 100
    batch_size: int = 4
    n_replay: int = 50
    exemplars_per_task: int = 8
    seed: int = 0
    weight_decay: float = 0.01
    schedule: LrSchedule = LrSchedule()
    reset_optimizer: bool = False

    def __post_init__(self) -> None:
        if self.n_epochs < 1 or self.patience < 1 or self.batch_size < 1:
            raise ConfigError("epochs, patience, and batch size must be >= 1")
        # zero is meaningful here: no replay pass / replay disabled entirely
        if self.n_replay < 0 or self.exemplars_per_task < 0:
            raise ConfigError("replay epochs and exemplar count must be >= 0")
        if self.weight_decay < 0:
            raise ConfigError("weight decay must be >= 0")


@dataclass
class EpochClock:
    """Running epoch index feeding the cosine-restart schedule."""

    value: int = 0

    def tick(self) -> int:
        v = self.value
        self.value += 1
        return v


class EarlyStopper:
    """Counter semantics: reset on strict improvement, stop at patience."""

    def __init__(self, patience: int) -> None:
        self.patience = patience
        self.best = np.inf
        self.best_epoch = 0
        self.counter = 0

    def update(self, epoch: int, loss: float) -> bool:
        if loss < self.best:
            self.best = loss
            self.best_epoch = epoch
            self.counter = 0
            return True
        self.counter += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.counter >= self.patience


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float


@dataclass
class TaskLog:
    task_id: int
    epochs: list[EpochRecord]
    best_epoch: int
    best_val_loss: float
    replay_losses: list[float] = field(default_factory=list)


@dataclass
class TrainingLog:
    """Per-stage loss curves plus the post-stage evaluation matrix."""

    task_logs: list[TaskLog] = field(default_factory=list)
    stage_tasks: list[int] = field(default_factory=list)
    # (stage, task_id) -> mean test SSIM; populated for every seen task
    eval_matrix: dict[tuple[int, int], float] = field(default_factory=dict)

    def rows(self):
        for stage, tlog in enumerate(self.task_logs, start=1):
            for rec in tlog.epochs:
                yield (stage, tlog.task_id, rec.epoch, "train", rec.train_loss)
                yield (stage, tlog.task_id, rec.epoch, "val", rec.val_loss)
            for epoch, loss in enumerate(tlog.replay_losses, start=1):
                yield (stage, tlog.task_id, epoch, "replay", loss)

    def to_csv(self, path) -> None:
        lines = ["stage,task,epoch,split,loss"]
        lines += [
            f"{s},{t},{e},{split},{loss:.10g}" for s, t, e, split, loss in self.rows()
        ]
        Path(path).write_text("\n".join(lines) + "\n")

    def matrix_to_json(self, path) -> None:
        entries = [
            {"stage": s, "task": t, "ssim": v}
            for (s, t), v in sorted(self.eval_matrix.items())
        ]
        payload = {"stage_tasks": list(self.stage_tasks), "entries": entries}
        Path(path).write_text(json.dumps(payload, indent=2) + "\n")


@dataclass(frozen=True)
class ReplayBuffer:
    """Exemplar sets in stage order; each item is (mask, field, task id)."""

    sets: tuple[tuple, ...] = ()

    @property
    def items(self) -> tuple:
        return tuple(item for group in self.sets for item in group)

    @property
    def task_ids(self) -> tuple[int, ...]:
        seen = []
        for group in self.sets:
            for item in group:
                if item[2] not in seen:
                    seen.append(item[2])
        return tuple(seen)

    def __len__(self) -> int:
        return sum(len(group) for group in self.sets)


def construct_exemplar_set(dataset: TaskDataset, m: int, seed=0) -> tuple:
    """Uniform sample without replacement of min(m, train split size) items;
    each tagged with the source task id."""
    if m < 0:
        raise ConfigError(f"exemplar count must be >= 0, got {m}")
    train = dataset.train_samples
    if m == 0 or not train:
        return ()
    take = min(m, len(train))
    picks = np.random.default_rng(seed).choice(len(train), size=take, replace=False)
    return tuple((train[i][0], train[i][1], dataset.task_id) for i in picks)


def construct_replay_buffer(exemplar_sets) -> ReplayBuffer:
    return ReplayBuffer(sets=tuple(tuple(group) for group in exemplar_sets))


def _make_optimizer(spec: TrainSpec) -> OptimizerState:
    return OptimizerState(lr=spec.schedule.lr_max, weight_decay=spec.weight_decay)


def _check_grid(state: ModelState, mask_grid_shape) -> None:
    if tuple(state.config.input_shape) != tuple(mask_grid_shape):
        raise ShapeError(
            f"model grid {state.config.input_shape} != dataset grid {mask_grid_shape}"
        )


def _stack_inputs(state: ModelState, samples) -> np.ndarray:
    masks = np.stack([np.asarray(s[0].values, dtype=np.float32) for s in samples])
    return pad_input(masks, state.config.pad_to_multiple)


def _stack_targets(samples, stats) -> np.ndarray:
    return np.stack(
        [normalize(s[1].values, stats) for s in samples]
    ).astype(np.float32)


def _snapshot(state: ModelState) -> dict:
    return {
        "params": {k: v.copy() for k, v in state.params.items()},
        "stats": {k: v.copy() for k, v in state.stats.items()},
        "step": state.step,
    }


def _restore(state: ModelState, snap: dict) -> None:
    state.params = {k: v.copy() for k, v in snap["params"].items()}
    state.stats = {k: v.copy() for k, v in snap["stats"].items()}
    state.step = snap["step"]


def _abort_non_finite(state, loss, task_id, epoch, checkpoint_dir):
    note = ""
    if checkpoint_dir is not None:
        path = Path(checkpoint_dir) / f"diagnostic-task{task_id}-epoch{epoch}.tlf"
        save_checkpoint(state, path)
        note = f"; diagnostic checkpoint written to {path}"
    raise NumericsError(
        f"non-finite loss {loss} while training task {task_id} epoch {epoch}{note}"
    )


def _train_epoch(state, x, targets, spec, opt, rng, task_id, epoch, checkpoint_dir):
    """One shuffled pass; returns the sample-weighted mean batch loss."""
    n = x.shape[0]
    order = rng.permutation(n)
    total = 0.0
    for lo in range(0, n, spec.batch_size):
        chunk = order[lo : lo + spec.batch_size]
        pred, tape = forward_train(state, x[chunk])
        loss, dpred = mse_loss(pred, targets[chunk])
        if not np.isfinite(loss):
            _abort_non_finite(state, loss, task_id, epoch, checkpoint_dir)
        grads = backward(state, tape, dpred)
        adamw_step(state.params, grads, opt)
        state.step += 1
        total += loss * len(chunk)
    return total / n


def _eval_loss(state, x, targets, batch_size) -> float:
    n = x.shape[0]
    total = 0.0
    for lo in range(0, n, batch_size):
        pred = forward(state, x[lo : lo + batch_size], train=False)
        total += mse_loss(pred, targets[lo : lo + batch_size])[0] * pred.shape[0]
    return total / n


def train_task(state, dataset: TaskDataset, spec: TrainSpec, *,
               opt: OptimizerState | None = None,
               clock: EpochClock | None = None,
               checkpoint_dir=None):
    """Train one task with early stopping on its validation split.

    Returns ``(state, TaskLog)`` with the model restored to the best
    validation checkpoint (the last epoch's weights are discarded unless
    they are the best).  When the dataset has no validation split the
    training loss is monitored instead.
    """
    if not dataset.samples:
        raise ConfigError(f"task {dataset.task_id} dataset is empty")
    _check_grid(state, dataset.samples[0][0].values.shape)
    train = dataset.train_samples
    if not train:
        raise ConfigError(f"task {dataset.task_id} has no training samples")
    opt = opt if opt is not None else _make_optimizer(spec)
    clock = clock if clock is not None else EpochClock()
    rng = np.random.default_rng((spec.seed, dataset.task_id, 1))

    x_train = _stack_inputs(state, train)
    t_train = _stack_targets(train, dataset.norm_stats)
    val = dataset.val_samples
    if val:
        x_val = _stack_inputs(state, val)
        t_val = _stack_targets(val, dataset.norm_stats)

    stopper = EarlyStopper(spec.patience)
    best = _snapshot(state)
    records: list[EpochRecord] = []
    for local_epoch in range(1, spec.n_epochs + 1):
        opt.lr = cosine_warm_restart_lr(spec.schedule, clock.tick())
        train_loss = _train_epoch(
            state, x_train, t_train, spec, opt, rng,
            dataset.task_id, local_epoch, checkpoint_dir,
        )
        if val:
            val_loss = _eval_loss(state, x_val, t_val, spec.batch_size)
        else:
            val_loss = train_loss
        if not np.isfinite(val_loss):
            _abort_non_finite(state, val_loss, dataset.task_id, local_epoch,
                              checkpoint_dir)
        records.append(EpochRecord(local_epoch, train_loss, val_loss))
        if stopper.update(local_epoch, val_loss):
            best = _snapshot(state)
        if stopper.should_stop:
            break
    _restore(state, best)
    log = TaskLog(dataset.task_id, records, stopper.best_epoch, float(stopper.best))
    return state, log


def replay_train(state, buffer: ReplayBuffer, spec: TrainSpec, stats_by_task, *,
                 opt: OptimizerState | None = None,
                 clock: EpochClock | None = None,
                 seed_tag: int = 0,
                 checkpoint_dir=None):
    """Retrain on the buffer for ``n_replay`` epochs; each item is
    normalized with its source task's stats.  An empty buffer or zero
    replay epochs is a bit-identical no-op.

    Returns ``(state, per-epoch mean losses)``.
    """
    if len(buffer) == 0 or spec.n_replay == 0:
        return state, []
    items = buffer.items
    for _, _, task_id in items:
        if task_id not in stats_by_task:
            raise ConfigError(f"no normalization stats for buffered task {task_id}")
    _check_grid(state, items[0][0].values.shape)
    opt = opt if opt is not None else _make_optimizer(spec)
    clock = clock if clock is not None else EpochClock()
    rng = np.random.default_rng((spec.seed, seed_tag, 2))

    x = _stack_inputs(state, items)
    targets = np.stack(
        [np.asarray(normalize(fld.values, stats_by_task[tid]), dtype=np.float32)
         for _, fld, tid in items]
    )
    losses = []
    for epoch in range(1, spec.n_replay + 1):
        opt.lr = cosine_warm_restart_lr(spec.schedule, clock.tick())
        losses.append(
            _train_epoch(state, x, targets, spec, opt, rng,
                         seed_tag, epoch, checkpoint_dir)
        )
    return state, losses


def _mean_test_ssim(state: ModelState, dataset: TaskDataset) -> float:
    """Mean SSIM between predictions and truth over the task's test split
    (or every sample when the dataset is too small to carry one)."""
    samples = dataset.test_samples or dataset.samples
    scores = []
    for mask, fld in samples:
        pred = predict_tl(state, np.asarray(mask.values, dtype=np.float64),
                          dataset.task_id, clip_db=fld.clip_db)
        scores.append(ssim(pred, np.asarray(fld.values, dtype=np.float64)))
    return float(np.mean(scores))


def save_trainer_state(opt: OptimizerState, clock: EpochClock, path) -> None:
    """Persist optimizer moments and the schedule clock so an interrupted
    sequence can continue bit-identically from its last stage checkpoint."""
    records = [
        TlfRecord("opt.step", KIND_TENSOR, _int_to_limbs(opt.step)),
        TlfRecord("clock.value", KIND_TENSOR, _int_to_limbs(clock.value)),
    ]
    records += [TlfRecord(f"opt.m.{k}", KIND_TENSOR, opt.m[k]) for k in sorted(opt.m)]
    records += [TlfRecord(f"opt.v.{k}", KIND_TENSOR, opt.v[k]) for k in sorted(opt.v)]
    write_tlf(path, records)


def load_trainer_state(path, spec: TrainSpec):
    """Inverse of :func:`save_trainer_state`; returns ``(opt, clock)``."""
    by_name = {rec.name: rec for rec in read_tlf(path)}
    for needed in ("opt.step", "clock.value"):
        if needed not in by_name:
            raise FormatError(f"{path}: trainer state is missing record '{needed}'")
    opt = _make_optimizer(spec)
    opt.step = _limbs_to_int(by_name["opt.step"].values)
    clock = EpochClock(value=_limbs_to_int(by_name["clock.value"].values))
    for name, rec in by_name.items():
        if name.startswith("opt.m."):
            opt.m[name[len("opt.m."):]] = rec.values.copy()
        elif name.startswith("opt.v."):
            opt.v[name[len("opt.v."):]] = rec.values.copy()
    if opt.m.keys() != opt.v.keys():
        raise FormatError(f"{path}: first/second moment records do not pair up")
    return opt, clock


def run_sequence(state, datasets, spec: TrainSpec, *, checkpoint_dir=None,
                 opt: OptimizerState | None = None,
                 clock: EpochClock | None = None,
                 start_stage: int = 1):
    """Train tasks in order with exemplar replay, evaluating every seen
    task after each stage.  Returns ``(state, TrainingLog)``; on abort the
    partial log is flushed to ``checkpoint_dir`` if one was given.

    To resume, pass the loaded model state, the trainer state from
    :func:`load_trainer_state`, and the first stage still to run; skipped
    stages reconstruct their exemplar sets from the seeds, so the buffer
    matches the uninterrupted run exactly.
    """
    datasets = list(datasets)
    if not datasets:
        raise ConfigError("run_sequence needs at least one task dataset")
    ids = [ds.task_id for ds in datasets]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"duplicate task ids in sequence: {ids}")
    if not 1 <= start_stage <= len(datasets) + 1:
        raise ConfigError(f"start stage {start_stage} outside 1..{len(datasets) + 1}")
    if checkpoint_dir is not None:
        checkpoint_dir = Path(checkpoint_dir)
        checkpoint_dir.mkdir(parents=True, exist_ok=True)

    opt = opt if opt is not None else _make_optimizer(spec)
    clock = clock if clock is not None else EpochClock()
    log = TrainingLog()
    stats_by_task: dict[int, tuple[float, float]] = {}
    sets: list[tuple] = []
    prev: TaskDataset | None = None
    try:
        for stage, ds in enumerate(datasets, start=1):
            stats_by_task[ds.task_id] = ds.norm_stats
            if prev is not None:
                sets.append(
                    construct_exemplar_set(
                        prev, spec.exemplars_per_task,
                        seed=(spec.seed, prev.task_id, 3),
                    )
                )
            if stage < start_stage:
                prev = ds
                continue
            if spec.reset_optimizer:
                opt.reset_moments()
                clock = EpochClock()
            state.set_norm_stats(ds.task_id, *ds.norm_stats)
            state, task_log = train_task(
                state, ds, spec, opt=opt, clock=clock, checkpoint_dir=checkpoint_dir
            )
            buffer = construct_replay_buffer(sets)
            state, task_log.replay_losses = replay_train(
                state, buffer, spec, stats_by_task,
                opt=opt, clock=clock, seed_tag=ds.task_id,
                checkpoint_dir=checkpoint_dir,
            )
            log.task_logs.append(task_log)
            log.stage_tasks.append(ds.task_id)
            for seen in datasets[:stage]:
                log.eval_matrix[(stage, seen.task_id)] = _mean_test_ssim(state, seen)
            if checkpoint_dir is not None:
                stem = f"stage{stage:02d}-task{ds.task_id}"
                save_checkpoint(state, checkpoint_dir / f"{stem}.tlf")
                save_trainer_state(opt, clock, checkpoint_dir / f"{stem}-opt.tlf")
            prev = ds
    except OceanTlError:
        if checkpoint_dir is not None:
            log.to_csv(checkpoint_dir / "losses-partial.csv")
            log.matrix_to_json(checkpoint_dir / "eval-matrix-partial.json")
        raise
    return state, log


def forgetting_report(log: TrainingLog) -> dict[int, float]:
    """Per task: best SSIM ever observed minus the final-stage SSIM."""
    if not log.eval_matrix:
        raise ConfigError("training log has an empty evaluation matrix")
    final_stage = max(stage for stage, _ in log.eval_matrix)
    report = {}
    for task_id in sorted({t for s, t in log.eval_matrix if s == final_stage}):
        scores = [v for (_, t), v in log.eval_matrix.items() if t == task_id]
        report[task_id] = float(max(scores) - log.eval_matrix[(final_stage, task_id)])
    return report

"""Sequential trainer: early stopping, exemplar replay, reproducibility.

Synthetic tasks live on a 16x16 grid (just above the SSIM window size) so
full multi-task sequences run in seconds.  Task 1 maps flat-bottom masks to
a rising dB ramp; task 2 maps wedge masks to a falling ramp, so training
task 2 alone degrades task 1 and replay has something real to preserve.
"""

import math

import numpy as np
import pytest

from oceantl.errors import ConfigError, NumericsError, ShapeError
from oceantl.fields import GridSpec, MaskGrid, TLField
from oceantl.model import ModelConfig, build_model, forward, mse_loss, pad_input
from oceantl.nn import LrSchedule, OptimizerState
from oceantl.scenarios import make_task_dataset, normalize
from oceantl.training import (
    EarlyStopper,
    EpochClock,
    ReplayBuffer,
    TrainSpec,
    TrainingLog,
    construct_exemplar_set,
    construct_replay_buffer,
    forgetting_report,
    replay_train,
    run_sequence,
    train_task,
)

N = 16
CLIP = 200.0


def make_grid() -> GridSpec:
    return GridSpec(n_range=N, n_depth=N, range_extent_m=1500.0, depth_extent_m=150.0)


def make_sample(grid, floor_index, field_fn):
    """floor_index: per-range-column first sub-bottom depth index."""
    mask = np.zeros((N, N), dtype=np.uint8)
    for i in range(N):
        mask[i, floor_index[i]:] = 1
    i_idx, j_idx = np.meshgrid(np.arange(N), np.arange(N), indexing="ij")
    fld = field_fn(i_idx.astype(np.float64), j_idx.astype(np.float64))
    fld = np.minimum(fld, CLIP)
    fld[mask == 1] = CLIP
    return (MaskGrid(grid=grid, values=mask),
            TLField(grid=grid, values=fld, clip_db=CLIP))


def flat_task(task_id=1, n_samples=8, seed=11):
    """Flat bottoms at varying depth; TL rises with range and depth."""
    grid = make_grid()
    samples = []
    for s in range(n_samples):
        j0 = 10 + (s % 4)
        floor = np.full(N, j0, dtype=int)
        samples.append(make_sample(
            grid, floor, lambda i, j: 55.0 + 4.0 * i + 0.8 * j + 1.5 * (j0 - 10)))
    return make_task_dataset(task_id, samples, seed=seed)


def wedge_task(task_id=2, n_samples=8, seed=12):
    """Bottoms shoaling with range; TL falls with range and depth."""
    grid = make_grid()
    samples = []
    for s in range(n_samples):
        start = 12 + (s % 3)
        floor = np.rint(start - (start - 6) * np.arange(N) / (N - 1)).astype(int)
        samples.append(make_sample(
            grid, floor, lambda i, j: 150.0 - 4.0 * i - 0.8 * j - 1.5 * (start - 12)))
    return make_task_dataset(task_id, samples, seed=seed)


def tiny_model(seed=0):
    cfg = ModelConfig(input_shape=(N, N), encoder_channels=(8, 8),
                      latent_dim=8, pad_to_multiple=4)
    return build_model(cfg, seed=seed)


def quick_spec(**overrides):
    base = dict(n_epochs=4, patience=100, batch_size=4, n_replay=2,
                exemplars_per_task=2, seed=7,
                schedule=LrSchedule(lr_max=3e-3, lr_min=1e-5, t0=40, t_mult=2))
    base.update(overrides)
    return TrainSpec(**base)


def flat_params(state) -> np.ndarray:
    return np.concatenate([state.params[k].ravel() for k in sorted(state.params)])


# ---------------------------------------------------------------------------
# spec and stopper semantics


def test_train_spec_validation():
    quick_spec(n_replay=0, exemplars_per_task=0)  # zeros are legal
    for bad in (dict(n_epochs=0), dict(patience=0), dict(batch_size=0),
                dict(n_replay=-1), dict(exemplars_per_task=-1),
                dict(weight_decay=-0.1)):
        with pytest.raises(ConfigError):
            quick_spec(**bad)


def test_early_stopper_counts_epochs_since_best():
    stopper = EarlyStopper(patience=2)
    seen = []
    for epoch, loss in enumerate([1.0, 0.9, 0.95, 0.96], start=1):
        seen.append(stopper.update(epoch, loss))
        if stopper.should_stop:
            break
    assert seen == [True, True, False, False]
    assert epoch == 4 and stopper.should_stop
    assert stopper.best_epoch == 2 and stopper.best == 0.9


def test_early_stopper_requires_strict_improvement():
    stopper = EarlyStopper(patience=1)
    assert stopper.update(1, 0.5)
    assert not stopper.update(2, 0.5)
    assert stopper.should_stop


# ---------------------------------------------------------------------------
# single-task training


def test_train_task_reduces_loss_single_sample():
    state = tiny_model()
    ds = make_task_dataset(1, flat_task().samples[:1])  # all-train, no val split
    spec = quick_spec(n_epochs=30)
    state, log = train_task(state, ds, spec)
    assert len(log.epochs) == 30
    # no validation split: the training loss is monitored in its place
    assert all(r.val_loss == r.train_loss for r in log.epochs)
    assert log.epochs[-1].train_loss < 0.5 * log.epochs[0].train_loss
    assert log.best_val_loss <= log.epochs[0].train_loss


def test_train_task_returns_best_validation_weights():
    state = tiny_model()
    ds = flat_task()
    spec = quick_spec(n_epochs=25)
    state, log = train_task(state, ds, spec)
    assert 1 <= log.best_epoch <= 25
    assert log.best_val_loss == min(r.val_loss for r in log.epochs)
    # recompute the validation loss of the returned weights: it must equal
    # the best logged value, not the last epoch's
    val = ds.val_samples
    x = pad_input(np.stack([m.values.astype(np.float32) for m, _ in val]),
                  state.config.pad_to_multiple)
    t = np.stack([normalize(f.values, ds.norm_stats) for _, f in val]
                 ).astype(np.float32)
    loss = mse_loss(forward(state, x, train=False), t)[0]
    assert math.isclose(loss, log.best_val_loss, rel_tol=1e-9)


def test_train_task_rejects_mismatched_grid():
    state = tiny_model()
    grid = GridSpec(n_range=12, n_depth=12, range_extent_m=1e3, depth_extent_m=1e2)
    mask = MaskGrid(grid=grid, values=np.zeros((12, 12), dtype=np.uint8))
    fld = TLField(grid=grid, values=np.linspace(0, 1, 144).reshape(12, 12))
    ds = make_task_dataset(1, [(mask, fld)])
    with pytest.raises(ShapeError):
        train_task(state, ds, quick_spec())


def test_train_task_identical_seeds_identical_results():
    runs = []
    for _ in range(2):
        state, log = train_task(tiny_model(seed=3), flat_task(), quick_spec())
        runs.append((flat_params(state), [(r.train_loss, r.val_loss)
                                          for r in log.epochs]))
    assert np.array_equal(runs[0][0], runs[1][0])
    assert runs[0][1] == runs[1][1]


def test_train_task_aborts_on_non_finite_loss(tmp_path):
    state = tiny_model()
    state.params["head.b"][:] = np.nan
    with pytest.raises(NumericsError, match="task 1 epoch 1"):
        train_task(state, flat_task(), quick_spec(), checkpoint_dir=tmp_path)
    assert (tmp_path / "diagnostic-task1-epoch1.tlf").exists()


# ---------------------------------------------------------------------------
# exemplar sets and replay buffer


def test_exemplar_set_samples_from_train_split():
    ds = flat_task()
    picks = construct_exemplar_set(ds, 4, seed=9)
    assert len(picks) == 4
    train = ds.train_samples
    for mask, fld, task_id in picks:
        assert task_id == ds.task_id
        assert any(mask is m and fld is f for m, f in train)
    # without replacement: all distinct items
    assert len({id(mask) for mask, _, _ in picks}) == 4


def test_exemplar_set_edge_counts():
    ds = flat_task()
    assert construct_exemplar_set(ds, 0) == ()
    assert len(construct_exemplar_set(ds, 999)) == len(ds.train_samples)
    with pytest.raises(ConfigError):
        construct_exemplar_set(ds, -1)


def test_exemplar_set_deterministic():
    ds = flat_task()
    a = construct_exemplar_set(ds, 3, seed=(5, 1, 2))
    b = construct_exemplar_set(ds, 3, seed=(5, 1, 2))
    assert all(x is y for ga, gb in zip(a, b) for x, y in zip(ga[:2], gb[:2]))


def test_replay_buffer_flattens_in_stage_order():
    d1, d2 = flat_task(1), wedge_task(2)
    s1 = construct_exemplar_set(d1, 2, seed=1)
    s2 = construct_exemplar_set(d2, 3, seed=2)
    buf = construct_replay_buffer([s1, s2])
    assert len(buf) == 5
    assert buf.items == s1 + s2
    assert buf.task_ids == (1, 2)
    assert len(ReplayBuffer()) == 0


def test_replay_train_empty_buffer_is_a_no_op():
    state = tiny_model()
    before = flat_params(state)
    opt = OptimizerState(lr=1e-3)
    clock = EpochClock(value=17)
    out, losses = replay_train(state, ReplayBuffer(), quick_spec(), {},
                               opt=opt, clock=clock)
    assert out is state and losses == []
    assert np.array_equal(flat_params(state), before)
    assert opt.step == 0 and clock.value == 17


def test_replay_train_zero_epochs_is_a_no_op():
    state = tiny_model()
    ds = flat_task()
    buf = construct_replay_buffer([construct_exemplar_set(ds, 2, seed=1)])
    before = flat_params(state)
    _, losses = replay_train(state, buf, quick_spec(n_replay=0),
                             {1: ds.norm_stats})
    assert losses == [] and np.array_equal(flat_params(state), before)


def test_replay_train_requires_stats_for_every_buffered_task():
    state = tiny_model()
    buf = construct_replay_buffer([construct_exemplar_set(flat_task(), 2, seed=1)])
    with pytest.raises(ConfigError, match="task 1"):
        replay_train(state, buf, quick_spec(), {2: (0.0, 1.0)})


def test_replay_train_reduces_buffer_loss():
    state = tiny_model()
    ds = flat_task()
    buf = construct_replay_buffer([construct_exemplar_set(ds, 4, seed=1)])
    _, losses = replay_train(state, buf, quick_spec(n_replay=25),
                             {1: ds.norm_stats})
    assert len(losses) == 25
    assert losses[-1] < 0.5 * losses[0]


# ---------------------------------------------------------------------------
# task sequences


def test_run_sequence_disabled_replay_matches_plain_sequential_training():
    datasets = [flat_task(1), wedge_task(2)]
    spec = quick_spec(exemplars_per_task=0)

    seq_state, log = run_sequence(tiny_model(seed=4), datasets, spec)

    manual = tiny_model(seed=4)
    opt = OptimizerState(lr=spec.schedule.lr_max, weight_decay=spec.weight_decay)
    clock = EpochClock()
    for ds in datasets:
        manual.set_norm_stats(ds.task_id, *ds.norm_stats)
        manual, _ = train_task(manual, ds, spec, opt=opt, clock=clock)

    assert np.array_equal(flat_params(seq_state), flat_params(manual))
    assert all(not t.replay_losses for t in log.task_logs)


def test_run_sequence_is_reproducible():
    datasets = [flat_task(1), wedge_task(2)]
    spec = quick_spec()
    s1, l1 = run_sequence(tiny_model(seed=8), datasets, spec)
    s2, l2 = run_sequence(tiny_model(seed=8), datasets, spec)
    assert np.array_equal(flat_params(s1), flat_params(s2))
    assert l1.eval_matrix == l2.eval_matrix


def test_run_sequence_eval_matrix_is_lower_triangular():
    datasets = [flat_task(1), wedge_task(2), flat_task(3, seed=21)]
    _, log = run_sequence(tiny_model(), datasets, quick_spec(n_epochs=2, n_replay=1))
    assert log.stage_tasks == [1, 2, 3]
    expect = {(s, t) for s in (1, 2, 3) for t in log.stage_tasks[:s]}
    assert set(log.eval_matrix) == expect
    assert all(np.isfinite(v) for v in log.eval_matrix.values())


def test_run_sequence_rejects_duplicate_task_ids():
    with pytest.raises(ConfigError, match="duplicate"):
        run_sequence(tiny_model(), [flat_task(1), wedge_task(1)], quick_spec())


def test_run_sequence_registers_norm_stats_and_checkpoints(tmp_path):
    datasets = [flat_task(1), wedge_task(2)]
    state, _ = run_sequence(tiny_model(), datasets, quick_spec(n_epochs=2),
                            checkpoint_dir=tmp_path)
    assert state.norm_stats.keys() >= {1, 2}
    assert (tmp_path / "stage01-task1.tlf").exists()
    assert (tmp_path / "stage02-task2.tlf").exists()


def test_run_sequence_flushes_partial_logs_on_abort(tmp_path):
    state = tiny_model()
    state.params["head.b"][:] = np.nan
    with pytest.raises(NumericsError):
        run_sequence(state, [flat_task(1)], quick_spec(), checkpoint_dir=tmp_path)
    csv = (tmp_path / "losses-partial.csv").read_text().splitlines()
    assert csv[0] == "stage,task,epoch,split,loss"
    assert (tmp_path / "eval-matrix-partial.json").exists()


def test_replay_mitigates_forgetting():
    """The pivotal pairing: identical two-task runs except for replay."""
    datasets = [flat_task(1), wedge_task(2)]

    def run(m, n_replay):
        spec = quick_spec(n_epochs=60, n_replay=n_replay, exemplars_per_task=m,
                          seed=3)
        return run_sequence(tiny_model(seed=1), datasets, spec)[1]

    plain = run(m=0, n_replay=0)
    replay = run(m=4, n_replay=30)

    first_task = datasets[0].task_id
    # observed gap is ~0.6 SSIM across seeds; 0.3 leaves generous slack
    assert (replay.eval_matrix[(2, first_task)]
            > plain.eval_matrix[(2, first_task)] + 0.3)
    fr_plain = forgetting_report(plain)
    fr_replay = forgetting_report(replay)
    assert fr_replay[first_task] < fr_plain[first_task] - 0.3


# ---------------------------------------------------------------------------
# reporting


def test_forgetting_report_hand_matrix():
    log = TrainingLog(stage_tasks=[1, 2])
    log.eval_matrix = {(1, 1): 0.9, (2, 1): 0.7, (2, 2): 0.95}
    report = forgetting_report(log)
    assert math.isclose(report[1], 0.2)
    assert report[2] == 0.0


def test_forgetting_report_single_task_is_zero():
    log = TrainingLog(stage_tasks=[5])
    log.eval_matrix = {(1, 5): 0.83}
    assert forgetting_report(log) == {5: 0.0}


def test_training_log_csv_layout(tmp_path):
    _, log = run_sequence(tiny_model(), [flat_task(1), wedge_task(2)],
                          quick_spec(n_epochs=3, n_replay=2))
    path = tmp_path / "losses.csv"
    log.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "stage,task,epoch,split,loss"
    n_epoch_rows = sum(2 * len(t.epochs) for t in log.task_logs)
    n_replay_rows = sum(len(t.replay_losses) for t in log.task_logs)
    assert len(lines) == 1 + n_epoch_rows + n_replay_rows
    assert all(len(line.split(",")) == 5 for line in lines[1:])

    mat = tmp_path / "matrix.json"
    log.matrix_to_json(mat)
    assert '"stage_tasks"' in mat.read_text()

"""Procedural bathymetry families and task dataset assembly.

Seven task families share a 100 km by 3000 m domain with a flat abyssal
floor: three seamount groups (varying height, varying base width, both
free), three wedge kinds (deepening, shoaling, one interior turning knot),
and a smooth broad-ridge family sampled into piecewise-linear knots.  Each
family has a parameter sampler and a deterministic builder; the dataset
assembler pairs every generated profile with a rasterized input mask and an
oracle-computed TL field, splits per task, and computes the per-task
normalization constants from the training split only.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .bathymetry import BathymetryProfile, rasterize_mask
from .errors import ConfigError, OceanTlError
from .fields import GridSpec, TLField

__all__ = [
    "DatasetConfig",
    "ScenarioSpec",
    "TaskDataset",
    "build_profile",
    "build_task_datasets",
    "denormalize",
    "draw_task_scenarios",
    "gen_dickins_like",
    "gen_seamount_base",
    "gen_seamount_general",
    "gen_seamount_height",
    "gen_wedge",
    "make_task_dataset",
    "normalize",
]

FLOOR_DEPTH_M = 3000.0
RANGE_EXTENT_M = 100_000.0

FAMILIES = (
    "seamount_height",
    "seamount_base",
    "seamount_general",
    "wedge_down",
    "wedge_up",
    "wedge_vee",
    "dickins_like",
    "external",
)

TASK_FAMILY = {
    1: "seamount_height",
    2: "seamount_base",
    3: "seamount_general",
    4: "wedge_down",
    5: "wedge_up",
    6: "wedge_vee",
    7: "dickins_like",
}

DEFAULT_COUNTS = {1: 75, 2: 35, 3: 30, 4: 20, 5: 20, 6: 20, 7: 10}

_WEDGE_DEFAULTS = {
    "wedge_down": {"start_depth_m": 2500.0, "end_depth_m": 1500.0},
    "wedge_up": {"start_depth_m": 1500.0, "end_depth_m": 2500.0},
    "wedge_vee": {
        "start_depth_m": 2180.0,
        "turn_depth_m": 2380.0,
        "turn_range_m": 40_000.0,
        "end_depth_m": 2100.0,
    },
}


@dataclass(frozen=True)
class ScenarioSpec:
    """One generated scenario: family, drawn parameters, and the seed that
    produced them.  Serialized into manifests and failure diagnostics."""

    family: str
    params: dict
    seed: int = 0

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown scenario family '{self.family}'")

    def to_json_dict(self) -> dict:
        return {
            "family": self.family,
            "seed": int(self.seed),
            "params": {k: float(v) for k, v in sorted(self.params.items())},
        }


def _clip_profile(ranges_m, depths_m, range_extent_m: float = RANGE_EXTENT_M):
    """Trim knots to [0, extent], interpolating depths at the boundaries.

    np.interp extends the end depths as constants, so knot lists that only
    describe a feature in the interior pick up flat boundary segments.
    """
    r = np.asarray(ranges_m, dtype=np.float64)
    d = np.asarray(depths_m, dtype=np.float64)
    inside = (r > 0.0) & (r < range_extent_m)
    knots_r = np.concatenate(([0.0], r[inside], [range_extent_m]))
    knots_d = np.concatenate(
        ([np.interp(0.0, r, d)], d[inside], [np.interp(range_extent_m, r, d)])
    )
    return BathymetryProfile(knots_r, knots_d)


def _check_depth(name: str, value: float) -> float:
    if not 0.0 < value <= FLOOR_DEPTH_M:
        raise ConfigError(f"{name} {value} m lies outside (0, {FLOOR_DEPTH_M}] m")
    return float(value)


# Parameter samplers, one rng draw sequence per sample.

def _draw_seamount_height(rng) -> dict:
    return {"apex_depth_m": float(rng.uniform(500.0, 1600.0))}


def _draw_seamount_base(rng) -> dict:
    return {
        "apex_depth_m": float(rng.choice([800.0, 1200.0])),
        "base_width_m": float(rng.uniform(5_000.0, 40_000.0)),
        "center_range_m": 20_000.0,
    }


def _draw_seamount_general(rng) -> dict:
    return {
        "apex_depth_m": float(rng.uniform(500.0, 1600.0)),
        "base_width_m": float(rng.uniform(5_000.0, 40_000.0)),
        "apex_range_m": float(rng.uniform(15_000.0, 60_000.0)),
    }


def _draw_wedge_down(rng) -> dict:
    return {
        "start_depth_m": float(rng.uniform(2200.0, 2900.0)),
        "end_depth_m": float(rng.uniform(1200.0, 2000.0)),
    }


def _draw_wedge_up(rng) -> dict:
    return {
        "start_depth_m": float(rng.uniform(1200.0, 2000.0)),
        "end_depth_m": float(rng.uniform(2200.0, 2900.0)),
    }


def _draw_wedge_vee(rng) -> dict:
    return {
        "start_depth_m": float(rng.uniform(2000.0, 2400.0)),
        "turn_depth_m": float(rng.uniform(2500.0, 2900.0)),
        "turn_range_m": float(rng.uniform(30_000.0, 60_000.0)),
        "end_depth_m": float(rng.uniform(1900.0, 2200.0)),
    }


def _draw_dickins_like(rng) -> dict:
    return {
        "apex_depth_m": float(rng.uniform(600.0, 1200.0)),
        "half_width_m": float(rng.uniform(8_000.0, 15_000.0)),
        "center_range_m": float(rng.uniform(30_000.0, 70_000.0)),
    }


# Deterministic builders from a complete parameter map.

def _build_seamount_height(p: dict) -> BathymetryProfile:
    apex = _check_depth("apex depth", p["apex_depth_m"])
    return _clip_profile(
        [10_000.0, 20_000.0, 30_000.0], [FLOOR_DEPTH_M, apex, FLOOR_DEPTH_M]
    )


def _build_seamount_base(p: dict) -> BathymetryProfile:
    apex = _check_depth("apex depth", p["apex_depth_m"])
    half = 0.5 * float(p["base_width_m"])
    center = float(p.get("center_range_m", 20_000.0))
    if half <= 0.0:
        raise ConfigError(f"base width {p['base_width_m']} m must be positive")
    return _clip_profile(
        [center - half, center, center + half], [FLOOR_DEPTH_M, apex, FLOOR_DEPTH_M]
    )


def _build_seamount_general(p: dict) -> BathymetryProfile:
    return _build_seamount_base(
        {
            "apex_depth_m": p["apex_depth_m"],
            "base_width_m": p["base_width_m"],
            "center_range_m": p["apex_range_m"],
        }
    )


def _build_wedge(kind: str, p: dict) -> BathymetryProfile:
    start = _check_depth("start depth", p["start_depth_m"])
    end = _check_depth("end depth", p["end_depth_m"])
    if kind == "wedge_down" and start < end:
        raise ConfigError("a shoaling wedge needs start depth >= end depth")
    if kind == "wedge_up" and start > end:
        raise ConfigError("a deepening wedge needs start depth <= end depth")
    if kind == "wedge_vee":
        turn = _check_depth("turn depth", p["turn_depth_m"])
        turn_r = float(p["turn_range_m"])
        if not 0.0 < turn_r < RANGE_EXTENT_M:
            raise ConfigError(f"turning knot range {turn_r} m outside the domain")
        return BathymetryProfile(
            [0.0, turn_r, RANGE_EXTENT_M], [start, turn, end]
        )
    return BathymetryProfile([0.0, RANGE_EXTENT_M], [start, end])


def _build_dickins_like(p: dict) -> BathymetryProfile:
    apex = _check_depth("apex depth", p["apex_depth_m"])
    center = float(p["center_range_m"])
    # half width at half the bump height -> Gaussian sigma
    sigma = float(p["half_width_m"]) / math.sqrt(2.0 * math.log(2.0))
    if sigma <= 0.0:
        raise ConfigError(f"half width {p['half_width_m']} m must be positive")
    r = center + sigma * np.linspace(-4.0, 4.0, 25)
    d = FLOOR_DEPTH_M - (FLOOR_DEPTH_M - apex) * np.exp(
        -0.5 * ((r - center) / sigma) ** 2
    )
    return _clip_profile(r, d)


_DRAWERS = {
    "seamount_height": _draw_seamount_height,
    "seamount_base": _draw_seamount_base,
    "seamount_general": _draw_seamount_general,
    "wedge_down": _draw_wedge_down,
    "wedge_up": _draw_wedge_up,
    "wedge_vee": _draw_wedge_vee,
    "dickins_like": _draw_dickins_like,
}

_BUILDERS = {
    "seamount_height": _build_seamount_height,
    "seamount_base": _build_seamount_base,
    "seamount_general": _build_seamount_general,
    "wedge_down": lambda p: _build_wedge("wedge_down", p),
    "wedge_up": lambda p: _build_wedge("wedge_up", p),
    "wedge_vee": lambda p: _build_wedge("wedge_vee", p),
    "dickins_like": _build_dickins_like,
}


def build_profile(spec: ScenarioSpec) -> BathymetryProfile:
    """Rebuild the bathymetry a scenario describes (deterministic: the
    drawn parameters are all the randomness there is)."""
    if spec.family not in _BUILDERS:
        raise ConfigError(f"scenario family '{spec.family}' has no builder")
    return _BUILDERS[spec.family](dict(spec.params))


def draw_task_scenarios(config: "DatasetConfig") -> dict[int, list[ScenarioSpec]]:
    """Draw every configured task's scenario parameters up front.

    Stream per task is ``default_rng((seed, task_id))``, so adding or
    removing tasks never shifts another task's draws.
    """
    plan: dict[int, list[ScenarioSpec]] = {}
    for task_id in config.tasks:
        family = TASK_FAMILY[task_id]
        rng = np.random.default_rng((config.seed, task_id))
        plan[task_id] = [
            ScenarioSpec(family, _DRAWERS[family](rng), seed=config.seed)
            for _ in range(config.count_for(task_id))
        ]
    return plan


def _gen_family(family: str, n: int, seed) -> list[BathymetryProfile]:
    if n < 1:
        raise ConfigError(f"sample count must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    return [_BUILDERS[family](_DRAWERS[family](rng)) for _ in range(n)]


def gen_seamount_height(n: int = 75, seed=0) -> list[BathymetryProfile]:
    """Triangular seamounts, 10-30 km base, apex at 20 km, apex depth
    uniform in [500, 1600] m over a flat 3000 m floor."""
    return _gen_family("seamount_height", n, seed)


def gen_seamount_base(n: int = 35, seed=0) -> list[BathymetryProfile]:
    """Seamounts with apex depth 800 m or 1200 m and base width uniform in
    [5, 40] km, centered at 20 km."""
    return _gen_family("seamount_base", n, seed)


def gen_seamount_general(n: int = 30, seed=0) -> list[BathymetryProfile]:
    """Seamounts with apex depth, base width, and apex range all drawn."""
    return _gen_family("seamount_general", n, seed)


def gen_dickins_like(n: int = 10, seed=0) -> list[BathymetryProfile]:
    """Smooth broad ridges: a Gaussian bump over the abyssal floor, sampled
    into at most 32 piecewise-linear knots."""
    return _gen_family("dickins_like", n, seed)


def gen_wedge(kind: str, params: dict | None = None, seed=None) -> BathymetryProfile:
    """Build one wedge profile.

    Missing parameters come from the family defaults, or are drawn from the
    family distribution when ``seed`` is given.
    """
    if kind not in _WEDGE_DEFAULTS:
        raise ConfigError(f"unknown wedge kind '{kind}'")
    if seed is None:
        full = dict(_WEDGE_DEFAULTS[kind])
    else:
        full = _DRAWERS[kind](np.random.default_rng(seed))
    full.update(params or {})
    return _build_wedge(kind, full)


def normalize(field, stats) -> np.ndarray:
    """Map a TL field (or raw grid) to zero mean and unit spread."""
    mean, std = float(stats[0]), float(stats[1])
    if std <= 0.0:
        raise ConfigError(f"normalization std must be positive, got {std}")
    values = np.asarray(getattr(field, "values", field), dtype=np.float64)
    return (values - mean) / std


def denormalize(values, stats) -> np.ndarray:
    """Exact inverse of :func:`normalize`."""
    mean, std = float(stats[0]), float(stats[1])
    if std <= 0.0:
        raise ConfigError(f"normalization std must be positive, got {std}")
    return np.asarray(values, dtype=np.float64) * std + mean


@dataclass
class TaskDataset:
    """Samples for one task plus its split layout and normalization stats."""

    task_id: int
    samples: list
    split: tuple[float, float, float]
    train_indices: tuple[int, ...]
    val_indices: tuple[int, ...]
    test_indices: tuple[int, ...]
    norm_stats: tuple[float, float]

    def _take(self, indices) -> list:
        return [self.samples[i] for i in indices]

    @property
    def train_samples(self) -> list:
        return self._take(self.train_indices)

    @property
    def val_samples(self) -> list:
        return self._take(self.val_indices)

    @property
    def test_samples(self) -> list:
        return self._take(self.test_indices)


def make_task_dataset(task_id: int, samples, split=(0.8, 0.1, 0.1), seed=0) -> TaskDataset:
    """Split samples disjointly (seeded permutation) and compute norm stats
    from the training split only.  Datasets smaller than 3 samples put
    everything in the training split."""
    n = len(samples)
    if n < 1:
        raise ConfigError(f"task {task_id} has no samples")
    fractions = tuple(float(f) for f in split)
    if len(fractions) != 3 or min(fractions) < 0 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions {split} must be non-negative and sum to 1")
    perm = np.random.default_rng(seed).permutation(n)
    n_val = max(1, int(n * fractions[1])) if n >= 3 and fractions[1] > 0 else 0
    n_test = max(1, int(n * fractions[2])) if n >= 3 and fractions[2] > 0 else 0
    n_train = n - n_val - n_test
    train = tuple(sorted(int(i) for i in perm[:n_train]))
    val = tuple(sorted(int(i) for i in perm[n_train : n_train + n_val]))
    test = tuple(sorted(int(i) for i in perm[n_train + n_val :]))

    train_values = np.stack(
        [np.asarray(samples[i][1].values, dtype=np.float64) for i in train]
    )
    mean = float(train_values.mean())
    std = float(train_values.std())
    if std <= 0.0:
        raise ConfigError(f"task {task_id} training split is constant (std 0)")
    return TaskDataset(
        task_id=int(task_id),
        samples=list(samples),
        split=fractions,
        train_indices=train,
        val_indices=val,
        test_indices=test,
        norm_stats=(mean, std),
    )


@dataclass(frozen=True)
class DatasetConfig:
    """What to generate: receiver grid, per-task sample counts, split."""

    grid: GridSpec
    counts: dict = field(default_factory=dict)
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0
    tasks: tuple[int, ...] = (1, 2, 3, 4, 5, 6, 7)

    def __post_init__(self) -> None:
        object.__setattr__(self, "tasks", tuple(int(t) for t in self.tasks))
        if not self.tasks or any(t not in TASK_FAMILY for t in self.tasks):
            raise ConfigError(f"tasks {self.tasks} must be a subset of 1..7")
        if len(set(self.tasks)) != len(self.tasks):
            raise ConfigError(f"tasks {self.tasks} contain duplicates")
        for t, n in self.counts.items():
            if int(t) not in TASK_FAMILY or int(n) < 1:
                raise ConfigError(f"bad sample count {n} for task {t}")

    def count_for(self, task_id: int) -> int:
        return int(self.counts.get(task_id, DEFAULT_COUNTS[task_id]))


def build_task_datasets(config: DatasetConfig, oracle) -> list[TaskDataset]:
    """Generate every configured task: draw profiles, rasterize masks, pair
    them with oracle TL fields, and split.

    ``oracle`` maps a BathymetryProfile to a TLField on ``config.grid``.
    Failures abort with the offending scenario serialized for replay.
    """
    datasets = []
    plan = draw_task_scenarios(config)
    for task_id in config.tasks:
        samples = []
        for index, spec in enumerate(plan[task_id]):
            profile = build_profile(spec)
            mask = rasterize_mask(profile, config.grid)
            try:
                fld = oracle(profile)
            except OceanTlError as exc:
                raise type(exc)(
                    f"oracle failed on task {task_id} sample {index}: {exc} "
                    f"[scenario {json.dumps(spec.to_json_dict())}]"
                ) from exc
            if not isinstance(fld, TLField) or fld.grid != config.grid:
                raise ConfigError(
                    f"oracle returned a field off the configured grid for task {task_id}"
                )
            samples.append((mask, fld))
        datasets.append(
            make_task_dataset(
                task_id, samples, config.split, seed=(config.seed, task_id, 101)
            )
        )
    return datasets

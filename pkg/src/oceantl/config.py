"""Whole-run configuration: one JSON document drives every command.

The document splits into fixed sections (grid, environment, source, solver,
dataset, model, train, eval, output_dir); every section validates itself on
construction and unknown keys are rejected anywhere, so a typo fails fast
instead of silently running with a default.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .fields import GridSpec
from .model import ModelConfig
from .nn import LrSchedule
from .raytrace import SourceSpec
from .scenarios import DatasetConfig
from .soundspeed import LayeredMedium, SoundSpeedProfile, discretize_profile
from .tlsolver import SolverSettings
from .training import TrainSpec

__all__ = [
    "EnvironmentSpec",
    "EvalSpec",
    "PipelineConfig",
    "default_config_dict",
    "load_config",
]

_PROFILES = ("munk", "constant")


@dataclass(frozen=True)
class EnvironmentSpec:
    """Water-column description: profile family and layer discretization."""

    profile: str = "munk"
    n_layers: int = 24
    speed_mps: float = 1500.0

    def __post_init__(self) -> None:
        if self.profile not in _PROFILES:
            raise ConfigError(
                f"unknown sound speed profile '{self.profile}', expected one of "
                f"{_PROFILES}"
            )
        if self.n_layers < 1:
            raise ConfigError("environment needs at least one layer")
        if self.speed_mps <= 0:
            raise ConfigError("sound speed must be positive")

    def build_medium(self, depth_extent_m: float) -> LayeredMedium:
        if self.profile == "constant":
            ssp = SoundSpeedProfile.constant(self.speed_mps)
        else:
            ssp = SoundSpeedProfile.munk(depth_extent_m)
        return discretize_profile(ssp, depth_extent_m, n_layers=self.n_layers)


@dataclass(frozen=True)
class EvalSpec:
    """Evaluation knobs: probe transect depths and speed-benchmark size."""

    probe_depths_m: tuple[float, ...] = (500.0, 1500.0)
    n_speed_fields: int = 10

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "probe_depths_m", tuple(float(p) for p in self.probe_depths_m)
        )
        if not self.probe_depths_m:
            raise ConfigError("need at least one probe depth")
        if self.n_speed_fields < 1:
            raise ConfigError("speed benchmark needs at least one field")


@dataclass(frozen=True)
class PipelineConfig:
    """Validated bundle of every sub-configuration a command may need."""

    grid: GridSpec
    environment: EnvironmentSpec = EnvironmentSpec()
    source: SourceSpec = SourceSpec()
    solver: SolverSettings = SolverSettings(coherent=False)
    dataset: DatasetConfig = None
    model: ModelConfig = None
    train: TrainSpec = TrainSpec(n_epochs=60, patience=15)
    eval: EvalSpec = EvalSpec()
    model_seed: int = 0
    output_dir: str = "runs/desk"

    def __post_init__(self) -> None:
        if self.dataset is None:
            object.__setattr__(self, "dataset", DatasetConfig(grid=self.grid))
        if self.model is None:
            object.__setattr__(
                self, "model", ModelConfig(input_shape=self.grid.shape)
            )
        if min(self.grid.n_range, self.grid.n_depth) < 16:
            raise ConfigError(
                f"grid {self.grid.shape} is too small: dims must be at least 16 "
                "so the encoder halvings keep every stage above one cell"
            )
        if self.dataset.grid != self.grid:
            raise ConfigError("dataset grid differs from the pipeline grid")
        if tuple(self.model.input_shape) != self.grid.shape:
            raise ConfigError(
                f"model input {self.model.input_shape} differs from the grid "
                f"{self.grid.shape}"
            )
        for probe in self.eval.probe_depths_m:
            if not 0.0 <= probe <= self.grid.depth_extent_m:
                raise ConfigError(
                    f"probe depth {probe} m outside the water column "
                    f"[0, {self.grid.depth_extent_m}]"
                )
        if not 0.0 < self.source.z_src_m < self.grid.depth_extent_m:
            raise ConfigError(
                f"source depth {self.source.z_src_m} m outside the water column"
            )

    @property
    def out_path(self) -> Path:
        return Path(self.output_dir)

    def build_medium(self) -> LayeredMedium:
        return self.environment.build_medium(self.grid.depth_extent_m)

    def to_dict(self) -> dict:
        """Canonical JSON-ready echo; ``from_dict`` of it reproduces self."""
        return {
            "grid": {
                "n_range": self.grid.n_range,
                "n_depth": self.grid.n_depth,
                "range_extent_m": self.grid.range_extent_m,
                "depth_extent_m": self.grid.depth_extent_m,
            },
            "environment": {
                "profile": self.environment.profile,
                "n_layers": self.environment.n_layers,
                "speed_mps": self.environment.speed_mps,
            },
            "source": {
                "frequency_hz": self.source.frequency_hz,
                "depth_m": self.source.z_src_m,
                "aperture_deg": self.source.aperture_deg,
                "n_rays": self.source.n_rays,
            },
            "solver": {
                "coherent": self.solver.coherent,
                "sigma0_m": self.solver.sigma0_m,
                "max_path_m": self.solver.max_path_m,
            },
            "dataset": {
                "tasks": list(self.dataset.tasks),
                "counts": {str(t): n for t, n in sorted(self.dataset.counts.items())},
                "split": list(self.dataset.split),
                "seed": self.dataset.seed,
            },
            "model": {
                "encoder_channels": list(self.model.encoder_channels),
                "latent_dim": self.model.latent_dim,
                "pad_to_multiple": self.model.pad_to_multiple,
                "leaky_slope": self.model.leaky_slope,
                "seed": self.model_seed,
            },
            "train": {
                "n_epochs": self.train.n_epochs,
                "patience": self.train.patience,
                "batch_size": self.train.batch_size,
                "n_replay": self.train.n_replay,
                "exemplars_per_task": self.train.exemplars_per_task,
                "seed": self.train.seed,
                "weight_decay": self.train.weight_decay,
                "reset_optimizer": self.train.reset_optimizer,
                "schedule": {
                    "lr_max": self.train.schedule.lr_max,
                    "lr_min": self.train.schedule.lr_min,
                    "t0": self.train.schedule.t0,
                    "t_mult": self.train.schedule.t_mult,
                },
            },
            "eval": {
                "probe_depths_m": list(self.eval.probe_depths_m),
                "n_speed_fields": self.eval.n_speed_fields,
            },
            "output_dir": self.output_dir,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        doc = dict(doc)
        _reject_unknown(doc, {
            "grid", "environment", "source", "solver", "dataset", "model",
            "train", "eval", "output_dir",
        }, "config")
        grid_doc = _section(doc, "grid", {
            "n_range", "n_depth", "range_extent_m", "depth_extent_m"})
        if "n_range" not in grid_doc or "n_depth" not in grid_doc:
            raise ConfigError("config grid section needs n_range and n_depth")
        grid = GridSpec(
            n_range=int(grid_doc["n_range"]),
            n_depth=int(grid_doc["n_depth"]),
            range_extent_m=float(grid_doc.get("range_extent_m", 100_000.0)),
            depth_extent_m=float(grid_doc.get("depth_extent_m", 3000.0)),
        )

        env_doc = _section(doc, "environment", {"profile", "n_layers", "speed_mps"})
        environment = EnvironmentSpec(
            profile=str(env_doc.get("profile", "munk")),
            n_layers=int(env_doc.get("n_layers", 24)),
            speed_mps=float(env_doc.get("speed_mps", 1500.0)),
        )

        src_doc = _section(doc, "source", {
            "frequency_hz", "depth_m", "aperture_deg", "n_rays"})
        source = SourceSpec(
            frequency_hz=float(src_doc.get("frequency_hz", 230.0)),
            z_src_m=float(src_doc.get("depth_m", 18.0)),
            aperture_deg=float(src_doc.get("aperture_deg", 160.0)),
            n_rays=int(src_doc.get("n_rays", 301)),
        )

        sol_doc = _section(doc, "solver", {"coherent", "sigma0_m", "max_path_m"})
        solver = SolverSettings(
            coherent=bool(sol_doc.get("coherent", False)),
            sigma0_m=_opt_float(sol_doc.get("sigma0_m")),
            max_path_m=_opt_float(sol_doc.get("max_path_m")),
        )

        ds_doc = _section(doc, "dataset", {"tasks", "counts", "split", "seed"})
        dataset = DatasetConfig(
            grid=grid,
            tasks=tuple(int(t) for t in ds_doc.get("tasks", (1, 2, 3, 4, 5, 6, 7))),
            counts={int(t): int(n) for t, n in ds_doc.get("counts", {}).items()},
            split=tuple(float(f) for f in ds_doc.get("split", (0.8, 0.1, 0.1))),
            seed=int(ds_doc.get("seed", 0)),
        )

        mdl_doc = _section(doc, "model", {
            "encoder_channels", "latent_dim", "pad_to_multiple", "leaky_slope",
            "seed"})
        model = ModelConfig(
            input_shape=grid.shape,
            encoder_channels=tuple(
                int(c) for c in mdl_doc.get("encoder_channels", (16, 32, 64, 128))
            ),
            latent_dim=int(mdl_doc.get("latent_dim", 128)),
            leaky_slope=float(mdl_doc.get("leaky_slope", 0.01)),
            pad_to_multiple=int(mdl_doc.get("pad_to_multiple", 16)),
        )

        tr_doc = _section(doc, "train", {
            "n_epochs", "patience", "batch_size", "n_replay",
            "exemplars_per_task", "seed", "weight_decay", "reset_optimizer",
            "schedule"})
        sch_doc = dict(tr_doc.get("schedule", {}))
        _reject_unknown(sch_doc, {"lr_max", "lr_min", "t0", "t_mult"},
                        "train.schedule")
        schedule = LrSchedule(
            lr_max=float(sch_doc.get("lr_max", 1e-3)),
            lr_min=float(sch_doc.get("lr_min", 1e-6)),
            t0=int(sch_doc.get("t0", 50)),
            t_mult=int(sch_doc.get("t_mult", 2)),
        )
        train = TrainSpec(
            n_epochs=int(tr_doc.get("n_epochs", 60)),
            patience=int(tr_doc.get("patience", 15)),
            batch_size=int(tr_doc.get("batch_size", 4)),
            n_replay=int(tr_doc.get("n_replay", 50)),
            exemplars_per_task=int(tr_doc.get("exemplars_per_task", 8)),
            seed=int(tr_doc.get("seed", 0)),
            weight_decay=float(tr_doc.get("weight_decay", 0.01)),
            schedule=schedule,
            reset_optimizer=bool(tr_doc.get("reset_optimizer", False)),
        )

        ev_doc = _section(doc, "eval", {"probe_depths_m", "n_speed_fields"})
        eval_spec = EvalSpec(
            probe_depths_m=tuple(ev_doc.get("probe_depths_m", (500.0, 1500.0))),
            n_speed_fields=int(ev_doc.get("n_speed_fields", 10)),
        )

        return cls(
            grid=grid,
            environment=environment,
            source=source,
            solver=solver,
            dataset=dataset,
            model=model,
            train=train,
            eval=eval_spec,
            model_seed=int(mdl_doc.get("seed", 0)),
            output_dir=str(doc.get("output_dir", "runs/desk")),
        )


def _reject_unknown(doc: dict, allowed: set, where: str) -> None:
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise ConfigError(f"unknown {where} keys: {', '.join(unknown)}")


def _section(doc: dict, name: str, allowed: set) -> dict:
    sec = doc.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"config section '{name}' must be an object")
    _reject_unknown(sec, allowed, name)
    return sec


def _opt_float(value):
    return None if value is None else float(value)


def default_config_dict(output_dir: str = "runs/desk") -> dict:
    """Desk-scale defaults: full seven-task families on the 176x256 grid."""
    cfg = PipelineConfig(
        grid=GridSpec(n_range=176, n_depth=256,
                      range_extent_m=100_000.0, depth_extent_m=3000.0),
        output_dir=output_dir,
    )
    return cfg.to_dict()


def load_config(path) -> PipelineConfig:
    """Parse and validate a JSON config file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path} must contain a JSON object")
    return PipelineConfig.from_dict(doc)

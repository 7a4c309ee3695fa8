"""Ray-based ocean transmission loss fields and continual surrogate training."""

from .bathymetry import BathymetryProfile, is_below_bottom, rasterize_mask
from .config import EnvironmentSpec, EvalSpec, PipelineConfig, load_config
from .errors import (
    ConfigError,
    FormatError,
    GeometryError,
    NumericsError,
    OceanTlError,
    RayTraceError,
    ShapeError,
)
from .fields import DEFAULT_CLIP_DB, GridSpec, MaskGrid, TLField, tl_from_pressure
from .imagesource import image_source_pressure, image_source_reference, waveguide_images
from .metrics import (
    ErrorReport,
    SsimConfig,
    Transect,
    error_summary,
    ssim,
    ssim_map,
    transect,
)
from .model import (
    ModelConfig,
    ModelState,
    build_model,
    forward,
    load_checkpoint,
    mse_loss,
    predict_tl,
    save_checkpoint,
)
from .pipeline import (
    evaluate_checkpoint,
    generate_dataset,
    load_dataset,
    predict_field,
    solve_field,
    train_model,
)
from .raytrace import RayPath, SourceSpec, trace_rays
from .render import render_pgm
from .scenarios import (
    DatasetConfig,
    ScenarioSpec,
    TaskDataset,
    build_profile,
    build_task_datasets,
    denormalize,
    draw_task_scenarios,
    gen_dickins_like,
    gen_seamount_base,
    gen_seamount_general,
    gen_seamount_height,
    gen_wedge,
    make_task_dataset,
    normalize,
)
from .soundspeed import (
    LayeredMedium,
    SoundSpeedProfile,
    discretize_profile,
    munk_speed,
)
from .tlf import TlfRecord, read_tlf, write_tlf
from .tlsolver import SolverSettings, compute_tl_field
from .training import (
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

__version__ = "0.1.0"

__all__ = [
    "BathymetryProfile",
    "ConfigError",
    "DEFAULT_CLIP_DB",
    "DatasetConfig",
    "EnvironmentSpec",
    "ErrorReport",
    "EvalSpec",
    "FormatError",
    "GeometryError",
    "GridSpec",
    "LayeredMedium",
    "MaskGrid",
    "ModelConfig",
    "ModelState",
    "NumericsError",
    "OceanTlError",
    "PipelineConfig",
    "RayPath",
    "RayTraceError",
    "ReplayBuffer",
    "ScenarioSpec",
    "ShapeError",
    "SoundSpeedProfile",
    "SolverSettings",
    "SourceSpec",
    "SsimConfig",
    "TLField",
    "TaskDataset",
    "TlfRecord",
    "TrainSpec",
    "TrainingLog",
    "Transect",
    "build_model",
    "build_profile",
    "build_task_datasets",
    "compute_tl_field",
    "construct_exemplar_set",
    "construct_replay_buffer",
    "denormalize",
    "discretize_profile",
    "draw_task_scenarios",
    "error_summary",
    "evaluate_checkpoint",
    "forgetting_report",
    "forward",
    "gen_dickins_like",
    "gen_seamount_base",
    "gen_seamount_general",
    "gen_seamount_height",
    "gen_wedge",
    "generate_dataset",
    "image_source_pressure",
    "image_source_reference",
    "is_below_bottom",
    "load_checkpoint",
    "load_config",
    "load_dataset",
    "make_task_dataset",
    "mse_loss",
    "munk_speed",
    "normalize",
    "predict_field",
    "predict_tl",
    "rasterize_mask",
    "read_tlf",
    "render_pgm",
    "replay_train",
    "run_sequence",
    "save_checkpoint",
    "solve_field",
    "ssim",
    "ssim_map",
    "tl_from_pressure",
    "trace_rays",
    "train_model",
    "train_task",
    "transect",
    "waveguide_images",
    "write_tlf",
]

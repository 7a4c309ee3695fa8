"""Convolutional encoder-decoder mapping bathymetry masks to TL fields.

A binary sub-bottom mask enters as a single-channel image, is compressed
through a ladder of conv/pool stages into a dense latent vector, and is
expanded back to a one-channel field on the original grid.  Internally all
activations are channel-first ``(batch, channel, rows, cols)``; masks and
fields cross the module boundary as ``(batch, rows, cols)``.

Mutable training state (layer parameters, batchnorm running statistics,
per-task normalization constants, step counter) lives in :class:`ModelState`
and round-trips losslessly through the TLF container.  Parameters are plain
named arrays so the optimizer can treat the model as a flat dict.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, FormatError, ShapeError
from .nn import (
    batchnorm_bwd,
    batchnorm_fwd,
    conv2d_bwd,
    conv2d_fwd,
    conv2d_transpose_bwd,
    conv2d_transpose_fwd,
    dense_bwd,
    dense_fwd,
    leaky_relu_bwd,
    leaky_relu_fwd,
    maxpool2_bwd,
    maxpool2_fwd,
    upsample2_bwd,
    upsample2_fwd,
)
from .tlf import KIND_TENSOR, TlfRecord, read_tlf, write_tlf

__all__ = [
    "GLOBAL_STATS",
    "ModelConfig",
    "ModelState",
    "backward",
    "build_model",
    "decode",
    "encode",
    "forward",
    "forward_train",
    "load_checkpoint",
    "mse_loss",
    "pad_input",
    "predict_tl",
    "save_checkpoint",
]

# norm_stats key that serves any task without stats of its own
GLOBAL_STATS = 0

_K = 3  # all convolutions are 3x3, padding 1


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; every derived shape follows from these."""

    input_shape: tuple[int, int]
    encoder_channels: tuple[int, ...] = (16, 32, 64, 128)
    latent_dim: int = 128
    leaky_slope: float = 0.01
    pad_to_multiple: int = 16

    def __post_init__(self) -> None:
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(
            self, "encoder_channels", tuple(int(c) for c in self.encoder_channels)
        )
        # snapped to float32 so a checkpoint round trip preserves the config
        object.__setattr__(self, "leaky_slope", float(np.float32(self.leaky_slope)))
        if len(self.input_shape) != 2 or min(self.input_shape) < 1:
            raise ConfigError(f"input_shape must be two positive dims, got {self.input_shape}")
        if not self.encoder_channels or min(self.encoder_channels) < 1:
            raise ConfigError("encoder_channels must be a non-empty list of positive counts")
        if self.latent_dim < 1:
            raise ConfigError(f"latent_dim must be positive, got {self.latent_dim}")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ConfigError(f"leaky_slope must lie in (0, 1), got {self.leaky_slope}")
        # each encoder stage halves both dims, so the padded grid must
        # divide evenly through every stage
        if self.pad_to_multiple < 1 or self.pad_to_multiple % (1 << self.n_stages):
            raise ConfigError(
                f"pad_to_multiple {self.pad_to_multiple} is not a multiple of "
                f"2**{self.n_stages} stages"
            )

    @property
    def n_stages(self) -> int:
        return len(self.encoder_channels)

    @property
    def padded_shape(self) -> tuple[int, int]:
        m = self.pad_to_multiple
        h, w = self.input_shape
        return (-(-h // m) * m, -(-w // m) * m)

    @property
    def stage_shape(self) -> tuple[int, int]:
        """Spatial dims at the bottom of the encoder."""
        h, w = self.padded_shape
        return (h >> self.n_stages, w >> self.n_stages)

    @property
    def decoder_channels(self) -> tuple[int, ...]:
        """Mirror of the encoder ladder; the last stage keeps the first
        encoder width so the output head sees a feature stack."""
        e = self.encoder_channels
        return e[-2::-1] + (e[0],)

    @property
    def flat_dim(self) -> int:
        h, w = self.stage_shape
        return self.encoder_channels[-1] * h * w


@dataclass
class ModelState:
    """Everything needed to run or resume the network."""

    config: ModelConfig
    params: dict[str, np.ndarray]
    stats: dict[str, np.ndarray]
    norm_stats: dict[int, tuple[float, float]] = field(default_factory=dict)
    seed: int = 0
    step: int = 0

    @property
    def dtype(self) -> np.dtype:
        return self.params["head.b"].dtype

    def set_norm_stats(self, task_id: int, mean: float, std: float) -> None:
        """Register per-task normalization constants.

        Values are snapped to float32 so a checkpoint round trip reproduces
        inference bit for bit.
        """
        if std <= 0.0 or not np.isfinite([mean, std]).all():
            raise ConfigError(f"norm stats for task {task_id} must be finite with std > 0")
        self.norm_stats[int(task_id)] = (
            float(np.float32(mean)),
            float(np.float32(std)),
        )


def pad_input(masks: np.ndarray, multiple: int) -> np.ndarray:
    """Replicate-pad the trailing two axes up to multiples of ``multiple``."""
    h, w = masks.shape[-2:]
    hp = -(-h // multiple) * multiple
    wp = -(-w // multiple) * multiple
    if (hp, wp) == (h, w):
        return masks
    pad = [(0, 0)] * (masks.ndim - 2) + [(0, hp - h), (0, wp - w)]
    return np.pad(masks, pad, mode="edge")


def _uniform(rng, shape, fan_in: int, dtype) -> np.ndarray:
    bound = float(np.sqrt(1.0 / fan_in))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def build_model(config: ModelConfig, seed: int = 0, dtype=np.float32) -> ModelState:
    """Initialize parameters uniformly in +-sqrt(1/fan_in), seeded.

    The draw order is fixed (encoder stages, bottleneck pair, decoder
    stages, head) so a seed fully determines the starting point.
    """
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    stats: dict[str, np.ndarray] = {}

    def add_bn(name: str, c: int) -> None:
        params[f"{name}.gamma"] = np.ones(c, dtype)
        params[f"{name}.beta"] = np.zeros(c, dtype)
        stats[f"{name}.mean"] = np.zeros(c, dtype)
        stats[f"{name}.var"] = np.ones(c, dtype)

    c_in = 1
    for i, c_out in enumerate(config.encoder_channels):
        fan = c_in * _K * _K
        params[f"enc{i}.conv.w"] = _uniform(rng, (c_out, c_in, _K, _K), fan, dtype)
        params[f"enc{i}.conv.b"] = _uniform(rng, (c_out,), fan, dtype)
        add_bn(f"enc{i}.bn", c_out)
        c_in = c_out
    flat = config.flat_dim
    params["enc.fc.w"] = _uniform(rng, (flat, config.latent_dim), flat, dtype)
    params["enc.fc.b"] = _uniform(rng, (config.latent_dim,), flat, dtype)
    params["dec.fc.w"] = _uniform(rng, (config.latent_dim, flat), config.latent_dim, dtype)
    params["dec.fc.b"] = _uniform(rng, (flat,), config.latent_dim, dtype)
    c_in = config.encoder_channels[-1]
    for i, c_out in enumerate(config.decoder_channels):
        fan = c_in * _K * _K
        params[f"dec{i}.tconv.w"] = _uniform(rng, (c_in, c_out, _K, _K), fan, dtype)
        params[f"dec{i}.tconv.b"] = _uniform(rng, (c_out,), fan, dtype)
        add_bn(f"dec{i}.bn", c_out)
        c_in = c_out
    fan = c_in * _K * _K
    params["head.w"] = _uniform(rng, (1, c_in, _K, _K), fan, dtype)
    params["head.b"] = _uniform(rng, (1,), fan, dtype)
    return ModelState(config=config, params=params, stats=stats, seed=int(seed))


def _to_nchw(state: ModelState, masks) -> np.ndarray:
    x = np.asarray(masks)
    if x.ndim != 3:
        raise ShapeError(f"expected a (batch, rows, cols) stack, got shape {x.shape}")
    m = state.config.pad_to_multiple
    if x.shape[1] % m or x.shape[2] % m:
        raise ShapeError(
            f"input {x.shape[1]}x{x.shape[2]} is not padded to multiples of {m}"
        )
    return x[:, None, :, :].astype(state.dtype, copy=False)


def _run_bn(state: ModelState, name: str, h, train: bool, tape) -> np.ndarray:
    p, s = state.params, state.stats
    y, ctx, rm, rv = batchnorm_fwd(
        h, p[f"{name}.gamma"], p[f"{name}.beta"],
        s[f"{name}.mean"], s[f"{name}.var"], train,
    )
    if train:
        s[f"{name}.mean"] = rm
        s[f"{name}.var"] = rv
    if tape is not None:
        tape.append(("bn", name, ctx))
    return y


def _encode(state: ModelState, x: np.ndarray, train: bool, tape) -> np.ndarray:
    p = state.params
    slope = state.config.leaky_slope

    def tap(tag, name, ctx):
        if tape is not None:
            tape.append((tag, name, ctx))

    h = x
    for i in range(state.config.n_stages):
        h, ctx = conv2d_fwd(h, p[f"enc{i}.conv.w"], p[f"enc{i}.conv.b"], padding=1)
        tap("conv", f"enc{i}.conv", ctx)
        h = _run_bn(state, f"enc{i}.bn", h, train, tape)
        h, ctx = leaky_relu_fwd(h, slope)
        tap("leaky", None, ctx)
        h, ctx = maxpool2_fwd(h)
        tap("pool", None, ctx)
    tap("flatten", None, h.shape)
    z = h.reshape(h.shape[0], -1)
    lat, ctx = dense_fwd(z, p["enc.fc.w"], p["enc.fc.b"])
    tap("dense", "enc.fc", ctx)
    return lat


def _decode(state: ModelState, lat: np.ndarray, train: bool, tape) -> np.ndarray:
    cfg = state.config
    p = state.params
    if lat.ndim != 2 or lat.shape[1] != cfg.latent_dim:
        raise ShapeError(
            f"latent shape {lat.shape} does not match latent_dim {cfg.latent_dim}"
        )

    def tap(tag, name, ctx):
        if tape is not None:
            tape.append((tag, name, ctx))

    z, ctx = dense_fwd(lat.astype(state.dtype, copy=False), p["dec.fc.w"], p["dec.fc.b"])
    tap("dense", "dec.fc", ctx)
    hs, ws = cfg.stage_shape
    tap("unflatten", None, z.shape)
    h = z.reshape(z.shape[0], cfg.encoder_channels[-1], hs, ws)
    for i in range(cfg.n_stages):
        h, ctx = upsample2_fwd(h)
        tap("upsample", None, ctx)
        h, ctx = conv2d_transpose_fwd(
            h, p[f"dec{i}.tconv.w"], p[f"dec{i}.tconv.b"], padding=1
        )
        tap("tconv", f"dec{i}.tconv", ctx)
        h = _run_bn(state, f"dec{i}.bn", h, train, tape)
        h, ctx = leaky_relu_fwd(h, cfg.leaky_slope)
        tap("leaky", None, ctx)
    h, ctx = conv2d_fwd(h, p["head.w"], p["head.b"], padding=1)
    tap("conv", "head", ctx)
    tap("crop", None, h.shape)
    hh, ww = cfg.input_shape
    return h[:, 0, :hh, :ww]


def encode(state: ModelState, masks, train: bool = False) -> np.ndarray:
    """Compress padded masks ``(batch, rows, cols)`` into latent vectors."""
    return _encode(state, _to_nchw(state, masks), train, None)


def decode(state: ModelState, latent: np.ndarray, train: bool = False) -> np.ndarray:
    """Expand latent vectors to fields cropped to the configured grid."""
    return _decode(state, np.asarray(latent), train, None)


def forward(state: ModelState, masks, train: bool = False) -> np.ndarray:
    """Single-shot prediction: the composition of encode and decode."""
    return decode(state, encode(state, masks, train), train)


def forward_train(state: ModelState, masks):
    """Forward pass recording a tape of layer contexts for :func:`backward`."""
    tape: list = []
    lat = _encode(state, _to_nchw(state, masks), True, tape)
    pred = _decode(state, lat, True, tape)
    return pred, tape


def backward(state: ModelState, tape, dpred: np.ndarray) -> dict[str, np.ndarray]:
    """Walk the tape in reverse, returning gradients keyed like ``params``."""
    grads: dict[str, np.ndarray] = {}
    d = np.asarray(dpred)
    for tag, name, ctx in reversed(tape):
        if tag == "crop":
            full = np.zeros(ctx, dtype=d.dtype)
            full[:, 0, : d.shape[1], : d.shape[2]] = d
            d = full
        elif tag == "conv":
            d, grads[f"{name}.w"], grads[f"{name}.b"] = conv2d_bwd(ctx, d)
        elif tag == "tconv":
            d, grads[f"{name}.w"], grads[f"{name}.b"] = conv2d_transpose_bwd(ctx, d)
        elif tag == "bn":
            d, grads[f"{name}.gamma"], grads[f"{name}.beta"] = batchnorm_bwd(ctx, d)
        elif tag == "leaky":
            d = leaky_relu_bwd(ctx, d)
        elif tag == "pool":
            d = maxpool2_bwd(ctx, d)
        elif tag == "upsample":
            d = upsample2_bwd(ctx, d)
        elif tag == "dense":
            d, grads[f"{name}.w"], grads[f"{name}.b"] = dense_bwd(ctx, d)
        elif tag == "flatten":
            d = d.reshape(ctx)
        elif tag == "unflatten":
            d = d.reshape(ctx)
    return grads


def mse_loss(pred: np.ndarray, target: np.ndarray):
    """Mean over samples of the per-sample squared L2 norm per cell.

    Returns ``(loss, dloss/dpred)``.
    """
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} vs target {target.shape}")
    diff = pred - target
    scale = pred.shape[0] * pred[0].size
    loss = float((diff * diff).sum() / scale)
    return loss, (2.0 / scale) * diff


def predict_tl(state: ModelState, mask: np.ndarray, task_id: int,
               clip_db: float = 200.0) -> np.ndarray:
    """Infer a TL field in dB from one mask: eval forward, denormalize with
    the task's stats, clip, and pin sub-bottom cells at the clip value."""
    mask = np.asarray(mask)
    if mask.shape != state.config.input_shape:
        raise ShapeError(
            f"mask shape {mask.shape} does not match configured grid "
            f"{state.config.input_shape}"
        )
    key = int(task_id)
    if key not in state.norm_stats:
        key = GLOBAL_STATS
        if key not in state.norm_stats:
            raise ConfigError(
                f"no normalization stats for task {task_id} and no global entry"
            )
    mean, std = state.norm_stats[key]
    x = pad_input(mask[None, :, :], state.config.pad_to_multiple)
    pred = forward(state, x, train=False)[0]
    tl = pred.astype(np.float64) * std + mean
    tl = np.minimum(tl, clip_db)
    tl[mask >= 0.5] = clip_db
    return tl


def _int_to_limbs(value: int) -> np.ndarray:
    # 24-bit limbs are exact in float32, covering ints below 2**72
    v = int(value)
    if v < 0 or v >= 1 << 72:
        raise ConfigError(f"cannot serialize integer {value}")
    return np.array([v & 0xFFFFFF, (v >> 24) & 0xFFFFFF, v >> 48], dtype=np.float32)


def _limbs_to_int(values: np.ndarray) -> int:
    lo, mid, hi = (int(round(float(v))) for v in values)
    return lo | (mid << 24) | (hi << 48)


def save_checkpoint(state: ModelState, path) -> None:
    """Write parameters, running stats, norm stats, config, and seed."""
    cfg = state.config
    records = [
        TlfRecord("config.grid", KIND_TENSOR, np.array(
            [*cfg.input_shape, cfg.latent_dim, cfg.pad_to_multiple], np.float32)),
        TlfRecord("config.channels", KIND_TENSOR,
                  np.array(cfg.encoder_channels, np.float32)),
        TlfRecord("config.slope", KIND_TENSOR,
                  np.array([cfg.leaky_slope], np.float32)),
        TlfRecord("meta.seed", KIND_TENSOR, _int_to_limbs(state.seed)),
        TlfRecord("meta.step", KIND_TENSOR, _int_to_limbs(state.step)),
    ]
    for name in sorted(state.params):
        records.append(TlfRecord(f"param.{name}", KIND_TENSOR, state.params[name]))
    for name in sorted(state.stats):
        records.append(TlfRecord(f"stat.{name}", KIND_TENSOR, state.stats[name]))
    for tid in sorted(state.norm_stats):
        mean, std = state.norm_stats[tid]
        records.append(TlfRecord(f"norm.{tid}", KIND_TENSOR,
                                 np.array([mean, std], np.float32)))
    write_tlf(path, records)


def load_checkpoint(path) -> ModelState:
    """Rebuild a ModelState; the restored model is bit-identical in forward."""
    by_name = {r.name: r.values for r in read_tlf(path)}

    def need(name: str) -> np.ndarray:
        if name not in by_name:
            raise FormatError(f"{path}: checkpoint is missing record '{name}'")
        return by_name[name]

    grid = need("config.grid")
    config = ModelConfig(
        input_shape=(int(grid[0]), int(grid[1])),
        encoder_channels=tuple(int(c) for c in need("config.channels")),
        latent_dim=int(grid[2]),
        leaky_slope=float(need("config.slope")[0]),
        pad_to_multiple=int(grid[3]),
    )
    state = build_model(config, seed=_limbs_to_int(need("meta.seed")))
    state.step = _limbs_to_int(need("meta.step"))
    for group, target in (("param", state.params), ("stat", state.stats)):
        for name, arr in target.items():
            values = need(f"{group}.{name}")
            if values.shape != arr.shape:
                raise FormatError(
                    f"{path}: record {group}.{name} has shape {values.shape}, "
                    f"expected {arr.shape}"
                )
            target[name] = values
    for rec_name, values in by_name.items():
        if rec_name.startswith("norm."):
            state.set_norm_stats(int(rec_name[5:]), float(values[0]), float(values[1]))
    return state

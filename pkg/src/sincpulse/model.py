"""Small spatiotemporal predictors with AdamW and binary checkpointing.

Two variants map a clip (T, H, W, 3) to a dense waveform of length T:

* ``spatial_mean_temporal``: spatial average -> per-channel temporal
  centering -> stack of 1-D temporal convolutions (tanh between layers,
  linear last), each preceded by replicate padding so the length stays T.
* ``small_conv3d``: per-pixel temporal centering -> valid 3x3 spatial by
  ``temporal_kernel`` temporal convolution blocks (replicate-padded in time)
  -> spatial average -> one final temporal convolution.

Checkpoints are little-endian binary: magic ``SINC``, format version, a
SHA-256 digest of the canonical config string, the init seed, the tensors in
declared order, and a trailing CRC32 over everything before it.
"""

from __future__ import annotations

import hashlib
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .errors import (
    ChecksumError,
    FileFormatError,
    InvalidConfigError,
    InvalidInputError,
    NumericError,
    ShapeError,
    VersionError,
)
from .spectral import SignalWindow

VARIANT_TEMPORAL = "spatial_mean_temporal"
VARIANT_CONV3D = "small_conv3d"

PARAMS_MAGIC = b"SINC"
PARAMS_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    variant: str = VARIANT_TEMPORAL
    channels: int = 16
    layers: int = 3
    temporal_kernel: int = 5
    activation: str = "tanh"

    def __post_init__(self):
        if self.variant not in (VARIANT_TEMPORAL, VARIANT_CONV3D):
            raise InvalidConfigError(f"unknown model variant: {self.variant!r}")
        if self.layers < 1:
            raise InvalidConfigError(f"layers must be >= 1, got {self.layers}")
        if self.temporal_kernel < 1 or self.temporal_kernel % 2 == 0:
            raise InvalidConfigError(
                f"temporal_kernel must be odd and positive, got {self.temporal_kernel}"
            )
        if self.channels < 1:
            raise InvalidConfigError(f"channels must be >= 1, got {self.channels}")
        if self.activation != "tanh":
            raise InvalidConfigError(f"only tanh activation is supported, got {self.activation!r}")

    def canonical_string(self) -> str:
        return (
            f"variant={self.variant};channels={self.channels};layers={self.layers};"
            f"temporal_kernel={self.temporal_kernel};activation={self.activation}"
        )

    def digest(self) -> bytes:
        return hashlib.sha256(self.canonical_string().encode()).digest()

    @property
    def receptive_field(self) -> int:
        return self.layers * (self.temporal_kernel - 1) + 1


@dataclass
class ModelParams:
    config: ModelConfig
    seed: int
    kernels: list[dc.Tensor]
    biases: list[dc.Tensor]

    def tensors(self) -> list[dc.Tensor]:
        out = []
        for k, b in zip(self.kernels, self.biases):
            out.extend((k, b))
        return out

    def zero_grads(self):
        for t in self.tensors():
            t.zero_grad()

    def n_parameters(self) -> int:
        return sum(t.data.size for t in self.tensors())


def _layer_shapes(cfg: ModelConfig) -> list[tuple[tuple[int, ...], int]]:
    """(kernel shape, output channels) per layer, in forward order."""
    k = cfg.temporal_kernel
    shapes: list[tuple[tuple[int, ...], int]] = []
    if cfg.variant == VARIANT_TEMPORAL:
        c_in = 3
        for layer in range(cfg.layers):
            c_out = 1 if layer == cfg.layers - 1 else cfg.channels
            shapes.append(((k, c_in, c_out), c_out))
            c_in = c_out
    else:
        c_in = 3
        for _ in range(cfg.layers - 1):
            shapes.append(((k, 3, 3, c_in, cfg.channels), cfg.channels))
            c_in = cfg.channels
        shapes.append(((k, c_in, 1), 1))
    return shapes


def init_params(cfg: ModelConfig, seed: int) -> ModelParams:
    """Uniform +-sqrt(1/fan_in) initialization for kernels and biases."""
    rng = np.random.default_rng(seed)
    kernels, biases = [], []
    for shape, c_out in _layer_shapes(cfg):
        fan_in = int(np.prod(shape[:-1]))
        bound = np.sqrt(1.0 / fan_in)
        kernels.append(dc.Tensor(rng.uniform(-bound, bound, shape), requires_grad=True))
        biases.append(dc.Tensor(rng.uniform(-bound, bound, c_out), requires_grad=True))
    return ModelParams(config=cfg, seed=int(seed), kernels=kernels, biases=biases)


def _validate_clip(cfg: ModelConfig, clip: np.ndarray) -> np.ndarray:
    clip = np.asarray(clip, dtype=np.float64)
    if clip.ndim != 4 or clip.shape[3] != 3:
        raise InvalidInputError(
            f"clip must be (T, H, W, 3), got shape {clip.shape}"
        )
    t_len, h, w, _ = clip.shape
    if t_len < cfg.receptive_field:
        raise ShapeError(
            f"clip length {t_len} shorter than the receptive field "
            f"{cfg.receptive_field}"
        )
    if cfg.variant == VARIANT_CONV3D:
        shrink = 2 * (cfg.layers - 1)
        if h - shrink < 1 or w - shrink < 1:
            raise ShapeError(
                f"spatial size {h}x{w} too small for {cfg.layers - 1} valid 3x3 blocks"
            )
    return clip


def forward(params: ModelParams, clip: np.ndarray) -> dc.Tensor:
    """Dense waveform prediction of length T, attached to the autodiff graph."""
    cfg = params.config
    clip = _validate_clip(cfg, clip)
    pad = (cfg.temporal_kernel - 1) // 2
    x = dc.Tensor(clip)

    if cfg.variant == VARIANT_TEMPORAL:
        h = dc.mean_over_axes(x, (1, 2))  # (T, C)
        h = dc.center(h, axis=0)
        for i, (k, b) in enumerate(zip(params.kernels, params.biases)):
            h = dc.replicate_pad(h, pad, pad, axis=0)
            h = dc.temporal_conv(h, k, b)
            if i < cfg.layers - 1:
                h = dc.tanh(h)
        return dc.mean_over_axes(h, (1,))  # (T, 1) -> (T,)

    h = dc.center(x, axis=0)
    for i in range(cfg.layers - 1):
        h = dc.replicate_pad(h, pad, pad, axis=0)
        h = dc.conv3d(h, params.kernels[i], params.biases[i])
        h = dc.tanh(h)
    h = dc.mean_over_axes(h, (1, 2))  # (T, channels)
    h = dc.replicate_pad(h, pad, pad, axis=0)
    h = dc.temporal_conv(h, params.kernels[-1], params.biases[-1])
    return dc.mean_over_axes(h, (1,))


def predict(params: ModelParams, clip: np.ndarray, fps: float) -> SignalWindow:
    return SignalWindow(forward(params, clip).data, fps)


@dataclass
class OptimState:
    """AdamW accumulators; decay is decoupled from the adaptive step."""

    lr: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def init_optimizer(
    params: ModelParams,
    lr: float = 1e-4,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    weight_decay: float = 0.01,
) -> OptimState:
    tensors = params.tensors()
    return OptimState(
        lr=lr,
        betas=betas,
        eps=eps,
        weight_decay=weight_decay,
        step=0,
        m=[np.zeros_like(t.data) for t in tensors],
        v=[np.zeros_like(t.data) for t in tensors],
    )


def adamw_step(params: ModelParams, grads: list[np.ndarray], state: OptimState):
    """One AdamW update in place: theta <- theta*(1 - lr*wd) - lr*mhat/(sqrt(vhat)+eps)."""
    tensors = params.tensors()
    if len(grads) != len(tensors):
        raise ShapeError(
            f"expected {len(tensors)} gradient arrays, got {len(grads)}"
        )
    for g, t in zip(grads, tensors):
        if g.shape != t.data.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {t.data.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient", op="adamw_step")
    b1, b2 = state.betas
    state.step += 1
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    for i, (g, t) in enumerate(zip(grads, tensors)):
        t.data *= 1.0 - state.lr * state.weight_decay
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        t.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def save_params(params: ModelParams, path) -> None:
    payload = bytearray()
    payload += PARAMS_MAGIC
    payload += struct.pack("<I", PARAMS_VERSION)
    payload += params.config.digest()
    payload += struct.pack("<Q", params.seed)
    tensors = params.tensors()
    payload += struct.pack("<I", len(tensors))
    for t in tensors:
        payload += struct.pack("<I", t.data.ndim)
        for d in t.data.shape:
            payload += struct.pack("<I", d)
        payload += t.data.astype("<f8").tobytes()
    payload += struct.pack("<I", zlib.crc32(bytes(payload)) & 0xFFFFFFFF)
    with open(path, "wb") as fh:
        fh.write(bytes(payload))


def load_params(path, cfg: ModelConfig) -> ModelParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 + 4 + 32 + 8 + 4 + 4:
        raise ChecksumError(f"parameter file truncated: {len(blob)} bytes")
    body, (crc_stored,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc_stored:
        raise ChecksumError("parameter file CRC mismatch")
    off = 0
    if body[:4] != PARAMS_MAGIC:
        raise FileFormatError(f"bad magic {body[:4]!r}, expected {PARAMS_MAGIC!r}")
    off = 4
    (version,) = struct.unpack_from("<I", body, off)
    off += 4
    if version != PARAMS_VERSION:
        raise VersionError(
            f"parameter format version {version} unsupported (expected {PARAMS_VERSION})"
        )
    digest = body[off : off + 32]
    off += 32
    if digest != cfg.digest():
        raise FileFormatError(
            "parameter file was written for a different model configuration"
        )
    (seed,) = struct.unpack_from("<Q", body, off)
    off += 8
    (n_tensors,) = struct.unpack_from("<I", body, off)
    off += 4
    expected = _layer_shapes(cfg)
    if n_tensors != 2 * len(expected):
        raise FileFormatError(
            f"expected {2 * len(expected)} tensors for this config, file has {n_tensors}"
        )
    arrays = []
    try:
        for _ in range(n_tensors):
            (ndim,) = struct.unpack_from("<I", body, off)
            off += 4
            shape = struct.unpack_from(f"<{ndim}I", body, off)
            off += 4 * ndim
            count = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(body, dtype="<f8", count=count, offset=off).reshape(shape)
            off += 8 * count
            arrays.append(arr.astype(np.float64))
    except (struct.error, ValueError) as exc:
        raise ChecksumError(f"parameter file truncated mid-tensor: {exc}") from exc
    if off != len(body):
        raise FileFormatError("trailing bytes after declared tensors")
    kernels, biases = [], []
    for i, (shape, c_out) in enumerate(expected):
        k, b = arrays[2 * i], arrays[2 * i + 1]
        if k.shape != shape or b.shape != (c_out,):
            raise FileFormatError(
                f"layer {i} shape mismatch: file has {k.shape}/{b.shape}, "
                f"config implies {shape}/({c_out},)"
            )
        kernels.append(dc.Tensor(k, requires_grad=True))
        biases.append(dc.Tensor(b, requires_grad=True))
    return ModelParams(config=cfg, seed=int(seed), kernels=kernels, biases=biases)

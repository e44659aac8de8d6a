"""Training-time clip augmentations, including frequency resampling.

Augmentations are applied in a fixed order: frequency resampling (which also
crops to the training length), horizontal flip, per-clip illumination offset,
per-pixel Gaussian noise, and finally time reversal.  Resampling by factor c
reads the input at positions j*c, so every periodic component's frequency is
multiplied by exactly c; the input clip must be long enough to cover the
crop at the largest factor.

Time reversal flips the sign of observable phase but not the power spectrum,
so it is valid only for losses that cannot see phase: supervised mode
disables it.  When a target waveform is supplied it undergoes the same
temporal transform as the clip, keeping labels aligned for supervised runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfigError, InvalidInputError

MODE_UNSUPERVISED = "unsupervised"
MODE_SUPERVISED = "supervised"


@dataclass(frozen=True)
class AugmentConfig:
    flip_prob: float = 0.5
    illum_offset_sigma: float = 0.1
    pixel_noise_sigma: float = 0.008
    resample_range: tuple[float, float] = (0.66, 1.4)
    time_reverse_prob: float = 0.5
    enable_flip: bool = True
    enable_illumination: bool = True
    enable_noise: bool = True
    enable_resample: bool = True
    enable_time_reverse: bool = True

    def __post_init__(self):
        for name in ("flip_prob", "time_reverse_prob"):
            p = getattr(self, name)
            if not (0.0 <= p <= 1.0):
                raise InvalidConfigError(f"{name} must be in [0, 1], got {p}")
        c_min, c_max = self.resample_range
        if not (0.0 < c_min <= c_max):
            raise InvalidConfigError(
                f"resample_range must satisfy 0 < c_min <= c_max, got {self.resample_range}"
            )
        if self.illum_offset_sigma < 0 or self.pixel_noise_sigma < 0:
            raise InvalidConfigError("noise magnitudes must be non-negative")

    @classmethod
    def disabled(cls) -> "AugmentConfig":
        return cls(
            enable_flip=False,
            enable_illumination=False,
            enable_noise=False,
            enable_resample=False,
            enable_time_reverse=False,
        )


@dataclass
class AugmentResult:
    clip: np.ndarray  # (out_len, H, W, C)
    target: np.ndarray | None  # transformed alongside the clip, if given
    factor: float  # effective frequency scaling c (1.0 when disabled)
    flipped: bool
    reversed_time: bool


def _resample_crop(arr: np.ndarray, factor: float, out_len: int) -> np.ndarray:
    """Read ``out_len`` samples at stride ``factor`` with linear interpolation."""
    n = arr.shape[0]
    pos = np.arange(out_len) * factor
    if pos[-1] > n - 1 + 1e-9:
        raise InvalidInputError(
            f"clip of {n} frames cannot cover {out_len} frames at resample "
            f"factor {factor:.4f}"
        )
    i0 = np.minimum(pos.astype(np.int64), n - 2)
    frac = (pos - i0).reshape((-1,) + (1,) * (arr.ndim - 1))
    return arr[i0] * (1.0 - frac) + arr[i0 + 1] * frac


def apply(
    clip: np.ndarray,
    rng: np.random.Generator,
    cfg: AugmentConfig = AugmentConfig(),
    mode: str = MODE_UNSUPERVISED,
    out_len: int = 120,
    target: np.ndarray | None = None,
) -> AugmentResult:
    """Augment one clip (and optionally its aligned target waveform).

    Returns the augmented clip of exactly ``out_len`` frames plus the
    effective resample factor for diagnostics.  With every augmentation
    disabled the result is the plain leading crop of the input.
    """
    if mode not in (MODE_UNSUPERVISED, MODE_SUPERVISED):
        raise InvalidConfigError(f"unknown augmentation mode: {mode!r}")
    x = np.asarray(clip, dtype=np.float64)
    if x.ndim != 4:
        raise InvalidInputError(f"clip must be (T, H, W, C), got shape {x.shape}")
    if x.shape[0] < out_len:
        raise InvalidInputError(
            f"clip has {x.shape[0]} frames, need at least {out_len}"
        )
    y_target = None if target is None else np.asarray(target, dtype=np.float64)
    if y_target is not None and y_target.shape[0] != x.shape[0]:
        raise InvalidInputError(
            f"target length {y_target.shape[0]} != clip length {x.shape[0]}"
        )

    factor = 1.0
    if cfg.enable_resample:
        factor = float(rng.uniform(*cfg.resample_range))
        x = _resample_crop(x, factor, out_len)
        if y_target is not None:
            y_target = _resample_crop(y_target, factor, out_len)
    else:
        x = x[:out_len].copy()
        if y_target is not None:
            y_target = y_target[:out_len].copy()

    flipped = False
    if cfg.enable_flip and rng.uniform() < cfg.flip_prob:
        x = x[:, :, ::-1, :]
        flipped = True

    if cfg.enable_illumination:
        x = x + rng.normal(0.0, cfg.illum_offset_sigma)

    if cfg.enable_noise:
        x = x + rng.normal(0.0, cfg.pixel_noise_sigma, size=x.shape)

    reversed_time = False
    if (
        cfg.enable_time_reverse
        and mode == MODE_UNSUPERVISED
        and rng.uniform() < cfg.time_reverse_prob
    ):
        x = x[::-1]
        reversed_time = True

    return AugmentResult(
        clip=np.ascontiguousarray(x),
        target=y_target,
        factor=factor,
        flipped=flipped,
        reversed_time=reversed_time,
    )

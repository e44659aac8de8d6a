"""Synthetic labeled clips embedding a subtle periodic signal plus distractors.

Each clip is a small video tensor built as

    pixel(t,x,y,c) = base(x,y,c) + alpha * mask(x,y) * chan(c) * p(t)
                     + drift(t) + flicker(t) + noise(t,x,y,c)

where p(t) = sin(2 pi f (t + t0)) + harmonic_ratio * sin(4 pi f (t + t0) + phi)
with the rate f drawn uniformly per clip and a random time origin t0.  The
drift sits below the admissible pulse band and the flicker above it, so a
band-pass criterion is forced to reject both.  The per-channel pulse gain
(0.3, 1.0, 0.5) makes the middle channel carry most of the signal.

Ground truth (the waveform and its rate) travels in a plain-text sidecar next
to the binary clip file and is consumed by evaluation only; the training API
takes bare clips, so labels cannot leak into the unsupervised path.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FileFormatError, InvalidConfigError, InvalidInputError, VersionError
from .spectral import DEFAULT_PULSE_BAND

CLIP_MAGIC = b"SNCV"
CLIP_VERSION = 1

CHANNEL_PULSE_GAIN = np.array([0.3, 1.0, 0.5])

RATE_FLOOR_BPM = 45.0
RATE_CEIL_BPM = 165.0


@dataclass
class Clip:
    """Video tensor (T', H, W, 3) with values in [0, 1] and its frame rate."""

    tensor: np.ndarray
    fps: float = 30.0

    def __post_init__(self):
        t = np.asarray(self.tensor, dtype=np.float64)
        if t.ndim != 4 or t.shape[3] != 3:
            raise InvalidInputError(f"clip tensor must be (T, H, W, 3), got {t.shape}")
        if not np.all(np.isfinite(t)):
            raise InvalidInputError("clip contains non-finite values")
        if not (self.fps > 0):
            raise InvalidInputError(f"fps must be positive, got {self.fps}")
        self.tensor = t

    @property
    def n_frames(self) -> int:
        return self.tensor.shape[0]


@dataclass
class GroundTruth:
    pulse: np.ndarray  # reference waveform, one value per frame
    rate_bpm: float
    distractors: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not (RATE_FLOOR_BPM <= self.rate_bpm <= RATE_CEIL_BPM):
            raise InvalidInputError(
                f"rate {self.rate_bpm} bpm outside [{RATE_FLOOR_BPM}, {RATE_CEIL_BPM}]"
            )
        self.pulse = np.asarray(self.pulse, dtype=np.float64)


@dataclass
class LabeledClip:
    clip: Clip
    truth: GroundTruth


@dataclass(frozen=True)
class GenConfig:
    n_clips: int = 10
    height: int = 8
    width: int = 8
    fps: float = 30.0
    # 24 s of video: long enough that the padded-spectrum peak of the spatial
    # mean sits within one bin of the true rate for effectively every clip,
    # and that several 10 s evaluation windows fit.
    clip_len_frames: int = 720
    alpha: float = 0.01  # pulse amplitude as a fraction of the value range
    mask: np.ndarray | None = None  # explicit (H, W) gain pattern, else radial
    drift_hz: float = 0.2
    drift_amp: float = 0.02
    flicker_hz: float = 4.0
    flicker_amp: float = 0.01
    noise_sigma: float = 0.01
    harmonic_ratio: float = 0.25
    rate_range_bpm: tuple[float, float] = (RATE_FLOOR_BPM, RATE_CEIL_BPM)
    seed: int = 0

    def __post_init__(self):
        if self.n_clips < 1:
            raise InvalidConfigError("n_clips must be >= 1")
        if not (self.alpha > 0):
            raise InvalidConfigError(f"alpha must be positive, got {self.alpha}")
        if not (self.drift_hz < DEFAULT_PULSE_BAND.lo_hz):
            raise InvalidConfigError(
                f"drift_hz {self.drift_hz} must sit below the pulse band "
                f"({DEFAULT_PULSE_BAND.lo_hz:.4f} Hz)"
            )
        if not (self.flicker_hz > DEFAULT_PULSE_BAND.hi_hz):
            raise InvalidConfigError(
                f"flicker_hz {self.flicker_hz} must sit above the pulse band "
                f"({DEFAULT_PULSE_BAND.hi_hz} Hz)"
            )
        lo, hi = self.rate_range_bpm
        if not (RATE_FLOOR_BPM <= lo <= hi <= RATE_CEIL_BPM):
            raise InvalidConfigError(
                f"rate_range_bpm must lie within [{RATE_FLOOR_BPM}, {RATE_CEIL_BPM}]"
            )
        if self.clip_len_frames < 2:
            raise InvalidConfigError("clip_len_frames must be >= 2")
        if self.mask is not None:
            m = np.asarray(self.mask, dtype=np.float64)
            if m.shape != (self.height, self.width):
                raise InvalidConfigError(
                    f"mask shape {m.shape} != (height, width) = "
                    f"({self.height}, {self.width})"
                )
            object.__setattr__(self, "mask", m)


def _radial_mask(h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    """Smooth bump with a jittered center, peak gain 1."""
    cy = (h - 1) / 2 + rng.uniform(-0.5, 0.5)
    cx = (w - 1) / 2 + rng.uniform(-0.5, 0.5)
    yy, xx = np.mgrid[0:h, 0:w]
    sigma = max(h, w) / 3.0
    mask = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2))
    return mask / mask.max()


def _pulse_waveform(
    t: np.ndarray, freq_hz: float, t0: float, phi: float, harmonic_ratio: float
) -> np.ndarray:
    shifted = t + t0
    return np.sin(2 * np.pi * freq_hz * shifted) + harmonic_ratio * np.sin(
        4 * np.pi * freq_hz * shifted + phi
    )


def generate_one(cfg: GenConfig, rng: np.random.Generator) -> LabeledClip:
    h, w = cfg.height, cfg.width
    t = np.arange(cfg.clip_len_frames) / cfg.fps

    rate_bpm = float(rng.uniform(*cfg.rate_range_bpm))
    freq = rate_bpm / 60.0
    t0 = float(rng.uniform(0.0, 1.0 / freq))
    phi = float(rng.uniform(0.0, 2 * np.pi))
    pulse = _pulse_waveform(t, freq, t0, phi, cfg.harmonic_ratio)

    base = rng.uniform(0.35, 0.65, size=(h, w, 3))
    mask = cfg.mask if cfg.mask is not None else _radial_mask(h, w, rng)

    drift_phase = float(rng.uniform(0.0, 2 * np.pi))
    flicker_phase = float(rng.uniform(0.0, 2 * np.pi))
    drift = cfg.drift_amp * np.sin(2 * np.pi * cfg.drift_hz * t + drift_phase)
    flicker = cfg.flicker_amp * np.sin(2 * np.pi * cfg.flicker_hz * t + flicker_phase)

    tensor = (
        base[None, :, :, :]
        + cfg.alpha
        * mask[None, :, :, None]
        * CHANNEL_PULSE_GAIN[None, None, None, :]
        * pulse[:, None, None, None]
        + (drift + flicker)[:, None, None, None]
    )
    if cfg.noise_sigma > 0:
        tensor = tensor + rng.normal(0.0, cfg.noise_sigma, size=tensor.shape)
    tensor = np.clip(tensor, 0.0, 1.0)

    truth = GroundTruth(
        pulse=pulse,
        rate_bpm=rate_bpm,
        distractors={
            "drift_hz": cfg.drift_hz,
            "drift_amp": cfg.drift_amp,
            "drift_phase": drift_phase,
            "flicker_hz": cfg.flicker_hz,
            "flicker_amp": cfg.flicker_amp,
            "flicker_phase": flicker_phase,
            "noise_sigma": cfg.noise_sigma,
            "harmonic_ratio": cfg.harmonic_ratio,
            "time_origin_s": t0,
            "harmonic_phase": phi,
        },
    )
    return LabeledClip(clip=Clip(tensor=tensor, fps=cfg.fps), truth=truth)


def generate(cfg: GenConfig) -> list[LabeledClip]:
    """Deterministic dataset: clip i uses the i-th child of the config seed."""
    root = np.random.SeedSequence(cfg.seed)
    children = root.spawn(cfg.n_clips)
    return [generate_one(cfg, np.random.default_rng(child)) for child in children]


def split(
    dataset: list, fractions: tuple[float, float, float], seed: int
) -> tuple[list, list, list]:
    """Shuffle and partition into train/val/test; every part must be non-empty."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise InvalidConfigError(f"fractions must sum to 1, got {fractions}")
    n = len(dataset)
    counts = [int(np.floor(f * n)) for f in fractions]
    i = 0
    while sum(counts) < n:
        counts[i % 3] += 1
        i += 1
    if any(c == 0 for c in counts):
        raise InvalidConfigError(
            f"fractions {fractions} leave an empty partition for {n} items"
        )
    order = np.random.default_rng(seed).permutation(n)
    bounds = np.cumsum([0] + counts)
    parts = tuple(
        [dataset[j] for j in order[bounds[k] : bounds[k + 1]]] for k in range(3)
    )
    return parts


def save_clip(labeled: LabeledClip, path) -> None:
    """Binary clip file plus a plain-text ground-truth sidecar at path + '.meta'."""
    clip = labeled.clip
    t_len, h, w, c = clip.tensor.shape
    with open(path, "wb") as fh:
        fh.write(CLIP_MAGIC)
        fh.write(struct.pack("<IIIII", CLIP_VERSION, t_len, h, w, c))
        fh.write(struct.pack("<d", clip.fps))
        fh.write(clip.tensor.astype("<f4").tobytes())  # t-major (C order)
    truth = labeled.truth
    lines = [f"rate_bpm={float(truth.rate_bpm)!r}"]
    for key in sorted(truth.distractors):
        lines.append(f"{key}={float(truth.distractors[key])!r}")
    lines.append("pulse=" + ",".join(repr(float(v)) for v in truth.pulse))
    with open(f"{path}.meta", "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_clip(path) -> Clip:
    with open(path, "rb") as fh:
        head = fh.read(4 + 20 + 8)
        if len(head) < 32:
            raise FileFormatError(f"clip file truncated: header is {len(head)} bytes")
        if head[:4] != CLIP_MAGIC:
            raise FileFormatError(f"bad magic {head[:4]!r}, expected {CLIP_MAGIC!r}")
        version, t_len, h, w, c = struct.unpack_from("<IIIII", head, 4)
        if version != CLIP_VERSION:
            raise VersionError(
                f"clip format version {version} unsupported (expected {CLIP_VERSION})"
            )
        (fps,) = struct.unpack_from("<d", head, 24)
        count = t_len * h * w * c
        raw = fh.read(4 * count)
        if len(raw) != 4 * count:
            raise FileFormatError(
                f"clip file truncated: expected {4 * count} data bytes, got {len(raw)}"
            )
        if fh.read(1):
            raise FileFormatError("trailing bytes after clip data")
    tensor = np.frombuffer(raw, dtype="<f4").reshape(t_len, h, w, c).astype(np.float64)
    return Clip(tensor=tensor, fps=fps)


def load_ground_truth(meta_path) -> GroundTruth:
    fields: dict[str, str] = {}
    with open(meta_path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise FileFormatError(f"{meta_path}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            fields[key.strip()] = value.strip()
    try:
        rate = float(fields.pop("rate_bpm"))
        pulse = np.array([float(v) for v in fields.pop("pulse").split(",")])
    except KeyError as exc:
        raise FileFormatError(f"{meta_path}: missing required field {exc}") from exc
    except ValueError as exc:
        raise FileFormatError(f"{meta_path}: malformed number: {exc}") from exc
    distractors = {}
    for key, value in fields.items():
        try:
            distractors[key] = float(value)
        except ValueError as exc:
            raise FileFormatError(f"{meta_path}: malformed number for {key}") from exc
    return GroundTruth(pulse=pulse, rate_bpm=rate, distractors=distractors)


def load_labeled_clip(path) -> LabeledClip:
    return LabeledClip(clip=load_clip(path), truth=load_ground_truth(f"{path}.meta"))

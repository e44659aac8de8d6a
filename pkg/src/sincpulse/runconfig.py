"""INI run configuration: parsing, validation and echoing.

One file describes a whole run.  Values are stored as decimal strings and
converted explicitly, so a config echo reproduces the run bit-exactly without
float round-trip surprises.  Unknown sections or keys are rejected rather
than ignored: a typo must fail loudly, not silently fall back to a default.

Sections map onto the library dataclasses:

* ``[gen]``     -> GenConfig
* ``[model]``   -> ModelConfig
* ``[augment]`` -> AugmentConfig
* ``[train]``   -> TrainConfig (plus dataset location and split keys)
* ``[eval]``    -> evaluation options (checkpoint and dataset paths)
* ``[ablate]``  -> ablation options (seed list, arm overrides)
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field

from .errors import InvalidConfigError


def _to_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise InvalidConfigError(f"expected a boolean, got {text!r}")


def _to_int(text: str) -> int:
    try:
        return int(text.strip())
    except ValueError:
        raise InvalidConfigError(f"expected an integer, got {text!r}") from None


def _to_float(text: str) -> float:
    try:
        return float(text.strip())
    except ValueError:
        raise InvalidConfigError(f"expected a number, got {text!r}") from None


def _to_pair(text: str) -> tuple[float, float]:
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 2:
        raise InvalidConfigError(f"expected 'low,high', got {text!r}")
    return (_to_float(parts[0]), _to_float(parts[1]))


def _to_int_list(text: str) -> tuple[int, ...]:
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if not parts:
        raise InvalidConfigError(f"expected a comma-separated list, got {text!r}")
    return tuple(_to_int(p) for p in parts)


_SCHEMA = {
    "gen": {
        "n_clips": _to_int,
        "height": _to_int,
        "width": _to_int,
        "fps": _to_float,
        "clip_len_frames": _to_int,
        "alpha": _to_float,
        "drift_hz": _to_float,
        "drift_amp": _to_float,
        "flicker_hz": _to_float,
        "flicker_amp": _to_float,
        "noise_sigma": _to_float,
        "harmonic_ratio": _to_float,
        "rate_range_bpm": _to_pair,
        "seed": _to_int,
    },
    "model": {
        "variant": str.strip,
        "channels": _to_int,
        "layers": _to_int,
        "temporal_kernel": _to_int,
        "activation": str.strip,
    },
    "augment": {
        "flip_prob": _to_float,
        "illum_offset_sigma": _to_float,
        "pixel_noise_sigma": _to_float,
        "resample_range": _to_pair,
        "time_reverse_prob": _to_float,
        "enable_flip": _to_bool,
        "enable_illumination": _to_bool,
        "enable_noise": _to_bool,
        "enable_resample": _to_bool,
        "enable_time_reverse": _to_bool,
    },
    "train": {
        "mode": str.strip,
        "epochs": _to_int,
        "batch_size": _to_int,
        "use_bandwidth": _to_bool,
        "use_sparsity": _to_bool,
        "use_variance": _to_bool,
        "delta_f_hz": _to_float,
        "include_second_harmonic": _to_bool,
        "window_frames": _to_int,
        "lr": _to_float,
        "weight_decay": _to_float,
        "seed": _to_int,
        "val_every": _to_int,
        "pool_before_normalize": _to_bool,
        "data_dir": str.strip,
        "split_fractions": str.strip,
        "split_seed": _to_int,
    },
    "eval": {
        "checkpoint": str.strip,
        "data_dir": str.strip,
        "window_len_s": _to_float,
        "stride_s": _to_float,
        "include_second_harmonic": _to_bool,
    },
    "ablate": {
        "seeds": _to_int_list,
        "epochs": _to_int,
        "batch_sizes": _to_int_list,
    },
}


@dataclass
class RunConfig:
    """Validated key/value maps per section, plus the raw text echo."""

    sections: dict[str, dict] = field(default_factory=dict)
    text: str = ""

    def get(self, section: str, key: str, default=None):
        return self.sections.get(section, {}).get(key, default)

    def section(self, name: str) -> dict:
        return dict(self.sections.get(name, {}))

    def has(self, section: str) -> bool:
        return section in self.sections


def parse_config_text(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise InvalidConfigError(f"config syntax error: {exc}") from None
    sections: dict[str, dict] = {}
    for name in parser.sections():
        if name not in _SCHEMA:
            raise InvalidConfigError(
                f"unknown config section [{name}]; expected one of "
                f"{sorted(_SCHEMA)}"
            )
        allowed = _SCHEMA[name]
        parsed = {}
        for key, raw in parser.items(name):
            if key not in allowed:
                raise InvalidConfigError(
                    f"unknown key {key!r} in section [{name}]; expected one of "
                    f"{sorted(allowed)}"
                )
            parsed[key] = allowed[key](raw)
        sections[name] = parsed
    return RunConfig(sections=sections, text=text)


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise InvalidConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text)


def split_fractions(text: str) -> tuple[float, float, float]:
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 3:
        raise InvalidConfigError(
            f"split_fractions needs 'train,val,test', got {text!r}"
        )
    return tuple(_to_float(p) for p in parts)  # type: ignore[return-value]


def build_gen_config(cfg: RunConfig, seed_override: int | None = None):
    from .synthdata import GenConfig

    kwargs = cfg.section("gen")
    if seed_override is not None:
        kwargs["seed"] = seed_override
    return GenConfig(**kwargs)


def build_model_config(cfg: RunConfig):
    from .model import ModelConfig

    return ModelConfig(**cfg.section("model"))


def build_augment_config(cfg: RunConfig):
    from .augment import AugmentConfig

    return AugmentConfig(**cfg.section("augment"))


def build_train_config(cfg: RunConfig, seed_override: int | None = None):
    from .losses import SparsityConfig
    from .train import TrainConfig

    kwargs = cfg.section("train")
    kwargs.pop("data_dir", None)
    kwargs.pop("split_fractions", None)
    kwargs.pop("split_seed", None)
    delta_f = kwargs.pop("delta_f_hz", None)
    harmonic = kwargs.pop("include_second_harmonic", None)
    sparsity_kwargs = {}
    if delta_f is not None:
        sparsity_kwargs["delta_f"] = delta_f
    if harmonic is not None:
        sparsity_kwargs["include_second_harmonic"] = harmonic
    if sparsity_kwargs:
        kwargs["sparsity"] = SparsityConfig(**sparsity_kwargs)
    if cfg.has("model"):
        kwargs["model"] = build_model_config(cfg)
    if cfg.has("augment"):
        kwargs["augmentations"] = build_augment_config(cfg)
    if seed_override is not None:
        kwargs["seed"] = seed_override
    return TrainConfig(**kwargs)


def render_echo(cfg: RunConfig) -> str:
    """Canonical echo of the validated config, suitable for a run manifest."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.read_string(cfg.text)
    out = io.StringIO()
    parser.write(out)
    return out.getvalue()

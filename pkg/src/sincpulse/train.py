"""Training loops for the frequency-domain objective, plus ablation drivers.

Two modes share one loop skeleton:

* ``sinc``: unsupervised.  Each batch of augmented windows is pushed through
  the model, and the frequency-domain losses (bandwidth / sparsity / variance)
  supply time-domain gradients that seed reverse mode.  The mode accepts bare
  clips only; passing labeled clips is a type error, which keeps label
  leakage impossible by construction.
* ``supervised``: negative Pearson correlation against the reference waveform,
  with the target transformed alongside the clip by the augmentations.

Checkpoint selection never touches labels in sinc mode: the epoch minimizing
validation bandwidth + sparsity is kept.  Supervised selection minimizes the
validation loss itself.

The ablation drivers (loss subsets, batch size, augmentation on/off) return
plain row dictionaries so callers can render tables or CSV without re-running
training.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import augment as aug
from .errors import InvalidConfigError, InvalidInputError, NumericError
from .evaluate import estimate_pulse_rates, evaluate_model
from .losses import (
    COMPONENT_NAMES,
    SparsityConfig,
    combined_loss,
    negative_pearson_loss,
)
from .model import (
    ModelConfig,
    ModelParams,
    adamw_step,
    forward,
    init_optimizer,
    init_params,
)
from .spectral import DEFAULT_PULSE_BAND, BandLimits, SignalWindow
from .synthdata import Clip, LabeledClip

MODE_SINC = "sinc"
MODE_SUPERVISED = "supervised"

LOSS_SUBSETS = (
    ("bandwidth",),
    ("sparsity",),
    ("variance",),
    ("bandwidth", "sparsity"),
    ("bandwidth", "variance"),
    ("sparsity", "variance"),
    ("bandwidth", "sparsity", "variance"),
)

BATCH_SIZE_GRID = (5, 10, 15, 20)


@dataclass(frozen=True)
class TrainConfig:
    mode: str = MODE_SINC
    epochs: int = 200
    batch_size: int = 20
    use_bandwidth: bool = True
    use_sparsity: bool = True
    use_variance: bool = True
    band: BandLimits = DEFAULT_PULSE_BAND
    sparsity: SparsityConfig = SparsityConfig()
    augmentations: aug.AugmentConfig = aug.AugmentConfig()
    model: ModelConfig = ModelConfig()
    window_frames: int = 120
    lr: float = 1e-4
    weight_decay: float = 0.01
    seed: int = 0
    val_every: int = 1
    pool_before_normalize: bool = False

    def __post_init__(self):
        if self.mode not in (MODE_SINC, MODE_SUPERVISED):
            raise InvalidConfigError(f"unknown training mode: {self.mode!r}")
        if self.epochs < 1:
            raise InvalidConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise InvalidConfigError(
                f"batch_size must be >= 1, got {self.batch_size}"
            )
        if self.mode == MODE_SINC and not self.components():
            raise InvalidConfigError("sinc mode needs at least one loss enabled")
        if self.use_variance and self.mode == MODE_SINC and self.batch_size < 2:
            raise InvalidConfigError(
                "the variance loss compares spectra across a batch and needs "
                "batch_size >= 2"
            )
        if self.window_frames < self.model.receptive_field:
            raise InvalidConfigError(
                f"window_frames {self.window_frames} shorter than the model "
                f"receptive field {self.model.receptive_field}"
            )
        if self.val_every < 1:
            raise InvalidConfigError(f"val_every must be >= 1, got {self.val_every}")
        if self.lr <= 0 or self.weight_decay < 0:
            raise InvalidConfigError("lr must be positive and weight_decay >= 0")

    def components(self) -> tuple[str, ...]:
        chosen = []
        for name, on in zip(
            COMPONENT_NAMES,
            (self.use_bandwidth, self.use_sparsity, self.use_variance),
        ):
            if on:
                chosen.append(name)
        return tuple(chosen)


@dataclass
class TrainLog:
    records: list[dict] = field(default_factory=list)

    def save_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec) + "\n")

    @classmethod
    def load_jsonl(cls, path) -> "TrainLog":
        records = []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if line:
                    records.append(json.loads(line))
        return cls(records=records)

    def epoch_records(self) -> list[dict]:
        return [r for r in self.records if r.get("event", "epoch") == "epoch"]

    def comparable(self) -> list[dict]:
        """Records with wall time stripped, for determinism comparisons."""
        out = []
        for rec in self.records:
            rec = dict(rec)
            rec.pop("wall_time_s", None)
            out.append(rec)
        return out


def _clone_params(params: ModelParams) -> ModelParams:
    import sincpulse.diffcore as dc

    return ModelParams(
        config=params.config,
        seed=params.seed,
        kernels=[dc.Tensor(k.data.copy(), requires_grad=True) for k in params.kernels],
        biases=[dc.Tensor(b.data.copy(), requires_grad=True) for b in params.biases],
    )


def _rng_digest(rng: np.random.Generator) -> str:
    state = repr(rng.bit_generator.state).encode()
    return hashlib.sha256(state).hexdigest()[:16]


def _check_inputs(train_set, val_set, cfg: TrainConfig) -> float:
    if not train_set or not val_set:
        raise InvalidInputError("train and validation partitions must be non-empty")
    if cfg.mode == MODE_SINC:
        for item in list(train_set) + list(val_set):
            if not isinstance(item, Clip):
                raise InvalidInputError(
                    "sinc mode trains without labels: pass bare Clip objects "
                    f"(got {type(item).__name__})"
                )
        fps_values = {c.fps for c in list(train_set) + list(val_set)}
    else:
        for item in list(train_set) + list(val_set):
            if not isinstance(item, LabeledClip):
                raise InvalidInputError(
                    "supervised mode needs LabeledClip objects "
                    f"(got {type(item).__name__})"
                )
        fps_values = {lc.clip.fps for lc in list(train_set) + list(val_set)}
    if len(fps_values) != 1:
        raise InvalidInputError(f"clips disagree on fps: {sorted(fps_values)}")
    return float(fps_values.pop())


def _sinc_batch_step(params, opt, batch, rng, cfg: TrainConfig, fps: float):
    outputs = []
    for clip in batch:
        res = aug.apply(
            clip.tensor,
            rng,
            cfg.augmentations,
            mode=aug.MODE_UNSUPERVISED,
            out_len=cfg.window_frames,
        )
        outputs.append(forward(params, res.clip))
    preds = np.stack([o.data for o in outputs])
    bundle, grads, diag = combined_loss(
        preds,
        fps,
        cfg.band,
        cfg.sparsity,
        components=cfg.components(),
        pool_before_normalize=cfg.pool_before_normalize,
    )
    params.zero_grads()
    for out, g in zip(outputs, grads):
        out.backward(seed=g)
    grad_arrays = [
        t.grad if t.grad is not None else np.zeros_like(t.data)
        for t in params.tensors()
    ]
    adamw_step(params, grad_arrays, opt)
    return bundle, diag


def _supervised_batch_step(params, opt, batch, rng, cfg: TrainConfig, fps: float):
    outputs, seeds, values = [], [], []
    for lc in batch:
        res = aug.apply(
            lc.clip.tensor,
            rng,
            cfg.augmentations,
            mode=aug.MODE_SUPERVISED,
            out_len=cfg.window_frames,
            target=lc.truth.pulse,
        )
        out = forward(params, res.clip)
        value, g = negative_pearson_loss(
            SignalWindow(out.data, fps), SignalWindow(res.target, fps)
        )
        outputs.append(out)
        seeds.append(g / len(batch))
        values.append(value)
    params.zero_grads()
    for out, g in zip(outputs, seeds):
        out.backward(seed=g)
    grad_arrays = [
        t.grad if t.grad is not None else np.zeros_like(t.data)
        for t in params.tensors()
    ]
    adamw_step(params, grad_arrays, opt)
    return float(np.mean(values))


def _validate(params, val_set, cfg: TrainConfig, fps: float) -> dict:
    """Loss summary on unaugmented leading crops of the validation clips."""
    crops = []
    for item in val_set:
        clip = item if cfg.mode == MODE_SINC else item.clip
        crops.append(forward(params, clip.tensor[: cfg.window_frames]).data)
    preds = np.stack(crops)
    # the variance loss compares spectra across clips; with one validation
    # clip only the per-sample components are defined
    components = COMPONENT_NAMES if len(crops) >= 2 else ("bandwidth", "sparsity")
    bundle, _, _ = combined_loss(
        preds, fps, cfg.band, cfg.sparsity, components=components
    )
    out = {
        "val_bandwidth": bundle.bandwidth,
        "val_sparsity": bundle.sparsity,
        "val_variance": bundle.variance if len(crops) >= 2 else None,
        "val_total": bundle.total,
    }
    if cfg.mode == MODE_SINC:
        out["val_selection"] = bundle.bandwidth + bundle.sparsity
    else:
        vals = []
        for lc, pred in zip(val_set, preds):
            target = lc.truth.pulse[: cfg.window_frames]
            value, _ = negative_pearson_loss(
                SignalWindow(pred, fps), SignalWindow(target, fps)
            )
            vals.append(value)
        out["val_pearson_loss"] = float(np.mean(vals))
        out["val_selection"] = out["val_pearson_loss"]
    return out


def train(train_set, val_set, cfg: TrainConfig) -> tuple[ModelParams, TrainLog]:
    """Optimize a model and return the checkpoint with the best validation score.

    ``train_set``/``val_set`` hold bare ``Clip`` objects in sinc mode and
    ``LabeledClip`` objects in supervised mode.  A numeric failure mid-run
    aborts cleanly: the log gains an ``aborted`` record and the best
    checkpoint seen so far is returned.
    """
    fps = _check_inputs(train_set, val_set, cfg)
    params = init_params(cfg.model, seed=cfg.seed)
    opt = init_optimizer(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    log = TrainLog()
    best = _clone_params(params)
    best_selection = np.inf
    min_batch = 2 if (cfg.mode == MODE_SINC and cfg.use_variance) else 1

    n = len(train_set)
    if n < min_batch:
        raise InvalidInputError(
            f"train set of {n} clip(s) is below the minimum batch of {min_batch}"
        )
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 7919, epoch]))
        order = rng.permutation(n)
        batch_bundles = []
        try:
            for start in range(0, n, cfg.batch_size):
                idx = order[start : start + cfg.batch_size]
                if idx.size < min_batch:
                    continue  # trailing remainder too small for the batch loss
                batch = [train_set[i] for i in idx]
                if cfg.mode == MODE_SINC:
                    bundle, _ = _sinc_batch_step(params, opt, batch, rng, cfg, fps)
                    batch_bundles.append(
                        (bundle.bandwidth, bundle.sparsity, bundle.variance, bundle.total)
                    )
                else:
                    value = _supervised_batch_step(params, opt, batch, rng, cfg, fps)
                    batch_bundles.append((value,))
            record = {"event": "epoch", "epoch": epoch}
            arr = np.array(batch_bundles)
            if cfg.mode == MODE_SINC:
                means = arr.mean(axis=0)
                record.update(
                    train_bandwidth=float(means[0]),
                    train_sparsity=float(means[1]),
                    train_variance=float(means[2]),
                    train_total=float(means[3]),
                )
            else:
                record.update(train_pearson_loss=float(arr.mean()))
            if epoch % cfg.val_every == 0 or epoch == cfg.epochs - 1:
                record.update(_validate(params, val_set, cfg, fps))
                if record["val_selection"] < best_selection:
                    best_selection = record["val_selection"]
                    best = _clone_params(params)
                    record["checkpointed"] = True
        except (NumericError, InvalidInputError) as exc:
            log.records.append(
                {"event": "aborted", "epoch": epoch, "error": str(exc)}
            )
            break
        record["wall_time_s"] = time.perf_counter() - t0
        record["rng_digest"] = _rng_digest(rng)
        log.records.append(record)
    if not np.isfinite(best_selection):
        # validation never ran or never improved; fall back to the final state
        best = _clone_params(params)
    return best, log


def strip_labels(dataset: list[LabeledClip]) -> list[Clip]:
    return [lc.clip for lc in dataset]


def gt_dispersion_bpm(labeled: list[LabeledClip]) -> float:
    """Population std of reference window rates pooled over the given clips."""
    pooled = []
    for lc in labeled:
        series = estimate_pulse_rates(SignalWindow(lc.truth.pulse, lc.clip.fps))
        pooled.extend(series.rates_bpm.tolist())
    return float(np.std(np.array(pooled)))


def gt_span_bpm(labeled: list[LabeledClip]) -> float:
    rates = [lc.truth.rate_bpm for lc in labeled]
    return float(max(rates) - min(rates))


def _train_and_score(train_lab, val_lab, test_lab, cfg: TrainConfig) -> dict:
    if cfg.mode == MODE_SINC:
        params, log = train(strip_labels(train_lab), strip_labels(val_lab), cfg)
    else:
        params, log = train(train_lab, val_lab, cfg)
    report = evaluate_model(params, test_lab)
    aborted = any(r.get("event") == "aborted" for r in log.records)
    return {
        "mae_bpm": report.mae_bpm,
        "rmse_bpm": report.rmse_bpm,
        "pearson_r": report.pearson_r,
        "collapse_bpm": report.collapse_bpm,
        "mean_snr_db": report.mean_snr_db,
        "aborted": aborted,
    }


def ablate_losses(
    train_lab, val_lab, test_lab, base_cfg: TrainConfig, seeds=(0, 1, 2)
) -> list[dict]:
    """Train every non-empty loss subset across seeds and score on held-out clips."""
    rows = []
    for subset in LOSS_SUBSETS:
        for seed in seeds:
            cfg = replace(
                base_cfg,
                mode=MODE_SINC,
                use_bandwidth="bandwidth" in subset,
                use_sparsity="sparsity" in subset,
                use_variance="variance" in subset,
                seed=seed,
            )
            row = {"components": "+".join(subset), "seed": seed}
            row.update(_train_and_score(train_lab, val_lab, test_lab, cfg))
            rows.append(row)
    return rows


def ablate_batch_size(
    train_lab, val_lab, test_lab, base_cfg: TrainConfig, sizes=BATCH_SIZE_GRID,
    seeds=(0,),
) -> list[dict]:
    rows = []
    for size in sizes:
        for seed in seeds:
            cfg = replace(base_cfg, batch_size=size, seed=seed)
            row = {"batch_size": size, "seed": seed}
            row.update(_train_and_score(train_lab, val_lab, test_lab, cfg))
            rows.append(row)
    return rows


def ablate_augmentations(
    train_lab, val_lab, test_lab, base_cfg: TrainConfig, seeds=(0,)
) -> list[dict]:
    rows = []
    for arm, aug_cfg in (
        ("enabled", base_cfg.augmentations),
        ("disabled", aug.AugmentConfig.disabled()),
    ):
        for seed in seeds:
            cfg = replace(base_cfg, augmentations=aug_cfg, seed=seed)
            row = {"augmentations": arm, "seed": seed}
            row.update(_train_and_score(train_lab, val_lab, test_lab, cfg))
            rows.append(row)
    return rows


ABLATION_CSV_VERSION = 1


def write_ablation_csv(rows: list[dict], path) -> None:
    """Row dictionaries as CSV with a versioned header comment."""
    if not rows:
        raise InvalidInputError("no ablation rows to write")
    columns = list(rows[0].keys())
    with open(path, "w") as fh:
        fh.write(f"# sincpulse-ablation v{ABLATION_CSV_VERSION}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            cells = []
            for col in columns:
                v = row.get(col)
                if v is None:
                    cells.append("")
                elif isinstance(v, float):
                    cells.append(f"{v:.6f}")
                else:
                    cells.append(str(v))
            fh.write(",".join(cells) + "\n")

"""Tests for the training loops, checkpoint selection and ablation drivers."""

import numpy as np
import pytest

from sincpulse.augment import AugmentConfig
from sincpulse.errors import InvalidConfigError, InvalidInputError
from sincpulse.model import ModelConfig
from sincpulse.synthdata import Clip, GenConfig, GroundTruth, LabeledClip, generate, split
from sincpulse.train import (
    LOSS_SUBSETS,
    MODE_SINC,
    MODE_SUPERVISED,
    TrainConfig,
    TrainLog,
    ablate_augmentations,
    ablate_batch_size,
    ablate_losses,
    gt_dispersion_bpm,
    gt_span_bpm,
    strip_labels,
    train,
    write_ablation_csv,
)


def tiny_corpus(n=8, seed=42):
    return generate(GenConfig(n_clips=n, height=6, width=6, seed=seed))


def quick_cfg(**kw):
    base = dict(epochs=2, batch_size=4, seed=0)
    base.update(kw)
    return TrainConfig(**base)


class TestTrainConfig:
    def test_defaults(self):
        cfg = TrainConfig()
        assert cfg.mode == MODE_SINC
        assert cfg.epochs == 200
        assert cfg.batch_size == 20
        assert cfg.components() == ("bandwidth", "sparsity", "variance")

    def test_unknown_mode_rejected(self):
        with pytest.raises(InvalidConfigError):
            TrainConfig(mode="contrastive")

    def test_no_losses_rejected(self):
        with pytest.raises(InvalidConfigError):
            TrainConfig(use_bandwidth=False, use_sparsity=False, use_variance=False)

    def test_variance_needs_batch_of_two(self):
        with pytest.raises(InvalidConfigError):
            TrainConfig(batch_size=1)
        TrainConfig(batch_size=1, use_variance=False)  # fine without variance

    def test_window_must_cover_receptive_field(self):
        with pytest.raises(InvalidConfigError):
            TrainConfig(window_frames=10, model=ModelConfig(layers=3, temporal_kernel=5))

    def test_component_subsets(self):
        cfg = TrainConfig(use_bandwidth=False, use_variance=False)
        assert cfg.components() == ("sparsity",)

    def test_bad_epochs(self):
        with pytest.raises(InvalidConfigError):
            TrainConfig(epochs=0)


class TestLabelIsolation:
    def test_sinc_rejects_labeled_clips(self):
        data = tiny_corpus(4)
        with pytest.raises(InvalidInputError, match="without labels"):
            train(data[:2], data[2:], quick_cfg())

    def test_supervised_rejects_bare_clips(self):
        data = strip_labels(tiny_corpus(4))
        with pytest.raises(InvalidInputError, match="LabeledClip"):
            train(data[:2], data[2:], quick_cfg(mode=MODE_SUPERVISED))

    def test_empty_partitions_rejected(self):
        data = strip_labels(tiny_corpus(4))
        with pytest.raises(InvalidInputError):
            train([], data, quick_cfg())
        with pytest.raises(InvalidInputError):
            train(data, [], quick_cfg())


class TestTrainLoop:
    def test_log_structure_and_jsonl_roundtrip(self, tmp_path):
        data = tiny_corpus(6)
        params, log = train(strip_labels(data[:4]), strip_labels(data[4:]), quick_cfg())
        recs = log.epoch_records()
        assert len(recs) == 2
        for rec in recs:
            for key in (
                "train_bandwidth",
                "train_sparsity",
                "train_variance",
                "train_total",
                "val_bandwidth",
                "val_selection",
                "wall_time_s",
                "rng_digest",
            ):
                assert key in rec, key
        path = tmp_path / "log.jsonl"
        log.save_jsonl(path)
        loaded = TrainLog.load_jsonl(path)
        assert loaded.records == log.records

    def test_deterministic_given_seed(self):
        data = tiny_corpus(6)
        tr, va = strip_labels(data[:4]), strip_labels(data[4:])
        p1, l1 = train(tr, va, quick_cfg(seed=3))
        p2, l2 = train(tr, va, quick_cfg(seed=3))
        assert l1.comparable() == l2.comparable()
        for a, b in zip(p1.tensors(), p2.tensors()):
            np.testing.assert_array_equal(a.data, b.data)

    def test_seed_changes_outcome(self):
        data = tiny_corpus(6)
        tr, va = strip_labels(data[:4]), strip_labels(data[4:])
        p1, _ = train(tr, va, quick_cfg(seed=0))
        p2, _ = train(tr, va, quick_cfg(seed=1))
        diffs = [
            float(np.max(np.abs(a.data - b.data)))
            for a, b in zip(p1.tensors(), p2.tensors())
        ]
        assert max(diffs) > 0

    def test_checkpoint_has_minimal_selection(self):
        data = tiny_corpus(8)
        tr, va = strip_labels(data[:6]), strip_labels(data[6:])
        _, log = train(tr, va, quick_cfg(epochs=4, batch_size=3))
        recs = log.epoch_records()
        best = min(r["val_selection"] for r in recs if "val_selection" in r)
        marked = [r for r in recs if r.get("checkpointed")]
        assert marked
        assert marked[-1]["val_selection"] == best

    def test_trailing_singleton_batch_dropped(self):
        # 5 train clips at batch 4 leave a remainder of 1, below the variance
        # loss minimum; the epoch must run the full batch and skip the rest.
        data = tiny_corpus(7)
        tr, va = strip_labels(data[:5]), strip_labels(data[5:])
        params, log = train(tr, va, quick_cfg(epochs=1, batch_size=4))
        assert len(log.epoch_records()) == 1

    def test_supervised_loss_decreases(self):
        data = tiny_corpus(8)
        cfg = quick_cfg(mode=MODE_SUPERVISED, epochs=8, batch_size=4, lr=3e-3)
        params, log = train(data[:6], data[6:], cfg)
        recs = log.epoch_records()
        assert recs[-1]["train_pearson_loss"] < recs[0]["train_pearson_loss"]

    def test_abort_on_degenerate_supervised_target(self):
        # A constant target makes the correlation undefined; training must
        # abort cleanly and still hand back a usable checkpoint.
        data = tiny_corpus(4)
        flat = [
            LabeledClip(
                clip=lc.clip,
                truth=GroundTruth(
                    pulse=np.full_like(lc.truth.pulse, 0.5),
                    rate_bpm=lc.truth.rate_bpm,
                ),
            )
            for lc in data
        ]
        cfg = quick_cfg(mode=MODE_SUPERVISED)
        params, log = train(flat[:2], flat[2:], cfg)
        assert any(r.get("event") == "aborted" for r in log.records)
        assert params is not None

    def test_val_every_skips_validation(self):
        data = tiny_corpus(6)
        tr, va = strip_labels(data[:4]), strip_labels(data[4:])
        _, log = train(tr, va, quick_cfg(epochs=3, val_every=2))
        recs = log.epoch_records()
        assert "val_selection" in recs[0]
        assert "val_selection" not in recs[1]
        assert "val_selection" in recs[2]  # final epoch always validated


class TestCorpusHelpers:
    def test_strip_labels_returns_bare_clips(self):
        data = tiny_corpus(3)
        clips = strip_labels(data)
        assert all(isinstance(c, Clip) for c in clips)

    def test_gt_dispersion_positive_for_diverse_corpus(self):
        data = tiny_corpus(8)
        assert gt_dispersion_bpm(data) > 5.0

    def test_gt_span(self):
        data = tiny_corpus(8)
        rates = [lc.truth.rate_bpm for lc in data]
        assert gt_span_bpm(data) == pytest.approx(max(rates) - min(rates))


class TestAblationDrivers:
    def test_loss_subset_rows(self):
        data = tiny_corpus(10)
        tr, va, te = split(data, (0.6, 0.2, 0.2), seed=1)
        rows = ablate_losses(tr, va, te, quick_cfg(epochs=1, batch_size=3), seeds=(0,))
        assert len(rows) == len(LOSS_SUBSETS) == 7
        names = {r["components"] for r in rows}
        assert "bandwidth+sparsity+variance" in names
        assert "variance" in names
        for r in rows:
            assert "mae_bpm" in r and np.isfinite(r["mae_bpm"])
            assert "collapse_bpm" in r

    def test_batch_size_rows(self):
        data = tiny_corpus(10)
        tr, va, te = split(data, (0.6, 0.2, 0.2), seed=1)
        rows = ablate_batch_size(
            tr, va, te, quick_cfg(epochs=1), sizes=(2, 3), seeds=(0,)
        )
        assert [r["batch_size"] for r in rows] == [2, 3]

    def test_augmentation_rows(self):
        data = tiny_corpus(10)
        tr, va, te = split(data, (0.6, 0.2, 0.2), seed=1)
        rows = ablate_augmentations(tr, va, te, quick_cfg(epochs=1, batch_size=3))
        assert [r["augmentations"] for r in rows] == ["enabled", "disabled"]

    def test_ablation_csv(self, tmp_path):
        rows = [
            {"components": "bandwidth", "seed": 0, "mae_bpm": 3.25, "pearson_r": None}
        ]
        path = tmp_path / "ablation.csv"
        write_ablation_csv(rows, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "# sincpulse-ablation v1"
        assert lines[1] == "components,seed,mae_bpm,pearson_r"
        assert lines[2] == "bandwidth,0,3.250000,"

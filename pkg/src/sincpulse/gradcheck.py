"""Finite-difference verification harness for every gradient path.

Two suites share one report shape:

* loss suite: analytic time-domain gradients of the bandwidth, sparsity,
  variance, combined and negative-Pearson losses against central finite
  differences on random 120-sample batches;
* primitive suite: every autodiff primitive on small random tensors.

Relative error uses global normalization, |analytic - numeric|_inf divided by
the larger of the two gradient max-norms: several graphs contain coordinates
whose true gradient is exactly zero (the losses are blind to the mean, so
final bias gradients vanish), and per-coordinate ratios there would divide
finite-difference noise by zero.

Sparsity-style losses are piecewise: the peak-window mask jumps when the
in-band argmax moves.  Batches where any sample's runner-up bin (outside a
2-bin neighborhood of the peak) comes within a relative 1e-3 of the peak are
redrawn, since a finite-difference probe could flip the winner there.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .errors import InvalidInputError
from .losses import SparsityConfig, combined_loss, negative_pearson_loss
from .spectral import DEFAULT_PULSE_BAND, SignalWindow, band_mask, power_spectrum

LOSS_TOL = 1e-5
PRIMITIVE_TOL = 1e-6
FD_STEP = 1e-5
TIE_MARGIN = 1e-3


@dataclass
class GradCheckRow:
    name: str
    max_rel_err: float
    n_checks: int
    passed: bool


def _global_rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(
        float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))), 1e-10
    )
    return float(np.max(np.abs(analytic - numeric))) / scale


def _has_argmax_near_tie(wave: np.ndarray, fs: float) -> bool:
    spec = power_spectrum(SignalWindow(wave, fs))
    mask = band_mask(spec, DEFAULT_PULSE_BAND)
    p = spec.power[mask]
    k = int(np.argmax(p))
    away = np.abs(np.arange(p.size) - k) > 2
    if not away.any():
        return False
    runner_up = float(p[away].max())
    peak = float(p[k])
    return peak <= 0 or (peak - runner_up) <= TIE_MARGIN * peak


def _draw_tie_free_batch(
    rng: np.random.Generator, batch_size: int, n_samples: int, fs: float
) -> np.ndarray:
    batch = np.empty((batch_size, n_samples))
    for i in range(batch_size):
        for _ in range(100):
            wave = rng.standard_normal(n_samples)
            if not _has_argmax_near_tie(wave, fs):
                batch[i] = wave
                break
        else:  # pragma: no cover - vanishingly unlikely with random draws
            raise InvalidInputError("could not draw a tie-free waveform")
    return batch


def check_loss_gradients(
    n_batches: int = 50,
    batch_size: int = 3,
    n_samples: int = 120,
    fs: float = 30.0,
    h: float = FD_STEP,
    tol: float = LOSS_TOL,
    coords_per_batch: int = 8,
    seed: int = 0,
) -> list[GradCheckRow]:
    """Loss-gradient rows, one per loss, over ``n_batches`` random batches."""
    components = {
        "bandwidth": ("bandwidth",),
        "sparsity": ("sparsity",),
        "variance": ("variance",),
        "combined": ("bandwidth", "sparsity", "variance"),
    }
    worst = {name: 0.0 for name in components}
    worst["negative_pearson"] = 0.0
    counts = {name: 0 for name in worst}
    cfg = SparsityConfig()
    root = np.random.SeedSequence(seed)
    for child in root.spawn(n_batches):
        rng = np.random.default_rng(child)
        batch = _draw_tie_free_batch(rng, batch_size, n_samples, fs)
        coords = [
            (int(rng.integers(batch_size)), int(rng.integers(n_samples)))
            for _ in range(coords_per_batch)
        ]
        for name, comps in components.items():
            _, grads, _ = combined_loss(
                batch, fs, DEFAULT_PULSE_BAND, cfg, components=comps
            )
            analytic = np.array([grads[i, t] for i, t in coords])
            numeric = np.empty_like(analytic)
            for j, (i, t) in enumerate(coords):
                plus = batch.copy()
                plus[i, t] += h
                minus = batch.copy()
                minus[i, t] -= h
                lp, _, _ = combined_loss(
                    plus, fs, DEFAULT_PULSE_BAND, cfg, components=comps
                )
                lm, _, _ = combined_loss(
                    minus, fs, DEFAULT_PULSE_BAND, cfg, components=comps
                )
                numeric[j] = (lp.total - lm.total) / (2 * h)
            scale = max(float(np.max(np.abs(grads))), 1e-10)
            err = float(np.max(np.abs(analytic - numeric))) / scale
            worst[name] = max(worst[name], err)
            counts[name] += len(coords)

        # negative Pearson on the first waveform against a random target
        pred = batch[0]
        target = rng.standard_normal(n_samples)
        _, grad = negative_pearson_loss(
            SignalWindow(pred, fs), SignalWindow(target, fs)
        )
        pick = [int(rng.integers(n_samples)) for _ in range(coords_per_batch)]
        analytic = grad[pick]
        numeric = np.empty_like(analytic)
        for j, t in enumerate(pick):
            plus = pred.copy()
            plus[t] += h
            minus = pred.copy()
            minus[t] -= h
            vp, _ = negative_pearson_loss(
                SignalWindow(plus, fs), SignalWindow(target, fs)
            )
            vm, _ = negative_pearson_loss(
                SignalWindow(minus, fs), SignalWindow(target, fs)
            )
            numeric[j] = (vp - vm) / (2 * h)
        scale = max(float(np.max(np.abs(grad))), 1e-10)
        err = float(np.max(np.abs(analytic - numeric))) / scale
        worst["negative_pearson"] = max(worst["negative_pearson"], err)
        counts["negative_pearson"] += len(pick)

    return [
        GradCheckRow(
            name=name,
            max_rel_err=worst[name],
            n_checks=counts[name],
            passed=worst[name] <= tol,
        )
        for name in worst
    ]


def _fd_check_graph(build, leaves, h=1e-6, seed_weights=None) -> float:
    """Worst global relative error of d(sum(w*out))/d(leaf) for one graph."""
    out = build(*leaves)
    rng = np.random.default_rng(99)
    w = rng.standard_normal(out.data.shape) if seed_weights is None else seed_weights
    for leaf in leaves:
        leaf.zero_grad()
    out.backward(seed=w)
    worst = 0.0
    for leaf in leaves:
        analytic = leaf.grad.ravel()
        numeric = np.empty_like(analytic)
        flat = leaf.data.ravel()
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            fp = float(np.sum(w * build(*leaves).data))
            flat[j] = orig - h
            fm = float(np.sum(w * build(*leaves).data))
            flat[j] = orig
            numeric[j] = (fp - fm) / (2 * h)
        worst = max(worst, _global_rel_err(analytic, numeric))
    return worst


def check_primitive_gradients(
    tol: float = PRIMITIVE_TOL, seed: int = 0
) -> list[GradCheckRow]:
    """One row per autodiff primitive, small random tensors."""
    rng = np.random.default_rng(seed)

    def t(*shape):
        return dc.Tensor(rng.standard_normal(shape), requires_grad=True)

    cases = {
        "add": (lambda a, b: dc.add(a, b), [t(4, 3), t(4, 3)]),
        "multiply": (lambda a, b: dc.multiply(a, b), [t(4, 3), t(4, 3)]),
        "matmul": (lambda a, b: dc.matmul(a, b), [t(4, 3), t(3, 5)]),
        "tanh": (lambda a: dc.tanh(a), [t(4, 3)]),
        "mean_over_axes": (lambda a: dc.mean_over_axes(a, (1, 2)), [t(3, 4, 5)]),
        "center": (lambda a: dc.center(a, axis=0), [t(6, 3)]),
        "slice_time": (lambda a: dc.slice_time(a, 2, 7), [t(9, 3)]),
        "concat": (lambda a, b: dc.concat([a, b], axis=0), [t(3, 2), t(4, 2)]),
        "replicate_pad": (lambda a: dc.replicate_pad(a, 2, 2, axis=0), [t(5, 3)]),
        "temporal_conv": (
            lambda x, k, b: dc.temporal_conv(x, k, b),
            [t(12, 3), t(5, 3, 4), t(4)],
        ),
        "conv3d": (
            lambda x, k, b: dc.conv3d(x, k, b),
            [t(7, 3, 3, 2), t(3, 3, 3, 2, 3), t(3)],
        ),
        "linear_resample": (lambda a: dc.linear_resample(a, 9), [t(6, 2)]),
    }
    rows = []
    for name, (build, leaves) in cases.items():
        err = _fd_check_graph(build, leaves)
        rows.append(
            GradCheckRow(
                name=f"primitive:{name}",
                max_rel_err=err,
                n_checks=sum(leaf.data.size for leaf in leaves),
                passed=err <= tol,
            )
        )
    return rows


def run_all(n_batches: int = 50, seed: int = 0) -> list[GradCheckRow]:
    return check_loss_gradients(n_batches=n_batches, seed=seed) + (
        check_primitive_gradients(seed=seed)
    )


def format_table(rows: list[GradCheckRow]) -> str:
    width = max(len(r.name) for r in rows)
    lines = [f"{'check'.ljust(width)}  max_rel_err  n_checks  result"]
    for r in rows:
        status = "PASS" if r.passed else "FAIL"
        lines.append(
            f"{r.name.ljust(width)}  {r.max_rel_err:11.3e}  {r.n_checks:8d}  {status}"
        )
    return "\n".join(lines)

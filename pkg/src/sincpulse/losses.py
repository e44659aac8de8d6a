"""Frequency-domain training losses with exact analytic gradients.

Three unsupervised losses shape the power spectrum of a predicted waveform:

* bandwidth: fraction of total power falling outside the admissible band,
* sparsity: fraction of in-band power falling outside a small window around
  the spectral peak,
* variance: squared distance between the batch-averaged normalized in-band
  spectrum and a uniform prior, computed on prefix sums (a discrete
  one-dimensional transport distance).

All three are ratios of non-negative quantities and therefore lie in [0, 1].
Each function returns the loss value together with the exact derivative with
respect to the power bins; :func:`combined_loss` chains those through the FFT
back to the time-domain samples.  A supervised negative-correlation loss is
included for comparison runs.

Every denominator is guarded by ``EPS``: a degenerate input (an all-zero
prediction, say) produces a defined zero loss with zero gradient and a
diagnostic flag instead of a NaN.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidConfigError, InvalidInputError
from .spectral import (
    DEFAULT_RESOLUTION_HZ,
    BandLimits,
    PowerSpectrum,
    SignalWindow,
    band_mask,
    power_gradient_to_samples,
    spectrum_and_coeffs,
)

EPS = 1e-8

# Relative slack when testing whether a bin sits inside the peak window.
_WINDOW_RTOL = 1e-9

COMPONENT_NAMES = ("bandwidth", "sparsity", "variance")


@dataclass(frozen=True)
class SparsityConfig:
    """Width of the spectral-peak window and the optional harmonic carve-out.

    ``delta_f`` is the half-width in Hz of the window around the peak whose
    power does not count as "spread" (default 0.1 Hz, i.e. 6 bpm).  With
    ``include_second_harmonic`` the window around twice the peak frequency is
    excluded from the penalty as well, so a strong second harmonic is not
    punished.
    """

    delta_f: float = 0.1
    include_second_harmonic: bool = False

    def __post_init__(self):
        if not (self.delta_f > 0):
            raise InvalidConfigError(f"delta_f must be positive, got {self.delta_f}")


@dataclass(frozen=True)
class LossBundle:
    bandwidth: float
    sparsity: float
    variance: float
    total: float

    def __post_init__(self):
        for name in ("bandwidth", "sparsity", "variance", "total"):
            v = getattr(self, name)
            if not np.isfinite(v):
                raise InvalidInputError(f"{name} loss is not finite: {v}")


@dataclass(frozen=True)
class BatchSpectra:
    """Power spectra of a batch of waveforms sharing one frequency grid."""

    power: np.ndarray  # (n, bins)
    freqs: np.ndarray
    fs: float
    n_fft: int
    n_samples: int

    def __post_init__(self):
        power = np.asarray(self.power, dtype=np.float64)
        object.__setattr__(self, "power", power)
        if power.ndim != 2 or power.shape[1] != self.freqs.size:
            raise InvalidInputError("batch power must be (n, bins) matching the grid")

    @classmethod
    def from_spectra(cls, spectra: list[PowerSpectrum]) -> "BatchSpectra":
        if not spectra:
            raise InvalidInputError("empty batch")
        first = spectra[0]
        for s in spectra[1:]:
            if (
                s.n_fft != first.n_fft
                or s.n_samples != first.n_samples
                or s.fs != first.fs
                or not np.array_equal(s.freqs, first.freqs)
            ):
                raise InvalidInputError("batch spectra must share one frequency grid")
        return cls(
            power=np.stack([s.power for s in spectra]),
            freqs=first.freqs,
            fs=first.fs,
            n_fft=first.n_fft,
            n_samples=first.n_samples,
        )

    @property
    def n(self) -> int:
        return self.power.shape[0]

    def sample(self, i: int) -> PowerSpectrum:
        return PowerSpectrum(
            power=self.power[i],
            freqs=self.freqs,
            fs=self.fs,
            n_fft=self.n_fft,
            n_samples=self.n_samples,
        )


@dataclass
class BinLossResult:
    """Loss value with its derivative over the full power grid."""

    value: float
    grad_power: np.ndarray
    degenerate: bool = False


@dataclass
class BatchBinLossResult:
    value: float
    grad_power: np.ndarray  # (n, bins)
    degenerate_samples: np.ndarray  # bool, (n,)


@dataclass
class LossDiagnostics:
    """Per-sample degeneracy flags raised by the epsilon fallbacks."""

    zero_power: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    zero_in_band: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    variance_fallback: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    def any(self) -> bool:
        return bool(
            self.zero_power.any() or self.zero_in_band.any() or self.variance_fallback.any()
        )


def bandwidth_loss(spec: PowerSpectrum, band: BandLimits) -> BinLossResult:
    """Fraction of total spectral power outside the band, with bin gradient.

    For L = out / total the exact derivative is
    dL/dp_i = (1{i outside band} - L) / total.
    """
    mask = band_mask(spec, band)
    p = spec.power
    total = float(np.sum(p))
    if total < EPS:
        return BinLossResult(0.0, np.zeros_like(p), degenerate=True)
    in_band = float(np.sum(p[mask]))
    value = (total - in_band) / total
    indicator = np.ones_like(p)
    indicator[mask] = 0.0
    grad = (indicator - value) / total
    return BinLossResult(value, grad)


def _peak_window_mask(
    freqs_in_band: np.ndarray, peak_freq: float, cfg: SparsityConfig
) -> np.ndarray:
    tol = _WINDOW_RTOL * max(1.0, abs(peak_freq))
    window = np.abs(freqs_in_band - peak_freq) <= cfg.delta_f + tol
    if cfg.include_second_harmonic:
        window |= np.abs(freqs_in_band - 2.0 * peak_freq) <= cfg.delta_f + tol
    return window


def sparsity_loss(
    spec: PowerSpectrum, band: BandLimits, cfg: SparsityConfig = SparsityConfig()
) -> BinLossResult:
    """In-band power outside the peak window, as a fraction of in-band power.

    The peak is the largest in-band bin (ties go to the lowest frequency) and
    is treated as a constant by the gradient; the loss is piecewise smooth in
    the bin values.  The window is [peak - delta_f, peak + delta_f] clipped to
    the band, plus the same window around the second harmonic when enabled.
    """
    if 2.0 * cfg.delta_f >= band.width_hz:
        raise InvalidConfigError(
            f"peak window (2 x {cfg.delta_f} Hz) must be narrower than the band "
            f"({band.width_hz} Hz)"
        )
    mask = band_mask(spec, band)
    p = spec.power
    u = p[mask]
    in_band_total = float(np.sum(u))
    if in_band_total < EPS:
        return BinLossResult(0.0, np.zeros_like(p), degenerate=True)
    freqs = spec.freqs[mask]
    peak_freq = float(freqs[int(np.argmax(u))])  # first max = lowest frequency
    window = _peak_window_mask(freqs, peak_freq, cfg)
    spread = float(np.sum(u[~window]))
    value = spread / in_band_total
    grad = np.zeros_like(p)
    indicator = (~window).astype(np.float64)
    grad[mask] = (indicator - value) / in_band_total
    return BinLossResult(value, grad)


def _uniform_cdf(d: int) -> np.ndarray:
    return np.arange(1, d + 1, dtype=np.float64) / d


def variance_loss(
    batch: BatchSpectra,
    band: BandLimits,
    pool_before_normalize: bool = False,
) -> BatchBinLossResult:
    """Distance between the batch-mean in-band distribution and uniform.

    Each sample's in-band power vector is normalized to sum one, the batch
    mean Q of those distributions is compared against the uniform prior P via
    L = (1/d) * sum_i (CDF_i(Q) - CDF_i(P))^2 over prefix sums in ascending
    frequency order.  ``pool_before_normalize`` switches to the alternative
    reading that sums raw in-band power across the batch first and normalizes
    once.

    A sample with in-band power below ``EPS`` contributes the uniform
    distribution with a zero gradient and raises a diagnostic flag.
    """
    n = batch.n
    if n < 2:
        raise InvalidInputError(f"variance loss needs a batch of at least 2, got {n}")
    mask = band_mask(batch.sample(0), band)
    u = batch.power[:, mask]  # (n, d)
    d = u.shape[1]
    sums = u.sum(axis=1)
    degenerate = sums < EPS

    cdf_p = _uniform_cdf(d)
    grad = np.zeros_like(batch.power)
    if degenerate.all():
        return BatchBinLossResult(0.0, grad, degenerate)

    if pool_before_normalize:
        pooled = u[~degenerate].sum(axis=0) if (~degenerate).any() else np.zeros(d)
        s = float(pooled.sum())
        if s < EPS:
            return BatchBinLossResult(0.0, grad, np.ones(n, dtype=bool))
        q = pooled / s
        cdf_q = np.cumsum(q)
        diff = cdf_q - cdf_p
        value = float(np.sum(diff**2) / d)
        g_q = (2.0 / d) * np.cumsum(diff[::-1])[::-1]  # adjoint of prefix sum
        g_pooled = (g_q - float(np.dot(g_q, q))) / s  # adjoint of normalization
        for i in range(n):
            if not degenerate[i]:
                grad[i, mask] = g_pooled
        return BatchBinLossResult(value, grad, degenerate)

    v = np.empty_like(u)
    for i in range(n):
        if degenerate[i]:
            v[i] = 1.0 / d
        else:
            v[i] = u[i] / sums[i]
    q = v.mean(axis=0)
    cdf_q = np.cumsum(q)
    diff = cdf_q - cdf_p
    value = float(np.sum(diff**2) / d)
    g_q = (2.0 / d) * np.cumsum(diff[::-1])[::-1]
    g_v = g_q / n
    for i in range(n):
        if degenerate[i]:
            continue
        grad[i, mask] = (g_v - float(np.dot(g_v, v[i]))) / sums[i]
    return BatchBinLossResult(value, grad, degenerate)


def combined_loss(
    waveforms: np.ndarray,
    fs: float,
    band: BandLimits,
    cfg: SparsityConfig = SparsityConfig(),
    target_resolution_hz: float = DEFAULT_RESOLUTION_HZ,
    components: tuple[str, ...] = COMPONENT_NAMES,
    pool_before_normalize: bool = False,
) -> tuple[LossBundle, np.ndarray, LossDiagnostics]:
    """Sum of the selected losses over a batch, with time-domain gradients.

    ``waveforms`` is an (n, T) array of predictions sharing one sampling rate.
    Bandwidth and sparsity are averaged over the batch; the variance loss sees
    the whole batch at once.  The three components are summed without weights;
    a component not listed in ``components`` is reported as 0 and contributes
    no gradient (used by the loss-ablation studies).

    Returns the bundle, a gradient array shaped like ``waveforms`` holding
    d(total)/d(sample), and per-sample degeneracy diagnostics.
    """
    w = np.asarray(waveforms, dtype=np.float64)
    if w.ndim != 2:
        raise InvalidInputError("waveform batch must be a 2-D (n, T) array")
    n = w.shape[0]
    if n < 1 or (n < 2 and "variance" in components):
        raise InvalidInputError(
            f"got a batch of {n}: the variance component compares spectra "
            "across samples and needs at least 2"
        )
    unknown = set(components) - set(COMPONENT_NAMES)
    if unknown:
        raise InvalidConfigError(f"unknown loss components: {sorted(unknown)}")

    spectra = []
    coeffs = []
    for i in range(n):
        s, c = spectrum_and_coeffs(w[i], fs, target_resolution_hz)
        spectra.append(s)
        coeffs.append(c)
    batch = BatchSpectra.from_spectra(spectra)
    diag = LossDiagnostics(
        zero_power=np.zeros(n, dtype=bool),
        zero_in_band=np.zeros(n, dtype=bool),
        variance_fallback=np.zeros(n, dtype=bool),
    )

    g_power = np.zeros_like(batch.power)
    bandwidth = sparsity = variance = 0.0

    if "bandwidth" in components:
        values = []
        for i in range(n):
            r = bandwidth_loss(batch.sample(i), band)
            values.append(r.value)
            g_power[i] += r.grad_power / n
            diag.zero_power[i] |= r.degenerate
        bandwidth = float(np.mean(values))

    if "sparsity" in components:
        values = []
        for i in range(n):
            r = sparsity_loss(batch.sample(i), band, cfg)
            values.append(r.value)
            g_power[i] += r.grad_power / n
            diag.zero_in_band[i] |= r.degenerate
        sparsity = float(np.mean(values))

    if "variance" in components:
        r = variance_loss(batch, band, pool_before_normalize=pool_before_normalize)
        variance = r.value
        g_power += r.grad_power
        diag.variance_fallback |= r.degenerate_samples

    grads = np.empty_like(w)
    for i in range(n):
        grads[i] = power_gradient_to_samples(
            g_power[i], coeffs[i], batch.n_fft, w.shape[1]
        )

    bundle = LossBundle(
        bandwidth=bandwidth,
        sparsity=sparsity,
        variance=variance,
        total=bandwidth + sparsity + variance,
    )
    return bundle, grads, diag


def negative_pearson_loss(
    pred: SignalWindow, target: SignalWindow
) -> tuple[float, np.ndarray]:
    """Negative correlation between prediction and target, with gradient.

    Returns (-r, d(-r)/d(pred)).  Perfectly correlated inputs give -1.  A
    constant input has no defined correlation and is rejected.
    """
    x = pred.samples
    y = target.samples
    if x.size != y.size:
        raise InvalidInputError(
            f"prediction and target lengths differ: {x.size} vs {y.size}"
        )
    a = x - x.mean()
    b = y - y.mean()
    saa = float(np.dot(a, a))
    sbb = float(np.dot(b, b))
    if saa < EPS or sbb < EPS:
        raise InvalidInputError("correlation undefined for (near-)constant input")
    sab = float(np.dot(a, b))
    denom = np.sqrt(saa * sbb)
    r = sab / denom
    # dr/da_i = b_i / denom - (sab / saa) * a_i / denom, then the centering
    # adjoint (subtract the mean) and a sign flip for the loss.
    g_a = b / denom - (sab / saa) * a / denom
    g = -(g_a - g_a.mean())
    return -r, g

"""One-sided power spectra on a deterministic zero-padded frequency grid.

A spectrum is computed by removing the sample mean, zero-padding to reach a
requested bin spacing, and taking squared magnitudes of the positive-frequency
DFT coefficients.  The DC bin is dropped, so an additive offset never shows up
in any downstream ratio.

Normalization: ``power[k] = |X_k|^2`` with the unnormalized DFT, therefore
``sum(power) = (n_fft * sum(x_centered**2) + nyquist_power) / 2`` where the
Nyquist term is present only for even ``n_fft``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfigError, InvalidInputError

# Grid spacing of one third of a beat per minute, the spacing used throughout
# the training and evaluation pipeline.
DEFAULT_RESOLUTION_HZ = 1.0 / 180.0

# Relative slack for band-edge comparisons; far below any realistic bin
# spacing but enough to absorb float rounding of k*fs/n.
_EDGE_RTOL = 1e-9


@dataclass(frozen=True)
class SignalWindow:
    """A finite real-valued signal with its sampling rate in Hz."""

    samples: np.ndarray
    fs: float

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        object.__setattr__(self, "samples", samples)
        if samples.ndim != 1 or samples.size < 2:
            raise InvalidInputError("signal must be 1-D with at least 2 samples")
        if not np.all(np.isfinite(samples)):
            raise InvalidInputError("signal contains non-finite samples")
        if not (self.fs > 0):
            raise InvalidInputError(f"sampling rate must be positive, got {self.fs}")

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.fs

    def natural_resolution_hz(self) -> float:
        return self.fs / self.samples.size


@dataclass(frozen=True)
class PowerSpectrum:
    """One-sided power spectrum over an equally spaced positive frequency grid."""

    power: np.ndarray
    freqs: np.ndarray
    fs: float
    n_fft: int
    n_samples: int

    def __post_init__(self):
        power = np.asarray(self.power, dtype=np.float64)
        freqs = np.asarray(self.freqs, dtype=np.float64)
        object.__setattr__(self, "power", power)
        object.__setattr__(self, "freqs", freqs)
        if power.shape != freqs.shape or power.ndim != 1:
            raise InvalidInputError("power and freqs must be 1-D arrays of equal length")
        if freqs[0] <= 0:
            raise InvalidInputError("frequency grid must exclude DC")
        if np.any(np.diff(freqs) <= 0):
            raise InvalidInputError("frequency grid must be strictly increasing")
        if np.any(power < 0):
            raise InvalidInputError("power bins must be non-negative")

    @property
    def bin_spacing_hz(self) -> float:
        return self.fs / self.n_fft

    def total_power(self) -> float:
        return float(np.sum(self.power))


@dataclass(frozen=True)
class BandLimits:
    """Closed frequency window [lo_hz, hi_hz] in Hz."""

    lo_hz: float
    hi_hz: float

    def __post_init__(self):
        if not (0 < self.lo_hz <= self.hi_hz):
            raise InvalidConfigError(
                f"band limits must satisfy 0 < lo <= hi, got [{self.lo_hz}, {self.hi_hz}]"
            )

    @property
    def width_hz(self) -> float:
        return self.hi_hz - self.lo_hz


# Admissible pulse window of 40 to 180 bpm.
DEFAULT_PULSE_BAND = BandLimits(2.0 / 3.0, 3.0)


def padded_length(n_samples: int, fs: float, target_resolution_hz: float) -> int:
    """Smallest FFT length whose bin spacing is at most the target resolution."""
    if not (target_resolution_hz > 0):
        raise InvalidConfigError("target resolution must be positive")
    natural = fs / n_samples
    if target_resolution_hz > natural * (1 + 1e-12):
        raise InvalidConfigError(
            f"target resolution {target_resolution_hz} Hz is coarser than the natural "
            f"resolution {natural} Hz; padding only, never truncation"
        )
    # The 1e-9 slack keeps fs/res ratios that are mathematically integral
    # (e.g. 30 / (1/180) = 5400) from ceiling up on float error.
    n = int(math.ceil(fs / target_resolution_hz - 1e-9))
    return max(n, n_samples)


def _hann(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def power_spectrum(
    sig: SignalWindow,
    target_resolution_hz: float = DEFAULT_RESOLUTION_HZ,
    taper: bool = False,
) -> PowerSpectrum:
    """One-sided power spectrum of ``sig`` on a grid of the requested spacing.

    The mean is removed, the signal is zero-padded to ``padded_length`` and the
    squared magnitudes of the positive-frequency DFT bins are returned; the DC
    bin is dropped.  ``taper=True`` applies a Hann window after mean removal.
    """
    spectrum, _ = spectrum_and_coeffs(
        sig.samples, sig.fs, target_resolution_hz, taper=taper
    )
    return spectrum


def spectrum_and_coeffs(
    samples: np.ndarray,
    fs: float,
    target_resolution_hz: float = DEFAULT_RESOLUTION_HZ,
    taper: bool = False,
) -> tuple[PowerSpectrum, np.ndarray]:
    """Like :func:`power_spectrum` but also returns the kept DFT coefficients.

    The coefficients are needed to run the exact gradient chain back to the
    time domain (:func:`power_gradient_to_samples`).
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1 or x.size < 2:
        raise InvalidInputError("signal must be 1-D with at least 2 samples")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("signal contains non-finite samples")
    n = x.size
    n_fft = padded_length(n, fs, target_resolution_hz)
    centered = x - x.mean()
    if taper:
        centered = centered * _hann(n)
    coeffs = np.fft.rfft(centered, n=n_fft)[1:]  # drop DC
    power = np.abs(coeffs) ** 2
    k = np.arange(1, coeffs.size + 1, dtype=np.float64)
    freqs = (k * fs) / n_fft
    spectrum = PowerSpectrum(
        power=power, freqs=freqs, fs=fs, n_fft=n_fft, n_samples=n
    )
    return spectrum, coeffs


def power_gradient_to_samples(
    g_power: np.ndarray,
    coeffs: np.ndarray,
    n_fft: int,
    n_samples: int,
    taper: bool = False,
) -> np.ndarray:
    """Pull a gradient on power bins back to the time-domain samples.

    The spectrum is a fixed linear map (centering, optional taper, zero
    padding, DFT) followed by squared magnitudes, so the exact adjoint is one
    inverse FFT: for L = sum_k g_k |X_k|^2 the derivative w.r.t. sample x_n is
    2 Re(sum_k g_k X_k e^{2 pi i k n / N}) followed by the centering adjoint.
    """
    g_power = np.asarray(g_power, dtype=np.float64)
    if g_power.shape != coeffs.shape:
        raise InvalidInputError("gradient and coefficient arrays must match")
    full = np.zeros(n_fft, dtype=np.complex128)
    full[1 : coeffs.size + 1] = g_power * coeffs
    g_pad = 2.0 * np.real(np.fft.ifft(full) * n_fft)
    g = g_pad[:n_samples]
    if taper:
        g = g * _hann(n_samples)
    return g - g.mean()


def band_mask(spec: PowerSpectrum, band: BandLimits) -> slice:
    """Contiguous bin range with band.lo <= freq <= band.hi, endpoints inclusive.

    The length of the range is the in-band bin count used by the variance
    loss's uniform prior.
    """
    if band.hi_hz >= spec.fs / 2 + _EDGE_RTOL * spec.fs:
        raise InvalidConfigError(
            f"band upper edge {band.hi_hz} Hz reaches Nyquist ({spec.fs / 2} Hz)"
        )
    freqs = spec.freqs
    lo = band.lo_hz * (1 - _EDGE_RTOL)
    hi = band.hi_hz * (1 + _EDGE_RTOL)
    start = int(np.searchsorted(freqs, lo, side="left"))
    stop = int(np.searchsorted(freqs, hi, side="right"))
    if stop <= start:
        raise InvalidConfigError(
            f"band [{band.lo_hz}, {band.hi_hz}] Hz contains no bins on a grid "
            f"with spacing {spec.bin_spacing_hz} Hz"
        )
    return slice(start, stop)


def band_bin_count(spec: PowerSpectrum, band: BandLimits) -> int:
    mask = band_mask(spec, band)
    return mask.stop - mask.start

"""Loss values against closed forms and a brute-force DFT, gradients against
central finite differences."""

import numpy as np
import pytest

from sincpulse.errors import InvalidConfigError, InvalidInputError
from sincpulse.losses import (
    BatchSpectra,
    SparsityConfig,
    bandwidth_loss,
    combined_loss,
    negative_pearson_loss,
    sparsity_loss,
    variance_loss,
)
from sincpulse.spectral import (
    DEFAULT_PULSE_BAND,
    BandLimits,
    PowerSpectrum,
    SignalWindow,
    power_spectrum,
)

FS = 30.0


def tone(freq_hz, n, amplitude=1.0, phase=0.0, fs=FS):
    t = np.arange(n) / fs
    return amplitude * np.sin(2 * np.pi * freq_hz * t + phase)


def natural_spectrum(x, fs=FS):
    """Spectrum without zero padding, so grid-aligned tones occupy one bin."""
    return power_spectrum(SignalWindow(x, fs), target_resolution_hz=fs / len(x))


def synthetic_grid(bins=60, fs=10.0, n_fft=120):
    freqs = (np.arange(1, bins + 1) * fs) / n_fft
    return freqs, fs, n_fft


def make_spec(power, freqs, fs, n_fft):
    return PowerSpectrum(power=power, freqs=freqs, fs=fs, n_fft=n_fft, n_samples=50)


class TestBandwidthLoss:
    def test_in_band_tone_is_zero(self):
        spec = natural_spectrum(tone(1.5, 120))
        assert bandwidth_loss(spec, DEFAULT_PULSE_BAND).value == pytest.approx(0.0, abs=1e-6)

    def test_out_of_band_tone_is_one(self):
        # 0.2 Hz needs a 5 s window to sit on the natural grid.
        spec = natural_spectrum(tone(0.2, 150))
        assert bandwidth_loss(spec, DEFAULT_PULSE_BAND).value == pytest.approx(1.0, abs=1e-6)

    def test_half_in_half_out(self):
        spec = natural_spectrum(tone(1.5, 120) + tone(3.5, 120))
        assert bandwidth_loss(spec, DEFAULT_PULSE_BAND).value == pytest.approx(0.5, abs=1e-3)

    def test_degenerate_zero_power(self):
        spec = natural_spectrum(np.zeros(120))
        r = bandwidth_loss(spec, DEFAULT_PULSE_BAND)
        assert r.value == 0.0 and r.degenerate
        np.testing.assert_array_equal(r.grad_power, 0.0)

    def test_bin_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(42)
        freqs, fs, n_fft = synthetic_grid()
        band = BandLimits(1.0, 3.0)
        p = rng.uniform(0.1, 2.0, freqs.size)
        r = bandwidth_loss(make_spec(p, freqs, fs, n_fft), band)
        h = 1e-7
        numeric = np.zeros_like(p)
        for i in range(p.size):
            pp, pm = p.copy(), p.copy()
            pp[i] += h
            pm[i] -= h
            numeric[i] = (
                bandwidth_loss(make_spec(pp, freqs, fs, n_fft), band).value
                - bandwidth_loss(make_spec(pm, freqs, fs, n_fft), band).value
            ) / (2 * h)
        np.testing.assert_allclose(r.grad_power, numeric, atol=1e-6 * np.max(np.abs(numeric)))


class TestSparsityLoss:
    def test_single_tone_is_concentrated(self):
        spec = natural_spectrum(tone(1.5, 120))
        assert sparsity_loss(spec, DEFAULT_PULSE_BAND).value < 1e-3

    def test_two_separated_tones_split_evenly(self):
        spec = natural_spectrum(tone(1.0, 120) + tone(2.0, 120))
        r = sparsity_loss(spec, DEFAULT_PULSE_BAND)
        assert r.value == pytest.approx(0.5, abs=1e-3)

    def test_tie_breaks_to_lower_frequency(self):
        # Two bit-identical peaks at 1.25 and 2.5 Hz: the window must sit on
        # the lower one, which the harmonic carve-out (2 x 1.25 = 2.5 Hz)
        # makes observable: the loss collapses only if 1.25 Hz won the tie.
        freqs, fs, n_fft = synthetic_grid()
        band = BandLimits(1.0, 3.0)
        p = np.zeros(freqs.size)
        p[14] = p[29] = 2.0  # bins at exactly 1.25 and 2.5 Hz
        spec = make_spec(p, freqs, fs, n_fft)
        plain = sparsity_loss(spec, band, SparsityConfig(delta_f=0.3))
        harm = sparsity_loss(
            spec, band, SparsityConfig(delta_f=0.3, include_second_harmonic=True)
        )
        assert plain.value == pytest.approx(0.5, abs=1e-12)
        assert harm.value == pytest.approx(0.0, abs=1e-12)

    def test_second_harmonic_flag(self):
        spec = natural_spectrum(tone(1.0, 120) + tone(2.0, 120, amplitude=0.5))
        off = sparsity_loss(spec, DEFAULT_PULSE_BAND)
        on = sparsity_loss(
            spec, DEFAULT_PULSE_BAND, SparsityConfig(include_second_harmonic=True)
        )
        # Power ratio 1 : 0.25, so the harmonic holds 0.2 of in-band power.
        assert off.value == pytest.approx(0.2, abs=1e-2)
        assert on.value < 1e-3

    def test_window_wider_than_band_rejected(self):
        spec = natural_spectrum(tone(1.5, 120))
        with pytest.raises(InvalidConfigError):
            sparsity_loss(spec, BandLimits(1.0, 1.15), SparsityConfig(delta_f=0.1))

    def test_degenerate_no_in_band_power(self):
        spec = natural_spectrum(tone(0.2, 150))
        r = sparsity_loss(spec, BandLimits(1.0, 3.0))
        assert r.value == 0.0 and r.degenerate

    def test_moving_power_to_peak_never_increases_loss(self):
        rng = np.random.default_rng(8)
        freqs, fs, n_fft = synthetic_grid()
        band = BandLimits(1.0, 3.0)
        cfg = SparsityConfig(delta_f=0.3)
        p = rng.uniform(0.1, 2.0, freqs.size)
        base = sparsity_loss(make_spec(p, freqs, fs, n_fft), band, cfg)
        peak_idx = int(np.argmax(np.where((freqs >= 1.0) & (freqs <= 3.0), p, -1)))
        donor = int(np.argmin(np.where((freqs >= 1.0) & (freqs <= 3.0), p, np.inf)))
        moved = p.copy()
        moved[peak_idx] += moved[donor]
        moved[donor] = 0.0
        after = sparsity_loss(make_spec(moved, freqs, fs, n_fft), band, cfg)
        assert after.value <= base.value + 1e-12

    def test_bin_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(43)
        freqs, fs, n_fft = synthetic_grid()
        band = BandLimits(1.0, 3.0)
        cfg = SparsityConfig(delta_f=0.3)
        p = rng.uniform(0.1, 2.0, freqs.size)
        r = sparsity_loss(make_spec(p, freqs, fs, n_fft), band, cfg)
        h = 1e-7
        numeric = np.zeros_like(p)
        for i in range(p.size):
            pp, pm = p.copy(), p.copy()
            pp[i] += h
            pm[i] -= h
            numeric[i] = (
                sparsity_loss(make_spec(pp, freqs, fs, n_fft), band, cfg).value
                - sparsity_loss(make_spec(pm, freqs, fs, n_fft), band, cfg).value
            ) / (2 * h)
        np.testing.assert_allclose(r.grad_power, numeric, atol=1e-6 * np.max(np.abs(numeric)))


def make_batch(power, freqs, fs, n_fft):
    return BatchSpectra(power=power, freqs=freqs, fs=fs, n_fft=n_fft, n_samples=50)


class TestVarianceLoss:
    def grid(self):
        # 30 fps, n_fft 5400: the full 421-bin pulse band.
        freqs = (np.arange(1, 2701) * FS) / 5400
        return freqs, FS, 5400

    def test_uniform_batch_is_zero(self):
        freqs, fs, n_fft = self.grid()
        power = np.zeros((3, freqs.size))
        band_bins = (freqs >= 2 / 3 - 1e-12) & (freqs <= 3.0 + 1e-12)
        power[:, band_bins] = 1.0
        r = variance_loss(make_batch(power, freqs, fs, n_fft), DEFAULT_PULSE_BAND)
        assert r.value == pytest.approx(0.0, abs=1e-12)

    def test_step_at_lowest_bin_closed_form(self):
        freqs, fs, n_fft = self.grid()
        power = np.zeros((2, freqs.size))
        lowest = int(np.argmax(freqs >= 2 / 3 - 1e-12))
        power[:, lowest] = 5.0
        r = variance_loss(make_batch(power, freqs, fs, n_fft), DEFAULT_PULSE_BAND)
        d = 421
        want = sum((1 - (i + 1) / d) ** 2 for i in range(d)) / d  # 0.332147
        assert r.value == pytest.approx(want, rel=1e-12)
        assert r.value == pytest.approx(0.3325, abs=1e-3)

    def test_step_at_middle_bin_closed_form(self):
        freqs, fs, n_fft = self.grid()
        power = np.zeros((2, freqs.size))
        lowest = int(np.argmax(freqs >= 2 / 3 - 1e-12))
        d, m = 421, 210
        power[:, lowest + m] = 1.0
        r = variance_loss(make_batch(power, freqs, fs, n_fft), DEFAULT_PULSE_BAND)
        want = (
            sum(((i + 1) / d) ** 2 for i in range(m))
            + sum((1 - (i + 1) / d) ** 2 for i in range(m, d))
        ) / d
        assert r.value == pytest.approx(want, rel=1e-12)
        assert r.value == pytest.approx(1 / 12, abs=1e-3)

    def test_batch_of_one_rejected(self):
        freqs, fs, n_fft = self.grid()
        with pytest.raises(InvalidInputError):
            variance_loss(make_batch(np.ones((1, freqs.size)), freqs, fs, n_fft), DEFAULT_PULSE_BAND)

    def test_degenerate_sample_contributes_uniform(self):
        freqs, fs, n_fft = self.grid()
        power = np.zeros((2, freqs.size))
        band_bins = (freqs >= 2 / 3 - 1e-12) & (freqs <= 3.0 + 1e-12)
        power[0, band_bins] = 1.0  # uniform sample
        # sample 1 has zero in-band power -> contributes uniform too
        r = variance_loss(make_batch(power, freqs, fs, n_fft), DEFAULT_PULSE_BAND)
        assert r.value == pytest.approx(0.0, abs=1e-12)
        assert r.degenerate_samples.tolist() == [False, True]
        np.testing.assert_array_equal(r.grad_power[1], 0.0)

    @pytest.mark.parametrize("pool", [False, True])
    def test_gradient_matches_finite_differences(self, pool):
        rng = np.random.default_rng(44)
        freqs, fs, n_fft = synthetic_grid()
        band = BandLimits(1.0, 3.0)
        P = rng.uniform(0.1, 2.0, (3, freqs.size))
        r = variance_loss(make_batch(P, freqs, fs, n_fft), band, pool_before_normalize=pool)
        h = 1e-7
        numeric = np.zeros_like(P)
        for i in range(P.shape[0]):
            for j in range(P.shape[1]):
                Pp, Pm = P.copy(), P.copy()
                Pp[i, j] += h
                Pm[i, j] -= h
                numeric[i, j] = (
                    variance_loss(make_batch(Pp, freqs, fs, n_fft), band, pool).value
                    - variance_loss(make_batch(Pm, freqs, fs, n_fft), band, pool).value
                ) / (2 * h)
        np.testing.assert_allclose(
            r.grad_power, numeric, atol=1e-6 * np.max(np.abs(numeric))
        )


def brute_force_bundle(wav, fs=FS, n_fft=5400, delta_f=0.1):
    """Single-waveform loss values by naive DFT, no shared code with losses."""
    x = wav - wav.mean()
    n = np.arange(x.size)
    power = np.empty(n_fft // 2)
    for k in range(1, n_fft // 2 + 1):
        re = np.sum(x * np.cos(2 * np.pi * k * n / n_fft))
        im = -np.sum(x * np.sin(2 * np.pi * k * n / n_fft))
        power[k - 1] = re * re + im * im
    freqs = (np.arange(1, n_fft // 2 + 1) * fs) / n_fft
    band = (freqs >= 2 / 3 - 1e-12) & (freqs <= 3.0 + 1e-12)
    total, inb = power.sum(), power[band].sum()
    lb = (total - inb) / total
    fb, ub = freqs[band], power[band]
    peak = fb[int(np.argmax(ub))]
    window = np.abs(fb - peak) <= delta_f + 1e-12
    ls = ub[~window].sum() / inb
    v = ub / inb
    d = v.size
    cdf_q = np.cumsum(v)
    cdf_p = np.arange(1, d + 1) / d
    lv = np.sum((cdf_q - cdf_p) ** 2) / d
    return lb, ls, lv


class TestCombinedLoss:
    def test_identical_tone_batch_matches_brute_force(self):
        w = np.stack([tone(1.2, 120)] * 4)
        bundle, grads, diag = combined_loss(w, FS, DEFAULT_PULSE_BAND)
        lb, ls, lv = brute_force_bundle(w[0])
        assert bundle.bandwidth == pytest.approx(lb, rel=1e-9)
        assert bundle.sparsity == pytest.approx(ls, rel=1e-9)
        assert bundle.variance == pytest.approx(lv, rel=1e-9)
        assert bundle.total == pytest.approx(lb + ls + lv, rel=1e-12)
        assert not diag.any()
        assert grads.shape == w.shape

    def test_out_of_band_batch_saturates_bandwidth(self):
        w = np.stack([tone(0.2, 150), tone(0.2, 150, phase=1.0)])
        bundle, _, _ = combined_loss(
            w, FS, DEFAULT_PULSE_BAND, target_resolution_hz=FS / 150
        )
        assert bundle.bandwidth == pytest.approx(1.0, abs=1e-6)
        assert bundle.bandwidth >= max(bundle.sparsity, bundle.variance)

    def test_all_zero_batch_is_degenerate(self):
        bundle, grads, diag = combined_loss(np.zeros((3, 120)), FS, DEFAULT_PULSE_BAND)
        assert bundle.total == 0.0
        assert diag.any()
        np.testing.assert_array_equal(grads, 0.0)

    def test_amplitude_invariance(self):
        rng = np.random.default_rng(4)
        w = rng.standard_normal((3, 120))
        a, _, _ = combined_loss(w, FS, DEFAULT_PULSE_BAND)
        b, _, _ = combined_loss(7.3 * w, FS, DEFAULT_PULSE_BAND)
        assert abs(a.bandwidth - b.bandwidth) < 1e-9
        assert abs(a.sparsity - b.sparsity) < 1e-9

    def test_losses_stay_in_unit_interval(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            w = rng.standard_normal((3, 90)) * rng.uniform(0.01, 100)
            bundle, _, _ = combined_loss(w, FS, DEFAULT_PULSE_BAND)
            for v in (bundle.bandwidth, bundle.sparsity, bundle.variance):
                assert 0.0 <= v <= 1.0

    def test_component_selection(self):
        rng = np.random.default_rng(6)
        w = rng.standard_normal((3, 90))
        full, _, _ = combined_loss(w, FS, DEFAULT_PULSE_BAND)
        only_b, gb, _ = combined_loss(w, FS, DEFAULT_PULSE_BAND, components=("bandwidth",))
        assert only_b.bandwidth == pytest.approx(full.bandwidth, rel=1e-12)
        assert only_b.sparsity == 0.0 and only_b.variance == 0.0
        assert only_b.total == pytest.approx(only_b.bandwidth)

    def test_unknown_component_rejected(self):
        with pytest.raises(InvalidConfigError):
            combined_loss(np.zeros((2, 60)), FS, DEFAULT_PULSE_BAND, components=("entropy",))

    def test_batch_of_one_rejected(self):
        # the variance component is inherently cross-sample
        with pytest.raises(InvalidInputError):
            combined_loss(np.zeros((1, 60)), FS, DEFAULT_PULSE_BAND)

    def test_batch_of_one_fine_without_variance(self):
        t = np.arange(60) / FS
        w = np.sin(2 * np.pi * 1.5 * t)[None, :]
        bundle, grads, _ = combined_loss(
            w, FS, DEFAULT_PULSE_BAND, components=("bandwidth", "sparsity")
        )
        assert np.isfinite(bundle.total)
        assert grads.shape == w.shape

    @pytest.mark.parametrize(
        "components",
        [("bandwidth",), ("sparsity",), ("variance",), ("bandwidth", "sparsity", "variance")],
    )
    def test_time_domain_gradient_matches_finite_differences(self, components):
        rng = np.random.default_rng(45)
        fs, band, cfg, res = 10.0, BandLimits(1.0, 3.0), SparsityConfig(delta_f=0.3), 1 / 24
        w = rng.standard_normal((3, 40))
        bundle, grads, _ = combined_loss(
            w, fs, band, cfg, target_resolution_hz=res, components=components
        )
        h = 1e-5
        numeric = np.zeros_like(w)
        for i in range(w.shape[0]):
            for j in range(w.shape[1]):
                wp, wm = w.copy(), w.copy()
                wp[i, j] += h
                wm[i, j] -= h
                tp = combined_loss(wp, fs, band, cfg, target_resolution_hz=res, components=components)[0].total
                tm = combined_loss(wm, fs, band, cfg, target_resolution_hz=res, components=components)[0].total
                numeric[i, j] = (tp - tm) / (2 * h)
        scale = np.max(np.abs(numeric))
        np.testing.assert_allclose(grads, numeric, atol=1e-5 * scale)

    def test_pooled_variance_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(46)
        fs, band, cfg, res = 10.0, BandLimits(1.0, 3.0), SparsityConfig(delta_f=0.3), 1 / 24
        w = rng.standard_normal((3, 40))
        _, grads, _ = combined_loss(
            w, fs, band, cfg, target_resolution_hz=res,
            components=("variance",), pool_before_normalize=True,
        )
        h = 1e-5
        numeric = np.zeros_like(w)
        for i in range(w.shape[0]):
            for j in range(w.shape[1]):
                wp, wm = w.copy(), w.copy()
                wp[i, j] += h
                wm[i, j] -= h
                tp = combined_loss(wp, fs, band, cfg, target_resolution_hz=res,
                                   components=("variance",), pool_before_normalize=True)[0].total
                tm = combined_loss(wm, fs, band, cfg, target_resolution_hz=res,
                                   components=("variance",), pool_before_normalize=True)[0].total
                numeric[i, j] = (tp - tm) / (2 * h)
        np.testing.assert_allclose(grads, numeric, atol=1e-5 * np.max(np.abs(numeric)))


class TestNegativePearson:
    def sig(self, x):
        return SignalWindow(np.asarray(x, dtype=float), FS)

    def test_perfect_correlation(self):
        x = tone(1.0, 60)
        v, _ = negative_pearson_loss(self.sig(x), self.sig(x))
        assert v == pytest.approx(-1.0, abs=1e-12)

    def test_perfect_anticorrelation(self):
        x = tone(1.0, 60)
        v, _ = negative_pearson_loss(self.sig(x), self.sig(-x))
        assert v == pytest.approx(1.0, abs=1e-12)

    def test_hand_computed_value(self):
        # cov 6.5, variances 5 and 8.75 -> r = 6.5 / sqrt(43.75) = 0.98271
        v, _ = negative_pearson_loss(self.sig([1, 2, 3, 4]), self.sig([1, 2, 3, 5]))
        assert v == pytest.approx(-0.9827, abs=1e-4)

    def test_constant_input_rejected(self):
        with pytest.raises(InvalidInputError):
            negative_pearson_loss(self.sig([1, 1, 1, 1]), self.sig([1, 2, 3, 4]))

    def test_length_mismatch_rejected(self):
        with pytest.raises(InvalidInputError):
            negative_pearson_loss(self.sig([1, 2, 3]), self.sig([1, 2, 3, 4]))

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(47)
        x = rng.standard_normal(50)
        y = rng.standard_normal(50)
        _, g = negative_pearson_loss(self.sig(x), self.sig(y))
        h = 1e-6
        numeric = np.zeros_like(x)
        for i in range(x.size):
            xp, xm = x.copy(), x.copy()
            xp[i] += h
            xm[i] -= h
            numeric[i] = (
                negative_pearson_loss(self.sig(xp), self.sig(y))[0]
                - negative_pearson_loss(self.sig(xm), self.sig(y))[0]
            ) / (2 * h)
        np.testing.assert_allclose(g, numeric, atol=1e-6 * np.max(np.abs(numeric)))

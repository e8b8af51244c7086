import math

import numpy as np
import pytest

from nyqwdm.signal import (
    DualPolSignal,
    SampledSignal,
    SpectrumView,
    apply_delay,
    brick_filter,
    brick_response,
    freq_to_wavelength_nm,
    frequency_shift,
    measure_power,
    resample,
    spectral_delay,
)

FS = 25e9


def rand_sig(n=4096, seed=0, fs=FS):
    rng = np.random.default_rng(seed)
    return SampledSignal(rng.standard_normal(n) + 1j * rng.standard_normal(n), fs)


def tone(f, n=1000, fs=FS):
    return SampledSignal(np.exp(2j * np.pi * f / fs * np.arange(n)), fs)


class TestSampledSignal:
    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            SampledSignal([1.0, np.nan], FS)

    def test_rejects_bad_rate(self):
        with pytest.raises(ValueError):
            SampledSignal([1.0], 0.0)

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            SampledSignal([], FS)

    def test_samples_immutable_and_copied(self):
        a = np.ones(4, dtype=complex)
        s = SampledSignal(a, FS)
        a[0] = 5
        assert s.samples[0] == 1
        with pytest.raises(ValueError):
            s.samples[0] = 2

    def test_length_exact(self):
        assert len(SampledSignal(np.ones(777), FS)) == 777

    def test_dual_pol_consistency(self):
        x = SampledSignal(np.ones(4), FS)
        with pytest.raises(ValueError):
            DualPolSignal(x, SampledSignal(np.ones(5), FS))
        with pytest.raises(ValueError):
            DualPolSignal(x, SampledSignal(np.ones(4), FS, center_freq=1.0))
        with pytest.raises(ValueError):
            DualPolSignal(x, SampledSignal(np.ones(4), 2 * FS))


class TestFrequencyShift:
    def test_zero_shift_identity(self):
        s = rand_sig()
        assert np.array_equal(frequency_shift(s, 0).samples, s.samples)

    def test_quarter_rate_rotation(self):
        y = frequency_shift(SampledSignal(np.ones(8), FS), FS / 4).samples
        np.testing.assert_allclose(y[:4], [1, 1j, -1, -1j], atol=1e-12)

    def test_energy_preserved(self):
        s = rand_sig(2**14, seed=3)
        y = frequency_shift(s, 3.1e9)
        assert abs(y.energy() - s.energy()) / s.energy() < 1e-12

    def test_metadata_unchanged(self):
        s = SampledSignal(np.ones(8), FS, center_freq=5e9)
        assert frequency_shift(s, 1e9).center_freq == 5e9

    @pytest.mark.parametrize("df", [FS / 2, -FS / 2, np.inf, np.nan])
    def test_rejects_out_of_range(self, df):
        with pytest.raises(ValueError):
            frequency_shift(rand_sig(16), df)


class TestApplyDelay:
    def test_zero_identity(self):
        s = rand_sig()
        assert np.array_equal(apply_delay(s, 0).samples, s.samples)

    @pytest.mark.parametrize("k", [1, 7, 100])
    def test_integer_delay_is_circular_shift(self, k):
        s = rand_sig(1024, seed=k)
        y = apply_delay(s, k / FS)
        assert np.max(np.abs(y.samples - np.roll(s.samples, k))) < 1e-9

    def test_polmux_delay_round_trip(self):
        s = rand_sig(8192, seed=5)
        tau = 5.3e-9
        assert tau * FS == pytest.approx(132.5)
        back = spectral_delay(apply_delay(s, tau), -tau)
        assert np.max(np.abs(back.samples - s.samples)) < 1e-9

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            apply_delay(rand_sig(16), -1e-12)

    def test_additive(self):
        s = rand_sig(2048, seed=9)
        a, b = 3.3e-9, 6.1e-9
        lhs = apply_delay(apply_delay(s, a), b).samples
        rhs = apply_delay(s, a + b).samples
        assert np.max(np.abs(lhs - rhs)) < 1e-9


class TestBrickFilter:
    def test_full_band_identity(self):
        s = rand_sig(1000)
        y = brick_filter(s, -FS / 2, FS / 2)
        assert np.max(np.abs(y.samples - s.samples)) < 1e-12

    def test_tone_removed(self):
        s = tone(5e9, 1000)
        y = brick_filter(s, -3e9, 3e9)
        assert y.energy() < 1e-10 * s.energy()

    def test_two_tone_split(self):
        n = 1000  # 25 MHz bins, +-4 GHz on-grid
        x = tone(4e9, n).samples + tone(-4e9, n).samples
        s = SampledSignal(x, FS)
        y = brick_filter(s, -5e9, 0)
        assert y.energy() / s.energy() == pytest.approx(0.5, abs=1e-9)
        np.testing.assert_allclose(y.samples, tone(-4e9, n).samples, atol=1e-9)

    def test_edge_bin_half_weight(self):
        w = brick_response(1000, FS, -5e9, 5e9)
        f = np.fft.fftfreq(1000, 1 / FS)
        assert np.all(w[np.isclose(np.abs(f), 5e9)] == 0.5)
        assert np.all(w[np.abs(f) < 4.99e9] == 1.0)
        assert np.all(w[np.abs(f) > 5.01e9] == 0.0)

    def test_idempotent_off_grid_edges(self):
        s = rand_sig(1000, seed=2)
        once = brick_filter(s, -4.01e9, 2.37e9)
        twice = brick_filter(once, -4.01e9, 2.37e9)
        assert np.max(np.abs(twice.samples - once.samples)) < 1e-15

    @pytest.mark.parametrize("band", [(1e9, -1e9), (-FS, 0), (0, FS)])
    def test_rejects_bad_band(self, band):
        with pytest.raises(ValueError):
            brick_filter(rand_sig(16), *band)


class TestPower:
    def test_all_ones(self):
        p = measure_power(SampledSignal(np.ones(10), FS))
        assert p.mw == 1.0 and p.dbm == 0.0

    def test_scaling_law(self):
        s = rand_sig(512)
        a = measure_power(s)
        b = measure_power(SampledSignal(s.samples * math.sqrt(2), FS))
        assert b.dbm - a.dbm == pytest.approx(3.0103, abs=1e-4)

    def test_per_carrier_share_of_comb(self):
        per = 18 - 10 * math.log10(325)
        assert per == pytest.approx(-7.12, abs=0.005)

    def test_rejects_empty_array(self):
        with pytest.raises(ValueError):
            measure_power(np.array([]))


class TestResample:
    def test_up_down_round_trip(self):
        s = brick_filter(rand_sig(1000, seed=4), -10e9, 10e9)
        up = resample(s, 4 * FS)
        assert len(up) == 4000
        back = resample(up, FS)
        assert np.max(np.abs(back.samples - s.samples)) < 1e-12

    def test_preserves_power(self):
        s = brick_filter(rand_sig(1000, seed=6), -10e9, 10e9)
        assert measure_power(resample(s, 8 * FS)).mw == pytest.approx(measure_power(s).mw, rel=1e-12)

    def test_rejects_fractional_length(self):
        with pytest.raises(ValueError):
            resample(rand_sig(1001), FS / 2)


class TestSpectrumView:
    def test_requires_increasing_bins(self):
        with pytest.raises(ValueError):
            SpectrumView(np.array([0.0, -1.0]), np.ones(2), 1.0)

    def test_wavelength_reference(self):
        assert freq_to_wavelength_nm(0.0) == pytest.approx(1550.116, abs=1e-3)

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from arof.errors import ArofError, BandError
from arof.waveform import (
    Waveform,
    add_awgn,
    band_power,
    bandpass,
    frequency_shift,
    peak_frequency,
    read_waveform,
    resample,
    write_waveform,
)

FS = 1.024e9


def tone(f_hz, n=4096, fs=FS, ref=0.0):
    t = np.arange(n) / fs
    return Waveform(np.exp(2j * np.pi * f_hz * t), fs, ref)


def fft_peak_hz(w):
    X = np.abs(np.fft.fft(w.samples))
    return np.fft.fftfreq(len(w), 1 / w.sample_rate_hz)[np.argmax(X)] + w.ref_freq_hz


class TestWaveform:
    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            Waveform(np.array([], complex), FS)

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            Waveform(np.array([1, np.nan], complex), FS)

    def test_rejects_bad_rate(self):
        with pytest.raises(ValueError):
            Waveform(np.ones(4, complex), 0.0)

    def test_band_must_fit_nyquist(self):
        with pytest.raises(BandError):
            Waveform(np.ones(4, complex), FS, band=(-FS, 0.0))

    def test_samples_are_read_only(self):
        w = tone(1e6)
        with pytest.raises(ValueError):
            w.samples[0] = 0

    def test_power_and_energy(self):
        w = tone(1e6, n=1000)
        assert w.power() == pytest.approx(1.0)
        assert w.energy() == pytest.approx(1000.0)
        assert w.duration_s == pytest.approx(1000 / FS)


class TestFrequencyShift:
    def test_peak_moves_by_shift(self):
        w = tone(10 * FS / 4096)
        shifted = frequency_shift(w, 50 * FS / 4096)
        assert fft_peak_hz(shifted) == pytest.approx(60 * FS / 4096)

    def test_reference_unchanged(self):
        w = tone(1e6, ref=5e9)
        assert frequency_shift(w, 1e6).ref_freq_hz == 5e9

    def test_declared_band_outside_nyquist_raises(self):
        w = Waveform(np.ones(64, complex), FS, band=(-1e6, 1e6))
        with pytest.raises(BandError):
            frequency_shift(w, FS / 2)

    def test_long_vector_phase_precision(self):
        n = 2**22
        w = Waveform(np.ones(n, complex), FS)
        y = frequency_shift(w, 123.456e6).samples
        t = np.arange(n - 4, n) / FS
        assert np.allclose(y[-4:], np.exp(2j * np.pi * 123.456e6 * t), atol=1e-6)


class TestBandpass:
    def test_out_of_band_suppression(self):
        fs = FS
        w = Waveform(tone(100e6).samples + tone(-200e6).samples, fs)
        y = bandpass(w, 50e6, 150e6)
        kept = band_power(y, 90e6, 110e6)
        leak = band_power(y, -210e6, -190e6)
        assert 10 * np.log10(kept / max(leak, 1e-30)) > 60

    def test_empty_band_raises(self):
        with pytest.raises(BandError):
            bandpass(tone(1e6), 2 * FS, 3 * FS)

    @settings(max_examples=25, deadline=None)
    @given(
        lo=st.floats(-400e6, 300e6),
        width=st.floats(10e6, 100e6),
        seed=st.integers(0, 2**16),
    )
    def test_brickwall_idempotent(self, lo, width, seed):
        rng = np.random.default_rng(seed)
        w = Waveform(rng.normal(size=1024) + 1j * rng.normal(size=1024), FS)
        once = bandpass(w, lo, lo + width, rolloff=0.0)
        twice = bandpass(once, lo, lo + width, rolloff=0.0)
        assert np.allclose(once.samples, twice.samples, atol=1e-12)

    def test_absolute_frequencies_respect_reference(self):
        w = tone(10e6, ref=5e9)
        assert band_power(bandpass(w, 5.005e9, 5.015e9), 5.0e9, 5.02e9) > 0.9
        assert band_power(bandpass(w, 5.02e9, 5.03e9), 5.0e9, 5.02e9) < 1e-6


class TestAwgn:
    def test_in_band_snr(self):
        n = 2**16
        w = Waveform(np.ones(n, complex), FS)
        y = add_awgn(w, 20.0, signal_band_hz=FS / 8, rng_seed=3)
        noise = y.samples - w.samples
        in_band = band_power(Waveform(noise, FS), -FS / 16, FS / 16)
        assert 10 * np.log10(1.0 / in_band) == pytest.approx(20.0, abs=0.2)

    def test_infinite_snr_is_identity(self):
        w = tone(1e6)
        assert add_awgn(w, np.inf) is w

    def test_seeded(self):
        w = tone(1e6)
        a = add_awgn(w, 10, rng_seed=5).samples
        b = add_awgn(w, 10, rng_seed=5).samples
        assert np.array_equal(a, b)


class TestResample:
    def test_tone_preserved(self):
        w = tone(64 * FS / 4096)
        up = resample(w, 4 * FS)
        assert fft_peak_hz(up) == pytest.approx(64 * FS / 4096)
        assert len(up) == 4 * len(w)

    def test_non_integer_length_raises(self):
        with pytest.raises(ArofError):
            resample(tone(1e6, n=1000), FS * 1.0001)

    def test_declared_band_aliasing_raises(self):
        w = Waveform(np.ones(1024, complex), FS, band=(-300e6, 300e6))
        with pytest.raises(BandError):
            resample(w, FS / 4)


class TestCaptureFile:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        w = Waveform(rng.normal(size=500) + 1j * rng.normal(size=500), 16e9, 5e9)
        write_waveform(tmp_path / "c.arof", w)
        r = read_waveform(tmp_path / "c.arof")
        assert r.sample_rate_hz == w.sample_rate_hz and r.ref_freq_hz == w.ref_freq_hz
        assert np.allclose(r.samples, w.samples, rtol=1e-6, atol=1e-6)

    def test_header_layout(self, tmp_path):
        write_waveform(tmp_path / "c.arof", Waveform(np.array([1 + 2j]), 2.0, 3.0))
        raw = (tmp_path / "c.arof").read_bytes()
        assert raw[:4] == b"AROF"
        assert np.frombuffer(raw[-8:], "<f4").tolist() == [1.0, 2.0]

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x.arof").write_bytes(b"NOPE" + bytes(40))
        with pytest.raises(ArofError):
            read_waveform(tmp_path / "x.arof")

    def test_truncated(self, tmp_path):
        write_waveform(tmp_path / "c.arof", tone(1e6, n=100))
        data = (tmp_path / "c.arof").read_bytes()
        (tmp_path / "c.arof").write_bytes(data[:-8])
        with pytest.raises(ArofError):
            read_waveform(tmp_path / "c.arof")


def test_peak_frequency_reports_absolute():
    assert peak_frequency(tone(32 * FS / 4096, ref=5e9)) == pytest.approx(5e9 + 32 * FS / 4096)

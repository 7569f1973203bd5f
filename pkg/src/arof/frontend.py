"""Remote antenna site and sub-THz receiver.

Photodiode square-law beating, WIN-PDA emitted power roll-off, multiplied LO,
mixer down-conversion with lumped receiver noise, and the real-time-scope
capture.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BandError
from .optics import wiener_phase_on_grid
from .waveform import Waveform, add_awgn, bandpass, frequency_shift, resample

PDA_ANCHORS = ((115e9, 343e-6), (500e9, 10e-6), (1e12, 1.9e-6))


@dataclass(frozen=True)
class ReceiverParams:
    rf_source_freq_hz: float = 32.5e9
    multiplier_factor: int = 6
    rf_source_linewidth_hz: float = 0.0
    rf_source_freq_offset_hz: float = 0.0
    mixer_band_hz: tuple = (170e9, 260e9)
    conversion_loss_db: float = 10.0
    adc_rate_hz: float | None = None
    adc_bits: int | None = None
    rx_snr_db: float = 30.0
    if_hz: float = 5e9
    # (freq_hz, gain_db) points of an optional component ripple mask
    ripple_db: tuple = ()

    def __post_init__(self):
        if self.multiplier_factor < 1:
            raise ValueError("multiplier_factor must be >= 1")
        lo, hi = self.mixer_band_hz
        if not lo < hi:
            raise ValueError("mixer band low edge must be below high edge")
        if self.rf_source_linewidth_hz < 0:
            raise ValueError("rf_source_linewidth_hz must be non-negative")
        if self.adc_bits is not None and self.adc_bits < 1:
            raise ValueError("adc_bits must be positive")
        freqs = [f for f, _ in self.ripple_db]
        if any(b <= a for a, b in zip(freqs, freqs[1:])):
            raise ValueError("ripple mask frequencies must be strictly increasing")

    @property
    def lo_freq_hz(self):
        return self.multiplier_factor * (self.rf_source_freq_hz + self.rf_source_freq_offset_hz)

    def in_mixer_band(self, freq_hz):
        lo, hi = self.mixer_band_hz
        return lo <= freq_hz <= hi


@dataclass(frozen=True)
class PdaParams:
    responsivity_a_per_w: float = 0.3
    power_points: tuple = PDA_ANCHORS
    wireless_loss_db: float = 30.0

    def __post_init__(self):
        if not self.responsivity_a_per_w > 0:
            raise ValueError("responsivity must be positive")
        f = [a for a, _ in self.power_points]
        if any(b <= a for a, b in zip(f, f[1:])) or any(p <= 0 for _, p in self.power_points):
            raise ValueError("PDA anchors need increasing frequencies and positive powers")


def photodiode(field: Waveform, responsivity: float, out_band) -> Waveform:
    """Square-law detection followed by selection of a positive-frequency band.

    The photocurrent ``R*|E|^2`` is real; the returned envelope is its
    positive-frequency content inside ``out_band`` (absolute Hz).  For two
    tones E1, E2 the selected beat is ``R*E1*conj(E2)``, so its mean power is
    ``R^2*P1*P2`` (the real current's AC power is twice that).
    """
    f_lo, f_hi = out_band
    nyq = field.sample_rate_hz / 2
    if not 0 < f_lo < f_hi <= nyq:
        raise BandError(f"photodiode output band {out_band} outside (0, {nyq:g}] Hz")
    current = Waveform(responsivity * np.abs(field.samples) ** 2 + 0j, field.sample_rate_hz, 0.0)
    out = bandpass(current, f_lo, f_hi, rolloff=0.0)
    return Waveform(out.samples, field.sample_rate_hz, 0.0, band=out.band,
                    meta={"responsivity": responsivity})


def pda_emitted_power(freq_hz: float, p: PdaParams = PdaParams()) -> float:
    """Log-log interpolation of the CW emitted-power anchors; no extrapolation."""
    f = np.array([a for a, _ in p.power_points])
    pw = np.array([b for _, b in p.power_points])
    if not f[0] <= freq_hz <= f[-1]:
        raise BandError(f"{freq_hz:g} Hz outside PDA anchor range [{f[0]:g}, {f[-1]:g}] Hz")
    return float(np.exp(np.interp(np.log(freq_hz), np.log(f), np.log(pw))))


def ripple_response(p: ReceiverParams):
    """Amplitude response of the component ripple mask (flat when unset)."""
    if not p.ripple_db:
        return lambda f: np.ones_like(np.asarray(f, dtype=float))
    fx = np.array([a for a, _ in p.ripple_db])
    gx = np.array([b for _, b in p.ripple_db])
    return lambda f: 10 ** (np.interp(f, fx, gx) / 20)


def rf_source_phase(p: ReceiverParams, n_samples: int, sample_rate_hz: float, rng_seed: int,
                    base_rate_hz: float | None = None):
    """Phase of the microwave source before multiplication (random start + Wiener walk)."""
    rng = np.random.default_rng(rng_seed)
    phi0 = rng.uniform(0, 2 * np.pi)
    return phi0 + wiener_phase_on_grid(n_samples, p.rf_source_linewidth_hz, sample_rate_hz, rng,
                                       base_rate_hz)


def gen_lo(
    p: ReceiverParams,
    n_samples: int,
    sample_rate_hz: float,
    rng_seed: int,
    ref_freq_hz: float | None = None,
    base_rate_hz: float | None = None,
) -> Waveform:
    """Multiplied LO: frequency and phase of the source both scale by the multiplier.

    ``ref_freq_hz`` defaults to the nominal LO frequency, giving a baseband
    representation; pass 0 for an absolute tone on a wideband grid.
    """
    if not p.in_mixer_band(p.lo_freq_hz + p.if_hz):
        raise BandError(
            f"LO {p.lo_freq_hz:g} Hz + IF {p.if_hz:g} Hz outside mixer band {p.mixer_band_hz}"
        )
    nominal = p.multiplier_factor * p.rf_source_freq_hz
    ref = nominal if ref_freq_hz is None else ref_freq_hz
    f_rel = p.lo_freq_hz - ref
    if abs(f_rel) >= sample_rate_hz / 2:
        raise BandError("LO tone not representable at this sample rate and reference")
    phi = p.multiplier_factor * rf_source_phase(p, n_samples, sample_rate_hz, rng_seed, base_rate_hz)
    cycles = np.mod(f_rel / sample_rate_hz * np.arange(n_samples), 1.0)
    lo = np.exp(1j * (2 * np.pi * cycles + phi))
    meta = {"lo_freq_hz": p.lo_freq_hz, "lo_freq_offset_hz": p.lo_freq_hz - nominal}
    return Waveform(lo, sample_rate_hz, ref, meta=meta)


def mixer_downconvert(
    thz: Waveform,
    lo: Waveform,
    p: ReceiverParams,
    rng_seed: int,
    signal_freq_hz: float | None = None,
    signal_power: float | None = None,
    signal_band_hz: float | None = None,
) -> Waveform:
    """Complex mixing ``thz * conj(lo)`` with conversion loss and receiver noise.

    ``signal_freq_hz`` is the sub-THz centre used for the WR 4.3 band check
    (defaults to the declared band centre).  Noise is added at
    ``p.rx_snr_db`` relative to ``signal_power`` inside ``signal_band_hz``;
    conversion loss scales signal and noise reference together.
    """
    if len(thz) != len(lo) or thz.sample_rate_hz != lo.sample_rate_hz:
        raise ValueError("signal and LO must share length and sample rate")
    if signal_freq_hz is None:
        if thz.band is None:
            raise BandError("cannot locate the sub-THz signal; pass signal_freq_hz")
        signal_freq_hz = thz.ref_freq_hz + 0.5 * (thz.band[0] + thz.band[1])
    if not p.in_mixer_band(signal_freq_hz):
        raise BandError(
            f"sub-THz signal at {signal_freq_hz / 1e9:g} GHz outside mixer band "
            f"{p.mixer_band_hz[0] / 1e9:g}-{p.mixer_band_hz[1] / 1e9:g} GHz"
        )
    gain = 10 ** (-p.conversion_loss_db / 20)
    y = thz.samples * np.conj(lo.samples) * gain
    ref = thz.ref_freq_hz - lo.ref_freq_hz
    out = Waveform(y, thz.sample_rate_hz, 0.0 if ref < 0 else ref)
    if ref < 0:
        out = frequency_shift(out, ref)
    if signal_power is None:
        signal_power = thz.power()
    if signal_band_hz is None and thz.band is not None:
        signal_band_hz = thz.band[1] - thz.band[0]
    out = add_awgn(out, p.rx_snr_db, signal_band_hz, rng_seed, signal_power * gain**2)
    out.meta.update({"signal_if_hz": signal_freq_hz - lo.meta.get("lo_freq_hz", lo.ref_freq_hz)})
    return out


def quantize(x, bits, full_scale):
    """Mid-rise uniform quantiser applied to I and Q over [-full_scale, full_scale)."""
    step = 2 * full_scale / 2**bits
    half = 2 ** (bits - 1)

    def q(v):
        return (np.clip(np.floor(v / step), -half, half - 1) + 0.5) * step

    return q(x.real) + 1j * q(x.imag)


def adc_capture(if_signal: Waveform, p: ReceiverParams, max_freq_hz: float | None = None) -> Waveform:
    """Real-time-scope capture: resample to ``p.adc_rate_hz`` and optionally quantise.

    ``max_freq_hz`` is the highest content frequency (IF + BW/2); it defaults
    to the declared band edge.  Quantiser full scale is 4x the complex RMS.
    """
    rate = p.adc_rate_hz or if_signal.sample_rate_hz
    if max_freq_hz is None and if_signal.band is not None:
        max_freq_hz = if_signal.ref_freq_hz + max(abs(b) for b in if_signal.band)
    if max_freq_hz is not None and rate < 2 * max_freq_hz:
        raise BandError(f"ADC rate {rate:g} Hz below Nyquist for content up to {max_freq_hz:g} Hz")
    out = resample(if_signal, rate)
    if p.adc_bits is None:
        return out
    rms = np.sqrt(np.mean(np.abs(out.samples) ** 2))
    return out.with_samples(quantize(out.samples, p.adc_bits, 4 * rms))

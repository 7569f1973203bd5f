"""Complex-baseband waveforms and the spectral primitives shared by every stage.

A :class:`Waveform` is a complex envelope sampled at ``sample_rate_hz`` whose
0 Hz bin corresponds to the absolute frequency ``ref_freq_hz``.  An optical
field around 193 THz and a 5 GHz IF capture use the same type; only the
reference differs.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.signal

from .errors import ArofError, BandError

MAGIC = b"AROF"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIddQ")


@dataclass(frozen=True, eq=False)
class Waveform:
    """Immutable complex sample vector.

    ``band`` optionally declares the occupied content as ``(lo, hi)`` in Hz
    relative to ``ref_freq_hz``.  Operations that move or decimate content
    use it to detect band violations; ``None`` means nothing was declared.
    """

    samples: np.ndarray
    sample_rate_hz: float
    ref_freq_hz: float = 0.0
    band: tuple[float, float] | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.complex128)
        if x.ndim != 1 or x.size == 0:
            raise ValueError("samples must be a non-empty 1-D vector")
        if not np.all(np.isfinite(x)):
            raise ValueError("samples must be finite")
        if not self.sample_rate_hz > 0:
            raise ValueError("sample_rate_hz must be positive")
        if self.ref_freq_hz < 0:
            raise ValueError("ref_freq_hz must be non-negative")
        if self.band is not None:
            lo, hi = self.band
            nyq = self.sample_rate_hz / 2
            if lo > hi or lo < -nyq * (1 + 1e-12) or hi > nyq * (1 + 1e-12):
                raise BandError(f"declared band {self.band} outside +/-{nyq:g} Hz")
        x.flags.writeable = False
        object.__setattr__(self, "samples", x)

    def __len__(self):
        return self.samples.size

    @property
    def duration_s(self):
        return self.samples.size / self.sample_rate_hz

    @property
    def time_s(self):
        return np.arange(self.samples.size) / self.sample_rate_hz

    def power(self):
        """Mean |x|^2 over all samples."""
        return float(np.mean(np.abs(self.samples) ** 2))

    def energy(self):
        return float(np.sum(np.abs(self.samples) ** 2))

    def with_samples(self, samples, **changes):
        return replace(self, samples=samples, **changes)


def frequencies(w):
    """FFT bin frequencies of ``w`` relative to its reference (fftfreq order)."""
    return np.fft.fftfreq(len(w), 1.0 / w.sample_rate_hz)


def _phasor(n, df_hz, fs):
    # Reduce cycles mod 1 before exp so long vectors keep phase precision.
    cycles = np.mod(df_hz / fs * np.arange(n), 1.0)
    return np.exp(2j * np.pi * cycles)


def frequency_shift(w: Waveform, df_hz: float) -> Waveform:
    """Move the content of ``w`` by ``df_hz``; ``ref_freq_hz`` is left alone."""
    if df_hz == 0:
        return w
    band = None
    if w.band is not None:
        band = (w.band[0] + df_hz, w.band[1] + df_hz)
        nyq = w.sample_rate_hz / 2
        if band[0] < -nyq or band[1] > nyq:
            raise BandError(
                f"shift by {df_hz:g} Hz moves content {band} outside +/-{nyq:g} Hz"
            )
    y = w.samples * _phasor(len(w), df_hz, w.sample_rate_hz)
    return w.with_samples(y, band=band)


def bandpass_mask(freqs, f_lo, f_hi, rolloff=0.01):
    """Brick-wall mask on [f_lo, f_hi] with raised-cosine tapers just inside the edges.

    The taper width is ``rolloff`` times the passband width.  ``rolloff=0``
    gives a binary mask, for which filtering is exactly idempotent.
    """
    width = f_hi - f_lo
    mask = ((freqs >= f_lo) & (freqs <= f_hi)).astype(float)
    tw = rolloff * width
    if tw > 0:
        lo_edge = (freqs >= f_lo) & (freqs < f_lo + tw)
        mask[lo_edge] = 0.5 * (1 - np.cos(np.pi * (freqs[lo_edge] - f_lo) / tw))
        hi_edge = (freqs > f_hi - tw) & (freqs <= f_hi)
        mask[hi_edge] = 0.5 * (1 - np.cos(np.pi * (f_hi - freqs[hi_edge]) / tw))
    return mask


def bandpass(w: Waveform, f_lo_hz: float, f_hi_hz: float, rolloff: float = 0.01) -> Waveform:
    """Keep absolute frequencies in [f_lo_hz, f_hi_hz]; everything else is zeroed."""
    lo = f_lo_hz - w.ref_freq_hz
    hi = f_hi_hz - w.ref_freq_hz
    nyq = w.sample_rate_hz / 2
    lo_c, hi_c = max(lo, -nyq), min(hi, nyq)
    if not hi_c > lo_c:
        raise BandError(f"empty passband [{f_lo_hz:g}, {f_hi_hz:g}] Hz")
    freqs = frequencies(w)
    mask = bandpass_mask(freqs, lo, hi, rolloff)
    if not mask.any():
        raise BandError("passband contains no FFT bins")
    y = np.fft.ifft(np.fft.fft(w.samples) * mask)
    band = (lo_c, hi_c)
    if w.band is not None:
        band = (max(lo_c, w.band[0]), min(hi_c, w.band[1]))
        if band[0] > band[1]:
            band = (lo_c, hi_c)
    return w.with_samples(y, band=band)


def apply_response(w: Waveform, response) -> Waveform:
    """Multiply the spectrum by ``response(abs_freq_hz)`` (vectorised callable)."""
    freqs = frequencies(w) + w.ref_freq_hz
    return w.with_samples(np.fft.ifft(np.fft.fft(w.samples) * response(freqs)))


def add_awgn(
    w: Waveform,
    snr_db: float,
    signal_band_hz: float | None = None,
    rng_seed: int = 0,
    signal_power: float | None = None,
) -> Waveform:
    """Add circular complex Gaussian noise for an in-band SNR of ``snr_db``.

    Noise is white across the whole sample rate; its density is chosen so
    that the power falling inside ``signal_band_hz`` is ``signal_power /
    10**(snr_db/10)``.  ``signal_power`` defaults to the mean sample power.
    ``snr_db=inf`` disables noise.
    """
    if np.isposinf(snr_db):
        return w
    if not np.isfinite(snr_db):
        raise ValueError("snr_db must be finite or +inf")
    band = w.sample_rate_hz if signal_band_hz is None else signal_band_hz
    if not 0 < band <= w.sample_rate_hz * (1 + 1e-12):
        raise ValueError("signal_band_hz must lie in (0, sample_rate_hz]")
    p = w.power() if signal_power is None else signal_power
    var = p / 10 ** (snr_db / 10) * w.sample_rate_hz / band
    rng = np.random.default_rng(rng_seed)
    n = len(w)
    noise = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    return w.with_samples(w.samples + np.sqrt(var / 2) * noise)


def resample(w: Waveform, new_rate_hz: float) -> Waveform:
    """FFT-domain rate conversion; the new length must be an integer."""
    if new_rate_hz == w.sample_rate_hz:
        return w
    if not new_rate_hz > 0:
        raise ValueError("new_rate_hz must be positive")
    exact = len(w) * new_rate_hz / w.sample_rate_hz
    n_out = int(round(exact))
    if n_out < 1 or abs(exact - n_out) > 1e-6 * max(1.0, exact):
        raise ArofError(
            f"{len(w)} samples at {w.sample_rate_hz:g} Hz do not map to an integer "
            f"length at {new_rate_hz:g} Hz"
        )
    if w.band is not None:
        nyq = new_rate_hz / 2
        if w.band[0] < -nyq or w.band[1] > nyq:
            raise BandError(f"rate {new_rate_hz:g} Hz aliases declared band {w.band}")
    y = scipy.signal.resample(w.samples, n_out)
    return Waveform(y, float(new_rate_hz), w.ref_freq_hz, w.band, dict(w.meta))


def band_power(w: Waveform, f_lo_hz: float, f_hi_hz: float, span=None) -> float:
    """Mean power of the [f_lo, f_hi] (absolute) component over sample ``span``."""
    freqs = frequencies(w) + w.ref_freq_hz
    X = np.fft.fft(w.samples)
    X[(freqs < f_lo_hz) | (freqs > f_hi_hz)] = 0
    y = np.fft.ifft(X)
    if span is not None:
        y = y[span[0] : span[1]]
    return float(np.mean(np.abs(y) ** 2))


def peak_frequency(w: Waveform) -> float:
    """Absolute frequency of the strongest FFT bin."""
    X = np.abs(np.fft.fft(w.samples))
    return float(frequencies(w)[np.argmax(X)] + w.ref_freq_hz)


def write_waveform(path, w: Waveform) -> None:
    """Write the AROF capture format: header then interleaved little-endian f32 I/Q."""
    iq = np.empty(2 * len(w), dtype="<f4")
    iq[0::2] = w.samples.real
    iq[1::2] = w.samples.imag
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, w.sample_rate_hz, w.ref_freq_hz, len(w)))
        fh.write(iq.tobytes())


def read_waveform(path) -> Waveform:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ArofError("file too short for AROF header")
    magic, version, fs, ref, n = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ArofError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise ArofError(f"unsupported AROF version {version}")
    iq = np.frombuffer(data, dtype="<f4", offset=_HEADER.size)
    if iq.size != 2 * n:
        raise ArofError(f"header declares {n} samples, file holds {iq.size // 2}")
    return Waveform(iq[0::2] + 1j * iq[1::2].astype(np.float64), fs, ref)

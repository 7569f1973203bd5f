"""OFDM framing: Gray QAM, Schmidl & Cox preamble, pilots, cyclic prefix, IF placement.

Frame layout at ``fft_size * sc_spacing_hz`` samples per second::

    [guard zeros][CP|preamble][CP|training][CP|payload 0] ... [CP|payload P-1][pad]

The preamble loads QPSK on even subcarriers only, so its useful part is two
identical halves.  The training symbol carries known QPSK on every used
subcarrier and feeds the channel estimate.  The frame is zero-padded to a
power-of-two length so rate changes between power-of-two multiples of the
subcarrier spacing stay exact.
"""

from __future__ import annotations

import base64
import json
from dataclasses import asdict, dataclass, field
from functools import cached_property

import numpy as np

from .errors import BandError, FramingError, TruncationError
from .waveform import Waveform, frequency_shift, resample


@dataclass(frozen=True)
class OfdmParams:
    sc_spacing_hz: float = 2e6
    n_data_sc: int = 100
    qam_order: int = 64
    cp_fraction: float = 0.125
    n_pilot: int = 8
    n_payload_symbols: int = 8
    if_hz: float = 5e9
    fft_size: int = 256
    preamble_seed: int = 1997
    # half-width of the frequency-offset search used by the receiver
    fo_search_hz: float = 30e6

    def __post_init__(self):
        if not self.sc_spacing_hz > 0:
            raise ValueError("sc_spacing_hz must be positive")
        if self.n_data_sc < 1 or self.n_payload_symbols < 1:
            raise ValueError("need at least one data subcarrier and one payload symbol")
        k = int(round(np.log2(self.qam_order))) if self.qam_order > 0 else 0
        if self.qam_order < 4 or 2**k != self.qam_order or k % 2:
            raise ValueError(f"qam_order {self.qam_order} is not a square power of two")
        if self.n_pilot < 0 or self.n_pilot > self.n_used // 2:
            raise ValueError("n_pilot must be between 0 and half the used subcarriers")
        if self.n_used >= self.fft_size:
            raise ValueError("fft_size must exceed the number of used subcarriers")
        if self.fft_size & (self.fft_size - 1):
            raise ValueError("fft_size must be a power of two")
        cp = self.fft_size * self.cp_fraction
        if cp != int(cp) or cp < 0:
            raise ValueError("cp_fraction * fft_size must be a non-negative integer")
        if self.bandwidth_hz > 2 * self.if_hz and self.if_hz > 0:
            raise BandError("OFDM bandwidth exceeds twice the IF; signal would fold through DC")

    @property
    def n_used(self):
        return self.n_data_sc + self.n_pilot

    @property
    def bandwidth_hz(self):
        return self.n_used * self.sc_spacing_hz

    @property
    def bits_per_symbol(self):
        return int(np.log2(self.qam_order))

    @property
    def cp_len(self):
        return int(self.fft_size * self.cp_fraction)

    @property
    def symbol_len(self):
        return self.fft_size + self.cp_len

    @property
    def sample_rate_hz(self):
        return self.fft_size * self.sc_spacing_hz

    @property
    def n_payload_bits(self):
        return self.n_data_sc * self.bits_per_symbol * self.n_payload_symbols

    @cached_property
    def used_bins(self):
        """Signed subcarrier indices, DC excluded, split around the centre."""
        n_neg = self.n_used // 2
        n_pos = self.n_used - n_neg
        return np.r_[np.arange(-n_neg, 0), np.arange(1, n_pos + 1)]

    @cached_property
    def pilot_pos(self):
        """Positions of pilots within ``used_bins``, evenly interleaved."""
        if self.n_pilot == 0:
            return np.zeros(0, dtype=int)
        step = self.n_used / self.n_pilot
        return np.floor((np.arange(self.n_pilot) + 0.5) * step).astype(int)

    @cached_property
    def data_pos(self):
        return np.setdiff1d(np.arange(self.n_used), self.pilot_pos)

    @cached_property
    def _training_values(self):
        rng = np.random.default_rng(self.preamble_seed)
        even = self.used_bins % 2 == 0
        pre = np.zeros(self.n_used, complex)
        pre[even] = np.sqrt(2) * _qpsk(rng, int(even.sum()))
        train = _qpsk(rng, self.n_used)
        return pre, train

    @property
    def preamble_values(self):
        """Preamble subcarrier values over ``used_bins`` (zero on odd bins)."""
        return self._training_values[0]

    @property
    def training_values(self):
        return self._training_values[1]

    def fingerprint_dict(self):
        return asdict(self)


def _qpsk(rng, n):
    return (rng.choice([-1.0, 1.0], n) + 1j * rng.choice([-1.0, 1.0], n)) / np.sqrt(2)


def compute_raw_rate(params: OfdmParams) -> float:
    """Raw line rate in bit/s, excluding CP, pilots and training overhead."""
    return params.n_data_sc * params.bits_per_symbol * params.sc_spacing_hz


# -- Gray QAM ---------------------------------------------------------------


def _gray_levels(bits_per_axis):
    """levels[g] is the PAM level carrying Gray label g."""
    L = 2**bits_per_axis
    idx = np.arange(L)
    gray = idx ^ (idx >> 1)
    levels = np.empty(L)
    levels[gray] = 2 * idx - (L - 1)
    return levels


def qam_scale(qam_order):
    """Divisor giving unit average symbol energy."""
    return np.sqrt(2 * (qam_order - 1) / 3)


def qam_constellation(qam_order):
    """All points, indexed by the integer value of their bit label (MSB first)."""
    k = int(np.log2(qam_order)) // 2
    levels = _gray_levels(k)
    labels = np.arange(qam_order)
    i_lab, q_lab = labels >> k, labels & ((1 << k) - 1)
    return (levels[i_lab] + 1j * levels[q_lab]) / qam_scale(qam_order)


def map_bits_to_qam(bits, qam_order: int) -> np.ndarray:
    """Gray-coded square QAM; the first half of each label drives I."""
    bits = np.asarray(bits, dtype=np.uint8).ravel()
    m = int(np.log2(qam_order))
    if bits.size % m:
        raise FramingError(f"{bits.size} bits do not divide into {m}-bit symbols")
    weights = 1 << np.arange(m - 1, -1, -1)
    labels = bits.reshape(-1, m) @ weights
    return qam_constellation(qam_order)[labels]


def demap_qam(symbols, qam_order: int) -> np.ndarray:
    """Hard-decision inverse of :func:`map_bits_to_qam`."""
    symbols = np.asarray(symbols).ravel()
    m = int(np.log2(qam_order))
    k = m // 2
    L = 2**k
    scaled = symbols * qam_scale(qam_order)

    idx_to_gray = np.arange(L) ^ (np.arange(L) >> 1)

    def axis(v):
        idx = np.clip(np.round((v + L - 1) / 2), 0, L - 1).astype(int)
        return idx_to_gray[idx]

    labels = (axis(scaled.real) << k) | axis(scaled.imag)
    shifts = np.arange(m - 1, -1, -1)
    return ((labels[:, None] >> shifts) & 1).astype(np.uint8).ravel()


# -- frames -----------------------------------------------------------------


@dataclass
class FrameMeta:
    """What a receiver needs besides ``OfdmParams`` to demodulate one frame."""

    payload_bits: np.ndarray
    pilot_values: np.ndarray  # (n_payload_symbols, n_pilot)
    symbol_starts: list[int]  # FFT-window starts: preamble, training, payload...
    fft_size: int
    cp_len: int
    n_samples: int
    sample_rate_hz: float
    extra: dict = field(default_factory=dict)

    @property
    def preamble_span(self):
        s = self.symbol_starts[0]
        return (s - self.cp_len, s + self.fft_size)

    @property
    def active_span(self):
        return (self.symbol_starts[0] - self.cp_len, self.symbol_starts[-1] + self.fft_size)

    def scaled(self, factor):
        """Sample indices of this frame after resampling by an integer ``factor``."""
        return FrameMeta(
            self.payload_bits,
            self.pilot_values,
            [s * factor for s in self.symbol_starts],
            self.fft_size * factor,
            self.cp_len * factor,
            self.n_samples * factor,
            self.sample_rate_hz * factor,
            dict(self.extra),
        )

    def to_dict(self):
        return {
            "payload_bits_b64": base64.b64encode(np.packbits(self.payload_bits)).decode(),
            "n_payload_bits": int(self.payload_bits.size),
            "pilot_values": [[[float(v.real), float(v.imag)] for v in row] for row in self.pilot_values],
            "symbol_starts": [int(s) for s in self.symbol_starts],
            "fft_size": self.fft_size,
            "cp_len": self.cp_len,
            "n_samples": self.n_samples,
            "sample_rate_hz": self.sample_rate_hz,
            "extra": self.extra,
        }

    @classmethod
    def from_dict(cls, d):
        packed = np.frombuffer(base64.b64decode(d["payload_bits_b64"]), dtype=np.uint8)
        bits = np.unpackbits(packed)[: d["n_payload_bits"]]
        pilots = np.array([[complex(re, im) for re, im in row] for row in d["pilot_values"]])
        return cls(
            bits,
            pilots.reshape(len(d["pilot_values"]), -1),
            list(d["symbol_starts"]),
            d["fft_size"],
            d["cp_len"],
            d["n_samples"],
            d["sample_rate_hz"],
            d.get("extra", {}),
        )

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def payload_grid(params: OfdmParams, meta: FrameMeta) -> np.ndarray:
    """Transmitted payload subcarrier values, shape (n_payload_symbols, n_used)."""
    data = map_bits_to_qam(meta.payload_bits, params.qam_order)
    grid = np.zeros((params.n_payload_symbols, params.n_used), complex)
    grid[:, params.data_pos] = data.reshape(params.n_payload_symbols, params.n_data_sc)
    grid[:, params.pilot_pos] = meta.pilot_values
    return grid


def _ofdm_symbol(params, used_values):
    N = params.fft_size
    X = np.zeros(N, complex)
    X[params.used_bins % N] = used_values
    x = np.fft.ifft(X) * N / np.sqrt(params.n_used)
    return np.r_[x[N - params.cp_len :], x]


def build_frame(params: OfdmParams, payload_bits, rng_seed: int = 0):
    """Assemble one frame at complex baseband; returns ``(Waveform, FrameMeta)``.

    Time-domain scaling gives unit mean power over the active symbols.
    Pilot values are seeded BPSK (unit amplitude) drawn from ``rng_seed``.
    """
    bits = np.asarray(payload_bits, dtype=np.uint8).ravel()
    if bits.size != params.n_payload_bits:
        raise FramingError(f"expected {params.n_payload_bits} payload bits, got {bits.size}")
    rng = np.random.default_rng(rng_seed)
    pilots = rng.choice([-1.0, 1.0], (params.n_payload_symbols, params.n_pilot)).astype(complex)

    N, L = params.fft_size, params.symbol_len
    guard = N
    n_sym = 2 + params.n_payload_symbols
    n_active = guard + n_sym * L
    n_total = 1 << int(np.ceil(np.log2(n_active + N)))
    starts = [guard + i * L + params.cp_len for i in range(n_sym)]

    meta = FrameMeta(bits, pilots, starts, N, params.cp_len, n_total, params.sample_rate_hz)
    x = np.zeros(n_total, complex)
    rows = [params.preamble_values, params.training_values, *payload_grid(params, meta)]
    for i, row in enumerate(rows):
        x[guard + i * L : guard + (i + 1) * L] = _ofdm_symbol(params, row)

    half = (params.n_used // 2 + 1) * params.sc_spacing_hz
    w = Waveform(x, params.sample_rate_hz, 0.0, band=(-half, half))
    return w, meta


def place_at_if(frame: Waveform, if_hz: float, dac_rate_hz: float) -> Waveform:
    """Resample a baseband frame to the AWG rate and centre it on ``+if_hz``."""
    half_bw = frame.sample_rate_hz / 2 if frame.band is None else max(abs(b) for b in frame.band)
    if if_hz + half_bw >= dac_rate_hz / 2:
        raise BandError(
            f"IF {if_hz:g} Hz + half-bandwidth {half_bw:g} Hz exceeds Nyquist {dac_rate_hz / 2:g} Hz"
        )
    up = resample(frame, dac_rate_hz)
    return frequency_shift(up, if_hz)


def demodulate(rx: Waveform, meta: FrameMeta, params: OfdmParams) -> np.ndarray:
    """Strip CPs and FFT every symbol.

    Returns the used-subcarrier grid with rows ``[preamble, training,
    payload...]``.  ``rx`` must be time-aligned so that sample 0 is the frame
    start; no equalisation or phase correction happens here.
    """
    N = params.fft_size
    if meta.symbol_starts[-1] + N > len(rx):
        raise TruncationError(
            f"capture has {len(rx)} samples, frame needs {meta.symbol_starts[-1] + N}"
        )
    x = rx.samples
    idx = np.asarray(meta.symbol_starts)[:, None] + np.arange(N)
    Y = np.fft.fft(x[idx], axis=1) * np.sqrt(params.n_used) / N
    return Y[:, params.used_bins % N]

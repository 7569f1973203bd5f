"""Central-office optics: free-running lasers, OSSB modulation, OBPF, EDFA, combiner, fibre.

Optical fields are complex envelopes about an optical reference (``ref_freq_hz``
near 193 THz) with ``|E|^2`` in watts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BandError
from .waveform import Waveform, bandpass

C_M_PER_S = 299_792_458.0
PLANCK_J_S = 6.626_070_15e-34
DEFAULT_OPTICAL_REF_HZ = 193.4e12


@dataclass(frozen=True)
class LaserParams:
    center_freq_hz: float = 0.0  # offset from the optical reference
    linewidth_hz: float = 1e3
    freq_jitter_hz: float = 30e6
    drift_hz_per_s: float = 0.0
    power_mw: float = 1.0

    def __post_init__(self):
        for name in ("linewidth_hz", "freq_jitter_hz", "drift_hz_per_s", "power_mw"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and non-negative")
        if not self.power_mw > 0:
            raise ValueError("power_mw must be positive")


@dataclass(frozen=True)
class FiberParams:
    length_km: float = 10.0
    dispersion_ps_nm_km: float = 17.0
    attenuation_db_km: float = 0.2
    ref_wavelength_nm: float = 1550.0

    def __post_init__(self):
        if self.length_km < 0 or self.attenuation_db_km < 0:
            raise ValueError("fibre length and attenuation must be non-negative")

    @property
    def beta(self):
        """lambda^2 * D * L / c in s^2; the dispersion phase is pi * beta * f^2."""
        lam = self.ref_wavelength_nm * 1e-9
        d_l = self.dispersion_ps_nm_km * 1e-6 * self.length_km * 1e3  # s/m
        return lam**2 * d_l / C_M_PER_S


def dispersion_phase(freq_hz, p: FiberParams):
    return np.pi * p.beta * np.asarray(freq_hz) ** 2


def walkoff_delay_s(delta_f_hz: float, p: FiberParams) -> float:
    """Group-delay difference D*L*dlambda between components ``delta_f_hz`` apart."""
    return p.beta * abs(delta_f_hz)


def fading_null_hz(p: FiberParams, order: int = 0) -> float:
    """RF frequency of the ``order``-th DSB power null, where the phase reaches (2k+1)pi/2."""
    return float(np.sqrt((order + 0.5) / p.beta))


def wiener_phase(n, linewidth_hz, sample_rate_hz, rng):
    """Phase random walk with increment variance 2*pi*linewidth/fs, starting at 0."""
    phi = np.zeros(n)
    if linewidth_hz > 0 and n > 1:
        sigma = np.sqrt(2 * np.pi * linewidth_hz / sample_rate_hz)
        phi[1:] = np.cumsum(rng.normal(0.0, sigma, n - 1))
    return phi


def wiener_phase_on_grid(n, linewidth_hz, sample_rate_hz, rng, base_rate_hz=None):
    """Wiener phase for ``n`` samples, optionally drawn on a coarser base grid.

    With ``base_rate_hz`` the walk is drawn at that rate and linearly
    interpolated, so one seed yields the same path at every sample rate.
    """
    if base_rate_hz is None or base_rate_hz >= sample_rate_hz:
        return wiener_phase(n, linewidth_hz, sample_rate_hz, rng)
    t = np.arange(n) / sample_rate_hz
    n_base = int(np.ceil(t[-1] * base_rate_hz)) + 1
    coarse = wiener_phase(n_base, linewidth_hz, base_rate_hz, rng)
    return np.interp(t, np.arange(n_base) / base_rate_hz, coarse)


def laser_phase(p: LaserParams, n_samples: int, sample_rate_hz: float, rng_seed: int,
                base_rate_hz: float | None = None):
    """Draw one capture's frequency offset and total phase (excluding the nominal tone).

    Draw order is fixed (offset, initial phase, increments) so a seed gives the
    same offset at any sample rate, and the same phase path whenever
    ``base_rate_hz`` is shared.  Returns ``(offset_hz, phase_rad)``.
    """
    rng = np.random.default_rng(rng_seed)
    df = rng.uniform(-p.freq_jitter_hz, p.freq_jitter_hz) if p.freq_jitter_hz > 0 else 0.0
    phi0 = rng.uniform(0, 2 * np.pi)
    t = np.arange(n_samples) / sample_rate_hz
    phi = phi0 + wiener_phase_on_grid(n_samples, p.linewidth_hz, sample_rate_hz, rng, base_rate_hz)
    phi = phi + 2 * np.pi * df * t + np.pi * p.drift_hz_per_s * t**2
    return float(df), phi


def gen_laser_field(
    p: LaserParams,
    n_samples: int,
    sample_rate_hz: float,
    rng_seed: int,
    ref_freq_hz: float = DEFAULT_OPTICAL_REF_HZ,
    base_rate_hz: float | None = None,
) -> Waveform:
    """Free-running laser: static uniform offset, optional drift, Wiener phase noise."""
    if n_samples <= 0:
        raise ValueError("n_samples must be positive")
    if abs(p.center_freq_hz) + p.freq_jitter_hz >= sample_rate_hz / 2:
        raise BandError("laser line falls outside the simulated band")
    df, phi = laser_phase(p, n_samples, sample_rate_hz, rng_seed, base_rate_hz)
    cycles = np.mod(p.center_freq_hz / sample_rate_hz * np.arange(n_samples), 1.0)
    field = np.sqrt(p.power_mw * 1e-3) * np.exp(1j * (2 * np.pi * cycles + phi))
    meta = {"freq_offset_hz": df, "center_freq_hz": p.center_freq_hz}
    return Waveform(field, sample_rate_hz, ref_freq_hz, meta=meta)


def _carrier_amplitude(sideband_power, carrier_suppression_db):
    return np.sqrt(sideband_power * 10 ** (-carrier_suppression_db / 10))


def ossb_modulate(
    carrier: Waveform,
    if_signal: Waveform,
    carrier_suppression_db: float,
    mode: str = "ssb",
    modulation_index: float = 0.2,
    model: str = "ideal",
) -> Waveform:
    """Modulate ``carrier`` with a complex (analytic) IF drive.

    ``mode="ssb"`` keeps the upper sideband only, as produced by an IQ-MZM fed
    through a 90 degree hybrid; ``"dsb"`` drives with the real part so both
    sidebands appear.  The drive is normalised to ``modulation_index`` rad
    peak.  The residual carrier sits ``carrier_suppression_db`` below the
    average sideband power.

    ``model="iqmzm"`` replaces the linear model with sinusoidal arm transfer
    functions biased near null, which adds drive-dependent distortion.
    """
    if len(carrier) != len(if_signal) or carrier.sample_rate_hz != if_signal.sample_rate_hz:
        raise ValueError("carrier and IF signal must share length and sample rate")
    if mode not in ("ssb", "dsb"):
        raise ValueError("mode must be 'ssb' or 'dsb'")
    s = if_signal.samples
    peak = np.max(np.abs(s))
    if peak == 0:
        raise ValueError("IF signal is all zeros")
    drive = modulation_index * s / peak
    if mode == "dsb":
        drive = drive.real.astype(complex)
    p_sb = np.mean(np.abs(drive) ** 2)

    if model == "ideal":
        env = _carrier_amplitude(p_sb, carrier_suppression_db) + drive
    elif model == "iqmzm":
        if mode == "ssb":
            # residual carrier from both arms: |(1+j) tan b|^2 = 2 tan^2 b
            b = np.arctan(_carrier_amplitude(p_sb, carrier_suppression_db) / np.sqrt(2))
            env = (np.sin(b + drive.real) + 1j * np.sin(b + drive.imag)) / np.cos(b)
        else:
            b = np.arctan(_carrier_amplitude(p_sb, carrier_suppression_db))
            env = np.sin(b + drive.real) / np.cos(b) + 0j
    else:
        raise ValueError("model must be 'ideal' or 'iqmzm'")
    return carrier.with_samples(carrier.samples * env, band=None)


def obpf(field: Waveform, carrier_offset_hz: float, if_hz: float, bandwidth_hz: float,
         margin_hz: float = 1e9) -> Waveform:
    """Optical bandpass from just below the carrier to just above the upper sideband."""
    ref = field.ref_freq_hz
    return bandpass(
        field,
        ref + carrier_offset_hz - margin_hz,
        ref + carrier_offset_hz + if_hz + bandwidth_hz / 2 + margin_hz,
    )


def edfa(
    field: Waveform,
    gain_db: float,
    noise_figure_db: float,
    rng_seed: int,
    noise_psd_w_per_hz: float | None = None,
) -> Waveform:
    """Scalar gain plus white ASE.

    The ASE density defaults to ``(F*G - 1) * h * nu / 2`` (clipped at zero),
    with ``nu`` the field's reference frequency.  Pass ``noise_figure_db=-inf``
    for a noiseless amplifier, or ``noise_psd_w_per_hz`` to set the density
    directly.
    """
    if gain_db < 0:
        raise ValueError("gain_db must be non-negative")
    g = 10 ** (gain_db / 10)
    if noise_psd_w_per_hz is None:
        f = 0.0 if np.isneginf(noise_figure_db) else 10 ** (noise_figure_db / 10)
        nu = field.ref_freq_hz or DEFAULT_OPTICAL_REF_HZ
        noise_psd_w_per_hz = max(f * g - 1.0, 0.0) * PLANCK_J_S * nu / 2
    y = np.sqrt(g) * field.samples
    if noise_psd_w_per_hz > 0:
        rng = np.random.default_rng(rng_seed)
        var = noise_psd_w_per_hz * field.sample_rate_hz
        n = len(field)
        y = y + np.sqrt(var / 2) * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    return field.with_samples(y)


def combine(fields, split_loss: bool = False) -> Waveform:
    """Ideal coupler: element-wise sum, optionally with a 3 dB split loss."""
    fields = list(fields)
    if not fields:
        raise ValueError("nothing to combine")
    first = fields[0]
    for f in fields[1:]:
        if (
            len(f) != len(first)
            or f.sample_rate_hz != first.sample_rate_hz
            or f.ref_freq_hz != first.ref_freq_hz
        ):
            raise ValueError("fields must share length, sample rate and reference")
    y = np.sum([f.samples for f in fields], axis=0)
    if split_loss:
        y = y / np.sqrt(2)
    return first.with_samples(y, band=None, meta={})


def fiber_propagate(field: Waveform, p: FiberParams) -> Waveform:
    """Linear all-pass dispersion about the reference plus scalar attenuation.

    The spectral phase is ``+pi*beta*f^2``, so for D > 0 higher frequencies
    arrive earlier (group delay ``-beta*f``).
    """
    if p.length_km == 0:
        return field
    f = np.fft.fftfreq(len(field), 1.0 / field.sample_rate_hz)
    loss = 10 ** (-p.attenuation_db_km * p.length_km / 20)
    H = loss * np.exp(1j * dispersion_phase(f, p))
    return field.with_samples(np.fft.ifft(np.fft.fft(field.samples) * H))

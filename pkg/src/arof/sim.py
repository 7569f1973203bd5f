"""End-to-end link simulation at two fidelities, plus bandwidth and carrier sweeps.

``full_field`` carries the whole optical field at a sample rate covering the
carrier separation.  ``equivalent_baseband`` keeps only the data beat at the
OFDM rate and folds lasers, fibre and LO into a composite phase and a
dispersion transfer function; it reuses the same laser seeds, so the
per-capture frequency offsets agree between fidelities.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .config import LinkConfig
from .errors import ArofError, BandError, MemoryCapError
from .frontend import (
    adc_capture,
    gen_lo,
    mixer_downconvert,
    pda_emitted_power,
    photodiode,
    rf_source_phase,
    ripple_response,
)
from .ofdm import build_frame, place_at_if
from .optics import (
    combine,
    dispersion_phase,
    edfa,
    fiber_propagate,
    gen_laser_field,
    laser_phase,
    obpf,
    ossb_modulate,
    walkoff_delay_s,
)
from .rxdsp import DspReport, run_rx_chain
from .waveform import Waveform, add_awgn, apply_response, band_power

STREAMS = {"payload": 1, "pilots": 2, "laser1": 3, "laser2": 4, "lo": 5, "rx_noise": 6, "edfa": 7}
# complex128 arrays alive at once in the full-field chain, for the memory estimate
_FULL_FIELD_ARRAYS = 12
PHOTODIODE_MARGIN_HZ = 1e9


def sub_seed(seed: int, stream: str) -> int:
    """Independent, reproducible integer seed for one random stream of a run."""
    ss = np.random.SeedSequence([int(seed), STREAMS[stream]])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def effective_config(cfg: LinkConfig) -> LinkConfig:
    """Apply impairment switches and widen the FO search to the composite offset range."""
    imp = cfg.impairments
    l1, l2, rx, fib = cfg.laser1, cfg.laser2, cfg.receiver, cfg.fiber
    if not imp.phase_noise:
        l1 = replace(l1, linewidth_hz=0.0)
        l2 = replace(l2, linewidth_hz=0.0)
        rx = replace(rx, rf_source_linewidth_hz=0.0)
    if not imp.fo_jitter:
        l1 = replace(l1, freq_jitter_hz=0.0, drift_hz_per_s=0.0)
        l2 = replace(l2, freq_jitter_hz=0.0, drift_hz_per_s=0.0)
        rx = replace(rx, rf_source_freq_offset_hz=0.0)
    if not imp.dispersion:
        fib = replace(fib, dispersion_ps_nm_km=0.0)
    if not imp.additive_noise:
        rx = replace(rx, rx_snr_db=math.inf)
    # retune the source so the nominal LO sits at the carrier beat
    rx = replace(rx, rf_source_freq_hz=cfg.link.carrier_separation_hz / rx.multiplier_factor)
    ofdm = cfg.ofdm
    composite = l1.freq_jitter_hz + l2.freq_jitter_hz + rx.multiplier_factor * abs(
        rx.rf_source_freq_offset_hz
    )
    if composite > ofdm.fo_search_hz:
        ofdm = replace(ofdm, fo_search_hz=composite)
    return replace(cfg, laser1=l1, laser2=l2, receiver=rx, fiber=fib, ofdm=ofdm)


def _payload(cfg):
    rng = np.random.default_rng(sub_seed(cfg.seed, "payload"))
    return rng.integers(0, 2, cfg.ofdm.n_payload_bits, dtype=np.uint8)


def _ground_truth(cfg, df1, df2, fidelity):
    rx = cfg.receiver
    lo_offset = rx.multiplier_factor * rx.rf_source_freq_offset_hz
    return {
        "fidelity": fidelity,
        "fo_hz": df1 - df2 - lo_offset,
        "laser1_offset_hz": df1,
        "laser2_offset_hz": df2,
        "lo_offset_hz": lo_offset,
        "signal_freq_hz": cfg.signal_freq_hz,
        "walkoff_delay_s": walkoff_delay_s(cfg.link.carrier_separation_hz, cfg.fiber),
        "pda_emitted_power_w": pda_emitted_power(cfg.signal_freq_hz, cfg.pda),
        "config_fingerprint": cfg.fingerprint(),
        "seed": cfg.seed,
    }


def _check_signal_band(cfg):
    rx = cfg.receiver
    if not rx.in_mixer_band(cfg.signal_freq_hz):
        raise BandError(
            f"sub-THz signal at {cfg.signal_freq_hz / 1e9:g} GHz outside mixer band "
            f"{rx.mixer_band_hz[0] / 1e9:g}-{rx.mixer_band_hz[1] / 1e9:g} GHz"
        )


def _laser1_offset_hz(cfg):
    # centre the optical spectrum: laser 2 .. laser 1 .. upper sideband
    return (cfg.link.carrier_separation_hz - cfg.ofdm.if_hz) / 2


@dataclass
class LinkResult:
    report: DspReport
    capture: Waveform
    meta: object
    config: LinkConfig

    @property
    def ground_truth(self):
        return self.report.ground_truth


def simulate_equivalent_baseband(cfg: LinkConfig) -> LinkResult:
    """Fast link model at the OFDM sample rate.

    The received data beat is the frame, through the sideband-to-carrier
    dispersion response and the ripple mask, multiplied by
    ``exp(j(phi1(t) - phi2(t - walkoff) - N*phi_src(t)))`` and placed at the IF.
    """
    raw_cfg = cfg
    cfg = effective_config(cfg)
    _check_signal_band(cfg)
    p, rx = cfg.ofdm, cfg.receiver
    frame, meta = build_frame(p, _payload(cfg), sub_seed(cfg.seed, "pilots"))
    n, fs = len(frame), frame.sample_rate_hz

    df1, phi1 = laser_phase(cfg.laser1, n, fs, sub_seed(cfg.seed, "laser1"))
    df2, phi2 = laser_phase(cfg.laser2, n, fs, sub_seed(cfg.seed, "laser2"))
    phi_src = rf_source_phase(rx, n, fs, sub_seed(cfg.seed, "lo"))

    f1 = _laser1_offset_hz(cfg)
    f_sb = f1 + p.if_hz
    f2 = f1 - cfg.link.carrier_separation_hz
    beta = cfg.fiber.beta
    walkoff = beta * (f_sb - f2)
    t = np.arange(n) / fs
    phi2_late = np.interp(t - walkoff, t, phi2)
    lo_offset = rx.multiplier_factor * rx.rf_source_freq_offset_hz
    composite = phi1 - phi2_late - rx.multiplier_factor * phi_src - 2 * np.pi * lo_offset * t

    # dispersion relative to the sideband centre; the bulk delay is common to
    # the data and laser 1, so only the curvature remains after re-timing
    f = np.fft.fftfreq(n, 1 / fs)
    theta = dispersion_phase(f_sb + f, cfg.fiber) - dispersion_phase(f_sb, cfg.fiber)
    theta -= 2 * np.pi * beta * f_sb * f
    s = np.fft.ifft(np.fft.fft(frame.samples) * np.exp(1j * theta))

    y = Waveform(s * np.exp(1j * composite), fs, cfg.signal_freq_hz)
    span = meta.active_span
    p_ref = float(np.mean(np.abs(y.samples[span[0] : span[1]]) ** 2))
    y = apply_response(y, ripple_response(rx))
    y = add_awgn(y, rx.rx_snr_db, p.n_used * p.sc_spacing_hz, sub_seed(cfg.seed, "rx_noise"), p_ref)
    capture = Waveform(y.samples, fs, p.if_hz)

    report = run_rx_chain(capture, meta, p)
    report.ground_truth = _ground_truth(raw_cfg, df1, df2, "equivalent_baseband")
    report.ground_truth["fo_hz"] = df1 - df2 - lo_offset
    return LinkResult(report, capture, meta, raw_cfg)


def full_field_rate_hz(cfg: LinkConfig) -> float:
    """Smallest power-of-two multiple of the subcarrier spacing covering the optical span."""
    p = cfg.ofdm
    need = 2.2 * (cfg.link.carrier_separation_hz + p.if_hz + p.bandwidth_hz)
    k = max(int(np.ceil(np.log2(need / p.sc_spacing_hz))), int(np.log2(p.fft_size)))
    return p.sc_spacing_hz * 2**k


def _adc_rate_hz(cfg):
    p = cfg.ofdm
    need = 2.2 * (p.if_hz + p.bandwidth_hz / 2)
    return p.sc_spacing_hz * 2 ** int(np.ceil(np.log2(need / p.sc_spacing_hz)))


def simulate_full_field(cfg: LinkConfig) -> LinkResult:
    """Physical chain on the full optical field: AWG, OSSB, OBPF, EDFA, fibre, PD, mixer, ADC."""
    raw_cfg = cfg
    cfg = effective_config(cfg)
    _check_signal_band(cfg)
    p, rx, link = cfg.ofdm, cfg.receiver, cfg.link
    frame, meta_bb = build_frame(p, _payload(cfg), sub_seed(cfg.seed, "pilots"))
    fs = full_field_rate_hz(cfg)
    factor = int(round(fs / frame.sample_rate_hz))
    n = len(frame) * factor
    need_mb = n * 16 * _FULL_FIELD_ARRAYS / 2**20
    if need_mb > link.memory_cap_mb:
        raise MemoryCapError(
            f"full-field run needs about {need_mb:.0f} MB, cap is {link.memory_cap_mb:g} MB; "
            "use the equivalent_baseband fidelity"
        )

    f1 = _laser1_offset_hz(cfg)
    l1 = replace(cfg.laser1, center_freq_hz=f1)
    l2 = replace(cfg.laser2, center_freq_hz=f1 - link.carrier_separation_hz)
    ref = link.optical_ref_hz

    if_sig = place_at_if(frame, p.if_hz, fs)
    base = p.sample_rate_hz  # shared phase-noise grid, see wiener_phase_on_grid
    carrier = gen_laser_field(l1, n, fs, sub_seed(cfg.seed, "laser1"), ref, base)
    mod = ossb_modulate(carrier, if_sig, link.carrier_suppression_db, "ssb",
                        link.modulation_index, link.modulator_model)
    mod = obpf(mod, f1, p.if_hz, p.bandwidth_hz)
    nf = -math.inf if not cfg.impairments.additive_noise else link.edfa_noise_figure_db
    amp = edfa(mod, link.edfa_gain_db, nf, sub_seed(cfg.seed, "edfa"))
    second = gen_laser_field(l2, n, fs, sub_seed(cfg.seed, "laser2"), ref, base)
    fib = fiber_propagate(combine([amp, second]), cfg.fiber)
    del if_sig, carrier, mod, amp, second

    f_s = cfg.signal_freq_hz
    half = p.bandwidth_hz / 2 + PHOTODIODE_MARGIN_HZ
    pd = photodiode(fib, cfg.pda.responsivity_a_per_w, (f_s - half, f_s + half))
    del fib
    scale = math.sqrt(pda_emitted_power(f_s, cfg.pda) / max(b for _, b in cfg.pda.power_points))
    scale *= 10 ** (-cfg.pda.wireless_loss_db / 20)
    thz = pd.with_samples(pd.samples * scale)
    span = meta_bb.scaled(factor).active_span
    p_ref = band_power(thz, f_s - half, f_s + half, span)
    thz = apply_response(thz, ripple_response(rx))

    lo = gen_lo(rx, n, fs, sub_seed(cfg.seed, "lo"), ref_freq_hz=0.0, base_rate_hz=base)
    mixed = mixer_downconvert(thz, lo, rx, sub_seed(cfg.seed, "rx_noise"), f_s, p_ref,
                              p.n_used * p.sc_spacing_hz)
    del thz, lo
    rx_adc = replace(rx, adc_rate_hz=rx.adc_rate_hz or _adc_rate_hz(cfg))
    capture = adc_capture(mixed.with_samples(mixed.samples, band=None), rx_adc,
                          p.if_hz + half)

    report = run_rx_chain(capture, meta_bb, p)
    df1 = float(gen_meta_offset(l1, cfg.seed, "laser1"))
    df2 = float(gen_meta_offset(l2, cfg.seed, "laser2"))
    report.ground_truth = _ground_truth(raw_cfg, df1, df2, "full_field")
    report.ground_truth["fo_hz"] = df1 - df2 - rx.multiplier_factor * rx.rf_source_freq_offset_hz
    report.ground_truth["sim_rate_hz"] = fs
    return LinkResult(report, capture, meta_bb, raw_cfg)


def gen_meta_offset(laser, seed, stream):
    """Frequency offset a laser draws for this run (independent of sample rate)."""
    df, _ = laser_phase(laser, 1, 1.0, sub_seed(seed, stream))
    return df


def run_equivalent_baseband(cfg: LinkConfig) -> DspReport:
    return simulate_equivalent_baseband(cfg).report


def run_full_field(cfg: LinkConfig) -> DspReport:
    return simulate_full_field(cfg).report


def simulate(cfg: LinkConfig) -> LinkResult:
    """Run one capture at the fidelity selected in ``cfg.link.fidelity``."""
    if cfg.link.fidelity == "full_field":
        return simulate_full_field(cfg)
    return simulate_equivalent_baseband(cfg)


def run_link(cfg: LinkConfig) -> DspReport:
    return simulate(cfg).report


# -- sweeps -------------------------------------------------------------------

SWEEP_COLUMNS = ("x_value", "evm_percent", "ber", "fo_est_hz", "seed", "n_seeds", "status")


@dataclass
class SweepTable:
    x_name: str
    rows: list = field(default_factory=list)
    fingerprint: str = ""

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in self.rows:
            w.writerow([_fmt(r[c]) for c in SWEEP_COLUMNS])
        return buf.getvalue()

    def column(self, name):
        return np.array([r[name] for r in self.rows], dtype=float)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _one_run(cfg):
    try:
        rep = run_link(cfg)
    except BandError as exc:
        return {"status": exc.kind, "evm": None, "ber": None, "fo": None}
    return {"status": rep.status, "evm": rep.evm_percent, "ber": rep.ber, "fo": rep.fo_est_hz}


def _run_point(x, cfg, n_seeds, pool):
    cfgs = [cfg.with_seed(cfg.seed + i) for i in range(n_seeds)]
    results = list(pool.map(_one_run, cfgs)) if pool else [_one_run(c) for c in cfgs]
    ok = [r for r in results if r["status"] == "ok"]
    row = {"x_value": float(x), "seed": cfg.seed, "n_seeds": n_seeds}
    if ok:
        row.update(
            evm_percent=float(np.mean([r["evm"] for r in ok])),
            ber=float(np.mean([r["ber"] for r in ok])),
            fo_est_hz=float(results[0]["fo"]) if results[0]["fo"] is not None else None,
            status="ok" if len(ok) == n_seeds else f"partial:{len(ok)}/{n_seeds}",
        )
    else:
        row.update(evm_percent=None, ber=None, fo_est_hz=None, status=results[0]["status"])
    return row


def _sweep(points, n_seeds, workers, x_name, fingerprint):
    table = SweepTable(x_name, fingerprint=fingerprint)
    pool = ProcessPoolExecutor(workers) if workers and workers > 1 else None
    try:
        for x, c in points:
            if isinstance(c, str):
                table.rows.append({"x_value": float(x), "evm_percent": None, "ber": None,
                                   "fo_est_hz": None, "seed": None, "n_seeds": n_seeds,
                                   "status": c})
            else:
                table.rows.append(_run_point(x, c, n_seeds, pool))
    finally:
        if pool:
            pool.shutdown()
    table.rows.sort(key=lambda r: r["x_value"])
    return table


def bandwidth_point_config(cfg: LinkConfig, spacing_hz: float) -> LinkConfig:
    """Config of one bandwidth-sweep point: new spacing, SNR scaled for constant transmit power."""
    snr = cfg.receiver.rx_snr_db - 10 * np.log10(spacing_hz / cfg.ofdm.sc_spacing_hz)
    return replace(cfg, ofdm=replace(cfg.ofdm, sc_spacing_hz=float(spacing_hz)),
                   receiver=replace(cfg.receiver, rx_snr_db=float(snr)))


def carrier_point_config(cfg: LinkConfig, signal_freq_hz: float,
                         sc_spacing_hz: float = 20e6) -> LinkConfig:
    """Config of one carrier-sweep point: laser 2 and LO retuned so the signal sits at ``signal_freq_hz``."""
    c = bandwidth_point_config(cfg, sc_spacing_hz)
    return replace(c, link=replace(c.link, carrier_separation_hz=float(signal_freq_hz - cfg.ofdm.if_hz)))


def sweep_bandwidth(cfg: LinkConfig, spacings_hz, n_seeds: int = 20, workers: int = 1) -> SweepTable:
    """EVM versus subcarrier spacing at fixed subcarrier count and transmit power.

    The in-band SNR falls by ``10*log10(spacing/base_spacing)`` because the
    noise bandwidth grows with the signal bandwidth.
    """
    points = [(sp, bandwidth_point_config(cfg, sp)) for sp in spacings_hz]
    return _sweep(points, n_seeds, workers, "sc_spacing_hz", cfg.fingerprint())


def sweep_carrier(cfg: LinkConfig, signal_freqs_hz, n_seeds: int = 20, workers: int = 1,
                  sc_spacing_hz: float = 20e6) -> SweepTable:
    """EVM versus sub-THz signal frequency; points outside the mixer band are marked."""
    points = []
    for f in signal_freqs_hz:
        if cfg.receiver.in_mixer_band(f):
            points.append((f, carrier_point_config(cfg, f, sc_spacing_hz)))
        else:
            points.append((f, BandError.kind))
    return _sweep(points, n_seeds, workers, "signal_freq_hz", cfg.fingerprint())


__all__ = [
    "ArofError",
    "LinkResult",
    "SweepTable",
    "bandwidth_point_config",
    "carrier_point_config",
    "effective_config",
    "full_field_rate_hz",
    "run_equivalent_baseband",
    "run_full_field",
    "run_link",
    "simulate",
    "simulate_equivalent_baseband",
    "simulate_full_field",
    "sub_seed",
    "sweep_bandwidth",
    "sweep_carrier",
]

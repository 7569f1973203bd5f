import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from arof.errors import EstimationError
from arof.ofdm import OfdmParams, build_frame, demodulate, map_bits_to_qam, payload_grid
from arof.rxdsp import (
    STAGES,
    DspReport,
    compute_ber,
    compute_evm,
    estimate_channel,
    pilot_cpe_correct,
    qam_ber_awgn,
    residual_fo_hz,
    run_rx_chain,
    sc_synchronize,
    smooth_channel,
    timing_metric,
    to_baseband,
)
from arof.waveform import Waveform, add_awgn, frequency_shift

from oracles import ml_fo_oracle, pam_gray_ber


def frame(params=None, seed=0):
    params = params or OfdmParams()
    bits = np.random.default_rng(seed).integers(0, 2, params.n_payload_bits)
    w, meta = build_frame(params, bits, seed)
    return params, w, meta


def capture(params, w, meta, fo_hz=0.0, snr_db=np.inf, seed=0, delay=0):
    """Baseband capture tagged at the IF, so the receiver does no mixing."""
    x = frequency_shift(w.with_samples(np.roll(w.samples, delay), band=None), fo_hz)
    a, b = meta.active_span
    x = add_awgn(x, snr_db, params.bandwidth_hz, seed, float(np.mean(np.abs(w.samples[a:b]) ** 2)))
    return Waveform(x.samples, params.sample_rate_hz, params.if_hz)


class TestTimingMetric:
    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31))
    def test_bounded_by_one(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=600) + 1j * rng.normal(size=600)
        x[rng.integers(0, 600, 50)] = 0
        M, _ = timing_metric(x, 64)
        assert np.all(M <= 1 + 1e-12)

    def test_peak_on_preamble(self):
        p, w, meta = frame()
        M, _ = timing_metric(w.samples, p.fft_size // 2)
        s = meta.symbol_starts[0]
        assert M[s] == pytest.approx(1.0, abs=1e-9)
        assert s - p.cp_len <= int(np.argmax(M)) <= s


class TestSync:
    def test_start_inside_cyclic_prefix(self):
        p, w, meta = frame()
        for delay in (0, 5, 40):
            r = sc_synchronize(to_baseband(capture(p, w, meta, 3.3e6, 20, 1, delay), p), p)
            err = r.start_index - (meta.symbol_starts[0] + delay)
            assert -p.cp_len <= err <= 0

    @settings(max_examples=25, deadline=None)
    @given(st.floats(-29e6, 29e6), st.integers(0, 2**16))
    def test_fo_within_search(self, fo, seed):
        p, w, meta = frame(seed=seed % 7)
        r = sc_synchronize(to_baseband(capture(p, w, meta, fo, 15, seed), p), p)
        assert abs(r.fo_total_hz - fo) < 0.1 * p.sc_spacing_hz
        assert abs(r.fo_fractional_hz) <= p.sc_spacing_hz / 2

    def test_fractional_part_below_half_bin(self):
        p, w, meta = frame()
        r = sc_synchronize(to_baseband(capture(p, w, meta, 7.9e6, 30, 2), p), p)
        assert abs(r.fo_fractional_hz) <= p.sc_spacing_hz / 2
        assert r.fo_total_hz == pytest.approx(r.fo_integer_bins * p.sc_spacing_hz + r.fo_fractional_hz)

    def test_noise_only_reports_no_frame(self):
        p, w, _ = frame()
        rng = np.random.default_rng(4)
        noise = Waveform(rng.normal(size=len(w)) + 1j * rng.normal(size=len(w)), w.sample_rate_hz, p.if_hz)
        _, _, meta = frame()
        rep = run_rx_chain(noise, meta, p)
        assert rep.status == "no_frame_found"
        assert rep.evm_percent is None and not rep.pass_3gpp

    def test_rejects_wrong_rate(self):
        p, w, _ = frame()
        with pytest.raises(ValueError):
            sc_synchronize(Waveform(w.samples, 2 * w.sample_rate_hz), p)


class TestFoAgainstOracle:
    def test_matches_grid_search(self):
        p, w, meta = frame()
        a, b = meta.active_span
        rng = np.random.default_rng(11)
        errs, gaps = [], []
        for seed in range(12):
            fo = rng.uniform(-30e6, 30e6)
            cap = capture(p, w, meta, fo, 15, seed)
            rep = run_rx_chain(cap, meta, p)
            oracle = ml_fo_oracle(cap.samples[a:b], w.samples[a:b], p.sample_rate_hz)
            errs.append(abs(rep.fo_est_hz - fo))
            gaps.append(abs(rep.fo_est_hz - oracle))
        assert np.mean(errs) < 0.01 * p.sc_spacing_hz
        assert np.mean(gaps) < 0.005 * p.sc_spacing_hz

    def test_fine_stage_reduces_error(self):
        p, w, meta = frame()
        rng = np.random.default_rng(5)
        coarse, total = [], []
        for seed in range(12):
            fo = rng.uniform(-30e6, 30e6)
            rep = run_rx_chain(capture(p, w, meta, fo, 15, seed), meta, p)
            coarse.append(abs(rep.sync.fo_total_hz - fo))
            total.append(abs(rep.fo_est_hz - fo))
        assert np.mean(total) < np.mean(coarse)


class TestChannel:
    def test_ls_estimate_exact(self):
        p = OfdmParams()
        h = np.exp(0.3j) * (1 + 0.1 * np.arange(p.n_used) / p.n_used)
        assert np.allclose(estimate_channel(h * p.training_values, p.training_values), h)

    def test_energy_floor(self):
        p = OfdmParams()
        with pytest.raises(EstimationError):
            estimate_channel(np.zeros(p.n_used), p.training_values)

    def test_smoothing_keeps_ramp_times_cubic(self):
        p = OfdmParams()
        k = p.used_bins
        x = k / np.abs(k).max()
        h = np.exp(-2j * np.pi * 3 * k / p.fft_size) * np.exp(0.4j) * (1 + 0.2 * x - 0.1 * x**3)
        assert np.allclose(smooth_channel(h, k), h, atol=1e-9)

    def test_smoothing_reduces_estimation_noise(self):
        p = OfdmParams()
        rng = np.random.default_rng(0)
        h = np.exp(-2j * np.pi * 2 * p.used_bins / p.fft_size)
        noisy = h + 0.1 * (rng.normal(size=p.n_used) + 1j * rng.normal(size=p.n_used))
        sm = smooth_channel(noisy, p.used_bins)
        assert np.mean(np.abs(sm - h) ** 2) < 0.2 * np.mean(np.abs(noisy - h) ** 2)


class TestCpe:
    def test_removes_common_rotation(self):
        p, _, meta = frame()
        grid = payload_grid(p, meta)
        rot = np.exp(1j * np.linspace(-2, 2, len(grid)))
        fixed, theta, applied = pilot_cpe_correct(grid * rot[:, None], p.pilot_pos, meta.pilot_values,
                                                  np.ones(p.n_used))
        assert applied
        assert np.allclose(theta, np.angle(rot))
        assert np.allclose(fixed, grid)

    def test_skipped_without_pilot_power(self):
        p, _, meta = frame()
        grid = np.zeros((p.n_payload_symbols, p.n_used), complex)
        out, theta, applied = pilot_cpe_correct(grid, p.pilot_pos, meta.pilot_values, np.ones(p.n_used))
        assert not applied and np.all(theta == 0)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(-5e4, 5e4), st.floats(-3, 3))
    def test_residual_fo_slope(self, fo, phase0):
        t = np.arange(10) * 0.6e-6
        theta = np.angle(np.exp(1j * (phase0 + 2 * np.pi * fo * t)))
        assert residual_fo_hz(theta, t) == pytest.approx(fo, abs=1e-6)

    def test_residual_fo_single_symbol(self):
        assert residual_fo_hz([0.4], [1e-6]) == 0.0


class TestMetrics:
    def test_evm_known_value(self):
        ref = np.array([1, -1, 1j, -1j])
        assert compute_evm(ref * 1.1, ref) == pytest.approx(10.0)

    def test_evm_rejects_mismatch(self):
        with pytest.raises(ValueError):
            compute_evm(np.ones(3), np.ones(4))

    @pytest.mark.parametrize("snr_db", [15.0, 20.0, 25.0, 30.0])
    def test_evm_equals_awgn_amplitude(self, snr_db):
        # genie receiver: known timing and channel, noise added to the waveform
        p = OfdmParams(n_payload_symbols=400)
        _, w, meta = frame(p)
        noisy = capture(p, w, meta, snr_db=snr_db, seed=int(snr_db))
        grid = demodulate(noisy, meta, p)[2:]
        evm = compute_evm(grid[:, p.data_pos], payload_grid(p, meta)[:, p.data_pos])
        assert evm == pytest.approx(100 * 10 ** (-snr_db / 20), abs=0.1)

    @pytest.mark.parametrize("order", [4, 16, 64])
    @pytest.mark.parametrize("es_n0_db", [8.0, 14.0, 20.0])
    def test_closed_form_matches_integration(self, order, es_n0_db):
        assert qam_ber_awgn(es_n0_db, order) == pytest.approx(pam_gray_ber(es_n0_db, order), rel=1e-9)

    def test_measured_ber_matches_oracle(self):
        order, es_n0_db = 64, 18.0
        rng = np.random.default_rng(3)
        bits = rng.integers(0, 2, 6 * 400_000)
        s = map_bits_to_qam(bits, order)
        sigma = np.sqrt(10 ** (-es_n0_db / 10) / 2)
        r = s + sigma * (rng.normal(size=s.size) + 1j * rng.normal(size=s.size))
        ber, errors, n = compute_ber(r, bits, order)
        assert n == bits.size and errors > 1000
        assert ber == pytest.approx(pam_gray_ber(es_n0_db, order), rel=0.1)


class TestRxChain:
    def test_clean_loopback(self):
        p, w, meta = frame()
        rep = run_rx_chain(capture(p, w, meta, 1.7e6, seed=0, delay=3), meta, p)
        assert rep.status == "ok"
        assert rep.evm_percent < 1e-6 and rep.ber == 0.0
        assert rep.n_bits == p.n_payload_bits

    def test_capture_at_if(self):
        p, w, meta = frame()
        from arof.ofdm import place_at_if

        up = place_at_if(w, p.if_hz, 32 * p.sample_rate_hz)
        cap = Waveform(up.samples, up.sample_rate_hz, 0.0)
        rep = run_rx_chain(cap, meta, p)
        assert rep.evm_percent < 1e-6

    def test_stages_and_ber_consistent(self):
        p, w, meta = frame()
        rep = run_rx_chain(capture(p, w, meta, -12.1e6, 22, 9), meta, p)
        assert set(rep.stage_evm) == set(STAGES)
        assert rep.evm_percent == rep.stage_evm["post_cpe"]
        assert rep.constellations["post_cpe"].shape == (p.n_payload_symbols, p.n_data_sc)
        assert rep.bit_errors == round(rep.ber * rep.n_bits)
        assert rep.stage_evm["raw"] > 50

    def test_cpe_removes_phase_steps(self):
        p, w, meta = frame()
        cap = capture(p, w, meta, snr_db=30, seed=2)
        L = p.symbol_len
        steps = np.zeros(len(cap))
        rng = np.random.default_rng(0)
        for s in meta.symbol_starts[2:]:
            steps[s - p.cp_len : s - p.cp_len + L] = rng.normal(0, 0.15)
        rot = cap.with_samples(cap.samples * np.exp(1j * steps))
        rep = run_rx_chain(rot, meta, p)
        assert rep.stage_evm["post_cpe"] < 0.5 * rep.stage_evm["post_eq"]


class TestReport:
    def _report(self):
        p, w, meta = frame()
        return run_rx_chain(capture(p, w, meta, 4e6, 25, 1), meta, p)

    def test_json_deterministic(self):
        a, b = self._report().to_json(True), self._report().to_json(True)
        assert a == b
        d = json.loads(a)
        assert d["status"] == "ok" and set(d["stage_evm_percent"]) == set(STAGES)

    def test_constellation_csv(self):
        rep = self._report()
        lines = rep.constellation_csv().splitlines()
        assert lines[0] == "stage,symbol_index,subcarrier_index,re,im"
        assert len(lines) == 1 + 4 * rep.reference.size

    def test_pass_flag_threshold(self):
        assert DspReport(evm_percent=8.0).pass_3gpp
        assert not DspReport(evm_percent=8.01).pass_3gpp
        assert not DspReport().pass_3gpp

"""Trace synthesis, demodulation, and IQ-level simulation checks."""

import math

import numpy as np
import pytest

from hmmreadout.errors import InputError, SchemaError
from hmmreadout.hmm import Gaussian2D, HmmModel, two_state_transitions
from hmmreadout.signal import (
    DemodulationWarning,
    RawTrace,
    TraceParams,
    autocorrelation_minima,
    demodulate_segments,
    demodulate_window,
    read_trace,
    simulate_iq_dataset,
    simulate_state_sequence,
    simulate_state_sequences,
    synthesize_trace,
    write_trace,
)

FS = 2.0e9  # samples per second
F_IF = 25.0e6  # intermediate frequency
DT = 80e-9  # segment duration: exactly 2 IF periods, 160 samples


def _two_state_model(sep: float = 2.0, t1: float = 14.46e-6, gamma: float = 9.6):
    trans = two_state_transitions(DT, t1, gamma)
    ems = (
        Gaussian2D(-sep / 2.0, 0.0, np.eye(2)),
        Gaussian2D(sep / 2.0, 0.0, np.eye(2)),
    )
    return HmmModel(2, np.array([0.5, 0.5]), trans, ems, DT)


# ---------------------------------------------------------------------------
# hidden-state chains
# ---------------------------------------------------------------------------


def test_segment_duration_is_commensurate_with_the_tone():
    # the chosen segment holds exactly two IF periods, even in floats
    assert F_IF * DT == 2.0
    assert DT * FS == 160.0


def test_one_step_survival_probability_matches_the_decay_rate():
    # P(still excited after one segment) = exp(-dt/T1) = 0.994482...
    chains = simulate_state_sequences(14.46e-6, 0.0, DT, 2, 1, 100_000, seed=0)
    frac = float(np.mean(chains[:, 1] == 1))
    assert frac == pytest.approx(math.exp(-DT / 14.46e-6), abs=8e-4)


def test_whole_record_survival_decays_exponentially():
    n_seg = 243
    chains = simulate_state_sequences(14.46e-6, 0.0, DT, n_seg, 1, 10_000, seed=1)
    expected = math.exp(-(n_seg - 1) * DT / 14.46e-6)
    frac = float(np.mean(chains[:, -1] == 1))
    assert frac == pytest.approx(expected, abs=0.015)
    # decay is one-way when excitation is off
    assert not np.any(np.diff(chains, axis=1) > 0)


def test_ground_start_without_excitation_stays_ground():
    chains = simulate_state_sequences(14.46e-6, 0.0, DT, 50, 0, 200, seed=2)
    assert not chains.any()


def test_excitation_rate_shows_up_in_ground_chains():
    gamma = 2.0e5  # exaggerated so 50k steps see ~800 events
    chains = simulate_state_sequences(math.inf, gamma, DT, 2, 0, 50_000, seed=3)
    frac = float(np.mean(chains[:, 1] == 1))
    assert frac == pytest.approx(gamma * DT, rel=0.15)


def test_batch_row_zero_equals_the_single_sequence_call():
    single = simulate_state_sequence(5e-6, 100.0, DT, 30, 1, seed=9)
    batch = simulate_state_sequences(5e-6, 100.0, DT, 30, 1, 4, seed=9)
    assert np.array_equal(batch[0], single)


def test_chain_simulation_rejects_bad_requests():
    with pytest.raises(InputError):
        simulate_state_sequence(5e-6, 0.0, DT, 0, 1, seed=0)
    with pytest.raises(InputError):
        simulate_state_sequence(5e-6, 0.0, DT, 10, 2, seed=0)
    with pytest.raises(InputError):
        simulate_state_sequence(-1e-6, 0.0, DT, 10, 1, seed=0)
    with pytest.raises(InputError):
        simulate_state_sequence(5e-6, 2.0 / DT, DT, 10, 1, seed=0)
    with pytest.raises(InputError):
        simulate_state_sequences(5e-6, 0.0, DT, 10, 1, 0, seed=0)


# ---------------------------------------------------------------------------
# synthesis and demodulation
# ---------------------------------------------------------------------------


def _tone_params(n_segments: int, amp=1.0, phase=0.0, noise=0.0, seed=0) -> TraceParams:
    return TraceParams(
        sample_rate_hz=FS,
        if_freq_hz=F_IF,
        duration_s=n_segments * DT,
        amp_per_state=((amp, phase),),
        noise_sigma=noise,
        seed=seed,
    )


def test_cosine_tone_lands_on_the_i_axis():
    states = np.zeros(243, dtype=np.int64)
    trace = synthesize_trace(_tone_params(243, amp=0.7), states, DT)
    obs = demodulate_segments(trace, F_IF, DT)
    assert len(obs) == 243
    assert np.allclose(obs.points[:, 0], 0.7, atol=1e-9)
    assert np.allclose(obs.points[:, 1], 0.0, atol=1e-9)


def test_quarter_period_phase_shift_lands_on_the_q_axis():
    # cos(wt - pi/2) = sin(wt)
    states = np.zeros(10, dtype=np.int64)
    trace = synthesize_trace(_tone_params(10, amp=0.5, phase=-math.pi / 2), states, DT)
    obs = demodulate_segments(trace, F_IF, DT)
    assert np.allclose(obs.points[:, 0], 0.0, atol=1e-9)
    assert np.allclose(obs.points[:, 1], 0.5, atol=1e-9)


def test_demodulation_matches_the_quadrature_sums():
    rng = np.random.default_rng(21)
    samples = rng.normal(0.0, 1.0, size=160 * 7)
    trace = RawTrace(samples=samples, sample_rate_hz=FS)
    obs = demodulate_segments(trace, F_IF, DT)
    m = 160
    for k in range(7):
        t = (np.arange(m) + k * m) / FS
        seg = samples[k * m : (k + 1) * m]
        i_ref = 2.0 / m * float(np.sum(seg * np.cos(2 * math.pi * F_IF * t)))
        q_ref = 2.0 / m * float(np.sum(seg * np.sin(2 * math.pi * F_IF * t)))
        assert obs.points[k, 0] == pytest.approx(i_ref, abs=1e-12)
        assert obs.points[k, 1] == pytest.approx(q_ref, abs=1e-12)


def test_synthesis_noise_variance_is_calibrated():
    states = np.zeros(6250, dtype=np.int64)
    params = _tone_params(6250, amp=0.0, noise=0.1, seed=5)  # pure noise, 1e6 samples
    trace = synthesize_trace(params, states, DT)
    assert trace.samples.size == 1_000_000
    assert float(np.var(trace.samples)) == pytest.approx(0.01, rel=0.05)
    assert float(np.mean(trace.samples)) == pytest.approx(0.0, abs=5e-4)


def test_noiseless_synthesis_is_reproducible_and_seeded_noise_is_too():
    states = np.zeros(4, dtype=np.int64)
    a = synthesize_trace(_tone_params(4, noise=0.3, seed=11), states, DT)
    b = synthesize_trace(_tone_params(4, noise=0.3, seed=11), states, DT)
    c = synthesize_trace(_tone_params(4, noise=0.3, seed=12), states, DT)
    assert np.array_equal(a.samples, b.samples)
    assert not np.array_equal(a.samples, c.samples)


def test_partial_trailing_segment_is_dropped():
    samples = np.ones(160 * 3 + 57)
    obs = demodulate_segments(RawTrace(samples, FS), F_IF, DT)
    assert len(obs) == 3


def test_incommensurate_segment_warns_about_leakage():
    states = np.zeros(8, dtype=np.int64)
    trace = synthesize_trace(_tone_params(8), states, DT)
    with pytest.warns(DemodulationWarning):
        demodulate_segments(trace, F_IF, 50e-9)  # 1.25 IF periods per segment


def test_demodulation_rejects_impossible_geometry():
    trace = RawTrace(np.ones(320), FS)
    with pytest.raises(InputError):
        demodulate_segments(trace, -1.0, DT)
    with pytest.raises(InputError):
        demodulate_segments(trace, F_IF, 1.3e-10)  # under two samples
    with pytest.raises(InputError):
        demodulate_segments(RawTrace(np.ones(100), FS), F_IF, DT)  # shorter than a segment


def test_window_average_is_the_mean_of_its_segments():
    rng = np.random.default_rng(33)
    from hmmreadout.hmm import ObservationSequence

    pts = rng.normal(0.0, 1.0, size=(20, 2))
    obs = ObservationSequence(pts, DT)
    i_val, q_val = demodulate_window(obs, 7 * DT)
    assert i_val == pytest.approx(pts[:7, 0].mean(), abs=1e-12)
    assert q_val == pytest.approx(pts[:7, 1].mean(), abs=1e-12)
    i_off, q_off = demodulate_window(obs, 5 * DT, start_s=3 * DT)
    assert i_off == pytest.approx(pts[3:8, 0].mean(), abs=1e-12)
    assert q_off == pytest.approx(pts[3:8, 1].mean(), abs=1e-12)


def test_window_average_equals_one_long_segment():
    # demodulating k segments and averaging equals demodulating one
    # window of k*dt directly: the quadrature sum is linear in samples
    states = np.zeros(12, dtype=np.int64)
    trace = synthesize_trace(_tone_params(12, amp=0.9, noise=0.2, seed=7), states, DT)
    fine = demodulate_segments(trace, F_IF, DT)
    coarse = demodulate_segments(trace, F_IF, 4 * DT)
    i_win, q_win = demodulate_window(fine, 4 * DT)
    assert i_win == pytest.approx(coarse.points[0, 0], abs=1e-10)
    assert q_win == pytest.approx(coarse.points[0, 1], abs=1e-10)


def test_window_bounds_are_enforced():
    from hmmreadout.hmm import ObservationSequence

    obs = ObservationSequence(np.zeros((5, 2)), DT)
    with pytest.raises(InputError):
        demodulate_window(obs, 0.5 * DT)
    with pytest.raises(InputError):
        demodulate_window(obs, 6 * DT)
    with pytest.raises(InputError):
        demodulate_window(obs, 2 * DT, start_s=-DT)
    with pytest.raises(InputError):
        demodulate_window(obs, 3 * DT, start_s=3 * DT)


def test_synthesis_rejects_mismatched_state_grids():
    states = np.zeros(10, dtype=np.int64)
    with pytest.raises(InputError):
        synthesize_trace(_tone_params(9), states, DT)  # duration disagrees
    with pytest.raises(InputError):
        synthesize_trace(_tone_params(10), np.full(10, 3), DT)  # no such state
    with pytest.raises(InputError):
        TraceParams(FS, F_IF, 1e-6, ((1.0, 0.0),), -0.1, 0)
    with pytest.raises(InputError):
        TraceParams(40e6, F_IF, 1e-6, ((1.0, 0.0),), 0.0, 0)  # under Nyquist


# ---------------------------------------------------------------------------
# autocorrelation
# ---------------------------------------------------------------------------


def test_tone_decorrelates_at_odd_quarter_periods():
    # |acf| of a steady tone is |cos(2 pi f tau)|: zero at 10, 30, 50 ns...
    # and back near 1 at every full period
    states = np.zeros(500, dtype=np.int64)
    trace = synthesize_trace(_tone_params(500, amp=1.0), states, DT)
    lags, acf, minima = autocorrelation_minima(trace, 1.0e-7)
    quarter = 1.0 / (4.0 * F_IF)
    expected = np.array([1, 3, 5, 7, 9]) * quarter
    assert minima.size == expected.size
    assert np.all(np.abs(minima - expected) <= 1.0 / FS + 1e-15)
    # the 80 ns segment boundary sits at a correlation peak, not a trough
    idx_dt = int(round(DT * FS))
    assert acf[idx_dt] > 0.9
    assert acf[int(round(2 * quarter * FS))] == pytest.approx(-1.0, abs=0.01)


def test_white_noise_shows_no_preferred_lag():
    rng = np.random.default_rng(13)
    n = 200_000
    trace = RawTrace(rng.normal(0.0, 1.0, size=n), FS)
    _, acf, _ = autocorrelation_minima(trace, 5e-8)
    assert acf[0] == 1.0
    assert np.all(np.abs(acf[1:]) < 5.0 / math.sqrt(n))


def test_autocorrelation_input_checks():
    with pytest.raises(InputError):
        autocorrelation_minima(RawTrace(np.ones(1), FS), 1e-8)
    trace = RawTrace(np.ones(100), FS)
    with pytest.raises(InputError):
        autocorrelation_minima(trace, 1e-13)  # below one sample
    with pytest.raises(InputError):
        autocorrelation_minima(trace, 1.0)  # beyond the record
    with pytest.raises(InputError):
        autocorrelation_minima(RawTrace(np.zeros(100), FS), 1e-8)


# ---------------------------------------------------------------------------
# IQ-level dataset simulation
# ---------------------------------------------------------------------------


def test_simulated_dataset_shapes_and_labels():
    ds = simulate_iq_dataset(_two_state_model(), 30, 20, 243, 9.6, seed=0)
    assert ds.iq.shape == (50, 243, 2)
    assert np.array_equal(ds.labels, [0] * 30 + [1] * 20)
    assert np.array_equal(ds.shot_ids, np.arange(50))
    assert ds.dt_seconds == DT
    assert ds.provenance["kind"] == "simulated"


def test_ground_shots_sample_only_the_ground_emission():
    model = _two_state_model(sep=40.0)  # clusters far apart
    ds = simulate_iq_dataset(model, 50, 0, 100, 9.6, seed=4)
    # with gamma*dt ~ 7.7e-7 an excitation among 5000 segments is ~0.4%
    assert np.all(ds.iq[:, :, 0] < 0.0)
    assert ds.iq[:, :, 0].mean() == pytest.approx(-20.0, abs=0.1)


def test_excited_shots_decay_toward_the_ground_cluster():
    model = _two_state_model(sep=40.0, t1=2e-6)
    ds = simulate_iq_dataset(model, 0, 2000, 243, 0.0, seed=5)
    first = float(np.mean(ds.iq[:, 0, 0] > 0.0))
    last = float(np.mean(ds.iq[:, -1, 0] > 0.0))
    assert first == 1.0  # no preparation delay: every shot starts excited
    expected_last = math.exp(-242 * DT / 2e-6)
    assert last == pytest.approx(expected_last, abs=3 * math.sqrt(expected_last * (1 - expected_last) / 2000) + 1e-3)


def test_preparation_delay_thins_the_starting_excited_population():
    model = _two_state_model(sep=200.0)
    ds = simulate_iq_dataset(model, 0, 20_000, 2, 0.0, seed=6, prep_delay_s=0.5e-6)
    started_excited = float(np.mean(ds.iq[:, 0, 0] > 0.0))
    assert started_excited == pytest.approx(math.exp(-0.5e-6 / 14.46e-6), abs=5e-3)


def test_same_seed_and_key_reproduce_the_exact_dataset():
    model = _two_state_model()
    a = simulate_iq_dataset(model, 10, 10, 50, 9.6, seed=7, key=(3, 1))
    b = simulate_iq_dataset(model, 10, 10, 50, 9.6, seed=7, key=(3, 1))
    c = simulate_iq_dataset(model, 10, 10, 50, 9.6, seed=7, key=(3, 2))
    assert np.array_equal(a.iq, b.iq)
    assert not np.array_equal(a.iq, c.iq)


def test_each_shot_draws_from_its_own_stream():
    # shrinking the excited class must not disturb the shots that remain
    model = _two_state_model()
    big = simulate_iq_dataset(model, 5, 5, 40, 9.6, seed=8)
    small = simulate_iq_dataset(model, 5, 3, 40, 9.6, seed=8)
    assert np.array_equal(big.iq[:8], small.iq)


def test_dataset_simulation_rejects_bad_requests():
    model = _two_state_model()
    with pytest.raises(InputError):
        simulate_iq_dataset(model, -1, 10, 10, 9.6, seed=0)
    with pytest.raises(InputError):
        simulate_iq_dataset(model, 0, 0, 10, 9.6, seed=0)
    with pytest.raises(InputError):
        simulate_iq_dataset(model, 5, 5, 0, 9.6, seed=0)
    with pytest.raises(InputError):
        simulate_iq_dataset(model, 5, 5, 10, 9.6, seed=0, prep_delay_s=-1e-9)
    with pytest.raises(InputError):
        simulate_iq_dataset(model, 5, 5, 10, 2.0 / DT, seed=0)


# ---------------------------------------------------------------------------
# trace file format
# ---------------------------------------------------------------------------


def test_trace_file_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(19)
    trace = RawTrace(rng.normal(0.0, 1.0, size=1234), FS)
    path = tmp_path / "shot.trace"
    write_trace(trace, path)
    blob = path.read_bytes()
    assert blob[:8] == b"QRTRACE1"
    back = read_trace(path)
    assert back.sample_rate_hz == trace.sample_rate_hz
    assert np.array_equal(back.samples, trace.samples)


def test_trace_reader_rejects_corrupt_files(tmp_path):
    p = tmp_path / "bad.trace"
    p.write_bytes(b"NOTMAGIC" + b"\x00" * 32)
    with pytest.raises(SchemaError):
        read_trace(p)
    trace = RawTrace(np.ones(10), FS)
    write_trace(trace, p)
    p.write_bytes(p.read_bytes()[:-8])  # drop one sample
    with pytest.raises(SchemaError):
        read_trace(p)
    with pytest.raises(SchemaError):
        read_trace(tmp_path / "missing.trace")

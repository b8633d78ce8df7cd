"""Readout-signal simulation and demodulation.

Covers the path from hidden qubit-state sequences to raw heterodyned
traces and back down to per-segment ``(I, Q)`` observations, plus direct
IQ-level dataset simulation for the experiment harness.  Conventions:

* quadratures are ``I = (2/M) sum s_j cos(w t_j)`` and
  ``Q = (2/M) sum s_j sin(w t_j)`` so a unit cosine demodulates to (1, 0);
* a segment holds exactly ``M = dt * sample_rate`` samples and any
  trailing partial segment is discarded;
* every stochastic routine draws from keyed per-shot streams, so shot k
  of a dataset is the same no matter how many shots are generated around
  it or on how many workers.
"""

from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import Dataset
from .errors import InputError, SchemaError
from .hmm import HmmModel, ObservationSequence
from .rng import derive_rng
from .util import atomic_write_bytes

__all__ = [
    "TraceParams",
    "RawTrace",
    "DemodulationWarning",
    "simulate_state_sequence",
    "simulate_state_sequences",
    "synthesize_trace",
    "demodulate_segments",
    "demodulate_window",
    "autocorrelation_minima",
    "simulate_iq_dataset",
    "write_trace",
    "read_trace",
]

TRACE_MAGIC = b"QRTRACE1"


class DemodulationWarning(UserWarning):
    """Non-integer IF periods per segment: quadratures will leak."""


def _segments_from_time(t_s: float, dt_s: float) -> int:
    """floor(t/dt) robust to float representation of exact multiples."""
    return int(math.floor(t_s / dt_s + 1e-9))


@dataclass(frozen=True)
class TraceParams:
    """Synthesis settings for one raw trace."""

    sample_rate_hz: float
    if_freq_hz: float
    duration_s: float
    amp_per_state: tuple[tuple[float, float], ...]
    noise_sigma: float
    seed: int

    def __post_init__(self):
        if not self.sample_rate_hz > 2.0 * self.if_freq_hz:
            raise InputError("sample_rate_hz must exceed twice if_freq_hz")
        if not self.if_freq_hz > 0.0:
            raise InputError("if_freq_hz must be positive")
        if not self.duration_s > 0.0:
            raise InputError("duration_s must be positive")
        if self.noise_sigma < 0.0:
            raise InputError("noise_sigma must be non-negative")
        amp = tuple((float(a), float(p)) for a, p in self.amp_per_state)
        if not amp:
            raise InputError("amp_per_state must list at least one state")
        object.__setattr__(self, "amp_per_state", amp)


@dataclass(frozen=True)
class RawTrace:
    """Digitized heterodyne record: voltages at a fixed sample rate."""

    samples: np.ndarray
    sample_rate_hz: float

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim != 1 or samples.size < 1:
            raise InputError("samples must be a non-empty 1-D vector")
        if not self.sample_rate_hz > 0.0:
            raise InputError("sample_rate_hz must be positive")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz


# ---------------------------------------------------------------------------
# hidden-state simulation
# ---------------------------------------------------------------------------


def _chain_probs(t1_eff_s: float, gamma01_hz: float, dt_s: float) -> tuple[float, float]:
    if not dt_s > 0.0:
        raise InputError("dt_s must be positive")
    if not t1_eff_s > 0.0:
        raise InputError("t1_eff_s must be positive (math.inf allowed)")
    p_excite = gamma01_hz * dt_s
    if p_excite < 0.0 or p_excite >= 1.0:
        raise InputError("gamma01_hz * dt_s must lie in [0, 1)")
    survival = math.exp(-dt_s / t1_eff_s) if math.isfinite(t1_eff_s) else 1.0
    return survival, p_excite


def _chain_from_uniforms(
    u: np.ndarray, survival: float, p_excite: float, start: np.ndarray
) -> np.ndarray:
    """Vectorized two-state Markov chains; u has shape (S, T-1)."""
    n_seq, n_steps = u.shape
    states = np.empty((n_seq, n_steps + 1), dtype=np.int64)
    states[:, 0] = start
    cur = start.copy()
    for t in range(n_steps):
        cur = np.where(cur == 1, u[:, t] < survival, u[:, t] < p_excite).astype(np.int64)
        states[:, t + 1] = cur
    return states


def simulate_state_sequence(
    t1_eff_s: float,
    gamma01_hz: float,
    dt_s: float,
    n_segments: int,
    start_state: int,
    seed: int,
) -> np.ndarray:
    """One hidden-state sequence of a decay/excitation Markov chain.

    Per segment, the excited state survives with probability
    exp(-dt/t1_eff) and the ground state excites with probability
    gamma01 * dt.  ``t1_eff_s = math.inf`` encodes no decay.
    """
    if n_segments < 1:
        raise InputError("n_segments must be >= 1")
    if start_state not in (0, 1):
        raise InputError("start_state must be 0 or 1")
    survival, p_excite = _chain_probs(t1_eff_s, gamma01_hz, dt_s)
    u = derive_rng(seed, 0).random(n_segments - 1)[None, :]
    start = np.array([start_state], dtype=np.int64)
    return _chain_from_uniforms(u, survival, p_excite, start)[0]


def simulate_state_sequences(
    t1_eff_s: float,
    gamma01_hz: float,
    dt_s: float,
    n_segments: int,
    start_state: int,
    n_sequences: int,
    seed: int,
) -> np.ndarray:
    """Batch of chains, shape (n_sequences, n_segments).

    Row k draws from the stream keyed ``(seed, k)``, so it equals
    simulate_state_sequence called with the same seed and key k.
    """
    if n_sequences < 1:
        raise InputError("n_sequences must be >= 1")
    if n_segments < 1:
        raise InputError("n_segments must be >= 1")
    if start_state not in (0, 1):
        raise InputError("start_state must be 0 or 1")
    survival, p_excite = _chain_probs(t1_eff_s, gamma01_hz, dt_s)
    u = np.empty((n_sequences, max(n_segments - 1, 1)))
    for k in range(n_sequences):
        u[k, : n_segments - 1] = derive_rng(seed, k).random(n_segments - 1)
    start = np.full(n_sequences, start_state, dtype=np.int64)
    return _chain_from_uniforms(u[:, : n_segments - 1], survival, p_excite, start)


# ---------------------------------------------------------------------------
# trace synthesis and demodulation
# ---------------------------------------------------------------------------


def synthesize_trace(params: TraceParams, states: np.ndarray, dt_s: float) -> RawTrace:
    """Heterodyne trace for one hidden-state sequence.

    Each sample is A(state) * cos(2 pi f t + phi(state)) plus white
    Gaussian noise, with the state piecewise-constant over segments of
    duration dt_s.
    """
    states = np.asarray(states, dtype=np.int64)
    if states.ndim != 1 or states.size < 1:
        raise InputError("states must be a non-empty vector")
    if np.any(states < 0) or np.any(states >= len(params.amp_per_state)):
        raise InputError("state index outside amp_per_state")
    if not dt_s > 0.0:
        raise InputError("dt_s must be positive")
    n_samples = int(round(params.duration_s * params.sample_rate_hz))
    if abs(states.size * dt_s - params.duration_s) > 1.0 / params.sample_rate_hz:
        raise InputError("states length x dt_s must equal duration_s within one sample")
    t = np.arange(n_samples) / params.sample_rate_hz
    seg = np.minimum((t / dt_s).astype(np.int64), states.size - 1)
    amps = np.array([a for a, _ in params.amp_per_state])
    phases = np.array([p for _, p in params.amp_per_state])
    signal = amps[states[seg]] * np.cos(
        2.0 * math.pi * params.if_freq_hz * t + phases[states[seg]]
    )
    if params.noise_sigma > 0.0:
        signal = signal + params.noise_sigma * derive_rng(params.seed).standard_normal(
            n_samples
        )
    return RawTrace(samples=signal, sample_rate_hz=params.sample_rate_hz)


def demodulate_segments(
    trace: RawTrace, if_freq_hz: float, dt_s: float
) -> ObservationSequence:
    """Break a trace into dt_s windows and demodulate each at if_freq_hz.

    Returns floor(duration/dt) observations; a trailing partial segment
    is dropped.  Segments whose length is not a whole number of IF
    periods demodulate with spectral leakage; that raises a
    DemodulationWarning rather than an error so candidate segment times
    can still be explored.
    """
    if not if_freq_hz > 0.0:
        raise InputError("if_freq_hz must be positive")
    if not dt_s > 0.0:
        raise InputError("dt_s must be positive")
    m_float = dt_s * trace.sample_rate_hz
    m = int(round(m_float))
    if abs(m_float - m) > 1e-6 * max(m_float, 1.0):
        raise InputError("dt_s must span an integer number of samples")
    if m < 2:
        raise InputError("segments must hold at least 2 samples")
    periods = if_freq_hz * dt_s
    if abs(periods - round(periods)) > 1e-9 * max(1.0, periods):
        warnings.warn(
            f"segment holds {periods:g} IF periods (not an integer); "
            "quadratures will leak between I and Q",
            DemodulationWarning,
            stacklevel=2,
        )
    n_seg = trace.samples.size // m
    if n_seg < 1:
        raise InputError("trace shorter than one segment")
    n_used = n_seg * m
    t = np.arange(n_used) / trace.sample_rate_hz
    w = 2.0 * math.pi * if_freq_hz
    s = trace.samples[:n_used]
    i_vals = (2.0 / m) * (s * np.cos(w * t)).reshape(n_seg, m).sum(axis=1)
    q_vals = (2.0 / m) * (s * np.sin(w * t)).reshape(n_seg, m).sum(axis=1)
    return ObservationSequence(points=np.column_stack([i_vals, q_vals]), dt_seconds=dt_s)


def demodulate_window(
    obs: ObservationSequence, t_int_s: float, start_s: float = 0.0
) -> tuple[float, float]:
    """Mean (I, Q) over a window of whole segments.

    By linearity of the quadrature sums this equals demodulating the
    window as one long segment, so integration time is just a slice
    choice.  Window edges round down to segment boundaries.
    """
    if start_s < 0.0:
        raise InputError("start_s must be non-negative")
    dt = obs.dt_seconds
    first = _segments_from_time(start_s, dt)
    count = _segments_from_time(t_int_s, dt)
    if count < 1:
        raise InputError("window shorter than one segment")
    if first + count > len(obs):
        raise InputError("window extends past the end of the sequence")
    window = obs.points[first : first + count]
    mean = window.mean(axis=0)
    return float(mean[0]), float(mean[1])


def autocorrelation_minima(
    trace: RawTrace, max_lag_s: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sample autocorrelation and its candidate decorrelation lags.

    Returns (lags_s, acf, minima_lags_s).  The acf is the biased sample
    estimate normalized to acf[0] = 1; minima_lags are the lags where
    |acf| has a local minimum below 0.1, i.e. the candidate segment
    durations at which neighboring segments carry least shared signal.
    """
    n = trace.samples.size
    if n < 2:
        raise InputError("trace must hold at least 2 samples")
    max_lag = _segments_from_time(max_lag_s, 1.0 / trace.sample_rate_hz)
    if max_lag < 1 or max_lag >= n:
        raise InputError("max_lag_s must cover at least one sample and be below the duration")
    x = trace.samples
    nfft = 1 << int(math.ceil(math.log2(2 * n)))
    spec = np.fft.rfft(x, nfft)
    acf = np.fft.irfft(spec * np.conj(spec), nfft)[: max_lag + 1] / n
    if acf[0] <= 0.0:
        raise InputError("zero-power trace has no autocorrelation structure")
    acf = acf / acf[0]
    mag = np.abs(acf)
    interior = np.arange(1, max_lag)
    is_min = (
        (mag[interior] < mag[interior - 1])
        & (mag[interior] < mag[interior + 1])
        & (mag[interior] < 0.1)
    )
    lags_s = np.arange(max_lag + 1) / trace.sample_rate_hz
    return lags_s, acf, interior[is_min] / trace.sample_rate_hz


# ---------------------------------------------------------------------------
# IQ-level dataset simulation
# ---------------------------------------------------------------------------


def simulate_iq_dataset(
    model: HmmModel,
    n_ground: int,
    n_excited: int,
    n_segments: int,
    gamma01_hz: float,
    seed: int,
    prep_delay_s: float = 0.0,
    key: tuple[int, ...] = (),
) -> Dataset:
    """Simulate a labeled shot dataset directly at the IQ level.

    Ground-prepared shots stay in state 0 for the whole record; excited
    shots start in state 1 and follow the decay/excitation chain implied
    by the model's excited-state survival and ``gamma01_hz``.  Segment
    IQ values draw from the model's per-state Gaussians.

    ``prep_delay_s`` models idle time between preparation and the first
    observed segment: each excited-prepared shot enters the record still
    excited only with probability exp(-prep_delay/t1_eff).  Labels always
    record the prepared state.

    Shot k consumes only the stream keyed ``(seed, *key, k)`` (ground
    shots first), so any subset of shots can be regenerated
    independently, and callers drawing many datasets under one seed
    (sweeps, bootstraps) pass a distinct ``key`` per dataset.
    """
    if model.n_states != 2:
        raise InputError("dataset simulation needs a two-state model")
    if n_ground < 0 or n_excited < 0 or n_ground + n_excited < 1:
        raise InputError("need a non-negative shot count per class and at least one shot")
    if n_segments < 1:
        raise InputError("n_segments must be >= 1")
    if prep_delay_s < 0.0:
        raise InputError("prep_delay_s must be non-negative")
    dt = model.dt_seconds
    survival = float(model.trans[1, 1])
    if not 0.0 < survival <= 1.0:
        raise InputError("model excited-state survival must lie in (0, 1]")
    p_excite = gamma01_hz * dt
    if p_excite < 0.0 or p_excite >= 1.0:
        raise InputError("gamma01_hz * dt must lie in [0, 1)")
    if prep_delay_s > 0.0 and survival < 1.0:
        p_start_excited = survival ** (prep_delay_s / dt)
    else:
        p_start_excited = 1.0

    n_total = n_ground + n_excited
    states = np.zeros((n_total, n_segments), dtype=np.int64)
    z = np.empty((n_total, n_segments, 2))
    for k in range(n_ground):
        z[k] = derive_rng(seed, *key, k).standard_normal((n_segments, 2))
    if n_excited:
        u_chain = np.empty((n_excited, max(n_segments - 1, 1)))
        start = np.ones(n_excited, dtype=np.int64)
        for j in range(n_excited):
            k = n_ground + j
            stream = derive_rng(seed, *key, k)
            if prep_delay_s > 0.0:
                start[j] = 1 if stream.random() < p_start_excited else 0
            u_chain[j, : n_segments - 1] = stream.random(n_segments - 1)
            z[k] = stream.standard_normal((n_segments, 2))
        states[n_ground:] = _chain_from_uniforms(
            u_chain[:, : n_segments - 1], survival, p_excite, start
        )

    means = np.stack([g.mean for g in model.emissions])
    chols = np.stack([g._chol for g in model.emissions])
    x0 = z @ chols[0].T + means[0]
    x1 = z @ chols[1].T + means[1]
    iq = np.where((states == 1)[:, :, None], x1, x0)

    labels = np.concatenate(
        [np.zeros(n_ground, dtype=np.int64), np.ones(n_excited, dtype=np.int64)]
    )
    provenance = {
        "kind": "simulated",
        "n_ground": n_ground,
        "n_excited": n_excited,
        "n_segments": n_segments,
        "gamma01_hz": gamma01_hz,
        "prep_delay_s": prep_delay_s,
        "t1_eff_s": (-dt / math.log(survival)) if survival < 1.0 else None,
        "stream_key": list(key),
    }
    return Dataset(
        iq=iq,
        labels=labels,
        shot_ids=np.arange(n_total, dtype=np.int64),
        dt_seconds=dt,
        provenance=provenance,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# raw trace file format
# ---------------------------------------------------------------------------


def write_trace(trace: RawTrace, path: str | Path) -> None:
    """Binary trace: magic, float64 sample rate, uint64 length, float64 LE samples."""
    header = TRACE_MAGIC + struct.pack("<dQ", trace.sample_rate_hz, trace.samples.size)
    atomic_write_bytes(path, header + trace.samples.astype("<f8").tobytes())


def read_trace(path: str | Path) -> RawTrace:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise SchemaError(f"cannot read trace file: {exc}") from exc
    if len(blob) < 24 or blob[:8] != TRACE_MAGIC:
        raise SchemaError("not a trace file (bad magic)")
    rate, length = struct.unpack("<dQ", blob[8:24])
    expected = 24 + 8 * length
    if len(blob) != expected:
        raise SchemaError(
            f"trace length mismatch: header says {length} samples, file holds {(len(blob) - 24) // 8}"
        )
    samples = np.frombuffer(blob[24:], dtype="<f8")
    return RawTrace(samples=samples.astype(float), sample_rate_hz=rate)

"""Hidden Markov machinery for demodulated IQ readout sequences.

States are qubit levels, observations are per-segment ``(I, Q)`` points
with bivariate Gaussian emissions.  All recursions run in log space with
log-sum-exp so sequences of 10^5 segments stay finite.  Decoding is by
per-index posterior maximum (argmax of gamma), not by most-likely whole
path; the start-state posterior ``gamma[0]`` is what the classifiers
consume.

Batch kernels operate on arrays shaped ``(n_shots, n_segments, 2)`` and
are the performance core of training and of the experiment harness.
Accumulation across shots happens in a fixed chunk order regardless of
thread count, so training results are bit-identical whether run on one
thread or many.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DomainError, InputError, NumericalError, SchemaError
from .rng import derive_rng
from .util import atomic_write_text

__all__ = [
    "Gaussian2D",
    "ObservationSequence",
    "HmmModel",
    "StatePosterior",
    "TrainLog",
    "variance_floor",
    "emission_logpdf",
    "forward_backward",
    "sequence_loglik",
    "two_state_transitions",
    "initial_model_labeled_means",
    "initial_model_kmeans",
    "baum_welch",
    "extract_t1_eff",
    "extract_excitation_rate",
    "model_to_dict",
    "model_from_dict",
    "save_model",
    "load_model",
]

# Probabilities below this are floored before taking logs, so structural
# zeros in priors or transitions never poison the recursions with -inf.
PROB_FLOOR = 1e-300

# Fixed batch size for accumulation.  Chunk boundaries must not depend on
# the thread count or results would differ between serial and parallel runs.
_CHUNK = 512


def variance_floor(points: np.ndarray) -> float:
    """Smallest variance allowed when estimating covariances from ``points``.

    Scaled to the data: 1e-12 times the squared peak-to-peak range of the
    widest coordinate.  Falls back to the squared magnitude of the data
    (or 1.0) when all points coincide, so the floor is always positive.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if pts.size == 0:
        raise InputError("variance floor needs at least one point")
    span = float(np.max(np.ptp(pts, axis=0)))
    if span == 0.0:
        span = max(1.0, float(np.max(np.abs(pts))))
    return 1e-12 * span * span


@dataclass(frozen=True)
class Gaussian2D:
    """Bivariate Gaussian emission with full 2x2 covariance."""

    mean_i: float
    mean_q: float
    cov: np.ndarray

    def __post_init__(self):
        cov = np.array(self.cov, dtype=float)
        if cov.shape != (2, 2) or not np.all(np.isfinite(cov)):
            raise InputError("cov must be a finite 2x2 matrix")
        scale = max(1.0, float(np.max(np.abs(cov))))
        if abs(cov[0, 1] - cov[1, 0]) > 1e-9 * scale:
            raise InputError("cov must be symmetric")
        cov = (cov + cov.T) / 2.0
        if cov[0, 0] <= 0.0 or np.linalg.det(cov) <= 0.0:
            raise InputError("cov must be positive definite")
        if not (math.isfinite(self.mean_i) and math.isfinite(self.mean_q)):
            raise InputError("means must be finite")
        cov.setflags(write=False)
        object.__setattr__(self, "cov", cov)

    @property
    def mean(self) -> np.ndarray:
        return np.array([self.mean_i, self.mean_q])

    @cached_property
    def _logpdf_terms(self) -> tuple[float, float, float, float, float]:
        """(a, b, c, det, constant) with constant = -log(2 pi) - 0.5 log det."""
        a, b, c = self.cov[0, 0], self.cov[0, 1], self.cov[1, 1]
        det = a * c - b * b
        const = -math.log(2.0 * math.pi) - 0.5 * math.log(det)
        return a, b, c, det, const

    @cached_property
    def _chol(self) -> np.ndarray:
        return np.linalg.cholesky(self.cov)

    def logpdf(self, points: np.ndarray) -> np.ndarray:
        """Log density at ``points`` of shape ``(..., 2)``, vectorized."""
        a, b, c, det, const = self._logpdf_terms
        pts = np.asarray(points, dtype=float)
        dx = pts[..., 0] - self.mean_i
        dy = pts[..., 1] - self.mean_q
        quad = (c * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det
        return const - 0.5 * quad


@dataclass(frozen=True)
class ObservationSequence:
    """Demodulated shot: ``points[t] = (I_t, Q_t)`` at segment spacing dt."""

    points: np.ndarray
    dt_seconds: float

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 1:
            raise InputError("points must have shape (T, 2) with T >= 1")
        if not np.all(np.isfinite(pts)):
            raise InputError("points must be finite")
        if not (self.dt_seconds > 0.0 and math.isfinite(self.dt_seconds)):
            raise InputError("dt_seconds must be positive and finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class HmmModel:
    """Qubit-readout HMM: priors, transition matrix, Gaussian emissions."""

    n_states: int
    priors: np.ndarray
    trans: np.ndarray
    emissions: tuple[Gaussian2D, ...]
    dt_seconds: float

    def __post_init__(self):
        n = self.n_states
        if n < 1:
            raise InputError("n_states must be >= 1")
        priors = np.array(self.priors, dtype=float)
        trans = np.array(self.trans, dtype=float)
        emissions = tuple(self.emissions)
        if priors.shape != (n,):
            raise InputError("priors must have shape (n_states,)")
        if trans.shape != (n, n):
            raise InputError("trans must have shape (n_states, n_states)")
        if len(emissions) != n:
            raise InputError("need one emission per state")
        if not all(isinstance(g, Gaussian2D) for g in emissions):
            raise InputError("emissions must be Gaussian2D instances")
        if np.any(priors < 0.0) or np.any(trans < 0.0):
            raise InputError("probabilities must be non-negative")
        if not np.all(np.isfinite(priors)) or not np.all(np.isfinite(trans)):
            raise InputError("probabilities must be finite")
        if abs(priors.sum() - 1.0) > 1e-12:
            raise InputError("priors must sum to 1")
        if np.max(np.abs(trans.sum(axis=1) - 1.0)) > 1e-12:
            raise InputError("each transition row must sum to 1")
        if not (self.dt_seconds > 0.0 and math.isfinite(self.dt_seconds)):
            raise InputError("dt_seconds must be positive and finite")
        priors.setflags(write=False)
        trans.setflags(write=False)
        object.__setattr__(self, "priors", priors)
        object.__setattr__(self, "trans", trans)
        object.__setattr__(self, "emissions", emissions)

    def with_uniform_priors(self) -> "HmmModel":
        uniform = np.full(self.n_states, 1.0 / self.n_states)
        return replace(self, priors=uniform)


@dataclass
class StatePosterior:
    """Posterior decoding of one shot.

    gamma[t][d] is the posterior probability of state d at segment t;
    path[t] = argmax_d gamma[t][d] with ties broken toward the lowest
    state index; transition_indices lists every t with path[t] != path[t-1].
    """

    gamma: np.ndarray
    log_likelihood: float
    path: np.ndarray
    transition_indices: np.ndarray


@dataclass
class TrainLog:
    """Per-iteration training record."""

    logliks: list[float] = field(default_factory=list)
    converged: bool = False
    n_iter: int = 0
    variance_clamped: list[int] = field(default_factory=list)


def emission_logpdf(gauss: Gaussian2D, obs) -> float:
    """Log emission density of a single ``(I, Q)`` observation."""
    pt = np.asarray(obs, dtype=float)
    if pt.shape != (2,):
        raise InputError("obs must be a single (I, Q) pair")
    if not np.all(np.isfinite(pt)):
        raise InputError("obs must be finite")
    return float(gauss.logpdf(pt))


# ---------------------------------------------------------------------------
# batch kernels
# ---------------------------------------------------------------------------


def _log_emissions(model: HmmModel, iq: np.ndarray) -> np.ndarray:
    """Log emission densities, shape (T, S, N), for iq of shape (S, T, 2)."""
    S, T, _ = iq.shape
    out = np.empty((T, S, model.n_states))
    for d, g in enumerate(model.emissions):
        out[:, :, d] = g.logpdf(iq).T
    return out


def _logsumexp_axis(arr: np.ndarray, axis: int) -> np.ndarray:
    m = arr.max(axis=axis)
    with np.errstate(invalid="ignore"):
        out = m + np.log(np.sum(np.exp(arr - np.expand_dims(m, axis)), axis=axis))
    return np.where(np.isfinite(m), out, m)


def _forward(log_pi: np.ndarray, log_a: np.ndarray, log_b: np.ndarray) -> np.ndarray:
    T, S, N = log_b.shape
    la = np.empty_like(log_b)
    la[0] = log_pi[None, :] + log_b[0]
    for t in range(1, T):
        tmp = la[t - 1][:, :, None] + log_a[None, :, :]
        m = tmp.max(axis=1)
        la[t] = m + np.log(np.einsum("sij->sj", np.exp(tmp - m[:, None, :]))) + log_b[t]
    return la


def _backward(log_a: np.ndarray, log_b: np.ndarray) -> np.ndarray:
    T, S, N = log_b.shape
    lb = np.empty_like(log_b)
    lb[T - 1] = 0.0
    for t in range(T - 2, -1, -1):
        tmp = log_a[None, :, :] + (log_b[t + 1] + lb[t + 1])[:, None, :]
        m = tmp.max(axis=2)
        lb[t] = m + np.log(np.einsum("sij->si", np.exp(tmp - m[:, :, None])))
    return lb


def _log_model_params(model: HmmModel) -> tuple[np.ndarray, np.ndarray]:
    log_pi = np.log(np.maximum(model.priors, PROB_FLOOR))
    log_a = np.log(np.maximum(model.trans, PROB_FLOOR))
    return log_pi, log_a


def _posterior_arrays(
    model: HmmModel, iq: np.ndarray, priors: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Posterior marginals for a batch of equal-length shots.

    Returns ``(gamma, loglik)`` with gamma shaped (S, T, N) and loglik (S,).
    ``priors`` overrides the model's start distribution when given.
    """
    iq = np.asarray(iq, dtype=float)
    if iq.ndim != 3 or iq.shape[2] != 2:
        raise InputError("iq batch must have shape (S, T, 2)")
    log_pi, log_a = _log_model_params(model)
    if priors is not None:
        log_pi = np.log(np.maximum(np.asarray(priors, dtype=float), PROB_FLOOR))
    log_b = _log_emissions(model, iq)
    la = _forward(log_pi, log_a, log_b)
    lb = _backward(log_a, log_b)
    loglik = _logsumexp_axis(la[-1], axis=1)
    gamma = np.exp(la + lb - loglik[None, :, None])
    gamma /= gamma.sum(axis=2, keepdims=True)
    return np.ascontiguousarray(gamma.transpose(1, 0, 2)), loglik


def forward_backward(model: HmmModel, obs: ObservationSequence) -> StatePosterior:
    """Full posterior decoding of one observation sequence."""
    gamma, loglik = _posterior_arrays(model, obs.points[None, :, :])
    g = gamma[0]
    path = np.argmax(g, axis=1)
    transitions = np.nonzero(np.diff(path))[0] + 1
    return StatePosterior(
        gamma=g,
        log_likelihood=float(loglik[0]),
        path=path,
        transition_indices=transitions,
    )


def sequence_loglik(model: HmmModel, obs: ObservationSequence) -> float:
    """Log of the total observation probability, summed over all paths."""
    log_pi, log_a = _log_model_params(model)
    log_b = _log_emissions(model, obs.points[None, :, :])
    la = _forward(log_pi, log_a, log_b)
    return float(_logsumexp_axis(la[-1], axis=1)[0])


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class _EStats:
    """Sufficient statistics accumulated over one chunk of shots."""

    loglik: float
    prior_num: np.ndarray
    trans_num: np.ndarray
    occ: np.ndarray
    x_sum: np.ndarray
    xx_sum: np.ndarray
    n_shots: int

    def add(self, other: "_EStats") -> "_EStats":
        return _EStats(
            loglik=self.loglik + other.loglik,
            prior_num=self.prior_num + other.prior_num,
            trans_num=self.trans_num + other.trans_num,
            occ=self.occ + other.occ,
            x_sum=self.x_sum + other.x_sum,
            xx_sum=self.xx_sum + other.xx_sum,
            n_shots=self.n_shots + other.n_shots,
        )


def _estep_chunk(model: HmmModel, iq: np.ndarray) -> _EStats:
    S, T, _ = iq.shape
    log_pi, log_a = _log_model_params(model)
    log_b = _log_emissions(model, iq)
    la = _forward(log_pi, log_a, log_b)
    lb = _backward(log_a, log_b)
    loglik = _logsumexp_axis(la[-1], axis=1)
    gamma = np.exp(la + lb - loglik[None, :, None])
    gamma /= gamma.sum(axis=2, keepdims=True)

    if T > 1:
        xi_log = (
            la[:-1, :, :, None]
            + (log_b[1:] + lb[1:])[:, :, None, :]
            + log_a[None, None, :, :]
            - loglik[None, :, None, None]
        )
        trans_num = np.exp(xi_log).sum(axis=(0, 1))
    else:
        trans_num = np.zeros((model.n_states, model.n_states))

    pts = np.ascontiguousarray(iq.transpose(1, 0, 2))
    x_sum = np.einsum("tsn,tsd->nd", gamma, pts)
    xx_sum = np.einsum("tsn,tsd,tse->nde", gamma, pts, pts)
    return _EStats(
        loglik=float(loglik.sum()),
        prior_num=gamma[0].sum(axis=0),
        trans_num=trans_num,
        occ=gamma.sum(axis=(0, 1)),
        x_sum=x_sum,
        xx_sum=xx_sum,
        n_shots=S,
    )


def _estep(model: HmmModel, groups: list[np.ndarray], n_threads: int) -> _EStats:
    chunks = [
        grp[i : i + _CHUNK] for grp in groups for i in range(0, len(grp), _CHUNK)
    ]
    if n_threads <= 1 or len(chunks) == 1:
        parts = [_estep_chunk(model, c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            parts = list(pool.map(lambda c: _estep_chunk(model, c), chunks))
    total = parts[0]
    for part in parts[1:]:
        total = total.add(part)
    return total


def _floor_covariance(cov: np.ndarray, floor: float) -> tuple[np.ndarray, bool]:
    """Clamp covariance eigenvalues from below; report whether clamping hit."""
    cov = (cov + cov.T) / 2.0
    vals, vecs = np.linalg.eigh(cov)
    if vals[0] >= floor:
        return cov, False
    vals = np.maximum(vals, floor)
    return (vecs * vals) @ vecs.T, True


def _mstep(
    model: HmmModel, stats: _EStats, floor: float
) -> tuple[HmmModel, bool]:
    n = model.n_states
    priors = stats.prior_num / stats.prior_num.sum()

    trans = np.array(model.trans)
    row_sums = stats.trans_num.sum(axis=1)
    for i in range(n):
        if row_sums[i] > 0.0:
            trans[i] = stats.trans_num[i] / row_sums[i]
    trans /= trans.sum(axis=1, keepdims=True)

    clamped = False
    emissions = []
    for d in range(n):
        if stats.occ[d] <= 1e-9:
            # state never visited: keep its previous emission untouched
            emissions.append(model.emissions[d])
            continue
        mean = stats.x_sum[d] / stats.occ[d]
        cov = stats.xx_sum[d] / stats.occ[d] - np.outer(mean, mean)
        cov, hit = _floor_covariance(cov, floor)
        clamped = clamped or hit
        emissions.append(Gaussian2D(float(mean[0]), float(mean[1]), cov))
    new_model = HmmModel(
        n_states=n,
        priors=priors,
        trans=trans,
        emissions=tuple(emissions),
        dt_seconds=model.dt_seconds,
    )
    return new_model, clamped


def _as_groups(data) -> tuple[list[np.ndarray], float | None]:
    """Normalize training input into equal-length batches.

    Accepts a list of ObservationSequence (possibly ragged) or a single
    (S, T, 2) array.  Sequences of equal length are stacked so the batch
    kernels can run vectorized; group order follows first appearance, so
    results do not depend on how the lengths happen to interleave.
    """
    if isinstance(data, np.ndarray):
        arr = np.asarray(data, dtype=float)
        if arr.ndim != 3 or arr.shape[2] != 2 or arr.shape[0] < 1:
            raise InputError("training array must have shape (S, T, 2)")
        if not np.all(np.isfinite(arr)):
            raise InputError("training data must be finite")
        return [arr], None
    seqs = list(data)
    if not seqs:
        raise InputError("training data must contain at least one sequence")
    if not all(isinstance(s, ObservationSequence) for s in seqs):
        raise InputError(
            "training data must be ObservationSequence items or an (S, T, 2) array"
        )
    dt = seqs[0].dt_seconds
    if any(abs(s.dt_seconds - dt) > 1e-12 * dt for s in seqs):
        raise InputError("all sequences must share one segment duration")
    by_len: dict[int, list[np.ndarray]] = {}
    for s in seqs:
        by_len.setdefault(len(s), []).append(s.points)
    groups = [np.stack(v) for v in by_len.values()]
    return groups, dt


def two_state_transitions(
    dt_s: float, t1_eff_s: float, gamma01_hz: float = 0.0
) -> np.ndarray:
    """Transition matrix for decay at rate 1/t1_eff and excitation gamma01.

    Row 0 is the ground state: excitation probability per segment is
    gamma01 * dt.  Row 1 is the excited state: survival probability per
    segment is exp(-dt / t1_eff).  ``t1_eff_s = inf`` encodes no decay.
    """
    if not dt_s > 0.0:
        raise InputError("dt_s must be positive")
    if not t1_eff_s > 0.0:
        raise InputError("t1_eff_s must be positive (math.inf allowed)")
    p_excite = gamma01_hz * dt_s
    if p_excite < 0.0 or p_excite >= 1.0:
        raise InputError("gamma01_hz * dt_s must lie in [0, 1)")
    survival = math.exp(-dt_s / t1_eff_s) if math.isfinite(t1_eff_s) else 1.0
    return np.array([[1.0 - p_excite, p_excite], [1.0 - survival, survival]])


def initial_model_labeled_means(
    data,
    labels: Sequence[int],
    dt_seconds: float | None = None,
    t1_guess_s: float = 1e-5,
    gamma01_guess_hz: float = 10.0,
) -> HmmModel:
    """Starting point for training when preparation labels are available.

    Each state's mean and covariance come from the pooled demodulated
    points of all shots prepared in that state.  Decay inside prepared
    shots pulls these moments off the per-state truth, but they land in
    the right basin and training corrects them within a few iterations.
    The transition guess uses decay/excitation rates; the guessed
    excitation is small but nonzero so training can still adjust it.
    Priors start uniform.
    """
    if isinstance(data, np.ndarray):
        groups, dt = _as_groups(data)
        per_shot = list(groups[0])
    else:
        seqs = list(data)
        if not seqs or not all(isinstance(s, ObservationSequence) for s in seqs):
            raise InputError("data must be ObservationSequence items or an (S, T, 2) array")
        dt = seqs[0].dt_seconds
        per_shot = [s.points for s in seqs]
    if dt_seconds is None:
        dt_seconds = dt
    if dt_seconds is None:
        raise InputError("dt_seconds required when training from a raw array")
    labels = np.asarray(labels, dtype=int)
    if labels.shape != (len(per_shot),):
        raise InputError("labels must match the number of sequences")
    classes = np.unique(labels)
    n = int(classes.size)
    if not np.array_equal(classes, np.arange(n)):
        raise InputError("labels must cover 0..n_states-1")
    floor = variance_floor(np.concatenate(per_shot))
    emissions = []
    for d in range(n):
        pts = np.concatenate([p for p, lab in zip(per_shot, labels) if lab == d])
        mean = pts.mean(axis=0)
        cov = np.cov(pts.T, ddof=1) if len(pts) > 1 else np.eye(2) * floor
        cov, _ = _floor_covariance(cov, floor)
        emissions.append(Gaussian2D(float(mean[0]), float(mean[1]), cov))
    if n == 2:
        trans = two_state_transitions(dt_seconds, t1_guess_s, gamma01_guess_hz)
    else:
        trans = np.full((n, n), 0.01 / max(n - 1, 1))
        np.fill_diagonal(trans, 0.99)
        trans /= trans.sum(axis=1, keepdims=True)
    priors = np.full(n, 1.0 / n)
    return HmmModel(n, priors, trans, tuple(emissions), dt_seconds)


def initial_model_kmeans(
    data,
    n_states: int,
    dt_seconds: float | None = None,
    seed: int = 0,
    t1_guess_s: float = 1e-5,
    gamma01_guess_hz: float = 10.0,
    n_iter: int = 20,
) -> HmmModel:
    """Unlabeled starting point: k-means on the pooled segment points.

    Greedy k-means++ seeding, then ``n_iter`` Lloyd iterations; each
    cluster becomes a state with moment-matched mean and covariance.
    States are ordered by ascending (mean_i, mean_q) so the result is
    deterministic given the seed.
    """
    groups, dt = _as_groups(data)
    if dt_seconds is None:
        dt_seconds = dt
    if dt_seconds is None:
        raise InputError("dt_seconds required when training from a raw array")
    pts = np.concatenate([grp.reshape(-1, 2) for grp in groups])
    if len(pts) < n_states:
        raise InputError("need at least n_states points")
    rng = derive_rng(seed, 0xC1)
    centers = np.empty((n_states, 2))
    centers[0] = pts[rng.integers(len(pts))]
    d2 = np.sum((pts - centers[0]) ** 2, axis=1)
    for k in range(1, n_states):
        total = d2.sum()
        if total <= 0.0:
            centers[k] = pts[rng.integers(len(pts))]
        else:
            centers[k] = pts[np.searchsorted(np.cumsum(d2 / total), rng.random())]
        d2 = np.minimum(d2, np.sum((pts - centers[k]) ** 2, axis=1))
    for _ in range(n_iter):
        dist = np.sum((pts[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        assign = np.argmin(dist, axis=1)
        for k in range(n_states):
            sel = pts[assign == k]
            if len(sel):
                centers[k] = sel.mean(axis=0)
    order = np.lexsort((centers[:, 1], centers[:, 0]))
    centers = centers[order]
    dist = np.sum((pts[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    assign = np.argmin(dist, axis=1)
    floor = variance_floor(pts)
    emissions = []
    for k in range(n_states):
        sel = pts[assign == k]
        if len(sel) == 0:
            sel = pts
        mean = sel.mean(axis=0)
        cov = np.cov(sel.T, ddof=1) if len(sel) > 1 else np.eye(2) * floor
        cov, _ = _floor_covariance(cov, floor)
        emissions.append(Gaussian2D(float(mean[0]), float(mean[1]), cov))
    if n_states == 2:
        trans = two_state_transitions(dt_seconds, t1_guess_s, gamma01_guess_hz)
    else:
        trans = np.full((n_states, n_states), 0.01 / max(n_states - 1, 1))
        np.fill_diagonal(trans, 0.99)
        trans /= trans.sum(axis=1, keepdims=True)
    priors = np.full(n_states, 1.0 / n_states)
    return HmmModel(n_states, priors, trans, tuple(emissions), dt_seconds)


def baum_welch(
    data,
    n_states: int = 2,
    init: HmmModel | str = "kmeans",
    tol: float = 1e-6,
    max_iter: int = 1000,
    n_threads: int = 1,
    kmeans_seed: int = 0,
    dt_seconds: float | None = None,
) -> tuple[HmmModel, TrainLog]:
    """Fit an HmmModel to unlabeled sequences by expectation-maximization.

    Parameters
    ----------
    data : list of ObservationSequence, or array of shape (S, T, 2)
        Training shots.  Ragged lengths are allowed in list form.
    init : HmmModel or "kmeans"
        Explicit starting model (e.g. from initial_model_labeled_means)
        or the built-in unlabeled initialization.
    tol : float
        Convergence threshold on the relative log-likelihood improvement.
    max_iter : int
        Iteration cap; the log records whether it was hit.
    n_threads : int
        Worker threads for the accumulation pass.  Results are
        bit-identical for any value.

    Returns
    -------
    (HmmModel, TrainLog)
        The final model's total log-likelihood equals ``logliks[-1]``.
    """
    if max_iter < 1:
        raise InputError("max_iter must be >= 1")
    if tol < 0.0:
        raise InputError("tol must be non-negative")
    groups, dt = _as_groups(data)
    if dt is None:
        dt = dt_seconds
    if isinstance(init, HmmModel):
        model = init
        if dt is not None and abs(model.dt_seconds - dt) > 1e-12 * dt:
            raise InputError("init model dt does not match the data")
    elif init == "kmeans":
        if dt is None:
            raise InputError("dt_seconds required for kmeans init on a raw array")
        model = initial_model_kmeans(data, n_states, dt_seconds=dt, seed=kmeans_seed)
    else:
        raise InputError("init must be an HmmModel or 'kmeans'")
    if model.n_states != n_states:
        raise InputError("init model n_states does not match n_states")

    floor = variance_floor(np.concatenate([g.reshape(-1, 2) for g in groups]))
    log = TrainLog()
    for it in range(max_iter):
        stats = _estep(model, groups, n_threads)
        if not math.isfinite(stats.loglik):
            raise NumericalError("log-likelihood diverged during training")
        log.logliks.append(stats.loglik)
        log.n_iter = it + 1
        if it > 0:
            gain = log.logliks[-1] - log.logliks[-2]
            if gain <= tol * abs(log.logliks[-2]):
                log.converged = True
                return model, log
        model, clamped = _mstep(model, stats, floor)
        if clamped:
            log.variance_clamped.append(it)
    # cap reached: evaluate the final model so logliks matches it
    stats = _estep(model, groups, n_threads)
    log.logliks.append(stats.loglik)
    return model, log


def extract_t1_eff(model: HmmModel) -> float:
    """Effective relaxation time implied by the excited-state survival."""
    if model.n_states != 2:
        raise DomainError("t1 extraction is defined for two-state models")
    a11 = float(model.trans[1, 1])
    if not (0.0 < a11 < 1.0):
        raise DomainError("excited-state survival must lie strictly in (0, 1)")
    return -model.dt_seconds / math.log(a11)


def extract_excitation_rate(model: HmmModel) -> float:
    """Ground-to-excited rate implied by the per-segment excitation entry."""
    if model.n_states != 2:
        raise DomainError("excitation extraction is defined for two-state models")
    return float(model.trans[0, 1]) / model.dt_seconds


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def model_to_dict(model: HmmModel) -> dict:
    return {
        "n_states": model.n_states,
        "dt_seconds": model.dt_seconds,
        "priors": model.priors.tolist(),
        "trans": model.trans.tolist(),
        "emissions": [
            {"mean_i": g.mean_i, "mean_q": g.mean_q, "cov": g.cov.tolist()}
            for g in model.emissions
        ],
    }


def model_from_dict(payload: dict) -> HmmModel:
    if not isinstance(payload, dict):
        raise SchemaError("model JSON must be an object")
    required = {"n_states", "dt_seconds", "priors", "trans", "emissions"}
    missing = required - payload.keys()
    if missing:
        raise SchemaError(f"model JSON missing keys: {sorted(missing)}")
    try:
        emissions = tuple(
            Gaussian2D(float(e["mean_i"]), float(e["mean_q"]), np.array(e["cov"], dtype=float))
            for e in payload["emissions"]
        )
        return HmmModel(
            n_states=int(payload["n_states"]),
            priors=np.array(payload["priors"], dtype=float),
            trans=np.array(payload["trans"], dtype=float),
            emissions=emissions,
            dt_seconds=float(payload["dt_seconds"]),
        )
    except (KeyError, TypeError, ValueError, InputError) as exc:
        raise SchemaError(f"malformed model JSON: {exc}") from exc


def save_model(model: HmmModel, path: str | Path) -> None:
    """Write a model as JSON; floats keep full round-trip precision."""
    atomic_write_text(path, json.dumps(model_to_dict(model), indent=2) + "\n")


def load_model(path: str | Path) -> HmmModel:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(f"cannot read model JSON: {exc}") from exc
    return model_from_dict(payload)

"""Fidelity metrics and projected-distribution fits.

Assignment fidelity comes from confusion-matrix column statistics; ideal
fidelity from the separation parameter r = (mu0 - mu1)^2 / sigma^2 of
the two projected IQ distributions via 0.5 * (1 + erf(sqrt(r/8))).
The fitting side projects IQ points onto the centroid axis and fits
equal-variance Gaussians — single per distribution, or a double mixture
(shared or per-distribution component means) that absorbs state
transitions — plus the posterior-path split-and-demodulate step that
removes those transitions from the data before a single-Gaussian fit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError, InputError
from .hmm import ObservationSequence, StatePosterior
from .rng import derive_rng
from .util import dump_json

__all__ = [
    "ConfusionMatrix",
    "ProjectedFit",
    "confusion_from_labels",
    "assignment_fidelity",
    "total_classification_error",
    "ideal_fidelity",
    "project_onto_centroid_axis",
    "fit_equal_variance_gaussians",
    "bootstrap_fit_std",
    "hmm_filtered_demodulate",
    "build_metrics_report",
    "write_metrics_report",
]


@dataclass(frozen=True)
class ConfusionMatrix:
    """counts[i][j] = shots prepared in state j that were assigned label i."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1] or counts.shape[0] < 2:
            raise InputError("counts must be a square matrix, at least 2x2")
        if np.any(counts < 0):
            raise InputError("counts must be non-negative")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def n_states(self) -> int:
        return self.counts.shape[0]

    def column_sums(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    def p_assigned_given_prepared(self, assigned: int, prepared: int) -> float:
        col = self.counts[:, prepared].sum()
        if col == 0:
            raise InputError(f"no shots prepared in state {prepared}")
        return float(self.counts[assigned, prepared] / col)


def confusion_from_labels(
    assigned, prepared, n_states: int = 2
) -> ConfusionMatrix:
    assigned = np.asarray(assigned, dtype=np.int64)
    prepared = np.asarray(prepared, dtype=np.int64)
    if assigned.shape != prepared.shape or assigned.ndim != 1 or assigned.size == 0:
        raise InputError("assigned and prepared must be matching non-empty vectors")
    if np.any(assigned < 0) or np.any(assigned >= n_states):
        raise InputError("assigned label out of range")
    if np.any(prepared < 0) or np.any(prepared >= n_states):
        raise InputError("prepared label out of range")
    counts = np.zeros((n_states, n_states), dtype=np.int64)
    np.add.at(counts, (assigned, prepared), 1)
    return ConfusionMatrix(counts=counts)


def assignment_fidelity(cm: ConfusionMatrix) -> float:
    """1 - (P(0|1) + P(1|0)) / 2 for a two-state confusion matrix."""
    if cm.n_states != 2:
        raise InputError("assignment fidelity is defined for two states")
    cols = cm.column_sums()
    if np.any(cols == 0):
        raise InputError("every prepared state needs at least one shot")
    p01 = cm.counts[0, 1] / cols[1]
    p10 = cm.counts[1, 0] / cols[0]
    return 1.0 - 0.5 * (p01 + p10)


def total_classification_error(cm: ConfusionMatrix) -> float:
    return 1.0 - assignment_fidelity(cm)


def ideal_fidelity(r: float) -> float:
    """Best achievable fidelity for two equal-variance Gaussians split by r.

    Equals one minus half the overlap of the two projected densities.
    """
    if r < 0.0 or not math.isfinite(r):
        raise DomainError("r must be finite and non-negative")
    return 0.5 * (1.0 + math.erf(math.sqrt(r / 8.0)))


def project_onto_centroid_axis(
    points0: np.ndarray, points1: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Project both IQ clouds onto the line joining their centroids.

    Returns (s0, s1, axis); projections are measured from the midpoint
    between centroids, so the clouds land symmetrically around zero.
    """
    points0 = np.asarray(points0, dtype=float).reshape(-1, 2)
    points1 = np.asarray(points1, dtype=float).reshape(-1, 2)
    if points0.shape[0] == 0 or points1.shape[0] == 0:
        raise InputError("both point clouds must be non-empty")
    c0 = points0.mean(axis=0)
    c1 = points1.mean(axis=0)
    delta = c1 - c0
    norm = float(np.hypot(delta[0], delta[1]))
    scale = max(np.max(np.abs(c0)), np.max(np.abs(c1)), 1.0)
    if norm <= 1e-12 * scale:
        raise DomainError("coincident centroids give no projection axis")
    axis = delta / norm
    mid = (c0 + c1) / 2.0
    return (points0 - mid) @ axis, (points1 - mid) @ axis, axis


@dataclass(frozen=True)
class ProjectedFit:
    """Equal-variance Gaussian fit of two projected distributions."""

    mu0: float
    mu1: float
    sigma: float
    weights: tuple[tuple[float, float], tuple[float, float]] | None
    r_value: float
    r_value_pooled: float
    fit_log_likelihood: float
    degenerate_weight: bool = False
    # secondary component means in double-free mode, None otherwise
    minor_means: tuple[float, float] | None = None
    em_logliks: tuple[float, ...] | None = None


def _gauss_logpdf(s: np.ndarray, mu: float, sigma: float) -> np.ndarray:
    return -0.5 * ((s - mu) / sigma) ** 2 - math.log(sigma) - 0.5 * math.log(2 * math.pi)


def fit_equal_variance_gaussians(
    s0: np.ndarray, s1: np.ndarray, mode: str = "single"
) -> ProjectedFit:
    """Maximum-likelihood equal-variance fit of two projected samples.

    ``single``: one Gaussian per distribution, shared sigma — closed
    form.  ``double``: each distribution is a two-component mixture with
    shared component means (mu0, mu1) and shared sigma but its own
    weights, fitted by EM; this soaks up shots that changed state
    mid-window.  ``double-free``: like double, but each distribution
    keeps its own pair of component means (only sigma stays global);
    mu0/mu1 report the dominant component of each distribution and the
    secondary means land in ``minor_means``.  ``r_value`` uses the
    fitted sigma; ``r_value_pooled`` uses the plain pooled sample
    variance as a cross-check.
    """
    s0 = np.asarray(s0, dtype=float).ravel()
    s1 = np.asarray(s1, dtype=float).ravel()
    if s0.size < 10 or s1.size < 10:
        raise InputError("need at least 10 samples per distribution")
    if mode not in ("single", "double", "double-free"):
        raise InputError(f"unknown fit mode {mode!r}")
    n0, n1 = s0.size, s1.size
    n = n0 + n1
    mu0 = float(s0.mean())
    mu1 = float(s1.mean())
    var_pooled = (np.sum((s0 - mu0) ** 2) + np.sum((s1 - mu1) ** 2)) / n
    var_pooled = max(var_pooled, 1e-300)
    r_pooled = (mu0 - mu1) ** 2 / var_pooled

    if mode == "single":
        sigma = math.sqrt(var_pooled)
        loglik = float(
            _gauss_logpdf(s0, mu0, sigma).sum() + _gauss_logpdf(s1, mu1, sigma).sum()
        )
        return ProjectedFit(
            mu0=mu0,
            mu1=mu1,
            sigma=sigma,
            weights=None,
            r_value=r_pooled,
            r_value_pooled=r_pooled,
            fit_log_likelihood=loglik,
        )

    samples = (s0, s1)
    sigma = math.sqrt(var_pooled)
    trail: list[float] = []
    prev = -math.inf
    loglik = prev

    if mode == "double-free":
        return _fit_double_free(s0, s1, mu0, mu1, sigma, r_pooled)

    # double: EM over shared means/sigma, per-distribution mixture weights
    w = np.array([[0.95, 0.05], [0.05, 0.95]])
    for _ in range(10_000):
        # E step
        resp = []
        loglik = 0.0
        for k in (0, 1):
            s = samples[k]
            log_comp = np.stack(
                [
                    np.log(max(w[k, 0], 1e-300)) + _gauss_logpdf(s, mu0, sigma),
                    np.log(max(w[k, 1], 1e-300)) + _gauss_logpdf(s, mu1, sigma),
                ],
                axis=1,
            )
            peak = log_comp.max(axis=1, keepdims=True)
            norm = peak + np.log(np.exp(log_comp - peak).sum(axis=1, keepdims=True))
            resp.append(np.exp(log_comp - norm))
            loglik += float(norm.sum())
        trail.append(loglik)
        # M step
        occ0 = resp[0][:, 0].sum() + resp[1][:, 0].sum()
        occ1 = resp[0][:, 1].sum() + resp[1][:, 1].sum()
        mu0 = float((resp[0][:, 0] @ s0 + resp[1][:, 0] @ s1) / max(occ0, 1e-300))
        mu1 = float((resp[0][:, 1] @ s0 + resp[1][:, 1] @ s1) / max(occ1, 1e-300))
        sq = (
            resp[0][:, 0] @ (s0 - mu0) ** 2
            + resp[0][:, 1] @ (s0 - mu1) ** 2
            + resp[1][:, 0] @ (s1 - mu0) ** 2
            + resp[1][:, 1] @ (s1 - mu1) ** 2
        )
        sigma = math.sqrt(max(sq / n, 1e-300))
        w = np.array(
            [
                [resp[0][:, 0].mean(), resp[0][:, 1].mean()],
                [resp[1][:, 0].mean(), resp[1][:, 1].mean()],
            ]
        )
        if loglik - prev <= 1e-9 * abs(prev) and prev > -math.inf:
            break
        prev = loglik

    degenerate = bool(np.any(w < 1e-6))
    if degenerate:
        w = np.maximum(w, 1e-6)
        w = w / w.sum(axis=1, keepdims=True)
    r_fit = (mu0 - mu1) ** 2 / sigma**2
    return ProjectedFit(
        mu0=mu0,
        mu1=mu1,
        sigma=sigma,
        weights=((float(w[0, 0]), float(w[0, 1])), (float(w[1, 0]), float(w[1, 1]))),
        r_value=r_fit,
        r_value_pooled=r_pooled,
        fit_log_likelihood=float(loglik),
        degenerate_weight=degenerate,
        em_logliks=tuple(trail),
    )


def _fit_double_free(
    s0: np.ndarray,
    s1: np.ndarray,
    mu0: float,
    mu1: float,
    sigma: float,
    r_pooled: float,
) -> ProjectedFit:
    """EM for the per-distribution-means double fit.

    Component 0 of each distribution starts at its own sample mean,
    component 1 at the other distribution's — the natural seed when the
    contaminant is shots that ended up looking like the other state.
    """
    samples = (s0, s1)
    n = s0.size + s1.size
    mu = np.array([[mu0, mu1], [mu1, mu0]])
    w = np.array([[0.95, 0.05], [0.95, 0.05]])
    trail: list[float] = []
    prev = -math.inf
    loglik = prev
    resp: list[np.ndarray] = []
    for _ in range(10_000):
        resp = []
        loglik = 0.0
        for k in (0, 1):
            s = samples[k]
            log_comp = np.stack(
                [
                    np.log(max(w[k, 0], 1e-300)) + _gauss_logpdf(s, mu[k, 0], sigma),
                    np.log(max(w[k, 1], 1e-300)) + _gauss_logpdf(s, mu[k, 1], sigma),
                ],
                axis=1,
            )
            peak = log_comp.max(axis=1, keepdims=True)
            norm = peak + np.log(np.exp(log_comp - peak).sum(axis=1, keepdims=True))
            resp.append(np.exp(log_comp - norm))
            loglik += float(norm.sum())
        trail.append(loglik)
        sq = 0.0
        for k in (0, 1):
            s = samples[k]
            for c in (0, 1):
                occ = resp[k][:, c].sum()
                mu[k, c] = (resp[k][:, c] @ s) / max(occ, 1e-300)
            sq += resp[k][:, 0] @ (s - mu[k, 0]) ** 2
            sq += resp[k][:, 1] @ (s - mu[k, 1]) ** 2
            w[k] = resp[k].mean(axis=0)
        sigma = math.sqrt(max(sq / n, 1e-300))
        if loglik - prev <= 1e-9 * abs(prev) and prev > -math.inf:
            break
        prev = loglik

    degenerate = bool(np.any(w < 1e-6))
    if degenerate:
        w = np.maximum(w, 1e-6)
        w = w / w.sum(axis=1, keepdims=True)
    main = w.argmax(axis=1)
    mu_main = (float(mu[0, main[0]]), float(mu[1, main[1]]))
    mu_minor = (float(mu[0, 1 - main[0]]), float(mu[1, 1 - main[1]]))
    r_fit = (mu_main[0] - mu_main[1]) ** 2 / sigma**2
    return ProjectedFit(
        mu0=mu_main[0],
        mu1=mu_main[1],
        sigma=sigma,
        weights=(
            (float(w[0, main[0]]), float(w[0, 1 - main[0]])),
            (float(w[1, main[1]]), float(w[1, 1 - main[1]])),
        ),
        r_value=r_fit,
        r_value_pooled=r_pooled,
        fit_log_likelihood=float(loglik),
        degenerate_weight=degenerate,
        minor_means=mu_minor,
        em_logliks=tuple(trail),
    )


def bootstrap_fit_std(
    s0: np.ndarray,
    s1: np.ndarray,
    mode: str = "single",
    n_draws: int = 100,
    seed: int = 0,
) -> dict:
    """Nonparametric bootstrap spread of the projected-fit outputs.

    Resamples each distribution with replacement ``n_draws`` times
    (draw k uses the stream keyed (seed, k)) and returns the standard
    deviation of mu0, mu1, sigma, r_value, and the implied fidelity.
    """
    s0 = np.asarray(s0, dtype=float).ravel()
    s1 = np.asarray(s1, dtype=float).ravel()
    if n_draws < 2:
        raise InputError("need at least 2 bootstrap draws")
    stats = np.empty((n_draws, 5))
    for k in range(n_draws):
        rng = derive_rng(seed, k)
        d0 = s0[rng.integers(0, s0.size, s0.size)]
        d1 = s1[rng.integers(0, s1.size, s1.size)]
        fit = fit_equal_variance_gaussians(d0, d1, mode)
        stats[k] = (fit.mu0, fit.mu1, fit.sigma, fit.r_value, ideal_fidelity(fit.r_value))
    std = stats.std(axis=0, ddof=1)
    return {
        "mu0": float(std[0]),
        "mu1": float(std[1]),
        "sigma": float(std[2]),
        "r_value": float(std[3]),
        "fidelity": float(std[4]),
    }


def hmm_filtered_demodulate(
    shot: ObservationSequence, posterior: StatePosterior
) -> list[tuple[int, tuple[float, float]]]:
    """Split a shot at its decoded transitions and average each section.

    Returns one (state, mean IQ) entry per maximal constant run of the
    posterior path, so a clean shot contributes one full-window point
    and a decayed shot contributes one point per side of the flip.
    """
    path = posterior.path
    if path.shape[0] != len(shot):
        raise InputError("posterior path length does not match the shot")
    out: list[tuple[int, tuple[float, float]]] = []
    bounds = [0, *list(np.asarray(posterior.transition_indices)), len(shot)]
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        section = shot.points[lo:hi]
        mean = section.mean(axis=0)
        out.append((int(path[lo]), (float(mean[0]), float(mean[1]))))
    return out


def build_metrics_report(
    cm: ConfusionMatrix, fit: ProjectedFit | None = None
) -> dict:
    """Assemble the standard metrics payload for JSON output."""
    fid = assignment_fidelity(cm)
    cols = cm.column_sums()
    report = {
        "fidelity_assignment": fid,
        "confusion": cm.counts.tolist(),
        "errors": {
            "total_error": 1.0 - fid,
            "p_assign_0_given_1": float(cm.counts[0, 1] / cols[1]),
            "p_assign_1_given_0": float(cm.counts[1, 0] / cols[0]),
        },
        "fidelity_ideal": None,
        "r_value": None,
        "fit": None,
    }
    if fit is not None:
        report["fidelity_ideal"] = ideal_fidelity(fit.r_value)
        report["r_value"] = fit.r_value
        report["fit"] = {
            "mu0": fit.mu0,
            "mu1": fit.mu1,
            "sigma": fit.sigma,
            "weights": None if fit.weights is None else [list(w) for w in fit.weights],
            "r_value_pooled": fit.r_value_pooled,
            "degenerate_weight": fit.degenerate_weight,
        }
    return report


def write_metrics_report(report: dict, path: str | Path) -> None:
    dump_json(report, path)

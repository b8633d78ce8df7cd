"""Starting-state classifiers for single readout shots.

Three schemes share one question — which state was the qubit in when the
record began:

* ``hmm_classify`` decodes the full segment sequence with a trained HMM
  (uniform start priors at classification time) and reads off the
  posterior of the first segment, so mid-shot decay costs no fidelity;
* ``mvg_train``/``mvg_classify`` is a quadratic Gaussian discriminant on
  the shot's single time-averaged IQ point;
* ``svm_train``/``svm_classify`` is a linear soft-margin SVM on the same
  averaged point, solved by deterministic dual coordinate descent.

``reject_low_probability`` post-selects HMM/MVG results on their start
probability; the SVM emits only a margin, which is exactly why it cannot
participate in that trade-off.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import Dataset
from .errors import InputError, NumericalError, SchemaError
from .hmm import (
    _CHUNK,
    Gaussian2D,
    HmmModel,
    ObservationSequence,
    _posterior_arrays,
    model_from_dict,
    model_to_dict,
    variance_floor,
)
from .rng import derive_rng
from .util import atomic_write_text, dump_json, load_json

__all__ = [
    "ShotClassification",
    "MvgClassifier",
    "SvmClassifier",
    "hmm_classify",
    "classify_shots",
    "mvg_train",
    "mvg_classify",
    "mvg_classify_batch",
    "svm_train",
    "svm_classify",
    "svm_classify_batch",
    "reject_low_probability",
    "save_classifier",
    "load_classifier",
    "write_classifications",
    "read_classifications",
]

_CLS_HEADER = [
    "shot_id",
    "prepared_label",
    "assigned_label",
    "start_probability",
    "transition_detected",
    "transition_index",
]


@dataclass(frozen=True)
class ShotClassification:
    """Outcome of classifying one shot's starting state."""

    assigned_label: int
    start_probability: float
    transition_detected: bool
    transition_index: int | None
    shot_id: int | None = None
    prepared_label: int | None = None


# ---------------------------------------------------------------------------
# HMM start-state classification
# ---------------------------------------------------------------------------


def _truncation(n_segments: int, dt_s: float, t_int_s: float | None) -> int:
    if t_int_s is None:
        return n_segments
    k = int(math.floor(t_int_s / dt_s + 1e-9))
    if k < 1:
        raise InputError("t_int_s truncates the shot to zero segments")
    return min(k, n_segments)


def _classify_gamma_batch(gamma: np.ndarray) -> tuple[np.ndarray, ...]:
    """(assigned, start_prob, detected, first_change) from gamma (S, T, N)."""
    assigned = np.argmax(gamma[:, 0, :], axis=1)
    start_prob = gamma[:, 0, :].max(axis=1)
    path = np.argmax(gamma, axis=2)
    changed = path[:, 1:] != path[:, :-1]
    detected = changed.any(axis=1)
    if changed.shape[1] == 0:
        first_change = np.full(gamma.shape[0], -1)
    else:
        first_change = np.where(detected, np.argmax(changed, axis=1) + 1, -1)
    return assigned, start_prob, detected, first_change


def hmm_classify(
    model: HmmModel, shot: ObservationSequence, t_int_s: float | None = None
) -> ShotClassification:
    """Posterior-decode one shot and label it by its first segment.

    The model's start distribution is replaced with a uniform one so the
    label reflects this shot alone, not the training population.
    ``t_int_s`` keeps only the leading floor(t_int/dt) segments.
    """
    k = _truncation(len(shot), shot.dt_seconds, t_int_s)
    uniform = np.full(model.n_states, 1.0 / model.n_states)
    gamma, _ = _posterior_arrays(model, shot.points[None, :k, :], priors=uniform)
    assigned, start_prob, detected, first_change = _classify_gamma_batch(gamma)
    return ShotClassification(
        assigned_label=int(assigned[0]),
        start_probability=float(start_prob[0]),
        transition_detected=bool(detected[0]),
        transition_index=int(first_change[0]) if detected[0] else None,
    )


def classify_shots(
    model: HmmModel,
    data: Dataset | np.ndarray,
    t_int_s: float | None = None,
    n_threads: int = 1,
) -> list[ShotClassification]:
    """HMM start-state classification of every shot in a batch.

    Accepts a Dataset (ids and prepared labels carried through) or a raw
    (n_shots, n_segments, 2) array.  Work is chunked in fixed blocks so
    serial and threaded runs produce identical results.
    """
    if isinstance(data, Dataset):
        if abs(data.dt_seconds - model.dt_seconds) > 1e-12 * model.dt_seconds:
            raise InputError(
                f"dataset segment duration {data.dt_seconds} does not match "
                f"model {model.dt_seconds}"
            )
        iq = data.iq
        shot_ids = data.shot_ids
        prepared = data.labels
    else:
        iq = np.asarray(data, dtype=float)
        if iq.ndim != 3 or iq.shape[2] != 2:
            raise InputError("shot batch must have shape (n_shots, n_segments, 2)")
        shot_ids = None
        prepared = None
    k = _truncation(iq.shape[1], model.dt_seconds, t_int_s)
    iq = iq[:, :k, :]
    uniform = np.full(model.n_states, 1.0 / model.n_states)

    n_shots = iq.shape[0]
    starts = range(0, n_shots, _CHUNK)

    def one_chunk(lo: int):
        gamma, _ = _posterior_arrays(model, iq[lo : lo + _CHUNK], priors=uniform)
        return _classify_gamma_batch(gamma)

    if n_threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            chunks = list(pool.map(one_chunk, starts))
    else:
        chunks = [one_chunk(lo) for lo in starts]

    results: list[ShotClassification] = []
    for lo, (assigned, start_prob, detected, first_change) in zip(starts, chunks):
        for j in range(assigned.size):
            s = lo + j
            results.append(
                ShotClassification(
                    assigned_label=int(assigned[j]),
                    start_probability=float(start_prob[j]),
                    transition_detected=bool(detected[j]),
                    transition_index=int(first_change[j]) if detected[j] else None,
                    shot_id=int(shot_ids[s]) if shot_ids is not None else None,
                    prepared_label=int(prepared[s]) if prepared is not None else None,
                )
            )
    return results


# ---------------------------------------------------------------------------
# multivariate-Gaussian discriminant
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MvgClassifier:
    """Quadratic discriminant: one full-covariance Gaussian per class."""

    class_labels: tuple[int, ...]
    gaussians: tuple[Gaussian2D, ...]
    class_priors: np.ndarray
    regularized_classes: tuple[int, ...] = ()

    def __post_init__(self):
        if len(self.class_labels) != len(self.gaussians):
            raise InputError("need one Gaussian per class")
        if len(self.class_labels) < 2:
            raise InputError("need at least two classes")
        priors = np.array(self.class_priors, dtype=float)
        if priors.shape != (len(self.class_labels),) or np.any(priors < 0.0):
            raise InputError("class_priors must be a non-negative vector per class")
        total = priors.sum()
        if not total > 0.0:
            raise InputError("class_priors must not all be zero")
        priors = priors / total
        priors.setflags(write=False)
        object.__setattr__(self, "class_priors", priors)
        object.__setattr__(self, "class_labels", tuple(int(c) for c in self.class_labels))


def mvg_train(points: np.ndarray, labels: np.ndarray) -> MvgClassifier:
    """Fit per-class sample means and covariances (denominator n-1).

    Class priors are uniform regardless of class sizes, matching the
    uniform-prior HMM classification.  A singular class covariance is
    regularized by adding a data-scaled diagonal and the class is listed
    in ``regularized_classes``.
    """
    points = np.asarray(points, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    if points.ndim != 2 or points.shape[1] != 2:
        raise InputError("points must have shape (n, 2)")
    if labels.shape != (points.shape[0],):
        raise InputError("labels must have one entry per point")
    classes = np.unique(labels)
    if classes.size < 2:
        raise InputError("need at least two classes")
    floor = variance_floor(points)
    gaussians = []
    flagged = []
    for c in classes:
        cls_pts = points[labels == c]
        if cls_pts.shape[0] < 3:
            raise InputError(f"class {int(c)} has fewer than 3 points")
        mean = cls_pts.mean(axis=0)
        cov = np.cov(cls_pts, rowvar=False, ddof=1)
        if np.min(np.linalg.eigvalsh(cov)) < floor:
            cov = cov + floor * np.eye(2)
            flagged.append(int(c))
        gaussians.append(Gaussian2D(mean_i=mean[0], mean_q=mean[1], cov=cov))
    return MvgClassifier(
        class_labels=tuple(int(c) for c in classes),
        gaussians=tuple(gaussians),
        class_priors=np.full(classes.size, 1.0 / classes.size),
        regularized_classes=tuple(flagged),
    )


def _mvg_log_posteriors(clf: MvgClassifier, points: np.ndarray) -> np.ndarray:
    """Normalized log class posteriors, shape (n, n_classes)."""
    log_joint = np.stack(
        [
            np.log(clf.class_priors[k]) + clf.gaussians[k].logpdf(points)
            for k in range(len(clf.class_labels))
        ],
        axis=-1,
    )
    peak = log_joint.max(axis=-1, keepdims=True)
    norm = peak + np.log(np.exp(log_joint - peak).sum(axis=-1, keepdims=True))
    return log_joint - norm


def mvg_classify_batch(
    clf: MvgClassifier, points: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """(labels, posteriors) for points of shape (n, 2)."""
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != 2:
        raise InputError("points must have shape (n, 2)")
    log_post = _mvg_log_posteriors(clf, points)
    idx = np.argmax(log_post, axis=-1)
    labels = np.asarray(clf.class_labels, dtype=np.int64)[idx]
    posteriors = np.exp(log_post[np.arange(points.shape[0]), idx])
    return labels, posteriors


def mvg_classify(clf: MvgClassifier, point) -> tuple[int, float]:
    """Label one IQ point; ties go to the lowest class label."""
    labels, posteriors = mvg_classify_batch(clf, np.asarray(point, float)[None, :])
    return int(labels[0]), float(posteriors[0])


# ---------------------------------------------------------------------------
# linear soft-margin SVM
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SvmClassifier:
    """Linear SVM on standardized IQ features."""

    weights: np.ndarray
    bias: float
    c_param: float
    scale_mean: np.ndarray
    scale_std: np.ndarray
    class_labels: tuple[int, int]

    def __post_init__(self):
        weights = np.array(self.weights, dtype=float)
        scale_mean = np.array(self.scale_mean, dtype=float)
        scale_std = np.array(self.scale_std, dtype=float)
        if weights.shape != (2,) or scale_mean.shape != (2,) or scale_std.shape != (2,):
            raise InputError("weights and feature scaling must be 2-vectors")
        if np.any(scale_std <= 0.0):
            raise InputError("feature scaling stds must be positive")
        if not self.c_param > 0.0:
            raise InputError("c_param must be positive")
        for arr in (weights, scale_mean, scale_std):
            arr.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "scale_mean", scale_mean)
        object.__setattr__(self, "scale_std", scale_std)
        object.__setattr__(
            self, "class_labels", tuple(int(c) for c in self.class_labels)
        )


def svm_train(
    points: np.ndarray,
    labels: np.ndarray,
    c_param: float = 1.0,
    gap_tol: float = 1e-6,
    max_epochs: int = 20000,
) -> SvmClassifier:
    """Train a linear soft-margin SVM by dual coordinate descent.

    Features are standardized internally and the bias is learned as an
    augmented constant feature.  Coordinates are visited in one fixed,
    precomputed order — the same order every epoch and every run — so
    the solve is fully deterministic: same data in, same hyperplane out.
    The order is a constant-seed permutation rather than 0..n-1 because
    class-sorted input otherwise swings the shared bias coordinate back
    and forth each half-epoch and the gap never closes.  Stops once the
    relative duality gap drops to ``gap_tol``.
    """
    points = np.asarray(points, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    if points.ndim != 2 or points.shape[1] != 2:
        raise InputError("points must have shape (n, 2)")
    if labels.shape != (points.shape[0],):
        raise InputError("labels must have one entry per point")
    classes = np.unique(labels)
    if classes.size != 2:
        raise InputError("SVM training needs exactly two classes")
    if not c_param > 0.0:
        raise InputError("c_param must be positive")
    lo, hi = int(classes[0]), int(classes[1])
    y = np.where(labels == hi, 1.0, -1.0)

    scale_mean = points.mean(axis=0)
    scale_std = points.std(axis=0)
    if np.any(scale_std <= 0.0):
        raise InputError("a feature has zero variance; cannot standardize")
    x = np.empty((points.shape[0], 3))
    x[:, :2] = (points - scale_mean) / scale_std
    x[:, 2] = 1.0

    n = x.shape[0]
    # plain-float inner loop: per-coordinate updates are inherently serial,
    # and numpy scalar overhead dominates at this dimensionality
    yx0, yx1, yx2 = (y * x[:, 0]).tolist(), (y * x[:, 1]).tolist(), y.tolist()
    inv_q = (1.0 / np.einsum("ij,ij->i", x, x)).tolist()
    alpha = [0.0] * n
    w0 = w1 = w2 = 0.0
    order = derive_rng(0x53564D, n).permutation(n)
    full_order = order.tolist()
    active = full_order
    converged = False
    for epoch in range(max_epochs):
        # periodically sweep everything so no shrunk coordinate can stall
        # the gap; in between, sweep only coordinates near the margin
        idx = full_order if epoch % 8 == 0 else active
        for i in idx:
            a, b, c = yx0[i], yx1[i], yx2[i]
            grad = w0 * a + w1 * b + w2 * c - 1.0
            new = alpha[i] - grad * inv_q[i]
            if new < 0.0:
                new = 0.0
            elif new > c_param:
                new = c_param
            delta = new - alpha[i]
            if delta != 0.0:
                w0 += delta * a
                w1 += delta * b
                w2 += delta * c
                alpha[i] = new
        alpha_arr = np.asarray(alpha)
        w = (alpha_arr * y) @ x  # exact resum kills incremental-update drift
        w0, w1, w2 = w.tolist()
        yf = y * (x @ w)
        hinge = np.maximum(0.0, 1.0 - yf).sum()
        primal = 0.5 * (w @ w) + c_param * hinge
        dual = alpha_arr.sum() - 0.5 * (w @ w)
        if primal - dual <= gap_tol * max(1.0, abs(primal)):
            converged = True
            break
        keep = ~(((alpha_arr == 0.0) & (yf > 1.1)) | ((alpha_arr == c_param) & (yf < 0.9)))
        active = order[keep[order]].tolist()
    if not converged:
        raise NumericalError(
            f"SVM dual coordinate descent did not reach gap {gap_tol:g} "
            f"in {max_epochs} epochs"
        )
    return SvmClassifier(
        weights=w[:2],
        bias=float(w[2]),
        c_param=float(c_param),
        scale_mean=scale_mean,
        scale_std=scale_std,
        class_labels=(lo, hi),
    )


def svm_classify_batch(
    clf: SvmClassifier, points: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """(labels, margins) for points of shape (n, 2)."""
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != 2:
        raise InputError("points must have shape (n, 2)")
    std = (points - clf.scale_mean) / clf.scale_std
    margins = std @ clf.weights + clf.bias
    lo, hi = clf.class_labels
    labels = np.where(margins > 0.0, hi, lo).astype(np.int64)
    return labels, margins


def svm_classify(clf: SvmClassifier, point) -> tuple[int, float]:
    """Label one IQ point by margin sign; the hyperplane itself is ``lo``."""
    labels, margins = svm_classify_batch(clf, np.asarray(point, float)[None, :])
    return int(labels[0]), float(margins[0])


# ---------------------------------------------------------------------------
# post-selection
# ---------------------------------------------------------------------------


def reject_low_probability(
    results: list[ShotClassification], threshold: float
) -> tuple[list[ShotClassification], float]:
    """Keep shots whose start probability is at least ``threshold``.

    Returns the accepted shots and the efficiency (accepted / attempted).
    """
    if not 0.0 <= threshold <= 1.0:
        raise InputError("threshold must lie in [0, 1]")
    if not results:
        raise InputError("no classifications to filter")
    accepted = [r for r in results if r.start_probability >= threshold]
    return accepted, len(accepted) / len(results)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def save_classifier(clf, path: str | Path) -> None:
    """Serialize any of the three classifier kinds to JSON."""
    if isinstance(clf, HmmModel):
        payload = model_to_dict(clf)
        payload["kind"] = "hmm"
    elif isinstance(clf, MvgClassifier):
        payload = {
            "kind": "mvg",
            "class_labels": list(clf.class_labels),
            "class_priors": clf.class_priors.tolist(),
            "classes": [
                {"mean_i": g.mean_i, "mean_q": g.mean_q, "cov": g.cov.tolist()}
                for g in clf.gaussians
            ],
            "regularized_classes": list(clf.regularized_classes),
        }
    elif isinstance(clf, SvmClassifier):
        payload = {
            "kind": "svm",
            "weights": clf.weights.tolist(),
            "bias": clf.bias,
            "c_param": clf.c_param,
            "scale_mean": clf.scale_mean.tolist(),
            "scale_std": clf.scale_std.tolist(),
            "class_labels": list(clf.class_labels),
        }
    else:
        raise InputError(f"cannot serialize {type(clf).__name__} as a classifier")
    dump_json(payload, path)


def load_classifier(path: str | Path):
    """Load a classifier JSON; returns HmmModel, MvgClassifier, or SvmClassifier."""
    payload = load_json(path)
    if not isinstance(payload, dict):
        raise SchemaError("classifier file must hold a JSON object")
    kind = payload.get("kind")
    try:
        if kind == "hmm" or (kind is None and "n_states" in payload):
            # bare model files (``save_model`` output) carry no kind tag
            return model_from_dict(payload)
        if kind == "mvg":
            return MvgClassifier(
                class_labels=tuple(payload["class_labels"]),
                gaussians=tuple(
                    Gaussian2D(
                        mean_i=c["mean_i"], mean_q=c["mean_q"], cov=np.array(c["cov"])
                    )
                    for c in payload["classes"]
                ),
                class_priors=np.array(payload["class_priors"]),
                regularized_classes=tuple(payload.get("regularized_classes", ())),
            )
        if kind == "svm":
            return SvmClassifier(
                weights=np.array(payload["weights"]),
                bias=float(payload["bias"]),
                c_param=float(payload["c_param"]),
                scale_mean=np.array(payload["scale_mean"]),
                scale_std=np.array(payload["scale_std"]),
                class_labels=tuple(payload["class_labels"]),
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed {kind!r} classifier file: {exc}") from exc
    raise SchemaError(f"unknown classifier kind {kind!r}")


def write_classifications(
    results: list[ShotClassification], path: str | Path
) -> None:
    """Classification CSV: one row per shot, schema fixed."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_CLS_HEADER)
    for r in results:
        writer.writerow(
            [
                "" if r.shot_id is None else r.shot_id,
                "" if r.prepared_label is None else r.prepared_label,
                r.assigned_label,
                repr(float(r.start_probability)),
                int(r.transition_detected),
                "" if r.transition_index is None else r.transition_index,
            ]
        )
    atomic_write_text(path, buf.getvalue())


def read_classifications(path: str | Path) -> list[ShotClassification]:
    try:
        f = open(path, newline="")
    except OSError as exc:
        raise SchemaError(f"cannot read classifications: {exc}") from exc
    with f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != _CLS_HEADER:
            raise SchemaError(f"bad classification header {header!r}")
        out = []
        for row in reader:
            if len(row) != len(_CLS_HEADER):
                raise SchemaError(f"bad classification row {row!r}")
            try:
                out.append(
                    ShotClassification(
                        shot_id=int(row[0]) if row[0] else None,
                        prepared_label=int(row[1]) if row[1] else None,
                        assigned_label=int(row[2]),
                        start_probability=float(row[3]),
                        transition_detected=bool(int(row[4])),
                        transition_index=int(row[5]) if row[5] else None,
                    )
                )
            except ValueError as exc:
                raise SchemaError(f"bad classification row {row!r}") from exc
    return out

"""Reproducible experiment harnesses.

Each ``run_*`` function turns a config plus (usually) a simulated
dataset into a SweepResult and a summary dict, and ``run_experiment``
binds the five named experiments to their output files (config echo,
sweep CSV, summary JSON).  Everything is deterministic given the config
seed: datasets key their per-shot streams by (seed, experiment tag,
grid index, shot), resamples by (seed, tag, draw index), so results are
bit-identical across runs and thread counts.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.optimize import curve_fit
from scipy.special import erfinv

from . import classifiers as clf
from .dataset import Dataset
from .errors import DomainError, InputError, NumericalError, SchemaError
from .hmm import (
    Gaussian2D,
    HmmModel,
    baum_welch,
    extract_t1_eff,
    initial_model_labeled_means,
    two_state_transitions,
)
from .metrics import confusion_from_labels
from .signal import simulate_iq_dataset
from .rng import derive_rng
from .util import atomic_write_text, dump_json

__all__ = [
    "DEFAULT_DT_S",
    "DEFAULT_T1_EFF_S",
    "DEFAULT_EXCITATION_HZ",
    "DEFAULT_N_SEGMENTS",
    "DEFAULT_SEGMENT_R",
    "window_r_for_fidelity",
    "reference_model",
    "ExperimentConfig",
    "SweepResult",
    "run_bootstrap",
    "run_t1_sweep",
    "run_fidelity_vs_time",
    "run_efficiency_curve",
    "run_priors_start_sweep",
    "run_experiment",
    "EXPERIMENT_NAMES",
]

DEFAULT_DT_S = 80e-9
DEFAULT_T1_EFF_S = 14.46e-6
DEFAULT_EXCITATION_HZ = 9.6
DEFAULT_N_SEGMENTS = 243


def window_r_for_fidelity(fidelity: float) -> float:
    """Separation parameter r at which ideal_fidelity(r) hits ``fidelity``."""
    if not 0.5 <= fidelity < 1.0:
        raise InputError("fidelity must lie in [0.5, 1)")
    return float(8.0 * erfinv(2.0 * fidelity - 1.0) ** 2)


# per-segment separation chosen so that a nine-segment (0.72 us) window
# integrates up to a 99.14% ideal fidelity
DEFAULT_SEGMENT_R = window_r_for_fidelity(0.9914) / 9.0

# stream-key tags keeping each experiment's draws disjoint under one seed
_KEY_BOOTSTRAP = 1
_KEY_T1_SWEEP = 2
_KEY_DATASET = 3


def reference_model(
    segment_r: float = DEFAULT_SEGMENT_R,
    dt_s: float = DEFAULT_DT_S,
    t1_eff_s: float = DEFAULT_T1_EFF_S,
    gamma01_hz: float = DEFAULT_EXCITATION_HZ,
) -> HmmModel:
    """Two-state model with unit-variance emissions split along I.

    The means sit at (-+ sqrt(r)/2, 0) so the per-segment separation
    parameter is exactly ``segment_r``.
    """
    if not segment_r > 0.0:
        raise InputError("segment_r must be positive")
    half = math.sqrt(segment_r) / 2.0
    return HmmModel(
        n_states=2,
        priors=np.array([0.5, 0.5]),
        trans=two_state_transitions(dt_s, t1_eff_s, gamma01_hz),
        emissions=(
            Gaussian2D(mean_i=-half, mean_q=0.0, cov=np.eye(2)),
            Gaussian2D(mean_i=half, mean_q=0.0, cov=np.eye(2)),
        ),
        dt_seconds=dt_s,
    )


_CONFIG_KEYS = {
    "seed",
    "shot_counts",
    "t1_grid_s",
    "readout_times_s",
    "bootstrap",
    "thresholds",
    "output_dir",
    "n_threads",
    "dt_s",
    "t1_eff_s",
    "gamma01_hz",
    "n_segments",
    "segment_r",
    "train_per_class",
    "start_times_s",
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Knobs shared by all experiments, JSON round-trippable."""

    seed: int = 0
    shot_counts: dict = field(
        default_factory=lambda: {"ground": 12500, "excited": 12500}
    )
    t1_grid_s: tuple = tuple(np.linspace(2e-6, 16e-6, 8))
    readout_times_s: tuple = tuple(
        f * DEFAULT_T1_EFF_S
        for f in (0.02, 0.05, 0.08, *(i / 10.0 for i in range(1, 14)))
    )
    bootstrap: dict = field(
        default_factory=lambda: {"n_resamples": 100, "subset_size": 2000}
    )
    thresholds: tuple = (0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99, 0.999, 0.9999)
    output_dir: str | None = None
    n_threads: int = 1
    dt_s: float = DEFAULT_DT_S
    t1_eff_s: float = DEFAULT_T1_EFF_S
    gamma01_hz: float = DEFAULT_EXCITATION_HZ
    n_segments: int = DEFAULT_N_SEGMENTS
    segment_r: float = DEFAULT_SEGMENT_R
    train_per_class: int = 2000
    start_times_s: tuple = tuple(np.linspace(0.0, 8e-6, 9))

    def __post_init__(self):
        counts = dict(self.shot_counts)
        if set(counts) != {"ground", "excited"}:
            raise InputError("shot_counts must have exactly 'ground' and 'excited'")
        if any(int(v) <= 0 for v in counts.values()):
            raise InputError("shot counts must be positive")
        counts = {k: int(v) for k, v in counts.items()}
        boot = dict(self.bootstrap)
        if set(boot) != {"n_resamples", "subset_size"}:
            raise InputError("bootstrap must have 'n_resamples' and 'subset_size'")
        if any(int(v) <= 0 for v in boot.values()):
            raise InputError("bootstrap counts must be positive")
        boot = {k: int(v) for k, v in boot.items()}
        for name in ("t1_grid_s", "readout_times_s", "thresholds", "start_times_s"):
            grid = tuple(float(v) for v in getattr(self, name))
            if len(grid) == 0:
                raise InputError(f"{name} must not be empty")
            if any(b <= a for a, b in zip(grid, grid[1:])):
                raise InputError(f"{name} must be strictly ascending")
            object.__setattr__(self, name, grid)
        if any(t <= 0 for t in self.t1_grid_s):
            raise InputError("t1 grid must be positive")
        if any(t <= 0 for t in self.readout_times_s):
            raise InputError("readout times must be positive")
        if self.start_times_s[0] < 0:
            raise InputError("start times must be non-negative")
        if self.n_threads < 1:
            raise InputError("n_threads must be >= 1")
        if self.train_per_class < 3:
            raise InputError("train_per_class must be >= 3")
        if not (self.dt_s > 0 and self.t1_eff_s > 0 and self.segment_r > 0):
            raise InputError("dt_s, t1_eff_s, and segment_r must be positive")
        if self.n_segments < 2:
            raise InputError("n_segments must be >= 2")
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "shot_counts", counts)
        object.__setattr__(self, "bootstrap", boot)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "shot_counts": dict(self.shot_counts),
            "t1_grid_s": list(self.t1_grid_s),
            "readout_times_s": list(self.readout_times_s),
            "bootstrap": dict(self.bootstrap),
            "thresholds": list(self.thresholds),
            "output_dir": self.output_dir,
            "n_threads": self.n_threads,
            "dt_s": self.dt_s,
            "t1_eff_s": self.t1_eff_s,
            "gamma01_hz": self.gamma01_hz,
            "n_segments": self.n_segments,
            "segment_r": self.segment_r,
            "train_per_class": self.train_per_class,
            "start_times_s": list(self.start_times_s),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "ExperimentConfig":
        if not isinstance(payload, dict):
            raise SchemaError("config must be a JSON object")
        unknown = set(payload) - _CONFIG_KEYS
        if unknown:
            raise SchemaError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(payload)
        for name in ("t1_grid_s", "readout_times_s", "thresholds", "start_times_s"):
            if name in kwargs:
                kwargs[name] = tuple(kwargs[name])
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"bad config: {exc}") from exc

    def model(self) -> HmmModel:
        return reference_model(
            self.segment_r, self.dt_s, self.t1_eff_s, self.gamma01_hz
        )


@dataclass(frozen=True)
class SweepResult:
    """One sweep: shared x grid, named series, optional error bars."""

    x: np.ndarray
    series: dict
    errors: dict
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        series = {k: np.asarray(v, dtype=float) for k, v in self.series.items()}
        errors = {k: np.asarray(v, dtype=float) for k, v in self.errors.items()}
        for name, v in {**series, **errors}.items():
            if v.shape != x.shape:
                raise InputError(f"series {name!r} length differs from x")
        for name in errors:
            if name not in series:
                raise InputError(f"error bars {name!r} have no matching series")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "series", series)
        object.__setattr__(self, "errors", errors)

    def to_csv(self, path: str | Path) -> None:
        names = sorted(self.series)
        cols = [self.x] + [self.series[n] for n in names]
        header = ["x"] + names
        for n in names:
            if n in self.errors:
                header.append(f"err_{n}")
                cols.append(self.errors[n])
        lines = [",".join(header)]
        for row in zip(*cols):
            lines.append(",".join(repr(float(v)) for v in row))
        atomic_write_text(path, "\n".join(lines) + "\n")


def _train_labeled(iq: np.ndarray, labels: np.ndarray, dt_s: float, n_threads: int = 1):
    init = initial_model_labeled_means(iq, labels, dt_seconds=dt_s)
    return baum_welch(iq, n_states=2, init=init, n_threads=n_threads)


def _simulate_default(cfg: ExperimentConfig, key: tuple[int, ...]) -> Dataset:
    return simulate_iq_dataset(
        cfg.model(),
        cfg.shot_counts["ground"],
        cfg.shot_counts["excited"],
        cfg.n_segments,
        cfg.gamma01_hz,
        seed=cfg.seed,
        key=key,
    )


# ---------------------------------------------------------------------------
# bootstrap parameter statistics
# ---------------------------------------------------------------------------


def run_bootstrap(data: Dataset, cfg: ExperimentConfig) -> dict:
    """Resample the dataset and report spread of the learned parameters.

    Each resample draws ``subset_size`` shots per class with replacement,
    retrains from a labeled-means start, and is aligned to a reference
    model (trained once on the full data) by nearest emission means.
    Resamples whose states cannot be matched unambiguously, or whose
    training fails, are excluded and counted.
    """
    n_resamples = cfg.bootstrap["n_resamples"]
    subset = cfg.bootstrap["subset_size"]
    idx0 = np.nonzero(data.labels == 0)[0]
    idx1 = np.nonzero(data.labels == 1)[0]
    if idx0.size < subset or idx1.size < subset:
        raise InputError(
            f"dataset has {idx0.size}/{idx1.size} shots per class; "
            f"bootstrap needs at least {subset} of each"
        )
    reference, _ = _train_labeled(data.iq, data.labels, data.dt_seconds, cfg.n_threads)
    ref_means = np.stack([g.mean for g in reference.emissions])

    kept_trans = []
    kept_priors = []
    kept_means = []
    n_ambiguous = 0
    n_failed = 0
    for k in range(n_resamples):
        rng = derive_rng(cfg.seed, _KEY_BOOTSTRAP, k)
        pick0 = idx0[rng.integers(0, idx0.size, subset)]
        pick1 = idx1[rng.integers(0, idx1.size, subset)]
        pick = np.concatenate([pick0, pick1])
        iq = data.iq[pick]
        labels = data.labels[pick]
        try:
            model, _ = _train_labeled(iq, labels, data.dt_seconds, cfg.n_threads)
        except NumericalError:
            n_failed += 1
            continue
        means = np.stack([g.mean for g in model.emissions])
        dists = np.linalg.norm(means[:, None, :] - ref_means[None, :, :], axis=2)
        match = np.argmin(dists, axis=1)
        if match[0] == match[1]:
            n_ambiguous += 1
            continue
        if match[0] == 1:  # swap state identities to the reference order
            perm = np.array([1, 0])
            model = HmmModel(
                n_states=2,
                priors=model.priors[perm],
                trans=model.trans[np.ix_(perm, perm)],
                emissions=(model.emissions[1], model.emissions[0]),
                dt_seconds=model.dt_seconds,
            )
            means = means[perm]
        kept_trans.append(model.trans)
        kept_priors.append(model.priors)
        kept_means.append(means)

    n_kept = len(kept_trans)
    if n_kept == 0:
        raise NumericalError("every bootstrap resample failed or was ambiguous")
    trans = np.stack(kept_trans)
    priors = np.stack(kept_priors)
    means = np.stack(kept_means)
    degenerate = n_kept < 2
    ddof = 0 if degenerate else 1
    separation = float(np.linalg.norm(ref_means[1] - ref_means[0]))
    return {
        "n_resamples": n_resamples,
        "subset_size": subset,
        "n_kept": n_kept,
        "n_ambiguous": n_ambiguous,
        "n_failed": n_failed,
        "degenerate_statistics": degenerate,
        "reference_separation": separation,
        "trans_mean": trans.mean(axis=0).tolist(),
        "trans_std": trans.std(axis=0, ddof=ddof).tolist(),
        "priors_mean": priors.mean(axis=0).tolist(),
        "priors_std": priors.std(axis=0, ddof=ddof).tolist(),
        "emission_means_mean": means.mean(axis=0).tolist(),
        "emission_means_std": means.std(axis=0, ddof=ddof).tolist(),
    }


# ---------------------------------------------------------------------------
# relaxation-time recovery sweep
# ---------------------------------------------------------------------------


def run_t1_sweep(
    t1_grid_s, shots_per_point: int, cfg: ExperimentConfig
) -> tuple[SweepResult, dict]:
    """Simulate excited-only datasets along a T1 grid and re-learn each T1.

    Each grid point gets its own simulated dataset and an unsupervised
    (k-means-started) fit; the summary reports learned-vs-true pairs,
    the spread of the differences, and the slope of a through-origin
    least-squares line, which should sit at 1 when the estimator is
    unbiased.
    """
    grid = tuple(float(t) for t in t1_grid_s)
    if any(t <= 0 for t in grid):
        raise InputError("t1 grid must be positive")
    if shots_per_point < 3:
        raise InputError("need at least 3 shots per point")
    learned = np.full(len(grid), np.nan)
    a11 = np.full(len(grid), np.nan)
    excluded: list[int] = []
    for i, t1 in enumerate(grid):
        model = reference_model(cfg.segment_r, cfg.dt_s, t1, cfg.gamma01_hz)
        ds = simulate_iq_dataset(
            model,
            0,
            shots_per_point,
            cfg.n_segments,
            cfg.gamma01_hz,
            seed=cfg.seed,
            key=(_KEY_T1_SWEEP, i),
        )
        try:
            fitted, _ = baum_welch(
                ds.iq,
                n_states=2,
                init="kmeans",
                dt_seconds=cfg.dt_s,
                kmeans_seed=cfg.seed,
                n_threads=cfg.n_threads,
            )
            a11[i] = fitted.trans[1, 1]
            learned[i] = extract_t1_eff(fitted)
        except (NumericalError, DomainError):
            # a trained-but-degenerate point (a11 pinned at 0 or 1) keeps
            # its a11 record; a training failure leaves both entries NaN
            excluded.append(i)

    ok = np.isfinite(learned)
    if not np.any(np.isfinite(a11)):
        raise NumericalError("every sweep point failed to train")
    x = np.asarray(grid)[ok]
    y = learned[ok]
    if x.size:
        slope = float((x @ y) / (x @ x))
        resid = y - slope * x
        dof = max(x.size - 1, 1)
        slope_se = float(math.sqrt((resid @ resid) / dof / (x @ x)))
        diffs = y - x
    else:
        slope = slope_se = None
        diffs = np.empty(0)
    sweep = SweepResult(
        x=x,
        series={"t1_learned_s": y},
        errors={},
        metadata={"excluded_indices": excluded, "shots_per_point": shots_per_point},
    )
    summary = {
        "slope": slope,
        "slope_stderr": slope_se,
        "std_of_differences_s": float(np.std(diffs, ddof=1)) if x.size > 1 else 0.0,
        "std_of_differences_relative": float(np.std(diffs / x, ddof=1))
        if x.size > 1
        else 0.0,
        "n_points": int(x.size),
        "n_excluded": len(excluded),
        "points": [
            {
                "t1_true_s": float(t),
                "t1_learned_s": float(learned[i]) if np.isfinite(learned[i]) else None,
                "a11_learned": float(a11[i]) if np.isfinite(a11[i]) else None,
            }
            for i, t in enumerate(grid)
        ],
    }
    return sweep, summary


# ---------------------------------------------------------------------------
# classifier fidelity vs readout time
# ---------------------------------------------------------------------------


def _train_test_split(data: Dataset, n_train_per_class: int):
    idx0 = np.nonzero(data.labels == 0)[0]
    idx1 = np.nonzero(data.labels == 1)[0]
    if idx0.size <= n_train_per_class or idx1.size <= n_train_per_class:
        raise InputError(
            f"need more than {n_train_per_class} shots per class to split"
        )
    train = np.concatenate([idx0[:n_train_per_class], idx1[:n_train_per_class]])
    test = np.concatenate([idx0[n_train_per_class:], idx1[n_train_per_class:]])
    return train, test


def _segments_for(t_s: float, dt_s: float) -> int:
    return int(math.floor(t_s / dt_s + 1e-9))


def _series_stats(assigned: np.ndarray, prepared: np.ndarray) -> tuple[float, float, float, float]:
    """(excited fidelity, total error, binomial SE of each)."""
    cm = confusion_from_labels(assigned, prepared)
    cols = cm.column_sums()
    p01 = cm.counts[0, 1] / cols[1]
    p10 = cm.counts[1, 0] / cols[0]
    se01 = math.sqrt(p01 * (1 - p01) / cols[1])
    se10 = math.sqrt(p10 * (1 - p10) / cols[0])
    return (
        float(1.0 - p01),
        float(0.5 * (p01 + p10)),
        float(se01),
        float(0.5 * math.hypot(se01, se10)),
    )


def run_fidelity_vs_time(
    data: Dataset,
    readout_times_s,
    cfg: ExperimentConfig,
    classifiers: tuple[str, ...] = ("hmm", "mvg", "svm"),
) -> tuple[SweepResult, dict]:
    """Excited-state fidelity and total error of each classifier vs time.

    The HMM is trained once on full-length training shots and classifies
    truncated test shots; the IQ-point classifiers are retrained at each
    readout time on window-averaged training points.  Error bars are
    binomial standard errors of the confusion-matrix rates.
    """
    unknown = set(classifiers) - {"hmm", "mvg", "svm"}
    if unknown:
        raise InputError(f"unknown classifiers: {sorted(unknown)}")
    train_idx, test_idx = _train_test_split(data, cfg.train_per_class)
    train_iq = data.iq[train_idx]
    train_labels = data.labels[train_idx]
    test_iq = data.iq[test_idx]
    test_labels = data.labels[test_idx]
    dt = data.dt_seconds

    model = None
    if "hmm" in classifiers:
        model, _ = _train_labeled(train_iq, train_labels, dt, cfg.n_threads)

    times = []
    series: dict[str, list] = {}
    errors: dict[str, list] = {}

    def push(name: str, value: float, err: float):
        series.setdefault(name, []).append(value)
        errors.setdefault(name, []).append(err)

    for t in readout_times_s:
        k = _segments_for(t, dt)
        if k < 1 or k > data.n_segments:
            warnings.warn(
                f"readout time {t:g} s falls outside the record; skipped",
                stacklevel=2,
            )
            continue
        times.append(t)
        train_windows = train_iq[:, :k].mean(axis=1)
        test_windows = test_iq[:, :k].mean(axis=1)
        if "hmm" in classifiers:
            res = clf.classify_shots(model, test_iq[:, :k], n_threads=cfg.n_threads)
            assigned = np.array([r.assigned_label for r in res])
            fid, err, se_f, se_e = _series_stats(assigned, test_labels)
            push("hmm_fidelity_excited", fid, se_f)
            push("hmm_total_error", err, se_e)
        if "mvg" in classifiers:
            mvg = clf.mvg_train(train_windows, train_labels)
            assigned, _ = clf.mvg_classify_batch(mvg, test_windows)
            fid, err, se_f, se_e = _series_stats(assigned, test_labels)
            push("mvg_fidelity_excited", fid, se_f)
            push("mvg_total_error", err, se_e)
        if "svm" in classifiers:
            svm = clf.svm_train(train_windows, train_labels)
            assigned, _ = clf.svm_classify_batch(svm, test_windows)
            fid, err, se_f, se_e = _series_stats(assigned, test_labels)
            push("svm_fidelity_excited", fid, se_f)
            push("svm_total_error", err, se_e)

    if not times:
        raise InputError("no readout time fell inside the record")
    x = np.asarray(times)
    sweep = SweepResult(
        x=x,
        series={k: np.asarray(v) for k, v in series.items()},
        errors={k: np.asarray(v) for k, v in errors.items()},
        metadata={
            "n_train_per_class": cfg.train_per_class,
            "n_test": int(test_idx.size),
            "error_bars": "binomial standard errors",
        },
    )
    summary: dict = {
        "n_train_per_class": cfg.train_per_class,
        "n_test": int(test_idx.size),
        "error_bars": "binomial standard errors",
    }
    if "hmm" in classifiers:
        hmm_err = sweep.series["hmm_total_error"]
        late = x >= 1e-6
        # the plateau is the long-time regime; short windows are excluded
        summary["hmm_error_plateau"] = float(
            hmm_err[late].mean() if np.any(late) else hmm_err.mean()
        )
        if np.any(late):
            fid_late = sweep.series["hmm_fidelity_excited"][late]
            summary["hmm_fidelity_spread_beyond_1us"] = float(
                fid_late.max() - fid_late.min()
            )
    for name in ("mvg", "svm"):
        if name in classifiers:
            err = sweep.series[f"{name}_total_error"]
            summary[f"{name}_error_min"] = float(err.min())
            summary[f"{name}_error_min_time_s"] = float(x[int(np.argmin(err))])
    return sweep, summary


# ---------------------------------------------------------------------------
# rejection-threshold efficiency curve
# ---------------------------------------------------------------------------


def _accepted_stats(
    assigned: np.ndarray, prepared: np.ndarray, accept: np.ndarray
) -> tuple[float, float]:
    """(efficiency, excited fidelity on the accepted subset; NaN if undefined)."""
    efficiency = float(accept.mean()) if accept.size else 0.0
    sel1 = accept & (prepared == 1)
    if not np.any(sel1):
        return efficiency, float("nan")
    fid1 = float((assigned[sel1] == 1).mean())
    return efficiency, fid1


def run_efficiency_curve(
    data: Dataset,
    model: HmmModel,
    mvg: clf.MvgClassifier,
    thresholds,
    t_int_hmm_s: float,
    t_int_mvg_s: float,
    n_threads: int = 1,
) -> tuple[SweepResult, dict]:
    """Post-selection trade-off: efficiency vs accepted-subset fidelity.

    The HMM classifies segment sequences truncated at ``t_int_hmm_s``;
    the Gaussian discriminant classifies window averages over
    ``t_int_mvg_s``.  Each threshold keeps only shots whose start/class
    probability reaches it.  An empty accepted subset reports NaN
    fidelity rather than zero.
    """
    thresholds = tuple(float(v) for v in thresholds)
    if any(not 0.0 <= v <= 1.0 for v in thresholds):
        raise InputError("thresholds must lie in [0, 1]")
    if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        raise InputError("thresholds must be strictly ascending")
    res = clf.classify_shots(model, data, t_int_s=t_int_hmm_s, n_threads=n_threads)
    hmm_assigned = np.array([r.assigned_label for r in res])
    hmm_prob = np.array([r.start_probability for r in res])
    k = _segments_for(t_int_mvg_s, data.dt_seconds)
    if k < 1 or k > data.n_segments:
        raise InputError("t_int_mvg_s falls outside the record")
    windows = data.iq[:, :k].mean(axis=1)
    mvg_assigned, mvg_prob = clf.mvg_classify_batch(mvg, windows)
    prepared = data.labels

    rows = {name: [] for name in (
        "hmm_efficiency", "hmm_fidelity_excited", "mvg_efficiency", "mvg_fidelity_excited",
    )}
    for th in thresholds:
        eff, fid = _accepted_stats(hmm_assigned, prepared, hmm_prob >= th)
        rows["hmm_efficiency"].append(eff)
        rows["hmm_fidelity_excited"].append(fid)
        eff, fid = _accepted_stats(mvg_assigned, prepared, mvg_prob >= th)
        rows["mvg_efficiency"].append(eff)
        rows["mvg_fidelity_excited"].append(fid)

    sweep = SweepResult(
        x=np.asarray(thresholds),
        series={k2: np.asarray(v) for k2, v in rows.items()},
        errors={},
        metadata={"t_int_hmm_s": t_int_hmm_s, "t_int_mvg_s": t_int_mvg_s},
    )
    summary = {
        "t_int_hmm_s": t_int_hmm_s,
        "t_int_mvg_s": t_int_mvg_s,
        "hmm_fidelity_at_full_efficiency": float(rows["hmm_fidelity_excited"][0]),
        "mvg_fidelity_at_full_efficiency": float(rows["mvg_fidelity_excited"][0]),
    }
    return sweep, summary


# ---------------------------------------------------------------------------
# start-probability decay sweep
# ---------------------------------------------------------------------------


def run_priors_start_sweep(
    data: Dataset, start_times_s, cfg: ExperimentConfig
) -> tuple[SweepResult, dict]:
    """Learned excited-start probability as the record start is delayed.

    For each start time the leading segments are dropped, an HMM is
    retrained unsupervised on the excited-prepared shots, and the
    learned excited prior is recorded; the series is then fit with
    A * exp(-t / T1) to recover the effective relaxation time without
    any labels.
    """
    idx1 = np.nonzero(data.labels == 1)[0]
    if idx1.size < 3:
        raise InputError("need at least 3 excited-prepared shots")
    iq1 = data.iq[idx1]
    dt = data.dt_seconds
    times = []
    priors = []
    for t in start_times_s:
        if t < 0:
            raise InputError("start times must be non-negative")
        first = _segments_for(t, dt)
        if data.n_segments - first < 2:
            warnings.warn(
                f"start time {t:g} s leaves fewer than 2 segments; skipped",
                stacklevel=2,
            )
            continue
        model, _ = baum_welch(
            iq1[:, first:],
            n_states=2,
            init="kmeans",
            dt_seconds=dt,
            kmeans_seed=cfg.seed,
            n_threads=cfg.n_threads,
        )
        times.append(t)
        priors.append(float(model.priors[1]))
    if len(times) < 3:
        raise InputError("fewer than 3 usable start times; cannot fit the decay")
    x = np.asarray(times)
    y = np.asarray(priors)

    def decay(t, amplitude, t1):
        return amplitude * np.exp(-t / t1)

    popt, pcov = curve_fit(decay, x, y, p0=(1.0, cfg.t1_eff_s), maxfev=10_000)
    perr = np.sqrt(np.diag(pcov))
    sweep = SweepResult(
        x=x,
        series={"excited_start_probability": y},
        errors={},
        metadata={"n_excited_shots": int(idx1.size)},
    )
    summary = {
        "fitted_amplitude": float(popt[0]),
        "fitted_t1_eff_s": float(popt[1]),
        "fitted_t1_stderr_s": float(perr[1]),
        "n_points": int(x.size),
    }
    return sweep, summary


# ---------------------------------------------------------------------------
# named experiments for the CLI
# ---------------------------------------------------------------------------

EXPERIMENT_NAMES = (
    "bootstrap",
    "t1-sweep",
    "fidelity-vs-time",
    "efficiency-curve",
    "priors-start-sweep",
)


def run_experiment(name: str, cfg: ExperimentConfig, out_dir: str | Path) -> dict:
    """Run one named experiment end to end and write its output files.

    Writes config.json (echo), summary.json, and — when the experiment
    produces a sweep — sweep.csv into ``out_dir``.  Returns the summary.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_json(cfg.to_dict(), out / "config.json")

    sweep: SweepResult | None = None
    if name == "bootstrap":
        data = _simulate_default(cfg, key=(_KEY_DATASET, 0))
        summary = run_bootstrap(data, cfg)
    elif name == "t1-sweep":
        sweep, summary = run_t1_sweep(
            cfg.t1_grid_s, cfg.shot_counts["excited"], cfg
        )
    elif name == "fidelity-vs-time":
        data = _simulate_default(cfg, key=(_KEY_DATASET, 1))
        sweep, summary = run_fidelity_vs_time(data, cfg.readout_times_s, cfg)
    elif name == "efficiency-curve":
        data = _simulate_default(cfg, key=(_KEY_DATASET, 2))
        train_idx, test_idx = _train_test_split(data, cfg.train_per_class)
        model, _ = _train_labeled(
            data.iq[train_idx], data.labels[train_idx], cfg.dt_s, cfg.n_threads
        )
        t_hmm = 0.10 * cfg.t1_eff_s
        t_mvg = 0.05 * cfg.t1_eff_s
        k = _segments_for(t_mvg, cfg.dt_s)
        train_windows = data.iq[train_idx][:, :k].mean(axis=1)
        mvg = clf.mvg_train(train_windows, data.labels[train_idx])
        sweep, summary = run_efficiency_curve(
            data.subset(test_idx), model, mvg, cfg.thresholds, t_hmm, t_mvg,
            n_threads=cfg.n_threads,
        )
    elif name == "priors-start-sweep":
        model = cfg.model()
        data = simulate_iq_dataset(
            model,
            0,
            cfg.shot_counts["excited"],
            cfg.n_segments,
            cfg.gamma01_hz,
            seed=cfg.seed,
            key=(_KEY_DATASET, 3),
        )
        sweep, summary = run_priors_start_sweep(data, cfg.start_times_s, cfg)
    else:
        raise InputError(
            f"unknown experiment {name!r}; available: {', '.join(EXPERIMENT_NAMES)}"
        )

    if sweep is not None:
        sweep.to_csv(out / "sweep.csv")
    dump_json(summary, out / "summary.json")
    return summary

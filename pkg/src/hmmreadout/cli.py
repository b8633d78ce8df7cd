"""Command-line front end.

Subcommands: ``simulate`` (config -> dataset CSV), ``train`` (dataset ->
model JSON + iteration log), ``classify`` (model + dataset ->
classification CSV + counts table), ``evaluate`` (classifications ->
metrics report), and ``experiment`` (named harness -> config echo,
sweep CSV, summary JSON).

Exit codes: 0 success, 2 usage, 3 input/schema problems, 4 numerical or
domain failures.  All outputs are written atomically and contain no
timestamps, so rerunning with the same seed reproduces byte-identical
files.
"""

from __future__ import annotations

import argparse
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import classifiers as clf
from .dataset import Dataset
from .errors import DomainError, InputError, NumericalError
from .experiments import EXPERIMENT_NAMES, ExperimentConfig, run_experiment
from .hmm import (
    HmmModel,
    baum_welch,
    initial_model_labeled_means,
    save_model,
)
from .metrics import (
    build_metrics_report,
    confusion_from_labels,
    fit_equal_variance_gaussians,
    project_onto_centroid_axis,
    write_metrics_report,
)
from .signal import simulate_iq_dataset
from .util import dump_json, load_json

__all__ = ["main"]


def _load_config(args) -> ExperimentConfig:
    if getattr(args, "config", None):
        cfg = ExperimentConfig.from_dict(load_json(args.config))
    else:
        cfg = ExperimentConfig()
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "threads", None) is not None:
        overrides["n_threads"] = args.threads
    if getattr(args, "dt", None) is not None:
        overrides["dt_s"] = args.dt
    if overrides:
        cfg = ExperimentConfig.from_dict({**cfg.to_dict(), **overrides})
    return cfg


def _cmd_simulate(args) -> int:
    cfg = _load_config(args)
    data = simulate_iq_dataset(
        cfg.model(),
        cfg.shot_counts["ground"],
        cfg.shot_counts["excited"],
        cfg.n_segments,
        cfg.gamma01_hz,
        seed=cfg.seed,
    )
    out = Path(args.out)
    data.to_csv(out)
    dump_json(cfg.to_dict(), out.with_suffix(".config.json"))
    print(f"wrote {out} ({len(data)} shots x {data.n_segments} segments)")
    return 0


def _cmd_train(args) -> int:
    data = Dataset.from_csv(args.dataset)
    if args.init == "labeled-means":
        if args.n_states != 2:
            raise InputError("labeled-means init supports exactly 2 states")
        init = initial_model_labeled_means(
            data.iq, data.labels, dt_seconds=data.dt_seconds
        )
        model, log = baum_welch(
            data.iq, n_states=2, init=init, n_threads=args.threads
        )
    else:
        model, log = baum_welch(
            data.iq,
            n_states=args.n_states,
            init="kmeans",
            dt_seconds=data.dt_seconds,
            kmeans_seed=args.seed if args.seed is not None else 0,
            n_threads=args.threads,
        )
    out = Path(args.out)
    save_model(model, out)
    dump_json(
        {
            "log_likelihoods": list(log.logliks),
            "converged": log.converged,
            "n_iterations": log.n_iter,
            "variance_clamped": log.variance_clamped,
            "init": args.init,
        },
        out.with_suffix(".log.json"),
    )
    print(
        f"wrote {out} (loglik {log.logliks[-1]:.6g}, "
        f"{log.n_iter} iterations, converged={log.converged})"
    )
    return 0


def _window_classifications(kind, model, data: Dataset, t_int_s):
    k = (
        data.n_segments
        if t_int_s is None
        else int(math.floor(t_int_s / data.dt_seconds + 1e-9))
    )
    if k < 1:
        raise InputError("t_int truncates the shots to zero segments")
    k = min(k, data.n_segments)
    windows = data.iq[:, :k].mean(axis=1)
    if kind == "mvg":
        labels, probs = clf.mvg_classify_batch(model, windows)
    else:
        labels, margins = clf.svm_classify_batch(model, windows)
        probs = np.full(labels.shape, np.nan)
    return [
        clf.ShotClassification(
            assigned_label=int(labels[i]),
            start_probability=float(probs[i]),
            transition_detected=False,
            transition_index=None,
            shot_id=int(data.shot_ids[i]),
            prepared_label=int(data.labels[i]),
        )
        for i in range(len(data))
    ]


def _cmd_classify(args) -> int:
    model = clf.load_classifier(args.model)
    data = Dataset.from_csv(args.dataset)
    if args.t_int is not None:
        k = int(math.floor(args.t_int / data.dt_seconds + 1e-9))
        if k == 1:
            warnings.warn(
                "t_int covers a single segment; start-state decisions "
                "carry very little information"
            )
    if isinstance(model, HmmModel):
        results = clf.classify_shots(
            model, data, t_int_s=args.t_int, n_threads=args.threads
        )
    elif isinstance(model, clf.MvgClassifier):
        results = _window_classifications("mvg", model, data, args.t_int)
    else:
        results = _window_classifications("svm", model, data, args.t_int)
    out = Path(args.out)
    clf.write_classifications(results, out)
    assigned = np.array([r.assigned_label for r in results])
    detected = np.array([r.transition_detected for r in results])
    counts = {
        "n_shots": len(results),
        "assigned": {
            str(lab): int((assigned == lab).sum()) for lab in np.unique(assigned)
        },
        "transition_detected": int(detected.sum()),
    }
    prepared = np.array([-1 if r.prepared_label is None else r.prepared_label for r in results])
    if np.all(prepared >= 0):
        counts["by_prepared"] = {
            str(p): {
                "n": int((prepared == p).sum()),
                "assigned": {
                    str(lab): int(((prepared == p) & (assigned == lab)).sum())
                    for lab in np.unique(assigned)
                },
                "transition_detected": int(detected[prepared == p].sum()),
            }
            for p in np.unique(prepared)
        }
    dump_json(counts, out.with_suffix(".counts.json"))
    print(f"wrote {out} ({len(results)} shots)")
    return 0


def _cmd_evaluate(args) -> int:
    results = clf.read_classifications(args.classifications)
    if any(r.prepared_label is None for r in results):
        raise InputError("evaluation needs prepared labels in the classification file")
    assigned = np.array([r.assigned_label for r in results])
    prepared = np.array([r.prepared_label for r in results])
    cm = confusion_from_labels(assigned, prepared)
    fit = None
    if args.dataset:
        data = Dataset.from_csv(args.dataset)
        k = (
            data.n_segments
            if args.t_int is None
            else int(math.floor(args.t_int / data.dt_seconds + 1e-9))
        )
        if k < 1:
            raise InputError("t_int truncates the shots to zero segments")
        windows = data.iq[:, : min(k, data.n_segments)].mean(axis=1)
        s0, s1, _ = project_onto_centroid_axis(
            windows[data.labels == 0], windows[data.labels == 1]
        )
        fit = fit_equal_variance_gaussians(s0, s1, mode="double")
    report = build_metrics_report(cm, fit)
    write_metrics_report(report, args.out)
    print(
        f"wrote {args.out} (assignment fidelity "
        f"{report['fidelity_assignment']:.6f})"
    )
    return 0


def _cmd_experiment(args) -> int:
    cfg = _load_config(args)
    out = args.out or cfg.output_dir
    if out is None:
        raise InputError("give --out or set output_dir in the config")
    summary = run_experiment(args.name, cfg, out)
    keys = ", ".join(sorted(summary)[:6])
    print(f"wrote {out}/summary.json (keys: {keys}, ...)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hmmreadout",
        description=(
            "Simulate qubit readout IQ records, train hidden-Markov "
            "models on them, classify starting states, and reproduce "
            "the standard fidelity analyses."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a labeled IQ dataset")
    p.add_argument("--config", help="experiment config JSON (defaults if omitted)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--dt", type=float, help="override the segment duration in seconds")
    p.add_argument("--out", required=True, help="output dataset CSV path")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("train", help="train an HMM on a dataset")
    p.add_argument("--dataset", required=True, help="dataset CSV path")
    p.add_argument("--out", required=True, help="output model JSON path")
    p.add_argument("--n-states", type=int, default=2, help="number of hidden states (default 2)")
    p.add_argument(
        "--init",
        choices=("labeled-means", "kmeans"),
        default="labeled-means",
        help="initialization strategy (default labeled-means)",
    )
    p.add_argument("--seed", type=int, help="seed for kmeans initialization (default 0)")
    p.add_argument("--threads", type=int, default=1, help="worker threads (default 1)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("classify", help="classify the shots of a dataset")
    p.add_argument("--model", required=True, help="classifier JSON (hmm, mvg, or svm)")
    p.add_argument("--dataset", required=True, help="dataset CSV path")
    p.add_argument("--out", required=True, help="output classification CSV path")
    p.add_argument("--t-int", type=float, help="integration time in seconds (default: full record)")
    p.add_argument("--threads", type=int, default=1, help="worker threads (default 1)")
    p.set_defaults(func=_cmd_classify)

    p = sub.add_parser("evaluate", help="metrics report from classifications")
    p.add_argument("--classifications", required=True, help="classification CSV path")
    p.add_argument("--out", required=True, help="output report JSON path")
    p.add_argument(
        "--dataset",
        help="dataset CSV: adds a projected double-Gaussian fit and ideal fidelity",
    )
    p.add_argument("--t-int", type=float, help="integration time for the fit window")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("experiment", help="run a named experiment")
    p.add_argument("--name", required=True, choices=EXPERIMENT_NAMES)
    p.add_argument("--config", help="experiment config JSON (defaults if omitted)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--threads", type=int, help="override the config thread count")
    p.add_argument("--out", help="output directory (or set output_dir in the config)")
    p.set_defaults(func=_cmd_experiment)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:  # includes SchemaError
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (DomainError, NumericalError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())

"""Hidden-Markov-model classification of dispersive qubit readout.

The pipeline: simulate or load heterodyned readout records, demodulate
them into per-segment IQ observations, train a Gaussian-emission HMM
with Baum-Welch, classify each shot's starting state from its posterior,
and score everything with assignment/ideal fidelity metrics.  The
``experiments`` module packages the standard validation studies and the
``hmmreadout`` CLI drives it all from the shell.
"""

from .dataset import Dataset, ShotRecord
from .errors import (
    DomainError,
    InputError,
    NumericalError,
    ReadoutError,
    SchemaError,
)
from .hmm import (
    Gaussian2D,
    HmmModel,
    ObservationSequence,
    StatePosterior,
    TrainLog,
    baum_welch,
    extract_excitation_rate,
    extract_t1_eff,
    forward_backward,
    initial_model_kmeans,
    initial_model_labeled_means,
    load_model,
    save_model,
    sequence_loglik,
    two_state_transitions,
    variance_floor,
)
from .classifiers import (
    MvgClassifier,
    ShotClassification,
    SvmClassifier,
    classify_shots,
    hmm_classify,
    load_classifier,
    mvg_classify,
    mvg_train,
    reject_low_probability,
    save_classifier,
    svm_classify,
    svm_train,
)
from .metrics import (
    ConfusionMatrix,
    ProjectedFit,
    assignment_fidelity,
    confusion_from_labels,
    fit_equal_variance_gaussians,
    hmm_filtered_demodulate,
    ideal_fidelity,
    project_onto_centroid_axis,
    total_classification_error,
)
from .signal import (
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
from .experiments import (
    ExperimentConfig,
    SweepResult,
    reference_model,
    run_bootstrap,
    run_efficiency_curve,
    run_experiment,
    run_fidelity_vs_time,
    run_priors_start_sweep,
    run_t1_sweep,
)
from .rng import derive_rng

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "ShotRecord",
    "ReadoutError",
    "InputError",
    "SchemaError",
    "DomainError",
    "NumericalError",
    "Gaussian2D",
    "HmmModel",
    "ObservationSequence",
    "StatePosterior",
    "TrainLog",
    "baum_welch",
    "forward_backward",
    "sequence_loglik",
    "two_state_transitions",
    "initial_model_labeled_means",
    "initial_model_kmeans",
    "extract_t1_eff",
    "extract_excitation_rate",
    "variance_floor",
    "save_model",
    "load_model",
    "ShotClassification",
    "MvgClassifier",
    "SvmClassifier",
    "hmm_classify",
    "classify_shots",
    "mvg_train",
    "mvg_classify",
    "svm_train",
    "svm_classify",
    "reject_low_probability",
    "save_classifier",
    "load_classifier",
    "ConfusionMatrix",
    "ProjectedFit",
    "confusion_from_labels",
    "assignment_fidelity",
    "total_classification_error",
    "ideal_fidelity",
    "project_onto_centroid_axis",
    "fit_equal_variance_gaussians",
    "hmm_filtered_demodulate",
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
    "ExperimentConfig",
    "SweepResult",
    "reference_model",
    "run_bootstrap",
    "run_t1_sweep",
    "run_fidelity_vs_time",
    "run_efficiency_curve",
    "run_priors_start_sweep",
    "run_experiment",
    "derive_rng",
    "__version__",
]

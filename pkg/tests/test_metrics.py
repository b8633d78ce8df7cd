"""Fidelity metrics, axis projection, and the equal-variance fits."""

import json
import math

import numpy as np
import pytest

from hmmreadout.errors import DomainError, InputError
from hmmreadout.hmm import ObservationSequence, StatePosterior
from hmmreadout.metrics import (
    ConfusionMatrix,
    assignment_fidelity,
    bootstrap_fit_std,
    build_metrics_report,
    confusion_from_labels,
    fit_equal_variance_gaussians,
    hmm_filtered_demodulate,
    ideal_fidelity,
    project_onto_centroid_axis,
    total_classification_error,
    write_metrics_report,
)
from oracles import erf_series, overlap_fidelity


# ---------------------------------------------------------------------------
# confusion and fidelity
# ---------------------------------------------------------------------------


def test_confusion_counts_index_assigned_by_prepared():
    cm = confusion_from_labels([0, 0, 1, 1, 0], [0, 1, 1, 0, 0])
    # rows: assigned; columns: prepared
    assert np.array_equal(cm.counts, [[2, 1], [1, 1]])
    assert np.array_equal(cm.column_sums(), [3, 2])
    assert cm.p_assigned_given_prepared(0, 1) == pytest.approx(0.5)


def test_assignment_fidelity_averages_the_two_error_rates():
    cm = ConfusionMatrix(np.array([[900, 20], [100, 980]]))
    # P(1|0) = 100/1000, P(0|1) = 20/1000
    assert assignment_fidelity(cm) == pytest.approx(1.0 - 0.5 * (0.1 + 0.02), abs=1e-15)
    assert assignment_fidelity(cm) + total_classification_error(cm) == 1.0


def test_confusion_validation():
    with pytest.raises(InputError):
        confusion_from_labels([0, 2], [0, 1])
    with pytest.raises(InputError):
        confusion_from_labels([0, 1], [0, -1])
    with pytest.raises(InputError):
        confusion_from_labels([0, 1], [0])
    with pytest.raises(InputError):
        ConfusionMatrix(np.array([[1, 2, 3], [4, 5, 6]]))
    with pytest.raises(InputError):
        ConfusionMatrix(np.array([[1, -2], [0, 3]]))
    cm = ConfusionMatrix(np.array([[5, 0], [0, 0]]))
    with pytest.raises(InputError):
        assignment_fidelity(cm)


def test_ideal_fidelity_is_half_at_zero_separation():
    assert ideal_fidelity(0.0) == 0.5


def test_ideal_fidelity_matches_the_overlap_integral():
    for r in (0.1, 0.5, 1.0, 4.0, 9.0, 22.703401802408333, 25.0):
        assert ideal_fidelity(r) == pytest.approx(overlap_fidelity(r), abs=1e-9)


def test_ideal_fidelity_matches_the_series_expansion():
    for r in (0.01, 0.25, 1.0, 2.0):
        ref = 0.5 * (1.0 + erf_series(math.sqrt(r / 8.0)))
        assert ideal_fidelity(r) == pytest.approx(ref, abs=1e-12)


def test_ideal_fidelity_domain():
    with pytest.raises(DomainError):
        ideal_fidelity(-1e-9)
    with pytest.raises(DomainError):
        ideal_fidelity(math.inf)


# ---------------------------------------------------------------------------
# projection
# ---------------------------------------------------------------------------


def test_projection_measures_from_the_midpoint():
    p0 = np.array([[0.0, 0.0], [0.0, 2.0]])
    p1 = np.array([[2.0, 0.0], [2.0, 2.0]])
    s0, s1, axis = project_onto_centroid_axis(p0, p1)
    assert np.allclose(axis, [1.0, 0.0])
    assert np.allclose(s0, [-1.0, -1.0])
    assert np.allclose(s1, [1.0, 1.0])


def test_projection_follows_a_rotated_separation_axis():
    rng = np.random.default_rng(3)
    d = 4.0
    theta = 0.7
    u = np.array([math.cos(theta), math.sin(theta)])
    p0 = rng.normal(0.0, 1.0, size=(20_000, 2)) - d / 2.0 * u
    p1 = rng.normal(0.0, 1.0, size=(20_000, 2)) + d / 2.0 * u
    s0, s1, axis = project_onto_centroid_axis(p0, p1)
    assert np.hypot(*axis) == pytest.approx(1.0, abs=1e-12)
    assert abs(float(axis @ u)) == pytest.approx(1.0, abs=1e-3)
    assert s0.mean() == pytest.approx(-d / 2.0, abs=0.05)
    assert s1.mean() == pytest.approx(d / 2.0, abs=0.05)
    # projected spread stays at the isotropic sigma
    assert s0.std() == pytest.approx(1.0, abs=0.02)


def test_projection_needs_distinct_centroids():
    pts = np.array([[1.0, 1.0], [3.0, 3.0]])
    with pytest.raises(DomainError):
        project_onto_centroid_axis(pts, pts)
    with pytest.raises(InputError):
        project_onto_centroid_axis(np.empty((0, 2)), pts)


# ---------------------------------------------------------------------------
# equal-variance fits
# ---------------------------------------------------------------------------


def test_single_mode_recovers_plain_sample_moments():
    rng = np.random.default_rng(5)
    n = 20_000
    s0 = rng.normal(-2.0, 1.5, size=n)
    s1 = rng.normal(2.0, 1.5, size=n)
    fit = fit_equal_variance_gaussians(s0, s1, "single")
    se = 1.5 / math.sqrt(n)
    assert fit.mu0 == pytest.approx(-2.0, abs=5 * se)
    assert fit.mu1 == pytest.approx(2.0, abs=5 * se)
    assert fit.sigma == pytest.approx(1.5, rel=0.02)
    assert fit.r_value == fit.r_value_pooled
    assert fit.weights is None
    # closed-form loglik: the density product at the fitted parameters
    def dens(s, m):
        return float(
            np.sum(-0.5 * ((s - m) / fit.sigma) ** 2)
            - s.size * (math.log(fit.sigma) + 0.5 * math.log(2 * math.pi))
        )

    assert fit.fit_log_likelihood == pytest.approx(dens(s0, fit.mu0) + dens(s1, fit.mu1), rel=1e-12)


def test_double_mode_absorbs_cross_contamination():
    rng = np.random.default_rng(7)
    n = 40_000
    flip0 = rng.random(n) < 0.25
    s0 = np.where(flip0, rng.normal(2.0, 1.0, n), rng.normal(-2.0, 1.0, n))
    flip1 = rng.random(n) < 0.05
    s1 = np.where(flip1, rng.normal(-2.0, 1.0, n), rng.normal(2.0, 1.0, n))
    fit = fit_equal_variance_gaussians(s0, s1, "double")
    assert fit.mu0 == pytest.approx(-2.0, abs=0.05)
    assert fit.mu1 == pytest.approx(2.0, abs=0.05)
    assert fit.sigma == pytest.approx(1.0, rel=0.02)
    assert fit.weights[0][0] == pytest.approx(0.75, abs=0.02)
    assert fit.weights[0][1] == pytest.approx(0.25, abs=0.02)
    assert fit.weights[1][1] == pytest.approx(0.95, abs=0.02)
    assert fit.r_value == pytest.approx(16.0, rel=0.02)
    # the plain pooled estimate is inflated by the mixed-in shots
    assert fit.r_value_pooled < fit.r_value
    assert not fit.degenerate_weight


def test_double_em_loglik_is_monotone():
    rng = np.random.default_rng(9)
    for mode in ("double", "double-free"):
        for trial in range(10):
            n = 500
            frac = rng.uniform(0.02, 0.3)
            flip = rng.random(n) < frac
            s0 = np.where(flip, rng.normal(1.5, 0.8, n), rng.normal(-1.5, 0.8, n))
            s1 = rng.normal(1.5, 0.8, size=n)
            fit = fit_equal_variance_gaussians(s0, s1, mode)
            trail = np.asarray(fit.em_logliks)
            assert trail.size >= 1
            diffs = np.diff(trail)
            assert np.all(diffs >= -1e-8 * np.abs(trail[:-1])), (mode, trial)
            assert fit.fit_log_likelihood == trail[-1]


def test_free_means_mode_finds_per_distribution_components():
    rng = np.random.default_rng(11)
    n = 60_000
    flip0 = rng.random(n) < 0.10
    s0 = np.where(flip0, rng.normal(1.5, 1.0, n), rng.normal(-2.0, 1.0, n))
    flip1 = rng.random(n) < 0.15
    s1 = np.where(flip1, rng.normal(-2.5, 1.0, n), rng.normal(2.0, 1.0, n))
    fit = fit_equal_variance_gaussians(s0, s1, "double-free")
    # dominant components
    assert fit.mu0 == pytest.approx(-2.0, abs=0.08)
    assert fit.mu1 == pytest.approx(2.0, abs=0.08)
    # each distribution keeps its own contaminant location
    assert fit.minor_means[0] == pytest.approx(1.5, abs=0.15)
    assert fit.minor_means[1] == pytest.approx(-2.5, abs=0.15)
    assert fit.weights[0][0] == pytest.approx(0.90, abs=0.02)
    assert fit.weights[1][0] == pytest.approx(0.85, abs=0.02)
    assert fit.sigma == pytest.approx(1.0, rel=0.02)
    assert fit.r_value == pytest.approx(16.0, rel=0.03)


def test_identical_samples_fit_to_zero_separation():
    rng = np.random.default_rng(13)
    s = rng.normal(0.0, 1.0, size=1000)
    fit = fit_equal_variance_gaussians(s, s, "single")
    assert fit.r_value == 0.0
    assert fit.mu0 == fit.mu1


def test_fit_preconditions():
    s = np.zeros(20)
    with pytest.raises(InputError):
        fit_equal_variance_gaussians(s, s, "triple")
    with pytest.raises(InputError):
        fit_equal_variance_gaussians(s[:5], s)
    with pytest.raises(InputError):
        fit_equal_variance_gaussians(s, s[:9])


def test_clean_data_keeps_double_mode_honest():
    # without contamination the double fit collapses toward one
    # component per side and must flag the degenerate weight
    rng = np.random.default_rng(15)
    s0 = rng.normal(-3.0, 1.0, size=5000)
    s1 = rng.normal(3.0, 1.0, size=5000)
    fit = fit_equal_variance_gaussians(s0, s1, "double")
    assert fit.weights[0][0] > 0.99
    assert fit.weights[1][1] > 0.99
    assert fit.r_value == pytest.approx(36.0, rel=0.05)


# ---------------------------------------------------------------------------
# bootstrap spread
# ---------------------------------------------------------------------------


def test_bootstrap_spread_scales_like_the_standard_error():
    rng = np.random.default_rng(17)
    n = 4000
    s0 = rng.normal(-1.0, 1.0, size=n)
    s1 = rng.normal(1.0, 1.0, size=n)
    out = bootstrap_fit_std(s0, s1, "single", n_draws=100, seed=0)
    se = 1.0 / math.sqrt(n)
    assert out["mu0"] == pytest.approx(se, rel=0.35)
    assert out["mu1"] == pytest.approx(se, rel=0.35)
    assert 0.0 < out["fidelity"] < 0.05
    assert set(out) == {"mu0", "mu1", "sigma", "r_value", "fidelity"}


def test_bootstrap_is_reproducible_and_checks_draw_count():
    rng = np.random.default_rng(19)
    s0 = rng.normal(-1.0, 1.0, size=200)
    s1 = rng.normal(1.0, 1.0, size=200)
    a = bootstrap_fit_std(s0, s1, n_draws=25, seed=3)
    b = bootstrap_fit_std(s0, s1, n_draws=25, seed=3)
    c = bootstrap_fit_std(s0, s1, n_draws=25, seed=4)
    assert a == b
    assert a != c
    with pytest.raises(InputError):
        bootstrap_fit_std(s0, s1, n_draws=1)


# ---------------------------------------------------------------------------
# posterior-split demodulation
# ---------------------------------------------------------------------------


def _posterior_for_path(path):
    path = np.asarray(path, dtype=np.int64)
    gamma = np.zeros((path.size, 2))
    gamma[np.arange(path.size), path] = 1.0
    transitions = np.nonzero(np.diff(path))[0] + 1
    return StatePosterior(
        gamma=gamma, log_likelihood=0.0, path=path, transition_indices=transitions
    )


def test_steady_shot_averages_to_one_section():
    pts = np.arange(12, dtype=float).reshape(6, 2)
    shot = ObservationSequence(pts, 80e-9)
    sections = hmm_filtered_demodulate(shot, _posterior_for_path([1] * 6))
    assert len(sections) == 1
    state, (i_val, q_val) = sections[0]
    assert state == 1
    assert i_val == pytest.approx(pts[:, 0].mean())
    assert q_val == pytest.approx(pts[:, 1].mean())


def test_decayed_shot_splits_at_the_flip():
    pts = np.array([[2.0, 0.0]] * 3 + [[-2.0, 1.0]] * 5)
    shot = ObservationSequence(pts, 80e-9)
    sections = hmm_filtered_demodulate(shot, _posterior_for_path([1, 1, 1, 0, 0, 0, 0, 0]))
    assert sections == [(1, (2.0, 0.0)), (0, (-2.0, 1.0))]


def test_double_flip_yields_three_sections():
    pts = np.array([[1.0, 0.0]] * 2 + [[-1.0, 0.0]] * 2 + [[1.0, 0.0]] * 2)
    shot = ObservationSequence(pts, 80e-9)
    sections = hmm_filtered_demodulate(shot, _posterior_for_path([1, 1, 0, 0, 1, 1]))
    assert [s for s, _ in sections] == [1, 0, 1]


def test_filtered_demodulation_checks_lengths():
    shot = ObservationSequence(np.zeros((4, 2)), 80e-9)
    with pytest.raises(InputError):
        hmm_filtered_demodulate(shot, _posterior_for_path([0, 0, 0]))


# ---------------------------------------------------------------------------
# report assembly
# ---------------------------------------------------------------------------


def test_metrics_report_carries_the_expected_fields(tmp_path):
    cm = ConfusionMatrix(np.array([[95, 3], [5, 97]]))
    bare = build_metrics_report(cm)
    assert bare["fidelity_assignment"] == pytest.approx(assignment_fidelity(cm))
    assert bare["confusion"] == [[95, 3], [5, 97]]
    assert bare["errors"]["p_assign_0_given_1"] == pytest.approx(0.03)
    assert bare["errors"]["p_assign_1_given_0"] == pytest.approx(0.05)
    assert bare["fidelity_ideal"] is None and bare["fit"] is None

    rng = np.random.default_rng(21)
    fit = fit_equal_variance_gaussians(
        rng.normal(-1, 1, 500), rng.normal(1, 1, 500), "single"
    )
    full = build_metrics_report(cm, fit)
    assert full["fidelity_ideal"] == pytest.approx(ideal_fidelity(fit.r_value))
    assert full["r_value"] == fit.r_value
    assert full["fit"]["sigma"] == fit.sigma

    path = tmp_path / "report.json"
    write_metrics_report(full, path)
    assert json.loads(path.read_text()) == full

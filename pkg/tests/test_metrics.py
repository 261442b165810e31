import numpy as np
import pytest

from ehr_sequence_workbench.metrics import EvalReport, auprc, auroc, bootstrap_ci, brier, evaluate

SWEEP_LABELS = [1, 0, 1, 1, 0, 0]
SWEEP_SCORES = [0.9, 0.8, 0.7, 0.6, 0.5, 0.4]


def test_auroc_counts_correctly_ordered_pairs():
    assert auroc([1, 0, 1, 0], [0.9, 0.8, 0.7, 0.1]) == 0.75
    assert auroc([0, 0, 1, 1], [0.1, 0.4, 0.35, 0.8]) == pytest.approx(0.75)
    assert auroc([0, 1, 0, 1], [0.1, 0.9, 0.2, 0.8]) == 1.0
    assert auroc([1, 0], [0.5, 0.5]) == 0.5


def test_threshold_sweep_oracle():
    assert auroc(SWEEP_LABELS, SWEEP_SCORES) == pytest.approx(7 / 9)
    assert auprc(SWEEP_LABELS, SWEEP_SCORES) == pytest.approx(29 / 36)


def test_auprc_ties_form_one_threshold():
    assert auprc([1, 0], [0.9, 0.1]) == 1.0
    assert auprc([1, 0], [0.5, 0.5]) == 0.5


def test_random_scores_give_prevalence_auprc():
    rng = np.random.default_rng(0)
    labels = (rng.random(10_000) < 0.3).astype(int)
    assert auprc(labels, rng.random(10_000)) == pytest.approx(labels.mean(), abs=0.03)
    assert auroc(labels, rng.random(10_000)) == pytest.approx(0.5, abs=0.03)


def test_brier_score():
    assert brier([0, 1], [0.5, 0.5]) == 0.25
    assert brier([1, 0, 1], [1.0, 0.0, 1.0]) == 0.0
    with pytest.raises(ValueError, match="probabilities"):
        brier([1], [1.5])


def test_single_class_inputs_are_rejected():
    with pytest.raises(ValueError, match="both classes"):
        auroc([1, 1], [0.2, 0.3])
    with pytest.raises(ValueError, match="positive"):
        auprc([0, 0], [0.2, 0.3])
    with pytest.raises(ValueError, match="0/1"):
        auroc([0, 2], [0.2, 0.3])


def test_bootstrap_is_deterministic_and_brackets_point():
    rng = np.random.default_rng(1)
    labels = (rng.random(300) < 0.4).astype(int)
    scores = labels * 0.3 + rng.random(300)
    first = bootstrap_ci(auroc, labels, scores, iters=200, seed=5)
    assert first == bootstrap_ci(auroc, labels, scores, iters=200, seed=5)
    assert first != bootstrap_ci(auroc, labels, scores, iters=200, seed=6)
    assert first[0] <= auroc(labels, scores) <= first[1]
    with pytest.raises(ValueError, match="level"):
        bootstrap_ci(auroc, labels, scores, level=1.0)


def test_bootstrap_redraws_single_class_resamples():
    lo, hi = bootstrap_ci(auroc, [1, 0, 0, 0, 0], [0.9, 0.1, 0.2, 0.3, 0.4], iters=50, seed=0)
    assert 0.0 <= lo <= hi <= 1.0


def test_evaluate_report_row(tmp_path):
    report = evaluate(SWEEP_LABELS * 5, SWEEP_SCORES * 5, iters=100, seed=3)
    row = report.to_row()
    assert row["n"] == 30 and row["n_positive"] == 15
    assert set(row) == {"n", "n_positive"} | {f"{m}{s}" for m in ("auprc", "auroc", "brier") for s in ("", "_lo", "_hi")}
    assert row["auroc_lo"] <= row["auroc"] <= row["auroc_hi"]
    assert EvalReport.from_dict(report.to_dict()) == report


def test_auroc_flips_with_negated_scores():
    rng = np.random.default_rng(2)
    labels = (rng.random(500) < 0.3).astype(int)
    scores = np.round(labels * 0.2 + rng.random(500), 2)
    assert auroc(labels, scores) + auroc(labels, -scores) == pytest.approx(1.0)


def test_metrics_ignore_monotone_rescaling():
    rng = np.random.default_rng(3)
    labels = (rng.random(400) < 0.25).astype(int)
    scores = labels * 0.5 + rng.random(400)
    for transformed in (np.exp(scores), 3.0 * scores + 1.0):
        assert auroc(labels, transformed) == pytest.approx(auroc(labels, scores))
        assert auprc(labels, transformed) == pytest.approx(auprc(labels, scores))


def test_bootstrap_width_shrinks_with_sample_size():
    rng = np.random.default_rng(4)
    widths = []
    for n in (400, 1600):
        labels = (rng.random(n) < 0.4).astype(int)
        scores = labels * 0.5 + rng.random(n)
        lo, hi = bootstrap_ci(auroc, labels, scores, iters=400, seed=0)
        widths.append(hi - lo)
    assert 1.4 <= widths[0] / widths[1] <= 2.8


def test_constant_metric_gives_degenerate_interval():
    lo, hi = bootstrap_ci(lambda y, s: 0.42, [1, 0, 1, 0], [0.1, 0.2, 0.3, 0.4], iters=30, seed=0)
    assert lo == hi == pytest.approx(0.42)

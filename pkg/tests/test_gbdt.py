import numpy as np
import pytest

from ehr_sequence_workbench.gbdt import (
    GbdtConfig, GbdtModel, build_tree, featurize, fit, predict_proba, to_matrix, tree_predict,
)
from ehr_sequence_workbench.vocabulary import N_SPECIALS


def test_separable_points_are_split():
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    y = np.array([0, 0, 1, 1])
    model = fit(X, y, GbdtConfig(n_trees=10, max_depth=2, min_child_weight=0.0))
    p = predict_proba(model, X)
    assert np.all(p[:2] < 0.5) and np.all(p[2:] > 0.5)
    assert model.trees[0][0]["threshold"] == 1.5


def test_constant_column_never_splits():
    X = np.ones((20, 1))
    g = np.linspace(-1.0, 1.0, 20)
    nodes = build_tree(X, g, np.full(20, 0.25), GbdtConfig(min_child_weight=0.0))
    assert nodes == [{"leaf": pytest.approx(-g.sum() / (5.0 + 1.0))}]


def test_ties_go_right_of_threshold():
    nodes = [{"feature": 0, "threshold": 1.5, "left": 1, "right": 2}, {"leaf": -1.0}, {"leaf": 1.0}]
    np.testing.assert_array_equal(tree_predict(nodes, np.array([[1.0], [1.5], [2.0]])), [-1.0, 1.0, 1.0])


def test_column_permutation_leaves_predictions_unchanged():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(80, 5))
    y = (X[:, 1] + 0.5 * X[:, 3] + 0.3 * rng.normal(size=80) > 0).astype(int)
    cfg = GbdtConfig(n_trees=15, max_depth=3)
    perm = np.array([3, 0, 4, 1, 2])
    direct = predict_proba(fit(X, y, cfg), X)
    permuted = predict_proba(fit(X[:, perm], y, cfg), X[:, perm])
    np.testing.assert_allclose(direct, permuted, rtol=1e-12)


def test_model_file_preserves_predictions(tmp_path):
    rng = np.random.default_rng(1)
    X = rng.poisson(1.0, size=(40, 6)).astype(float)
    y = (X[:, 0] > 1).astype(int)
    model = fit(X, y, GbdtConfig(n_trees=5))
    loaded = GbdtModel.load(model.save(tmp_path / "gbdt.json"))
    np.testing.assert_array_equal(predict_proba(loaded, X), predict_proba(model, X))
    with pytest.raises(FileNotFoundError):
        GbdtModel.load(tmp_path / "absent.json")


def test_invalid_fits_are_rejected():
    with pytest.raises(ValueError, match="both classes"):
        fit(np.zeros((3, 2)), np.zeros(3))
    model = fit(np.array([[0.0], [1.0]]), np.array([0, 1]), GbdtConfig(n_trees=1))
    with pytest.raises(ValueError, match="expected 1 features"):
        predict_proba(model, np.zeros((2, 3)))
    with pytest.raises(ValueError):
        GbdtConfig(max_depth=0)


def test_features_count_concepts_only(small_sequences, small_vocab):
    seq = small_sequences[0]
    vec = featurize(seq, small_vocab)
    assert vec.label == seq.label
    assert all(idx >= N_SPECIALS for idx in vec.counts)
    concepts = seq.concept_ids[seq.mask]
    assert sum(vec.counts.values()) == int(np.sum(concepts >= N_SPECIALS))
    X = to_matrix([vec], len(small_vocab))
    assert X.shape == (1, len(small_vocab)) and X[0, :N_SPECIALS].sum() == 0


def test_features_ignore_token_order(small_sequences, small_vocab):
    seq = small_sequences[0]
    shuffled = seq.concept_ids.copy()
    L = seq.length
    shuffled[:L] = shuffled[:L][::-1]
    reordered = type(seq)(**{**seq.__dict__, "concept_ids": shuffled})
    assert featurize(reordered, small_vocab).counts == featurize(seq, small_vocab).counts


def test_record_features_match_tokenized_sequence(eligible_cohort, small_vocab, small_sequences):
    from_record = featurize(eligible_cohort[0], small_vocab, C=32)
    assert from_record.counts == featurize(small_sequences[0], small_vocab).counts

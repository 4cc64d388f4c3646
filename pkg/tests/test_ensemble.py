from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from datasoups.ensemble import (Metrics, PredictionMatrix, TtaConfig, display, evaluate, identity_tta,
                                predict_scores, soup, softmax_np, tta_variants)
from datasoups.model import ModelConfig, build_model

from oracles import mean_oracle

SMALL = ModelConfig(input_size=16, patch=4, window=2, embed_dim=8, depths=[2], heads=[2])


def random_probs(rng, n=6, k=7):
    return softmax_np(rng.normal(size=(n, k)) * 3)


def test_view_count_default_and_variants():
    img = np.random.default_rng(0).random((16, 16, 3))
    cfg = TtaConfig()
    views = tta_variants(img, cfg, np.random.default_rng(0))
    assert len(views) == cfg.n_views == 8
    assert all(v.shape == (16, 16, 3) for v in views)
    np.testing.assert_array_equal(views[0], img)
    np.testing.assert_array_equal(views[1], img[:, ::-1])
    assert len(tta_variants(img, TtaConfig(flip=False, n_crops=0), None)) == 3
    assert len(tta_variants(img, identity_tta(), None)) == 1


def test_tta_config_validation():
    with pytest.raises(ValueError):
        TtaConfig(scales=[1.1]).validate()
    with pytest.raises(ValueError):
        TtaConfig(crop_ratio_range=(1.2, 0.8)).validate()
    with pytest.raises(ValueError):
        TtaConfig(n_crops=-1).validate()


def test_identity_tta_equals_plain_softmax():
    model = build_model(SMALL, seed=0, dtype=np.float64)
    rng = np.random.default_rng(1)
    imgs = rng.random((5, 16, 16, 3))
    ids = [f"x{i}" for i in range(5)]
    pred = predict_scores(model, imgs, ids, identity_tta(), chunk=2)
    from datasoups.augment import normalize
    ref = softmax_np(model(normalize(imgs)).data)
    np.testing.assert_allclose(pred.scores, ref, atol=1e-12)
    pred.check_rows()


def test_tta_prediction_is_seeded():
    model = build_model(SMALL, seed=0)
    imgs = np.random.default_rng(2).random((3, 16, 16, 3)).astype(np.float32)
    ids = ["a", "b", "c"]
    a = predict_scores(model, imgs, ids, TtaConfig(), seed=4)
    b = predict_scores(model, imgs, ids, TtaConfig(), seed=4)
    np.testing.assert_array_equal(a.scores, b.scores)


def test_prediction_matrix_sorts_and_rejects_duplicates():
    m = PredictionMatrix(["b", "a"], np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert m.sample_ids == ["a", "b"]
    np.testing.assert_array_equal(m.scores, [[1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(ValueError):
        PredictionMatrix(["a", "a"], np.zeros((2, 2)))
    with pytest.raises(ValueError):
        PredictionMatrix(["a"], np.zeros((2, 2)))


def test_soup_matches_fsum_oracle():
    rng = np.random.default_rng(3)
    ids = [f"s{i}" for i in range(6)]
    mats = [PredictionMatrix(ids, random_probs(rng)) for _ in range(5)]
    np.testing.assert_allclose(soup(mats).scores, mean_oracle([m.scores for m in mats]), atol=1e-15)
    soup(mats).check_rows()


@settings(max_examples=50, deadline=None)
@given(st.permutations(range(5)), st.integers(0, 2 ** 32 - 1))
def test_soup_is_order_invariant(perm, seed):
    rng = np.random.default_rng(seed)
    ids = [f"s{i}" for i in range(4)]
    mats = [PredictionMatrix(ids, random_probs(rng, n=4)) for _ in range(5)]
    for space in ("prob", "log"):
        a = soup(mats, space).scores
        b = soup([mats[i] for i in perm], space).scores
        np.testing.assert_array_equal(a, b)


def test_soup_of_one_is_identity_and_log_space_normalises():
    rng = np.random.default_rng(4)
    m = PredictionMatrix(["a", "b"], random_probs(rng, n=2))
    np.testing.assert_array_equal(soup([m]).scores, m.scores)
    out = soup([m, PredictionMatrix(["a", "b"], random_probs(rng, n=2))], space="log")
    np.testing.assert_allclose(out.scores.sum(1), 1.0)
    with pytest.raises(ValueError):
        soup([m], space="median")
    with pytest.raises(ValueError):
        soup([m, PredictionMatrix(["a", "c"], m.scores)])
    with pytest.raises(ValueError):
        soup([])


def test_metric_fixture_exact_mean():
    m = Metrics(949, 1000, 919, 1000)
    assert m.acc_A == Fraction(949, 10) and m.acc_B == Fraction(919, 10)
    assert m.mAcc == Fraction(934, 10)
    assert m.row()["mAcc"] == "93.4"


def test_metric_fixture_half_up_display():
    m = Metrics(159, 200, 168, 200)
    assert m.mAcc == Fraction(8175, 100)
    assert m.row()["mAcc"] == "81.8"
    assert m.row()["mAcc_exact"] == "327/4"
    assert display(Fraction(1, 8), 2) == "0.13"
    assert display(0.25, 1) == "0.3"


def test_evaluate_counts_and_tie_rule():
    ids = ["a1", "a2", "b1"]
    scores = np.array([[0.5, 0.5, 0, 0, 0, 0, 0], [0, 1, 0, 0, 0, 0, 0], [0, 0, 1, 0, 0, 0, 0]], float)
    pred = PredictionMatrix(ids, scores)
    m = evaluate(pred, {"a1": 0, "a2": 0, "b1": 2}, {"a1": "A", "a2": "A", "b1": "B"})
    assert (m.correct_A, m.total_A, m.correct_B, m.total_B) == (1, 2, 1, 1)
    with pytest.raises(KeyError):
        evaluate(pred, {"a1": 0}, {"a1": "A"})


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_evaluate_ignores_row_order(seed):
    rng = np.random.default_rng(seed)
    n = 12
    ids = [f"s{i:02d}" for i in range(n)]
    scores = random_probs(rng, n=n)
    labels = {s: int(rng.integers(0, 7)) for s in ids}
    subset_of = {s: "AB"[i % 2] for i, s in enumerate(ids)}
    perm = rng.permutation(n)
    a = evaluate(PredictionMatrix(ids, scores), labels, subset_of)
    b = evaluate(PredictionMatrix([ids[i] for i in perm], scores[perm]), labels, subset_of)
    assert a == b


def test_missing_subset_gives_no_mean():
    m = Metrics(3, 4, 0, 0)
    assert m.acc_B is None and m.mAcc is None
    assert m.row()["mAcc"] == ""

import numpy as np
import pytest

from datasoups import analysis as An
from datasoups.io import CLASS_NAMES, Manifest, Sample, read_csv
from datasoups.model import ModelConfig, build_model
from datasoups.synth import SynthConfig, render

from oracles import perceptron_separable


def three_clusters(n=50, d=10, seed=0):
    rng = np.random.default_rng(seed)
    centres = np.zeros((3, d))
    centres[1, 0] = centres[2, 1] = 10.0
    X = np.concatenate([rng.normal(c, 1.0, (n, d)) for c in centres])
    return X, np.repeat(np.arange(3), n)


@pytest.fixture(scope="module")
def cluster_run():
    X, y = three_clusters()
    res = An.tsne(X, An.TsneConfig(perplexity=30, iters=1000, seed=0))
    return X, y, res


def test_tsne_reduces_kl_and_separates_clusters(cluster_run):
    _, y, res = cluster_run
    assert res.kl_final < 0.5 * res.kl_initial
    for a in range(3):
        for b in range(a + 1, 3):
            assert perceptron_separable(res.coords[y == a], res.coords[y == b])


def test_entropies_hit_the_perplexity_target(cluster_run):
    _, _, res = cluster_run
    np.testing.assert_allclose(res.entropies, np.log(30.0), atol=1e-5, rtol=0)


def test_joint_probabilities_are_symmetric_and_normalised(cluster_run):
    _, _, res = cluster_run
    assert res.P.sum() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_array_equal(res.P, res.P.T)
    assert (np.diag(res.P) == 0).all()
    np.testing.assert_allclose(res.P_conditional.sum(1), 1.0, atol=1e-12)


def test_output_is_centred_and_history_is_recorded(cluster_run):
    _, _, res = cluster_run
    np.testing.assert_allclose(res.coords.mean(0), 0.0, atol=1e-9)
    assert res.kl_history[0] == (0, res.kl_initial)
    assert res.kl_history[-1] == (1000, res.kl_final)


def test_tsne_is_deterministic():
    X, _ = three_clusters(n=12, d=4, seed=1)
    cfg = An.TsneConfig(perplexity=5, iters=300, seed=7)
    np.testing.assert_array_equal(An.tsne(X, cfg).coords, An.tsne(X, cfg).coords)


def test_tsne_input_limits():
    with pytest.raises(ValueError):
        An.tsne(np.zeros((5, 3)))
    with pytest.raises(ValueError):
        An.TsneConfig(perplexity=1).validate()
    with pytest.raises(ValueError):
        An.TsneConfig(iters=100).validate()


def test_perplexity_is_clamped_for_small_inputs():
    X, _ = three_clusters(n=5, d=3)
    res = An.tsne(X, An.TsneConfig(perplexity=30, iters=250))
    assert res.perplexity == pytest.approx(14 / 3)


def test_duplicate_points_survive():
    X, _ = three_clusters(n=6, d=3)
    X[1] = X[0]
    P, _, _ = An.joint_probabilities(X, 4.0, rng=np.random.default_rng(0))
    assert np.isfinite(P).all()


def test_pairwise_sq_dists_matches_loops():
    X = np.random.default_rng(2).normal(size=(6, 4))
    D = An.pairwise_sq_dists(X)
    for i in range(6):
        for j in range(6):
            assert D[i, j] == pytest.approx(((X[i] - X[j]) ** 2).sum(), abs=1e-12)


# -- encoders ---------------------------------------------------------------

def test_histogram_encoder_on_constant_image():
    enc = An.HistogramEncoder()
    f = enc(np.full((16, 16, 3), 0.5))
    assert f.shape == (enc.dim,) == (56,)
    assert f[8] == 1.0 and f[16 + 8] == 1.0 and f[32 + 8] == 1.0
    assert f[:48].sum() == pytest.approx(3.0)
    assert (f[48:] == 0).all()


def test_histogram_encoder_rejects_grey_images():
    with pytest.raises(ValueError):
        An.HistogramEncoder()(np.zeros((8, 8)))


def test_swinlet_encoder_dimension():
    model = build_model(ModelConfig(input_size=16, patch=4, window=2, embed_dim=8, depths=[1, 1], heads=[1, 2]))
    enc = An.SwinletEncoder(model)
    emb = An.extract_features(enc, np.random.default_rng(0).random((3, 16, 16, 3)), ["a", "b", "c"], batch=2)
    assert emb.features.shape == (3, 16) == (3, enc.dim)


def test_embedding_set_validation():
    with pytest.raises(ValueError):
        An.EmbeddingSet(np.zeros((3, 1)), ["a", "b", "c"], [{}] * 3)
    with pytest.raises(ValueError):
        An.EmbeddingSet(np.full((2, 2), np.nan), ["a", "b"], [{}] * 2)


# -- overlap and histograms ------------------------------------------------------

def synth_features(shift, seed=0):
    cfg = SynthConfig(subset_shift=shift, seed=seed)
    rng = np.random.default_rng(seed)
    enc = An.HistogramEncoder()
    feats, tags = [], []
    for s in "AB":
        for c in range(7):
            for _ in range(12):
                feats.append(enc(render(cfg, s, c, rng)))
                tags.append(s)
    return np.array(feats), tags


def test_overlap_tracks_subset_shift():
    same = An.overlap_score(*synth_features(0.0))
    far = An.overlap_score(*synth_features(4.0))
    assert same >= 0.6
    assert far < 0.2


def test_overlap_extremes_by_construction():
    rng = np.random.default_rng(3)
    a = rng.normal(0, 1, (30, 3))
    b = rng.normal(50, 1, (30, 3))
    assert An.overlap_score(np.vstack([a, b]), ["A"] * 30 + ["B"] * 30) == 0.0
    with pytest.raises(ValueError):
        An.overlap_score(a, ["A"] * 30)


def table2_manifest():
    rows = []
    for s in "AB":
        for c in range(7):
            for i in range(180 if c == 6 else 192):
                rows.append(Sample(f"{s}{c}_{i}", "x.ppm", s, c, "train"))
    return Manifest(rows)


def test_class_histogram_fixture(tmp_path):
    table = An.class_histogram(table2_manifest())
    assert table == {"A": [192] * 6 + [180], "B": [192] * 6 + [180]}
    assert An.class_histogram(table2_manifest(), split="test") == {"A": [0] * 7, "B": [0] * 7}
    An.write_class_histogram(table, tmp_path / "h.csv")
    rows = read_csv(tmp_path / "h.csv", ["subset"] + list(CLASS_NAMES))
    assert rows[0]["subset"] == "WW2020" and rows[1]["NPKCa+m+s"] == "180"


def test_writers(tmp_path):
    coords = np.random.default_rng(4).normal(size=(3, 2))
    emb = An.EmbeddingSet(np.ones((3, 2)), ["a", "b", "c"],
                          [{"subset": "A", "split": "train", "class": 0}] * 3)
    An.write_tsne_csv(coords, emb, tmp_path / "t.csv")
    rows = read_csv(tmp_path / "t.csv", ["sample_id", "x", "y", "subset", "split", "class"])
    assert float(rows[1]["y"]) == pytest.approx(coords[1, 1], rel=1e-8)
    An.write_tsne_svg(coords, ["A", "B", "A"], tmp_path / "t.svg", title="t")
    text = (tmp_path / "t.svg").read_text()
    assert text.startswith("<svg") and text.count("<circle") == 3

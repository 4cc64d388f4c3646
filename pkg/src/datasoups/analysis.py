"""Distribution analysis: feature encoders, exact t-SNE, class histograms and
a k-NN overlap score between two tagged groups."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from . import tensor as T
from .augment import IMAGENET_MEAN, IMAGENET_STD, normalize
from .io import CLASS_NAMES, SUBSETS, write_csv

log = logging.getLogger(__name__)


# -- encoders -------------------------------------------------------------

class HistogramEncoder:
    """16-bin histogram per channel plus 8 radial power-spectrum bands (D=56)."""

    bins = 16
    bands = 8
    dim = 3 * 16 + 8

    def __call__(self, img):
        img = np.asarray(img, dtype=np.float64)
        if img.ndim != 3 or img.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) image, got {img.shape}")
        n = img.shape[0] * img.shape[1]
        idx = np.minimum((img * self.bins).astype(np.int64), self.bins - 1)
        hists = [np.bincount(idx[..., c].ravel(), minlength=self.bins) / n for c in range(3)]
        gray = img @ np.array([0.299, 0.587, 0.114])
        power = np.abs(np.fft.fft2(gray - gray.mean())) ** 2
        fy = np.fft.fftfreq(gray.shape[0])[:, None]
        fx = np.fft.fftfreq(gray.shape[1])[None, :]
        radius = np.sqrt(fx * fx + fy * fy) / (math.sqrt(2) * 0.5)
        band = np.minimum((radius * self.bands).astype(np.int64), self.bands - 1)
        bp = np.bincount(band.ravel(), weights=power.ravel(), minlength=self.bands)
        total = bp.sum()
        bp = bp / total if total > 0 else np.zeros(self.bands)
        return np.concatenate(hists + [bp])


class SwinletEncoder:
    """Pooled penultimate features of a trained classifier."""

    def __init__(self, model, mean=IMAGENET_MEAN, std=IMAGENET_STD):
        self.model = model
        self.mean, self.std = mean, std
        self.dim = model.cfg.embed_dim * 2 ** (len(model.cfg.depths) - 1)

    def batch(self, images):
        with T.no_grad():
            x = normalize(np.asarray(images), self.mean, self.std).astype(self.model.params["head.weight"].dtype)
            return self.model.features(x).data.astype(np.float64)

    def __call__(self, img):
        return self.batch(np.asarray(img)[None])[0]


@dataclass
class EmbeddingSet:
    features: np.ndarray
    sample_ids: list
    tags: list  # dicts with subset / split / class

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[1] < 2:
            raise ValueError("features must be N x D with D >= 2")
        if not np.isfinite(self.features).all():
            raise ValueError("features must be finite")

    def tag(self, key):
        return [t[key] for t in self.tags]


def extract_features(encoder, images, sample_ids, tags=None, batch=64):
    if hasattr(encoder, "batch"):
        feats = [encoder.batch(images[i:i + batch]) for i in range(0, len(images), batch)]
        feats = np.concatenate(feats) if feats else np.zeros((0, encoder.dim))
    else:
        feats = np.stack([encoder(im) for im in images]) if len(images) else np.zeros((0, encoder.dim))
    if feats.shape[1] != encoder.dim:
        raise ValueError(f"encoder declared D={encoder.dim}, produced {feats.shape[1]}")
    return EmbeddingSet(feats, list(sample_ids), list(tags) if tags is not None else [{} for _ in sample_ids])


# -- t-SNE ----------------------------------------------------------------

@dataclass
class TsneConfig:
    perplexity: float = 30.0
    iters: int = 1000
    early_exaggeration: float = 12.0
    exaggeration_iters: int = 250
    learning_rate: float = 200.0
    momentum: float = 0.5
    final_momentum: float = 0.8
    momentum_switch: int = 250
    dim: int = 2
    seed: int = 0
    tol: float = 1e-5
    max_bisections: int = 50
    log_every: int = 50

    def validate(self):
        if self.perplexity < 2:
            raise ValueError("perplexity must be >= 2")
        if self.iters < 250:
            raise ValueError("iters must be >= 250")
        return self


@dataclass
class TsneResult:
    coords: np.ndarray
    kl_initial: float
    kl_final: float
    kl_history: list = field(default_factory=list)
    entropies: np.ndarray = None
    perplexity: float = 0.0
    P: np.ndarray = None
    P_conditional: np.ndarray = None


def pairwise_sq_dists(X):
    sq = (X * X).sum(1)
    d = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
    np.fill_diagonal(d, 0.0)
    return np.maximum(d, 0.0)


def joint_probabilities(X, perplexity, tol=1e-5, max_iter=50, rng=None):
    """Symmetrised affinities P plus the conditional rows and their entropies."""
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    D = pairwise_sq_dists(X)
    off = D + np.eye(n)
    if (off == 0).any():
        log.warning("t-SNE: duplicate points found; applying 1e-10 jitter")
        rng = rng or np.random.default_rng(0)
        X = X + 1e-10 * rng.standard_normal(X.shape)
        D = pairwise_sq_dists(X)
    Pc, _, ent, steps = kernels.perplexity_search(D, perplexity, tol, max_iter)
    bad = np.abs(ent - math.log(perplexity)) > tol
    if bad.any():
        log.warning("t-SNE: %d points missed the perplexity target", int(bad.sum()))
    P = (Pc + Pc.T) / (2.0 * n)
    return P, Pc, ent


def tsne(X, cfg: TsneConfig = None):
    """Exact t-SNE embedding of the rows of X."""
    cfg = (cfg or TsneConfig()).validate()
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if n < 10:
        raise ValueError("t-SNE needs at least 10 points")
    if n > 5000:
        raise ValueError("exact t-SNE is limited to 5000 points")
    perp = min(cfg.perplexity, (n - 1) / 3.0)
    rng = np.random.default_rng(cfg.seed)
    P, Pc, ent = joint_probabilities(X, perp, cfg.tol, cfg.max_bisections, rng)

    Y = rng.normal(0.0, 1e-4, (n, cfg.dim))
    update = np.zeros_like(Y)
    gains = np.ones_like(Y)
    _, kl0 = kernels.tsne_grad(P, Y, 1.0)
    history = [(0, kl0)]
    kl = kl0
    for it in range(cfg.iters):
        exag = cfg.early_exaggeration if it < cfg.exaggeration_iters else 1.0
        mom = cfg.momentum if it < cfg.momentum_switch else cfg.final_momentum
        grad, kl = kernels.tsne_grad(P, Y, exag)
        same = (grad > 0) == (update > 0)
        gains = np.where(same, gains * 0.8, gains + 0.2)
        np.maximum(gains, 0.01, out=gains)
        update = mom * update - cfg.learning_rate * gains * grad
        Y = Y + update
        Y = Y - Y.mean(axis=0)
        if (it + 1) % cfg.log_every == 0:
            history.append((it + 1, kl))
    _, kl = kernels.tsne_grad(P, Y, 1.0)
    history.append((cfg.iters, kl))
    Y = Y - Y.mean(axis=0)
    return TsneResult(Y, kl0, kl, history, ent, perp, P, Pc)


# -- tables and scores ----------------------------------------------------

def class_histogram(manifest, split=None):
    """{subset: [count per class]} over the manifest (optionally one split)."""
    table = {s: [0] * len(CLASS_NAMES) for s in SUBSETS}
    for r in manifest:
        if split is None or r.split == split:
            table[r.subset][r.class_id] += 1
    return table


def write_class_histogram(table, path):
    from .io import SUBSET_NAMES
    rows = [[SUBSET_NAMES[s]] + table[s] for s in SUBSETS]
    write_csv(path, ["subset"] + list(CLASS_NAMES), rows)


def overlap_score(features, tags, k=5):
    """2 * (1 - max(balanced LOO k-NN accuracy, 0.5)): 1 = inseparable, 0 = disjoint."""
    X = np.asarray(features, dtype=np.float64)
    tags = np.asarray(tags)
    values = sorted(set(tags.tolist()))
    if len(values) != 2:
        raise ValueError(f"overlap_score needs exactly two tag values, got {values}")
    y = (tags == values[1]).astype(np.int64)
    D = pairwise_sq_dists(X)
    np.fill_diagonal(D, np.inf)
    # stable sort: equal distances resolve to the smaller index
    nn = np.argsort(D, axis=1, kind="stable")[:, :k]
    votes = y[nn].sum(axis=1)
    pred = (votes * 2 > k).astype(np.int64)
    recalls = [(pred[y == c] == c).mean() for c in (0, 1)]
    bal = float(np.mean(recalls))
    return 2.0 * (1.0 - max(bal, 0.5))


_PALETTE = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2"]


def write_tsne_svg(coords, labels, path, size=480, title=""):
    """Scatter plot coloured by label."""
    coords = np.asarray(coords, dtype=np.float64)
    values = sorted(set(labels))
    colour = {v: _PALETTE[i % len(_PALETTE)] for i, v in enumerate(values)}
    lo = coords.min(axis=0)
    span = np.maximum(coords.max(axis=0) - lo, 1e-12)
    pad = 20
    xy = pad + (coords - lo) / span * (size - 2 * pad)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
             f'viewBox="0 0 {size} {size}">',
             f'<rect width="{size}" height="{size}" fill="white"/>']
    if title:
        parts.append(f'<text x="{pad}" y="14" font-size="12">{title}</text>')
    for (x, y), lab in zip(xy, labels):
        parts.append(f'<circle cx="{x:.2f}" cy="{size - y:.2f}" r="2.5" fill="{colour[lab]}" fill-opacity="0.7"/>')
    for i, v in enumerate(values):
        parts.append(f'<text x="{size - 110}" y="{16 + 14 * i}" font-size="11" fill="{colour[v]}">{v}</text>')
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")


def write_tsne_csv(coords, emb: EmbeddingSet, path):
    rows = [[sid, f"{x:.9g}", f"{y:.9g}", t.get("subset", ""), t.get("split", ""), t.get("class", "")]
            for sid, (x, y), t in zip(emb.sample_ids, coords[:, :2], emb.tags)]
    write_csv(path, ["sample_id", "x", "y", "subset", "split", "class"], rows)

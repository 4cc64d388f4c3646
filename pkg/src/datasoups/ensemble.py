"""Test-time augmentation, prediction-matrix averaging ("data soups") and
subset accuracy / mAcc."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction

import numpy as np

from . import kernels
from . import tensor as T
from .augment import IMAGENET_MEAN, IMAGENET_STD, horizontal_flip, normalize, resize, resized_crop
from .seeding import derive_rng


@dataclass
class TtaConfig:
    scales: list = field(default_factory=lambda: [1.0, 1.125, 1.25])
    flip: bool = True
    n_crops: int = 2
    crop_ratio_range: tuple = (0.6, 1.4)
    crop_flip_prob: float = 0.5

    def validate(self):
        if not self.scales or min(self.scales) <= 0:
            raise ValueError("scales must be positive")
        if 1.0 not in self.scales:
            raise ValueError("scales must include 1.0")
        lo, hi = self.crop_ratio_range
        if not 0 < lo <= hi:
            raise ValueError("crop_ratio_range must be ordered and positive")
        if self.n_crops < 0:
            raise ValueError("n_crops must be >= 0")
        return self

    @property
    def n_views(self):
        return len(self.scales) * (2 if self.flip else 1) + self.n_crops


def identity_tta():
    return TtaConfig(scales=[1.0], flip=False, n_crops=0)


@dataclass
class PredictionMatrix:
    sample_ids: list
    scores: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.shape[0] != len(self.sample_ids):
            raise ValueError("scores and sample_ids are not aligned")
        if len(set(self.sample_ids)) != len(self.sample_ids):
            raise ValueError("duplicate sample ids")
        order = np.argsort(np.asarray(self.sample_ids, dtype=object), kind="stable")
        if (order != np.arange(len(order))).any():
            self.sample_ids = [self.sample_ids[i] for i in order]
            self.scores = self.scores[order]

    def check_rows(self, tol=1e-5):
        sums = self.scores.sum(axis=1)
        if len(sums) and np.abs(sums - 1.0).max() > tol:
            raise ValueError(f"rows do not sum to 1 (max dev {np.abs(sums - 1).max():.2e})")
        return self

    def restrict(self, ids):
        keep = set(ids)
        idx = [i for i, s in enumerate(self.sample_ids) if s in keep]
        return PredictionMatrix([self.sample_ids[i] for i in idx], self.scores[idx])

    @staticmethod
    def concat(mats):
        ids = [s for m in mats for s in m.sample_ids]
        return PredictionMatrix(ids, np.concatenate([m.scores for m in mats]))


def _scale_view(img, s, size):
    h, w = img.shape[:2]
    if s == 1.0:
        return img if (h == size and w == size) else resize(img, size)
    # resize by s then take the centre size x size window: one resample
    ch, cw = h / s, w / s
    return resized_crop(img, (h - ch) / 2.0, (w - cw) / 2.0, ch, cw, size)


def _crop_view(img, cfg, rng, size):
    h, w = img.shape[:2]
    ratio = rng.uniform(*cfg.crop_ratio_range)
    ch, cw = h * math.sqrt(ratio), w * math.sqrt(ratio)
    # ratio > 1 zooms out: the box is larger than the image and reflected
    top = rng.uniform(min(0.0, h - ch), max(0.0, h - ch))
    left = rng.uniform(min(0.0, w - cw), max(0.0, w - cw))
    view = resized_crop(img, top, left, ch, cw, size, mode=kernels.MODE_REFLECT)
    if rng.random() < cfg.crop_flip_prob:
        view = horizontal_flip(view)
    return view


def tta_variants(img, cfg: TtaConfig, rng, size=None):
    """Deterministic scale x flip views (identity first) plus random crop views."""
    cfg.validate()
    size = img.shape[0] if size is None else size
    scales = [1.0] + [s for s in cfg.scales if s != 1.0]
    views = []
    for s in scales:
        v = _scale_view(img, s, size)
        views.append(v)
        if cfg.flip:
            views.append(horizontal_flip(v))
    for _ in range(cfg.n_crops):
        views.append(_crop_view(img, cfg, rng, size))
    return views


def softmax_np(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def predict_scores(model, images, sample_ids, tta_cfg: TtaConfig, seed=0,
                   mean=IMAGENET_MEAN, std=IMAGENET_STD, chunk=8):
    """Mean over TTA views of per-view softmax, one row per sample."""
    size = model.cfg.input_size
    dtype = model.params["head.weight"].dtype
    rows = []
    with T.no_grad():
        for s in range(0, len(sample_ids), chunk):
            views = []
            for i in range(s, min(s + chunk, len(sample_ids))):
                vs = tta_variants(images[i], tta_cfg, derive_rng(seed, "tta", sample_ids[i]), size)
                if any(v.shape[:2] != (size, size) for v in vs):
                    raise ValueError(f"{sample_ids[i]}: view size mismatch")
                views.append(np.stack(vs))
            nv = views[0].shape[0]
            x = normalize(np.concatenate(views), mean, std).astype(dtype)
            probs = softmax_np(model.forward(x).data.astype(np.float64))
            rows.append(probs.reshape(-1, nv, probs.shape[-1]).mean(axis=1))
    scores = np.concatenate(rows) if rows else np.zeros((0, model.cfg.num_classes))
    return PredictionMatrix(list(sample_ids), scores)


def soup(mats, space="prob"):
    """Elementwise mean of prediction matrices over the same samples.

    ``space="log"`` averages log-probabilities and renormalises instead
    (logit-space averaging up to per-model constants).
    """
    if not mats:
        raise ValueError("soup needs at least one matrix")
    ids = mats[0].sample_ids
    for m in mats[1:]:
        if m.sample_ids != ids:
            raise ValueError("prediction matrices cover different sample ids")
    # sorting along the member axis fixes the summation order, so the
    # result is bit-identical under any permutation of ``mats``
    stack = np.sort(np.stack([m.scores for m in mats]), axis=0)
    if space == "prob":
        return PredictionMatrix(list(ids), stack.sum(axis=0) / len(mats))
    if space == "log":
        logs = np.log(np.maximum(stack, 1e-300))
        return PredictionMatrix(list(ids), softmax_np(logs.sum(axis=0) / len(mats)))
    raise ValueError(f"unknown soup space {space!r}")


# -- metrics --------------------------------------------------------------

def display(value, places=1):
    """Round half-up to ``places`` decimals for printing."""
    if isinstance(value, Fraction):
        d = Decimal(value.numerator) / Decimal(value.denominator)
    else:
        d = Decimal(str(value))
    return str(d.quantize(Decimal(1).scaleb(-places), rounding=ROUND_HALF_UP))


@dataclass
class Metrics:
    correct_A: int
    total_A: int
    correct_B: int
    total_B: int

    @property
    def acc_A(self):
        return Fraction(100 * self.correct_A, self.total_A) if self.total_A else None

    @property
    def acc_B(self):
        return Fraction(100 * self.correct_B, self.total_B) if self.total_B else None

    @property
    def mAcc(self):
        if self.acc_A is None or self.acc_B is None:
            return None
        return (self.acc_A + self.acc_B) / 2

    def row(self):
        fmt = lambda v: "" if v is None else display(v)  # noqa: E731
        return {"acc_A": fmt(self.acc_A), "acc_B": fmt(self.acc_B), "mAcc": fmt(self.mAcc),
                "mAcc_exact": "" if self.mAcc is None else str(self.mAcc),
                "correct_A": self.correct_A, "total_A": self.total_A,
                "correct_B": self.correct_B, "total_B": self.total_B}


def top1(scores):
    # np.argmax returns the first maximum, i.e. ties go to the lowest class index
    return np.argmax(scores, axis=1)


def evaluate(pred: PredictionMatrix, labels, subset_of):
    """Per-subset top-1 accuracy as exact rationals."""
    missing = [s for s in pred.sample_ids if s not in labels or s not in subset_of]
    if missing:
        raise KeyError(f"no label for {len(missing)} ids, e.g. {missing[0]!r}")
    guess = top1(pred.scores)
    counts = {"A": [0, 0], "B": [0, 0]}
    for sid, g in zip(pred.sample_ids, guess):
        c = counts[subset_of[sid]]
        c[0] += int(g == labels[sid])
        c[1] += 1
    return Metrics(counts["A"][0], counts["A"][1], counts["B"][0], counts["B"][1])

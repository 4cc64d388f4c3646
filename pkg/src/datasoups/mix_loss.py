"""CutMix / MixUp batch mixing and label-smoothed cross entropy."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T

log = logging.getLogger(__name__)


@dataclass
class MixConfig:
    cutmix_alpha: float = 0.8
    mixup_alpha: float = 1.0
    cutmix_prob: float = 0.5
    smoothing_eps: float = 0.1
    enabled: bool = True

    def validate(self):
        if self.cutmix_alpha <= 0 or self.mixup_alpha <= 0:
            raise ValueError("mixing alphas must be positive")
        if not 0.0 <= self.smoothing_eps < 1.0:
            raise ValueError("smoothing_eps must lie in [0, 1)")
        return self


@dataclass
class MixOutcome:
    images: np.ndarray
    targets: np.ndarray
    lam: float
    mode: str = "none"


def smooth_targets(class_ids, eps, k=7):
    ids = np.asarray(class_ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= k):
        raise ValueError("class ids out of range")
    q = np.full((ids.size, k), eps / k)
    q[np.arange(ids.size), ids] += 1.0 - eps
    return q


def _partner(x):
    return x[::-1]


def mixup(images, targets, alpha, rng, lam=None):
    """Blend each sample with its partner in the reversed batch."""
    images = np.asarray(images)
    targets = np.asarray(targets)
    if images.shape[0] < 2:
        log.warning("mixup needs a batch of at least 2; returning the batch unchanged")
        return MixOutcome(images, targets, 1.0, "mixup")
    if lam is None:
        lam = float(rng.beta(alpha, alpha))
    mixed = lam * images + (1.0 - lam) * _partner(images)
    mixed_t = lam * targets + (1.0 - lam) * _partner(targets)
    return MixOutcome(mixed.astype(images.dtype, copy=False), mixed_t, lam, "mixup")


def cut_box(h, w, lam, rng):
    """(top, bottom, left, right) of a box with sides scaled by sqrt(1 - lam)."""
    cut = math.sqrt(1.0 - lam)
    ch, cw = int(h * cut), int(w * cut)
    cy, cx = int(rng.integers(0, h)), int(rng.integers(0, w))
    top, bottom = np.clip([cy - ch // 2, cy + ch // 2 + ch % 2], 0, h)
    left, right = np.clip([cx - cw // 2, cx + cw // 2 + cw % 2], 0, w)
    return int(top), int(bottom), int(left), int(right)


def cutmix(images, targets, alpha, rng, lam=None, box=None):
    """Paste a rectangle from the partner image; targets follow the pasted area."""
    images = np.asarray(images)
    targets = np.asarray(targets)
    if images.shape[0] < 2:
        log.warning("cutmix needs a batch of at least 2; returning the batch unchanged")
        return MixOutcome(images, targets, 1.0, "cutmix")
    h, w = images.shape[1:3]
    if box is None:
        if lam is None:
            lam = float(rng.beta(alpha, alpha))
        box = cut_box(h, w, lam, rng)
    top, bottom, left, right = box
    mixed = images.copy()
    mixed[:, top:bottom, left:right] = _partner(images)[:, top:bottom, left:right]
    # the partner's weight is the pasted fraction itself, so it matches the
    # pixel count bit-for-bit
    pasted = (bottom - top) * (right - left) / (h * w)
    mixed_t = (1.0 - pasted) * targets + pasted * _partner(targets)
    return MixOutcome(mixed, mixed_t, 1.0 - pasted, "cutmix")


def mix_batch(images, targets, cfg: MixConfig, rng):
    """Pick CutMix or MixUp for this batch (exclusive) and apply it."""
    if not cfg.enabled:
        return MixOutcome(np.asarray(images), np.asarray(targets), 1.0)
    if rng.random() < cfg.cutmix_prob:
        return cutmix(images, targets, cfg.cutmix_alpha, rng)
    return mixup(images, targets, cfg.mixup_alpha, rng)


def smoothed_ce(logits, targets):
    """Mean over the batch of -sum_k q_k log softmax(z)_k."""
    if not isinstance(logits, T.Tensor):
        logits = T.Tensor(logits)
    q = T.Tensor(np.asarray(targets, dtype=logits.dtype))
    per_sample = T.sum(T.mul(q, T.log_softmax(logits, axis=-1)), axis=-1)
    return T.mul(T.mean(per_sample), -1.0)

"""Per-sample training augmentations on (H, W, 3) float images in [0, 1].

Pool policies work on the 0..255 integer view (``round(p * 255)``) and return
``value / 255``.  Geometry is inverse-mapped bilinear sampling with a 128/255
fill outside the source.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels

log = logging.getLogger(__name__)

POLICIES = (
    "AutoContrast", "Equalize", "Invert", "Rotate", "Posterize", "Solarize", "SolarizeAdd",
    "ColorTransform", "Contrast", "Brightness", "Sharpness", "ShearX", "ShearY",
    "TranslateX", "TranslateY",
)
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
FILL = 128.0


@dataclass
class AugConfig:
    crop_scale_out: int = 64
    crop_ratio_range: tuple = (0.4, 1.6)
    flip_prob: float = 0.5
    randaug_n: int = 2
    randaug_level: float = 9
    erase_prob: float = 0.25
    erase_area_range: tuple = (0.01, 0.1)
    normalize_mean: tuple = IMAGENET_MEAN
    normalize_std: tuple = IMAGENET_STD
    pool: list = field(default_factory=lambda: list(POLICIES))
    enabled: bool = True

    def validate(self):
        lo, hi = self.crop_ratio_range
        if not 0 < lo <= hi:
            raise ValueError("crop_ratio_range must be ordered and positive")
        lo, hi = self.erase_area_range
        if not 0 < lo <= hi < 1:
            raise ValueError("erase_area_range must be ordered within (0, 1)")
        for p in (self.flip_prob, self.erase_prob):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must lie in [0, 1]")
        if not 0 <= self.randaug_level <= 10:
            raise ValueError("randaug_level must lie in [0, 10]")
        unknown = set(self.pool) - set(POLICIES)
        if unknown:
            raise ValueError(f"unknown policies: {sorted(unknown)}")
        return self


def to_u8(img):
    return np.clip(np.floor(np.asarray(img, dtype=np.float64) * 255.0 + 0.5), 0, 255)


def from_u8(arr):
    return np.asarray(arr, dtype=np.float64) / 255.0


def _round_clip(x):
    return np.clip(np.floor(x + 0.5), 0, 255)


# -- geometry -------------------------------------------------------------

def resized_crop(img, top, left, height, width, out_h, out_w=None, mode=kernels.MODE_EDGE):
    """Bilinearly resample the box (top, left, height, width) to out_h x out_w.

    Pixel centres are aligned (half-pixel convention); the box may extend past
    the image, in which case ``mode`` decides how the border is extended.
    """
    out_w = out_h if out_w is None else out_w
    sx = width / out_w
    sy = height / out_h
    m = np.array([[sx, 0.0, left + 0.5 * sx - 0.5],
                  [0.0, sy, top + 0.5 * sy - 0.5]])
    return kernels.affine_sample(img, m, out_h, out_w, mode, 0.0)


def resize(img, out_h, out_w=None):
    h, w = img.shape[:2]
    return resized_crop(img, 0, 0, h, w, out_h, out_w)


def horizontal_flip(img):
    return img[:, ::-1].copy()


def _warp_centered(arr, a, b, c, d, tx=0.0, ty=0.0):
    """Inverse map: src = A (p - centre) + centre - t, with A = [[a, b], [c, d]]."""
    h, w = arr.shape[:2]
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    m = np.array([[a, b, cx - a * cx - b * cy - tx],
                  [c, d, cy - c * cx - d * cy - ty]])
    return kernels.affine_sample(arr, m, h, w, kernels.MODE_CONSTANT, FILL)


# -- pool policies on the integer view ------------------------------------

def _luma(arr):
    return (arr[..., 0] * 299 + arr[..., 1] * 587 + arr[..., 2] * 114) / 1000.0


def autocontrast(arr):
    out = arr.copy()
    for c in range(arr.shape[2]):
        ch = arr[..., c]
        lo, hi = ch.min(), ch.max()
        if hi > lo:
            out[..., c] = np.floor((ch - lo) * 255.0 / (hi - lo) + 0.5)
    return out


def equalize(arr):
    out = arr.copy()
    for c in range(arr.shape[2]):
        ch = arr[..., c].astype(np.int64)
        hist = np.bincount(ch.ravel(), minlength=256)
        nz = hist[hist > 0]
        step = (int(nz.sum()) - int(nz[-1])) // 255
        if step == 0:
            continue
        before = np.concatenate([[0], np.cumsum(hist)[:-1]])
        lut = np.minimum((before + step // 2) // step, 255)
        out[..., c] = lut[ch]
    return out


def invert(arr):
    return 255.0 - arr


def posterize(arr, bits):
    shift = 8 - int(bits)
    a = arr.astype(np.int64)
    return ((a >> shift) << shift).astype(np.float64)


def solarize(arr, threshold):
    return np.where(arr >= threshold, 255.0 - arr, arr)


def solarize_add(arr, add, threshold=128):
    return np.where(arr < threshold, np.minimum(arr + add, 255.0), arr)


def _degenerate(name, arr):
    if name == "Brightness":
        return np.zeros_like(arr)
    if name == "Contrast":
        return np.full_like(arr, _luma(arr).mean())
    if name == "ColorTransform":
        return np.repeat(np.floor(_luma(arr) + 0.5)[..., None], 3, axis=2)
    # Sharpness: 3x3 smoothing, border pixels unchanged
    out = arr.copy()
    k = np.array([[1, 1, 1], [1, 5, 1], [1, 1, 1]], dtype=np.float64) / 13.0
    h, w = arr.shape[:2]
    acc = np.zeros((h - 2, w - 2, arr.shape[2]))
    for dy in range(3):
        for dx in range(3):
            acc += k[dy, dx] * arr[dy:dy + h - 2, dx:dx + w - 2]
    out[1:-1, 1:-1] = np.floor(acc + 0.5)
    return out


def blend(arr, degenerate, factor):
    return _round_clip((1.0 - factor) * degenerate + factor * arr)


def policy_params(name, level):
    """Unsigned magnitude of a policy at ``level`` in [0, 10]."""
    m = level / 10.0
    return {
        "Rotate": 30.0 * m,
        "ShearX": 0.3 * m, "ShearY": 0.3 * m,
        "TranslateX": 0.45 * m, "TranslateY": 0.45 * m,
        "Posterize": 8 - math.floor(4 * m),
        "Solarize": min(max(255 - math.floor(255 * m), 0), 255),
        "SolarizeAdd": math.floor(110 * m),
        "Brightness": 0.9 * m, "Contrast": 0.9 * m, "ColorTransform": 0.9 * m, "Sharpness": 0.9 * m,
    }.get(name)


_SIGNED = {"Rotate", "ShearX", "ShearY", "TranslateX", "TranslateY",
           "Brightness", "Contrast", "ColorTransform", "Sharpness"}


def apply_policy(img, name, level, rng=None, sign=None):
    """Apply one pool policy at ``level``.

    Signed policies take their direction from ``sign`` if given, otherwise
    from a coin flip on ``rng``.
    """
    if name not in POLICIES:
        raise ValueError(f"unknown policy {name!r}")
    if not 0 <= level <= 10:
        raise ValueError("level must lie in [0, 10]")
    arr = to_u8(img)
    mag = policy_params(name, level)
    if name in _SIGNED and sign is None:
        sign = 1.0 if rng.random() < 0.5 else -1.0
    if name == "AutoContrast":
        out = autocontrast(arr)
    elif name == "Equalize":
        out = equalize(arr)
    elif name == "Invert":
        out = invert(arr)
    elif name == "Posterize":
        out = posterize(arr, mag)
    elif name == "Solarize":
        out = solarize(arr, mag)
    elif name == "SolarizeAdd":
        out = solarize_add(arr, mag)
    elif name in ("Brightness", "Contrast", "ColorTransform", "Sharpness"):
        out = blend(arr, _degenerate(name, arr), 1.0 + sign * mag)
    elif name == "Rotate":
        th = math.radians(sign * mag)
        # inverse rotation maps output back into the source
        out = _round_clip(_warp_centered(arr, math.cos(th), math.sin(th), -math.sin(th), math.cos(th)))
    elif name == "ShearX":
        out = _round_clip(_warp_centered(arr, 1.0, sign * mag, 0.0, 1.0))
    elif name == "ShearY":
        out = _round_clip(_warp_centered(arr, 1.0, 0.0, sign * mag, 1.0))
    elif name == "TranslateX":
        out = _round_clip(_warp_centered(arr, 1.0, 0.0, 0.0, 1.0, tx=sign * mag * arr.shape[1]))
    else:  # TranslateY
        out = _round_clip(_warp_centered(arr, 1.0, 0.0, 0.0, 1.0, ty=sign * mag * arr.shape[0]))
    return from_u8(out)


def rand_augment(img, cfg: AugConfig, rng):
    """Apply ``randaug_n`` policies drawn uniformly with replacement."""
    if cfg.randaug_n <= 0:
        return img
    pool = list(cfg.pool)
    if not pool:
        raise ValueError("policy pool is empty")
    for idx in rng.integers(0, len(pool), size=cfg.randaug_n):
        img = apply_policy(img, pool[idx], cfg.randaug_level, rng)
    return img


def random_resized_crop(img, cfg: AugConfig, rng, area=None, aspect=None):
    h, w = img.shape[:2]
    if h < 8 or w < 8:
        raise ValueError("image must be at least 8x8")
    lo, hi = cfg.crop_ratio_range
    log_r = (math.log(3 / 4), math.log(4 / 3))
    for _ in range(10):
        frac = min(rng.uniform(lo, hi), 1.0) if area is None else area
        ar = math.exp(rng.uniform(*log_r)) if aspect is None else aspect
        target = frac * h * w
        cw = int(round(math.sqrt(target * ar)))
        ch = int(round(math.sqrt(target / ar)))
        if 0 < cw <= w and 0 < ch <= h:
            top = int(rng.integers(0, h - ch + 1))
            left = int(rng.integers(0, w - cw + 1))
            return resized_crop(img, top, left, ch, cw, cfg.crop_scale_out)
    log.debug("random_resized_crop: falling back to centre crop")
    side = min(h, w)
    return resized_crop(img, (h - side) // 2, (w - side) // 2, side, side, cfg.crop_scale_out)


def random_erasing(img, cfg: AugConfig, rng, area=None):
    if cfg.erase_prob <= 0 or rng.random() >= cfg.erase_prob:
        return img
    h, w = img.shape[:2]
    log_r = (math.log(0.3), math.log(3.3))
    for _ in range(10):
        frac = rng.uniform(*cfg.erase_area_range) if area is None else area
        ar = math.exp(rng.uniform(*log_r))
        eh = int(round(math.sqrt(frac * h * w * ar)))
        ew = int(round(math.sqrt(frac * h * w / ar)))
        if 0 < eh < h and 0 < ew < w:
            top = int(rng.integers(0, h - eh + 1))
            left = int(rng.integers(0, w - ew + 1))
            out = img.copy()
            out[top:top + eh, left:left + ew] = rng.random((eh, ew, img.shape[2]))
            return out
    return img


def normalize(img, mean=IMAGENET_MEAN, std=IMAGENET_STD):
    std = np.asarray(std, dtype=np.float64)
    if (std <= 0).any():
        raise ValueError("std components must be positive")
    return (np.asarray(img) - np.asarray(mean)) / std


def train_transform(img, cfg: AugConfig, rng):
    """Crop, flip, RandAugment, erase.  Output stays in [0, 1]."""
    if not cfg.enabled:
        if img.shape[0] != cfg.crop_scale_out or img.shape[1] != cfg.crop_scale_out:
            img = resize(img, cfg.crop_scale_out)
        return img
    img = random_resized_crop(img, cfg, rng)
    if rng.random() < cfg.flip_prob:
        img = horizontal_flip(img)
    img = rand_augment(img, cfg, rng)
    img = random_erasing(img, cfg, rng)
    return np.clip(img, 0.0, 1.0)

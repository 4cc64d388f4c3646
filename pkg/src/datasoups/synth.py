"""Seeded synthetic two-subset dataset.

Each class has its own hue, stripe frequency and noise level; every image
gets a random stripe orientation and phase.  Subset B is the same generator
with a global hue offset and reduced stripe contrast, scaled by
``subset_shift`` (0 makes the two subsets identically distributed).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .io import CLASS_NAMES, Manifest, Sample, save_manifest, write_ppm
from .seeding import derive_rng


def _default_hues():
    return [i / len(CLASS_NAMES) for i in range(len(CLASS_NAMES))]


@dataclass
class SynthConfig:
    image_side: int = 64
    hues: list = field(default_factory=_default_hues)
    stripe_freqs: list = field(default_factory=lambda: [3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0])
    noise_levels: list = field(default_factory=lambda: [0.04, 0.05, 0.06, 0.04, 0.05, 0.06, 0.05])
    hue_jitter: float = 0.03
    subset_shift: float = 1.0
    shift_hue: float = 0.035
    shift_contrast: float = 0.2
    train_per_class: int = 50
    test_per_class: int = 20
    train_counts: list | None = None  # per-class override of train_per_class
    seed: int = 0

    def validate(self):
        k = len(CLASS_NAMES)
        for name in ("hues", "stripe_freqs", "noise_levels"):
            if len(getattr(self, name)) != k:
                raise ValueError(f"{name} needs {k} entries")
        counts = self.train_counts or [self.train_per_class] * k
        if len(counts) != k or min(counts) < 1 or self.test_per_class < 1:
            raise ValueError("per-class counts must be >= 1")
        if self.image_side < 8:
            raise ValueError("image_side must be >= 8")
        return self


def hsv_to_rgb(h, s, v):
    h = np.asarray(h) % 1.0
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(np.int64) % 6
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1)


def render(cfg: SynthConfig, subset, class_id, rng):
    n = cfg.image_side
    yy, xx = np.mgrid[0:n, 0:n] / n
    theta = rng.uniform(0, np.pi)
    phase = rng.uniform(0, 2 * np.pi)
    u = xx * np.cos(theta) + yy * np.sin(theta)
    stripes = 0.5 + 0.5 * np.sin(2 * np.pi * cfg.stripe_freqs[class_id] * u + phase)
    shift = cfg.subset_shift if subset == "B" else 0.0
    amp = max(1.0 - cfg.shift_contrast * shift, 0.05)
    hue = cfg.hues[class_id] + shift * cfg.shift_hue + rng.normal(0.0, cfg.hue_jitter)
    sat = 0.6 - 0.3 * amp * (stripes - 0.5) + rng.uniform(-0.05, 0.05)
    val = 0.55 + 0.7 * amp * (stripes - 0.5) + rng.uniform(-0.05, 0.05)
    rgb = hsv_to_rgb(np.full((n, n), hue), np.clip(sat, 0, 1), np.clip(val, 0, 1))
    rgb = rgb + rng.normal(0.0, cfg.noise_levels[class_id], rgb.shape)
    return np.clip(rgb, 0.0, 1.0)


def synth_rows(cfg: SynthConfig):
    """Manifest rows in generation order (subset, split, class, index)."""
    k = len(CLASS_NAMES)
    train_counts = cfg.train_counts or [cfg.train_per_class] * k
    rows = []
    for subset in ("A", "B"):
        for split in ("train", "test"):
            for c in range(k):
                count = train_counts[c] if split == "train" else cfg.test_per_class
                for i in range(count):
                    sid = f"{subset}_{split}_{c}_{i:04d}"
                    rows.append(Sample(sid, f"images/{subset}/{split}/{sid}.ppm", subset, c, split, -1))
    return rows


def generate_synthetic(cfg: SynthConfig, out_dir):
    """Write PPM images and ``manifest.csv`` under ``out_dir``; returns the Manifest."""
    cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = synth_rows(cfg)
    for r in rows:
        path = out / r.relpath
        path.parent.mkdir(parents=True, exist_ok=True)
        rng = derive_rng(cfg.seed, "synth", r.sample_id)
        write_ppm(path, render(cfg, r.subset, r.class_id, rng))
    man = Manifest(rows, out)
    save_manifest(man, out / "manifest.csv")
    return man

"""Independent reference implementations used by the tests.

These are deliberately naive (per-pixel Python loops over ints) and share no
code with the package.
"""
import math

import numpy as np


def invert_ref(arr):
    h, w, c = arr.shape
    out = np.empty_like(arr)
    for y in range(h):
        for x in range(w):
            for k in range(c):
                out[y, x, k] = 255 - int(arr[y, x, k])
    return out


def solarize_ref(arr, threshold):
    h, w, c = arr.shape
    out = np.empty_like(arr)
    for y in range(h):
        for x in range(w):
            for k in range(c):
                v = int(arr[y, x, k])
                out[y, x, k] = 255 - v if v >= threshold else v
    return out


def posterize_ref(arr, bits):
    keep = 0
    for b in range(bits):
        keep |= 1 << (7 - b)
    h, w, c = arr.shape
    out = np.empty_like(arr)
    for y in range(h):
        for x in range(w):
            for k in range(c):
                out[y, x, k] = int(arr[y, x, k]) & keep
    return out


def autocontrast_ref(arr):
    h, w, c = arr.shape
    out = np.empty_like(arr)
    for k in range(c):
        vals = [int(arr[y, x, k]) for y in range(h) for x in range(w)]
        lo, hi = min(vals), max(vals)
        for y in range(h):
            for x in range(w):
                v = int(arr[y, x, k])
                if hi == lo:
                    out[y, x, k] = v
                else:
                    # exact rational arithmetic, then round half up
                    num = (v - lo) * 255
                    out[y, x, k] = (2 * num + (hi - lo)) // (2 * (hi - lo))
    return out


def equalize_ref(arr):
    h, w, c = arr.shape
    out = np.empty_like(arr)
    for k in range(c):
        hist = [0] * 256
        for y in range(h):
            for x in range(w):
                hist[int(arr[y, x, k])] += 1
        used = [n for n in hist if n]
        step = (sum(used) - used[-1]) // 255
        if step == 0:
            out[..., k] = arr[..., k]
            continue
        lut, acc = [], step // 2
        for n in hist:
            lut.append(min(acc // step, 255))
            acc += n
        for y in range(h):
            for x in range(w):
                out[y, x, k] = lut[int(arr[y, x, k])]
    return out


def mean_oracle(mats):
    """Row-by-row, entry-by-entry mean with math.fsum."""
    n, k = mats[0].shape
    out = np.empty((n, k))
    for i in range(n):
        for j in range(k):
            out[i, j] = math.fsum(m[i, j] for m in mats) / len(mats)
    return out


def perceptron_separable(a, b, epochs=2000):
    """True if the classic perceptron (with bias) finds a separating line."""
    x = np.vstack([a, b])
    x = np.hstack([x, np.ones((len(x), 1))])
    y = np.concatenate([np.ones(len(a)), -np.ones(len(b))])
    x = x / np.abs(x).max()
    w = np.zeros(x.shape[1])
    for _ in range(epochs):
        mistakes = 0
        for xi, yi in zip(x, y):
            if yi * (xi @ w) <= 0:
                w += yi * xi
                mistakes += 1
        if mistakes == 0:
            return True
    return False


def adam_ref(p, grads, lr, b1, b2, eps):
    """Textbook Adam on a flat list of floats, one step per gradient."""
    p = [float(v) for v in p]
    m = [0.0] * len(p)
    v = [0.0] * len(p)
    for t, g in enumerate(grads, start=1):
        for i in range(len(p)):
            m[i] = b1 * m[i] + (1 - b1) * g[i]
            v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i]
            mh = m[i] / (1 - b1 ** t)
            vh = v[i] / (1 - b2 ** t)
            p[i] -= lr * mh / (math.sqrt(vh) + eps)
    return np.array(p)

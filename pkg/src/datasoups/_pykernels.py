"""Pure numpy versions of the hot kernels.

Used when the compiled ``_ckernels`` extension is unavailable, and as the
reference the compiled versions are tested against.
"""
import math

import numpy as np

MODE_CONSTANT, MODE_EDGE, MODE_REFLECT = 0, 1, 2


def _reflect(idx, n):
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    idx = np.abs(idx) % period
    return np.where(idx >= n, period - idx, idx)


def affine_sample(img, matrix, out_h, out_w, mode=MODE_CONSTANT, fill=0.0):
    """Bilinear inverse-mapped sampling.

    ``matrix`` is 2x3 and maps output pixel (x, y) to source (x, y).
    """
    img = np.ascontiguousarray(img, dtype=np.float64)
    h, w, c = img.shape
    m = np.asarray(matrix, dtype=np.float64)
    ys, xs = np.mgrid[0:out_h, 0:out_w].astype(np.float64)
    sx = m[0, 0] * xs + m[0, 1] * ys + m[0, 2]
    sy = m[1, 0] * xs + m[1, 1] * ys + m[1, 2]
    x0 = np.floor(sx)
    y0 = np.floor(sy)
    fx = (sx - x0)[..., None]
    fy = (sy - y0)[..., None]
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)

    def fetch(yy, xx):
        if mode == MODE_EDGE:
            return img[np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)]
        if mode == MODE_REFLECT:
            return img[_reflect(yy, h), _reflect(xx, w)]
        inside = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        vals = img[np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)]
        return np.where(inside[..., None], vals, fill)

    top = fetch(y0, x0) * (1 - fx) + fetch(y0, x0 + 1) * fx
    bot = fetch(y0 + 1, x0) * (1 - fx) + fetch(y0 + 1, x0 + 1) * fx
    return top * (1 - fy) + bot * fy


def _row_entropy(d, beta):
    # d is shifted so that min(d) == 0
    p = np.exp(-d * beta)
    s = p.sum()
    h = math.log(s) + beta * float((d * p).sum()) / s
    return h, p / s


def perplexity_search(dist2, perplexity, tol=1e-5, max_iter=50):
    """Per-row Gaussian bandwidths matching a target perplexity.

    Returns (conditional P with zero diagonal, beta per row, entropy per row,
    bisection steps per row).
    """
    dist2 = np.asarray(dist2, dtype=np.float64)
    n = dist2.shape[0]
    target = math.log(perplexity)
    P = np.zeros((n, n))
    betas = np.ones(n)
    ents = np.zeros(n)
    steps = np.zeros(n, dtype=np.int64)
    for i in range(n):
        d = np.concatenate([dist2[i, :i], dist2[i, i + 1:]])
        d = d - d.min()
        scale = float(np.mean(d))
        beta = 1.0 / scale if scale > 0 else 1.0
        lo, hi = 0.0, math.inf
        h, row = _row_entropy(d, beta)
        k = 0
        while abs(h - target) > tol and k < max_iter:
            if h > target:
                lo = beta
                beta = beta * 2.0 if hi == math.inf else 0.5 * (beta + hi)
            else:
                hi = beta
                beta = 0.5 * (beta + lo) if lo > 0 else beta / 2.0
            h, row = _row_entropy(d, beta)
            k += 1
        P[i, :i] = row[:i]
        P[i, i + 1:] = row[i:]
        betas[i] = beta
        ents[i] = h
        steps[i] = k
    return P, betas, ents, steps


def tsne_grad(P, Y, exaggeration=1.0):
    """Gradient of KL(P||Q) with a Student-t Q.  Returns (grad, kl)."""
    sq = (Y * Y).sum(1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (Y @ Y.T), 0.0)
    num = 1.0 / (1.0 + d2)
    np.fill_diagonal(num, 0.0)
    Q = num / num.sum()
    W = (exaggeration * P - Q) * num
    grad = 4.0 * (W.sum(1)[:, None] * Y - W @ Y)
    mask = P > 0
    kl = float((P[mask] * np.log(P[mask] / np.maximum(Q[mask], 1e-300))).sum())
    return grad, kl

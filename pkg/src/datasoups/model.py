"""Swinlet: a small SwinV2-style classifier.

Scaled cosine attention with a learnable per-head temperature, residual
post-normalisation, a learned relative position bias table, alternating
regular/shifted windows, patch merging between stages, and a mean-pooled
linear head.
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from .tensor import Tensor

NUM_CLASSES = 7
TAU_MIN = 0.01


@dataclass
class ModelConfig:
    input_size: int = 64
    patch: int = 4
    window: int = 4
    embed_dim: int = 32
    depths: list = field(default_factory=lambda: [2, 2])
    heads: list = field(default_factory=lambda: [2, 4])
    num_classes: int = NUM_CLASSES
    drop_path_rate: float = 0.2
    mlp_ratio: int = 4

    def stage_resolutions(self):
        res = self.input_size // self.patch
        return [res // (2 ** i) for i in range(len(self.depths))]

    def stage_windows(self):
        return [min(self.window, r) for r in self.stage_resolutions()]

    def validate(self):
        if self.input_size % self.patch:
            raise ValueError(f"input_size {self.input_size} not divisible by patch {self.patch}")
        if len(self.depths) != len(self.heads) or not self.depths:
            raise ValueError("depths and heads must be non-empty and of equal length")
        res = self.input_size // self.patch
        for i in range(len(self.depths)):
            r = res // (2 ** i)
            if r * (2 ** i) != res or r < 1:
                raise ValueError(f"stage {i}: token grid not divisible by 2**{i}")
            if r % min(self.window, r):
                raise ValueError(f"stage {i}: grid {r} not divisible by window {self.window}")
            dim = self.embed_dim * 2 ** i
            if dim % self.heads[i]:
                raise ValueError(f"stage {i}: dim {dim} not divisible by heads {self.heads[i]}")
        if not 0.0 <= self.drop_path_rate < 1.0:
            raise ValueError("drop_path_rate must lie in [0, 1)")
        if self.num_classes != NUM_CLASSES:
            raise ValueError(f"num_classes must be {NUM_CLASSES}")
        return self


# -- window helpers (work on numpy arrays and Tensors alike) -------------

def window_partition(x, w):
    """(B, H, W, C) -> (B * nW, w*w, C)."""
    B, H, W, C = x.shape
    x = x.reshape(B, H // w, w, W // w, w, C).transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(B * (H // w) * (W // w), w * w, C)


def window_reverse(xw, w, B, H, W):
    C = xw.shape[-1]
    x = xw.reshape(B, H // w, W // w, w, w, C).transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(B, H, W, C)


def relative_position_index(w):
    coords = np.stack(np.meshgrid(np.arange(w), np.arange(w), indexing="ij")).reshape(2, -1)
    rel = coords[:, :, None] - coords[:, None, :]
    rel = rel.transpose(1, 2, 0) + (w - 1)
    return rel[..., 0] * (2 * w - 1) + rel[..., 1]


def shift_mask(res, w, shift):
    """Additive (nW, w*w, w*w) mask for a cyclically shifted grid."""
    img = np.zeros((1, res, res, 1))
    cnt = 0
    for hs in (slice(0, -w), slice(-w, -shift), slice(-shift, None)):
        for ws in (slice(0, -w), slice(-w, -shift), slice(-shift, None)):
            img[:, hs, ws, :] = cnt
            cnt += 1
    mw = window_partition(img, w)[..., 0]
    return np.where(mw[:, None, :] != mw[:, :, None], -np.inf, 0.0)


def cosine_attention(q, k, v, tau, bias=None, mask=None):
    """Scaled cosine attention.

    q, k, v: (..., heads, N, d); tau: (heads,); bias: (heads, N, N) or None;
    mask: additive (nW, N, N) with the leading batch axis ordered as
    (batch, window).  Returns (output, attention weights).
    """
    qn = T.l2_normalize(q, axis=-1)
    kn = T.l2_normalize(k, axis=-1)
    scores = T.matmul(qn, T.transpose(kn, tuple(range(kn.ndim - 2)) + (kn.ndim - 1, kn.ndim - 2)))
    t = T.clamp_min(tau, TAU_MIN).reshape(-1, 1, 1)
    scores = T.div(scores, t)
    if bias is not None:
        scores = T.add(scores, bias)
    if mask is not None:
        nw = mask.shape[0]
        shape = scores.shape
        scores = scores.reshape((shape[0] // nw, nw) + shape[1:])
        scores = T.add(scores, Tensor(mask[None, :, None].astype(scores.dtype)))
        scores = scores.reshape(shape)
    attn = T.softmax(scores, axis=-1)
    return T.matmul(attn, v), attn


class Swinlet:
    def __init__(self, cfg: ModelConfig, params: dict):
        self.cfg = cfg
        self.params = params
        self._rel_idx = {}
        self._masks = {}
        for i, (r, w) in enumerate(zip(cfg.stage_resolutions(), cfg.stage_windows())):
            self._rel_idx[w] = relative_position_index(w)
            if w < r:
                self._masks[(r, w)] = shift_mask(r, w, w // 2)
        total = sum(cfg.depths)
        self._drop_rates = list(np.linspace(0.0, cfg.drop_path_rate, total)) if total > 1 else [0.0]

    # -- parameter access -----------------------------------------------
    def __getitem__(self, name):
        return self.params[name]

    def parameters(self):
        return self.params

    def num_params(self):
        return int(sum(p.data.size for p in self.params.values()))

    def state_dict(self):
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state):
        missing = set(self.params) ^ set(state)
        if missing:
            raise KeyError(f"parameter names differ: {sorted(missing)[:5]}")
        for k, arr in state.items():
            if arr.shape != self.params[k].shape:
                raise ValueError(f"{k}: shape {arr.shape} != {self.params[k].shape}")
            self.params[k].data = np.array(arr, dtype=self.params[k].dtype)

    def clone(self):
        return Swinlet(self.cfg, {k: Tensor(v.data.copy(), requires_grad=True, name=k)
                                  for k, v in self.params.items()})

    def astype(self, dtype):
        return Swinlet(self.cfg, {k: Tensor(v.data.astype(dtype), requires_grad=True, name=k)
                                  for k, v in self.params.items()})

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    # -- forward ----------------------------------------------------------
    def _ln(self, x, prefix):
        return T.layer_norm(x, self.params[prefix + ".weight"], self.params[prefix + ".bias"])

    def _linear(self, x, prefix):
        return T.linear(x, self.params[prefix + ".weight"], self.params[prefix + ".bias"])

    def _drop_path(self, x, rate, train, rng):
        if not train or rate <= 0.0:
            return x
        keep = 1.0 - rate
        m = (rng.random(x.shape[0]) < keep).reshape((-1,) + (1,) * (x.ndim - 1))
        return T.apply_mask(x, m, 1.0 / keep)

    def _block(self, x, pre, heads, w, shift, rate, train, rng):
        B, H, W, C = x.shape
        shortcut = x
        if shift:
            x = T.roll(x, (-shift, -shift), axis=(1, 2))
        xw = window_partition(x, w)
        n = w * w
        d = C // heads
        qkv = self._linear(xw, pre + ".attn.qkv").reshape(-1, n, 3, heads, d).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        table = self.params[pre + ".attn.rel_bias"]
        bias = T.take(table, self._rel_idx[w].reshape(-1), axis=0).reshape(n, n, heads).transpose(2, 0, 1)
        tau = T.exp(self.params[pre + ".attn.log_tau"])
        mask = self._masks[(H, w)] if shift else None
        out, _ = cosine_attention(q, k, v, tau, bias, mask)
        out = out.transpose(0, 2, 1, 3).reshape(-1, n, C)
        out = self._linear(out, pre + ".attn.proj")
        out = window_reverse(out, w, B, H, W)
        if shift:
            out = T.roll(out, (shift, shift), axis=(1, 2))
        x = shortcut + self._drop_path(self._ln(out, pre + ".norm1"), rate, train, rng)
        h = T.gelu(self._linear(x, pre + ".mlp.fc1"))
        h = self._linear(h, pre + ".mlp.fc2")
        return x + self._drop_path(self._ln(h, pre + ".norm2"), rate, train, rng)

    def _merge(self, x, pre):
        B, H, W, C = x.shape
        x = x.reshape(B, H // 2, 2, W // 2, 2, C).transpose(0, 1, 3, 4, 2, 5).reshape(B, H // 2, W // 2, 4 * C)
        return self._ln(T.matmul(x, self.params[pre + ".reduction.weight"]), pre + ".norm")

    def features(self, images, train=False, rng=None):
        """Pooled penultimate features (B, C_last)."""
        cfg = self.cfg
        x = images.data if isinstance(images, Tensor) else np.asarray(images)
        if x.ndim != 4 or x.shape[1] != cfg.input_size or x.shape[2] != cfg.input_size or x.shape[3] != 3:
            raise ValueError(f"expected (B, {cfg.input_size}, {cfg.input_size}, 3) input, got {x.shape}")
        if train and cfg.drop_path_rate > 0 and rng is None:
            raise ValueError("train mode with drop path needs an rng")
        dtype = self.params["patch_embed.proj.weight"].dtype
        B = x.shape[0]
        p = cfg.patch
        g = cfg.input_size // p
        x = x.astype(dtype, copy=False).reshape(B, g, p, g, p, 3).transpose(0, 1, 3, 2, 4, 5).reshape(B, g, g, p * p * 3)
        h = self._ln(self._linear(Tensor(x), "patch_embed.proj"), "patch_embed.norm")
        blk = 0
        windows = cfg.stage_windows()
        for si, depth in enumerate(cfg.depths):
            w = windows[si]
            res = h.shape[1]
            for bi in range(depth):
                shift = w // 2 if (bi % 2 == 1 and w < res) else 0
                h = self._block(h, f"stages.{si}.blocks.{bi}", cfg.heads[si], w, shift,
                                self._drop_rates[blk], train, rng)
                blk += 1
            if si < len(cfg.depths) - 1:
                h = self._merge(h, f"stages.{si}.merge")
        h = self._ln(h, "norm")
        return T.mean(h, axis=(1, 2))

    def forward(self, images, train=False, rng=None):
        return self._linear(self.features(images, train, rng), "head")

    __call__ = forward


def _trunc_normal(rng, shape, std=0.02):
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return out * std


def param_shapes(cfg: ModelConfig):
    """Ordered (name, shape, kind) for every parameter; kind in weight/bias/gain/tau/table."""
    out = []
    C = cfg.embed_dim
    pin = cfg.patch * cfg.patch * 3
    out += [("patch_embed.proj.weight", (pin, C), "weight"), ("patch_embed.proj.bias", (C,), "bias"),
            ("patch_embed.norm.weight", (C,), "gain"), ("patch_embed.norm.bias", (C,), "bias")]
    windows = cfg.stage_windows()
    for si, depth in enumerate(cfg.depths):
        dim = C * 2 ** si
        hd = cfg.heads[si]
        w = windows[si]
        for bi in range(depth):
            pre = f"stages.{si}.blocks.{bi}"
            hidden = dim * cfg.mlp_ratio
            out += [
                (pre + ".attn.qkv.weight", (dim, 3 * dim), "weight"), (pre + ".attn.qkv.bias", (3 * dim,), "bias"),
                (pre + ".attn.log_tau", (hd,), "tau"),
                (pre + ".attn.rel_bias", ((2 * w - 1) ** 2, hd), "table"),
                (pre + ".attn.proj.weight", (dim, dim), "weight"), (pre + ".attn.proj.bias", (dim,), "bias"),
                (pre + ".norm1.weight", (dim,), "gain"), (pre + ".norm1.bias", (dim,), "bias"),
                (pre + ".mlp.fc1.weight", (dim, hidden), "weight"), (pre + ".mlp.fc1.bias", (hidden,), "bias"),
                (pre + ".mlp.fc2.weight", (hidden, dim), "weight"), (pre + ".mlp.fc2.bias", (dim,), "bias"),
                (pre + ".norm2.weight", (dim,), "gain"), (pre + ".norm2.bias", (dim,), "bias"),
            ]
        if si < len(cfg.depths) - 1:
            pre = f"stages.{si}.merge"
            out += [(pre + ".reduction.weight", (4 * dim, 2 * dim), "weight"),
                    (pre + ".norm.weight", (2 * dim,), "gain"), (pre + ".norm.bias", (2 * dim,), "bias")]
    last = C * 2 ** (len(cfg.depths) - 1)
    out += [("norm.weight", (last,), "gain"), ("norm.bias", (last,), "bias"),
            ("head.weight", (last, cfg.num_classes), "weight"), ("head.bias", (cfg.num_classes,), "bias")]
    return out


def build_model(cfg: ModelConfig, seed=0, dtype=np.float32):
    cfg.validate()
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape, kind in param_shapes(cfg):
        if kind in ("weight", "table"):
            arr = _trunc_normal(rng, shape)
        elif kind == "gain":
            arr = np.ones(shape)
        else:  # bias, and tau stored as log(tau) = log(1.0)
            arr = np.zeros(shape)
        params[name] = Tensor(arr.astype(dtype), requires_grad=True, name=name)
    return Swinlet(cfg, params)


def no_decay(name):
    """Parameters excluded from weight decay: biases, norm gains, temperatures."""
    return name.endswith(".bias") or name.endswith("log_tau") or ".norm" in name or name.startswith("norm.")


def config_dict(cfg):
    return asdict(cfg)

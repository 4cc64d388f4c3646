"""AdamW, warmup + cosine schedule, stratified k-fold splits and the
joint-then-per-subset fine-tuning workflow."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .augment import AugConfig, normalize, train_transform
from .mix_loss import MixConfig, mix_batch, smooth_targets, smoothed_ce
from .model import ModelConfig, Swinlet, build_model, no_decay
from .seeding import derive_rng

log = logging.getLogger(__name__)


@dataclass
class OptimConfig:
    peak_lr: float = 3e-4
    warmup_epochs: float = 3
    total_epochs: int = 15
    batch_size: int = 8
    weight_decay: float = 0.05
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    eta_min: float = 0.0

    def validate(self):
        if not 0 <= self.warmup_epochs < self.total_epochs:
            raise ValueError("need 0 <= warmup_epochs < total_epochs")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (mixing needs pairs)")
        return self


def full_scale_profile(**overrides):
    """Optimizer settings as reported for the full-scale run."""
    return replace(OptimConfig(peak_lr=1e-5, warmup_epochs=10, total_epochs=50, batch_size=8), **overrides)


def lr_at(t, cfg: OptimConfig):
    """Linear warmup from 0 to peak, then cosine decay to eta_min at total."""
    if not 0 <= t <= cfg.total_epochs:
        raise ValueError(f"t={t} outside [0, {cfg.total_epochs}]")
    if t < cfg.warmup_epochs:
        return cfg.peak_lr * t / cfg.warmup_epochs
    span = cfg.total_epochs - cfg.warmup_epochs
    progress = (t - cfg.warmup_epochs) / span
    return cfg.eta_min + 0.5 * (cfg.peak_lr - cfg.eta_min) * (1.0 + math.cos(math.pi * progress))


# -- optimizer ------------------------------------------------------------

@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adamw_step(params, grads, state: AdamState, lr, cfg: OptimConfig, decay=None):
    """One in-place AdamW update on dicts of arrays.

    ``decay`` maps parameter name -> bool; missing names decay unless
    ``no_decay`` excludes them.
    """
    b1, b2 = cfg.betas
    state.step += 1
    t = state.step
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape:
            raise ValueError(f"{name}: grad shape {g.shape} != param shape {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        decays = decay.get(name, not no_decay(name)) if decay is not None else not no_decay(name)
        if decays and cfg.weight_decay:
            p -= (lr * cfg.weight_decay) * p
        p -= lr * update
    return params, state


class AdamW:
    def __init__(self, model: Swinlet, cfg: OptimConfig):
        self.model = model
        self.cfg = cfg
        self.state = AdamState()
        self.decay = {k: not no_decay(k) for k in model.params}

    def step(self, lr):
        params = {k: p.data for k, p in self.model.params.items()}
        grads = {k: p.grad for k, p in self.model.params.items() if p.grad is not None}
        adamw_step(params, grads, self.state, lr, self.cfg, self.decay)


# -- folds ----------------------------------------------------------------

def kfold_split(manifest, k=5, seed=0):
    """Stratified assignment sample_id -> fold over the train split.

    Each (subset, class) cell is shuffled with its own stream and dealt
    round-robin, so per-cell fold counts differ by at most one.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    cells = {}
    for r in manifest:
        if r.split == "train":
            cells.setdefault((r.subset, r.class_id), []).append(r.sample_id)
    assignment = {}
    for (subset, cls), ids in sorted(cells.items()):
        if len(ids) < k:
            raise ValueError(f"cell ({subset}, class {cls}) has {len(ids)} samples < k={k}")
        ids = sorted(ids)
        order = derive_rng(seed, "kfold", subset, cls).permutation(len(ids))
        for pos, idx in enumerate(order):
            assignment[ids[idx]] = pos % k
    return assignment


# -- stages ---------------------------------------------------------------

@dataclass
class ImageSet:
    ids: list
    images: np.ndarray  # (N, H, W, 3) float in [0, 1]
    labels: np.ndarray
    subsets: list

    def __len__(self):
        return len(self.ids)

    def subset(self, mask):
        idx = np.flatnonzero(mask)
        return ImageSet([self.ids[i] for i in idx], self.images[idx], self.labels[idx],
                        [self.subsets[i] for i in idx])


@dataclass
class StageSpec:
    stage: str  # "joint", "finetune_A", "finetune_B"
    subset: str | None = None
    fold: int = -1
    init_state: dict | None = None

    def __post_init__(self):
        if self.stage.startswith("finetune") and self.init_state is None:
            raise ValueError("fine-tune stages need a source checkpoint")

    @property
    def key(self):
        return (self.stage, self.fold)


@dataclass
class StageResult:
    final_state: dict
    best_state: dict
    best_epoch: int
    log: list


class TrainingError(RuntimeError):
    pass


def predict_logits(model, images, mean, std, batch_size=64):
    out = []
    with T.no_grad():
        for i in range(0, len(images), batch_size):
            x = normalize(images[i:i + batch_size], mean, std)
            out.append(model.forward(x).data.astype(np.float64))
    return np.concatenate(out) if out else np.zeros((0, model.cfg.num_classes))


def accuracy(model, data: ImageSet, aug_cfg: AugConfig):
    if len(data) == 0:
        return float("nan")
    logits = predict_logits(model, data.images, aug_cfg.normalize_mean, aug_cfg.normalize_std)
    return float((logits.argmax(1) == data.labels).mean())


def train_stage(spec: StageSpec, model: Swinlet, train_data: ImageSet, val_data: ImageSet | None,
                optim_cfg: OptimConfig, aug_cfg: AugConfig, mix_cfg: MixConfig, seed=0):
    """Run one training stage; returns final and best-validation weights plus a log."""
    optim_cfg.validate()
    n = len(train_data)
    if n == 0:
        raise TrainingError(f"{spec.stage}: empty training set")
    if spec.init_state is not None:
        model.load_state_dict(spec.init_state)
    opt = AdamW(model, optim_cfg)
    bs = optim_cfg.batch_size
    starts = [s for s in range(0, n, bs) if min(bs, n - s) >= 2]
    if not starts:
        raise TrainingError(f"{spec.stage}: no batch of size >= 2")
    nb = len(starts)
    k = model.cfg.num_classes
    dtype = model.params["head.weight"].dtype
    rows = []
    best_state, best_acc, best_epoch = None, -1.0, -1
    for epoch in range(optim_cfg.total_epochs):
        order = derive_rng(seed, *spec.key, "order", epoch).permutation(n)
        losses = []
        lr = 0.0
        for b, s in enumerate(starts):
            idx = order[s:s + bs]
            imgs = np.stack([
                train_transform(train_data.images[i], aug_cfg,
                                derive_rng(seed, *spec.key, "aug", train_data.ids[i], epoch))
                for i in idx])
            targets = smooth_targets(train_data.labels[idx], mix_cfg.smoothing_eps, k)
            mixed = mix_batch(imgs, targets, mix_cfg, derive_rng(seed, *spec.key, "mix", epoch, b))
            x = normalize(mixed.images, aug_cfg.normalize_mean, aug_cfg.normalize_std).astype(dtype)
            model.zero_grad()
            try:
                logits = model.forward(x, train=True, rng=derive_rng(seed, *spec.key, "dropout", epoch, b))
                loss = smoothed_ce(logits, mixed.targets)
                T.backward(loss)
            except T.NonFiniteError as exc:
                raise TrainingError(f"{spec.stage} fold {spec.fold} epoch {epoch} batch {b}: {exc}") from exc
            lr = lr_at(epoch + b / nb, optim_cfg)
            opt.step(lr)
            losses.append(float(loss.data))
        val_acc = accuracy(model, val_data, aug_cfg) if val_data is not None and len(val_data) else float("nan")
        rows.append({"epoch": epoch, "stage": spec.stage, "subset": spec.subset or "AB",
                     "fold": spec.fold, "train_loss": float(np.mean(losses)), "val_acc": val_acc, "lr": lr})
        log.info("%s fold %d epoch %d loss %.4f val_acc %.4f", spec.stage, spec.fold, epoch,
                 rows[-1]["train_loss"], val_acc)
        # ties go to the later epoch; without validation the last epoch wins
        score = val_acc if not math.isnan(val_acc) else 0.0
        if score >= best_acc:
            best_acc, best_epoch, best_state = score, epoch, model.state_dict()
    return StageResult(model.state_dict(), best_state, best_epoch, rows)


def _finetune_job(args):
    model_cfg, joint_state, data, subset, fold, optim_cfg, aug_cfg, mix_cfg, seed = args
    model = build_model(model_cfg, seed)
    fold_mask = np.array([f == fold for f in data["folds"]])
    train = data["set"].subset(~fold_mask)
    val = data["set"].subset(fold_mask)
    spec = StageSpec(f"finetune_{subset}", subset, fold, joint_state)
    return subset, fold, train_stage(spec, model, train, val, optim_cfg, aug_cfg, mix_cfg, seed)


def continuous_finetune(train_data: ImageSet, folds, k, model_cfg: ModelConfig, joint_optim: OptimConfig,
                        finetune_optim: OptimConfig, aug_cfg: AugConfig, mix_cfg: MixConfig, seed=0,
                        workers=1, joint_result=None, fold_ids=None):
    """Joint stage on all training data, then one fine-tune per (subset, fold).

    ``folds`` is aligned with ``train_data.ids``.  Returns (joint result,
    {(subset, fold): StageResult}).  ``fold_ids`` limits which held-out folds
    get a fine-tune run; all k by default.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    present = set(train_data.subsets)
    if present != {"A", "B"}:
        raise ValueError(f"training data must contain both subsets, got {sorted(present)}")
    if joint_result is None:
        model = build_model(model_cfg, seed)
        joint_result = train_stage(StageSpec("joint"), model, train_data, None, joint_optim,
                                   aug_cfg, mix_cfg, seed)
    folds = np.asarray(folds)
    jobs = []
    for subset in ("A", "B"):
        mask = np.array([s == subset for s in train_data.subsets])
        data = {"set": train_data.subset(mask), "folds": list(folds[mask])}
        for f in (range(k) if fold_ids is None else fold_ids):
            jobs.append((model_cfg, joint_result.final_state, data, subset, f, finetune_optim,
                         aug_cfg, mix_cfg, seed))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_finetune_job, jobs))
    else:
        results = [_finetune_job(j) for j in jobs]
    return joint_result, {(s, f): r for s, f, r in results}

"""End-to-end workflow: analyze, joint train, per-subset k-fold fine-tune,
TTA prediction, soup, evaluate.

Artifacts under ``out_dir``::

    analysis/      class_hist.csv, tsne.csv, tsne.svg, overlap.csv
    folds.csv      manifest with the fold column filled in
    joint/         final.dsup, scores.csv
    finetune/S/foldF/  best.dsup, scores.csv
    soup/scores.csv
    metrics.csv    per-epoch log of every training stage
    report.csv     one row per evaluated configuration
    status.json    stage reached, or the stage that failed
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import analysis
from .config import Config, load_config
from .ensemble import PredictionMatrix, evaluate, predict_scores, soup
from .io import (METRICS_HEADER, load_checkpoint, load_images, load_manifest, save_checkpoint,
                 save_manifest, write_csv, write_scores)
from .model import build_model
from .seeding import derive_rng
from .synth import generate_synthetic
from .train import ImageSet, StageSpec, continuous_finetune, kfold_split, train_stage

log = logging.getLogger(__name__)

REPORT_HEADER = ["row", "backbone", "cont_ft", "augmentation", "tta", "soups",
                 "acc_A", "acc_B", "mAcc", "mAcc_exact", "correct_A", "total_A", "correct_B", "total_B"]


class PipelineError(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"pipeline failed in stage '{stage}': {cause}")
        self.stage = stage


@dataclass
class PipelineResult:
    out_dir: Path
    report: list
    timings: dict


def image_set(manifest, dtype=np.float32):
    return ImageSet(manifest.ids(), load_images(manifest).astype(dtype),
                    np.array([r.class_id for r in manifest], dtype=np.int64),
                    [r.subset for r in manifest])


def _describe(cfg: Config):
    m = cfg.model
    backbone = f"swinlet-e{m.embed_dim}-w{m.window}-d{'.'.join(map(str, m.depths))}"
    if cfg.augment.enabled and cfg.mix.enabled:
        aug = "strong"
    elif cfg.augment.enabled or cfg.mix.enabled:
        aug = "partial"
    else:
        aug = "none"
    t = cfg.tta
    if t.n_views == 1:
        tta = "off"
    else:
        tta = f"scales{len(t.scales)}{'+flip' if t.flip else ''}+crops{t.n_crops}"
    return backbone, aug, tta


def _row(name, cfg, cont_ft, soups, metrics):
    backbone, aug, tta = _describe(cfg)
    row = {"row": name, "backbone": backbone, "cont_ft": "yes" if cont_ft else "no",
           "augmentation": aug, "tta": tta, "soups": soups}
    row.update(metrics.row())
    return row


class _Stages:
    """Tracks the current stage so failures carry provenance."""

    def __init__(self, out_dir):
        self.out_dir = out_dir
        self.timings = {}
        self.current = None
        self.done = []

    def __call__(self, name):
        self.current = name
        self._write("running")
        return self

    def __enter__(self):
        self._t0 = time.perf_counter()
        log.info("stage %s", self.current)
        return self

    def __exit__(self, exc_type, exc, tb):
        self.timings[self.current] = time.perf_counter() - self._t0
        if exc is not None:
            self._write("failed", error=f"{exc_type.__name__}: {exc}")
            if isinstance(exc, PipelineError):
                return False
            raise PipelineError(self.current, exc) from exc
        self.done.append(self.current)
        return False

    def _write(self, status, error=None):
        doc = {"status": status, "stage": self.current, "completed": self.done}
        if error:
            doc["error"] = error
        (self.out_dir / "status.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")

    def finish(self):
        self.current = None
        self._write("ok")
        (self.out_dir / "timings.json").write_text(
            json.dumps({k: round(v, 3) for k, v in self.timings.items()}, indent=2) + "\n", encoding="utf-8")


def run_analysis(cfg: Config, manifest, out_dir: Path, images=None):
    """Class histogram, encoder features, t-SNE and overlap scores."""
    out_dir.mkdir(parents=True, exist_ok=True)
    analysis.write_class_histogram(analysis.class_histogram(manifest), out_dir / "class_hist.csv")
    if cfg.run.encoder == "swinlet":
        model = build_model(cfg.model, cfg.run.seed)
        model.load_state_dict(load_checkpoint(cfg.run.encoder_checkpoint))
        encoder = analysis.SwinletEncoder(model, cfg.augment.normalize_mean, cfg.augment.normalize_std)
    else:
        encoder = analysis.HistogramEncoder()
    if images is None:
        images = load_images(manifest)
    tags = [{"subset": r.subset, "split": r.split, "class": r.class_id} for r in manifest]
    emb = analysis.extract_features(encoder, images, manifest.ids(), tags)
    overlap = [[tag, f"{analysis.overlap_score(emb.features, emb.tag(tag)):.6f}"] for tag in ("split", "subset")]
    write_csv(out_dir / "overlap.csv", ["tag", "overlap_score"], overlap)
    if len(emb.sample_ids) >= 10:
        tcfg = analysis.TsneConfig(perplexity=cfg.run.tsne_perplexity, iters=cfg.run.tsne_iters,
                                   seed=int(derive_rng(cfg.run.seed, "analysis").integers(2 ** 31)))
        res = analysis.tsne(emb.features, tcfg)
        analysis.write_tsne_csv(res.coords, emb, out_dir / "tsne.csv")
        labels = [f"{t['subset']}/{t['split']}" for t in tags]
        analysis.write_tsne_svg(res.coords, labels, out_dir / "tsne.svg", title="t-SNE by subset/split")
        write_csv(out_dir / "tsne_kl.csv", ["iteration", "kl"], [[i, f"{v:.9g}"] for i, v in res.kl_history])
    return emb


def run_pipeline(cfg, out_dir=None):
    """Run the whole workflow from a Config (or a path to a JSON config)."""
    if not isinstance(cfg, Config):
        cfg = load_config(cfg)
    cfg.validate()
    out = Path(out_dir) if out_dir is not None else cfg.base_dir / "runs" / f"seed{cfg.run.seed}"
    out.mkdir(parents=True, exist_ok=True)
    stages = _Stages(out)
    seed = cfg.run.seed
    with threadpool_limits(limits=cfg.run.threads):
        with stages("load"):
            mpath = cfg.manifest_path()
            synth = cfg.synth_config()
            if synth is not None and not mpath.exists():
                generate_synthetic(synth, mpath.parent)
            manifest = load_manifest(mpath)
            train_man = manifest.select(split="train")
            test_man = manifest.select(split="test")
            train_data = image_set(train_man)
            test_data = image_set(test_man)
            labels = dict(zip(test_data.ids, test_data.labels.tolist()))
            subset_of = dict(zip(test_data.ids, test_data.subsets))

        if cfg.run.analyze:
            with stages("analyze"):
                both = np.concatenate([train_data.images, test_data.images]) if len(test_data) else train_data.images
                order = {sid: i for i, sid in enumerate(train_data.ids + test_data.ids)}
                run_analysis(cfg, manifest, out / "analysis", both[[order[s] for s in manifest.ids()]])

        with stages("kfold"):
            assignment = kfold_split(manifest, cfg.run.k, seed)
            save_manifest(manifest.with_folds(assignment), out / "folds.csv")
            folds = [assignment[s] for s in train_data.ids]

        with stages("joint"):
            model = build_model(cfg.model, seed)
            joint = train_stage(StageSpec("joint"), model, train_data, None, cfg.optim,
                                cfg.augment, cfg.mix, seed)
            (out / "joint").mkdir(exist_ok=True)
            save_checkpoint(out / "joint" / "final.dsup", joint.final_state)

        with stages("finetune"):
            fold_ids = None if cfg.run.soups else [0]
            _, tuned = continuous_finetune(train_data, folds, cfg.run.k, cfg.model, cfg.optim,
                                           cfg.finetune_optim(), cfg.augment, cfg.mix, seed,
                                           workers=cfg.run.workers, joint_result=joint, fold_ids=fold_ids)
            for (subset, f), res in sorted(tuned.items()):
                d = out / "finetune" / subset / f"fold{f}"
                d.mkdir(parents=True, exist_ok=True)
                save_checkpoint(d / "best.dsup", res.best_state)
            rows = list(joint.log) + [r for _, res in sorted(tuned.items()) for r in res.log]
            write_csv(out / "metrics.csv", METRICS_HEADER,
                      [{**r, "train_loss": f"{r['train_loss']:.6f}", "val_acc": f"{r['val_acc']:.6f}",
                        "lr": f"{r['lr']:.9g}"} for r in rows])

        with stages("predict"):
            model.load_state_dict(joint.final_state)
            joint_pred = predict_scores(model, test_data.images, test_data.ids, cfg.tta, seed,
                                        cfg.augment.normalize_mean, cfg.augment.normalize_std)
            write_scores(out / "joint" / "scores.csv", joint_pred.sample_ids, joint_pred.scores)
            fold_preds = {}
            for (subset, f), res in sorted(tuned.items()):
                mask = np.array([s == subset for s in test_data.subsets])
                part = test_data.subset(mask)
                model.load_state_dict(res.best_state)
                pred = predict_scores(model, part.images, part.ids, cfg.tta, seed,
                                      cfg.augment.normalize_mean, cfg.augment.normalize_std)
                write_scores(out / "finetune" / subset / f"fold{f}" / "scores.csv", pred.sample_ids, pred.scores)
                fold_preds[(subset, f)] = pred

        with stages("soup"):
            run_folds = sorted({f for _, f in fold_preds})
            soup_pred = None
            if cfg.run.soups:
                soup_pred = PredictionMatrix.concat([
                    soup([fold_preds[(s, f)] for f in run_folds], cfg.run.soup_space) for s in ("A", "B")])
                (out / "soup").mkdir(exist_ok=True)
                write_scores(out / "soup" / "scores.csv", soup_pred.sample_ids, soup_pred.scores)

        with stages("evaluate"):
            report = [_row("joint_only", cfg, False, "off", evaluate(joint_pred, labels, subset_of))]
            for f in run_folds:
                pred = PredictionMatrix.concat([fold_preds[("A", f)], fold_preds[("B", f)]])
                report.append(_row(f"fold{f}", cfg, True, "off", evaluate(pred, labels, subset_of)))
            if soup_pred is not None:
                report.append(_row("soup", cfg, True, f"{len(run_folds)}-fold/{cfg.run.soup_space}",
                                   evaluate(soup_pred, labels, subset_of)))
            write_csv(out / "report.csv", REPORT_HEADER, report)
    stages.finish()
    return PipelineResult(out, report, stages.timings)

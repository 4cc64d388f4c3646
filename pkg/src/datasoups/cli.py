"""Command-line entry point: ``datasoups <command> [options]``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import kernels
from .config import Config, from_dict, load_config, schema_markdown
from .ensemble import PredictionMatrix, evaluate, predict_scores, soup
from .io import (METRICS_HEADER, FormatError, load_checkpoint, load_manifest, read_scores, save_checkpoint,
                 save_manifest, write_csv, write_scores)
from .model import build_model
from .pipeline import REPORT_HEADER, PipelineError, image_set, run_analysis, run_pipeline
from .synth import generate_synthetic
from .train import StageSpec, kfold_split, train_stage

log = logging.getLogger("datasoups")


def _config(args) -> Config:
    cfg = load_config(args.config) if args.config else from_dict({})
    if args.seed is not None:
        cfg.run.seed = args.seed
    if args.threads is not None:
        cfg.run.threads = args.threads
    if getattr(args, "manifest", None):
        cfg.data.manifest = str(Path(args.manifest).resolve())
    return cfg.validate()


def _out(args, default):
    out = Path(args.out_dir) if args.out_dir else Path(default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_synth(args, cfg):
    synth = cfg.synth_config()
    if synth is None:
        from .synth import SynthConfig
        synth = SynthConfig()
    synth.seed = cfg.run.seed if args.seed is not None else synth.seed
    if args.shift is not None:
        synth.subset_shift = args.shift
    if args.train_per_class is not None:
        synth.train_per_class = args.train_per_class
    if args.test_per_class is not None:
        synth.test_per_class = args.test_per_class
    out = _out(args, "data/synth")
    man = generate_synthetic(synth, out)
    print(f"wrote {len(man)} images and {out / 'manifest.csv'}")


def cmd_analyze(args, cfg):
    out = _out(args, "runs/analysis")
    if args.encoder:
        cfg.run.encoder = args.encoder
    if args.checkpoint:
        cfg.run.encoder_checkpoint = args.checkpoint
    cfg.run.validate()
    manifest = load_manifest(cfg.manifest_path())
    run_analysis(cfg, manifest, out)
    for row in open(out / "overlap.csv", encoding="utf-8").read().splitlines()[1:]:
        tag, score = row.split(",")
        print(f"overlap[{tag}] = {score}")


def cmd_kfold(args, cfg):
    manifest = load_manifest(cfg.manifest_path())
    assignment = kfold_split(manifest, cfg.run.k, cfg.run.seed)
    out = Path(args.output) if args.output else _out(args, ".") / "folds.csv"
    save_manifest(manifest.with_folds(assignment), out)
    print(f"wrote {out}")


def _train_data(manifest, subset=None, fold=None):
    train = manifest.select(subset=subset, split="train")
    if fold is None:
        return image_set(train), None
    fit = train.select(exclude_fold=fold)
    held = train.select(folds={fold})
    if len(held) == 0:
        raise FormatError(f"no training rows carry fold {fold}; run `kfold` first")
    return image_set(fit), image_set(held)


def _save_stage(out, res):
    save_checkpoint(out / "final.dsup", res.final_state)
    save_checkpoint(out / "best.dsup", res.best_state)
    rows = [{**r, "train_loss": f"{r['train_loss']:.6f}", "val_acc": f"{r['val_acc']:.6f}", "lr": f"{r['lr']:.9g}"}
            for r in res.log]
    write_csv(out / "metrics.csv", METRICS_HEADER, rows)
    print(f"best epoch {res.best_epoch}; checkpoints in {out}")


def cmd_train(args, cfg):
    out = _out(args, "runs/joint")
    manifest = load_manifest(cfg.manifest_path())
    data, _ = _train_data(manifest)
    model = build_model(cfg.model, cfg.run.seed)
    res = train_stage(StageSpec("joint"), model, data, None, cfg.optim, cfg.augment, cfg.mix, cfg.run.seed)
    _save_stage(out, res)


def cmd_finetune(args, cfg):
    out = _out(args, f"runs/finetune/{args.subset}/fold{args.fold}")
    manifest = load_manifest(cfg.manifest_path())
    fit, held = _train_data(manifest, args.subset, args.fold)
    model = build_model(cfg.model, cfg.run.seed)
    spec = StageSpec(f"finetune_{args.subset}", args.subset, args.fold, load_checkpoint(args.init))
    res = train_stage(spec, model, fit, held, cfg.finetune_optim(), cfg.augment, cfg.mix, cfg.run.seed)
    _save_stage(out, res)


def cmd_predict(args, cfg):
    manifest = load_manifest(cfg.manifest_path()).select(subset=args.subset, split=args.split)
    data = image_set(manifest)
    model = build_model(cfg.model, cfg.run.seed)
    model.load_state_dict(load_checkpoint(args.checkpoint))
    tta = cfg.tta
    if args.no_tta:
        from .ensemble import identity_tta
        tta = identity_tta()
    pred = predict_scores(model, data.images, data.ids, tta, cfg.run.seed,
                          cfg.augment.normalize_mean, cfg.augment.normalize_std)
    write_scores(args.output, pred.sample_ids, pred.scores)
    print(f"wrote {len(pred.sample_ids)} rows to {args.output}")


def cmd_soup(args, cfg):
    mats = [PredictionMatrix(*read_scores(p)) for p in args.scores]
    out = soup(mats, args.space or cfg.run.soup_space)
    write_scores(args.output, out.sample_ids, out.scores)
    print(f"averaged {len(mats)} matrices into {args.output}")


def cmd_eval(args, cfg):
    manifest = load_manifest(cfg.manifest_path(), check_files=False)
    pred = PredictionMatrix(*read_scores(args.scores))
    labels = {r.sample_id: r.class_id for r in manifest}
    subset_of = {r.sample_id: r.subset for r in manifest}
    m = evaluate(pred, labels, subset_of)
    row = m.row()
    shown = {k: (v if v != "" else "n/a") for k, v in row.items()}
    print(f"acc_A {shown['acc_A']}  acc_B {shown['acc_B']}  mAcc {shown['mAcc']}  (exact {shown['mAcc_exact']})")
    if args.output:
        write_csv(args.output, REPORT_HEADER[6:], [row])


def cmd_pipeline(args, cfg):
    if args.workers is not None:
        cfg.run.workers = args.workers
    if args.no_soups:
        cfg.run.soups = False
    if args.no_analyze:
        cfg.run.analyze = False
    out = args.out_dir or (cfg.base_dir / "runs" / f"seed{cfg.run.seed}")
    res = run_pipeline(cfg, out)
    for r in res.report:
        print(f"{r['row']:<11} acc_A {r['acc_A']:>5}  acc_B {r['acc_B']:>5}  mAcc {r['mAcc']:>5}")
    print(f"artifacts in {res.out_dir}")


def cmd_gradcheck(args, cfg):
    from .gradcheck import run_all
    worst = 0.0
    for name, err in run_all(seed=cfg.run.seed, eps=args.eps, include_model=not args.ops_only).items():
        flag = "ok" if err < args.tol else "FAIL"
        print(f"{name:<24} {err:.3e}  {flag}")
        worst = max(worst, err)
    print(f"max relative error {worst:.3e} (tolerance {args.tol:g})")
    return 0 if worst < args.tol else 1


def cmd_config_schema(args, cfg):
    text = schema_markdown()
    if args.output:
        Path(args.output).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def build_parser():
    p = argparse.ArgumentParser(prog="datasoups", description="Desk-scale continuous fine-tuning, TTA and data soups.")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int, help="override run.seed")
    p.add_argument("--out-dir", help="output directory")
    p.add_argument("--threads", type=int, help="BLAS threads (default: run.threads)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate the synthetic two-subset dataset")
    s.add_argument("--shift", type=float, help="subset B shift magnitude (0 = same distribution)")
    s.add_argument("--train-per-class", type=int)
    s.add_argument("--test-per-class", type=int)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("analyze", help="class histogram, t-SNE and overlap scores")
    s.add_argument("--manifest")
    s.add_argument("--encoder", choices=["histogram", "swinlet"])
    s.add_argument("--checkpoint", help="weights for the swinlet encoder")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("kfold", help="assign stratified folds to the training split")
    s.add_argument("--manifest")
    s.add_argument("--output", help="manifest to write (default OUT_DIR/folds.csv)")
    s.set_defaults(func=cmd_kfold)

    s = sub.add_parser("train", help="joint stage on all training data")
    s.add_argument("--manifest")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("finetune", help="fine-tune one subset with one fold held out")
    s.add_argument("--manifest", help="manifest with folds (see `kfold`)")
    s.add_argument("--init", required=True, help="joint checkpoint")
    s.add_argument("--subset", required=True, choices=["A", "B"])
    s.add_argument("--fold", required=True, type=int)
    s.set_defaults(func=cmd_finetune)

    s = sub.add_parser("predict", help="TTA scores for a checkpoint")
    s.add_argument("--manifest")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--subset", choices=["A", "B"])
    s.add_argument("--split", default="test", choices=["train", "test"])
    s.add_argument("--no-tta", action="store_true")
    s.add_argument("--output", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("soup", help="average score files")
    s.add_argument("scores", nargs="+")
    s.add_argument("--space", choices=["prob", "log"])
    s.add_argument("--output", required=True)
    s.set_defaults(func=cmd_soup)

    s = sub.add_parser("eval", help="per-subset accuracy and mAcc of a score file")
    s.add_argument("--manifest")
    s.add_argument("--scores", required=True)
    s.add_argument("--output", help="optional metrics CSV")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("pipeline", help="analyze, joint, k-fold fine-tune, TTA, soup, evaluate")
    s.add_argument("--workers", type=int)
    s.add_argument("--no-soups", action="store_true", help="fine-tune and evaluate fold 0 only")
    s.add_argument("--no-analyze", action="store_true")
    s.set_defaults(func=cmd_pipeline)

    s = sub.add_parser("gradcheck", help="finite-difference check of every op and a tiny classifier")
    s.add_argument("--eps", type=float, default=1e-5)
    s.add_argument("--tol", type=float, default=1e-5)
    s.add_argument("--ops-only", action="store_true")
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("config-schema", help="print the configuration reference")
    s.add_argument("--output")
    s.set_defaults(func=cmd_config_schema)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    log.debug("kernel backend: %s", kernels.BACKEND)
    try:
        cfg = _config(args)
        with threadpool_limits(limits=cfg.run.threads):
            code = args.func(args, cfg)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FormatError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return code or 0


if __name__ == "__main__":
    sys.exit(main())

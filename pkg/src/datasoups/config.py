"""JSON run configuration.

One document with sections ``data``, ``model``, ``augment``, ``mix``,
``optim``, ``tta`` and ``run``.  Each section maps onto the dataclass of the
module it configures; unknown keys are rejected so typos fail loudly.
"""
from __future__ import annotations

import json
from dataclasses import MISSING, asdict, dataclass, field, fields, replace
from pathlib import Path

from .augment import AugConfig
from .ensemble import TtaConfig
from .mix_loss import MixConfig
from .model import ModelConfig
from .synth import SynthConfig
from .train import OptimConfig


@dataclass
class DataConfig:
    manifest: str = "data/manifest.csv"
    # when set and the manifest is missing, the pipeline generates it first
    synth: dict | None = None


@dataclass
class RunConfig:
    seed: int = 0
    k: int = 5
    finetune_epochs: int = 10
    finetune_warmup: float = 1
    soups: bool = True
    soup_space: str = "prob"
    analyze: bool = True
    encoder: str = "histogram"
    encoder_checkpoint: str | None = None
    tsne_iters: int = 1000
    tsne_perplexity: float = 30.0
    workers: int = 1
    threads: int = 1

    def validate(self):
        if self.k < 2:
            raise ValueError("run.k must be >= 2")
        if self.finetune_epochs < 1 or not 0 <= self.finetune_warmup < self.finetune_epochs:
            raise ValueError("need 0 <= run.finetune_warmup < run.finetune_epochs")
        if self.soup_space not in ("prob", "log"):
            raise ValueError("run.soup_space must be 'prob' or 'log'")
        if self.encoder not in ("histogram", "swinlet"):
            raise ValueError("run.encoder must be 'histogram' or 'swinlet'")
        if self.encoder == "swinlet" and not self.encoder_checkpoint:
            raise ValueError("run.encoder 'swinlet' needs run.encoder_checkpoint")
        if self.workers < 1 or self.threads < 1:
            raise ValueError("run.workers and run.threads must be >= 1")
        return self


SECTIONS = {
    "data": DataConfig,
    "model": ModelConfig,
    "augment": AugConfig,
    "mix": MixConfig,
    "optim": OptimConfig,
    "tta": TtaConfig,
    "run": RunConfig,
}


@dataclass
class Config:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    augment: AugConfig = field(default_factory=AugConfig)
    mix: MixConfig = field(default_factory=MixConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    tta: TtaConfig = field(default_factory=TtaConfig)
    run: RunConfig = field(default_factory=RunConfig)
    base_dir: Path = field(default_factory=Path.cwd, compare=False)

    def validate(self):
        for name in SECTIONS:
            section = getattr(self, name)
            if hasattr(section, "validate"):
                section.validate()
        return self

    def finetune_optim(self):
        return replace(self.optim, total_epochs=self.run.finetune_epochs,
                       warmup_epochs=self.run.finetune_warmup)

    def manifest_path(self):
        p = Path(self.data.manifest)
        return p if p.is_absolute() else self.base_dir / p

    def synth_config(self):
        if self.data.synth is None:
            return None
        return _build(SynthConfig, self.data.synth, "data.synth")

    def to_dict(self):
        return {name: _plain(asdict(getattr(self, name))) for name in SECTIONS}


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _build(cls, values, where):
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ValueError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    for name, value in values.items():
        default = known[name].default
        # tuples arrive from JSON as lists
        if isinstance(default, tuple) and isinstance(value, list):
            value = tuple(value)
        kwargs[name] = value
    return cls(**kwargs)


def from_dict(doc, base_dir=None):
    unknown = sorted(set(doc) - set(SECTIONS))
    if unknown:
        raise ValueError(f"unknown config sections {unknown}")
    parts = {name: _build(cls, doc.get(name, {}), name) for name, cls in SECTIONS.items()}
    cfg = Config(**parts, base_dir=Path(base_dir) if base_dir is not None else Path.cwd())
    return cfg.validate()


def load_config(path):
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    return from_dict(doc, base_dir=path.parent)


def save_config(cfg: Config, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=False)
        fh.write("\n")


def schema_markdown():
    """Markdown table of every section, key and default."""
    lines = ["# Configuration reference", "",
             "Generated by `datasoups config-schema`. A config file is one JSON object",
             "whose sections are listed below; every key is optional.", ""]
    for name, cls in SECTIONS.items():
        lines += [f"## `{name}`", "", "| key | default |", "|---|---|"]
        for f in fields(cls):
            if f.default is not MISSING:
                default = f.default
            elif f.default_factory is not MISSING:
                default = f.default_factory()
            else:
                default = None
            lines.append(f"| `{f.name}` | `{json.dumps(_plain(default))}` |")
        lines.append("")
    return "\n".join(lines)

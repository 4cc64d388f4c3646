"""File formats: PPM images, manifest CSV, checkpoints, score CSVs, metric logs."""
from __future__ import annotations

import csv
import io as _io
import os
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

CLASS_NAMES = ("unfertilized", "_PKCa", "N_KCa", "NP_Ca", "NPK_", "NPKCa", "NPKCa+m+s")
SUBSETS = ("A", "B")
SUBSET_NAMES = {"A": "WW2020", "B": "WR2021"}
MANIFEST_HEADER = ["sample_id", "relpath", "subset", "class_id", "split", "fold"]
METRICS_HEADER = ["epoch", "stage", "subset", "fold", "train_loss", "val_acc", "lr"]
CKPT_MAGIC = b"DSUP"
CKPT_VERSION = 1
_DTYPE_CODES = {np.dtype("<f4"): 1, np.dtype("<f8"): 2}
_CODE_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}


class FormatError(ValueError):
    pass


# -- images ---------------------------------------------------------------

def _ppm_tokens(buf, count, pos):
    out = []
    n = len(buf)
    while len(out) < count:
        while pos < n and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos:pos + 1] == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FormatError("truncated PPM header")
        out.append(buf[start:pos])
    return out, pos


def read_ppm(path):
    """Read a binary (P6) PPM; returns float64 (H, W, 3) in [0, 1]."""
    buf = Path(path).read_bytes()
    toks, pos = _ppm_tokens(buf, 4, 0)
    if toks[0] != b"P6":
        raise FormatError(f"{path}: not a P6 PPM")
    w, h, maxval = (int(t) for t in toks[1:])
    if not 0 < maxval < 65536:
        raise FormatError(f"{path}: bad maxval {maxval}")
    pos += 1  # single whitespace after maxval
    dtype = np.dtype("u1") if maxval < 256 else np.dtype(">u2")
    n = w * h * 3
    if len(buf) - pos < n * dtype.itemsize:
        raise FormatError(f"{path}: truncated pixel data")
    data = np.frombuffer(buf, dtype=dtype, count=n, offset=pos)
    return data.reshape(h, w, 3).astype(np.float64) / maxval


def write_ppm(path, img):
    arr = np.clip(np.floor(np.asarray(img, dtype=np.float64) * 255.0 + 0.5), 0, 255).astype(np.uint8)
    h, w = arr.shape[:2]
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(arr.tobytes())


def read_image(path):
    """Decode by extension: PPM always, PNG/JPEG through Pillow when installed."""
    path = Path(path)
    if path.suffix.lower() in (".ppm", ".pnm"):
        return read_ppm(path)
    try:
        from PIL import Image
    except ImportError as exc:  # pragma: no cover
        raise FormatError(f"{path}: only PPM is supported without Pillow") from exc
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


# -- manifest -------------------------------------------------------------

@dataclass(frozen=True)
class Sample:
    sample_id: str
    relpath: str
    subset: str
    class_id: int
    split: str
    fold: int = -1


class Manifest:
    def __init__(self, rows=(), root=None):
        self.rows = list(rows)
        self.root = Path(root) if root is not None else None
        seen = set()
        for r in self.rows:
            if r.sample_id in seen:
                raise FormatError(f"duplicate sample_id {r.sample_id!r}")
            seen.add(r.sample_id)
            if r.subset not in SUBSETS:
                raise FormatError(f"{r.sample_id}: subset must be A or B, got {r.subset!r}")
            if not 0 <= r.class_id < len(CLASS_NAMES):
                raise FormatError(f"{r.sample_id}: bad class_id {r.class_id}")
            if r.split not in ("train", "test"):
                raise FormatError(f"{r.sample_id}: split must be train or test")
        self._by_id = {r.sample_id: r for r in self.rows}

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def __getitem__(self, sample_id):
        return self._by_id[sample_id]

    def select(self, subset=None, split=None, folds=None, exclude_fold=None):
        rows = [r for r in self.rows
                if (subset is None or r.subset == subset)
                and (split is None or r.split == split)
                and (folds is None or r.fold in folds)
                and (exclude_fold is None or r.fold != exclude_fold)]
        return Manifest(rows, self.root)

    def with_folds(self, assignment):
        rows = [replace(r, fold=assignment.get(r.sample_id, -1)) for r in self.rows]
        return Manifest(rows, self.root)

    def path(self, row):
        return (self.root / row.relpath) if self.root is not None else Path(row.relpath)

    def ids(self):
        return [r.sample_id for r in self.rows]


def load_manifest(path, check_files=True):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != MANIFEST_HEADER:
            raise FormatError(f"{path}: header must be {','.join(MANIFEST_HEADER)}")
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != 6:
                raise FormatError(f"{path}:{lineno}: expected 6 fields")
            try:
                cls = int(rec[3])
                fold = int(rec[5])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: bad integer field") from exc
            rows.append(Sample(rec[0], rec[1], rec[2], cls, rec[4], fold))
    man = Manifest(rows, path.parent)
    if check_files:
        for r in man:
            if not man.path(r).exists():
                raise FileNotFoundError(f"{r.sample_id}: missing image {man.path(r)}")
    return man


def save_manifest(manifest, path):
    """Write the manifest; relpaths are re-based so they resolve from the new location."""
    path = Path(path)
    rebase = manifest.root is not None and manifest.root.resolve() != path.parent.resolve()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for r in manifest:
            rel = r.relpath
            if rebase:
                rel = Path(os.path.relpath(manifest.path(r).resolve(), path.parent.resolve())).as_posix()
            w.writerow([r.sample_id, rel, r.subset, r.class_id, r.split, r.fold])


def load_images(manifest, ids=None):
    ids = manifest.ids() if ids is None else ids
    return np.stack([read_image(manifest.path(manifest[i])) for i in ids]) if ids else np.zeros((0, 0, 0, 3))


# -- checkpoints ----------------------------------------------------------

def save_checkpoint(path, tensors):
    """Write named arrays in the DSUP v1 layout (little-endian)."""
    buf = _io.BytesIO()
    buf.write(CKPT_MAGIC)
    buf.write(struct.pack("<II", CKPT_VERSION, len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        dt = arr.dtype.newbyteorder("<")
        if dt not in _DTYPE_CODES:
            raise TypeError(f"{name}: unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(struct.pack("<B", _DTYPE_CODES[dt]))
        buf.write(np.ascontiguousarray(arr, dtype=dt).tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path):
    try:
        return _parse_checkpoint(path, Path(path).read_bytes())
    except (struct.error, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"{path}: truncated or corrupt checkpoint") from exc


def _parse_checkpoint(path, data):
    if data[:4] != CKPT_MAGIC:
        raise FormatError(f"{path}: bad magic")
    version, count = struct.unpack_from("<II", data, 4)
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    pos = 12
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", data, pos)
        pos += 4
        name = data[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = struct.unpack_from("<I", data, pos)
        pos += 4
        dims = struct.unpack_from(f"<{rank}I", data, pos)
        pos += 4 * rank
        (code,) = struct.unpack_from("<B", data, pos)
        pos += 1
        dt = _CODE_DTYPES.get(code)
        if dt is None:
            raise FormatError(f"{path}: unknown dtype code {code}")
        n = int(np.prod(dims, dtype=np.int64))
        out[name] = np.frombuffer(data, dtype=dt, count=n, offset=pos).reshape(dims).copy()
        pos += n * dt.itemsize
    if pos != len(data):
        raise FormatError(f"{path}: trailing bytes")
    return out


# -- score files ----------------------------------------------------------

def score_header(k=len(CLASS_NAMES)):
    return ["sample_id"] + [f"p{i}" for i in range(k)]


def write_scores(path, ids, scores):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(score_header(scores.shape[1]))
        for sid, row in zip(ids, scores):
            w.writerow([sid] + [f"{v:.9g}" for v in row])


def read_scores(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "sample_id" or header[1:] != score_header(len(header) - 1)[1:]:
            raise FormatError(f"{path}: bad score header")
        ids, rows = [], []
        for rec in reader:
            if rec:
                ids.append(rec[0])
                rows.append([float(v) for v in rec[1:]])
    return ids, np.array(rows, dtype=np.float64).reshape(len(ids), len(header) - 1)


# -- metric logs ----------------------------------------------------------

def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([r[h] for h in header] if isinstance(r, dict) else list(r))


def read_csv(path, header=None):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        got = next(reader, None)
        if header is not None and got != list(header):
            raise FormatError(f"{path}: header {got} != {list(header)}")
        return [dict(zip(got, rec)) for rec in reader if rec]

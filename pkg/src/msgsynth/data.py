"""Patch corpus ingestion, deterministic splits, image decoding and pyramids.

A corpus is a directory tree ``<root>/<label>/**/*.png`` with labels ``0``
(IDC negative) and ``1`` (IDC positive). Records are kept in lexicographic
order of their root-relative POSIX path, which makes every split
independent of filesystem enumeration order.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .autodiff import Tensor

log = logging.getLogger(__name__)

LABELS = (0, 1)
STUDY_GAN_PER_CLASS = 40_000
STUDY_CLS_PER_CLASS = 38_000


@dataclass(frozen=True)
class PatchRecord:
    path: str  # relative to the corpus root, POSIX separators
    label: int


@dataclass
class PatchDataset:
    root: Path
    records: list[PatchRecord]
    warnings: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def counts(self) -> dict[int, int]:
        out = {label: 0 for label in LABELS}
        for rec in self.records:
            out[rec.label] += 1
        return out

    @property
    def labels(self) -> np.ndarray:
        return np.array([r.label for r in self.records], dtype=np.int64)

    def path_of(self, index: int) -> Path:
        return self.root / self.records[index].path


class DataError(ValueError):
    pass


def _is_valid_png(path: Path) -> bool:
    try:
        with Image.open(path) as img:
            if img.format != "PNG":
                return False
            img.verify()
        return True
    except (UnidentifiedImageError, SyntaxError, OSError, ValueError) as exc:
        if isinstance(exc, PermissionError):
            raise
        return False


def ingest_directory(root, verify: bool = True) -> PatchDataset:
    """Index every PNG under ``root/0`` and ``root/1``.

    Non-PNG or undecodable files are skipped and reported in ``warnings``.
    A missing or empty class directory is an error, as is a file that cannot
    be opened at all (permissions).
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"corpus root {root} does not exist")
    records, warnings = [], []
    for label in LABELS:
        class_dir = root / str(label)
        if not class_dir.is_dir():
            raise DataError(f"missing class directory {class_dir}")
        for path in sorted(p for p in class_dir.rglob("*") if p.is_file()):
            rel = path.relative_to(root).as_posix()
            if path.suffix.lower() != ".png":
                warnings.append(f"{rel}: not a PNG file")
                continue
            if verify and not _is_valid_png(path):
                warnings.append(f"{rel}: unreadable or corrupt image")
                continue
            records.append(PatchRecord(rel, label))
    records.sort(key=lambda r: r.path)
    ds = PatchDataset(root, records, warnings)
    for label, n in ds.counts.items():
        if n == 0:
            raise DataError(f"class {label} has no usable images under {root}")
    for w in warnings:
        log.warning("ingest: %s", w)
    return ds


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------
@dataclass
class SplitPlan:
    seed: int
    gan_pool: list[int]
    cls_pool: list[int]
    train: list[int]
    test: list[int]

    def subsets(self) -> dict[str, list[int]]:
        return {"gan_pool": self.gan_pool, "cls_pool": self.cls_pool,
                "train": self.train, "test": self.test}


def proportional_counts(n: int, gan: int = STUDY_GAN_PER_CLASS,
                        cls: int = STUDY_CLS_PER_CLASS) -> tuple[int, int]:
    """Split ``n`` items in the ratio gan:cls; floors first, leftover to gan."""
    total = gan + cls
    n_gan = n * gan // total
    n_cls = n * cls // total
    return n_gan + (n - n_gan - n_cls), n_cls


def _class_permutation(indices: np.ndarray, seed: int, label: int, salt: int) -> np.ndarray:
    rng = np.random.default_rng([seed, label, salt])
    return indices[rng.permutation(len(indices))]


def make_split(ds: PatchDataset, seed: int, scale: bool = False,
               gan_per_class: int = STUDY_GAN_PER_CLASS,
               cls_per_class: int = STUDY_CLS_PER_CLASS,
               train_frac: float = 0.7) -> SplitPlan:
    """Per class, a seeded shuffle of canonical order gives ``gan_per_class``
    items to the GAN pool and the next ``cls_per_class`` to the classification
    pool. With ``scale`` the class count is divided in the same ratio instead.
    The classification pool is further split into train/test."""
    labels = ds.labels
    gan_pool, cls_pool = [], []
    for label in LABELS:
        idx = np.flatnonzero(labels == label)
        if scale:
            n_gan, n_cls = proportional_counts(len(idx), gan_per_class, cls_per_class)
        else:
            n_gan, n_cls = gan_per_class, cls_per_class
            if len(idx) < n_gan + n_cls:
                raise DataError(f"class {label} has {len(idx)} images, need {n_gan + n_cls} "
                                f"(use proportional scaling for smaller corpora)")
        perm = _class_permutation(idx, seed, label, 0)
        gan_pool.extend(perm[:n_gan].tolist())
        cls_pool.extend(perm[n_gan:n_gan + n_cls].tolist())
    gan_pool.sort()
    cls_pool.sort()
    train, test = train_test_split(cls_pool, labels[cls_pool], train_frac, seed)
    return SplitPlan(seed, gan_pool, cls_pool, train, test)


def train_test_split(pool: Sequence[int], labels: Sequence[int], train_frac: float = 0.7,
                     seed: int = 0) -> tuple[list[int], list[int]]:
    """Stratified split with ``floor(n * frac)`` training items overall.

    Each class gets ``floor(n_c * frac)``; slots left over go to the classes
    with the largest fractional remainders (ties to the lower label).
    """
    if not 0 < train_frac < 1:
        raise ValueError("train_frac must lie in (0, 1)")
    pool = np.asarray(pool, dtype=np.int64)
    labels = np.asarray(labels)
    if len(pool) == 0:
        raise DataError("cannot split an empty pool")
    frac = Fraction(repr(train_frac))
    total_train = int(len(pool) * frac)
    per_class = {}
    for label in np.unique(labels):
        n_c = int((labels == label).sum())
        exact = n_c * frac
        per_class[int(label)] = [int(exact), exact - int(exact)]
    spare = total_train - sum(v[0] for v in per_class.values())
    for label in sorted(per_class, key=lambda k: (-per_class[k][1], k))[:spare]:
        per_class[label][0] += 1
    train, test = [], []
    for label, (n_train, _) in per_class.items():
        perm = _class_permutation(pool[labels == label], seed, label, 1)
        train.extend(perm[:n_train].tolist())
        test.extend(perm[n_train:].tolist())
    return sorted(train), sorted(test)


def write_split_manifest(plan: SplitPlan, ds: PatchDataset, path) -> Path:
    """CSV with one ``path,label,subset`` row per subset membership."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["path", "label", "subset"])
        for subset, indices in plan.subsets().items():
            for i in indices:
                rec = ds.records[i]
                writer.writerow([rec.path, rec.label, subset])
    return path


def read_split_manifest(path) -> dict[str, list[PatchRecord]]:
    out: dict[str, list[PatchRecord]] = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.setdefault(row["subset"], []).append(PatchRecord(row["path"], int(row["label"])))
    return out


def restrict(ds: PatchDataset, records: Sequence[PatchRecord]) -> PatchDataset:
    """Sub-dataset holding only ``records`` that are present in ``ds``."""
    present = set(ds.records)
    keep = sorted((r for r in records if r in present), key=lambda r: r.path)
    return PatchDataset(ds.root, keep, list(ds.warnings))


# ---------------------------------------------------------------------------
# images
# ---------------------------------------------------------------------------
def _bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Interpolation weights with half-pixel centres and clamped edges."""
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    w = src - lo
    mat = np.zeros((n_out, n_in))
    mat[np.arange(n_out), lo] += 1.0 - w
    mat[np.arange(n_out), hi] += w
    return mat


def bilinear_resize(img: np.ndarray, height: int, width: int) -> np.ndarray:
    """Resize a C x H x W float array."""
    c, h, w = img.shape
    if (h, w) == (height, width):
        return img.astype(np.float64)
    return np.einsum("ij,cjk,lk->cil", _bilinear_matrix(h, height), img, _bilinear_matrix(w, width))


def normalize(pixels: np.ndarray) -> np.ndarray:
    return pixels.astype(np.float64) / 127.5 - 1.0


def denormalize(img: np.ndarray) -> np.ndarray:
    """[-1, 1] floats to uint8 (values outside the range are clamped)."""
    return np.rint((np.clip(img, -1.0, 1.0) + 1.0) * 127.5).astype(np.uint8)


def load_and_normalize(path, size: int, dtype=np.float32) -> np.ndarray:
    """Decode an 8-bit RGB PNG into a 3 x size x size array in [-1, 1]."""
    try:
        with Image.open(path) as img:
            if img.mode != "RGB":
                raise DataError(f"{path}: expected 3-channel RGB, got mode {img.mode}")
            pixels = np.asarray(img, dtype=np.uint8)
    except (UnidentifiedImageError, OSError) as exc:
        raise DataError(f"{path}: cannot decode image ({exc})") from exc
    chw = pixels.transpose(2, 0, 1).astype(np.float64)
    return normalize(bilinear_resize(chw, size, size)).astype(dtype)


def load_images(ds: PatchDataset, indices: Sequence[int] | None, size: int,
                dtype=np.float32) -> tuple[np.ndarray, np.ndarray]:
    indices = range(len(ds)) if indices is None else indices
    images = np.stack([load_and_normalize(ds.path_of(i), size, dtype) for i in indices]) \
        if len(indices) else np.zeros((0, 3, size, size), dtype=dtype)
    labels = np.array([ds.records[i].label for i in indices], dtype=np.int64)
    return images, labels


def save_png(img: np.ndarray, path) -> None:
    """Write a 3 x H x W image in [-1, 1] as an 8-bit RGB PNG."""
    Image.fromarray(denormalize(img).transpose(1, 2, 0), mode="RGB").save(path, format="PNG")


# ---------------------------------------------------------------------------
# batches
# ---------------------------------------------------------------------------
def _pool2(arr: np.ndarray) -> np.ndarray:
    n, c, h, w = arr.shape
    return arr.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))


def build_pyramid(batch, depth: int) -> list[Tensor]:
    """Image pyramid (coarsest first) by repeated 2x2 average pooling."""
    arr = batch.data if isinstance(batch, Tensor) else np.asarray(batch)
    size = arr.shape[-1]
    if depth < 1 or arr.shape[-2] != size or size != 4 * 2 ** (depth - 1):
        raise ValueError(f"image size {arr.shape[-2:]} is not 4*2^(depth-1) for depth {depth}")
    levels = [arr]
    for _ in range(depth - 1):
        levels.append(_pool2(levels[-1]).astype(arr.dtype))
    return [Tensor(level) for level in reversed(levels)]


def batch_iterator(subset: Sequence, batch_size: int, seed: int, epoch: int) -> Iterator:
    """Seeded per-epoch shuffle of ``subset``; the last partial batch is kept."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.random.default_rng([seed, epoch]).permutation(len(subset))
    for start in range(0, len(order), batch_size):
        chunk = order[start:start + batch_size]
        if isinstance(subset, np.ndarray):
            yield subset[chunk]
        else:
            yield [subset[i] for i in chunk]

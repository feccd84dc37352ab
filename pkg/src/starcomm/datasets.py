"""On-disk dataset formats.

Export directory layout::

    manifest.txt            key = value lines (version, task, n_classes, geometry, counts, seed)
    train/labels.txt        one integer label per line
    train/000000.bin        image tensor
    train/000000.mask.bin   occlusion mask tensor (only when the split has masks)
    test/...

Tensor files: ``b"SCT1"``, uint32 rank, uint32 dims, then float32 values, all
little-endian and row-major. IDX digit files follow the usual layout: two zero
bytes, a type code (0x08 = unsigned byte), the rank, big-endian int32 dims, data.
"""
from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

from .environment import Dataset, DataSplits

TENSOR_MAGIC = b"SCT1"
FORMAT_VERSION = 1


class DatasetFormatError(ValueError):
    pass


def write_tensor(path: Path, array: np.ndarray) -> None:
    arr = np.ascontiguousarray(array, dtype="<f4")
    header = TENSOR_MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    Path(path).write_bytes(header + arr.tobytes())


def read_tensor(path: Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != TENSOR_MAGIC:
        raise DatasetFormatError(f"{path}: bad magic at offset 0")
    if len(raw) < 8:
        raise DatasetFormatError(f"{path}: truncated header at offset 4")
    (ndim,) = struct.unpack_from("<I", raw, 4)
    end = 8 + 4 * ndim
    if len(raw) < end:
        raise DatasetFormatError(f"{path}: truncated shape at offset 8")
    shape = struct.unpack_from(f"<{ndim}I", raw, 8)
    n = int(np.prod(shape, dtype=np.int64))
    if len(raw) != end + 4 * n:
        raise DatasetFormatError(f"{path}: expected {4 * n} data bytes at offset {end}, found {len(raw) - end}")
    return np.frombuffer(raw, dtype="<f4", offset=end).reshape(shape).astype(np.float32)


def export_dataset(splits: DataSplits, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _, c, h, w = splits.train.images.shape
    lines = [f"version = {FORMAT_VERSION}", f"task = {splits.task}", f"n_classes = {splits.n_classes}",
             f"channels = {c}", f"height = {h}", f"width = {w}", f"seed = {splits.seed}",
             f"train = {len(splits.train)}", f"test = {len(splits.test)}"]
    (out / "manifest.txt").write_text("\n".join(lines) + "\n")
    for name in ("train", "test"):
        ds: Dataset = getattr(splits, name)
        d = out / name
        d.mkdir(exist_ok=True)
        (d / "labels.txt").write_text("".join(f"{int(k)}\n" for k in ds.labels))
        for i in range(len(ds)):
            write_tensor(d / f"{i:06d}.bin", ds.images[i])
            if ds.masks is not None:
                write_tensor(d / f"{i:06d}.mask.bin", ds.masks[i].astype(np.float32))
    return out


def import_dataset(path: str | Path) -> DataSplits:
    root = Path(path)
    manifest = {}
    for lineno, line in enumerate((root / "manifest.txt").read_text().splitlines(), 1):
        if not line.strip():
            continue
        if "=" not in line:
            raise DatasetFormatError(f"manifest line {lineno}: expected key = value")
        k, v = line.split("=", 1)
        manifest[k.strip()] = v.strip()
    if int(manifest.get("version", -1)) != FORMAT_VERSION:
        raise DatasetFormatError(f"unsupported dataset version {manifest.get('version')}")
    shape = (int(manifest["channels"]), int(manifest["height"]), int(manifest["width"]))
    out = {}
    for name in ("train", "test"):
        d = root / name
        labels = np.array([int(x) for x in (d / "labels.txt").read_text().split()], dtype=np.int64)
        if len(labels) != int(manifest[name]):
            raise DatasetFormatError(f"{name}: manifest says {manifest[name]} samples, labels.txt has {len(labels)}")
        images = np.empty((len(labels),) + shape, dtype=np.float32)
        has_masks = (d / "000000.mask.bin").exists()
        masks = np.zeros((len(labels),) + shape[1:], dtype=bool) if has_masks else None
        for i in range(len(labels)):
            img = read_tensor(d / f"{i:06d}.bin")
            if img.shape != shape:
                raise DatasetFormatError(f"{name}/{i:06d}.bin has shape {img.shape}, expected {shape}")
            images[i] = img
            if has_masks:
                masks[i] = read_tensor(d / f"{i:06d}.mask.bin") > 0.5
        out[name] = Dataset(images, labels, masks)
    return DataSplits(out["train"], out["test"], int(manifest["n_classes"]), manifest.get("task", "maps"),
                      int(manifest.get("seed", 0)))


# --------------------------------------------------------------------- IDX

def _open_bytes(path: Path) -> bytes:
    raw = path.read_bytes()
    return gzip.decompress(raw) if path.suffix == ".gz" else raw


def parse_idx(raw: bytes, name: str = "<idx>") -> np.ndarray:
    if len(raw) < 4:
        raise DatasetFormatError(f"{name}: truncated magic at offset 0")
    if raw[0] != 0 or raw[1] != 0:
        raise DatasetFormatError(f"{name}: nonzero magic prefix at offset 0")
    if raw[2] != 0x08:
        raise DatasetFormatError(f"{name}: unsupported element type 0x{raw[2]:02x} at offset 2")
    ndim = raw[3]
    if len(raw) < 4 + 4 * ndim:
        raise DatasetFormatError(f"{name}: truncated dimensions at offset 4")
    dims = struct.unpack_from(f">{ndim}i", raw, 4)
    start = 4 + 4 * ndim
    n = int(np.prod(dims, dtype=np.int64))
    if len(raw) - start != n:
        raise DatasetFormatError(f"{name}: expected {n} data bytes at offset {start}, found {len(raw) - start}")
    return np.frombuffer(raw, dtype=np.uint8, offset=start).reshape(dims)


def write_idx(path: str | Path, array: np.ndarray) -> None:
    arr = np.ascontiguousarray(array, dtype=np.uint8)
    header = bytes([0, 0, 0x08, arr.ndim]) + struct.pack(f">{arr.ndim}i", *arr.shape)
    Path(path).write_bytes(header + arr.tobytes())


def _find(root: Path, stem: str) -> Path:
    for cand in (root / stem, root / (stem + ".gz")):
        if cand.exists():
            return cand
    raise FileNotFoundError(f"missing IDX file {stem} in {root}")


def load_idx_digits(source_dir: str | Path, n_train: int | None = None, n_test: int | None = None) -> DataSplits:
    root = Path(source_dir)
    out = {}
    for name, prefix, limit in (("train", "train", n_train), ("test", "t10k", n_test)):
        img_path = _find(root, f"{prefix}-images-idx3-ubyte")
        lab_path = _find(root, f"{prefix}-labels-idx1-ubyte")
        images = parse_idx(_open_bytes(img_path), img_path.name)
        labels = parse_idx(_open_bytes(lab_path), lab_path.name)
        if images.ndim != 3 or labels.ndim != 1 or len(images) != len(labels):
            raise DatasetFormatError(f"{name}: image/label files disagree: {images.shape} vs {labels.shape}")
        if limit:
            images, labels = images[:limit], labels[:limit]
        out[name] = Dataset((images[:, None] / 255.0).astype(np.float32), labels.astype(np.int64))
    return DataSplits(out["train"], out["test"], 10, "mnist", 0)

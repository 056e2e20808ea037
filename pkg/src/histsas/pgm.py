"""Binary PGM (P5) images and the dataset manifest that indexes them."""

from __future__ import annotations

import os
from pathlib import Path
from typing import Union

import numpy as np

from .datasets import PARTITIONS, ClassInfo, DatasetSplit
from .errors import InputError

PathLike = Union[str, os.PathLike]
MANIFEST_HEADER = "# histsas-manifest v1"


def quantize(image: np.ndarray, bits: int = 16) -> np.ndarray:
    maxval = _maxval(bits)
    return np.rint(np.clip(image, 0.0, 1.0) * maxval).astype(np.uint16 if bits == 16 else np.uint8)


def _maxval(bits: int) -> int:
    if bits not in (8, 16):
        raise ValueError(f"PGM depth must be 8 or 16 bits, got {bits}")
    return 255 if bits == 8 else 65535


def write_pgm(path: PathLike, image: np.ndarray, bits: int = 16) -> None:
    """Write a [0, 1] float image as P5; 16-bit samples are big-endian."""
    image = np.asarray(image)
    if image.ndim != 2:
        raise InputError(f"PGM images are 2-d, got shape {image.shape}")
    q = quantize(image, bits)
    h, w = q.shape
    header = f"P5\n{w} {h}\n{_maxval(bits)}\n".encode("ascii")
    body = q.astype(">u2").tobytes() if bits == 16 else q.tobytes()
    with open(path, "wb") as fh:
        fh.write(header + body)


def _tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    out, i = [], 0
    while len(out) < count:
        while i < len(buf) and buf[i : i + 1].isspace():
            i += 1
        if buf[i : i + 1] == b"#":
            while i < len(buf) and buf[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(buf) and not buf[j : j + 1].isspace():
            j += 1
        if j == i:
            raise InputError("truncated PGM header")
        out.append(buf[i:j])
        i = j
    return out, i + 1  # exactly one whitespace byte before the raster


def read_pgm(path: PathLike) -> np.ndarray:
    """Read a P5 file back to float64 in [0, 1]."""
    buf = Path(path).read_bytes()
    (magic, w, h, maxval), start = _tokens(buf, 4)
    if magic != b"P5":
        raise InputError(f"{path}: not a binary PGM (magic {magic!r})")
    w, h, maxval = int(w), int(h), int(maxval)
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    raster = np.frombuffer(buf, dtype=dtype, count=w * h, offset=start)
    return raster.reshape(h, w).astype(np.float64) / maxval


def save_dataset(
    splits: tuple[DatasetSplit, ...], out_dir: PathLike, bits: int = 16
) -> Path:
    """Write every image as PGM under ``out_dir/images`` plus ``manifest.txt``."""
    out_dir = Path(out_dir)
    classes = splits[0].classes
    lines = [MANIFEST_HEADER, f"# bits {bits}"]
    for i, c in enumerate(classes):
        lines.append(f"# class {i} {c.name} {c.structural} {c.statistical}")
    for split in splits:
        folder = out_dir / "images" / split.partition
        folder.mkdir(parents=True, exist_ok=True)
        for k in range(len(split)):
            c = classes[split.labels[k]]
            rel = Path("images") / split.partition / f"{c.name}_{k:05d}.pgm"
            write_pgm(out_dir / rel, split.images[k], bits)
            lines.append(
                "\t".join(
                    [rel.as_posix(), c.name, c.structural, c.statistical,
                     str(int(split.seeds[k])), split.partition]
                )
            )
    manifest = out_dir / "manifest.txt"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def load_manifest(path: PathLike) -> dict[str, DatasetSplit]:
    """Inverse of :func:`save_dataset`; returns splits keyed by partition."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    text = path.read_text().splitlines()
    if not text or text[0].strip() != MANIFEST_HEADER:
        raise InputError(f"{path}: missing manifest header")
    classes: list[ClassInfo] = []
    rows: dict[str, list] = {p: [] for p in PARTITIONS}
    for lineno, line in enumerate(text[1:], start=2):
        if not line.strip():
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if parts and parts[0] == "class":
                classes.append(ClassInfo(parts[2], parts[3], parts[4]))
            continue
        fields = line.split("\t")
        if len(fields) != 6:
            raise InputError(f"{path}:{lineno}: expected 6 tab-separated fields")
        rows[fields[5]].append(fields)
    names = [c.name for c in classes]
    out = {}
    for part, items in rows.items():
        imgs, labels, seeds = [], [], []
        for rel, joint, _struct, _stat, seed, _ in items:
            if joint not in names:
                raise InputError(f"{path}: image {rel} has undeclared class {joint!r}")
            imgs.append(read_pgm(path.parent / rel))
            labels.append(names.index(joint))
            seeds.append(int(seed))
        images = np.stack(imgs) if imgs else np.zeros((0, 0, 0))
        out[part] = DatasetSplit(
            part, images, np.asarray(labels, dtype=np.int64),
            np.asarray(seeds, dtype=np.uint64), classes,
        )
    return out

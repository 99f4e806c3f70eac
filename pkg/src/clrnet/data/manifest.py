"""Directory datasets: ``manifest.csv`` + ``classes.txt`` + binary PGM/PPM rasters."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import DataError, FormatError
from .dataset import Dataset, normalize


def _token(buf: bytes, pos: int):
    """Next whitespace-delimited header token, skipping ``#`` comments."""
    n = len(buf)
    while pos < n:
        ch = buf[pos:pos + 1]
        if ch == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace():
        pos += 1
    if start == pos:
        raise FormatError("truncated PNM header")
    return buf[start:pos], pos


def read_pnm(path) -> np.ndarray:
    """Read a binary PGM (P5) or PPM (P6) file into ``[c, h, w]`` floats in [0, 1]."""
    path = Path(path)
    try:
        buf = path.read_bytes()
    except FileNotFoundError:
        raise FormatError(f"{path}: no such file") from None
    magic, pos = _token(buf, 0)
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"{path}: unsupported raster magic {magic!r} (need P5 or P6)")
    try:
        w, pos = _token(buf, pos)
        h, pos = _token(buf, pos)
        maxval, pos = _token(buf, pos)
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError:
        raise FormatError(f"{path}: malformed header") from None
    if not (0 < maxval < 65536) or w < 1 or h < 1:
        raise FormatError(f"{path}: invalid header values")
    pos += 1  # single whitespace byte after maxval
    channels = 1 if magic == b"P5" else 3
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = w * h * channels * dtype.itemsize
    if len(buf) - pos < need:
        raise FormatError(f"{path}: raster data truncated")
    pixels = np.frombuffer(buf, dtype=dtype, count=w * h * channels, offset=pos)
    return (pixels.reshape(h, w, channels).transpose(2, 0, 1) / maxval).astype(np.float32)


def write_pnm(path, image: np.ndarray):
    """Write ``[h, w]`` or ``[3, h, w]`` uint8 data as P5/P6."""
    image = np.asarray(image, dtype=np.uint8)
    if image.ndim == 2:
        magic, body = b"P5", image
    elif image.ndim == 3 and image.shape[0] == 3:
        magic, body = b"P6", image.transpose(1, 2, 0)
    else:
        raise FormatError("write_pnm expects [h, w] or [3, h, w]")
    h, w = body.shape[:2]
    with open(path, "wb") as fh:
        fh.write(magic + f"\n{w} {h}\n255\n".encode())
        fh.write(np.ascontiguousarray(body).tobytes())


def fit_image(img: np.ndarray, shape) -> np.ndarray:
    """Convert channels, resize the shorter side to the target, then center-crop."""
    c, h, w = shape
    if img.shape[0] != c:
        if c == 1:
            img = (0.299 * img[0] + 0.587 * img[1] + 0.114 * img[2])[None]
        elif img.shape[0] == 1 and c == 3:
            img = np.repeat(img, 3, axis=0)
        else:
            raise DataError(f"cannot convert {img.shape[0]} channels to {c}")
    ih, iw = img.shape[1:]
    if (ih, iw) == (h, w):
        return img
    scale = max(h / ih, w / iw)
    nh, nw = max(h, round(ih * scale)), max(w, round(iw * scale))
    planes = [np.asarray(Image.fromarray(np.ascontiguousarray(p, dtype=np.float32)).resize((nw, nh), Image.BILINEAR)) for p in img]
    img = np.stack(planes)
    top, left = (nh - h) // 2, (nw - w) // 2
    return img[:, top:top + h, left:left + w]


def load_manifest(directory, shape=None, normalization=None, name: str = "") -> Dataset:
    """Load ``manifest.csv`` (``path,label`` with class-name labels) and ``classes.txt``.

    ``shape`` is the target ``(c, h, w)``; by default the first image's shape.
    """
    directory = Path(directory)
    classes_file, manifest_file = directory / "classes.txt", directory / "manifest.csv"
    for f in (classes_file, manifest_file):
        if not f.exists():
            raise FormatError(f"{f}: no such file")
    class_names = [ln.strip() for ln in classes_file.read_text().splitlines() if ln.strip()]
    index = {n: i for i, n in enumerate(class_names)}
    with open(manifest_file, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["path", "label"]:
            raise FormatError(f"{manifest_file}: header must be 'path,label'")
        rows = list(reader)
    images, labels = [], []
    for row in rows:
        label = row["label"].strip()
        if label not in index:
            raise DataError(f"{manifest_file}: label {label!r} is not listed in classes.txt")
        img = read_pnm(directory / row["path"].strip())
        if shape is None:
            shape = img.shape
        images.append(fit_image(img, shape))
        labels.append(index[label])
    if not images:
        raise FormatError(f"{manifest_file}: no samples")
    data, norm = normalize(np.stack(images), normalization)
    return Dataset(data, np.array(labels), class_names, norm, name or directory.name)

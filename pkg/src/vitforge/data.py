"""Dataset ingestion, augmentation, batching, and k-fold splitting.

Dataset layout: ``root/<class_name>/<image files>`` with one subdirectory per
class, or a ``manifest.csv`` (header ``path,label``) at the root. Baseline
image formats are binary PPM (P6) and PGM (P5); PNG is accepted when Pillow
is importable.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from vitforge.ops import Rng

IMAGENET_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float64)
IMAGENET_STD = np.array([0.229, 0.224, 0.225], dtype=np.float64)

SUPPORTED_SUFFIXES = (".ppm", ".pgm", ".png")


class DatasetError(ValueError):
    """A problem with dataset layout or contents."""


class DecodeError(ValueError):
    """An image file that cannot be decoded."""


@dataclass(frozen=True)
class Sample:
    image_path: str
    class_index: int
    class_name: str


@dataclass
class DatasetIndex:
    samples: list
    class_names: list
    root: str

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def __len__(self) -> int:
        return len(self.samples)

    def labels(self) -> np.ndarray:
        return np.array([s.class_index for s in self.samples], dtype=np.int64)


@dataclass
class FoldSplit:
    assignments: np.ndarray  # sample index -> fold id
    k: int

    def fold_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != fold)


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

def load_dataset(root) -> DatasetIndex:
    """Index a class-per-directory tree (or manifest.csv) deterministically.

    Class names are the sorted subdirectory names (or sorted unique manifest
    labels); samples are ordered lexicographically by path.
    """
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} is not a directory")

    manifest = root / "manifest.csv"
    if manifest.is_file():
        return _load_manifest(root, manifest)

    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise DatasetError(f"dataset root {root} contains no class directories")

    class_names = [p.name for p in class_dirs]
    samples = []
    for index, class_dir in enumerate(class_dirs):
        files = sorted(
            p for p in class_dir.iterdir()
            if p.is_file() and p.suffix.lower() in SUPPORTED_SUFFIXES
        )
        if not files:
            raise DatasetError(f"class directory {class_dir} holds no image files")
        for f in files:
            samples.append(Sample(str(f), index, class_names[index]))
    samples.sort(key=lambda s: s.image_path)
    return DatasetIndex(samples, class_names, str(root))


def _load_manifest(root: Path, manifest: Path) -> DatasetIndex:
    with open(manifest, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["path", "label"]:
            raise DatasetError(f"{manifest} must start with a 'path,label' header")
        rows = [(r[0].strip(), r[1].strip()) for r in reader if r]
    if not rows:
        raise DatasetError(f"{manifest} lists no samples")

    class_names = sorted({label for _, label in rows})
    index_of = {name: i for i, name in enumerate(class_names)}
    samples = []
    for rel, label in rows:
        path = Path(rel)
        if not path.is_absolute():
            path = root / path
        if not path.is_file():
            raise DatasetError(f"manifest entry {rel} does not exist")
        samples.append(Sample(str(path), index_of[label], label))
    samples.sort(key=lambda s: s.image_path)
    return DatasetIndex(samples, class_names, str(root))


# ---------------------------------------------------------------------------
# Decoding
# ---------------------------------------------------------------------------

def decode_image(path) -> np.ndarray:
    """Decode to a float32 C x H x W tensor in [0, 1] (grayscale replicated)."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix in (".ppm", ".pgm"):
        return _decode_pnm(path)
    if suffix == ".png":
        return _decode_png(path)
    raise DecodeError(f"unsupported image format: {path}")


def _decode_pnm(path: Path) -> np.ndarray:
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DecodeError(f"cannot read {path}: {exc}") from exc

    magic = raw[:2]
    if magic not in (b"P5", b"P6"):
        raise DecodeError(f"{path}: not a binary PGM/PPM file")

    # Header: magic, width, height, maxval as whitespace-separated tokens,
    # with '#' comments allowed, followed by a single whitespace byte.
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos] not in (0x0A, 0x0D):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DecodeError(f"{path}: truncated header")
        fields.append(raw[start:pos])
    pos += 1  # the single whitespace after maxval

    try:
        width, height, maxval = (int(f) for f in fields)
    except ValueError as exc:
        raise DecodeError(f"{path}: malformed header") from exc
    if width < 1 or height < 1:
        raise DecodeError(f"{path}: degenerate image {width}x{height}")
    if maxval != 255:
        raise DecodeError(f"{path}: only 8-bit images supported (maxval {maxval})")

    channels = 3 if magic == b"P6" else 1
    expected = width * height * channels
    payload = raw[pos : pos + expected]
    if len(payload) < expected:
        raise DecodeError(
            f"{path}: truncated pixel data ({len(payload)} of {expected} bytes)"
        )
    pixels = np.frombuffer(payload, dtype=np.uint8).astype(np.float32) / 255.0
    if channels == 3:
        image = pixels.reshape(height, width, 3).transpose(2, 0, 1)
    else:
        image = np.broadcast_to(pixels.reshape(1, height, width), (3, height, width))
    return np.ascontiguousarray(image, dtype=np.float32)


def _decode_png(path: Path) -> np.ndarray:
    try:
        from PIL import Image
    except ImportError as exc:
        raise DecodeError(
            f"{path}: PNG support requires Pillow (pip install vitforge[png])"
        ) from exc
    try:
        with Image.open(path) as img:
            rgb = np.asarray(img.convert("RGB"), dtype=np.float32)
    except Exception as exc:
        raise DecodeError(f"{path}: {exc}") from exc
    return np.ascontiguousarray(rgb.transpose(2, 0, 1) / 255.0, dtype=np.float32)


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------

def resize_shorter(image: np.ndarray, target: int) -> np.ndarray:
    """Resize so the shorter side equals ``target``, preserving aspect ratio.

    Bilinear with half-pixel centers (src = (dst + 0.5) * scale - 0.5) and
    edge clamping; a no-op when the shorter side already matches.
    """
    c, h, w = image.shape
    if h < 1 or w < 1:
        raise DecodeError("cannot resize a zero-extent image")
    short = min(h, w)
    if short == target:
        return image
    scale = target / short
    out_h = target if h == short else max(1, round(h * scale))
    out_w = target if w == short else max(1, round(w * scale))
    return _bilinear(image, out_h, out_w)


def _bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    c, h, w = image.shape
    src_y = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0, h - 1)
    src_x = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0, w - 1)
    y0 = np.floor(src_y).astype(np.int64)
    x0 = np.floor(src_x).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (src_y - y0).astype(image.dtype)
    wx = (src_x - x0).astype(image.dtype)

    top = image[:, y0[:, None], x0[None, :]] * (1 - wx) + image[:, y0[:, None], x1[None, :]] * wx
    bot = image[:, y1[:, None], x0[None, :]] * (1 - wx) + image[:, y1[:, None], x1[None, :]] * wx
    return (top * (1 - wy[None, :, None]) + bot * wy[None, :, None]).astype(image.dtype)


def crop_at(image: np.ndarray, top: int, left: int, size: int) -> np.ndarray:
    c, h, w = image.shape
    if top < 0 or left < 0 or top + size > h or left + size > w:
        raise DecodeError(f"crop {size}@({top},{left}) outside {h}x{w}")
    return image[:, top : top + size, left : left + size]


def center_crop(image: np.ndarray, size: int) -> np.ndarray:
    c, h, w = image.shape
    return crop_at(image, (h - size) // 2, (w - size) // 2, size)


def hflip(image: np.ndarray) -> np.ndarray:
    return image[:, :, ::-1]


def normalize(image: np.ndarray) -> np.ndarray:
    """Channelwise (x - mean) / std with the ImageNet statistics."""
    mean = IMAGENET_MEAN.astype(image.dtype).reshape(3, 1, 1)
    std = IMAGENET_STD.astype(image.dtype).reshape(3, 1, 1)
    return (image - mean) / std


def denormalize(image: np.ndarray) -> np.ndarray:
    mean = IMAGENET_MEAN.astype(image.dtype).reshape(3, 1, 1)
    std = IMAGENET_STD.astype(image.dtype).reshape(3, 1, 1)
    return image * std + mean


def _resize_target(crop_size: int) -> int:
    # The paper pipeline pairs a 224 crop with a 256 resize; keep that 8/7
    # ratio for other crop sizes.
    return max(crop_size, round(crop_size * 256 / 224))


def augment_train(
    image: np.ndarray,
    rng: Rng,
    crop_size: int = 224,
    resize_to: Optional[int] = None,
) -> np.ndarray:
    """Training-time chain: resize shorter side, random crop, coin-flip
    horizontal mirror, normalize."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise DecodeError(f"augment_train expects 3 x H x W, got {image.shape}")
    resize_to = _resize_target(crop_size) if resize_to is None else resize_to
    resized = resize_shorter(image, resize_to)
    c, h, w = resized.shape
    if h < crop_size or w < crop_size:
        raise DecodeError(f"image {h}x{w} smaller than crop {crop_size} after resize")
    top = int(rng.integers(0, h - crop_size + 1))
    left = int(rng.integers(0, w - crop_size + 1))
    cropped = crop_at(resized, top, left, crop_size)
    if rng.coin(0.5):
        cropped = hflip(cropped)
    return np.ascontiguousarray(normalize(cropped), dtype=image.dtype)


def preprocess_eval(
    image: np.ndarray,
    crop_size: int = 224,
    resize_to: Optional[int] = None,
) -> np.ndarray:
    """Deterministic evaluation chain: resize, center crop, normalize."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise DecodeError(f"preprocess_eval expects 3 x H x W, got {image.shape}")
    resize_to = _resize_target(crop_size) if resize_to is None else resize_to
    resized = resize_shorter(image, resize_to)
    c, h, w = resized.shape
    if h < crop_size or w < crop_size:
        raise DecodeError(f"image {h}x{w} smaller than crop {crop_size} after resize")
    return np.ascontiguousarray(normalize(center_crop(resized, crop_size)), dtype=image.dtype)


# ---------------------------------------------------------------------------
# Splitting and batching
# ---------------------------------------------------------------------------

def kfold_split(
    n: int,
    k: int,
    seed: int,
    labels: Optional[Sequence[int]] = None,
    stratified: bool = False,
) -> FoldSplit:
    """Seeded shuffle dealt round-robin into k folds (sizes differ by <= 1).

    With ``stratified=True`` the round-robin runs within each class, keeping
    per-class proportions close across folds.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if n < k:
        raise ValueError(f"cannot split {n} samples into {k} folds")
    rng = Rng(seed).child("kfold")
    assignments = np.empty(n, dtype=np.int64)
    if stratified:
        if labels is None:
            raise ValueError("stratified splitting requires labels")
        labels = np.asarray(labels)
        position = 0
        for cls in np.unique(labels):
            members = np.flatnonzero(labels == cls)
            order = members[rng.permutation(len(members))]
            for j, idx in enumerate(order):
                assignments[idx] = (position + j) % k
            position += len(members)
    else:
        order = rng.permutation(n)
        for j, idx in enumerate(order):
            assignments[idx] = j % k
    return FoldSplit(assignments, k)


def make_batches(samples: Sequence, batch_size: int, rng: Rng) -> list:
    """Seeded permutation chunked into ceil(n / batch_size) batches."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    items = list(samples)
    order = rng.permutation(len(items))
    shuffled = [items[i] for i in order]
    return [shuffled[i : i + batch_size] for i in range(0, len(shuffled), batch_size)]


# ---------------------------------------------------------------------------
# Raw-tensor sidecar files (test fixtures / golden tensors)
# ---------------------------------------------------------------------------

def write_raw_tensor(path, tensor: np.ndarray) -> None:
    """Little-endian f32 payload preceded by rank and dims as u64 LE."""
    tensor = np.ascontiguousarray(tensor, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", tensor.ndim))
        fh.write(struct.pack(f"<{tensor.ndim}Q", *tensor.shape))
        fh.write(tensor.tobytes())


def read_raw_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise DecodeError(f"{path}: truncated tensor file")
    (rank,) = struct.unpack_from("<Q", raw, 0)
    header = 8 + 8 * rank
    if len(raw) < header:
        raise DecodeError(f"{path}: truncated tensor dims")
    dims = struct.unpack_from(f"<{rank}Q", raw, 8)
    count = int(np.prod(dims)) if rank else 1
    expected = header + 4 * count
    if len(raw) < expected:
        raise DecodeError(f"{path}: truncated tensor payload")
    data = np.frombuffer(raw[header:expected], dtype="<f4")
    return data.reshape(dims).copy()

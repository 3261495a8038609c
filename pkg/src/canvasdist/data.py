"""Dataset ingestion: IDX streams, PNG directories, and image writing.

IDX parsing follows the MNIST binary layout bit-exactly (big-endian magics
0x00000803 for image tensors and 0x00000801 for label vectors). PNG loading
covers generic class-per-subdirectory trees plus the one-shot run layout of
20 training / 20 test drawings with a class-answer list per run. Intensities
are always mapped into [0, 1] with optional polarity inversion so that ink is
high, and optionally downsampled by exact area averaging.
"""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass

import numpy as np

from .images import DigitalImage

__all__ = [
    "IdxFormatError",
    "LabeledDataset",
    "load_idx",
    "load_idx_files",
    "load_png_dir",
    "load_omniglot_run",
    "area_resize",
    "write_png",
    "write_gif",
]

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """Raised for malformed magic numbers, truncation, or count mismatches."""


@dataclass
class LabeledDataset:
    """Images with integer labels indexing a class-name table."""

    images: list[DigitalImage]
    labels: list[int]
    class_names: list[str]

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValueError(
                f"got {len(self.images)} images but {len(self.labels)} labels"
            )
        for lab in self.labels:
            if not 0 <= lab < len(self.class_names):
                raise ValueError(f"label {lab} outside the class table")

    def __len__(self) -> int:
        return len(self.images)

    def subset(self, indices) -> "LabeledDataset":
        return LabeledDataset(
            [self.images[i] for i in indices],
            [self.labels[i] for i in indices],
            self.class_names,
        )

    def image_shape(self) -> tuple[int, int]:
        shapes = {img.shape for img in self.images}
        if len(shapes) > 1:
            raise ValueError(f"dataset mixes image sizes: {sorted(shapes)}")
        return shapes.pop() if shapes else (0, 0)


def _as_bytes(stream) -> bytes:
    data = stream.read() if hasattr(stream, "read") else bytes(stream)
    if data[:2] == b"\x1f\x8b":  # transparently accept the gzipped distribution files
        data = gzip.decompress(data)
    return data


def _take(data: bytes, offset: int, count: int, what: str) -> bytes:
    if offset + count > len(data):
        raise IdxFormatError(
            f"truncated stream: needed {count} bytes for {what} at offset {offset}, "
            f"have {len(data) - offset}"
        )
    return data[offset : offset + count]


def load_idx(image_bytes, label_bytes) -> LabeledDataset:
    """Parse paired IDX image/label streams into a dataset.

    Accepts raw bytes or binary file objects, gzipped or not. Pixel bytes
    0..255 map to intensities by division by 255.
    """
    img_data = _as_bytes(image_bytes)
    lab_data = _as_bytes(label_bytes)

    (img_magic,) = struct.unpack(">I", _take(img_data, 0, 4, "image magic"))
    if img_magic != IMAGE_MAGIC:
        raise IdxFormatError(
            f"malformed image magic: expected {IMAGE_MAGIC:#010x}, got {img_magic:#010x}"
        )
    count, rows, cols = struct.unpack(">III", _take(img_data, 4, 12, "image dimensions"))
    pixel_bytes = _take(img_data, 16, count * rows * cols, "pixel data")

    (lab_magic,) = struct.unpack(">I", _take(lab_data, 0, 4, "label magic"))
    if lab_magic != LABEL_MAGIC:
        raise IdxFormatError(
            f"malformed label magic: expected {LABEL_MAGIC:#010x}, got {lab_magic:#010x}"
        )
    (lab_count,) = struct.unpack(">I", _take(lab_data, 4, 4, "label count"))
    raw_labels = np.frombuffer(_take(lab_data, 8, lab_count, "label data"), dtype=np.uint8)

    if count != lab_count:
        raise IdxFormatError(f"count mismatch: {count} images but {lab_count} labels")

    pixels = np.frombuffer(pixel_bytes, dtype=np.uint8).astype(np.float64) / 255.0
    pixels = pixels.reshape(count, rows * cols)
    images = [DigitalImage(rows, cols, pixels[i]) for i in range(count)]

    classes = sorted(set(int(v) for v in raw_labels))
    index = {c: i for i, c in enumerate(classes)}
    labels = [index[int(v)] for v in raw_labels]
    return LabeledDataset(images, labels, [str(c) for c in classes])


def load_idx_files(image_path, label_path) -> LabeledDataset:
    with open(image_path, "rb") as img, open(label_path, "rb") as lab:
        return load_idx(img, lab)


def area_resize(values: np.ndarray, out_m: int, out_n: int) -> np.ndarray:
    """Downsample (or resample) a 2-D array by exact area averaging.

    Each output pixel averages the input over its fractional source box, so
    the overall mean is preserved for any size ratio.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {values.shape}")

    def overlap_operator(out_len: int, in_len: int) -> np.ndarray:
        scale = in_len / out_len
        lo = np.arange(out_len)[:, None] * scale
        hi = lo + scale
        cell_lo = np.arange(in_len)[None, :]
        cell_hi = cell_lo + 1
        frac = np.clip(np.minimum(hi, cell_hi) - np.maximum(lo, cell_lo), 0.0, None)
        return frac / scale

    rows = overlap_operator(out_m, values.shape[0])
    cols = overlap_operator(out_n, values.shape[1])
    return rows @ values @ cols.T


def _read_png(path, invert: bool, target: tuple[int, int] | None) -> DigitalImage:
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as handle:
            gray = np.asarray(handle.convert("L"), dtype=np.float64) / 255.0
    except (UnidentifiedImageError, OSError) as err:
        raise ValueError(f"unreadable image file {path}: {err}") from err
    if invert:
        gray = 1.0 - gray
    if target is not None and gray.shape != target:
        gray = area_resize(gray, *target)
    return DigitalImage.from_array(gray, clip=True)


def load_png_dir(
    directory,
    invert: bool = True,
    target_size: tuple[int, int] | None = None,
) -> LabeledDataset:
    """Load a directory of PNGs: one class per subdirectory, or a flat pool.

    With subdirectories present, each becomes a class named after it; a flat
    directory becomes a single class named after the directory itself. Files
    are read in sorted name order. Without `target_size`, mixed image sizes
    are an error.
    """
    directory = os.fspath(directory)
    if not os.path.isdir(directory):
        raise ValueError(f"not a directory: {directory}")
    subdirs = sorted(
        d for d in os.listdir(directory) if os.path.isdir(os.path.join(directory, d))
    )

    images: list[DigitalImage] = []
    labels: list[int] = []
    if subdirs:
        class_names = subdirs
        for label, sub in enumerate(subdirs):
            folder = os.path.join(directory, sub)
            for name in sorted(os.listdir(folder)):
                if name.lower().endswith(".png"):
                    images.append(_read_png(os.path.join(folder, name), invert, target_size))
                    labels.append(label)
    else:
        class_names = [os.path.basename(os.path.normpath(directory)) or "images"]
        for name in sorted(os.listdir(directory)):
            if name.lower().endswith(".png"):
                images.append(_read_png(os.path.join(directory, name), invert, target_size))
                labels.append(0)

    dataset = LabeledDataset(images, labels, class_names)
    if target_size is None:
        dataset.image_shape()  # enforce uniformity when no downsampling was requested
    return dataset


def load_omniglot_run(
    run_dir,
    invert: bool = True,
    target_size: tuple[int, int] | None = (28, 28),
) -> tuple[LabeledDataset, LabeledDataset]:
    """Load one one-shot run folder: training/, test/, and class_labels.txt.

    The answer list pairs each test file with its matching training file;
    class names are the training file stems. Returns (train, test) datasets
    sharing one class table.
    """
    run_dir = os.fspath(run_dir)
    answers_path = os.path.join(run_dir, "class_labels.txt")
    if not os.path.isfile(answers_path):
        raise ValueError(f"missing class answer list: {answers_path}")

    def tail_of(path_str: str) -> str:
        # answer lists may carry leading folders; keep the part under the run dir
        parts = path_str.replace("\\", "/").split("/")
        for anchor in ("training", "test"):
            if anchor in parts:
                return "/".join(parts[parts.index(anchor) :])
        return path_str

    pairs = []
    with open(answers_path, "r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            fields = line.split()
            if len(fields) != 2:
                raise ValueError(f"malformed answer line in {answers_path}: {line!r}")
            pairs.append((tail_of(fields[0]), tail_of(fields[1])))

    train_files = sorted(
        name
        for name in os.listdir(os.path.join(run_dir, "training"))
        if name.lower().endswith(".png")
    )
    class_names = [os.path.splitext(name)[0] for name in train_files]
    class_index = {name: i for i, name in enumerate(class_names)}

    train_images = [
        _read_png(os.path.join(run_dir, "training", name), invert, target_size)
        for name in train_files
    ]
    train = LabeledDataset(train_images, list(range(len(train_files))), class_names)

    test_images = []
    test_labels = []
    for test_rel, train_rel in pairs:
        stem = os.path.splitext(os.path.basename(train_rel))[0]
        if stem not in class_index:
            raise ValueError(f"answer list references unknown training item {train_rel!r}")
        test_images.append(_read_png(os.path.join(run_dir, test_rel), invert, target_size))
        test_labels.append(class_index[stem])
    test = LabeledDataset(test_images, test_labels, class_names)
    return train, test


def write_png(path, pixels2d) -> None:
    """Write a [0, 1] grayscale array as an 8-bit PNG."""
    from PIL import Image

    arr = np.asarray(pixels2d, dtype=np.float64)
    data = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data, mode="L").save(path, format="PNG")


def write_gif(path, frames, frame_ms: int = 80) -> None:
    """Assemble [0, 1] grayscale frames into an animated GIF."""
    from PIL import Image

    if not frames:
        raise ValueError("need at least one frame")
    pils = [
        Image.fromarray(np.clip(np.round(np.asarray(f) * 255.0), 0, 255).astype(np.uint8), "L")
        for f in frames
    ]
    pils[0].save(path, save_all=True, append_images=pils[1:], duration=frame_ms, loop=0)

"""Fashion-MNIST ingestion: IDX parsing, normalization, batching and download."""
import gzip
import os
import struct
import urllib.error
import urllib.request
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FetchError, ParseError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
NUM_CLASSES = 10
DEFAULT_BASE_URL = "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/"

FILES = {
    ("train", "images"): "train-images-idx3-ubyte",
    ("train", "labels"): "train-labels-idx1-ubyte",
    ("test", "images"): "t10k-images-idx3-ubyte",
    ("test", "labels"): "t10k-labels-idx1-ubyte",
}


def _maybe_gunzip(data):
    if data[:2] == b"\x1f\x8b":
        try:
            return gzip.decompress(data)
        except (OSError, EOFError) as exc:
            raise ParseError(f"corrupt gzip stream: {exc}", 0) from exc
    return data


def _header(data, magic, ndims):
    need = 4 + 4 * ndims
    if len(data) < need:
        raise ParseError(f"header truncated: need {need} bytes, found {len(data)}", len(data))
    found = struct.unpack_from(">I", data, 0)[0]
    if found != magic:
        raise ParseError(f"bad magic 0x{found:08x}, expected 0x{magic:08x}", 0)
    return struct.unpack_from(f">{ndims}I", data, 4), need


def _payload(data, offset, expected):
    actual = len(data) - offset
    if actual < expected:
        raise ParseError(f"payload truncated: expected {expected} bytes, found {actual}", len(data))
    if actual > expected:
        raise ParseError(f"{actual - expected} unexpected trailing bytes", offset + expected)
    return np.frombuffer(data, dtype=np.uint8, offset=offset)


def parse_idx_images(data, shape=(28, 28)):
    """``(count, rows, cols)`` uint8 array from raw or gzipped IDX bytes."""
    data = _maybe_gunzip(bytes(data))
    (count, rows, cols), offset = _header(data, IMAGE_MAGIC, 3)
    if shape is not None and (rows, cols) != tuple(shape):
        raise ParseError(f"image dimensions {rows}x{cols}, expected {shape[0]}x{shape[1]}", 8)
    return _payload(data, offset, count * rows * cols).reshape(count, rows, cols)


def parse_idx_labels(data):
    data = _maybe_gunzip(bytes(data))
    (count,), offset = _header(data, LABEL_MAGIC, 1)
    labels = _payload(data, offset, count)
    bad = np.flatnonzero(labels >= NUM_CLASSES)
    if bad.size:
        i = int(bad[0])
        raise ParseError(f"label {labels[i]} at index {i} outside 0..{NUM_CLASSES - 1}", offset + i)
    return labels


def idx_images_bytes(images):
    images = np.asarray(images, dtype=np.uint8)
    return struct.pack(">4I", IMAGE_MAGIC, *images.shape) + images.tobytes()


def idx_labels_bytes(labels):
    labels = np.asarray(labels, dtype=np.uint8)
    return struct.pack(">2I", LABEL_MAGIC, len(labels)) + labels.tobytes()


@dataclass(frozen=True)
class RawDataset:
    images: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ParseError(f"{len(self.images)} images but {len(self.labels)} labels")


def to_feature_planes(raw, dtype=np.float32):
    """Bytes to ``(count, 1, rows, cols)`` planes in [0, 1] via ``v / 255``."""
    planes = raw.images.astype(np.float64) / 255.0
    return planes[:, None].astype(dtype), raw.labels.astype(np.int64)


def _find(data_dir, name):
    for candidate in (name, name + ".gz"):
        path = Path(data_dir) / candidate
        if path.exists():
            return path
    raise FileNotFoundError(
        f"{name}[.gz] not found in {data_dir}; download it with `tacnn fetch --data-dir {data_dir}`"
    )


def load_split(data_dir, split, shape=(28, 28)):
    images = parse_idx_images(_find(data_dir, FILES[split, "images"]).read_bytes(), shape)
    labels = parse_idx_labels(_find(data_dir, FILES[split, "labels"]).read_bytes())
    return RawDataset(images, labels)


def load_dataset(data_dir, dtype=np.float32, shape=(28, 28)):
    """``((train_x, train_y), (test_x, test_y))`` ready for training."""
    return tuple(to_feature_planes(load_split(data_dir, s, shape), dtype) for s in ("train", "test"))


def dataset_present(data_dir):
    try:
        for name in FILES.values():
            _find(data_dir, name)
    except FileNotFoundError:
        return False
    return True


@dataclass(frozen=True)
class BatchPlan:
    permutation: np.ndarray
    batch_size: int

    @classmethod
    def shuffled(cls, count, batch_size, rng):
        return cls(rng.permutation(count), batch_size)

    def batches(self):
        """Consecutive slices of the permutation; the last one may be short."""
        for start in range(0, len(self.permutation), self.batch_size):
            yield self.permutation[start:start + self.batch_size]


def _valid(data, kind):
    try:
        if kind == "images":
            parse_idx_images(data, shape=None)
        else:
            parse_idx_labels(data)
    except ParseError:
        return False
    return True


def fetch(destination, base_url=DEFAULT_BASE_URL, timeout=60, log=None):
    """Download the four archives into ``destination``.

    Files that already parse cleanly are left alone. Downloads are validated
    before being moved into place, so a destination file is never partial.
    Returns a list of ``(path, status)`` with status "present" or "downloaded".
    """
    dest = Path(destination)
    dest.mkdir(parents=True, exist_ok=True)
    if not base_url.endswith("/"):
        base_url += "/"
    results = []
    for (_, kind), name in FILES.items():
        path = dest / (name + ".gz")
        if path.exists() and _valid(path.read_bytes(), kind):
            results.append((path, "present"))
            if log:
                log(f"{path}: already present")
            continue
        url = base_url + name + ".gz"
        try:
            with urllib.request.urlopen(url, timeout=timeout) as resp:
                data = resp.read()
        except (urllib.error.URLError, OSError, ValueError) as exc:
            raise FetchError(f"failed to download {url}: {exc}") from exc
        if not _valid(data, kind):
            raise FetchError(f"integrity check failed for {url}")
        tmp = path.with_name(path.name + ".part")
        tmp.write_bytes(data)
        os.replace(tmp, path)
        results.append((path, "downloaded"))
        if log:
            log(f"{path}: downloaded from {url}")
    return results

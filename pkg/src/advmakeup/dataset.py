"""Image corpora: decoding, directory manifests and deterministic batching.

Labeled domains (non-makeup faces, evaluation frames) are directory trees with
one subdirectory per identity; the class index of an identity is the
lexicographic rank of its directory name. The makeup domain is a flat
directory of unlabeled images.
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, List, Optional

import numpy as np
from PIL import Image, UnidentifiedImageError

from advmakeup.errors import DatasetError

NON_MAKEUP = "NON_MAKEUP"
MAKEUP = "MAKEUP"
FRAME = "FRAME"
DOMAIN_TAGS = (NON_MAKEUP, MAKEUP, FRAME)
LABELED_DOMAINS = (NON_MAKEUP, FRAME)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
_PIL_FORMATS = ("PNG", "JPEG")

DEFAULT_IMAGE_SIZE = 64
CACHE_ENV = "ADVMAKEUP_CACHE"


@dataclass(frozen=True)
class Sample:
    image: np.ndarray
    label: Optional[int]
    source_path: str
    domain_tag: str


@dataclass
class DatasetManifest:
    root: str
    entries: List[tuple]
    num_classes: int
    domain_tag: str
    class_names: Optional[List[str]] = None

    def __len__(self):
        return len(self.entries)

    @property
    def paths(self):
        return [p for p, _ in self.entries]

    @property
    def labels(self):
        return [lbl for _, lbl in self.entries]

    def subset(self, label):
        """Entries of a single class, as a new manifest sharing ``num_classes``."""
        return DatasetManifest(
            self.root,
            [e for e in self.entries if e[1] == label],
            self.num_classes,
            self.domain_tag,
            self.class_names,
        )

    def to_dict(self):
        root = Path(self.root)
        entries = []
        for path, label in self.entries:
            p = Path(path)
            rel = p.relative_to(root) if p.is_absolute() and root in p.parents else p
            entries.append({"path": rel.as_posix(), "label": label})
        out = {"root": str(self.root), "domain_tag": self.domain_tag, "num_classes": self.num_classes, "entries": entries}
        if self.class_names is not None:
            out["class_names"] = list(self.class_names)
        return out

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_dict(cls, data):
        root = Path(data["root"])
        entries = [(str(root / e["path"]), e["label"]) for e in data["entries"]]
        return cls(str(root), entries, int(data["num_classes"]), data["domain_tag"], data.get("class_names"))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def _cache_file(cache_dir, path, size):
    st = os.stat(path)
    key = f"{os.path.abspath(path)}|{st.st_mtime_ns}|{st.st_size}|{size}"
    return Path(cache_dir) / (hashlib.sha256(key.encode()).hexdigest()[:32] + ".npy")


def load_image(path, target_size: int = DEFAULT_IMAGE_SIZE, cache_dir=None) -> np.ndarray:
    """Decode ``path`` into a ``(target_size, target_size, 3)`` float32 array in [0, 1].

    Resizing is bilinear; grayscale and palette images are expanded to RGB and
    alpha is dropped. When ``cache_dir`` (or ``$ADVMAKEUP_CACHE``) is set the
    decoded array is memoised on disk.
    """
    path = str(path)
    if not os.path.isfile(path):
        raise DatasetError("UNREADABLE_FILE", f"no such file: {path}")
    cache_dir = cache_dir or os.environ.get(CACHE_ENV)
    if cache_dir:
        cached = _cache_file(cache_dir, path, target_size)
        if cached.is_file():
            return np.load(cached)
    rgb = _decode_rgb(path)
    if rgb.size != (target_size, target_size):
        rgb = rgb.resize((target_size, target_size), Image.BILINEAR)
    arr = np.asarray(rgb, dtype=np.float32) / 255.0
    if cache_dir:
        Path(cache_dir).mkdir(parents=True, exist_ok=True)
        np.save(cached, arr)
    return arr


def _decode_rgb(path) -> Image.Image:
    path = str(path)
    if not os.path.isfile(path):
        raise DatasetError("UNREADABLE_FILE", f"no such file: {path}")
    try:
        with Image.open(path) as img:
            if img.format not in _PIL_FORMATS:
                raise DatasetError("UNSUPPORTED_FORMAT", f"{path} is {img.format}, expected PNG or JPEG")
            return img.convert("RGB")
    except UnidentifiedImageError as exc:
        if not path.lower().endswith(IMAGE_SUFFIXES):
            raise DatasetError("UNSUPPORTED_FORMAT", path) from exc
        raise DatasetError("UNREADABLE_FILE", f"cannot decode {path}") from exc
    except OSError as exc:
        raise DatasetError("UNREADABLE_FILE", f"cannot decode {path}: {exc}") from exc


def read_image(path) -> np.ndarray:
    """Decode ``path`` at its native resolution as an ``(H, W, 3)`` float32 array in [0, 1]."""
    return np.asarray(_decode_rgb(path), dtype=np.float32) / 255.0


def save_image(array, path):
    """Quantise a [0, 1] ``(H, W, 3)`` array to 8 bits and write it as PNG."""
    arr = np.asarray(array, dtype=np.float64)
    arr = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def load_images(paths, target_size: int = DEFAULT_IMAGE_SIZE, workers: int = 4) -> np.ndarray:
    """Decode many images concurrently; result order follows ``paths``."""
    paths = list(paths)
    if not paths:
        return np.zeros((0, target_size, target_size, 3), dtype=np.float32)
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        arrays = list(pool.map(lambda p: load_image(p, target_size), paths))
    return np.stack(arrays)


def _is_image(p: Path):
    return p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES


def scan_manifest(root, domain_tag: str) -> DatasetManifest:
    """List the images under ``root`` in lexicographic order.

    Labeled domains need one subdirectory per class and no loose images at
    the top level; the makeup domain takes every image below ``root``.
    """
    if domain_tag not in DOMAIN_TAGS:
        raise DatasetError("UNKNOWN_DOMAIN", domain_tag)
    root = Path(root)
    if not root.is_dir():
        raise DatasetError("EMPTY_DATASET", f"{root} is not a directory")
    children = sorted(root.iterdir(), key=lambda p: p.name)
    loose = [p for p in children if _is_image(p)]
    subdirs = [p for p in children if p.is_dir()]

    if domain_tag == MAKEUP:
        if loose and any(any(_is_image(q) for q in d.rglob("*")) for d in subdirs):
            raise DatasetError("MIXED_LAYOUT", f"{root} mixes loose images and image subdirectories")
        files = sorted((p for p in root.rglob("*") if _is_image(p)), key=lambda p: p.relative_to(root).as_posix())
        if not files:
            raise DatasetError("EMPTY_DATASET", f"no images under {root}")
        return DatasetManifest(str(root), [(str(p), None) for p in files], 0, MAKEUP)

    if loose:
        raise DatasetError("MIXED_LAYOUT", f"{root} has loose images; labeled domains need class subdirectories")
    entries = []
    class_names = []
    for d in subdirs:
        files = sorted((p for p in d.iterdir() if _is_image(p)), key=lambda p: p.name)
        if not files:
            continue
        label = len(class_names)
        class_names.append(d.name)
        entries.extend((str(p), label) for p in files)
    if not entries:
        raise DatasetError("EMPTY_DATASET", f"no images under {root}")
    return DatasetManifest(str(root), entries, len(class_names), domain_tag, class_names)


def batch_indices(n: int, batch_size: int, shuffle: bool = False, seed: int = 0) -> List[np.ndarray]:
    """Partition ``range(n)`` into batches; the final short batch is kept."""
    if batch_size < 1:
        raise DatasetError("INVALID_BATCH_SIZE", "batch_size must be >= 1")
    order = np.random.default_rng(seed).permutation(n) if shuffle else np.arange(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def batch_iter(
    manifest: DatasetManifest,
    batch_size: int,
    shuffle: bool = False,
    seed: int = 0,
    image_size: int = DEFAULT_IMAGE_SIZE,
) -> Iterator[List[Sample]]:
    """Yield one epoch of :class:`Sample` batches; the order depends only on ``seed``."""
    for idx in batch_indices(len(manifest), batch_size, shuffle, seed):
        paths = [manifest.entries[i][0] for i in idx]
        images = load_images(paths, image_size)
        yield [
            Sample(img, manifest.entries[i][1], manifest.entries[i][0], manifest.domain_tag)
            for img, i in zip(images, idx)
        ]

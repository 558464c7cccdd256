"""Face localisation and cropping.

Detection is pluggable. The built-in detector returns the central 75% of the
frame; :func:`sidecar_detector` replays boxes computed offline by any external
face detector. No alignment step is applied.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from PIL import Image

from advmakeup.errors import FaceCropError


@dataclass(frozen=True)
class BoundingBox:
    x0: int
    y0: int
    x1: int
    y1: int

    def is_valid_for(self, height, width):
        return 0 <= self.x0 < self.x1 <= width and 0 <= self.y0 < self.y1 <= height

    def as_list(self):
        return [self.x0, self.y0, self.x1, self.y1]


@dataclass(frozen=True)
class DetectorHandle:
    name: str
    detect: Callable[[np.ndarray], Optional[BoundingBox]]
    # optional lookup keyed by file path, for detections computed offline
    detect_path: Optional[Callable[[str, np.ndarray], Optional[BoundingBox]]] = None


def _center_detect(image):
    h, w = image.shape[:2]
    mx, my = int(round(0.125 * w)), int(round(0.125 * h))
    return BoundingBox(mx, my, w - mx, h - my)


center_crop_detector = DetectorHandle("center75", _center_detect)


def sidecar_detector(sidecar_path, fallback: Optional[DetectorHandle] = None) -> DetectorHandle:
    """Detector reading ``{image_path: [x0, y0, x1, y1]}`` from a JSON file.

    Because a detector only sees pixels, lookups go through
    :func:`detect_face_for_path`; images missing from the sidecar fall back to
    ``fallback`` or yield no detection.
    """
    table = json.loads(Path(sidecar_path).read_text())
    boxes = {str(Path(k)): v for k, v in table.items()}

    def detect_path(path, image):
        key = str(Path(path))
        raw = boxes.get(key, boxes.get(Path(path).name))
        if raw is None:
            return fallback.detect(image) if fallback else None
        return BoundingBox(*(int(v) for v in raw))

    def detect(image):
        return fallback.detect(image) if fallback else None

    return DetectorHandle(f"sidecar:{sidecar_path}", detect, detect_path)


def detect_face(detector: DetectorHandle, image) -> Optional[BoundingBox]:
    box = detector.detect(np.asarray(image))
    return _checked(detector, box, image)


def detect_face_for_path(detector: DetectorHandle, path, image) -> Optional[BoundingBox]:
    """Like :func:`detect_face` but lets path-keyed detectors look up ``path``."""
    if detector.detect_path is not None:
        box = detector.detect_path(path, image)
    else:
        box = detector.detect(np.asarray(image))
    return _checked(detector, box, image)


def _checked(detector, box, image):
    if box is None:
        return None
    h, w = np.asarray(image).shape[:2]
    if not box.is_valid_for(h, w):
        raise FaceCropError("INVALID_BOX", f"detector {detector.name} returned {box} for a {w}x{h} image")
    return box


def crop_face(image, box: BoundingBox, output_size: int) -> np.ndarray:
    """Cut ``box`` out of ``image`` and resize it bilinearly to a square ``output_size``."""
    arr = np.asarray(image, dtype=np.float32)
    h, w = arr.shape[:2]
    if not box.is_valid_for(h, w):
        raise FaceCropError("INVALID_BOX", f"{box} does not fit a {w}x{h} image")
    region = arr[box.y0:box.y1, box.x0:box.x1]
    if region.shape[:2] == (output_size, output_size):
        return region.copy()
    channels = [
        np.asarray(Image.fromarray(region[..., c], mode="F").resize((output_size, output_size), Image.BILINEAR))
        for c in range(region.shape[2])
    ]
    return np.clip(np.stack(channels, axis=-1), 0.0, 1.0).astype(np.float32)

"""Procedural face-like corpus for desk-scale experiments.

Each identity is a fixed draw of face geometry and colouring (skin tone, face
shape, eye spacing and colour, hair, brows, mouth); each image of an identity
adds pose, scale, lighting and sensor-noise jitter. Makeup images are drawn
from fresh random identities wearing lipstick, eyeshadow and blush.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, ImageFilter

from advmakeup.dataset import save_image

_SUPERSAMPLE = 4
_LIGHT_SKIN = np.array([0.96, 0.84, 0.74])
_DARK_SKIN = np.array([0.38, 0.25, 0.17])
_HAIR = np.array([
    [0.08, 0.06, 0.05],
    [0.30, 0.18, 0.10],
    [0.55, 0.35, 0.18],
    [0.85, 0.70, 0.40],
    [0.60, 0.20, 0.08],
    [0.50, 0.50, 0.50],
])


@dataclass(frozen=True)
class Identity:
    skin: tuple
    hair: tuple
    iris: tuple
    face_w: float
    face_h: float
    eye_dx: float
    eye_y: float
    eye_r: float
    brow_thick: float
    hair_h: float
    mouth_w: float
    mouth_y: float
    nose_len: float


def random_identity(rng: np.random.Generator) -> Identity:
    tone = rng.uniform(0.0, 1.0)
    skin = _LIGHT_SKIN + tone * (_DARK_SKIN - _LIGHT_SKIN) + rng.normal(0.0, 0.03, size=3)
    hair = rng.choice(_HAIR) + rng.normal(0.0, 0.05, size=3)
    return Identity(
        skin=tuple(np.clip(skin, 0, 1)),
        hair=tuple(np.clip(hair, 0, 1)),
        iris=tuple(rng.uniform(0.05, 0.6, size=3)),
        face_w=rng.uniform(0.30, 0.40),
        face_h=rng.uniform(0.40, 0.48),
        eye_dx=rng.uniform(0.10, 0.17),
        eye_y=rng.uniform(-0.12, -0.04),
        eye_r=rng.uniform(0.035, 0.06),
        brow_thick=rng.uniform(0.01, 0.035),
        hair_h=rng.uniform(0.05, 0.25),
        mouth_w=rng.uniform(0.08, 0.16),
        mouth_y=rng.uniform(0.17, 0.25),
        nose_len=rng.uniform(0.05, 0.12),
    )


def _rgb(c, gain=1.0):
    return tuple(int(np.clip(v * gain, 0, 1) * 255) for v in c)


def render_face(identity: Identity, rng: np.random.Generator, size: int = 64, makeup: bool = False) -> np.ndarray:
    """Draw one ``(size, size, 3)`` float32 image in [0, 1]."""
    s = size * _SUPERSAMPLE
    bg = rng.uniform(0.1, 0.9, size=3)
    img = Image.new("RGB", (s, s), _rgb(bg))
    draw = ImageDraw.Draw(img)
    # background gradient band for clutter
    band = rng.uniform(0.1, 0.9, size=3)
    y_band = rng.uniform(0.5, 0.9) * s
    draw.rectangle([0, y_band, s, s], fill=_rgb(band))

    cx = s * (0.5 + rng.uniform(-0.05, 0.05))
    cy = s * (0.52 + rng.uniform(-0.05, 0.05))
    scale = s * rng.uniform(0.92, 1.08)
    light = rng.uniform(0.85, 1.15)

    def ell(x, y, rx, ry, color, **kw):
        draw.ellipse([cx + (x - rx) * scale, cy + (y - ry) * scale, cx + (x + rx) * scale, cy + (y + ry) * scale], fill=color, **kw)

    fw, fh = identity.face_w, identity.face_h
    ell(0, -fh * 0.25, fw * 1.08, fh * 0.75 + identity.hair_h * 0.5, _rgb(identity.hair, light))
    ell(0, 0, fw, fh, _rgb(identity.skin, light))

    for side in (-1, 1):
        ex = side * identity.eye_dx
        ey = identity.eye_y
        r = identity.eye_r
        draw.rectangle(
            [cx + (ex - r * 1.3) * scale, cy + (ey - r * 1.9 - identity.brow_thick) * scale,
             cx + (ex + r * 1.3) * scale, cy + (ey - r * 1.9) * scale],
            fill=_rgb(identity.hair, 0.8 * light),
        )
        ell(ex, ey, r * 1.5, r, _rgb((0.95, 0.95, 0.95), light))
        ell(ex, ey, r * 0.75, r * 0.75, _rgb(identity.iris, light))
        ell(ex, ey, r * 0.3, r * 0.3, (10, 10, 10))

    nose = _rgb(np.asarray(identity.skin) * 0.75, light)
    draw.line(
        [cx, cy + (identity.eye_y + 0.04) * scale, cx, cy + (identity.eye_y + 0.04 + identity.nose_len) * scale],
        fill=nose,
        width=max(1, int(0.02 * scale)),
    )
    lip = np.asarray(identity.skin) * np.array([0.85, 0.55, 0.55])
    ell(0, identity.mouth_y, identity.mouth_w, 0.025, _rgb(lip, light))

    if makeup:
        overlay = Image.new("RGBA", (s, s), (0, 0, 0, 0))
        od = ImageDraw.Draw(overlay)
        shadow = rng.uniform(0.0, 1.0, size=3)
        lipstick = rng.choice([(0.8, 0.05, 0.15), (0.9, 0.3, 0.5), (0.55, 0.1, 0.45), (0.75, 0.2, 0.1)])
        blush = (0.95, 0.45, 0.5)
        a_shadow = int(rng.uniform(120, 200))
        a_blush = int(rng.uniform(70, 140))

        def oell(x, y, rx, ry, color, alpha):
            od.ellipse(
                [cx + (x - rx) * scale, cy + (y - ry) * scale, cx + (x + rx) * scale, cy + (y + ry) * scale],
                fill=_rgb(color) + (alpha,),
            )

        for side in (-1, 1):
            ex = side * identity.eye_dx
            oell(ex, identity.eye_y - identity.eye_r * 0.9, identity.eye_r * 1.9, identity.eye_r * 1.1, shadow, a_shadow)
            oell(side * (identity.eye_dx + 0.03), identity.mouth_y - 0.1, 0.07, 0.05, blush, a_blush)
        overlay = overlay.filter(ImageFilter.GaussianBlur(radius=s * 0.012))
        img = Image.alpha_composite(img.convert("RGBA"), overlay).convert("RGB")
        draw = ImageDraw.Draw(img)
        ell(0, identity.mouth_y, identity.mouth_w * 1.05, 0.03, _rgb(lipstick, light))

    img = img.resize((size, size), Image.BOX)
    arr = np.asarray(img, dtype=np.float32) / 255.0
    arr = arr + rng.normal(0.0, 0.02, size=arr.shape).astype(np.float32)
    return np.clip(arr, 0.0, 1.0)


def make_identities(num_classes: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    return [random_identity(rng) for _ in range(num_classes)]


def render_class_images(identities, per_class: int, seed: int, size: int = 64):
    """Return ``(images, labels)`` with ``per_class`` renders of every identity."""
    rng = np.random.default_rng(seed)
    images, labels = [], []
    for label, ident in enumerate(identities):
        for _ in range(per_class):
            images.append(render_face(ident, rng, size))
            labels.append(label)
    return np.stack(images), np.asarray(labels)


def render_makeup_images(count: int, seed: int, size: int = 64):
    rng = np.random.default_rng(seed)
    return np.stack([render_face(random_identity(rng), rng, size, makeup=True) for _ in range(count)])


def write_corpus(
    root,
    num_classes: int = 8,
    train_per_class: int = 30,
    test_per_class: int = 8,
    makeup_count: int = 40,
    size: int = 64,
    seed: int = 0,
):
    """Write ``train/<class>/``, ``test/<class>/`` and ``makeup/`` PNG trees under ``root``."""
    root = Path(root)
    identities = make_identities(num_classes, seed)
    names = [f"id{c:02d}" for c in range(num_classes)]
    for split, count, split_seed in (("train", train_per_class, seed + 1), ("test", test_per_class, seed + 2)):
        images, labels = render_class_images(identities, count, split_seed, size)
        for i, (img, lbl) in enumerate(zip(images, labels)):
            save_image(img, root / split / names[lbl] / f"{i:05d}.png")
    for i, img in enumerate(render_makeup_images(makeup_count, seed + 3, size)):
        save_image(img, root / "makeup" / f"{i:05d}.png")
    return root

"""From raw photos to a labeled, cropped dataset.

Renders a few synthetic "raw" portraits, crops them with the built-in
detector and with a detections sidecar, and scans the result into a manifest.

Run: python3 demos/02_face_pipeline.py [--out DIR]
"""

import json

import numpy as np

from _common import parse_out
from advmakeup.dataset import NON_MAKEUP, read_image, save_image, scan_manifest
from advmakeup.facepipe import center_crop_detector, crop_face, detect_face, detect_face_for_path, sidecar_detector
from advmakeup.synthetic import make_identities, render_face

out = parse_out(__doc__) / "face_pipeline"
rng = np.random.default_rng(0)
raw = out / "raw"
for c, ident in enumerate(make_identities(3, seed=1)):
    for i in range(3):
        save_image(render_face(ident, rng, 96), raw / f"person{c}" / f"shot{i}.png")
print(f"wrote 9 raw 96x96 portraits under {raw}")

image = read_image(raw / "person0" / "shot0.png")
box = detect_face(center_crop_detector, image)
print(f"built-in detector keeps the central 75%: box {box.as_list()}")

crops = out / "cropped"
for path in sorted(raw.rglob("*.png")):
    face = crop_face(read_image(path), detect_face(center_crop_detector, read_image(path)), 64)
    save_image(face, crops / path.relative_to(raw))
manifest = scan_manifest(crops, NON_MAKEUP)
print(f"manifest: {len(manifest)} images, classes {manifest.class_names}")
manifest.save(out / "manifest.json")

# boxes from any external detector can be replayed through a JSON sidecar
sidecar = out / "detections.json"
sidecar.write_text(json.dumps({"shot0.png": [20, 10, 80, 90]}))
det = sidecar_detector(sidecar)
for name in ("shot0.png", "shot1.png"):
    found = detect_face_for_path(det, name, image)
    print(f"sidecar lookup for {name}: {found.as_list() if found else 'no detection, image would be skipped'}")

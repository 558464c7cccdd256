"""Train the face classifier that later gets attacked.

Run: python3 demos/03_victim_classifier.py [--out DIR]
"""

from _common import parse_out, victim
from advmakeup.evaluation import classify_frames, frame_probability
from advmakeup.synthetic import make_identities, render_class_images

out = parse_out(__doc__)
ckpt = victim(out)
net = ckpt.build().eval()
print(f"checkpoint: {out / 'victim.npz'} (epoch {ckpt.epoch}, regime {ckpt.metadata.get('regime')})")

print("\nper-identity recognition on 20 fresh renders each:")
frames, labels = render_class_images(make_identities(8, 0), 20, seed=99, size=64)
for c in range(8):
    p = frame_probability(classify_frames(net, frames[labels == c]))
    print(f"  identity {c}: {p[c]:5.1f}% of frames recognised")

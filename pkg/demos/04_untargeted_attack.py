"""Dodge recognition: train a makeup generator for one identity and measure it.

Saves a strip of original, made-up and blurred made-up faces next to the
report files.

Run: python3 demos/04_untargeted_attack.py [--out DIR]
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import torch

from _common import corpus, parse_out, victim
from advmakeup import objectives as obj
from advmakeup.dataset import MAKEUP, NON_MAKEUP, load_images, scan_manifest
from advmakeup.evaluation import attack_report, emit_report
from advmakeup.synthetic import make_identities, render_class_images
from advmakeup.training import run_attack

out = parse_out(__doc__)
ckpt = victim(out)
root = corpus(out)
attacker = 0
x = load_images(scan_manifest(root / "train", NON_MAKEUP).subset(attacker).paths[:20], 64)
y = load_images(scan_manifest(root / "makeup", MAKEUP).paths, 64)

cfg = obj.AttackConfig(epochs=20, checkpoint_every=5, seed=0)
print(f"attack training for identity {attacker}: {cfg.epochs} epochs at batch size {cfg.batch_size}")
result = run_attack(cfg, ckpt, x, attacker, y, out_dir=out / "untargeted", log=lambda line: print("  " + line))
gen = result.selected.build().eval()
print(f"selected snapshot: epoch {result.selected.epoch}")

frames, labels = render_class_images(make_identities(8, 0), 20, seed=99, size=64)
frames = frames[labels == attacker]
report = attack_report(ckpt.build().eval(), gen, cfg.blur, frames, cfg.mode, attacker)
emit_report(report, out / "untargeted")
print(f"clean frames recognised as {attacker}: {report.baseline_per_class_percent[attacker]:.0f}%")
print(f"made-up frames recognised as {attacker}: {report.per_class_percent[attacker]:.0f}% "
      f"(success={report.success})")

with torch.no_grad():
    made_up = gen(torch.as_tensor(frames[:4]))
    blurred = obj.gaussian_blur(made_up, cfg.blur)
fig, axes = plt.subplots(3, 4, figsize=(6, 4.6))
for j in range(4):
    for i, (row, title) in enumerate(((frames, "original"), (made_up.numpy(), "makeup"), (blurred.numpy(), "blurred"))):
        axes[i, j].imshow(row[j])
        axes[i, j].axis("off")
        if j == 0:
            axes[i, j].set_title(title, fontsize=8, loc="left")
fig.tight_layout()
fig.savefig(out / "untargeted" / "faces.png", dpi=120)
print(f"images and report written to {out / 'untargeted'}")

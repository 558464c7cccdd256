"""Impersonation: steer one identity's faces into a chosen other identity.

Run: python3 demos/05_targeted_attack.py [--out DIR]
"""

from _common import corpus, parse_out, victim
from advmakeup import objectives as obj
from advmakeup.dataset import MAKEUP, NON_MAKEUP, load_images, scan_manifest
from advmakeup.evaluation import attack_report, emit_report
from advmakeup.synthetic import make_identities, render_class_images
from advmakeup.training import run_attack

out = parse_out(__doc__)
ckpt = victim(out)
root = corpus(out)
attacker, target = 1, 5
x = load_images(scan_manifest(root / "train", NON_MAKEUP).subset(attacker).paths[:20], 64)
y = load_images(scan_manifest(root / "makeup", MAKEUP).paths, 64)

cfg = obj.AttackConfig(mode=obj.TARGETED, target_label=target, epochs=20, checkpoint_every=5, seed=0)
print(f"teaching the generator to make identity {attacker} look like identity {target} to the classifier")
result = run_attack(cfg, ckpt, x, attacker, y, out_dir=out / "targeted", log=lambda line: print("  " + line))

frames, labels = render_class_images(make_identities(8, 0), 20, seed=99, size=64)
report = attack_report(ckpt.build().eval(), result.selected.build().eval(), cfg.blur, frames[labels == attacker],
                       cfg.mode, attacker, target)
emit_report(report, out / "targeted")
print("share of frames per identity after makeup:")
for c, p in enumerate(report.per_class_percent):
    tag = " <- target" if c == target else (" <- attacker" if c == attacker else "")
    print(f"  {c}: {p:5.1f}%{tag}")
print(f"targeted success at {report.tau_prime:.0f}%: {report.success}")

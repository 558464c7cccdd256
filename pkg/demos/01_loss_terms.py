"""Tour of the attack objective on hand-sized inputs.

Run: python3 demos/01_loss_terms.py
"""

import torch

from advmakeup import objectives as obj

print("== margin loss ==")
logits = torch.tensor([3.0, 1.0, 0.5])
print(f"logits {logits.tolist()}, true class 0 leads by 2: loss {obj.adv_loss_untargeted(logits, 0, 5.0).item():+.2f}")
trailing = torch.tensor([1.0, 3.0, 0.5])
print(f"logits {trailing.tolist()}, true class 0 now trails by 2")
for kappa in (0.0, 1.0, 5.0):
    print(f"  kappa={kappa}: untargeted loss {obj.adv_loss_untargeted(trailing, 0, kappa).item():+.2f}")
print("  the loss follows the true class's lead over the runner-up until it hits the -kappa floor")
print(f"  targeted towards class 1: {obj.adv_loss_targeted(logits, 1, 5.0).item():+.2f}")

print("\n== adversarial game value ==")
half = torch.full((4,), 0.5)
print(f"  every discriminator undecided (0.5): {obj.gan_loss(half, half, half, half).item():.4f}")
sharp = torch.full((4,), 0.99)
print(f"  confident and right on reals and fakes: "
      f"{obj.gan_loss(sharp, sharp, 1 - sharp, 1 - sharp).item():.4f}")

print("\n== cycle and identity terms ==")
x = torch.zeros(1, 2, 2, 3)
x_back = torch.full((1, 2, 2, 3), 0.5)
print(f"  summed L1, one 2x2 image off by 0.5 everywhere: {obj.cycle_loss(x, x_back, x, x).item():.2f}")
print(f"  same pair, per-pixel mean:  {obj.cycle_loss(x, x_back, x, x, reduction='mean').item():.2f}")

print("\n== blur ==")
impulse = torch.zeros(5, 5, 3, dtype=torch.float64)
impulse[2, 2] = 1.0
blurred = obj.gaussian_blur(impulse, obj.BlurConfig(3, 1.0))
print("  a single bright pixel spreads into a 3x3 bump (one channel shown):")
for row in blurred[..., 0].tolist():
    print("   " + " ".join(f"{v:.3f}" for v in row))

print("\n== weighted total ==")
cfg = obj.AttackConfig()
bd = obj.total_loss(gan=-2.0, cycle=0.5, identity=0.1, adv=-5.0, cfg=cfg)
print(f"  lambda={cfg.lambda_cycle:g}, alpha={cfg.alpha_identity:g}, kappa={cfg.kappa:g}")
print(f"  translation part {bd.cyclegan_total:.1f}, plus margin gives {bd.total:.1f}")

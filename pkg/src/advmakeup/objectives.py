"""Loss terms of the makeup attack and the blur operator.

All image arguments are channel-last tensors, ``(N, H, W, C)`` or a single
``(H, W, C)`` image, with values in [0, 1]. Scalar losses are returned as
0-d tensors so they can be back-propagated; wrap in ``float()`` to record.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F

from advmakeup.errors import ConfigError, LossInputError

#: floor applied to discriminator scores before taking logarithms
LOG_EPS = 1e-7

UNTARGETED = "untargeted"
TARGETED = "targeted"
MODES = (UNTARGETED, TARGETED)
L1_REDUCTIONS = ("sum", "mean")


@dataclass(frozen=True)
class BlurConfig:
    kernel_size: int = 5
    sigma: float = 1.0

    def __post_init__(self):
        if int(self.kernel_size) != self.kernel_size or self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError("INVALID_BLUR", f"kernel_size must be a positive odd integer, got {self.kernel_size}")
        if not self.sigma > 0:
            raise ConfigError("INVALID_BLUR", f"sigma must be positive, got {self.sigma}")


@dataclass(frozen=True)
class AttackConfig:
    """Hyper-parameters of one attack-training run.

    Defaults follow the published protocol (cycle weight 100, identity weight
    50, margin 5, Adam at 2e-4 with batch size 1). Architecture widths and
    depths are desk-scale choices.
    """

    lambda_cycle: float = 100.0
    alpha_identity: float = 50.0
    kappa: float = 5.0
    mode: str = UNTARGETED
    target_label: Optional[int] = None
    blur: BlurConfig = field(default_factory=BlurConfig)
    additive_delta_scale: float = 0.0
    learning_rate: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    epochs: int = 100
    batch_size: int = 1
    seed: int = 0
    checkpoint_every: int = 10
    generator_width: int = 16
    generator_depth: int = 3
    discriminator_width: int = 16
    discriminator_depth: int = 3
    # per-element mean keeps the margin term visible next to the weighted L1 terms
    l1_reduction: str = "mean"

    def __post_init__(self):
        if isinstance(self.blur, dict):
            object.__setattr__(self, "blur", BlurConfig(**self.blur))
        if self.kappa < 0:
            raise ConfigError("INVALID_CONFIG", "kappa must be >= 0")
        if not self.lambda_cycle > 0:
            raise ConfigError("INVALID_CONFIG", "lambda_cycle must be > 0")
        if self.alpha_identity < 0:
            raise ConfigError("INVALID_CONFIG", "alpha_identity must be >= 0")
        if self.additive_delta_scale < 0:
            raise ConfigError("INVALID_CONFIG", "additive_delta_scale must be >= 0")
        if self.mode not in MODES:
            raise ConfigError("INVALID_CONFIG", f"mode must be one of {MODES}, got {self.mode!r}")
        if (self.mode == TARGETED) != (self.target_label is not None):
            raise ConfigError("INVALID_CONFIG", "target_label is required for targeted mode and forbidden otherwise")
        if self.epochs < 1 or self.batch_size < 1 or self.checkpoint_every < 1:
            raise ConfigError("INVALID_CONFIG", "epochs, batch_size and checkpoint_every must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("INVALID_CONFIG", "learning_rate must be > 0")
        if self.l1_reduction not in L1_REDUCTIONS:
            raise ConfigError("INVALID_CONFIG", f"l1_reduction must be one of {L1_REDUCTIONS}")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError("INVALID_CONFIG", f"unknown attack config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class LossBreakdown:
    gan: float
    cycle: float
    identity: float
    cyclegan_total: float
    adv: float
    total: float
    lambda_cycle: float
    alpha_identity: float
    kappa: float

    def to_dict(self):
        return dataclasses.asdict(self)


def _as_tensor(x):
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(np.asarray(x))


def _batched(x):
    x = _as_tensor(x)
    return x.unsqueeze(0) if x.dim() == 3 else x


def gan_loss(real_x_scores, real_y_scores, fake_y_scores, fake_x_scores):
    """Two-GAN adversarial value.

    ``real_x_scores`` are D_X on real non-makeup images, ``real_y_scores`` D_Y
    on real makeup images, ``fake_y_scores`` D_Y on G(x) and ``fake_x_scores``
    D_X on G_R(y). Each expectation is a batch mean. Scores are clipped to
    ``[LOG_EPS, 1 - LOG_EPS]`` before the logarithms. Discriminators ascend
    this value; see :func:`generator_gan_loss` for the generator side.
    """
    scores = [_as_tensor(s) for s in (real_x_scores, real_y_scores, fake_y_scores, fake_x_scores)]
    for s in scores:
        if s.numel() == 0:
            raise LossInputError("SCORE_OUT_OF_RANGE", "empty score batch")
        if bool(torch.any((s < 0) | (s > 1) | torch.isnan(s))):
            raise LossInputError("SCORE_OUT_OF_RANGE", "discriminator scores must lie in [0, 1]")
    rx, ry, fy, fx = (s.clamp(LOG_EPS, 1 - LOG_EPS) for s in scores)
    return (
        torch.log(ry).mean()
        + torch.log(1 - fy).mean()
        + torch.log(rx).mean()
        + torch.log(1 - fx).mean()
    )


def discriminator_loss(real_x_scores, real_y_scores, fake_y_scores, fake_x_scores):
    """Quantity the discriminators descend: the negated GAN value."""
    return -gan_loss(real_x_scores, real_y_scores, fake_y_scores, fake_x_scores)


def generator_gan_loss(fake_y_scores, fake_x_scores):
    """Non-saturating generator objective, ``-log D_Y(G(x)) - log D_X(G_R(y))``."""
    fy = _as_tensor(fake_y_scores).clamp(LOG_EPS, 1 - LOG_EPS)
    fx = _as_tensor(fake_x_scores).clamp(LOG_EPS, 1 - LOG_EPS)
    return -torch.log(fy).mean() - torch.log(fx).mean()


def _l1_per_sample_mean(a, b, reduction="sum"):
    a, b = _batched(a), _batched(b)
    if a.shape != b.shape:
        raise LossInputError("SHAPE_MISMATCH", f"{tuple(a.shape)} vs {tuple(b.shape)}")
    per_sample = (a - b).abs().flatten(1)
    if reduction == "sum":
        return per_sample.sum(dim=1).mean()
    if reduction == "mean":
        return per_sample.mean(dim=1).mean()
    raise LossInputError("INVALID_REDUCTION", f"reduction must be one of {L1_REDUCTIONS}")


def cycle_loss(x, x_reconstructed, y, y_reconstructed, reduction="sum"):
    """Batch mean of ``|G_R(G(x)) - x|_1`` plus batch mean of ``|G(G_R(y)) - y|_1``.

    With ``reduction="sum"`` the L1 norm sums absolute differences over every
    pixel and channel of a sample; ``"mean"`` divides that sum by the number
    of elements per sample.
    """
    return _l1_per_sample_mean(x_reconstructed, x, reduction) + _l1_per_sample_mean(y_reconstructed, y, reduction)


def identity_loss(x, reconstructor_on_x, y, generator_on_y, reduction="sum"):
    """Same L1 structure as :func:`cycle_loss`, applied to ``G_R(x)`` and ``G(y)``."""
    return _l1_per_sample_mean(reconstructor_on_x, x, reduction) + _l1_per_sample_mean(generator_on_y, y, reduction)


def gaussian_kernel(cfg: BlurConfig, dtype=torch.float64):
    """Normalised ``kernel_size x kernel_size`` table of ``exp(-(u^2+v^2) / (2 sigma^2))``."""
    r = cfg.kernel_size // 2
    u = np.arange(-r, r + 1, dtype=np.float64)
    table = np.exp(-(u[:, None] ** 2 + u[None, :] ** 2) / (2.0 * cfg.sigma**2))
    table /= table.sum()
    return torch.as_tensor(table, dtype=dtype)


def gaussian_blur(image, cfg: BlurConfig):
    """Blur each channel with the 2-D Gaussian kernel of ``cfg`` (reflect padding).

    Accepts a channel-last tensor or array of shape ``(H, W, C)`` or
    ``(N, H, W, C)`` and returns the same shape and type. Differentiable with
    respect to ``image``.
    """
    was_numpy = not isinstance(image, torch.Tensor)
    x = _as_tensor(image)
    if not torch.is_floating_point(x):
        x = x.to(torch.float32)
    single = x.dim() == 3
    if single:
        x = x.unsqueeze(0)
    if cfg.kernel_size == 1:
        out = x
    else:
        c = x.shape[-1]
        r = cfg.kernel_size // 2
        kernel = gaussian_kernel(cfg, dtype=x.dtype).to(x.device)
        weight = kernel.expand(c, 1, cfg.kernel_size, cfg.kernel_size)
        nchw = x.permute(0, 3, 1, 2)
        padded = F.pad(nchw, (r, r, r, r), mode="reflect")
        out = F.conv2d(padded, weight, groups=c).permute(0, 2, 3, 1).clamp(0.0, 1.0)
    if single:
        out = out.squeeze(0)
    return out.detach().cpu().numpy() if was_numpy else out


def _check_labels(logits, label):
    z = _as_tensor(logits)
    if z.dim() == 1:
        z = z.unsqueeze(0)
    n, k = z.shape
    labels = torch.as_tensor(label, dtype=torch.long, device=z.device).reshape(-1)
    if labels.numel() == 1 and n > 1:
        labels = labels.expand(n)
    if labels.numel() != n:
        raise LossInputError("LABEL_OUT_OF_RANGE", "one label per logit row required")
    if bool(torch.any((labels < 0) | (labels >= k))):
        raise LossInputError("LABEL_OUT_OF_RANGE", f"labels must be in [0, {k})")
    if k < 2:
        raise LossInputError("LABEL_OUT_OF_RANGE", "at least two classes are required")
    return z, labels


def _split_logits(z, labels):
    picked = z.gather(1, labels[:, None]).squeeze(1)
    mask = F.one_hot(labels, z.shape[1]).bool()
    others = z.masked_fill(mask, float("-inf")).max(dim=1).values
    return picked, others


def margin_untargeted(logits, true_label, kappa):
    """Per-sample ``max(Z_l - max_{i != l} Z_i, -kappa)``."""
    z, labels = _check_labels(logits, true_label)
    picked, others = _split_logits(z, labels)
    return torch.clamp(picked - others, min=-float(kappa))


def margin_targeted(logits, target_label, kappa):
    """Per-sample ``max(max_{i != t} Z_i - Z_t, -kappa)``."""
    z, labels = _check_labels(logits, target_label)
    picked, others = _split_logits(z, labels)
    return torch.clamp(others - picked, min=-float(kappa))


def adv_loss_untargeted(logits, true_label, kappa):
    """Margin attack loss pushing the true-class logit below the runner-up.

    ``logits`` is a vector or an ``(N, K)`` batch; the batch value is the mean
    of the per-sample margins. The loss bottoms out at ``-kappa`` once the true
    class trails by at least ``kappa``.
    """
    if kappa < 0:
        raise LossInputError("INVALID_KAPPA", "kappa must be >= 0")
    return margin_untargeted(logits, true_label, kappa).mean()


def adv_loss_targeted(logits, target_label, kappa):
    """Targeted counterpart: the target logit must lead every other by ``kappa``."""
    if kappa < 0:
        raise LossInputError("INVALID_KAPPA", "kappa must be >= 0")
    return margin_targeted(logits, target_label, kappa).mean()


def adv_loss(logits, cfg: AttackConfig, true_label):
    if cfg.mode == TARGETED:
        return adv_loss_targeted(logits, cfg.target_label, cfg.kappa)
    return adv_loss_untargeted(logits, true_label, cfg.kappa)


def weighted_total(gan, cycle, identity, adv, lambda_cycle, alpha_identity):
    """Return ``(cyclegan_total, total)``; works on floats and on tensors."""
    cyclegan_total = gan + lambda_cycle * cycle + alpha_identity * identity
    return cyclegan_total, cyclegan_total + adv


def total_loss(gan, cycle, identity, adv, cfg: AttackConfig) -> LossBreakdown:
    """Combine component values into a :class:`LossBreakdown` using the weights of ``cfg``."""
    values = [float(v) for v in (gan, cycle, identity, adv)]
    if not all(math.isfinite(v) for v in values):
        raise LossInputError("NON_FINITE", f"non-finite loss component in {values}")
    gan, cycle, identity, adv = values
    cyclegan_total, total = weighted_total(gan, cycle, identity, adv, cfg.lambda_cycle, cfg.alpha_identity)
    return LossBreakdown(
        gan=gan,
        cycle=cycle,
        identity=identity,
        cyclegan_total=cyclegan_total,
        adv=adv,
        total=total,
        lambda_cycle=cfg.lambda_cycle,
        alpha_identity=cfg.alpha_identity,
        kappa=cfg.kappa,
    )


def perturb_input(x, scale, generator=None):
    """Add uniform noise in ``[-scale, scale]`` and clip to [0, 1]; identity when ``scale == 0``."""
    if scale == 0:
        return x
    noise = torch.rand(x.shape, generator=generator, dtype=x.dtype, device=x.device)
    return (x + (2 * noise - 1) * scale).clamp(0.0, 1.0)

"""Victim-classifier training and joint attack training.

Attack training alternates, per batch, one discriminator step and one
generator step. The generator pair descends

    non-saturating GAN term + lambda * cycle + alpha * identity + adv

where ``adv`` is the margin loss of the frozen victim on the blurred makeup
output ``blur(G(x0 + delta))``. The victim never receives an optimizer step.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional

import numpy as np
import torch
import torch.nn.functional as F

from advmakeup import objectives as obj
from advmakeup.dataset import MAKEUP, DatasetManifest, batch_indices, load_images
from advmakeup.errors import ConfigError, TrainingError
from advmakeup.models import (
    CLASSIFIER,
    DISCRIMINATOR,
    GENERATOR,
    Checkpoint,
    NetworkSpec,
    build_classifier,
    build_discriminator,
    build_generator,
    freeze,
    load_checkpoint,
    save_checkpoint,
)
from advmakeup.runconfig import config_digest, derive_seed, deterministic_mode

logger = logging.getLogger(__name__)

SCRATCH = "scratch"
PRETRAINED = "pretrained"


@dataclass(frozen=True)
class ClassifierTrainConfig:
    learning_rate: float = 1e-5
    epochs: int = 408
    batch_size: int = 25
    init_checkpoint: Optional[str] = None
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("INVALID_CONFIG", "learning_rate must be > 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("INVALID_CONFIG", "epochs and batch_size must be >= 1")

    @property
    def regime(self):
        return PRETRAINED if self.init_checkpoint else SCRATCH

    def to_dict(self):
        return dataclasses.asdict(self)


#: published classifier protocols (Adam, batch 25)
PUBLISHED_PRETRAINED = ClassifierTrainConfig(learning_rate=1e-5, epochs=367, batch_size=25)
PUBLISHED_SCRATCH = ClassifierTrainConfig(learning_rate=1e-5, epochs=408, batch_size=25)


@dataclass
class TrainHistory:
    records: List[dict] = field(default_factory=list)
    seed: Optional[int] = None
    config_digest: Optional[str] = None
    wall_clock: List[float] = field(default_factory=list)

    def append(self, record, seconds):
        if self.records and record["epoch"] <= self.records[-1]["epoch"]:
            raise TrainingError("NON_MONOTONE_HISTORY", "epoch indices must increase")
        self.records.append(record)
        self.wall_clock.append(float(seconds))

    def __len__(self):
        return len(self.records)

    def column(self, key):
        return [r[key] for r in self.records]

    def to_jsonl(self, path):
        """Write one JSON object per epoch. Timing is excluded so reruns compare byte-equal."""
        lines = [json.dumps(r, sort_keys=True) for r in self.records]
        Path(path).write_text("".join(line + "\n" for line in lines))

    @classmethod
    def from_jsonl(cls, path):
        records = [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
        return cls(records=records)


def _to_tensor(images, dtype=torch.float32):
    return torch.as_tensor(np.asarray(images), dtype=dtype)


def _evaluate_accuracy(net, images, labels, batch_size=64):
    if len(labels) == 0:
        return float("nan")
    correct = 0
    with torch.no_grad():
        for i in range(0, len(labels), batch_size):
            pred = net(images[i:i + batch_size]).argmax(dim=1)
            correct += int((pred == labels[i:i + batch_size]).sum())
    return correct / len(labels)


def fit_classifier(
    cfg: ClassifierTrainConfig,
    spec: NetworkSpec,
    train_images,
    train_labels,
    test_images=None,
    test_labels=None,
    init: Optional[Checkpoint] = None,
    log: Optional[Callable[[str], None]] = None,
):
    """Train a classifier on in-memory arrays. Returns ``(network, TrainHistory)``."""
    if init is None and cfg.init_checkpoint:
        init = load_checkpoint(cfg.init_checkpoint)
    net = build_classifier(spec, seed=derive_seed(cfg.seed, "classifier"), init=init)
    x = _to_tensor(train_images)
    y = torch.as_tensor(np.asarray(train_labels), dtype=torch.long)
    tx = _to_tensor(test_images) if test_images is not None else None
    ty = torch.as_tensor(np.asarray(test_labels), dtype=torch.long) if test_labels is not None else None
    opt = torch.optim.Adam(net.parameters(), lr=cfg.learning_rate)
    history = TrainHistory(seed=cfg.seed, config_digest=config_digest({"train": cfg.to_dict(), "spec": spec.to_dict()}))

    for epoch in range(1, cfg.epochs + 1):
        start = time.perf_counter()
        net.train()
        total, seen, correct = 0.0, 0, 0
        for idx in batch_indices(len(y), cfg.batch_size, shuffle=True, seed=derive_seed(cfg.seed, f"epoch{epoch}")):
            idx = torch.as_tensor(idx)
            logits = net(x[idx])
            loss = F.cross_entropy(logits, y[idx])
            if not torch.isfinite(loss):
                raise TrainingError("DIVERGENCE", f"non-finite classifier loss at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
            seen += len(idx)
            correct += int((logits.argmax(dim=1) == y[idx]).sum())
        net.eval()
        record = {
            "epoch": epoch,
            "cross_entropy": total / seen,
            "train_accuracy": correct / seen,
            "test_accuracy": _evaluate_accuracy(net, tx, ty) if tx is not None else None,
        }
        history.append(record, time.perf_counter() - start)
        if log:
            log(f"epoch {epoch}: loss {record['cross_entropy']:.4f} train_acc {record['train_accuracy']:.3f} "
                f"test_acc {record['test_accuracy']}")
    return net, history


def train_classifier(
    cfg: ClassifierTrainConfig,
    train: DatasetManifest,
    test: DatasetManifest,
    spec: NetworkSpec,
    out_path=None,
    log=None,
):
    """Train the victim classifier from labeled manifests.

    With ``cfg.init_checkpoint`` the network starts from that checkpoint (the
    pretrained regime); otherwise from a seeded random initialisation.
    Returns ``(Checkpoint, TrainHistory)``; the checkpoint is written to
    ``out_path`` when given.
    """
    if train.num_classes != test.num_classes or train.num_classes != spec.num_classes:
        raise TrainingError(
            "CLASS_COUNT_MISMATCH",
            f"train {train.num_classes}, test {test.num_classes}, spec {spec.num_classes} classes",
        )
    size = spec.input_size
    net, history = fit_classifier(
        cfg,
        spec,
        load_images(train.paths, size),
        train.labels,
        load_images(test.paths, size),
        test.labels,
        log=log,
    )
    meta = dict(
        epoch=cfg.epochs,
        seed=cfg.seed,
        config_digest=history.config_digest,
        regime=cfg.regime,
        init_checkpoint=cfg.init_checkpoint,
        test_accuracy=history.records[-1]["test_accuracy"],
    )
    ckpt = save_checkpoint(net, out_path, **meta) if out_path else Checkpoint.from_network(net, **meta)
    return ckpt, history


@dataclass
class AttackResult:
    generator: Checkpoint
    reconstructor: Checkpoint
    disc_x: Checkpoint
    disc_y: Checkpoint
    history: TrainHistory
    snapshots: List[Checkpoint]
    selected: Optional[Checkpoint] = None


def _victim_logits(victim, images):
    size = victim.spec.input_size
    if images.shape[1] != size:
        nchw = F.interpolate(images.permute(0, 3, 1, 2), size=(size, size), mode="bilinear", align_corners=False)
        images = nchw.permute(0, 2, 3, 1)
    return victim(images)


def objective_met(logits, cfg: obj.AttackConfig, true_label):
    """Boolean per sample: prediction differs from ``true_label`` (untargeted) or equals the target."""
    pred = logits.argmax(dim=1)
    if cfg.mode == obj.TARGETED:
        return pred == cfg.target_label
    return pred != true_label


def run_attack(
    cfg: obj.AttackConfig,
    victim,
    x_images,
    attacker_label: int,
    y_images,
    out_dir=None,
    deterministic: bool = True,
    log: Optional[Callable[[str], None]] = None,
) -> AttackResult:
    """Attack training on in-memory arrays.

    ``victim`` is a classifier network or :class:`Checkpoint`; it is frozen and
    never updated. ``x_images`` are the attacker's non-makeup faces,
    ``y_images`` the unlabeled makeup faces. Snapshots of all four trainable
    networks are kept every ``cfg.checkpoint_every`` epochs and at the final
    epoch, and written under ``out_dir`` when given.
    """
    if isinstance(victim, Checkpoint):
        victim = victim.build(torch.float32)
    victim = freeze(victim)
    k = victim.spec.num_classes
    if not 0 <= attacker_label < k:
        raise TrainingError("INCOMPATIBLE_VICTIM", f"attacker label {attacker_label} outside victim's {k} classes")
    if cfg.mode == obj.TARGETED and not 0 <= cfg.target_label < k:
        raise TrainingError("INCOMPATIBLE_VICTIM", f"target label {cfg.target_label} outside victim's {k} classes")

    x_all = _to_tensor(x_images)
    y_all = _to_tensor(y_images)
    if x_all.shape[1:] != y_all.shape[1:]:
        raise TrainingError("SHAPE_MISMATCH", "non-makeup and makeup images must share a shape")
    size = x_all.shape[1]
    gen_spec = NetworkSpec(GENERATOR, size, cfg.generator_width, cfg.generator_depth)
    disc_spec = NetworkSpec(DISCRIMINATOR, size, cfg.discriminator_width, cfg.discriminator_depth)
    seed = cfg.seed
    with deterministic_mode(deterministic):
        G = build_generator(gen_spec, derive_seed(seed, "generator"))
        G_R = build_generator(gen_spec, derive_seed(seed, "reconstructor"))
        D_X = build_discriminator(disc_spec, derive_seed(seed, "disc_x"))
        D_Y = build_discriminator(disc_spec, derive_seed(seed, "disc_y"))
        betas = (cfg.beta1, cfg.beta2)
        opt_g = torch.optim.Adam(list(G.parameters()) + list(G_R.parameters()), lr=cfg.learning_rate, betas=betas)
        opt_d = torch.optim.Adam(list(D_X.parameters()) + list(D_Y.parameters()), lr=cfg.learning_rate, betas=betas)
        delta_rng = torch.Generator().manual_seed(derive_seed(seed, "delta"))
        label_t = torch.tensor(attacker_label)

        digest = config_digest({"attack": cfg.to_dict(), "attacker_label": attacker_label, "victim": victim.spec.to_dict()})
        history = TrainHistory(seed=seed, config_digest=digest)
        snapshots: List[Checkpoint] = []
        finals = None
        out_dir = Path(out_dir) if out_dir else None

        def snapshot(epoch):
            meta = dict(epoch=epoch, seed=seed, config_digest=digest, attacker_label=attacker_label, mode=cfg.mode,
                        target_label=cfg.target_label)
            nets = {"generator": G, "reconstructor": G_R, "disc_x": D_X, "disc_y": D_Y}
            ckpts = {}
            for name, net in nets.items():
                if out_dir:
                    ckpts[name] = save_checkpoint(net, out_dir / "checkpoints" / f"{name}_epoch{epoch:04d}.npz",
                                                  role=name, **meta)
                else:
                    ckpts[name] = Checkpoint.from_network(net, role=name, **meta)
            return ckpts

        for epoch in range(1, cfg.epochs + 1):
            start = time.perf_counter()
            x_batches = batch_indices(len(x_all), cfg.batch_size, True, derive_seed(seed, f"x-epoch{epoch}"))
            y_order = np.random.default_rng(derive_seed(seed, f"y-epoch{epoch}")).permutation(len(y_all))
            sums = dict(gan=0.0, cycle=0.0, identity=0.0, adv=0.0, d_loss=0.0, g_loss=0.0)
            met = saturated = count = 0
            y_pos = 0
            for idx in x_batches:
                yi = np.take(y_order, np.arange(y_pos, y_pos + len(idx)), mode="wrap")
                y_pos += len(idx)
                x = x_all[torch.as_tensor(idx)]
                y = y_all[torch.as_tensor(yi)]

                # discriminator step
                with torch.no_grad():
                    fake_y = G(x)
                    fake_x = G_R(y)
                d_loss = obj.discriminator_loss(D_X(x), D_Y(y), D_Y(fake_y), D_X(fake_x))
                opt_d.zero_grad()
                d_loss.backward()
                opt_d.step()

                # generator step
                x_in = obj.perturb_input(x, cfg.additive_delta_scale, delta_rng)
                fake_y = G(x_in)
                fake_x = G_R(y)
                score_fy, score_fx = D_Y(fake_y), D_X(fake_x)
                g_gan = obj.generator_gan_loss(score_fy, score_fx)
                cyc = obj.cycle_loss(x_in, G_R(fake_y), y, G(fake_x), cfg.l1_reduction)
                idt = obj.identity_loss(x_in, G_R(x_in), y, G(y), cfg.l1_reduction)
                logits = _victim_logits(victim, obj.gaussian_blur(fake_y, cfg.blur))
                margins = (obj.margin_targeted(logits, cfg.target_label, cfg.kappa) if cfg.mode == obj.TARGETED
                           else obj.margin_untargeted(logits, label_t, cfg.kappa))
                adv = margins.mean()
                g_loss = g_gan + cfg.lambda_cycle * cyc + cfg.alpha_identity * idt + adv
                if not torch.isfinite(g_loss) or not torch.isfinite(d_loss):
                    raise _divergence(epoch, snapshots, history)
                opt_g.zero_grad()
                g_loss.backward()
                opt_g.step()

                with torch.no_grad():
                    gan_val = obj.gan_loss(D_X(x_in), D_Y(y), score_fy.detach(), score_fx.detach())
                n = len(idx)
                for key, val in (("gan", gan_val), ("cycle", cyc), ("identity", idt), ("adv", adv),
                                 ("d_loss", d_loss), ("g_loss", g_loss)):
                    sums[key] += val.item() * n
                met += int(objective_met(logits.detach(), cfg, attacker_label).sum())
                saturated += int((margins.detach() <= -cfg.kappa).sum())
                count += n

            means = {k_: v / count for k_, v in sums.items()}
            if not all(math.isfinite(v) for v in means.values()):
                raise _divergence(epoch, snapshots, history)
            breakdown = obj.total_loss(means["gan"], means["cycle"], means["identity"], means["adv"], cfg)
            record = {
                "epoch": epoch,
                **breakdown.to_dict(),
                "d_loss": means["d_loss"],
                "g_loss": means["g_loss"],
                "success_rate": met / count,
                "saturated_fraction": saturated / count,
            }
            history.append(record, time.perf_counter() - start)
            if log:
                log(format_breakdown(record))
            if epoch % cfg.checkpoint_every == 0 or epoch == cfg.epochs:
                finals = snapshot(epoch)
                snapshots.append(finals["generator"])

    if out_dir:
        history.to_jsonl(out_dir / "history.jsonl")
    result = AttackResult(
        generator=finals["generator"],
        reconstructor=finals["reconstructor"],
        disc_x=finals["disc_x"],
        disc_y=finals["disc_y"],
        history=history,
        snapshots=snapshots,
    )
    result.selected = select_adversarial_snapshot(history, snapshots)
    return result


def _divergence(epoch, snapshots, history):
    err = TrainingError("DIVERGENCE", f"non-finite loss at epoch {epoch}")
    err.last_checkpoint = snapshots[-1] if snapshots else None
    err.history = history
    return err


def format_breakdown(record):
    return (
        f"epoch {record['epoch']:4d}  gan {record['gan']:.4f}  cycle {record['cycle']:.3f}  "
        f"identity {record['identity']:.3f}  cyclegan {record['cyclegan_total']:.2f}  adv {record['adv']:.4f}  "
        f"total {record['total']:.2f}  success {record['success_rate']:.2f}"
    )


def train_attack(
    cfg: obj.AttackConfig,
    victim: Checkpoint,
    x_set: DatasetManifest,
    y_set: DatasetManifest,
    attacker_label: Optional[int] = None,
    out_dir=None,
    image_size: Optional[int] = None,
    deterministic: bool = True,
    log=None,
) -> AttackResult:
    """Attack training from manifests.

    ``x_set`` is labeled; when it holds several identities ``attacker_label``
    picks the attacker's images. ``y_set`` must be the makeup domain.
    """
    if victim.spec.kind != CLASSIFIER:
        raise TrainingError("INCOMPATIBLE_VICTIM", f"victim checkpoint is a {victim.spec.kind}")
    if x_set.num_classes != victim.spec.num_classes:
        raise TrainingError(
            "INCOMPATIBLE_VICTIM",
            f"victim has {victim.spec.num_classes} classes, non-makeup set has {x_set.num_classes}",
        )
    if y_set.domain_tag != MAKEUP:
        raise TrainingError("WRONG_DOMAIN", "y_set must be the MAKEUP domain")
    labels = sorted({lbl for _, lbl in x_set.entries})
    if attacker_label is None:
        if len(labels) != 1:
            raise TrainingError("AMBIGUOUS_ATTACKER", "x_set has several identities; pass attacker_label")
        attacker_label = labels[0]
    x_paths = [p for p, lbl in x_set.entries if lbl == attacker_label]
    if not x_paths:
        raise TrainingError("EMPTY_DATASET", f"no images of class {attacker_label} in x_set")
    size = image_size or victim.spec.input_size
    return run_attack(
        cfg,
        victim,
        load_images(x_paths, size),
        attacker_label,
        load_images(y_set.paths, size),
        out_dir=out_dir,
        deterministic=deterministic,
        log=log,
    )


def select_adversarial_snapshot(history: TrainHistory, checkpoints, success_fraction: float = 0.5) -> Checkpoint:
    """Pick the snapshot used as the adversarial generator.

    Among checkpointed epochs where at least ``success_fraction`` of samples
    reached the full margin ``-kappa``, return the one minimising
    ``adv + lambda * cycle`` (cycle loss stands in for visual naturalness).
    Without such an epoch the lowest-``adv`` snapshot is returned with
    ``metadata["selection_warning"] = True``.
    """
    checkpoints = list(checkpoints)
    if not checkpoints:
        raise TrainingError("NO_CHECKPOINT", "at least one checkpoint is required")
    if len(checkpoints) == 1:
        return _tag(checkpoints[0], warning=False, score=None)
    by_epoch = {r["epoch"]: r for r in history.records}
    candidates = [(c, by_epoch.get(c.epoch)) for c in checkpoints]
    candidates = [(c, r) for c, r in candidates if r is not None]
    if not candidates:
        raise TrainingError("NO_CHECKPOINT", "no checkpoint matches a history record")
    succeeded = [(c, r) for c, r in candidates if r.get("saturated_fraction", 0.0) >= success_fraction]
    if succeeded:
        best, rec = min(succeeded, key=lambda cr: (cr[1]["adv"] + cr[1]["lambda_cycle"] * cr[1]["cycle"], cr[1]["epoch"]))
        return _tag(best, warning=False, score=rec["adv"] + rec["lambda_cycle"] * rec["cycle"])
    logger.warning("NO_SUCCESSFUL_EPOCH: no checkpointed epoch reached the full margin; using lowest adv loss")
    best, rec = min(candidates, key=lambda cr: (cr[1]["adv"], cr[1]["cycle"], cr[1]["epoch"]))
    return _tag(best, warning=True, score=rec["adv"])


def _tag(ckpt, warning, score):
    return Checkpoint(ckpt.spec, ckpt.parameters, {**ckpt.metadata, "selection_warning": warning, "selection_score": score})

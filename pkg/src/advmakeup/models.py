"""Generators, discriminators and the victim classifier, plus checkpoint I/O.

Every network takes channel-last image batches ``(N, H, W, 3)`` in [0, 1]:

* :class:`Generator` - encoder, residual blocks, decoder; outputs in [0, 1]
  through a sigmoid, optionally added to the input's logit so that a freshly
  initialised generator starts close to the identity map.
* :class:`Discriminator` - patch-level convolutional scorer; the sigmoid patch
  scores are averaged into one realness score per image.
* :class:`Classifier` - VGG-style stack of 3x3 convolution blocks followed by
  two fully connected layers; returns pre-softmax logits.

Checkpoints are a ``.npz`` parameter archive plus a JSON sidecar holding the
network spec and run metadata.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from advmakeup.errors import CheckpointError, ModelError

GENERATOR = "generator"
DISCRIMINATOR = "discriminator"
CLASSIFIER = "classifier"
KINDS = (GENERATOR, DISCRIMINATOR, CLASSIFIER)

FORMAT_VERSION = 1
_LOGIT_EPS = 1e-4


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture description. ``depth`` counts residual blocks for a
    generator, stride-2 layers for a discriminator and conv blocks for a
    classifier."""

    kind: str
    input_size: int = 64
    base_width: int = 16
    depth: int = 3
    num_classes: Optional[int] = None
    input_skip: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ModelError("SPEC_MISMATCH", f"unknown network kind {self.kind!r}")
        if self.input_size < 4 or self.base_width < 1 or self.depth < 0:
            raise ModelError("SPEC_MISMATCH", "input_size >= 4, base_width >= 1, depth >= 0 required")
        if self.kind == CLASSIFIER:
            if self.num_classes is None or self.num_classes < 2:
                raise ModelError("SPEC_MISMATCH", "classifiers need num_classes >= 2")
            if self.input_size % (2**self.depth):
                raise ModelError("SPEC_MISMATCH", "classifier input_size must be divisible by 2**depth")
        if self.kind == GENERATOR and self.input_size % 4:
            raise ModelError("SPEC_MISMATCH", "generator input_size must be divisible by 4")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


def _to_nchw(x):
    if x.dim() == 3:
        x = x.unsqueeze(0)
    return x.permute(0, 3, 1, 2)


def _check_input(spec, x):
    if x.dim() not in (3, 4) or x.shape[-1] != 3 or x.shape[-2] != spec.input_size or x.shape[-3] != spec.input_size:
        raise ModelError(
            "SPEC_MISMATCH",
            f"expected (N, {spec.input_size}, {spec.input_size}, 3) input, got {tuple(x.shape)}",
        )


class ResidualBlock(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.block = nn.Sequential(
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, 3),
            nn.InstanceNorm2d(channels),
            nn.ReLU(inplace=True),
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, 3),
            nn.InstanceNorm2d(channels),
        )

    def forward(self, x):
        return x + self.block(x)


class Generator(nn.Module):
    def __init__(self, spec: NetworkSpec):
        super().__init__()
        if spec.kind != GENERATOR:
            raise ModelError("SPEC_MISMATCH", f"expected a generator spec, got {spec.kind}")
        self.spec = spec
        w = spec.base_width
        layers = [
            nn.ReflectionPad2d(3),
            nn.Conv2d(3, w, 7),
            nn.InstanceNorm2d(w),
            nn.ReLU(inplace=True),
        ]
        for mult in (1, 2):
            layers += [
                nn.Conv2d(w * mult, w * mult * 2, 3, stride=2, padding=1),
                nn.InstanceNorm2d(w * mult * 2),
                nn.ReLU(inplace=True),
            ]
        layers += [ResidualBlock(4 * w) for _ in range(spec.depth)]
        for mult in (4, 2):
            layers += [
                nn.ConvTranspose2d(w * mult, w * mult // 2, 3, stride=2, padding=1, output_padding=1),
                nn.InstanceNorm2d(w * mult // 2),
                nn.ReLU(inplace=True),
            ]
        layers += [nn.ReflectionPad2d(3), nn.Conv2d(w, 3, 7)]
        self.net = nn.Sequential(*layers)
        if spec.input_skip:
            # start as a near-identity map; the decoder learns a residual in logit space
            nn.init.zeros_(self.net[-1].bias)
            self.net[-1].weight.data.mul_(0.1)

    def forward(self, x):
        _check_input(self.spec, x)
        single = x.dim() == 3
        h = self.net(_to_nchw(x))
        if self.spec.input_skip:
            base = _to_nchw(x).clamp(_LOGIT_EPS, 1 - _LOGIT_EPS)
            h = h + torch.log(base) - torch.log1p(-base)
        out = torch.sigmoid(h).permute(0, 2, 3, 1)
        return out.squeeze(0) if single else out


class Discriminator(nn.Module):
    def __init__(self, spec: NetworkSpec):
        super().__init__()
        if spec.kind != DISCRIMINATOR:
            raise ModelError("SPEC_MISMATCH", f"expected a discriminator spec, got {spec.kind}")
        self.spec = spec
        w = spec.base_width
        layers = []
        c_in = 3
        for i in range(spec.depth):
            c_out = w * 2 ** min(i, 3)
            layers.append(nn.Conv2d(c_in, c_out, 4, stride=2, padding=1))
            if i > 0:
                layers.append(nn.InstanceNorm2d(c_out))
            layers.append(nn.LeakyReLU(0.2, inplace=True))
            c_in = c_out
        layers.append(nn.Conv2d(c_in, 1, 3, padding=1))
        self.net = nn.Sequential(*layers)

    def patch_logits(self, x):
        _check_input(self.spec, x)
        return self.net(_to_nchw(x))

    def forward(self, x):
        """Realness score per image, the mean sigmoid over the patch grid."""
        scores = torch.sigmoid(self.patch_logits(x)).flatten(1).mean(dim=1)
        return scores.squeeze(0) if x.dim() == 3 else scores


class Classifier(nn.Module):
    def __init__(self, spec: NetworkSpec):
        super().__init__()
        if spec.kind != CLASSIFIER:
            raise ModelError("SPEC_MISMATCH", f"expected a classifier spec, got {spec.kind}")
        self.spec = spec
        w = spec.base_width
        layers = []
        c_in = 3
        for i in range(spec.depth):
            c_out = w * 2 ** min(i, 3)
            layers += [
                nn.Conv2d(c_in, c_out, 3, padding=1),
                nn.ReLU(inplace=True),
                nn.Conv2d(c_out, c_out, 3, padding=1),
                nn.ReLU(inplace=True),
                nn.MaxPool2d(2),
            ]
            c_in = c_out
        self.features = nn.Sequential(*layers)
        side = spec.input_size // 2**spec.depth
        hidden = 4 * w
        self.head = nn.Sequential(
            nn.Flatten(),
            nn.Linear(c_in * side * side, hidden),
            nn.ReLU(inplace=True),
            nn.Linear(hidden, spec.num_classes),
        )

    def forward(self, x):
        _check_input(self.spec, x)
        single = x.dim() == 3
        logits = self.head(self.features((_to_nchw(x) - 0.5) / 0.5))
        return logits.squeeze(0) if single else logits


_CLASSES = {GENERATOR: Generator, DISCRIMINATOR: Discriminator, CLASSIFIER: Classifier}


def _seeded_build(cls, spec, seed, dtype):
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        net = cls(spec)
    return net.to(dtype)


def build_generator(spec: NetworkSpec, seed: int = 0, dtype=torch.float32) -> Generator:
    if spec.kind != GENERATOR:
        raise ModelError("SPEC_MISMATCH", f"build_generator needs a generator spec, got {spec.kind}")
    return _seeded_build(Generator, spec, seed, dtype)


def build_discriminator(spec: NetworkSpec, seed: int = 0, dtype=torch.float32) -> Discriminator:
    if spec.kind != DISCRIMINATOR:
        raise ModelError("SPEC_MISMATCH", f"build_discriminator needs a discriminator spec, got {spec.kind}")
    return _seeded_build(Discriminator, spec, seed, dtype)


def build_classifier(spec: NetworkSpec, seed: int = 0, init: Optional["Checkpoint"] = None, dtype=torch.float32) -> Classifier:
    """Build a classifier from scratch (seeded) or, given ``init``, from a prior checkpoint."""
    if spec.kind != CLASSIFIER:
        raise ModelError("SPEC_MISMATCH", f"build_classifier needs a classifier spec, got {spec.kind}")
    net = _seeded_build(Classifier, spec, seed, dtype)
    if init is not None:
        if init.spec != spec:
            raise CheckpointError("INCOMPATIBLE_CHECKPOINT", f"checkpoint spec {init.spec} differs from {spec}")
        load_parameters(net, init.parameters)
    return net


def build_network(spec: NetworkSpec, seed: int = 0, dtype=torch.float32):
    return _seeded_build(_CLASSES[spec.kind], spec, seed, dtype)


def parameter_shapes(spec: NetworkSpec):
    """Name -> shape table implied by ``spec``."""
    net = _CLASSES[spec.kind](spec)
    return {name: tuple(p.shape) for name, p in net.state_dict().items()}


def parameter_arrays(net: nn.Module):
    return {name: t.detach().cpu().numpy().copy() for name, t in net.state_dict().items()}


def load_parameters(net: nn.Module, params):
    expected = net.state_dict()
    if set(expected) != set(params):
        raise CheckpointError("INCOMPATIBLE_CHECKPOINT", "parameter names do not match the network")
    tensors = {}
    for name, ref in expected.items():
        arr = np.asarray(params[name])
        if tuple(arr.shape) != tuple(ref.shape):
            raise CheckpointError("INCOMPATIBLE_CHECKPOINT", f"shape mismatch for {name}")
        tensors[name] = torch.as_tensor(arr).to(ref.dtype)
    net.load_state_dict(tensors)
    return net


@dataclass
class Checkpoint:
    spec: NetworkSpec
    parameters: dict
    metadata: dict = field(default_factory=dict)

    @classmethod
    def from_network(cls, net, **metadata):
        return cls(spec=net.spec, parameters=parameter_arrays(net), metadata=dict(metadata))

    def build(self, dtype=None):
        """Instantiate the network carrying these parameters."""
        net = _CLASSES[self.spec.kind](self.spec)
        first = next(iter(self.parameters.values()))
        net = net.to(dtype or torch.as_tensor(first).dtype)
        return load_parameters(net, self.parameters)

    @property
    def epoch(self):
        return self.metadata.get("epoch")


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def save_checkpoint(handle, path, **metadata) -> Checkpoint:
    """Write ``handle`` (a network or a :class:`Checkpoint`) to ``path``.

    ``path`` receives the parameter archive, ``path + ".json"`` the metadata
    sidecar ``{format_version, kind, spec, epoch, seed, config_digest, ...}``.
    """
    if isinstance(handle, Checkpoint):
        ckpt = Checkpoint(handle.spec, handle.parameters, {**handle.metadata, **metadata})
    else:
        ckpt = Checkpoint.from_network(handle, **metadata)
    path = Path(path)
    meta = {
        "epoch": None,
        "seed": None,
        "config_digest": None,
        **ckpt.metadata,
        "format_version": FORMAT_VERSION,
        "kind": ckpt.spec.kind,
        "spec": ckpt.spec.to_dict(),
        "parameter_names": list(ckpt.parameters),
    }
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as fh:
            np.savez(fh, **{f"p{i}": np.asarray(a) for i, a in enumerate(ckpt.parameters.values())})
        _sidecar(path).write_text(json.dumps(meta, indent=2, sort_keys=True))
    except OSError as exc:
        raise CheckpointError("IO_FAILURE", str(exc)) from exc
    ckpt.metadata = {k: v for k, v in meta.items() if k not in ("format_version", "kind", "spec", "parameter_names")}
    return ckpt


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        raw = _sidecar(path).read_text()
    except OSError as exc:
        raise CheckpointError("IO_FAILURE", str(exc)) from exc
    try:
        meta = json.loads(raw)
        version = meta["format_version"]
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError("VERSION_MISMATCH", f"unreadable checkpoint header in {_sidecar(path)}") from exc
    if version != FORMAT_VERSION:
        raise CheckpointError("VERSION_MISMATCH", f"format_version {version} != {FORMAT_VERSION}")
    try:
        spec = NetworkSpec.from_dict(meta["spec"])
        names = meta["parameter_names"]
        with np.load(path, allow_pickle=False) as archive:
            params = {name: archive[f"p{i}"] for i, name in enumerate(names)}
    except (OSError, KeyError, ValueError) as exc:
        raise CheckpointError("IO_FAILURE", f"cannot read parameters from {path}: {exc}") from exc
    metadata = {k: v for k, v in meta.items() if k not in ("format_version", "kind", "spec", "parameter_names")}
    return Checkpoint(spec=spec, parameters=params, metadata=metadata)


def freeze(net: nn.Module) -> nn.Module:
    net.eval()
    for p in net.parameters():
        p.requires_grad_(False)
    return net


def checkpoint_exists(path) -> bool:
    path = Path(path)
    return path.is_file() and os.path.isfile(_sidecar(path))

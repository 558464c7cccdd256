"""Config canonicalisation, digests and per-component seed derivation."""

from __future__ import annotations

import contextlib
import hashlib
import json

import torch


def canonical_json(data) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"), default=str)


def config_digest(data) -> str:
    """sha256 hex digest of the canonical JSON encoding of ``data``."""
    return hashlib.sha256(canonical_json(data).encode("utf-8")).hexdigest()


def derive_seed(seed: int, component: str) -> int:
    """Seed for one component of a run.

    ``int(sha256(f"{seed}:{component}")[:8], 16)``, a 32-bit value, so a single
    top-level seed reproduces every random stream of the run.
    """
    return int(hashlib.sha256(f"{seed}:{component}".encode("utf-8")).hexdigest()[:8], 16)


@contextlib.contextmanager
def deterministic_mode(enabled: bool = True):
    """Force deterministic torch kernels inside the block."""
    if not enabled:
        yield
        return
    previous = torch.are_deterministic_algorithms_enabled()
    torch.use_deterministic_algorithms(True)
    try:
        yield
    finally:
        torch.use_deterministic_algorithms(previous)

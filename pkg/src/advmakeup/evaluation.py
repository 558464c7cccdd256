"""Frame-based evaluation: per-class frame percentages and attack reports.

A "video" is an ordered directory of frame images. Each frame is assigned the
argmax class of the victim's logits, and the share of frames per class,
expressed in percent, is the reported probability of that class.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np
import torch

from advmakeup import objectives as obj
from advmakeup.dataset import IMAGE_SUFFIXES, load_images
from advmakeup.errors import EvaluationError

DIGITAL = "DIGITAL"
PHYSICAL = "PHYSICAL"
DEFAULT_TAU = 50.0


@dataclass
class FrameSet:
    frames: np.ndarray
    source: str = ""
    attacker_label: Optional[int] = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 4 or len(self.frames) == 0:
            raise EvaluationError("EMPTY_FRAMESET", "a frame set needs at least one (H, W, 3) frame")

    def __len__(self):
        return len(self.frames)

    @classmethod
    def from_directory(cls, directory, attacker_label=None, image_size=64):
        directory = Path(directory)
        paths = sorted(p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES) \
            if directory.is_dir() else []
        if not paths:
            raise EvaluationError("EMPTY_FRAMESET", f"no frames in {directory}")
        return cls(load_images(paths, image_size), str(directory), attacker_label)


@dataclass
class EvaluationReport:
    per_class_percent: List[float]
    attacker_label: int
    mode: str
    target_label: Optional[int] = None
    success: bool = False
    baseline_per_class_percent: Optional[List[float]] = None
    unblurred_per_class_percent: Optional[List[float]] = None
    tau: float = DEFAULT_TAU
    tau_prime: float = DEFAULT_TAU
    num_frames: int = 0
    digital_or_physical: str = DIGITAL
    config_digest: Optional[str] = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        total = float(np.sum(self.per_class_percent))
        if abs(total - 100.0) > 1e-9 or any(p < 0 or p > 100 for p in self.per_class_percent):
            raise EvaluationError("INVALID_REPORT", f"per-class percents must lie in [0, 100] and sum to 100, got {total}")

    @property
    def attacker_percent(self):
        return self.per_class_percent[self.attacker_label]

    def to_dict(self):
        out = {
            "mode": self.mode,
            "attacker_label": self.attacker_label,
            "per_class_percent": list(self.per_class_percent),
            "success": self.success,
            "thresholds": {"tau": self.tau, "tau_prime": self.tau_prime},
            "baseline_per_class_percent": self.baseline_per_class_percent,
            "unblurred_per_class_percent": self.unblurred_per_class_percent,
            "num_frames": self.num_frames,
            "digital_or_physical": self.digital_or_physical,
            "config_digest": self.config_digest,
        }
        if self.target_label is not None:
            out["target_label"] = self.target_label
        if self.extra:
            out["extra"] = self.extra
        return out


def _predict(classifier, frames, batch_size=64):
    preds = []
    with torch.no_grad():
        for i in range(0, len(frames), batch_size):
            batch = torch.as_tensor(frames[i:i + batch_size])
            # argmax returns the first maximal index on ties
            preds.append(classifier(batch).argmax(dim=1).cpu().numpy())
    return np.concatenate(preds)


def _num_classes(classifier):
    spec = getattr(classifier, "spec", None)
    if spec is None or spec.num_classes is None:
        raise EvaluationError("DIMENSION_MISMATCH", "classifier must expose spec.num_classes")
    return spec.num_classes


def classify_frames(classifier, frames) -> np.ndarray:
    """Count how many frames the classifier assigns to each class."""
    fs = frames if isinstance(frames, FrameSet) else FrameSet(frames)
    k = _num_classes(classifier)
    size = classifier.spec.input_size
    if fs.frames.shape[1:] != (size, size, 3):
        raise EvaluationError("DIMENSION_MISMATCH", f"frames {fs.frames.shape[1:]} vs classifier input {(size, size, 3)}")
    return np.bincount(_predict(classifier, fs.frames), minlength=k).astype(np.int64)


def frame_probability(counts) -> List[float]:
    """Percent of frames per class: ``100 * count_i / total``."""
    counts = np.asarray(counts, dtype=np.int64)
    total = int(counts.sum())
    if total <= 0:
        raise EvaluationError("EMPTY_FRAMESET", "no frames were counted")
    return [100.0 * int(c) / total for c in counts]


def _apply(generator, frames, blur: Optional[obj.BlurConfig], batch_size=32):
    outs = []
    with torch.no_grad():
        for i in range(0, len(frames), batch_size):
            batch = torch.as_tensor(frames[i:i + batch_size])
            g = generator(batch)
            if blur is not None:
                g = obj.gaussian_blur(g, blur)
            outs.append(g.cpu().numpy())
    return np.concatenate(outs).astype(np.float32)


def attack_report(
    classifier,
    generator,
    blur: obj.BlurConfig,
    frames,
    mode: str,
    attacker_label: int,
    target_label: Optional[int] = None,
    tau: float = DEFAULT_TAU,
    tau_prime: float = DEFAULT_TAU,
    config_digest: Optional[str] = None,
) -> EvaluationReport:
    """Classify ``blur(G(frame))`` for every frame and summarise the attack.

    Untargeted success means the attacker's share falls below ``tau`` percent;
    targeted success means the target's share exceeds ``tau_prime`` percent.
    The clean frames (no generator, no blur) and the unblurred generator
    outputs are reported alongside.
    """
    if mode not in obj.MODES:
        raise EvaluationError("INVALID_MODE", mode)
    if (mode == obj.TARGETED) != (target_label is not None):
        raise EvaluationError("INVALID_MODE", "target_label is required for targeted mode and forbidden otherwise")
    fs = frames if isinstance(frames, FrameSet) else FrameSet(frames, attacker_label=attacker_label)
    k = _num_classes(classifier)
    for lbl in (attacker_label, target_label):
        if lbl is not None and not 0 <= lbl < k:
            raise EvaluationError("LABEL_OUT_OF_RANGE", f"label {lbl} outside [0, {k})")

    baseline = frame_probability(classify_frames(classifier, fs))
    attacked = frame_probability(classify_frames(classifier, _apply(generator, fs.frames, blur)))
    unblurred = frame_probability(classify_frames(classifier, _apply(generator, fs.frames, None)))
    if mode == obj.UNTARGETED:
        success = attacked[attacker_label] < tau
    else:
        success = attacked[target_label] > tau_prime
    return EvaluationReport(
        per_class_percent=attacked,
        attacker_label=attacker_label,
        mode=mode,
        target_label=target_label,
        success=bool(success),
        baseline_per_class_percent=baseline,
        unblurred_per_class_percent=unblurred,
        tau=tau,
        tau_prime=tau_prime,
        num_frames=len(fs),
        config_digest=config_digest,
    )


def perclass_csv(report: EvaluationReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["class", "percent"])
    for i, p in enumerate(report.per_class_percent):
        writer.writerow([i, f"{p:.6f}"])
    return buf.getvalue()


def emit_report(report: EvaluationReport, out_dir) -> dict:
    """Write ``report.json``, ``perclass.csv`` and ``perclass.png`` into ``out_dir``."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    paths = {
        "json": out_dir / "report.json",
        "csv": out_dir / "perclass.csv",
        "chart": out_dir / "perclass.png",
    }
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        paths["json"].write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
        paths["csv"].write_text(perclass_csv(report))

        classes = np.arange(len(report.per_class_percent))
        fig, ax = plt.subplots(figsize=(max(4, 0.7 * len(classes) + 2), 3.2))
        bars = ax.bar(classes, report.per_class_percent, color="tab:blue")
        highlight = report.target_label if report.target_label is not None else report.attacker_label
        bars[highlight].set_color("tab:red")
        for x, p in zip(classes, report.per_class_percent):
            ax.text(x, p + 1, f"{p:.0f}%", ha="center", va="bottom", fontsize=8)
        ax.set_xticks(classes)
        ax.set_xlabel("class")
        ax.set_ylabel("frames (%)")
        ax.set_ylim(0, 110)
        ax.set_title(f"{report.mode} attack, attacker {report.attacker_label}")
        fig.tight_layout()
        fig.savefig(paths["chart"], format="png", metadata={"Software": None})
        plt.close(fig)
    except OSError as exc:
        raise EvaluationError("IO_FAILURE", str(exc)) from exc
    return paths

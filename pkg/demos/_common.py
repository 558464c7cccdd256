"""Shared setup for the demo scripts: a synthetic corpus and a desk-scale victim."""

import argparse
from pathlib import Path

from advmakeup.dataset import NON_MAKEUP, scan_manifest
from advmakeup.models import CLASSIFIER, NetworkSpec, checkpoint_exists, load_checkpoint
from advmakeup.synthetic import write_corpus
from advmakeup.training import ClassifierTrainConfig, train_classifier

DEFAULT_OUT = Path(__file__).resolve().parent / "output"


def parse_out(description):
    parser = argparse.ArgumentParser(description=description)
    parser.add_argument("--out", type=Path, default=DEFAULT_OUT, help="where demo artifacts go")
    return parser.parse_args().out


def corpus(out):
    root = Path(out) / "corpus"
    if not (root / "makeup").is_dir():
        print(f"rendering a synthetic 8-identity corpus into {root}")
        write_corpus(root, num_classes=8, train_per_class=40, test_per_class=10, makeup_count=40, size=64, seed=0)
    return root


def victim(out):
    """Load the demo victim, training it first if no checkpoint exists yet."""
    path = Path(out) / "victim.npz"
    if checkpoint_exists(path):
        return load_checkpoint(path)
    root = corpus(out)
    train = scan_manifest(root / "train", NON_MAKEUP)
    test = scan_manifest(root / "test", NON_MAKEUP)
    spec = NetworkSpec(CLASSIFIER, 64, 16, 3, num_classes=train.num_classes)
    cfg = ClassifierTrainConfig(learning_rate=1e-3, epochs=15, batch_size=25, seed=0)
    print(f"training the victim classifier ({cfg.epochs} epochs, this takes well under a minute)")
    ckpt, history = train_classifier(cfg, train, test, spec, out_path=path,
                                     log=lambda line: print("  " + line))
    print(f"victim test accuracy: {history.records[-1]['test_accuracy']:.3f}")
    return ckpt

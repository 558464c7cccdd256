"""The full pipeline driven through the command-line tool.

Each step is printed before it runs, so the output doubles as a usage guide.

Run: python3 demos/06_command_line.py [--out DIR]
"""

import json
import shlex
import subprocess
import sys

import numpy as np

from _common import parse_out
from advmakeup.dataset import save_image
from advmakeup.synthetic import make_identities, render_face

out = parse_out(__doc__) / "cli"
rng = np.random.default_rng(3)
for c, ident in enumerate(make_identities(2, seed=4)):
    for i in range(5):
        save_image(render_face(ident, rng, 80), out / "raw" / f"person{c}" / f"{i}.png")
for i in range(4):
    save_image(render_face(make_identities(1, seed=50 + i)[0], rng, 80, makeup=True), out / "raw_makeup" / f"{i}.png")
(out / "attack.json").write_text(json.dumps({"epochs": 3, "checkpoint_every": 1, "generator_width": 8,
                                              "generator_depth": 1, "discriminator_width": 8,
                                              "discriminator_depth": 2}, indent=2))


def run(*args):
    argv = ["advmakeup", *map(str, args)]
    print("\n$ " + " ".join(shlex.quote(a) for a in argv))
    subprocess.run([sys.executable, "-m", "advmakeup", *argv[1:]], check=True)


run("prepare", "--raw-dir", out / "raw", "--size", 32, "--out", out / "faces")
run("prepare", "--raw-dir", out / "raw_makeup", "--size", 32, "--domain", "MAKEUP", "--out", out / "makeup")
run("train-classifier", "--train-dir", out / "faces", "--test-dir", out / "faces", "--image-size", 32,
    "--base-width", 8, "--depth", 2, "--epochs", 10, "--lr", "1e-3", "--batch-size", 5, "--out", out / "victim")
run("train-attack", "--config", out / "attack.json", "--victim", out / "victim" / "classifier.npz",
    "--x-dir", out / "faces", "--y-dir", out / "makeup", "--attacker-label", 0, "--seed", 1, "--deterministic",
    "--out", out / "attack")
run("generate", "--generator", out / "attack" / "selected_generator.npz", "--input", out / "faces" / "person0",
    "--blur", "--out", out / "generated")
run("evaluate", "--classifier", out / "victim" / "classifier.npz", "--generator",
    out / "attack" / "selected_generator.npz", "--frames", out / "faces" / "person0", "--attacker-label", 0,
    "--out", out / "eval")
print(f"\nreport: {out / 'eval' / 'report.json'}")

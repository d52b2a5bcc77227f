#!/usr/bin/env python3
"""Learning-curve slopes across training regimes at desk scale.

Generates a two-temperature synthetic dataset, trains models on growing
subsets of the low-temperature split under two optimizer settings, fits
log n = m log eps + b to the pooled test errors, and prints both slopes.
Artifacts land in runs/learning_curves/.
"""

import json
import sys
from pathlib import Path

from potscape.cli import run_command

OUT = Path("runs/learning_curves")

COMMON = {
    "data.train_t": 300.0,
    "curve.sizes": [25, 50, 100, 200],
    "model.n_radial": 8,
    "model.hidden": [16, 16],
    "train.max_epochs": 400,
    "train.batch_size": 25,
    "train.lr0": 0.01,
    "train.weight_schedule": [[0, 1.0, 25.0]],
    "seed": 0,
}


def main() -> int:
    gen = OUT / "data"
    code = run_command("gen-data", {
        "potential.kind": "morse",
        "data.n_atoms": 6,
        "data.species": "Cu",
        "data.temperatures": [300.0, 600.0],
        "data.frames_per_t": 250,
        "data.burn_in_steps": 1000,
        "data.stride": 20,
        "seed": 0,
    }, gen)
    if code != 0:
        return code

    for label, amsgrad in (("adam", False), ("amsgrad", True)):
        out = OUT / label
        code = run_command("learning-curve", {
            "data.path": str(gen / "dataset.extxyz"),
            "train.amsgrad": amsgrad,
            **COMMON,
        }, out)
        if code != 0:
            return code
        fit = json.loads((out / "slope.json").read_text())
        print(f"{label:8s} slope m = {fit['m']:+.3f}  (r2 = {fit['r2']:.3f})")
    return 0


if __name__ == "__main__":
    sys.exit(main())

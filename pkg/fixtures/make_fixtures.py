"""Regenerates every fixture in this directory from fixed seeds.

Run from the repository root:

    python3 fixtures/make_fixtures.py

All outputs are deterministic; rerunning must leave the directory
byte-identical (the model binary, its sidecar, and the JSON goldens).
"""

import json
import sys
from pathlib import Path

import numpy as np

from gsbak import (AttackConfig, AttackGoal, attack, generate_synthetic_task,
                   save_model)

ROOT = Path(__file__).resolve().parent


def _dump(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def make_mlp_golden():
    model, samples = generate_synthetic_task(42, 16, 6, "mlp", n_samples=1)
    save_model(model, ROOT / "mlp_small.gsbk")
    x, _ = samples[0]
    probs = model.predict_probs(x)
    _dump(ROOT / "mlp_small_golden.json",
          {"input": [repr_float(v) for v in x],
           "probs": [repr_float(v) for v in probs]})


def repr_float(v) -> float:
    # json round-trips python floats exactly; this just forces float type
    return float(v)


def _full_vector(target_probs, n_classes):
    """Targets occupy classes 0..len-1; the residual mass spreads evenly
    over the remaining classes, each strictly below the smallest target."""
    residual = 1.0 - sum(target_probs)
    n_rest = n_classes - len(target_probs)
    fill = residual / n_rest
    assert fill < min(target_probs), "filler class would enter the top set"
    return list(target_probs) + [fill] * n_rest


def make_worked_weights():
    n_classes = 15
    init = {
        "targets": [0, 1, 2],
        "p0": _full_vector([0.12, 0.13, 0.10], n_classes),
        "probs": [
            _full_vector([0.13, 0.14, 0.11], n_classes),
            _full_vector([0.11, 0.12, 0.11], n_classes),
        ],
        "expected": [0.09, 0.01],
    }
    _dump(ROOT / "worked_weights_init.json", init)

    boundary = {
        "targets": [0, 1, 2],
        "p0": _full_vector([0.10, 0.08, 0.12], n_classes),
        "probs": [
            _full_vector([0.09, 0.07, 0.11], n_classes),
            _full_vector([0.09, 0.07, 0.15], n_classes),
            _full_vector([0.11, 0.09, 0.13], n_classes),
        ],
        "expected": [0.0, 0.03, 0.09],
    }
    _dump(ROOT / "worked_weights_boundary.json", boundary)


def make_golden_trace():
    cfg = {
        "task_seed": 21, "d": 24, "classes": 8, "flavor": "linear",
        "sample_index": 0, "mode": "untargeted", "k": 2,
        "budget": 2500, "attack_seed": 13, "attack_options": {},
    }
    model, samples = generate_synthetic_task(
        cfg["task_seed"], cfg["d"], cfg["classes"], cfg["flavor"],
        n_samples=cfg["sample_index"] + 1)
    x, labels = samples[cfg["sample_index"]]
    cfg["source"] = list(labels)
    goal = AttackGoal.untargeted(tuple(labels), cfg["k"])
    trace = attack(model, x, goal, cfg["budget"], cfg["attack_seed"],
                   AttackConfig(**cfg["attack_options"]))
    assert trace.success and not trace.failed
    _dump(ROOT / "golden_trace_config.json", cfg)
    trace.save(ROOT / "golden_trace.json")


def main():
    make_mlp_golden()
    make_worked_weights()
    make_golden_trace()
    print("fixtures written to", ROOT)
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Golden-value regression checks.

Fixtures live in <repo>/fixtures (override with GSBAK_FIXTURES): a small
saved MLP with a recorded prediction, hand-computed estimator weight
vectors, and a recorded attack trace. verify_goldens() replays all of them
and reports one (name, ok, detail) triple per check; the CLI turns that
into PASS/FAIL lines.
"""

import json
import os
from pathlib import Path

import numpy as np

from .attack import AttackConfig, AttackTrace, attack
from .estimators import ProbeBatch, boundary_probe_weights, init_probe_weights
from .models import FixtureMissing, generate_synthetic_task, load_model
from .oracle import AttackGoal

WEIGHT_TOL = 1e-12
PREDICTION_TOL = 1e-12
TRACE_NORM_TOL = 1e-9


def fixtures_dir() -> Path:
    env = os.environ.get("GSBAK_FIXTURES")
    if env:
        return Path(env)
    return Path(__file__).resolve().parents[2] / "fixtures"


def _check_mlp_prediction(root: Path):
    model = load_model(root / "mlp_small.gsbk")
    with open(root / "mlp_small_golden.json") as fh:
        golden = json.load(fh)
    x = np.array(golden["input"])
    expected = np.array(golden["probs"])
    got = model.predict_probs(x)
    err = float(np.max(np.abs(got - expected)))
    return err <= PREDICTION_TOL, f"max abs error {err:.3e}"


def _batch_from_fixture(payload) -> ProbeBatch:
    p0 = np.array(payload["p0"])
    probs = np.array(payload["probs"])
    n = probs.shape[0]
    # placeholder directions: weights do not depend on them
    noises = np.eye(n, 4)
    return ProbeBatch(x0=np.zeros(4), p0=p0, noises=noises, probs=probs)


def _check_init_weights(root: Path):
    with open(root / "worked_weights_init.json") as fh:
        payload = json.load(fh)
    goal = AttackGoal.targeted(tuple(payload["targets"]), len(payload["targets"]))
    weights = init_probe_weights(_batch_from_fixture(payload), goal, "proposed")
    expected = np.array(payload["expected"])
    err = float(np.max(np.abs(weights - expected)))
    return err <= WEIGHT_TOL, f"weights {weights.tolist()}, max abs error {err:.3e}"


def _check_boundary_weights(root: Path):
    with open(root / "worked_weights_boundary.json") as fh:
        payload = json.load(fh)
    goal = AttackGoal.targeted(tuple(payload["targets"]), len(payload["targets"]))
    weights = boundary_probe_weights(_batch_from_fixture(payload), goal, "proposed")
    expected = np.array(payload["expected"])
    err = float(np.max(np.abs(weights - expected)))
    return err <= WEIGHT_TOL, f"weights {weights.tolist()}, max abs error {err:.3e}"


def _check_trace_replay(root: Path):
    with open(root / "golden_trace_config.json") as fh:
        cfg = json.load(fh)
    expected = AttackTrace.load(root / "golden_trace.json")
    model, samples = generate_synthetic_task(
        cfg["task_seed"], cfg["d"], cfg["classes"], cfg["flavor"],
        n_samples=cfg["sample_index"] + 1)
    x, _ = samples[cfg["sample_index"]]
    if cfg["mode"] == "targeted":
        goal = AttackGoal.targeted(tuple(cfg["targets"]), cfg["k"])
    else:
        goal = AttackGoal.untargeted(tuple(cfg["source"]), cfg["k"])
    trace = attack(model, x, goal, cfg["budget"], cfg["attack_seed"],
                   AttackConfig(**cfg.get("attack_options", {})))
    if len(trace.entries) != len(expected.entries):
        return False, (f"entry count {len(trace.entries)} != "
                       f"{len(expected.entries)}")
    for got, want in zip(trace.entries, expected.entries):
        if (got.kind, got.queries, got.adversarial) != (want.kind, want.queries,
                                                        want.adversarial):
            return False, f"entry mismatch at step {got.step}"
        if abs(got.norm - want.norm) > TRACE_NORM_TOL * max(1.0, abs(want.norm)):
            return False, (f"norm drift at step {got.step}: "
                           f"{got.norm!r} vs {want.norm!r}")
    if trace.total_queries != expected.total_queries:
        return False, "total query count changed"
    return True, (f"{len(trace.entries)} entries, {trace.total_queries} queries, "
                  f"final norm {trace.final_norm:.6g}")


CHECKS = [
    ("mlp-prediction", _check_mlp_prediction),
    ("init-weights", _check_init_weights),
    ("boundary-weights", _check_boundary_weights),
    ("trace-replay", _check_trace_replay),
]


def verify_goldens(root=None) -> list:
    root = Path(root) if root is not None else fixtures_dir()
    results = []
    for name, fn in CHECKS:
        try:
            ok, detail = fn(root)
        except (FixtureMissing, FileNotFoundError) as exc:
            ok, detail = False, f"missing fixture: {exc}"
        except Exception as exc:  # a broken fixture should fail, not crash
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append((name, ok, detail))
    return results

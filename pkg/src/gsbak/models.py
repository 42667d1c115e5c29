"""Desk-scale victim classifiers with analytic gradients, synthetic task
generation, and a self-describing binary weight-file format.

Three flavors: linear-softmax (flat decision boundaries), RBF-softmax
(curved boundaries), and a small tanh MLP (loaded from fixture files).
Each can run multi-label (independent sigmoids, no sum-to-1 constraint);
the `normalized` attribute tells the oracle layer which validation to use.
"""

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .oracle import TARGETED, UNTARGETED, AttackGoal

MODEL_MAGIC = b"GSBK"
MODEL_VERSION = 1


class DimensionMismatch(Exception):
    pass


class TiedActiveSet(Exception):
    """The active argmax/min of the margin is tied; no unique gradient."""


class GenerationFailed(Exception):
    pass


def _softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max()
    e = np.exp(z)
    return e / e.sum()


def _sigmoid(scores: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-scores))


class _ScoreModel:
    """Shared forward path: subclasses provide scores and score Jacobians."""

    multilabel = False
    clamp01 = False
    input_shape = None

    @property
    def normalized(self) -> bool:
        return not self.multilabel

    def predict_scores(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def predict_logits(self, x: np.ndarray) -> np.ndarray:
        return self.predict_scores(x)

    def predict_probs(self, x: np.ndarray) -> np.ndarray:
        s = self.predict_scores(x)
        return _sigmoid(s) if self.multilabel else _softmax(s)

    def _check_dim(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64).ravel()
        if x.size != self.dim:
            raise DimensionMismatch(f"expected dimension {self.dim}, got {x.size}")
        return x


@dataclass
class LinearSoftmaxModel(_ScoreModel):
    weights: np.ndarray  # C x d
    bias: np.ndarray  # C
    temperature: float = 1.0
    multilabel: bool = False
    clamp01: bool = False
    input_shape: tuple | None = None

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise DimensionMismatch("weights must be C x d with a length-C bias")
        if not np.all(np.isfinite(self.weights)) or not np.all(np.isfinite(self.bias)):
            raise ValueError("parameters must be finite")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def predict_scores(self, x: np.ndarray) -> np.ndarray:
        x = self._check_dim(x)
        return (self.weights @ x + self.bias) / self.temperature

    def score_jacobian(self, x: np.ndarray) -> np.ndarray:
        return self.weights / self.temperature


@dataclass
class RbfSoftmaxModel(_ScoreModel):
    centers: np.ndarray  # C x d
    widths: np.ndarray  # C
    multilabel: bool = False
    clamp01: bool = False
    input_shape: tuple | None = None

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=np.float64)
        self.widths = np.asarray(self.widths, dtype=np.float64)
        if self.centers.ndim != 2 or self.widths.shape != (self.centers.shape[0],):
            raise DimensionMismatch("centers must be C x d with length-C widths")
        if np.any(self.widths <= 0):
            raise ValueError("widths must be positive")

    @property
    def n_classes(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    def predict_scores(self, x: np.ndarray) -> np.ndarray:
        x = self._check_dim(x)
        sq = np.sum((self.centers - x) ** 2, axis=1)
        return -sq / (2.0 * self.widths ** 2)

    def score_jacobian(self, x: np.ndarray) -> np.ndarray:
        x = self._check_dim(x)
        return (self.centers - x) / (self.widths ** 2)[:, None]


class MlpModel(_ScoreModel):
    """Fully connected tanh network with a linear score head.

    layers is a list of (weight h_out x h_in, bias h_out) pairs.
    """

    def __init__(self, layers, multilabel=False, clamp01=False, input_shape=None):
        self.layers = [(np.asarray(w, dtype=np.float64), np.asarray(b, dtype=np.float64))
                       for w, b in layers]
        for i in range(1, len(self.layers)):
            if self.layers[i][0].shape[1] != self.layers[i - 1][0].shape[0]:
                raise DimensionMismatch("layer shapes do not chain")
        self.multilabel = multilabel
        self.clamp01 = clamp01
        self.input_shape = input_shape

    @property
    def n_classes(self) -> int:
        return self.layers[-1][0].shape[0]

    @property
    def dim(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def layer_sizes(self) -> list:
        return [self.dim] + [w.shape[0] for w, _ in self.layers]

    def predict_scores(self, x: np.ndarray) -> np.ndarray:
        h = self._check_dim(x)
        for w, b in self.layers[:-1]:
            h = np.tanh(w @ h + b)
        w, b = self.layers[-1]
        return w @ h + b

    def score_jacobian(self, x: np.ndarray) -> np.ndarray:
        h = self._check_dim(x)
        jac = np.eye(h.size)
        for w, b in self.layers[:-1]:
            pre = w @ h + b
            h = np.tanh(pre)
            jac = (1.0 - h ** 2)[:, None] * (w @ jac)
        return self.layers[-1][0] @ jac


def predict_probs(model, x: np.ndarray) -> np.ndarray:
    return model.predict_probs(x)


def _prob_jacobian_rows(model, x, classes):
    """Gradients of the requested class probabilities, one row per class."""
    s = model.predict_scores(x)
    js = model.score_jacobian(x)
    if model.multilabel:
        p = _sigmoid(s)
        return [p[c] * (1 - p[c]) * js[c] for c in classes]
    p = _softmax(s)
    mean_row = p @ js
    return [p[c] * (js[c] - mean_row) for c in classes]


def analytic_margin_gradient(model, x: np.ndarray, goal: AttackGoal) -> np.ndarray:
    """Closed-form input gradient of the goal's confidence surrogate:
    margin F for untargeted goals, min of the target-class probabilities for
    targeted ones. The active class selection is frozen at x; ties within
    1e-9 raise TiedActiveSet since the surrogate has no unique gradient there.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    p = model.predict_probs(x)

    if goal.mode == UNTARGETED:
        source = list(goal.source_set)
        others = [i for i in range(p.size) if i not in set(source)]
        if len(others) < goal.k:
            raise ValueError("not enough classes outside the source set")
        src_sorted = sorted(source, key=lambda i: (-p[i], i))
        if len(src_sorted) > 1 and abs(p[src_sorted[0]] - p[src_sorted[1]]) <= 1e-9:
            raise TiedActiveSet("source argmax is tied")
        c_s = src_sorted[0]
        others_sorted = sorted(others, key=lambda i: (-p[i], i))
        v_k = others_sorted[goal.k - 1]
        for neighbor in (goal.k - 2, goal.k):
            if 0 <= neighbor < len(others_sorted):
                if abs(p[others_sorted[neighbor]] - p[v_k]) <= 1e-9:
                    raise TiedActiveSet("K-th excluded class is tied")
        g_vk, g_cs = _prob_jacobian_rows(model, x, [v_k, c_s])
        return g_vk - g_cs

    targets = sorted(goal.target_set, key=lambda i: (p[i], i))
    if len(targets) > 1 and abs(p[targets[0]] - p[targets[1]]) <= 1e-9:
        raise TiedActiveSet("minimum target class is tied")
    (grad,) = _prob_jacobian_rows(model, x, [targets[0]])
    return grad


# ---------------------------------------------------------------------------
# weight files: little-endian binary payload + JSON sidecar with a checksum

class FixtureMissing(Exception):
    pass


def _write_arrays(path, named_arrays):
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<II", MODEL_VERSION, len(named_arrays)))
        for name, arr in named_arrays:
            arr = np.ascontiguousarray(arr, dtype="<f8")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes(order="C"))


def _read_arrays(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MODEL_MAGIC:
        raise ValueError(f"{path}: not a model weight file")
    version, n_arrays = struct.unpack_from("<II", blob, 4)
    if version != MODEL_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    offset = 12
    arrays = {}
    for _ in range(n_arrays):
        (name_len,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        name = blob[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        shape = struct.unpack_from(f"<{ndim}Q", blob, offset)
        offset += 8 * ndim
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
        offset += 8 * count
        arrays[name] = arr.reshape(shape).astype(np.float64)
    return arrays


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        h.update(fh.read())
    return h.hexdigest()


def save_model(model, path) -> None:
    """Writes <path> (binary arrays) and <path>.json (metadata + checksum)."""
    path = str(path)
    meta = {
        "multilabel": model.multilabel,
        "clamp01": model.clamp01,
        "input_shape": list(model.input_shape) if model.input_shape else None,
    }
    if isinstance(model, LinearSoftmaxModel):
        meta["kind"] = "linear_softmax"
        meta["temperature"] = model.temperature
        arrays = [("weights", model.weights), ("bias", model.bias)]
    elif isinstance(model, RbfSoftmaxModel):
        meta["kind"] = "rbf_softmax"
        arrays = [("centers", model.centers), ("widths", model.widths)]
    elif isinstance(model, MlpModel):
        meta["kind"] = "mlp"
        meta["layer_sizes"] = model.layer_sizes
        arrays = []
        for i, (w, b) in enumerate(model.layers):
            arrays.append((f"w{i}", w))
            arrays.append((f"b{i}", b))
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    _write_arrays(path, arrays)
    meta["sha256"] = _sha256(path)
    with open(path + ".json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path):
    """Inverse of save_model; verifies the recorded checksum first."""
    import os

    path = str(path)
    if not os.path.exists(path) or not os.path.exists(path + ".json"):
        raise FixtureMissing(f"missing model file or sidecar for {path}")
    with open(path + ".json") as fh:
        meta = json.load(fh)
    actual = _sha256(path)
    if actual != meta["sha256"]:
        raise ValueError(f"{path}: checksum mismatch (file corrupted?)")
    arrays = _read_arrays(path)
    common = dict(
        multilabel=meta["multilabel"],
        clamp01=meta["clamp01"],
        input_shape=tuple(meta["input_shape"]) if meta["input_shape"] else None,
    )
    kind = meta["kind"]
    if kind == "linear_softmax":
        return LinearSoftmaxModel(arrays["weights"], arrays["bias"],
                                  temperature=meta["temperature"], **common)
    if kind == "rbf_softmax":
        return RbfSoftmaxModel(arrays["centers"], arrays["widths"], **common)
    if kind == "mlp":
        n_layers = len(meta["layer_sizes"]) - 1
        layers = [(arrays[f"w{i}"], arrays[f"b{i}"]) for i in range(n_layers)]
        return MlpModel(layers, **common)
    raise ValueError(f"unknown model kind {kind!r}")


# ---------------------------------------------------------------------------
# synthetic tasks

def _smooth_image_weights(rng, n_classes: int, shape: tuple) -> np.ndarray:
    """Class templates that vary slowly across the image plane, the regime
    natural-image classifiers live in: each row is the inverse DCT of a
    low-frequency coefficient block, so input gradients concentrate in the
    same low-frequency subspace the attack probes."""
    from .noise import idct2

    ch, h, w = shape
    d = ch * h * w
    factor = 4
    rows = np.zeros((n_classes, d))
    for i in range(n_classes):
        coeffs = np.zeros(shape)
        coeffs[:, :max(h // factor, 1), :max(w // factor, 1)] = rng.standard_normal(
            (ch, max(h // factor, 1), max(w // factor, 1)))
        img = idct2(coeffs)
        rows[i] = img.ravel() / np.sqrt(d)
    return rows


def _benign_filter_ok(p: np.ndarray, k: int) -> bool:
    # stable source set: a clear gap at the K boundary of the ranking
    order = np.argsort(-p, kind="stable")
    return p[order[k - 1]] - p[order[k]] >= 1e-3


def generate_synthetic_task(seed: int, d: int, c: int, flavor: str = "linear",
                            n_samples: int = 8, shape: tuple | None = None,
                            multilabel: bool = False, k: int = 1):
    """Deterministic (model, benign samples) pair.

    Samples are rejection-filtered so the model classifies them with a clear
    top-K gap; each sample is returned as (x, labels) where labels is the
    model's own top-K set (top-1 for single-label tasks). Image-shaped tasks
    draw pixels uniformly in [0,1] and turn clamping on.
    """
    if d < 2 or c < max(4, 2 * k):
        raise ValueError("need d >= 2 and C >= max(4, 2K)")
    if shape is not None and int(np.prod(shape)) != d:
        raise ValueError("shape must have d elements")
    rng = np.random.Generator(np.random.PCG64(seed))
    image_like = shape is not None and len(shape) == 3 and shape[1] * shape[2] > 1

    if flavor == "linear":
        if image_like:
            weights = _smooth_image_weights(rng, c, shape)
        else:
            weights = rng.standard_normal((c, d)) / np.sqrt(d)
        bias = 0.05 * rng.standard_normal(c)
        model = LinearSoftmaxModel(weights, bias, temperature=1.0,
                                   multilabel=multilabel, clamp01=image_like,
                                   input_shape=shape)
    elif flavor == "rbf":
        if image_like:
            centers = rng.uniform(0.25, 0.75, size=(c, d))
            widths = np.sqrt(d) * rng.uniform(0.25, 0.40, size=c)
        else:
            centers = rng.standard_normal((c, d)) * 2.0
            widths = np.sqrt(d) * rng.uniform(0.6, 1.0, size=c)
        model = RbfSoftmaxModel(centers, widths, multilabel=multilabel,
                                clamp01=image_like, input_shape=shape)
    elif flavor == "mlp":
        hidden = int(min(48, max(8, d // 2)))
        scale0 = 1.0 / np.sqrt(d)
        scale1 = 1.0 / np.sqrt(hidden)
        layers = [
            (rng.standard_normal((hidden, d)) * scale0, 0.1 * rng.standard_normal(hidden)),
            (rng.standard_normal((c, hidden)) * scale1 * 3.0, 0.05 * rng.standard_normal(c)),
        ]
        model = MlpModel(layers, multilabel=multilabel, clamp01=image_like,
                         input_shape=shape)
    else:
        raise ValueError(f"unknown flavor {flavor!r}")

    samples = []
    attempts = 0
    max_attempts = 400 * n_samples
    k_eff = k if multilabel else 1
    while len(samples) < n_samples:
        attempts += 1
        if attempts > max_attempts:
            raise GenerationFailed(
                f"could not draw {n_samples} benign samples in {max_attempts} attempts")
        if image_like:
            x = rng.uniform(0.0, 1.0, size=d)
        elif flavor == "rbf":
            anchor = centers[int(rng.integers(c))]
            x = anchor + rng.standard_normal(d) * 0.8
        else:
            x = rng.standard_normal(d)
        p = model.predict_probs(x)
        if not _benign_filter_ok(p, k_eff):
            continue
        order = np.argsort(-p, kind="stable")
        labels = tuple(int(i) for i in order[:k_eff])
        samples.append((x, labels))
    return model, samples

"""Five-phase classifier: hashed features -> rectifier encoder -> K linear heads.

The encoder is a single rectified layer over sparse feature vectors; each of
the K classes owns a linear head whose logit feeds either a per-class sigmoid
(one-vs-all scores) or a shared softmax (the cross-entropy baseline path).
All arithmetic is float64 and every forward operation is pure.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .corpus import ContextWindow, FeatureConfig, FeatureVector, LabelSet, featurize

CHECKPOINT_VERSION = 1


def sigmoid(z: np.ndarray | float) -> np.ndarray:
    """Numerically stable logistic function (branch on sign, no overflow)."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax_rows(Z: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max-logit subtraction."""
    Z = np.asarray(Z, dtype=np.float64)
    shifted = Z - Z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class EncoderParams:
    W1: np.ndarray  # (hidden_dim, d_f)
    b1: np.ndarray  # (hidden_dim,)

    @property
    def hidden_dim(self) -> int:
        return self.W1.shape[0]


@dataclass
class HeadParams:
    """K stacked linear heads: row k holds w_k, bias[k] holds c_k."""

    weights: np.ndarray  # (K, hidden_dim)
    bias: np.ndarray     # (K,)

    @property
    def K(self) -> int:
        return self.weights.shape[0]


@dataclass
class Model:
    encoder: EncoderParams
    heads: HeadParams
    label_set: LabelSet
    feature_config: FeatureConfig

    def __post_init__(self) -> None:
        if self.heads.K != self.label_set.K:
            raise ValueError(f"{self.heads.K} heads for {self.label_set.K} labels")
        if self.encoder.W1.shape[1] != self.feature_config.dimension:
            raise ValueError(
                f"encoder input dim {self.encoder.W1.shape[1]} != feature dim "
                f"{self.feature_config.dimension}"
            )

    def clone(self) -> "Model":
        return Model(
            EncoderParams(self.encoder.W1.copy(), self.encoder.b1.copy()),
            HeadParams(self.heads.weights.copy(), self.heads.bias.copy()),
            self.label_set,
            self.feature_config,
        )

    def params_equal(self, other: "Model") -> bool:
        return (
            np.array_equal(self.encoder.W1, other.encoder.W1)
            and np.array_equal(self.encoder.b1, other.encoder.b1)
            and np.array_equal(self.heads.weights, other.heads.weights)
            and np.array_equal(self.heads.bias, other.heads.bias)
        )


def init_model(
    label_set: LabelSet,
    hidden_dim: int,
    feature_config: FeatureConfig,
    seed: int,
) -> Model:
    """Glorot-uniform encoder weights, zero biases, zero heads; deterministic in seed."""
    if hidden_dim < 1:
        raise ValueError(f"hidden_dim must be >= 1, got {hidden_dim}")
    d_f = feature_config.dimension
    rng = np.random.Generator(np.random.PCG64(seed))
    a = math.sqrt(6.0 / (d_f + hidden_dim))
    W1 = rng.uniform(-a, a, size=(hidden_dim, d_f))
    return Model(
        EncoderParams(W1=W1, b1=np.zeros(hidden_dim)),
        HeadParams(weights=np.zeros((label_set.K, hidden_dim)), bias=np.zeros(label_set.K)),
        label_set,
        feature_config,
    )


def stack_features(fvs: Sequence[FeatureVector]) -> sp.csr_matrix:
    """Assemble feature vectors into one CSR matrix (rows in input order)."""
    if not fvs:
        raise ValueError("cannot stack an empty feature list")
    dim = fvs[0].dimension
    if any(fv.dimension != dim for fv in fvs):
        raise ValueError("feature vectors have mixed dimensions")
    indptr = np.zeros(len(fvs) + 1, dtype=np.int64)
    np.cumsum([fv.nnz for fv in fvs], out=indptr[1:])
    indices = np.concatenate([fv.indices for fv in fvs]) if indptr[-1] else np.zeros(0, np.int64)
    data = np.concatenate([fv.values for fv in fvs]) if indptr[-1] else np.zeros(0, np.float64)
    return sp.csr_matrix((data, indices, indptr), shape=(len(fvs), dim))


def encode_batch(model: Model, X: sp.csr_matrix) -> tuple[np.ndarray, np.ndarray]:
    """Pre-activation and rectified latent for a batch; both (B, hidden_dim)."""
    pre = X @ model.encoder.W1.T + model.encoder.b1
    return pre, np.maximum(pre, 0.0)


def logits_batch(model: Model, X: sp.csr_matrix) -> np.ndarray:
    """Class logits (B, K) for a feature batch."""
    _, hid = encode_batch(model, X)
    return hid @ model.heads.weights.T + model.heads.bias


def encode(model: Model, fv: FeatureVector) -> np.ndarray:
    """Latent vector rectifier(W1 x + b1) for one feature vector."""
    if fv.dimension != model.feature_config.dimension:
        raise ValueError(f"feature dim {fv.dimension} != model dim {model.feature_config.dimension}")
    _, hid = encode_batch(model, stack_features([fv]))
    return hid[0]


def class_logit(model: Model, latent: np.ndarray, k: int) -> float:
    """z_k = w_k . latent + c_k for class index k."""
    if not 0 <= k < model.heads.K:
        raise IndexError(f"class index {k} out of range [0, {model.heads.K})")
    return float(model.heads.weights[k] @ latent + model.heads.bias[k])


def _window_logits(model: Model, window: ContextWindow) -> np.ndarray:
    fv = featurize(window, model.feature_config)
    return logits_batch(model, stack_features([fv]))[0]


def predict_proba_ova(model: Model, window: ContextWindow) -> np.ndarray:
    """Per-class sigmoid scores sigma(z_k); independent, need not sum to 1."""
    return sigmoid(_window_logits(model, window))


def predict_proba_softmax(model: Model, window: ContextWindow) -> np.ndarray:
    """Softmax distribution over the K logits."""
    return softmax_rows(_window_logits(model, window)[None, :])[0]


def predict_label(model: Model, window: ContextWindow, mode: str = "ova") -> int:
    """Argmax class index; ties break to the lowest index.

    Sigmoid and softmax are both strictly increasing in the logits, so the
    argmax (and the tie pattern) is identical in either mode.
    """
    if mode not in ("ova", "softmax"):
        raise ValueError(f"mode must be 'ova' or 'softmax', got {mode!r}")
    scores = predict_proba_ova(model, window) if mode == "ova" else predict_proba_softmax(model, window)
    return int(np.argmax(scores))


# --- checkpoints -----------------------------------------------------------

def save_checkpoint(model: Model, path: str | Path) -> None:
    """Versioned JSON checkpoint with flat row-major arrays; round-trips bit-exactly."""
    obj = {
        "version": CHECKPOINT_VERSION,
        "label_set": list(model.label_set.codes),
        "feature_config": model.feature_config.to_dict(),
        "hidden_dim": model.encoder.hidden_dim,
        "W1": model.encoder.W1.ravel().tolist(),
        "b1": model.encoder.b1.tolist(),
        "heads": {
            "weights": model.heads.weights.ravel().tolist(),
            "bias": model.heads.bias.tolist(),
        },
    }
    Path(path).write_text(json.dumps(obj), encoding="utf-8")


def load_checkpoint(path: str | Path) -> Model:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    version = obj.get("version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version!r}")
    label_set = LabelSet(tuple(obj["label_set"]))
    config = FeatureConfig.from_dict(obj["feature_config"])
    hidden = int(obj["hidden_dim"])
    W1 = np.asarray(obj["W1"], dtype=np.float64).reshape(hidden, config.dimension)
    b1 = np.asarray(obj["b1"], dtype=np.float64)
    weights = np.asarray(obj["heads"]["weights"], dtype=np.float64).reshape(label_set.K, hidden)
    bias = np.asarray(obj["heads"]["bias"], dtype=np.float64)
    return Model(EncoderParams(W1, b1), HeadParams(weights, bias), label_set, config)

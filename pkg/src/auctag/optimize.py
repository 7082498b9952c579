"""Losses, analytic gradients, and the mini-batch SGD training loop.

Three regimes:

* CE      - softmax cross-entropy over the K logits.
* DAM     - per-class squared margin AUC surrogate: for every class, the mean
            of (m - sigma(z+) + sigma(z-))^2 over all within-batch
            positive-negative pairs, summed over the K classes.
* COMAUC  - epoch-level alternation between the CE and AUC losses.

The AUC surrogate is the exact within-batch pairwise estimator (evaluated in
O(P+N) by algebraic expansion, verified against brute-force enumeration in
the tests); no primal-dual reformulation is used.  Gradients are analytic
through the sigmoid, the heads, and the rectifier encoder.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .corpus import ContextWindow, FeatureVector, featurize
from .metrics import confusion, f1_macro
from .model import Model, sigmoid, softmax_rows, stack_features

REGIMES = ("CE", "DAM", "COMAUC")
EPOCH_REGIMES = ("CE", "AUC")

MIN_IMPROVEMENT = 1e-6


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass(frozen=True)
class LossConfig:
    regime: str
    margin: float = 1.0
    comauc_period: int = 1
    comauc_start: str = "CE"
    # Test-only ablation: with the AUC phase disabled, COMAUC must reduce to
    # a trajectory bit-identical to the plain CE regime.
    comauc_ablate_auc: bool = False

    def __post_init__(self) -> None:
        if self.regime not in REGIMES:
            raise ValueError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if not self.margin > 0:
            raise ValueError(f"margin must be positive, got {self.margin}")
        if self.comauc_period < 1:
            raise ValueError(f"comauc_period must be >= 1, got {self.comauc_period}")
        if self.comauc_start not in EPOCH_REGIMES:
            raise ValueError(f"comauc_start must be one of {EPOCH_REGIMES}")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 0.1
    momentum: float = 0.9
    max_epochs: int = 100
    patience: int = 5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not np.isfinite(self.learning_rate) or self.learning_rate < 0:
            raise ValueError("learning_rate must be finite and >= 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.max_epochs < 1 or self.patience < 1:
            raise ValueError("max_epochs and patience must be >= 1")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    regime: str
    train_loss: float
    val_f1: float


@dataclass
class TrainHistory:
    epochs: list[EpochRecord] = field(default_factory=list)
    stop_reason: str = ""
    best_epoch: int = -1

    def to_json_list(self) -> list[dict]:
        return [
            {"epoch": r.epoch, "regime": r.regime, "train_loss": r.train_loss, "val_f1": r.val_f1}
            for r in self.epochs
        ]


@dataclass
class ParamGrads:
    """Gradients (or velocity) with the same shapes as the model parameters."""

    W1: np.ndarray
    b1: np.ndarray
    head_weights: np.ndarray
    head_bias: np.ndarray

    @classmethod
    def zeros_like(cls, model: Model) -> "ParamGrads":
        return cls(
            np.zeros_like(model.encoder.W1),
            np.zeros_like(model.encoder.b1),
            np.zeros_like(model.heads.weights),
            np.zeros_like(model.heads.bias),
        )

    def named(self) -> list[tuple[str, np.ndarray]]:
        return [
            ("W1", self.W1),
            ("b1", self.b1),
            ("head_weights", self.head_weights),
            ("head_bias", self.head_bias),
        ]


# --- batch preparation ------------------------------------------------------

def prepare_items(
    model: Model, items: Sequence[tuple[ContextWindow | FeatureVector, str | int]]
) -> tuple[sp.csr_matrix, np.ndarray]:
    """Featurize (window, label) pairs into a CSR matrix and class-index array.

    Labels may be codes from the model's label set or ready class indices.
    """
    if not items:
        raise ValueError("empty item list")
    fvs = []
    ys = np.empty(len(items), dtype=np.int64)
    K = model.label_set.K
    for i, (inp, label) in enumerate(items):
        fvs.append(inp if isinstance(inp, FeatureVector) else featurize(inp, model.feature_config))
        y = model.label_set.index(label) if isinstance(label, str) else int(label)
        if not 0 <= y < K:
            raise ValueError(f"class index {y} out of range [0, {K})")
        ys[i] = y
    return stack_features(fvs), ys


def _forward(model: Model, X: sp.csr_matrix) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    pre = X @ model.encoder.W1.T + model.encoder.b1
    hid = np.maximum(pre, 0.0)
    Z = hid @ model.heads.weights.T + model.heads.bias
    return pre, hid, Z


def _backprop(
    model: Model, X: sp.csr_matrix, pre: np.ndarray, hid: np.ndarray, dZ: np.ndarray
) -> ParamGrads:
    """Push dLoss/dZ back through heads and encoder."""
    g_hw = dZ.T @ hid
    g_hb = dZ.sum(axis=0)
    d_hid = dZ @ model.heads.weights
    d_pre = d_hid * (pre > 0)
    g_W1 = np.ascontiguousarray((X.T @ d_pre).T)
    g_b1 = d_pre.sum(axis=0)
    return ParamGrads(g_W1, g_b1, g_hw, g_hb)


# --- losses ------------------------------------------------------------------

def ce_loss_and_grad(
    model: Model, batch: Sequence[tuple[ContextWindow | FeatureVector, str | int]]
) -> tuple[float, ParamGrads]:
    """Mean negative log softmax probability of the true class, with gradients."""
    X, y = prepare_items(model, batch)
    return _ce_from_matrix(model, X, y)


def _ce_from_matrix(model: Model, X: sp.csr_matrix, y: np.ndarray) -> tuple[float, ParamGrads]:
    B = y.size
    pre, hid, Z = _forward(model, X)
    shifted = Z - Z.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = float(-log_probs[np.arange(B), y].mean())
    dZ = np.exp(log_probs)
    dZ[np.arange(B), y] -= 1.0
    dZ /= B
    return loss, _backprop(model, X, pre, hid, dZ)


def auc_pair_loss(
    pos_scores: Sequence[float], neg_scores: Sequence[float], m: float
) -> float:
    """Mean of (m - p + q)^2 over all positive-negative score pairs.

    Evaluated in O(P+N) by expanding the square; 0.0 when either side is
    empty (a batch with no contrasting pairs contributes nothing).
    """
    if not m > 0:
        raise ValueError(f"margin must be positive, got {m}")
    p = np.asarray(pos_scores, dtype=np.float64)
    q = np.asarray(neg_scores, dtype=np.float64)
    if p.size == 0 or q.size == 0:
        return 0.0
    # sum_{p,q} (a_p + q)^2 with a_p = m - p
    a = m - p
    total = q.size * (a @ a) + 2.0 * a.sum() * q.sum() + p.size * (q @ q)
    return float(total / (p.size * q.size))


def auc_loss_and_grad(
    model: Model,
    batch: Sequence[tuple[ContextWindow | FeatureVector, str | int]],
    m: float = 1.0,
) -> tuple[float, ParamGrads]:
    """Sum over classes of the one-vs-all pairwise AUC margin loss, with gradients.

    For class k the batch items labeled k are the positives and all others
    the negatives; classes missing either side contribute zero.
    """
    X, y = prepare_items(model, batch)
    return _auc_from_matrix(model, X, y, m)


def _auc_from_matrix(
    model: Model, X: sp.csr_matrix, y: np.ndarray, m: float
) -> tuple[float, ParamGrads]:
    if not m > 0:
        raise ValueError(f"margin must be positive, got {m}")
    B = y.size
    K = model.heads.K
    pre, hid, Z = _forward(model, X)
    S = sigmoid(Z)
    dS = np.zeros_like(S)
    loss = 0.0
    for k in range(K):
        pos = y == k
        n_pos = int(pos.sum())
        n_neg = B - n_pos
        if n_pos == 0 or n_neg == 0:
            continue
        sk = S[:, k]
        s_pos = sk[pos]
        s_neg = sk[~pos]
        loss += auc_pair_loss(s_pos, s_neg, m)
        mean_pos = s_pos.mean()
        mean_neg = s_neg.mean()
        dS[pos, k] = -(2.0 / n_pos) * (m - s_pos + mean_neg)
        dS[~pos, k] = (2.0 / n_neg) * (m - mean_pos + s_neg)
    dZ = dS * S * (1.0 - S)
    return loss, _backprop(model, X, pre, hid, dZ)


# --- schedule and updates ----------------------------------------------------

def regime_for_epoch(config: LossConfig, epoch: int) -> str:
    """Epoch regime under COMAUC: period-sized blocks alternating from the start regime."""
    if config.regime != "COMAUC":
        raise ValueError(f"regime_for_epoch applies to COMAUC only, got {config.regime}")
    if epoch < 0:
        raise ValueError(f"epoch must be non-negative, got {epoch}")
    if config.comauc_ablate_auc:
        return "CE"
    block = epoch // config.comauc_period
    other = "AUC" if config.comauc_start == "CE" else "CE"
    return config.comauc_start if block % 2 == 0 else other


def _epoch_regime(config: LossConfig, epoch: int) -> str:
    if config.regime == "CE":
        return "CE"
    if config.regime == "DAM":
        return "AUC"
    return regime_for_epoch(config, epoch)


def sgd_step(
    model: Model,
    grads: ParamGrads,
    velocity: ParamGrads | None,
    lr: float,
    momentum: float,
) -> tuple[Model, ParamGrads]:
    """v <- momentum*v - lr*g; param <- param + v.  Updates in place."""
    if velocity is None:
        velocity = ParamGrads.zeros_like(model)
    params = [model.encoder.W1, model.encoder.b1, model.heads.weights, model.heads.bias]
    for (name, g), (_, v), p in zip(grads.named(), velocity.named(), params):
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter {name} shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite gradient in parameter {name}")
        v *= momentum
        v -= lr * g
        p += v
    return model, velocity


def _validation_f1(model: Model, X: sp.csr_matrix, y: np.ndarray) -> float:
    _, _, Z = _forward(model, X)
    preds = Z.argmax(axis=1)
    return f1_macro(confusion(preds, y, model.label_set.K))


def train(
    model: Model,
    train_windows: Sequence[tuple[ContextWindow | FeatureVector, str | int]],
    val_windows: Sequence[tuple[ContextWindow | FeatureVector, str | int]],
    loss_config: LossConfig,
    train_config: TrainConfig,
) -> tuple[Model, TrainHistory]:
    """Mini-batch SGD with per-epoch regime selection and early stopping.

    Each epoch shuffles the training items with the run PRNG, applies the
    epoch's loss over mini-batches (the last batch may be short; the recorded
    train_loss is the unweighted mean of batch losses), then scores macro-F1
    on the validation set.  The best-scoring model is kept; training stops at
    max_epochs or after `patience` epochs without improvement > 1e-6.
    """
    if not train_windows or not val_windows:
        raise ValueError("train and validation sets must be non-empty")
    X_train, y_train = prepare_items(model, train_windows)
    X_val, y_val = prepare_items(model, val_windows)
    n = y_train.size
    rng = np.random.Generator(np.random.PCG64(train_config.seed))
    velocity: ParamGrads | None = None
    history = TrainHistory()
    best_model = model.clone()
    best_f1 = -np.inf
    stale = 0

    for epoch in range(train_config.max_epochs):
        regime = _epoch_regime(loss_config, epoch)
        perm = rng.permutation(n)
        batch_losses = []
        for lo in range(0, n, train_config.batch_size):
            idx = perm[lo : lo + train_config.batch_size]
            Xb, yb = X_train[idx], y_train[idx]
            if regime == "CE":
                loss, grads = _ce_from_matrix(model, Xb, yb)
            else:
                loss, grads = _auc_from_matrix(model, Xb, yb, loss_config.margin)
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}")
            batch_losses.append(loss)
            model, velocity = sgd_step(
                model, grads, velocity, train_config.learning_rate, train_config.momentum
            )
        val_f1 = _validation_f1(model, X_val, y_val)
        history.epochs.append(
            EpochRecord(epoch=epoch, regime=regime, train_loss=float(np.mean(batch_losses)), val_f1=val_f1)
        )
        if val_f1 > best_f1 + MIN_IMPROVEMENT:
            best_f1 = val_f1
            best_model = model.clone()
            history.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= train_config.patience:
                history.stop_reason = "patience"
                return best_model, history
    history.stop_reason = "max_epochs"
    return best_model, history

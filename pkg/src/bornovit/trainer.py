"""Training protocol: Adam/SGD steps, patience-based early stopping and k-fold orchestration."""
from __future__ import annotations

import dataclasses
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import tensor as T
from .checkpoint import Checkpoint, make_checkpoint
from .data import AugmentConfig, FoldSplit, LabeledImage, augment, kfold_split, resize_to_input, sample_rng
from .errors import ConfigError, ContractError, TrainingAborted
from .model import ViTParams, forward

logger = logging.getLogger(__name__)

CONTINUE, STOP = "continue", "stop"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 128
    max_epochs: int = 100
    patience_limit: int = 10
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    deterministic: bool = True

    def __post_init__(self):
        for name in ("batch_size", "max_epochs", "patience_limit"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ConfigError(f"train.{name} must be a positive integer, got {value!r}")
        if not self.learning_rate > 0:
            raise ConfigError(f"train.learning_rate must be > 0, got {self.learning_rate}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"train.optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@dataclass
class OptimizerState:
    step: int = 0
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)


def optimizer_step(params: ViTParams, state: OptimizerState, cfg: TrainConfig,
                   learning_rate: Optional[float] = None) -> OptimizerState:
    """Apply one update using the gradients stored on ``params``.

    Parameter arrays are replaced rather than modified in place.
    """
    lr = cfg.learning_rate if learning_rate is None else learning_rate
    for name, t in params.items():
        if t.grad is None:
            raise ContractError(f"no gradient for parameter {name!r}")
    state.step += 1
    if cfg.optimizer == "sgd":
        for name, t in params.items():
            t.data = (t.data - t.dtype.type(lr) * t.grad).astype(t.dtype)
        return state

    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1 - b1 ** state.step
    c2 = 1 - b2 ** state.step
    for name, t in params.items():
        g = t.grad.astype(t.dtype, copy=False)
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
        v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
        m, v = m.astype(t.dtype), v.astype(t.dtype)
        state.first_moment[name], state.second_moment[name] = m, v
        update = lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        t.data = (t.data - update).astype(t.dtype)
    return state


# ---------------------------------------------------------------------------
# early stopping
# ---------------------------------------------------------------------------

@dataclass
class EarlyStopState:
    patience_limit: int = 10
    best_val_loss: float = math.inf
    consecutive_bad_epochs: int = 0
    best_epoch: int = -1
    best_params_snapshot: Optional[ViTParams] = None
    epochs_seen: int = 0


def early_stop_update(state: EarlyStopState, epoch_val_loss: float,
                      params: Optional[ViTParams] = None, epoch: Optional[int] = None):
    """Record one epoch's validation loss; returns ``(state, "continue" | "stop")``.

    A strictly lower loss resets the counter and snapshots ``params``; anything
    else counts as a non-improving epoch.
    """
    if not math.isfinite(epoch_val_loss):
        raise TrainingAborted(f"validation loss is {epoch_val_loss} at epoch {epoch}; aborting")
    epoch = state.epochs_seen if epoch is None else epoch
    state.epochs_seen += 1
    if epoch_val_loss < state.best_val_loss:
        state.best_val_loss = float(epoch_val_loss)
        state.best_epoch = epoch
        state.consecutive_bad_epochs = 0
        if params is not None:
            state.best_params_snapshot = params.copy()
    else:
        state.consecutive_bad_epochs += 1
    decision = STOP if state.consecutive_bad_epochs >= state.patience_limit else CONTINUE
    return state, decision


# ---------------------------------------------------------------------------
# fold training
# ---------------------------------------------------------------------------

@dataclass
class FoldResult:
    checkpoint: Checkpoint
    history: List[dict]
    epochs_trained: int
    stopped_early: bool


def prepare_batch(samples: Sequence[LabeledImage], indices, image_size: int,
                  augment_cfg: Optional[AugmentConfig] = None, seed: int = 0, epoch: int = 0):
    images = []
    for i in indices:
        img = resize_to_input(samples[i], image_size)
        if augment_cfg is not None and augment_cfg.enabled:
            img = augment(img, augment_cfg, sample_rng(seed, epoch, int(i)))
        images.append(img)
    labels = np.array([samples[i].label for i in indices], dtype=np.int64)
    return np.stack(images), labels


def evaluate_loss(params: ViTParams, samples: Sequence[LabeledImage], indices,
                  batch_size: int = 128):
    """Exact dataset-mean cross-entropy and accuracy in eval mode."""
    indices = np.asarray(indices)
    total_loss, correct = 0.0, 0
    with T.no_grad():
        for start in range(0, len(indices), batch_size):
            chunk = indices[start:start + batch_size]
            x, y = prepare_batch(samples, chunk, params.config.image_size)
            logits = forward(params, x, mode="eval")
            total_loss += float(T.cross_entropy(logits, y).data) * len(chunk)
            correct += int((np.argmax(logits.data, axis=1) == y).sum())
    n = max(len(indices), 1)
    return total_loss / n, correct / n


def train_fold(params: ViTParams, samples: Sequence[LabeledImage], split: FoldSplit, rotation: int,
               train_cfg: TrainConfig = TrainConfig(), augment_cfg: AugmentConfig = AugmentConfig(),
               class_names: Optional[List[str]] = None,
               log: Optional[Callable[[dict], None]] = None) -> FoldResult:
    """Train one rotation of ``split`` and return the best-validation checkpoint.

    ``params`` is updated in place; the returned checkpoint holds a copy taken
    at the best epoch.
    """
    train_idx, val_idx, _ = split.roles(rotation)
    if len(train_idx) == 0:
        raise ConfigError("train split is empty")
    cfg = params.config
    opt_state = OptimizerState()
    stopper = EarlyStopState(patience_limit=train_cfg.patience_limit)
    history = []
    seed = train_cfg.seed
    stopped_early = False

    for epoch in range(train_cfg.max_epochs):
        order = np.random.default_rng([seed, rotation, epoch]).permutation(train_idx)
        dropout_rng = np.random.default_rng([seed, rotation, epoch, 1])
        loss_sum, correct = 0.0, 0
        for start in range(0, len(order), train_cfg.batch_size):
            chunk = order[start:start + train_cfg.batch_size]
            x, y = prepare_batch(samples, chunk, cfg.image_size, augment_cfg, seed, epoch)
            params.zero_grad()
            logits = forward(params, x, mode="train", rng=dropout_rng)
            loss = T.cross_entropy(logits, y)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingAborted(f"non-finite training loss {value} at epoch {epoch}, batch {start // train_cfg.batch_size}")
            T.backward(loss)
            optimizer_step(params, opt_state, train_cfg)
            loss_sum += value * len(chunk)
            correct += int((np.argmax(logits.data, axis=1) == y).sum())

        if len(val_idx):
            val_loss, val_acc = evaluate_loss(params, samples, val_idx, train_cfg.batch_size)
        else:
            val_loss, val_acc = loss_sum / len(order), correct / len(order)
        record = {
            "fold": rotation,
            "epoch": epoch,
            "train_loss": loss_sum / len(order),
            "train_accuracy": correct / len(order),
            "val_loss": val_loss,
            "val_accuracy": val_acc,
        }
        _, decision = early_stop_update(stopper, val_loss, params, epoch)
        record["patience"] = stopper.consecutive_bad_epochs
        history.append(record)
        if log is not None:
            log(record)
        if decision == STOP:
            stopped_early = True
            break

    best = history[stopper.best_epoch]
    ckpt = make_checkpoint(
        stopper.best_params_snapshot,
        class_names=list(class_names) if class_names is not None else None,
        epoch=stopper.best_epoch,
        fold=rotation,
        seed=seed,
        metrics={k: best[k] for k in ("train_loss", "train_accuracy", "val_loss", "val_accuracy")},
        train_config=dataclasses.asdict(train_cfg),
        augment_config=dataclasses.asdict(augment_cfg),
    )
    return FoldResult(ckpt, history, len(history), stopped_early)


# ---------------------------------------------------------------------------
# k-fold orchestration
# ---------------------------------------------------------------------------

@dataclass
class KFoldReport:
    folds: List[FoldResult]
    test_accuracy: List[float]
    test_indices: List[List[int]]

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.test_accuracy))

    @property
    def std_accuracy(self) -> float:
        return float(np.std(self.test_accuracy))

    def summary(self) -> dict:
        return {
            "k": len(self.folds),
            "mean_test_accuracy": self.mean_accuracy,
            "std_test_accuracy": self.std_accuracy,
            "folds": [
                {
                    "fold": i,
                    "test_accuracy": acc,
                    "test_size": len(idx),
                    "best_epoch": f.checkpoint.epoch,
                    "epochs_trained": f.epochs_trained,
                    "stopped_early": f.stopped_early,
                    "best_val_loss": f.checkpoint.metadata["metrics"]["val_loss"],
                }
                for i, (f, acc, idx) in enumerate(zip(self.folds, self.test_accuracy, self.test_indices))
            ],
        }

    def summary_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True) + "\n"


def run_kfold(init_fn: Callable[[int], ViTParams], samples: Sequence[LabeledImage], k: int = 5,
              train_cfg: TrainConfig = TrainConfig(), augment_cfg: AugmentConfig = AugmentConfig(),
              class_names: Optional[List[str]] = None, stratified: bool = False,
              parallel: bool = False, log: Optional[Callable[[dict], None]] = None) -> KFoldReport:
    """Train and test every rotation of a k-fold split.

    ``init_fn(rotation)`` builds the starting parameters for a fold, so each
    rotation starts from the same (or a pretrained) initialization.
    """
    labels = [s.label for s in samples] if stratified else None
    split = kfold_split(len(samples), k, train_cfg.seed, labels)

    def one(rotation: int):
        result = train_fold(init_fn(rotation), samples, split, rotation, train_cfg, augment_cfg,
                            class_names, log)
        _, _, test_idx = split.roles(rotation)
        _, acc = evaluate_loss(result.checkpoint.params, samples, test_idx, train_cfg.batch_size)
        result.checkpoint.metadata["test_accuracy"] = acc
        return result, acc, [int(i) for i in test_idx]

    if parallel:
        with ThreadPoolExecutor() as pool:
            outcomes = list(pool.map(one, range(k)))
    else:
        outcomes = [one(r) for r in range(k)]
    folds, accs, tests = map(list, zip(*outcomes))
    return KFoldReport(folds, accs, tests)

"""Four-loss member training and ensemble prediction."""

from __future__ import annotations

import copy
import csv
import math
from dataclasses import dataclass, field as dc_field, replace
from enum import Enum
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .dataset import AugmentKind, AugmentOp, NormStats, Sample, augment, normalize
from .errors import (
    EmptyEnsemble,
    LengthError,
    TrainingDiverged,
    ZeroTargetMAPE,
)
from .models import ModelConfig, build_model, forward


class Loss(str, Enum):
    MAE = "MAE"
    MAPE = "MAPE"
    MSE = "MSE"
    HUBER = "HUBER"


def loss_value(
    loss_id: Loss | str,
    predictions,
    targets,
    huber_delta_mt: float = 1.0,
) -> float:
    """Scalar loss over prediction/target vectors, errors e = yhat - y.

    MAE = mean|e|, MSE = mean e^2, MAPE = 100 mean(|e| / |y|),
    HUBER = mean of 0.5 e^2 where |e| <= delta else delta (|e| - 0.5 delta).
    """
    loss_id = Loss(loss_id)
    yhat = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if yhat.shape != y.shape or yhat.ndim != 1 or len(y) < 1:
        raise LengthError(f"need equal-length 1D vectors, got {yhat.shape} vs {y.shape}")
    e = yhat - y
    if loss_id is Loss.MAE:
        return float(np.mean(np.abs(e)))
    if loss_id is Loss.MSE:
        return float(np.mean(e ** 2))
    if loss_id is Loss.MAPE:
        if (y == 0).any():
            raise ZeroTargetMAPE("MAPE undefined for zero targets")
        return float(100.0 * np.mean(np.abs(e) / np.abs(y)))
    delta = huber_delta_mt
    ae = np.abs(e)
    per = np.where(ae <= delta, 0.5 * e ** 2, delta * (ae - 0.5 * delta))
    return float(np.mean(per))


def _torch_loss(loss_id: Loss, yhat: torch.Tensor, y: torch.Tensor, delta: float) -> torch.Tensor:
    if loss_id is Loss.MAE:
        return (yhat - y).abs().mean()
    if loss_id is Loss.MSE:
        return ((yhat - y) ** 2).mean()
    if loss_id is Loss.MAPE:
        return (100.0 * (yhat - y).abs() / y.abs()).mean()
    return F.huber_loss(yhat, y, delta=delta)


@dataclass
class TrainConfig:
    losses: tuple[Loss, ...] = (Loss.MAE, Loss.MAPE, Loss.MSE, Loss.HUBER)
    huber_delta_mt: float = 1.0
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 1e-3
    early_stop_patience: int = 5    # <= 0 disables early stopping
    seed: int = 0
    augment: bool = True

    def __post_init__(self):
        self.losses = tuple(Loss(l) for l in self.losses)
        if not self.losses or len(set(self.losses)) != len(self.losses):
            raise ValueError("losses must be nonempty and duplicate-free")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.huber_delta_mt > 0:
            raise ValueError("huber_delta_mt must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")


# 0 = identity, 1..3 = rot90 steps, 4/5 = flips, 6 = zoom
def _draw_augment(rng: np.random.Generator) -> AugmentOp | None:
    pick = int(rng.integers(7))
    if pick == 0:
        return None
    if pick <= 3:
        return AugmentOp(AugmentKind.ROT90, k=pick)
    if pick == 4:
        return AugmentOp(AugmentKind.FLIP_H)
    if pick == 5:
        return AugmentOp(AugmentKind.FLIP_V)
    return AugmentOp(AugmentKind.ZOOM, scale=float(rng.uniform(0.9, 1.1)))


def _features_tensor(samples: list[Sample], stats: NormStats) -> torch.Tensor:
    feats = np.stack([normalize(s, stats).features for s in samples])
    return torch.from_numpy(feats)


def _valid_mae(model: nn.Module, x: torch.Tensor, y: np.ndarray, batch: int = 128) -> float:
    model.eval()
    preds = []
    with torch.no_grad():
        for lo in range(0, len(x), batch):
            preds.append(model(x[lo:lo + batch]).squeeze(1).numpy())
    return float(np.mean(np.abs(np.concatenate(preds) - y)))


def train_member(
    model_config: ModelConfig,
    train_split: list[Sample],
    valid_split: list[Sample],
    loss_id: Loss | str,
    train_config: TrainConfig,
    normstats: NormStats,
):
    """Train one model with Adam on the given loss; return (model, history).

    Splits are physical samples; augmentation happens in physical units
    (wind flips only make sense there) and features are normalized with the
    supplied TRAIN-fitted stats before every forward pass. History rows are
    (epoch, train_loss, valid_mae) with epoch 0 holding the untrained
    validation MAE. The returned model is the best-validation-MAE
    checkpoint; the initial state counts as a candidate. Fully
    deterministic for a fixed config and seed.
    """
    loss_id = Loss(loss_id)
    if not train_split or not valid_split:
        raise ValueError("train and valid splits must be nonempty")
    train_ids = {s.sample_id for s in train_split}
    overlap = train_ids & {s.sample_id for s in valid_split}
    if overlap:
        raise ValueError(f"train/valid splits overlap: {sorted(overlap)[:5]}")

    torch.manual_seed(train_config.seed)
    rng = np.random.default_rng(train_config.seed)
    model = build_model(model_config, seed=train_config.seed)

    y_train = np.array([s.target_mt_per_yr for s in train_split], dtype=np.float32)
    y_valid = np.array([s.target_mt_per_yr for s in valid_split], dtype=np.float64)
    x_valid = _features_tensor(valid_split, normstats)

    best_mae = _valid_mae(model, x_valid, y_valid)
    best_state = copy.deepcopy(model.state_dict())
    history = [{"epoch": 0, "train_loss": math.nan, "valid_mae": best_mae}]

    optimizer = torch.optim.Adam(model.parameters(), lr=train_config.learning_rate)
    since_improve = 0
    for epoch in range(1, train_config.epochs + 1):
        if train_config.learning_rate == 0.0:
            # a zero step size cannot move the model; skipping the epoch body
            # keeps batch-norm buffers at their initial values too, so the
            # "trained" model is exactly the initial one
            history.append({"epoch": epoch, "train_loss": math.nan, "valid_mae": best_mae})
            continue

        model.train()
        order = rng.permutation(len(train_split))
        epoch_loss = 0.0
        for lo in range(0, len(order), train_config.batch_size):
            idx = order[lo:lo + train_config.batch_size]
            batch_samples = []
            for i in idx:
                s = train_split[i]
                if train_config.augment:
                    op = _draw_augment(rng)
                    if op is not None:
                        s = augment(s, op)
                batch_samples.append(s)
            xb = _features_tensor(batch_samples, normstats)
            yb = torch.from_numpy(y_train[idx]).unsqueeze(1)

            optimizer.zero_grad()
            loss = _torch_loss(loss_id, model(xb), yb, train_config.huber_delta_mt)
            if not torch.isfinite(loss):
                raise TrainingDiverged(f"{loss_id.value} loss became non-finite", epoch=epoch)
            loss.backward()
            optimizer.step()
            epoch_loss += float(loss) * len(idx)
        epoch_loss /= len(train_split)

        valid_mae = _valid_mae(model, x_valid, y_valid)
        history.append({"epoch": epoch, "train_loss": epoch_loss, "valid_mae": valid_mae})
        if valid_mae < best_mae:
            best_mae = valid_mae
            best_state = copy.deepcopy(model.state_dict())
            since_improve = 0
        else:
            since_improve += 1
            if train_config.early_stop_patience > 0 and since_improve >= train_config.early_stop_patience:
                break

    model.load_state_dict(best_state)
    model.eval()
    return model, history


@dataclass
class EnsembleModel:
    """One trained member per loss function, sharing one architecture."""

    members: list[tuple[Loss, nn.Module]]
    normstats: NormStats

    def __post_init__(self):
        losses = [Loss(l) for l, _ in self.members]
        if len(set(losses)) != len(losses):
            raise ValueError("duplicate loss members in ensemble")
        configs = {json_cfg(m) for _, m in self.members}
        if len(configs) > 1:
            raise ValueError("ensemble members must share one architecture config")


def json_cfg(model: nn.Module) -> str:
    import json as _json
    return _json.dumps(model.config.to_dict(), sort_keys=True)


def ensemble_predict(ensemble: EnsembleModel, samples: list[Sample]) -> np.ndarray:
    """Arithmetic mean of the members' predictions, one value per sample."""
    if not ensemble.members:
        raise EmptyEnsemble("ensemble has no members")
    feats = _features_tensor(samples, ensemble.normstats).numpy()
    per_member = [forward(model, feats)[:, 0] for _, model in ensemble.members]
    return np.mean(per_member, axis=0)


def train_ensemble(
    model_config: ModelConfig,
    train_split: list[Sample],
    valid_split: list[Sample],
    train_config: TrainConfig,
    normstats: NormStats,
):
    """Train one member per configured loss; member i uses seed + i."""
    members = []
    histories: dict[Loss, list[dict]] = {}
    for i, loss_id in enumerate(train_config.losses):
        member_cfg = replace(train_config, seed=train_config.seed + i)
        model, history = train_member(
            model_config, train_split, valid_split, loss_id, member_cfg, normstats
        )
        members.append((loss_id, model))
        histories[loss_id] = history
    return EnsembleModel(members=members, normstats=normstats), histories


def save_history(history: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["epoch", "train_loss", "valid_mae"])
        writer.writeheader()
        writer.writerows(history)

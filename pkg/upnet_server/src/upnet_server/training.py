"""Supervised training of the regression network.

Plain mean-squared-error regression against the stored maps, AdamW,
fixed seeds throughout so a rerun reproduces the loss curve exactly.
Every run writes a per-epoch loss CSV next to the checkpoint and
reports a held-out comparison against the constant-mean baseline,
the score any image-blind predictor would get.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .dataio import DataError, load_arrays, load_samples
from .model import UncertaintyNet, images_to_batch, save_checkpoint

RESERVED_KINDS = ("lpips",)
HOLDOUT_EVERY = 6  # every sixth sample becomes held-out validation


@dataclass
class TrainSpec:
    manifest: Path
    checkpoint: Path
    kind: str = "psnr"
    epochs: int = 200
    learning_rate: float = 1e-4
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.kind in RESERVED_KINDS:
            raise ValueError(f"kind {self.kind!r} is reserved and cannot be trained")
        self.manifest = Path(self.manifest)
        self.checkpoint = Path(self.checkpoint)


@dataclass
class TrainResult:
    epoch_losses: list[float] = field(default_factory=list)
    holdout_mse: float = float("nan")
    baseline_mse: float = float("nan")
    checkpoint: Path | None = None
    curve_path: Path | None = None

    @property
    def first_loss(self) -> float:
        return self.epoch_losses[0]

    @property
    def final_loss(self) -> float:
        return self.epoch_losses[-1]


def _split(n: int) -> tuple[list[int], list[int]]:
    held = list(range(HOLDOUT_EVERY - 1, n, HOLDOUT_EVERY))
    train = [i for i in range(n) if i not in set(held)]
    return train, held


def train(spec: TrainSpec, log=None) -> TrainResult:
    """Runs one training job; writes checkpoint + loss curve + record."""
    samples = load_samples(spec.manifest, spec.kind)
    images, targets = load_arrays(samples)
    train_idx, held_idx = _split(len(samples))
    if not train_idx:
        raise DataError("dataset too small: no training samples after the split")

    torch.manual_seed(spec.seed)
    model = UncertaintyNet()
    model.train()
    loss_fn = torch.nn.MSELoss()

    x_all = images_to_batch(images)
    y_all = torch.from_numpy(targets)
    x_train, y_train = x_all[train_idx], y_all[train_idx]
    model.calibrate_head(y_train.mean(dim=0).numpy())
    opt = torch.optim.AdamW(model.parameters(), lr=spec.learning_rate)

    rng = np.random.default_rng(spec.seed)
    result = TrainResult()
    for epoch in range(spec.epochs):
        order = rng.permutation(len(train_idx))
        total = 0.0
        for start in range(0, len(order), spec.batch_size):
            batch = order[start : start + spec.batch_size]
            opt.zero_grad()
            pred = model(x_train[batch])
            loss = loss_fn(pred, y_train[batch])
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(batch)
        epoch_loss = total / len(train_idx)
        result.epoch_losses.append(epoch_loss)
        if log is not None:
            log(f"epoch {epoch + 1}/{spec.epochs} mse {epoch_loss:.6f}")

    model.eval()
    with torch.no_grad():
        if held_idx:
            held_pred = model(x_all[held_idx])
            result.holdout_mse = float(loss_fn(held_pred, y_all[held_idx]))
            mean_vec = y_train.mean(dim=0, keepdim=True)
            result.baseline_mse = float(
                loss_fn(mean_vec.expand(len(held_idx), -1), y_all[held_idx])
            )

    spec.checkpoint.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, spec.kind, spec.checkpoint)
    result.checkpoint = spec.checkpoint
    curve = spec.checkpoint.with_suffix(".loss.csv")
    rows = ["epoch,train_mse"]
    rows += [f"{i + 1},{v:.17g}" for i, v in enumerate(result.epoch_losses)]
    if held_idx:
        rows.append(f"holdout,{result.holdout_mse:.17g}")
        rows.append(f"baseline,{result.baseline_mse:.17g}")
    curve.write_text("\n".join(rows) + "\n", encoding="utf-8")
    result.curve_path = curve
    return result

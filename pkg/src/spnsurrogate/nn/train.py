"""Minibatch training with input-noise augmentation and early stopping."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from ..errors import NumericError, ValidationError
from . import tensor as tn
from .optim import AdamState, adam_step
from .resnet import ResNet1D, ResNetConfig

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("epoch", "train_loss", "val_loss", "best_so_far")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 8
    max_epochs: int = 50
    patience: int = 10
    noise_std: float = 0.05
    lr: float = 1e-4
    seed: int = 42

    def __post_init__(self):
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValidationError("batch_size, max_epochs and patience must be positive")
        if self.noise_std < 0 or self.lr <= 0:
            raise ValidationError("noise_std must be >= 0 and lr > 0")

    def to_dict(self) -> dict:
        return asdict(self)


class TrainingDiverged(NumericError):
    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(f"non-finite training loss {loss} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


@dataclass
class TrainResult:
    model: ResNet1D
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False


def evaluate_loss(model: ResNet1D, X: np.ndarray, y: np.ndarray, batch_size: int = 64) -> float:
    """Mean squared error with dropout off; summed in fixed batch order."""
    pred = model.predict(X, "eval", batch_size=batch_size).astype(np.float64)
    return float(np.mean((pred - np.asarray(y, dtype=np.float64)) ** 2))


def train(X_train: np.ndarray, y_train: np.ndarray, X_val: np.ndarray, y_val: np.ndarray,
          res_cfg: ResNetConfig = ResNetConfig(), train_cfg: TrainConfig = TrainConfig(),
          val_loss_fn: Callable[[ResNet1D], float] | None = None,
          progress: Callable[[dict], None] | None = None) -> TrainResult:
    if len(X_train) == 0 or len(X_val) == 0:
        raise ValidationError("training and validation splits must be non-empty")
    seeds = np.random.SeedSequence(train_cfg.seed).spawn(4)
    init_rng, shuffle_rng, noise_rng, drop_rng = (np.random.default_rng(s) for s in seeds)
    model = ResNet1D(res_cfg, rng=init_rng)
    X_train = np.asarray(X_train, dtype=model.dtype)
    y_train = np.asarray(y_train, dtype=model.dtype)
    state = AdamState(lr=train_cfg.lr)
    arrays = {k: p.data for k, p in model.params.items()}
    if val_loss_fn is None:
        val_loss_fn = lambda m: evaluate_loss(m, X_val, y_val)  # noqa: E731

    best = np.inf
    best_state = model.state_dict()
    best_epoch = 0
    wait = 0
    history: list[dict] = []
    stopped = False
    n = X_train.shape[0]
    for epoch in range(1, train_cfg.max_epochs + 1):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, train_cfg.batch_size)):
            idx = order[start:start + train_cfg.batch_size]
            xb = X_train[idx]
            if train_cfg.noise_std > 0:
                xb = xb + (noise_rng.standard_normal(xb.shape) * train_cfg.noise_std).astype(xb.dtype)
            model.zero_grad()
            loss = tn.mse_loss(model.forward(xb, "train", drop_rng), y_train[idx])
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingDiverged(epoch, b, value)
            loss.backward()
            adam_step(arrays, {k: p.grad for k, p in model.params.items()}, state)
            total += value * len(idx)
        train_loss = total / n
        val_loss = float(val_loss_fn(model))
        if not np.isfinite(val_loss):
            raise TrainingDiverged(epoch, -1, val_loss)
        if val_loss < best:
            best, best_epoch, wait = val_loss, epoch, 0
            best_state = model.state_dict()
        else:
            wait += 1
        row = {"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss, "best_so_far": best}
        history.append(row)
        log.info("epoch %d train %.6f val %.6f best %.6f", epoch, train_loss, val_loss, best)
        if progress is not None:
            progress(row)
        if wait >= train_cfg.patience:
            stopped = True
            break
    model.load_state_dict(best_state)
    return TrainResult(model, history, best_epoch, stopped)


def write_history(path, history: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for row in history:
            w.writerow([row["epoch"], *(repr(float(row[c])) for c in HISTORY_COLUMNS[1:])])


def read_history(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{"epoch": int(r["epoch"]), **{c: float(r[c]) for c in HISTORY_COLUMNS[1:]}}
                for r in csv.DictReader(fh)]


# ---------------------------------------------------------------- gradient check

@dataclass
class GradCheckReport:
    max_rel_error: float
    per_param: dict[str, float]
    tolerance: float
    failing: list[str]

    @property
    def passed(self) -> bool:
        return not self.failing

    def __str__(self) -> str:
        lines = [f"max relative error {self.max_rel_error:.3e} (tolerance {self.tolerance:.1e})"]
        lines += [f"  {k}: {v:.3e}{'  FAIL' if k in self.failing else ''}" for k, v in self.per_param.items()]
        return "\n".join(lines)


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def gradient_check(cfg: ResNetConfig = ResNetConfig(F=4, k=5, B=2, p=0.0, d_in=3, d_out=2, T=7),
                   tolerance: float = 1e-4, h: float = 1e-5, batch: int = 2, seed: int = 0,
                   model: ResNet1D | None = None, x: np.ndarray | None = None,
                   y: np.ndarray | None = None) -> GradCheckReport:
    """Compare backprop gradients of the MSE loss with central differences (float64, no dropout)."""
    if cfg.p != 0.0:
        raise ValidationError("gradient check requires dropout p = 0")
    rng = np.random.default_rng(seed)
    if model is None:
        model = ResNet1D(cfg, rng=rng, dtype=np.float64)
        for p in model.params.values():
            if p.name.endswith("bias"):
                p.data[...] = rng.uniform(-0.1, 0.1, p.shape)
    if x is None:
        x = rng.standard_normal((batch, cfg.T, cfg.d_in))
    if y is None:
        y = rng.uniform(0, 1, (batch, cfg.d_out))

    def loss_value():
        with tn.no_grad():
            return float(tn.mse_loss(model.forward(x, "eval"), y).data)

    model.zero_grad()
    tn.mse_loss(model.forward(x, "eval"), y).backward()
    per_param = {}
    for name, p in model.params.items():
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        numeric = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        num_flat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_value()
            flat[i] = orig - h
            down = loss_value()
            flat[i] = orig
            num_flat[i] = (up - down) / (2 * h)
        per_param[name] = float(np.max(relative_error(analytic, numeric))) if p.data.size else 0.0
    failing = [k for k, v in per_param.items() if not v < tolerance]
    return GradCheckReport(max(per_param.values()), per_param, tolerance, failing)

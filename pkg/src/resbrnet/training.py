"""Run configuration and the RMSprop training loop."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .autograd import Tape, backward
from .data import AugmentSpec, LabeledDataset, SplitSpec, batches
from .errors import ConfigError, NumericError
from .functional import softmax, softmax_cross_entropy
from .model import ARCHITECTURES, Model, ResBRNetConfig
from .optim import LrSchedule, RMSpropState, lr_at, rmsprop_step

DROPOUT_STREAM = 104
LOG_COLUMNS = ("epoch", "lr", "train_loss", "train_acc", "val_acc")


@dataclass
class RunConfig:
    epochs: int = 40
    batch_size: int = 16
    lr: float = 1e-4
    decay: float = 0.95
    eps: float = 1e-8
    drop_factor: float = 0.4
    drop_period: int = 10
    train_fraction: float = 0.8
    val_fraction: float = 0.1
    seed: int = 0
    input_size: int = 227
    channels: int = 1
    arch: str = "canonical"
    augment: bool = True

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown run config keys: {sorted(unknown)}")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read run config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("run config must be a flat JSON object")
        return cls.from_dict(data)

    def with_overrides(self, **overrides) -> "RunConfig":
        cfg = dataclasses.replace(self, **{k: v for k, v in overrides.items() if v is not None})
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        ints = ("epochs", "batch_size", "drop_period", "seed", "input_size", "channels")
        for name in ints:
            need(isinstance(getattr(self, name), int) and not isinstance(getattr(self, name), bool),
                 f"{name} must be an integer")
        need(self.epochs >= 0, "epochs must be >= 0")
        need(self.batch_size >= 1, "batch_size must be >= 1")
        need(self.lr > 0, "lr must be positive")
        need(0 < self.decay < 1, "decay must lie in (0, 1)")
        need(self.eps > 0, "eps must be positive")
        need(0 < self.drop_factor < 1, "drop_factor must lie in (0, 1)")
        need(self.drop_period >= 1, "drop_period must be >= 1")
        need(0 < self.train_fraction < 1, "train_fraction must lie in (0, 1)")
        need(0 < self.val_fraction < 1, "val_fraction must lie in (0, 1)")
        need(self.seed >= 0, "seed must be >= 0")
        need(self.input_size >= 8, "input_size must be >= 8")
        need(self.channels in (1, 3), "channels must be 1 or 3")
        need(self.arch in ARCHITECTURES, f"arch must be one of {sorted(ARCHITECTURES)}")
        need(isinstance(self.augment, bool), "augment must be a boolean")

    @property
    def input_shape(self) -> tuple:
        return (self.channels, self.input_size, self.input_size)

    def model_config(self, num_classes: int) -> ResBRNetConfig:
        return ARCHITECTURES[self.arch](self.input_shape, num_classes)

    def split_spec(self) -> SplitSpec:
        return SplitSpec(self.train_fraction, self.val_fraction, self.seed)

    def schedule(self) -> LrSchedule:
        return LrSchedule(self.lr, self.drop_factor, self.drop_period)


@dataclass
class EpochLog:
    epoch: int
    lr: float
    train_loss: float
    train_acc: float
    val_acc: Optional[float]

    def csv(self) -> str:
        val = "" if self.val_acc is None else repr(self.val_acc)
        return f"{self.epoch},{self.lr!r},{self.train_loss!r},{self.train_acc!r},{val}"


@dataclass
class TrainResult:
    history: list
    best_epoch: Optional[int]
    final_lr: Optional[float]


def predict_proba(model: Model, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
    out = []
    for start in range(0, len(images), batch_size):
        logits = model.forward(images[start : start + batch_size], "infer")
        out.append(softmax(logits.data.astype(np.float64)))
    return np.concatenate(out) if out else np.zeros((0, model.cfg.num_classes))


def accuracy(model: Model, ds: LabeledDataset) -> float:
    if len(ds) == 0:
        raise ValueError("accuracy of an empty dataset")
    pred = predict_proba(model, ds.images).argmax(axis=1)
    return float(np.mean(pred == ds.labels))


def train_model(
    model: Model,
    train_ds: LabeledDataset,
    val_ds: Optional[LabeledDataset],
    cfg: RunConfig,
    on_epoch: Optional[Callable[[EpochLog], None]] = None,
) -> TrainResult:
    """Minimise softmax cross-entropy with RMSprop under the step schedule.

    After each epoch, accuracy on the (unaugmented) training and validation
    sets is measured in infer mode. The model is left holding the parameters
    of the best validation epoch (earliest on ties). Without validation data
    there is nothing to select on and the final parameters are kept.
    """
    params = model.parameters()
    state = RMSpropState.for_params(params, cfg.decay, cfg.eps)
    schedule = cfg.schedule()
    aug = AugmentSpec() if cfg.augment else None
    best_score, best_epoch, best_state = -1.0, None, None
    history = []
    lr = None
    for epoch in range(cfg.epochs):
        lr = lr_at(schedule, epoch)
        loss_sum = 0.0
        for bi, batch in enumerate(batches(train_ds, cfg.batch_size, epoch, cfg.seed, aug)):
            model.zero_grad()
            with Tape() as tape:
                logits = model.forward(batch.images, "train", seed=(cfg.seed, DROPOUT_STREAM, epoch, bi))
                loss, _ = softmax_cross_entropy(logits, batch.labels)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericError(f"loss became {value} at epoch {epoch}, batch {bi}")
            backward(loss, tape)
            grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}
            rmsprop_step(params, grads, state, lr)
            loss_sum += value * len(batch.labels)

        train_acc = accuracy(model, train_ds)
        val_acc = accuracy(model, val_ds) if val_ds is not None and len(val_ds) else None
        row = EpochLog(epoch, lr, loss_sum / len(train_ds), train_acc, val_acc)
        history.append(row)
        if on_epoch is not None:
            on_epoch(row)
        if val_acc is None:
            best_epoch = epoch
        elif val_acc > best_score:
            best_score, best_epoch, best_state = val_acc, epoch, model.state_arrays()

    if best_state is not None:
        model.load_state_arrays(best_state)
    model.zero_grad()
    return TrainResult(history, best_epoch, lr)

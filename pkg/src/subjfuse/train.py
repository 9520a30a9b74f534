"""Supervised training engine: loss, AdamW, LR schedules, gradient
accumulation, early stopping, and best-checkpoint selection."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint
from .corpus import ClassLabel
from .evaluate import evaluate_model


class InvalidClass(ValueError):
    pass


class ShapeMismatch(ValueError):
    pass


class NonFiniteGradient(FloatingPointError):
    pass


class EmptyDataset(ValueError):
    pass


class DivergedLoss(FloatingPointError):
    pass


SCHEDULERS = ("linear", "cosine")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-5
    batch_size: int = 16
    grad_accum_steps: int = 4
    max_epochs: int = 100
    patience: int = 3
    weight_decay: float = 0.01
    scheduler: str = "linear"
    warmup_steps: int = 100
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.grad_accum_steps < 1:
            raise ValueError("batch_size and grad_accum_steps must be >= 1")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.scheduler not in SCHEDULERS:
            raise ValueError(f"scheduler must be one of {SCHEDULERS}")
        if self.warmup_steps < 0:
            raise ValueError("warmup_steps must be >= 0")

    def replace(self, **kwargs) -> "TrainConfig":
        return dataclasses.replace(self, **kwargs)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# Hyperparameters of the two reference training setups.
PRESETS = {
    "arabic-concat": TrainConfig(
        learning_rate=1e-5, batch_size=16, grad_accum_steps=4, patience=3, scheduler="linear"
    ),
    "gated": TrainConfig(
        learning_rate=1e-5, batch_size=8, grad_accum_steps=2, patience=2, scheduler="cosine"
    ),
}


def cross_entropy(logits, gold: int) -> float:
    """-log softmax(logits)[gold], max-subtracted for stability."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape != (2,):
        raise ShapeMismatch(f"expected 2 logits, got shape {logits.shape}")
    if gold not in (0, 1):
        raise InvalidClass(f"gold class must be 0 or 1, got {gold!r}")
    z = logits - logits.max()
    return float(np.log(np.exp(z).sum()) - z[gold])


def cross_entropy_batch(logits: np.ndarray, golds: np.ndarray):
    """Per-example losses and per-example dL/dlogits (softmax - onehot)."""
    if logits.ndim != 2 or logits.shape[1] != 2:
        raise ShapeMismatch(f"expected (B, 2) logits, got {logits.shape}")
    golds = np.asarray(golds)
    if ((golds != 0) & (golds != 1)).any():
        raise InvalidClass("gold classes must be 0 or 1")
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(len(golds))
    losses = lse - z[rows, golds]
    probs = np.exp(z - lse[:, None])
    dlogits = probs
    dlogits[rows, golds] -= 1.0
    return losses, dlogits


def lr_at(config: TrainConfig, step: int, total_steps: int) -> float:
    """LR after `step` optimizer steps: linear warmup to the base rate,
    then linear decay to zero at total_steps or a half-cosine to zero."""
    base = config.learning_rate
    warmup = config.warmup_steps
    if warmup > 0 and step <= warmup:
        return base * step / warmup
    span = max(1, total_steps - warmup)
    progress = min(1.0, max(0.0, (step - warmup) / span))
    if config.scheduler == "linear":
        return base * (1.0 - progress)
    return base * 0.5 * (1.0 + math.cos(math.pi * progress))


class AdamW:
    """AdamW with decoupled weight decay:

    m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
    theta <- theta - lr * mhat / (sqrt(vhat) + eps) - lr * wd * theta
    """

    def __init__(self, config: TrainConfig):
        self.config = config
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float) -> None:
        cfg = self.config
        self.t += 1
        bc1 = 1.0 - cfg.beta1**self.t
        bc2 = 1.0 - cfg.beta2**self.t
        for name, g in grads.items():
            theta = params[name]
            if g.shape != theta.shape:
                raise ShapeMismatch(f"{name}: grad shape {g.shape} != param shape {theta.shape}")
            if not np.isfinite(g).all():
                raise NonFiniteGradient(f"non-finite gradient for {name}")
            if name not in self.m:
                self.m[name] = np.zeros_like(theta)
                self.v[name] = np.zeros_like(theta)
            m = self.m[name]
            v = self.v[name]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + cfg.epsilon)
            theta -= lr * update + lr * cfg.weight_decay * theta


def adamw_step(params, grads, state: AdamW, lr: float):
    """Functional wrapper over AdamW.step; returns (params, state)."""
    state.step(params, grads, lr)
    return params, state


class EarlyStopper:
    """Tracks dev loss; stop after `patience` consecutive epochs without a
    strictly lower loss."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.wait = 0

    def update(self, epoch: int, loss: float) -> bool:
        if loss < self.best:
            self.best = loss
            self.best_epoch = epoch
            self.wait = 0
            return True
        self.wait += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.wait >= self.patience


@dataclass
class RunRecord:
    config: dict
    language: str
    arch: str
    train_loss: list[float] = field(default_factory=list)
    eval_loss: list[float] = field(default_factory=list)
    eval_macro_f1: list[float] = field(default_factory=list)
    best_epoch: int = 0
    best_eval_loss: float = math.nan
    best_checkpoint: str = ""
    source_checkpoint: str | None = None
    stopped_epoch: int = 0

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )

    @classmethod
    def from_json(cls, path: str | Path) -> "RunRecord":
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))


def total_optimizer_steps(config: TrainConfig, n_train: int) -> int:
    per_epoch = math.ceil(n_train / (config.batch_size * config.grad_accum_steps))
    return config.max_epochs * per_epoch


def window_gradients(model, examples, micro_size: int, rng=None):
    """Mean-reduced loss and gradients over one accumulation window,
    processed in micro-batches of `micro_size`."""
    window_n = len(examples)
    grads_sum: dict[str, np.ndarray] = {}
    loss_sum = 0.0
    for start in range(0, window_n, micro_size):
        batch = examples[start : start + micro_size]
        logits = model.forward(batch, train=True, rng=rng)
        golds = np.array([0 if r.label == ClassLabel.OBJ else 1 for r in batch])
        losses, dlogits = cross_entropy_batch(logits, golds)
        loss_sum += losses.sum()
        batch_grads = model.backward(dlogits / window_n)
        for name, g in batch_grads.items():
            if name in grads_sum:
                grads_sum[name] += g
            else:
                grads_sum[name] = g
    return loss_sum / window_n, grads_sum


def train_model(
    model,
    train_ds,
    dev_ds,
    config: TrainConfig,
    out_dir: str | Path,
    source_checkpoint: str | None = None,
) -> RunRecord:
    """Train until early stopping or max_epochs; evaluates the dev split
    each epoch, keeps the lowest-dev-loss checkpoint, and leaves the model
    holding the restored best parameters."""
    if len(train_ds) == 0 or (config.max_epochs > 0 and len(dev_ds) == 0):
        raise EmptyDataset("training needs non-empty train and dev datasets")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    best_dir = out_dir / "best"

    rng = np.random.default_rng(config.seed)
    params = model.parameters()
    trainable = {name: params[name] for name in model.trainable_names()}
    optimizer = AdamW(config)
    stopper = EarlyStopper(config.patience)
    n = len(train_ds)
    window = config.batch_size * config.grad_accum_steps
    total_steps = total_optimizer_steps(config, n)

    record = RunRecord(
        config=config.to_dict(),
        language=getattr(train_ds, "language", ""),
        arch=model.arch,
        source_checkpoint=source_checkpoint,
    )

    model.save(best_dir)  # max_epochs=0 degenerates to an identity run
    step = 0
    for epoch in range(1, config.max_epochs + 1):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, window):
            examples = [train_ds.rows[i] for i in perm[start : start + window]]
            mean_loss, grads = window_gradients(model, examples, config.batch_size, rng=rng)
            if not math.isfinite(mean_loss):
                raise DivergedLoss(f"non-finite training loss at epoch {epoch}")
            step += 1
            optimizer.step(trainable, {k: grads[k] for k in trainable}, lr_at(config, step, total_steps))
            epoch_loss += mean_loss * len(examples)
        record.train_loss.append(epoch_loss / n)

        # Evaluate on the checkpoint-precision snapshot so a reloaded best
        # checkpoint reproduces the recorded dev loss exactly.
        live = {name: arr.copy() for name, arr in params.items()}
        model.set_parameters(checkpoint.round_trip32(params))
        dev_loss, report = evaluate_model(model, dev_ds, batch_size=config.batch_size)
        if not math.isfinite(dev_loss):
            raise DivergedLoss(f"non-finite dev loss at epoch {epoch}")
        if stopper.update(epoch, dev_loss):
            model.save(best_dir)
        model.set_parameters(live)

        record.eval_loss.append(dev_loss)
        record.eval_macro_f1.append(report.macro_f1)
        record.stopped_epoch = epoch
        if stopper.should_stop:
            break

    best_tensors = checkpoint.load_tensors(best_dir)
    model.set_parameters(best_tensors)
    record.best_epoch = stopper.best_epoch
    record.best_eval_loss = stopper.best if record.eval_loss else math.nan
    record.best_checkpoint = str(best_dir)
    record.to_json(out_dir / "record.json")
    return record

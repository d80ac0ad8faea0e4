"""Initialization, Adam, the cosine warm-restart schedule and the epoch loop."""
from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .backbone import Head
from .checkpoint import save_checkpoint
from .errors import NonFiniteLossError
from .io_utils import atomic_write_text
from .model import RWResNet, predict_logits
from .nn import BatchNorm, Conv1d, Conv2d, Linear, Module
from .tensor import cross_entropy_logits

log = logging.getLogger(__name__)


CLASSIFIER_INIT_STD = 0.01


def init_params(model: Module, seed: int) -> dict[str, np.ndarray]:
    """Kaiming-normal (fan-in, ReLU gain) weights, zero biases, BN gamma=1 / beta=0.

    The final classification layer is the exception: N(0, 0.01^2), so the
    untrained network predicts close to chance.  Draws happen in module
    traversal order from one seeded generator, so the same seed always yields
    bit-identical parameters.
    """
    rng = np.random.default_rng(seed)
    classifiers = {id(m.out) for _, m in model.modules() if isinstance(m, Head)}
    for _, m in model.modules():
        if isinstance(m, (Conv1d, Conv2d, Linear)):
            w = m.params["weight"]
            if id(m) in classifiers:
                std = CLASSIFIER_INIT_STD
            else:
                std = math.sqrt(2.0 / int(np.prod(w.shape[1:])))
            w[...] = rng.standard_normal(w.shape) * std
            m.params["bias"][...] = 0
        elif isinstance(m, BatchNorm):
            m.params["gamma"][...] = 1
            m.params["beta"][...] = 0
            m.buffers["running_mean"][...] = 0
            m.buffers["running_var"][...] = 1
    return model.state_dict()


@dataclass
class OptimState:
    lr0: float = 1e-4
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], opt: OptimState, lr: float) -> None:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    opt.step_count += 1
    t = opt.step_count
    bc1 = 1 - opt.beta1 ** t
    bc2 = 1 - opt.beta2 ** t
    for name, p in params.items():
        g = grads[name]
        if opt.weight_decay:
            g = g + opt.weight_decay * p
        if name not in opt.m:
            opt.m[name] = np.zeros_like(p)
            opt.v[name] = np.zeros_like(p)
        m, v = opt.m[name], opt.v[name]
        m *= opt.beta1
        m += (1 - opt.beta1) * g
        v *= opt.beta2
        v += (1 - opt.beta2) * (g * g)
        p -= (lr * (m / bc1) / (np.sqrt(v / bc2) + opt.eps)).astype(p.dtype, copy=False)


@dataclass(frozen=True)
class ScheduleConfig:
    lr0: float = 1e-4
    eta_min: float = 1e-8
    t0: float = 10.0
    t_mult: float = 2.0
    total_epochs: int = 50


def locate_cycle(schedule: ScheduleConfig, t: float) -> tuple[int, float, float]:
    """(cycle index, position within the cycle, cycle length) at progress ``t``."""
    if t < 0:
        raise ValueError(f"schedule progress must be >= 0, got {t}")
    t0, mult = schedule.t0, schedule.t_mult
    if mult == 1:
        i = int(t // t0)
        return i, t - i * t0, t0
    i = int(math.floor(math.log(t / t0 * (mult - 1) + 1, mult)))
    start = t0 * (mult ** i - 1) / (mult - 1)
    # guard against log() rounding either way at a boundary
    if t < start:
        i -= 1
    elif t >= start + t0 * mult ** i:
        i += 1
    start = t0 * (mult ** i - 1) / (mult - 1)
    return i, t - start, t0 * mult ** i


def lr_in_cycle(schedule: ScheduleConfig, t_cur: float, period: float) -> float:
    """Cosine annealing from lr0 (t_cur=0) to eta_min (t_cur=period)."""
    lo, hi = schedule.eta_min, schedule.lr0
    return lo + (hi - lo) * (1 + math.cos(math.pi * t_cur / period)) / 2


def lr_at(schedule: ScheduleConfig, epoch_progress: float) -> float:
    """Learning rate at a global progress measured in epochs.

    Exactly at a restart boundary the new cycle has begun, so the rate is
    back at lr0; the end-of-cycle value eta_min is the left limit.
    """
    _, t_cur, period = locate_cycle(schedule, epoch_progress)
    return lr_in_cycle(schedule, t_cur, period)


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    accuracy: float
    lr: float
    dev_loss: float | None = None


def write_history_csv(history: list[EpochRecord], path) -> None:
    lines = ["epoch,mean_loss,accuracy,lr"]
    lines += [f"{r.epoch},{r.mean_loss:.8f},{r.accuracy:.6f},{r.lr:.6e}" for r in history]
    atomic_write_text(path, "\n".join(lines) + "\n")


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def evaluate_loss(model: RWResNet, waves, labels, batch_size=16) -> float:
    logits = predict_logits(model, waves, batch_size)
    loss, _ = cross_entropy_logits(logits.astype(np.float64), labels)
    return loss


def train(
    model: RWResNet,
    train_waves: np.ndarray,
    train_labels: np.ndarray,
    dev_waves: np.ndarray | None = None,
    dev_labels: np.ndarray | None = None,
    *,
    epochs: int = 50,
    batch_size: int = 16,
    seed: int = 0,
    schedule: ScheduleConfig | None = None,
    select_on: str = "train",
    checkpoint_dir: str | Path | None = None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
):
    """Train ``model`` in place and return ``(best_state, history)``.

    With ``select_on="train"`` the dev data (if any) is pooled with the
    training data and the best epoch is the one with the lowest mean training
    loss.  With ``select_on="dev"`` the dev data is held out and used only to
    pick the epoch with the lowest dev loss.
    """
    if select_on not in ("train", "dev"):
        raise ValueError(f"select_on must be 'train' or 'dev', got {select_on!r}")
    if select_on == "dev" and dev_waves is None:
        raise ValueError("select_on='dev' needs a dev set")
    if schedule is None:
        schedule = ScheduleConfig(total_epochs=epochs)
    waves, labels = np.asarray(train_waves), np.asarray(train_labels)
    if dev_waves is not None and select_on == "train":
        waves = np.concatenate([waves, dev_waves])
        labels = np.concatenate([labels, dev_labels])
    waves = waves.reshape(len(waves), 1, -1).astype(model.dtype, copy=False)
    labels = labels.astype(np.int64)
    if len(waves) == 0:
        raise ValueError("empty training set")

    params = dict(model.named_parameters())
    opt = OptimState(lr0=schedule.lr0)
    rng = np.random.default_rng(seed)
    history: list[EpochRecord] = []
    best_state, best_key = None, math.inf
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None

    for epoch in range(epochs):
        lr = lr_at(schedule, epoch)
        model.train()
        total_loss, correct = 0.0, 0
        for b, idx in enumerate(_batches(len(waves), batch_size, rng)):
            logits = model.forward(waves[idx])
            loss, d_logits = cross_entropy_logits(logits, labels[idx])
            if not math.isfinite(loss):
                raise NonFiniteLossError(epoch, b, loss)
            model.backward(d_logits)
            adam_step(params, dict(model.named_grads()), opt, lr)
            total_loss += loss * len(idx)
            correct += int((logits.argmax(axis=1) == labels[idx]).sum())
        rec = EpochRecord(epoch, total_loss / len(waves), correct / len(waves), lr)
        if select_on == "dev":
            rec.dev_loss = evaluate_loss(model, dev_waves, dev_labels, batch_size)
        history.append(rec)
        log.info(
            "epoch %d loss %.5f acc %.4f lr %.3e%s", epoch, rec.mean_loss, rec.accuracy, lr,
            "" if rec.dev_loss is None else f" dev_loss {rec.dev_loss:.5f}",
        )

        key = rec.dev_loss if select_on == "dev" else rec.mean_loss
        if key < best_key:
            best_key = key
            best_state = copy.deepcopy(model.state_dict())
        if ckpt_dir is not None:
            save_checkpoint(model, ckpt_dir / f"epoch_{epoch:03d}.rwrn")
        if on_epoch is not None:
            on_epoch(rec)

    return best_state, history

"""Adam training loop with step-decay learning rate."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, fields

import numpy as np

from . import net
from .errors import NumericError
from .io import preprocess
from .loss import LossBreakdown, LossWeights, total_loss_grad
from .net import ModelParams
from .tensor import Mode

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 120
    batch_size: int = 24
    lr0: float = 1e-3
    lr_decay_factor: float = 10.0
    lr_decay_every: int = 40
    seed: int = 0
    loss_weights: LossWeights = field(default_factory=LossWeights)
    crop: tuple[int, int] = (128, 128)

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.lr0 > 0:
            raise ValueError("lr0 must be > 0")
        if self.lr_decay_every < 1 or self.lr_decay_factor <= 0:
            raise ValueError("learning-rate decay settings must be positive")

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "loss_weights"}
        d["crop"] = list(self.crop)
        d["loss_weights"] = {f.name: getattr(self.loss_weights, f.name) for f in fields(LossWeights)}
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "loss_weights" in d:
            d["loss_weights"] = LossWeights(**d["loss_weights"])
        if "crop" in d:
            d["crop"] = tuple(int(v) for v in d["crop"])
        return cls(**d)


def lr_at_epoch(epoch, config: TrainConfig):
    """``lr0 / factor ** floor(epoch / every)``."""
    return config.lr0 / config.lr_decay_factor ** (epoch // config.lr_decay_every)


# -- Adam --------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params: ModelParams, grads, state: AdamState, lr):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``.

    Only keys present in ``grads`` are updated; inputs are left untouched.
    """
    for key, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in {key}")
    step = state.step + 1
    new = params.copy()
    m_all, v_all = dict(state.m), dict(state.v)
    c1 = 1 - state.beta1 ** step
    c2 = 1 - state.beta2 ** step
    for key, g in grads.items():
        p = params.get(key)
        g = np.asarray(g, np.float64)
        m = state.beta1 * m_all.get(key, np.zeros(p.shape)) + (1 - state.beta1) * g
        v = state.beta2 * v_all.get(key, np.zeros(p.shape)) + (1 - state.beta2) * g * g
        update = lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        new.set(key, (p.astype(np.float64) - update).astype(p.dtype))
        m_all[key] = m.astype(p.dtype)
        v_all[key] = v.astype(p.dtype)
    return new, AdamState(m_all, v_all, step, state.beta1, state.beta2, state.eps)


# -- training loop -----------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    loss: LossBreakdown
    wall_time: float
    steps: int

    def to_json(self):
        return json.dumps({"epoch": self.epoch, "lr": self.lr, **self.loss.as_dict(),
                           "wall_time": round(self.wall_time, 4), "steps": self.steps})


@dataclass
class TrainLog:
    epochs: list[EpochRecord] = field(default_factory=list)

    @property
    def steps(self):
        return sum(r.steps for r in self.epochs)

    def totals(self):
        return [r.loss.total for r in self.epochs]


def _stack(pairs, crop):
    ir, vis = [], []
    for a, b in pairs:
        ir.append(preprocess(a, Mode.TRAIN, crop)[0])
        vis.append(preprocess(b, Mode.TRAIN, crop)[0])
    return np.stack(ir), np.stack(vis)


def loss_and_grads(params, ir, vis, weights):
    """Forward both streams through the shared network and backprop the total loss.

    Returns ``(breakdown, grads, params_with_updated_running_stats)``.
    """
    fp_ir = net.forward(ir, params, Mode.TRAIN)
    params = net.with_running_stats(params, fp_ir)
    fp_vis = net.forward(vis, params, Mode.TRAIN)
    params = net.with_running_stats(params, fp_vis)
    breakdown, g = total_loss_grad(ir, fp_ir.output, vis, fp_vis.output,
                                   fp_ir.decomposition, fp_vis.decomposition, weights)
    if not np.isfinite(breakdown.total):
        raise NumericError("non-finite loss")
    grads = net.backward(fp_ir, params, g["ir_hat"], g["b_ir"], g["d_ir"])
    for key, value in net.backward(fp_vis, params, g["vis_hat"], g["b_vis"], g["d_vis"]).items():
        grads[key] = grads[key] + value
    return breakdown, grads, params


def train_step(params, state, ir, vis, weights, lr):
    """One optimizer step. Returns ``(params, state, breakdown)``."""
    breakdown, grads, params = loss_and_grads(params, ir, vis, weights)
    params, state = adam_step(params, grads, state, lr)
    return params, state, breakdown


def train(pairs, config: TrainConfig, log_path=None, params: ModelParams | None = None):
    """Train on a sequence of ``(ir, vis)`` 8-bit images.

    Images are center-cropped to ``config.crop``. Returns
    ``(params, TrainLog)``; when ``log_path`` is given one JSON line per
    epoch is written there.
    """
    if len(pairs) == 0:
        raise ValueError("training set is empty")
    ir_all, vis_all = _stack(pairs, config.crop)
    params = net.init_params(config.seed) if params is None else params.copy()
    state = AdamState()
    rng = np.random.default_rng([config.seed, 1])
    weights = config.loss_weights
    history = TrainLog()
    log_file = open(log_path, "w") if log_path is not None else None
    try:
        for epoch in range(config.epochs):
            start = time.perf_counter()
            lr = lr_at_epoch(epoch, config)
            order = rng.permutation(len(ir_all))
            sums = np.zeros(6)
            steps = 0
            for b, lo in enumerate(range(0, len(order), config.batch_size)):
                idx = np.sort(order[lo:lo + config.batch_size])
                try:
                    params, state, bd = train_step(params, state, ir_all[idx], vis_all[idx], weights, lr)
                except NumericError as exc:
                    raise NumericError(f"epoch {epoch} batch {b}: {exc}") from exc
                sums += len(idx) * np.array(list(bd.as_dict().values()))
                steps += 1
            record = EpochRecord(epoch, lr, LossBreakdown(*(float(v) for v in sums / len(order))), time.perf_counter() - start, steps)
            history.epochs.append(record)
            log.info("epoch %d lr %.1e loss %.5f (%.1fs)", epoch, lr, record.loss.total, record.wall_time)
            if log_file is not None:
                log_file.write(record.to_json() + "\n")
                log_file.flush()
    finally:
        if log_file is not None:
            log_file.close()
    return params, history

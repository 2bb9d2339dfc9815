"""Meta-training engine: per-task inner adaptation, cross-task meta update.

The inner loop takes plain gradient steps on a task's adaptation batch. The
meta update differentiates the post-adaptation loss either first-order (the
adapted parameters treated as constants, gradient evaluated at them) or exact
second-order, where the gradient is propagated back through the inner steps
using analytic Hessian-vector products:

    theta_{t+1} = theta_t - a * g(theta_t)
    d theta_{t+1} / d theta_t = I - a * H(theta_t)

so the adjoint recursion is v <- v - a * H(theta_t) v, applied from the last
inner step back to the initialization. Meta gradients are averaged over tasks
in a canonical order and fed to Adam under a linear warmup schedule.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np

from .features import FeatureSet
from .model import (Batch, Gradients, ModelParams, apply_step, forward, init_params,
                    loss_and_grad, tree_map, zeros_like_params, _lrelu_slope)
from .sampling import SupportPool, make_episodes
from .seeding import derive_seed

META_MODES = ("first_order", "second_order")


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    task_lr: float = 0.001
    meta_lr: float = 0.001
    inner_steps: int = 1
    epochs: int = 150
    batch_size: int = 128
    meta_mode: str = "first_order"
    support_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        # task_lr may be 0: the inner loop then degenerates to plain training,
        # which the mode-equivalence checks rely on.
        if self.task_lr < 0 or self.meta_lr <= 0:
            raise ValueError("task_lr must be >= 0 and meta_lr > 0")
        if self.inner_steps < 1:
            raise ValueError("inner_steps must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.meta_mode not in META_MODES:
            raise ValueError(f"meta_mode must be one of {META_MODES}")
        if not 0.0 < self.support_fraction < 1.0:
            raise ValueError("support_fraction must be in (0, 1)")

    def as_dict(self) -> dict:
        return {"task_lr": self.task_lr, "meta_lr": self.meta_lr,
                "inner_steps": self.inner_steps, "epochs": self.epochs,
                "batch_size": self.batch_size, "meta_mode": self.meta_mode,
                "support_fraction": self.support_fraction, "seed": self.seed}


@dataclass(frozen=True)
class AdamState:
    m: ModelParams
    v: ModelParams
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(params: ModelParams) -> AdamState:
    return AdamState(m=zeros_like_params(params), v=zeros_like_params(params))


def adam_update(params: ModelParams, grads: Gradients, state: AdamState,
                lr: float) -> tuple[ModelParams, AdamState]:
    """One Adam step with bias correction; returns new params and state."""
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    m = tree_map(lambda mm, g: b1 * mm + (1 - b1) * g, state.m, grads)
    v = tree_map(lambda vv, g: b2 * vv + (1 - b2) * g * g, state.v, grads)
    c1 = 1 - b1 ** t
    c2 = 1 - b2 ** t
    new = tree_map(lambda p, mm, vv: p - lr * (mm / c1) / (np.sqrt(vv / c2) + state.eps),
                   params, m, v)
    return new, replace(state, m=m, v=v, step=t)


def lr_multiplier(epoch: int, total_epochs: int, start_factor: float = 1.0 / 3.0,
                  end_factor: float = 1.0, ramp_epochs: int = 5) -> float:
    """Linear warmup: start_factor at epoch 0, end_factor from epoch ramp_epochs on."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    if ramp_epochs <= 0:
        return end_factor
    progress = min(float(epoch), float(ramp_epochs)) / float(ramp_epochs)
    return start_factor + (end_factor - start_factor) * progress


@dataclass(frozen=True)
class TaskBatch:
    """One task's materialized episode: adaptation batch + meta-objective batch."""
    task_id: str
    support: Batch
    query: Batch


def inner_adapt(params: ModelParams, support: Batch, lr: float,
                steps: int) -> tuple[ModelParams, list[float]]:
    """``steps`` gradient steps on the support batch; returns the loss trace."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    trace = []
    for _ in range(steps):
        loss, grads = loss_and_grad(params, support)
        if not np.isfinite(loss):
            raise TrainingDiverged(f"inner loss became non-finite ({loss})")
        trace.append(loss)
        params = apply_step(params, grads, lr)
    return params, trace


def hessian_vector_product(params: ModelParams, batch: Batch, vec: ModelParams) -> ModelParams:
    """Exact H(params) @ vec for the batch loss, via forward-over-reverse.

    A tangent pass mirrors the forward computation, then the product rule is
    applied line by line through the hand-written backward pass. Leaky-ReLU
    slopes are piecewise constant, so their tangent is zero almost everywhere.
    """
    x = np.asarray(batch.inputs, dtype=np.float64)
    targets = np.asarray(batch.targets, dtype=np.int64)
    n = x.shape[0]

    probs, cache = forward(params, batch)
    s1 = _lrelu_slope(cache.z1)
    s2 = _lrelu_slope(cache.z2)

    rz1 = x @ vec.W1 + vec.b1
    rh1 = s1 * rz1
    rz2 = rh1 @ params.W2 + cache.h1 @ vec.W2 + vec.b2
    rh2 = s2 * rz2
    rz3 = rh2 @ params.W3 + cache.h2 @ vec.W3 + vec.b3
    rprobs = probs * (rz3 - (probs * rz3).sum(axis=1, keepdims=True))

    dlogits = probs.copy()
    dlogits[np.arange(n), targets] -= 1.0
    dlogits /= n
    rdlogits = rprobs / n
    dz2 = (dlogits @ params.W3.T) * s2

    rdW3 = rh2.T @ dlogits + cache.h2.T @ rdlogits
    rdb3 = rdlogits.sum(axis=0)
    rdh2 = rdlogits @ params.W3.T + dlogits @ vec.W3.T
    rdz2 = rdh2 * s2
    rdW2 = rh1.T @ dz2 + cache.h1.T @ rdz2
    rdb2 = rdz2.sum(axis=0)
    rdh1 = rdz2 @ params.W2.T + dz2 @ vec.W2.T
    rdz1 = rdh1 * s1
    rdW1 = x.T @ rdz1
    rdb1 = rdz1.sum(axis=0)

    return ModelParams(W1=rdW1, b1=rdb1, W2=rdW2, b2=rdb2, W3=rdW3, b3=rdb3, seed=params.seed)


def chunked_loss_and_grad(params: ModelParams, batch: Batch,
                          chunk_size: int) -> tuple[float, Gradients]:
    """Mean loss/gradient over the batch, evaluated in chunks of at most chunk_size."""
    n = len(batch)
    if n <= chunk_size:
        return loss_and_grad(params, batch)
    total_loss = 0.0
    total = zeros_like_params(params)
    for start in range(0, n, chunk_size):
        piece = Batch(inputs=batch.inputs[start:start + chunk_size],
                      targets=batch.targets[start:start + chunk_size])
        w = len(piece) / n
        loss, grads = loss_and_grad(params, piece)
        total_loss += w * loss
        total = tree_map(lambda acc, g: acc + w * g, total, grads)
    return total_loss, total


def _task_meta_gradient(params: ModelParams, task: TaskBatch,
                        config: TrainConfig) -> tuple[float, Gradients, list[float]]:
    """Post-adaptation query loss and its gradient w.r.t. the initialization."""
    trajectory = [params]
    p = params
    inner_trace = []
    for _ in range(config.inner_steps):
        loss, grads = loss_and_grad(p, task.support)
        if not np.isfinite(loss):
            raise TrainingDiverged(f"task {task.task_id}: inner loss non-finite")
        inner_trace.append(loss)
        p = apply_step(p, grads, config.task_lr)
        trajectory.append(p)

    q_loss, q_grads = chunked_loss_and_grad(p, task.query, config.batch_size)
    if not np.isfinite(q_loss):
        raise TrainingDiverged(f"task {task.task_id}: query loss non-finite")

    if config.meta_mode == "first_order":
        return q_loss, q_grads, inner_trace

    v = q_grads
    for t in reversed(range(config.inner_steps)):
        hv = hessian_vector_product(trajectory[t], task.support, v)
        v = tree_map(lambda a, b: a - config.task_lr * b, v, hv)
    return q_loss, v, inner_trace


def meta_step(params: ModelParams, episodes: Iterable[TaskBatch], config: TrainConfig,
              adam: AdamState, lr_scale: float = 1.0,
              ) -> tuple[ModelParams, AdamState, float, dict[str, list[float]]]:
    """Adapt to each task, average the meta gradients, take one Adam step.

    Tasks are reduced in the order given; callers pass a canonically ordered
    list so results do not depend on construction order.
    """
    tasks = list(episodes)
    if not tasks:
        raise ValueError("meta_step needs at least one episode")
    total_loss = 0.0
    total_grad = zeros_like_params(params)
    inner: dict[str, list[float]] = {}
    for task in tasks:
        q_loss, g, trace = _task_meta_gradient(params, task, config)
        total_loss += q_loss
        total_grad = tree_map(lambda acc, x: acc + x, total_grad, g)
        inner[task.task_id] = trace
    n = len(tasks)
    meta_loss = total_loss / n
    meta_grad = tree_map(lambda x: x / n, total_grad)
    new_params, new_adam = adam_update(params, meta_grad, adam, config.meta_lr * lr_scale)
    return new_params, new_adam, meta_loss, inner


@dataclass
class EpochLog:
    epoch: int
    meta_loss: float
    inner_losses: dict[str, list[float]]
    lr_scale: float
    seconds: float


@dataclass
class TrainLog:
    epochs: list[EpochLog] = field(default_factory=list)
    total_seconds: float = 0.0

    def meta_losses(self) -> list[float]:
        return [e.meta_loss for e in self.epochs]

    def lr_trace(self) -> list[float]:
        return [e.lr_scale for e in self.epochs]

    def as_dict(self) -> dict:
        return {
            "total_seconds": self.total_seconds,
            "epochs": [{"epoch": e.epoch, "meta_loss": e.meta_loss,
                        "inner_losses": e.inner_losses, "lr_scale": e.lr_scale,
                        "seconds": e.seconds} for e in self.epochs],
        }


def materialize_episodes(pool: SupportPool, features: FeatureSet, support_fraction: float,
                         epoch_seed: int) -> list[TaskBatch]:
    episodes = make_episodes(pool, support_fraction, epoch_seed)
    episodes = sorted(episodes, key=lambda e: e.language)
    return [TaskBatch(task_id=ep.language, support=features.batch(ep.support_ids),
                      query=features.batch(ep.query_ids)) for ep in episodes]


def meta_train(pool: SupportPool, features: FeatureSet,
               config: TrainConfig) -> tuple[ModelParams, TrainLog]:
    """Full meta-training loop; fully determined by (pool, features, config)."""
    missing = [cid for s in pool.sets.values() for cid in s.members if cid not in features.vectors]
    if missing:
        raise ValueError(f"pool references clips absent from the feature set: {missing[:5]}")
    params = init_params(features.dim, derive_seed(config.seed, "init"))
    adam = init_adam(params)
    log = TrainLog()
    start_all = time.perf_counter()
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        tasks = materialize_episodes(pool, features, config.support_fraction,
                                     derive_seed(config.seed, "episodes", epoch))
        scale = lr_multiplier(epoch, config.epochs)
        params, adam, meta_loss, inner = meta_step(params, tasks, config, adam, lr_scale=scale)
        log.epochs.append(EpochLog(epoch=epoch, meta_loss=meta_loss, inner_losses=inner,
                                   lr_scale=scale, seconds=time.perf_counter() - t0))
    log.total_seconds = time.perf_counter() - start_all
    return params, log

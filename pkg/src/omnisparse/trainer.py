"""Supernet training (sandwich sampling + in-place distillation) and baselines.

Every source of randomness in a step is derived from ``(seed, step)``, so a
run resumed from a checkpoint replays exactly the batches, sub-network draws
and dropout masks of an uninterrupted run.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .errors import NumericError, ParameterError
from .model import SupernetModel, forward_subnet
from .sparsity import ScheduleConfig, SearchSpace, SparsityConfig, clamp_config, cubic_max_sparsity

log = logging.getLogger(__name__)

MODES = ("supernet", "single_nokd", "single_kd", "dsnn")
DSNN_RATIOS = (0.0, 0.5, 0.7, 0.8)
# cost of a forward pass relative to forward+backward
FORWARD_COST = 1.0 / 3.0
NUM_SUBNETS = 4


def normalize_mode(mode: str) -> str:
    m = mode.strip().lower().replace("-", "_")
    if m not in MODES:
        raise ParameterError(f"unknown mode {mode!r}; expected one of {MODES}")
    return m


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    lr: float = 1e-3
    total_steps: int = 1000
    kd_weight: float = 0.5
    kd_temperature: float = 1.0
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    seed: int = 0
    mode: str = "supernet"
    sparsity: float = 0.5
    dsnn_ratios: tuple = DSNN_RATIOS

    def __post_init__(self):
        object.__setattr__(self, "mode", normalize_mode(self.mode))
        if self.batch_size < 1 or self.total_steps < 0:
            raise ParameterError("batch_size must be positive and total_steps nonnegative")
        if self.mode in ("supernet", "dsnn") and self.batch_size % NUM_SUBNETS:
            raise ParameterError(f"batch_size must be divisible by {NUM_SUBNETS} in {self.mode} mode")
        if not 0.0 <= self.kd_weight <= 1.0:
            raise ParameterError("kd_weight must lie in [0, 1]")
        if not self.kd_temperature > 0:
            raise ParameterError("kd_temperature must be positive")
        if not 0.0 <= self.sparsity < 1.0:
            raise ParameterError("sparsity must lie in [0, 1)")


@dataclass
class StepMetrics:
    step: int
    cap: float
    configs: list
    losses: list
    loss: float
    batch_equivalents: float
    wall_clock: float = 0.0


@dataclass
class StepPlan:
    cap: float
    configs: list
    effective: list
    seeds: list


def sandwich_sample(space: SearchSpace, rng) -> list:
    """Dense, sparsest, and two uniformly random configs (in that order)."""
    L = space.num_layers
    choices = np.array(space.sampleable_ratios)
    return [
        SparsityConfig.uniform(0.0, L),
        SparsityConfig.uniform(space.max_ratio, L),
        SparsityConfig(choices[rng.integers(len(choices), size=L)]),
        SparsityConfig(choices[rng.integers(len(choices), size=L)]),
    ]


def split_batch(batch, parts: int = NUM_SUBNETS) -> list:
    """Contiguous equal parts of ``batch`` (any sequence of aligned arrays)."""
    arrays = batch if isinstance(batch, tuple) else (batch,)
    n = len(arrays[0])
    if n == 0 or n % parts:
        raise ParameterError(f"batch of {n} cannot be split into {parts} equal parts")
    size = n // parts
    out = [tuple(a[i * size:(i + 1) * size] for a in arrays) for i in range(parts)]
    return out if isinstance(batch, tuple) else [o[0] for o in out]


def batch_indices(n: int, batch_size: int, seed: int, step: int) -> np.ndarray:
    """Rows of the mini-batch used at ``step``: epochs are seed-derived permutations."""
    per_epoch = n // batch_size
    if per_epoch < 1:
        raise ParameterError(f"batch_size {batch_size} exceeds dataset size {n}")
    epoch, pos = divmod(step, per_epoch)
    perm = np.random.default_rng([seed, 11, epoch]).permutation(n)
    return perm[pos * batch_size:(pos + 1) * batch_size]


def step_rng(seed: int, step: int):
    return np.random.default_rng([seed, 13, step])


def teacher_logits(model: SupernetModel, x) -> np.ndarray:
    """Gradient-free dense eval-mode logits."""
    with T.no_grad():
        return forward_subnet(model, (0.0,) * model.arch.num_layers, x, train=False).data


def subnet_loss(model, sparsities, x, y, cfg: TrainConfig, rng, teacher=None):
    """Training loss of one sub-network on one (sub-)batch.

    With ``teacher`` logits and kd_weight > 0 the loss is
    (1 - a) * task + a * distill; returns (loss tensor, task value, distill value).
    """
    logits = forward_subnet(model, sparsities, x, train=True, rng=rng)
    task = T.loss_task(logits, y)
    if teacher is None or cfg.kd_weight == 0.0:
        return task, task.item(), None
    kd = T.loss_distill(logits, teacher, cfg.kd_temperature)
    a = cfg.kd_weight
    return T.weighted_sum([task, kd], [1.0 - a, a]), task.item(), kd.item()


def plan_supernet_step(space: SearchSpace, t: int, cfg: TrainConfig, rng) -> StepPlan:
    cap = cubic_max_sparsity(t, cfg.schedule)
    configs = sandwich_sample(space, rng)
    seeds = [int(s) for s in rng.integers(0, 2**63 - 1, size=NUM_SUBNETS)]
    return StepPlan(cap, configs, [clamp_config(c, cap) for c in configs], seeds)


def _finite_or_raise(value, t):
    if not math.isfinite(value):
        raise NumericError("non-finite training loss", step=t)


def supernet_train_step(model, batch, t, space, cfg: TrainConfig, rng, on_grads=None) -> StepMetrics:
    """One optimizer update over four sandwich-sampled sub-networks.

    Sub-batch i trains sub-network i (dense, sparsest, random, random); sparse
    ones also distill from dense-teacher logits on their own sub-batch. The
    four losses are averaged before a single backward pass.
    """
    start = time.perf_counter()
    plan = plan_supernet_step(space, t, cfg, rng)
    parts = split_batch(batch)
    terms, values = [], []
    use_kd = cfg.kd_weight > 0.0
    for i, ((xb, yb), eff, seed) in enumerate(zip(parts, plan.effective, plan.seeds)):
        teacher = teacher_logits(model, xb) if i > 0 and use_kd else None
        loss, _, _ = subnet_loss(model, eff, xb, yb, cfg, np.random.default_rng(seed), teacher)
        _finite_or_raise(loss.item(), t)
        terms.append(loss)
        values.append(loss.item())
    total = T.mean(terms)
    _finite_or_raise(total.item(), t)
    total.backward()
    if on_grads is not None:
        on_grads(model, plan)
    T.adam_step(model.params, model.adam)
    cost = 1.0 + (NUM_SUBNETS - 1) * FORWARD_COST / NUM_SUBNETS * use_kd
    return StepMetrics(
        t, plan.cap, [tuple(e) for e in plan.effective], values, total.item(), cost,
        time.perf_counter() - start,
    )


def joint_train_step(model, batch, t, configs, cfg: TrainConfig, rng, teacher=None, on_grads=None):
    """Full-batch step over fixed configs (one for single modes, several for DSNN).

    Configs are clamped by the warm-up cap; losses are averaged. ``teacher``
    is a frozen dense model distilled into every non-dense config.
    """
    start = time.perf_counter()
    x, y = batch
    cap = cubic_max_sparsity(t, cfg.schedule)
    effective = [clamp_config(c, cap) for c in configs]
    t_logits = teacher_logits(teacher, x) if teacher is not None and cfg.kd_weight > 0 else None
    seeds = [int(s) for s in rng.integers(0, 2**63 - 1, size=len(effective))]
    terms, values = [], []
    for eff, seed in zip(effective, seeds):
        dense = not any(eff)
        loss, _, _ = subnet_loss(
            model, eff, x, y, cfg, np.random.default_rng(seed), None if dense else t_logits
        )
        _finite_or_raise(loss.item(), t)
        terms.append(loss)
        values.append(loss.item())
    total = T.mean(terms)
    total.backward()
    if on_grads is not None:
        on_grads(model, effective)
    T.adam_step(model.params, model.adam)
    cost = float(len(effective)) + (FORWARD_COST if t_logits is not None else 0.0)
    return StepMetrics(
        t, cap, [tuple(e) for e in effective], values, total.item(), cost,
        time.perf_counter() - start,
    )


def _fixed_configs(cfg: TrainConfig, num_layers: int) -> list:
    if cfg.mode == "dsnn":
        return [SparsityConfig.uniform(s, num_layers) for s in cfg.dsnn_ratios]
    return [SparsityConfig.uniform(cfg.sparsity, num_layers)]


def train(model: SupernetModel, dataset, cfg: TrainConfig, space=None, teacher=None,
          on_step=None, on_grads=None, configs=None) -> list:
    """Run ``cfg.total_steps`` optimizer steps, continuing from ``model.step``.

    Returns the per-step metrics. ``single_kd`` needs a frozen dense
    ``teacher`` model. ``configs`` overrides the fixed configs of the
    non-supernet modes.
    """
    if len(dataset) == 0:
        raise ParameterError("empty dataset")
    if cfg.mode == "single_kd" and teacher is None:
        raise ParameterError("single_kd mode needs a teacher model")
    if space is None:
        space = SearchSpace(model.arch.num_layers)
    model.adam.lr = cfg.lr
    if configs is None and cfg.mode != "supernet":
        configs = _fixed_configs(cfg, model.arch.num_layers)
    kd_teacher = teacher if cfg.mode == "single_kd" else None
    history = []
    t0 = model.step
    for t in range(t0, t0 + cfg.total_steps):
        idx = batch_indices(len(dataset), cfg.batch_size, cfg.seed, t)
        batch = (dataset.features[idx], dataset.labels[idx])
        rng = step_rng(cfg.seed, t)
        # overflow surfaces as NumericError from the finiteness checks
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                if cfg.mode == "supernet":
                    m = supernet_train_step(model, batch, t, space, cfg, rng, on_grads)
                else:
                    m = joint_train_step(model, batch, t, configs, cfg, rng, kd_teacher, on_grads)
        except NumericError as exc:
            if exc.step is not None:
                raise
            raise NumericError(str(exc), step=t) from exc
        history.append(m)
        if on_step is not None:
            on_step(m)
        if t % 500 == 0:
            log.debug("step %d cap %.3f loss %.4f", t, m.cap, m.loss)
    return history


def finetune(model, dataset, cfg: TrainConfig, steps: int, config=None, space=None):
    """Continue training: one fixed ``config`` (model finetuning) or the supernet regime."""
    if config is None:
        run = replace(cfg, total_steps=steps, mode="supernet")
        return train(model, dataset, run, space=space)
    run = replace(cfg, total_steps=steps, mode="single_nokd")
    return train(model, dataset, run, configs=[SparsityConfig(tuple(config))])


def evaluate(model: SupernetModel, config, dataset, chunk: int = 4096) -> float:
    """Mean eval-mode task loss over ``dataset`` (deterministic)."""
    n = len(dataset)
    if n == 0:
        raise ParameterError("empty dataset")
    sparsities = tuple(config)
    with T.no_grad():
        masks = model.masks(sparsities)
        total = 0.0
        for lo in range(0, n, chunk):
            x = dataset.features[lo:lo + chunk]
            y = dataset.labels[lo:lo + chunk]
            logits = forward_subnet(model, sparsities, x, train=False, masks=masks)
            total += T.loss_task(logits, y).item() * len(y)
    return total / n


def cumulative_cost(history) -> float:
    return float(sum(m.batch_equivalents for m in history))

"""Sparsity configurations, 8x1 block masks, warm-up schedule and size model."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NumericError, ParameterError, ParseError

BLOCK_ROWS = 8
DEFAULT_RATIOS = (0.0, 0.5, 0.6, 0.7, 0.8)


@dataclass(frozen=True)
class SparsityConfig:
    """Per-layer sparsity ratios; hashable so it can key caches and logs."""

    ratios: tuple

    def __post_init__(self):
        object.__setattr__(self, "ratios", tuple(float(r) for r in self.ratios))

    def __len__(self):
        return len(self.ratios)

    def __iter__(self):
        return iter(self.ratios)

    def __str__(self):
        return ";".join(repr(r) for r in self.ratios)

    @classmethod
    def parse(cls, text: str) -> "SparsityConfig":
        try:
            return cls(tuple(float(tok) for tok in text.strip().split(";")))
        except ValueError as exc:
            raise ParseError(f"bad sparsity config {text!r}") from exc

    @classmethod
    def uniform(cls, s: float, num_layers: int) -> "SparsityConfig":
        return cls((s,) * num_layers)


@dataclass(frozen=True)
class SearchSpace:
    num_layers: int
    allowed_ratios: tuple = DEFAULT_RATIOS

    def __post_init__(self):
        ratios = tuple(float(r) for r in self.allowed_ratios)
        object.__setattr__(self, "allowed_ratios", ratios)
        if self.num_layers < 1:
            raise ParameterError("search space needs at least one prunable layer")
        if 0.0 not in ratios:
            raise ParameterError("0.0 must be an allowed ratio (dense network)")
        if any(not 0.0 <= r < 1.0 for r in ratios):
            raise ParameterError("ratios must lie in [0, 1)")
        if any(a >= b for a, b in zip(ratios, ratios[1:])):
            raise ParameterError("ratios must be strictly increasing")
        if len(ratios) < 2:
            raise ParameterError("need at least one nonzero sampleable ratio")

    @property
    def sampleable_ratios(self) -> tuple:
        return tuple(r for r in self.allowed_ratios if r != 0.0)

    @property
    def max_ratio(self) -> float:
        return self.sampleable_ratios[-1]

    def size(self) -> int:
        """Number of searchable configs (sampleable ratios only)."""
        return len(self.sampleable_ratios) ** self.num_layers

    def validate(self, config: SparsityConfig, searchable: bool = False) -> SparsityConfig:
        if len(config) != self.num_layers:
            raise ParameterError(f"config has {len(config)} layers, space has {self.num_layers}")
        allowed = self.sampleable_ratios if searchable else self.allowed_ratios
        for r in config:
            if r not in allowed:
                raise ParameterError(f"ratio {r} not in {allowed}")
        return config


@dataclass(frozen=True)
class BlockMask:
    """Keep/prune decision per aligned 8x1 block of a weight matrix.

    ``keep`` has shape (out // 8, in); block index is ``row_block * in + col``.
    """

    keep: np.ndarray
    block_rows: int = BLOCK_ROWS

    @property
    def shape(self):
        r, c = self.keep.shape
        return (r * self.block_rows, c)

    @property
    def n_blocks(self) -> int:
        return self.keep.size

    @property
    def pruned_blocks(self) -> int:
        return int(self.keep.size - np.count_nonzero(self.keep))

    @property
    def achieved_sparsity(self) -> float:
        return self.pruned_blocks / self.n_blocks

    def dense(self) -> np.ndarray:
        """Elementwise {0,1} float mask of the full weight shape."""
        return np.repeat(self.keep, self.block_rows, axis=0).astype(np.float64)


@dataclass(frozen=True)
class ScheduleConfig:
    final_max_sparsity: float = 0.8
    ramp_steps: int = 2048
    update_interval: int = 256

    def __post_init__(self):
        if not 0.0 < self.final_max_sparsity < 1.0:
            raise ParameterError("final_max_sparsity must lie in (0, 1)")
        if self.update_interval < 1 or self.ramp_steps < 1:
            raise ParameterError("ramp_steps and update_interval must be positive")
        if self.ramp_steps % self.update_interval:
            raise ParameterError("ramp_steps must be a multiple of update_interval")


@dataclass(frozen=True)
class ArchSizes:
    """Weight/bias counts feeding the model-size estimate."""

    prunable_weights: tuple
    other_weights: int = 0
    biases: int = 0
    bytes_per_weight: int = 1
    block_rows: int = BLOCK_ROWS

    def __post_init__(self):
        object.__setattr__(self, "prunable_weights", tuple(int(n) for n in self.prunable_weights))
        if any(n <= 0 for n in self.prunable_weights):
            raise ParameterError("prunable weight counts must be positive")
        if any(n % self.block_rows for n in self.prunable_weights):
            raise ParameterError(f"prunable weight counts must be divisible by {self.block_rows}")
        if self.other_weights < 0 or self.biases < 0 or self.bytes_per_weight < 1:
            raise ParameterError("invalid size counts")

    @property
    def total_params(self) -> int:
        return sum(self.prunable_weights) + self.other_weights + self.biases


def adaptive_dropout_rate(s: float) -> float:
    if not 0.0 <= s < 1.0:
        raise ParameterError(f"sparsity must lie in [0, 1), got {s}")
    return 0.1 * (1.0 - s)


def adam_prune_score(w, v_hat, eps: float = 1e-8) -> np.ndarray:
    """Per-weight importance |w| * sqrt(v_hat + eps).

    ``v_hat`` is Adam's bias-corrected second moment (zeros before any step,
    which reduces the ranking to plain magnitude).
    """
    w = np.asarray(w, dtype=np.float64)
    v_hat = np.asarray(v_hat, dtype=np.float64)
    if w.shape != v_hat.shape:
        raise DimensionError(f"weight {w.shape} and moment {v_hat.shape} shapes differ")
    if np.any(v_hat < 0):
        raise NumericError("negative second-moment entry")
    return np.abs(w) * np.sqrt(v_hat + eps)


def block_scores(scores, block_rows: int = BLOCK_ROWS) -> np.ndarray:
    """Sum per-weight scores over aligned ``block_rows`` x 1 blocks."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2:
        raise DimensionError("scores must be a matrix")
    rows, cols = scores.shape
    if rows % block_rows:
        raise DimensionError(f"{rows} rows not divisible by block height {block_rows}")
    return scores.reshape(rows // block_rows, block_rows, cols).sum(axis=1)


def pruned_block_count(s: float, n_blocks: int) -> int:
    # tiny slack so 0.6 * 10 is not floored to 5 by binary rounding
    return int(math.floor(s * n_blocks + 1e-9))


def build_block_mask(scores, s: float, block_rows: int = BLOCK_ROWS) -> BlockMask:
    """Prune the floor(s * n_blocks) lowest-scoring blocks.

    ``scores`` is the per-block score matrix from :func:`block_scores`.
    Ties go to the lower block index first.
    """
    if not 0.0 <= s < 1.0:
        raise ParameterError(f"sparsity must lie in [0, 1), got {s}")
    scores = np.asarray(scores, dtype=np.float64)
    flat = scores.ravel()
    k = pruned_block_count(s, flat.size)
    keep = np.ones(flat.size, dtype=bool)
    if k:
        keep[np.argsort(flat, kind="stable")[:k]] = False
    return BlockMask(keep.reshape(scores.shape), block_rows)


def cubic_max_sparsity(t: int, cfg: ScheduleConfig) -> float:
    """Warm-up cap on sparsity, raised on a cubic curve every update_interval steps."""
    if t < 0:
        raise ParameterError("step must be nonnegative")
    t_q = cfg.update_interval * (t // cfg.update_interval)
    frac = min(t_q, cfg.ramp_steps) / cfg.ramp_steps
    return cfg.final_max_sparsity * (1.0 - (1.0 - frac) ** 3)


def clamp_config(config, cap: float) -> tuple:
    if not 0.0 <= cap < 1.0:
        raise ParameterError(f"cap must lie in [0, 1), got {cap}")
    return tuple(min(float(r), cap) for r in config)


def model_size_bytes(config, arch: ArchSizes) -> int:
    ratios = tuple(config)
    if len(ratios) != len(arch.prunable_weights):
        raise ParameterError(
            f"config has {len(ratios)} layers, architecture has {len(arch.prunable_weights)} prunable"
        )
    kept = 0
    for s, n in zip(ratios, arch.prunable_weights):
        n_blocks = n // arch.block_rows
        kept += (n_blocks - pruned_block_count(s, n_blocks)) * arch.block_rows
    return (kept + arch.other_weights + arch.biases) * arch.bytes_per_weight

"""The weight-sharing MLP supernet and its masked sub-network forward pass."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DimensionError, ParameterError
from .sparsity import (
    BLOCK_ROWS,
    ArchSizes,
    adam_prune_score,
    adaptive_dropout_rate,
    block_scores,
    build_block_mask,
)

DENSE_DROPOUT = adaptive_dropout_rate(0.0)


@dataclass(frozen=True)
class Architecture:
    in_dim: int
    width: int
    num_layers: int
    num_classes: int

    def __post_init__(self):
        if min(self.in_dim, self.width, self.num_layers, self.num_classes) < 1:
            raise ParameterError("architecture sizes must be positive")
        if self.num_classes < 2:
            raise ParameterError("need at least two classes")
        if self.width % BLOCK_ROWS:
            raise DimensionError(f"hidden width {self.width} must be divisible by {BLOCK_ROWS}")

    def param_shapes(self):
        """(name, shape) in canonical order: input proj, hidden layers, output proj."""
        shapes = [("in.W", (self.width, self.in_dim)), ("in.b", (self.width,))]
        for i in range(self.num_layers):
            shapes += [(f"h{i}.W", (self.width, self.width)), (f"h{i}.b", (self.width,))]
        shapes += [("out.W", (self.num_classes, self.width)), ("out.b", (self.num_classes,))]
        return shapes

    def sizes(self, bytes_per_weight: int = 1) -> ArchSizes:
        return ArchSizes(
            prunable_weights=(self.width * self.width,) * self.num_layers,
            other_weights=self.width * self.in_dim + self.num_classes * self.width,
            biases=self.width * (self.num_layers + 1) + self.num_classes,
            bytes_per_weight=bytes_per_weight,
        )


class SupernetModel:
    """One shared parameter set plus its Adam state.

    Sub-networks never own weights; they are masks applied at forward time.
    """

    def __init__(self, arch: Architecture, params, adam: T.AdamState, meta=None):
        self.arch = arch
        self.meta = meta or {}
        self.params = list(params)
        self.adam = adam
        self._by_name = {p.name: p for p in self.params}

    @classmethod
    def init(cls, arch: Architecture, seed: int = 0, lr: float = 1e-3, **adam_hyper):
        rng = np.random.default_rng([seed, 7])
        params = []
        for name, shape in arch.param_shapes():
            if name.endswith(".b"):
                data = np.zeros(shape)
            else:
                bound = 1.0 / np.sqrt(shape[1])
                data = rng.uniform(-bound, bound, size=shape)
            params.append(T.Param(name, data))
        return cls(arch, params, T.AdamState.for_params(params, lr=lr, **adam_hyper))

    def __getitem__(self, name) -> T.Param:
        return self._by_name[name]

    @property
    def step(self) -> int:
        return self.adam.step_count

    def hidden_weight(self, layer: int) -> T.Param:
        return self._by_name[f"h{layer}.W"]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def block_scores(self, layer: int) -> np.ndarray:
        """Adam-pruning block scores of a hidden layer from the current state."""
        name = f"h{layer}.W"
        w = self._by_name[name].data
        return block_scores(adam_prune_score(w, self.adam.v_hat(name), self.adam.eps))

    def masks(self, sparsities) -> list:
        sparsities = tuple(sparsities)
        if len(sparsities) != self.arch.num_layers:
            raise ParameterError(
                f"expected {self.arch.num_layers} sparsities, got {len(sparsities)}"
            )
        out = []
        for layer, s in enumerate(sparsities):
            if s == 0.0:
                out.append(None)
            else:
                out.append(build_block_mask(self.block_scores(layer), s))
        return out

    def effective_weights(self, sparsities) -> dict:
        """Weight arrays with masks applied (the materialized sub-network)."""
        values = {p.name: p.data.copy() for p in self.params}
        for layer, m in enumerate(self.masks(sparsities)):
            if m is not None:
                values[f"h{layer}.W"] *= m.dense()
        return values

    def checksum(self) -> str:
        h = hashlib.sha256()
        for p in self.params:
            h.update(p.data.tobytes())
            h.update(self.adam.m[p.name].tobytes())
            h.update(self.adam.v[p.name].tobytes())
        h.update(str(self.adam.step_count).encode())
        return h.hexdigest()


def forward_subnet(model: SupernetModel, sparsities, x, train: bool = False, rng=None, masks=None):
    """Logits of the sub-network at the given per-layer sparsities.

    Masks are recomputed from the current weights and Adam moments on every
    call unless precomputed ``masks`` (a list of BlockMask or None) are given.
    """
    sparsities = tuple(float(s) for s in sparsities)
    if masks is None:
        masks = model.masks(sparsities)
    h = T.relu(T.forward_linear(x, model["in.W"], model["in.b"]))
    h = T.dropout(h, DENSE_DROPOUT, rng, train)
    for layer, (s, m) in enumerate(zip(sparsities, masks)):
        dense = None if m is None else m.dense()
        h = T.relu(T.forward_linear(h, model[f"h{layer}.W"], model[f"h{layer}.b"], dense))
        h = T.dropout(h, adaptive_dropout_rate(s), rng, train)
    return T.forward_linear(h, model["out.W"], model["out.b"])


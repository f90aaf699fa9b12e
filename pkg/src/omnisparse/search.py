"""Pareto archive over (validation loss, model size) and the evolutionary search.

The search never touches weights: every candidate is scored by a read-only
eval-mode pass, cached per config.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleConstraint, ParameterError, SearchSpaceTooLarge
from .sparsity import SearchSpace, SparsityConfig, model_size_bytes
from .trainer import evaluate

ENUMERATION_LIMIT = 100_000


@dataclass(frozen=True)
class Candidate:
    config: SparsityConfig
    val_loss: float
    size_bytes: int

    def key(self):
        return (self.size_bytes, self.val_loss, self.config.ratios)


def dominates(a: Candidate, b: Candidate) -> bool:
    no_worse = a.val_loss <= b.val_loss and a.size_bytes <= b.size_bytes
    better = a.val_loss < b.val_loss or a.size_bytes < b.size_bytes
    return no_worse and better


@dataclass
class ParetoFront:
    members: list = field(default_factory=list)
    log: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.members)

    def __contains__(self, config):
        return config in self.log

    def sorted(self) -> list:
        """Members ordered by size, then loss, then config."""
        return sorted(self.members, key=Candidate.key)

    def as_set(self) -> set:
        return {(c.config.ratios, c.size_bytes, c.val_loss) for c in self.members}


def update_front(front: ParetoFront, cand: Candidate) -> ParetoFront:
    front.log.setdefault(cand.config, cand)
    if any(m.config == cand.config for m in front.members):
        return front
    if any(dominates(m, cand) for m in front.members):
        return front
    front.members = [m for m in front.members if not dominates(cand, m)] + [cand]
    return front


def pareto_filter(cands) -> list:
    """Exact O(n^2) non-dominated subset."""
    cands = list(cands)
    return [c for c in cands if not any(dominates(o, c) for o in cands)]


def mutate(config: SparsityConfig, p_m: float, space: SearchSpace, rng) -> SparsityConfig:
    """Resample each gene with probability p_m from the sampleable ratios."""
    if not 0.0 <= p_m <= 1.0:
        raise ParameterError("mutation probability must lie in [0, 1]")
    choices = space.sampleable_ratios
    genes = list(config.ratios)
    for i in range(len(genes)):
        if rng.random() < p_m:
            genes[i] = choices[rng.integers(len(choices))]
    return SparsityConfig(tuple(genes))


def crossover(a: SparsityConfig, b: SparsityConfig, rng) -> SparsityConfig:
    if len(a) != len(b):
        raise ParameterError("parents differ in length")
    pick = rng.random(len(a)) < 0.5
    return SparsityConfig(tuple(x if p else y for p, x, y in zip(pick, a.ratios, b.ratios)))


def hypervolume(cands, ref) -> float:
    """Area dominated by ``cands`` below ``ref = (loss, size)`` (both minimized)."""
    pts = sorted((c.size_bytes, c.val_loss) for c in pareto_filter(cands))
    ref_loss, ref_size = ref
    area, prev_loss = 0.0, ref_loss
    for size, loss in pts:
        if size >= ref_size or loss >= prev_loss:
            continue
        area += (ref_size - size) * (prev_loss - loss)
        prev_loss = loss
    return area


@dataclass(frozen=True)
class SearchParams:
    population: int = 32
    children: int = 16
    p_m: float | None = None
    crossover_fraction: float = 0.5
    seed: int = 0
    exhaustive_init: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.population < 1 or self.children < 1:
            raise ParameterError("population and children must be positive")
        if not 0.0 <= self.crossover_fraction <= 1.0:
            raise ParameterError("crossover_fraction must lie in [0, 1]")
        if self.p_m is not None and not 0.0 <= self.p_m <= 1.0:
            raise ParameterError("p_m must lie in [0, 1]")


class Evaluator:
    """Validation loss + size for configs, cached (evaluation is deterministic)."""

    def __init__(self, model, valset, workers: int = 1):
        self.model = model
        self.valset = valset
        self.workers = workers
        self.arch = model.arch.sizes()
        self.cache = {}

    def __call__(self, configs) -> list:
        todo = [c for c in dict.fromkeys(configs) if c not in self.cache]
        if self.workers > 1 and len(todo) > 1:
            with ThreadPoolExecutor(self.workers) as pool:
                losses = list(pool.map(self._loss, todo))
        else:
            losses = [self._loss(c) for c in todo]
        for c, loss in zip(todo, losses):
            self.cache[c] = Candidate(c, loss, model_size_bytes(c, self.arch))
        return [self.cache[c] for c in configs]

    def _loss(self, config):
        return evaluate(self.model, config.ratios, self.valset)


def _all_configs(space: SearchSpace):
    if space.size() > ENUMERATION_LIMIT:
        raise SearchSpaceTooLarge(
            f"{space.size()} configs exceed the enumeration limit {ENUMERATION_LIMIT}"
        )
    for genes in itertools.product(space.sampleable_ratios, repeat=space.num_layers):
        yield SparsityConfig(genes)


def brute_force_front(model, space: SearchSpace, valset, workers: int = 1) -> ParetoFront:
    configs = list(_all_configs(space))
    cands = Evaluator(model, valset, workers)(configs)
    front = ParetoFront(log={c.config: c for c in cands})
    front.members = pareto_filter(cands)
    return front


def _random_config(space, rng):
    choices = np.array(space.sampleable_ratios)
    return SparsityConfig(choices[rng.integers(len(choices), size=space.num_layers)])


def initial_population(space: SearchSpace, params: SearchParams, rng) -> list:
    if params.exhaustive_init:
        return list(_all_configs(space))
    pop = [SparsityConfig.uniform(r, space.num_layers) for r in space.sampleable_ratios]
    pop = list(dict.fromkeys(pop))
    target = min(max(params.population, len(pop)), space.size())
    while len(pop) < target:
        c = _random_config(space, rng)
        if c not in pop:
            pop.append(c)
    return pop


def _children(front, space, params, rng, seen):
    """Up to ``params.children`` unseen children of parents drawn from the front.

    The batch never depends on the remaining budget, so runs that differ only
    in budget share their trajectory.
    """
    want = params.children
    p_m = params.p_m if params.p_m is not None else 1.0 / space.num_layers
    parents = front.sorted()
    n_cross = int(round(want * params.crossover_fraction))
    out = []
    for _ in range(50 * want):
        if len(out) == want:
            break
        a = parents[rng.integers(len(parents))]
        if len(out) < n_cross:
            b = parents[rng.integers(len(parents))]
            child = mutate(crossover(a.config, b.config, rng), p_m, space, rng)
        else:
            child = mutate(a.config, p_m, space, rng)
        if child not in seen and child not in out:
            out.append(child)
    # stagnation: top up with random unseen configs so the budget keeps buying coverage
    for _ in range(50 * want):
        if len(out) == want:
            break
        child = _random_config(space, rng)
        if child not in seen and child not in out:
            out.append(child)
    if len(out) < want and space.size() <= ENUMERATION_LIMIT:
        rest = [c for c in _all_configs(space) if c not in seen and c not in out]
        for i in rng.permutation(len(rest))[:want - len(out)]:
            out.append(rest[i])
    return out


def evolutionary_search(model, space: SearchSpace, valset, budget: int,
                        params: SearchParams = SearchParams()) -> ParetoFront:
    """Evolve layerwise configs on the current front up to ``budget`` evaluations."""
    rng = np.random.default_rng([params.seed, 17])
    init = initial_population(space, params, rng)
    if budget < len(init):
        raise ParameterError(f"budget {budget} is smaller than the initial population {len(init)}")
    evaluator = Evaluator(model, valset, params.workers)
    front = ParetoFront()
    for cand in evaluator(init):
        update_front(front, cand)
    total = space.size()
    while len(front.log) < min(budget, total):
        kids = _children(front, space, params, rng, front.log)
        kids = kids[:budget - len(front.log)]
        if not kids:
            break
        for cand in evaluator(kids):
            update_front(front, cand)
    return front


def select_for_constraint(front: ParetoFront, tau: int) -> Candidate:
    """Lowest-loss member with size_bytes <= tau (ties: smaller, then config order)."""
    if not front.members:
        raise ParameterError("empty front")
    if tau <= 0:
        raise ParameterError("size constraint must be positive")
    feasible = [c for c in front.members if c.size_bytes <= tau]
    if not feasible:
        raise InfeasibleConstraint(tau, min(c.size_bytes for c in front.members))
    return min(feasible, key=lambda c: (c.val_loss, c.size_bytes, c.config.ratios))

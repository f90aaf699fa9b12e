"""Omni-sparsity supernets: one dense weight set, many block-sparse sub-networks."""

from .model import Architecture, SupernetModel, forward_subnet
from .search import (
    Candidate,
    ParetoFront,
    SearchParams,
    brute_force_front,
    evolutionary_search,
    select_for_constraint,
)
from .sparsity import ScheduleConfig, SearchSpace, SparsityConfig
from .trainer import TrainConfig, evaluate, finetune, train

__version__ = "0.1.0"

"""Run configuration stored as flat ``key = value`` text."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .errors import ParameterError, ParseError
from .model import Architecture
from .search import SearchParams
from .sparsity import ScheduleConfig, SearchSpace
from .trainer import TrainConfig, normalize_mode


@dataclass
class RunConfig:
    # architecture
    in_dim: int = 16
    width: int = 32
    num_layers: int = 4
    num_classes: int = 4
    ratios: str = "0.0;0.5;0.6;0.7;0.8"
    # training
    mode: str = "supernet"
    sparsity: float = 0.5
    batch_size: int = 64
    lr: float = 3e-3
    total_steps: int = 5000
    kd_weight: float = 0.5
    kd_temperature: float = 1.0
    final_max_sparsity: float = 0.0
    ramp_steps: int = 2048
    update_interval: int = 256
    seed: int = 0
    # data: CSV paths, or a synthetic task when train_data is empty
    train_data: str = ""
    val_data: str = ""
    data_seed: int = 0
    n: int = 6000
    teacher_width: int = 32
    label_noise: float = 0.05
    # search
    budget: int = 600
    population: int = 32
    children: int = 16
    p_m: float = 0.0
    crossover_fraction: float = 0.5
    workers: int = 1
    out_dir: str = "."

    def __post_init__(self):
        self.validate()

    def validate(self):
        self.mode = normalize_mode(self.mode)
        # constructing each piece runs its own checks (width % 8, batch % 4, ...)
        self.architecture()
        self.space()
        self.train_config()
        self.search_params()

    @property
    def ratio_values(self) -> tuple:
        try:
            return tuple(float(r) for r in self.ratios.split(";"))
        except ValueError:
            raise ParameterError(f"bad ratios {self.ratios!r}") from None

    def architecture(self) -> Architecture:
        return Architecture(self.in_dim, self.width, self.num_layers, self.num_classes)

    def space(self) -> SearchSpace:
        return SearchSpace(self.num_layers, self.ratio_values)

    def schedule(self) -> ScheduleConfig:
        s_f = self.final_max_sparsity or self.space().max_ratio
        return ScheduleConfig(s_f, self.ramp_steps, self.update_interval)

    def train_config(self, **overrides) -> TrainConfig:
        fields = dict(
            batch_size=self.batch_size, lr=self.lr, total_steps=self.total_steps,
            kd_weight=self.kd_weight, kd_temperature=self.kd_temperature,
            schedule=self.schedule(), seed=self.seed, mode=self.mode, sparsity=self.sparsity,
        )
        fields.update(overrides)
        return TrainConfig(**fields)

    def search_params(self, **overrides) -> SearchParams:
        fields = dict(
            population=self.population, children=self.children, p_m=self.p_m or None,
            crossover_fraction=self.crossover_fraction, seed=self.seed, workers=self.workers,
        )
        fields.update(overrides)
        return SearchParams(**fields)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ParameterError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def dumps(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {format_value(v)}")
        return "\n".join(lines) + "\n"


def format_value(v) -> str:
    if isinstance(v, float):
        return f"{v:.16e}"
    return str(v)


def loads(text: str) -> RunConfig:
    types = {f.name: f.type for f in dataclasses.fields(RunConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError("expected key = value", line=lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in types:
            raise ParseError(f"unknown key {key!r}", line=lineno)
        try:
            values[key] = {"int": int, "float": float}.get(types[key], str)(value)
        except ValueError:
            raise ParseError(f"bad value for {key}: {value!r}", line=lineno) from None
    return RunConfig(**values)


def load(path) -> RunConfig:
    path = Path(path)
    cfg = loads(path.read_text())
    # relative data paths are resolved against the config file
    for key in ("train_data", "val_data"):
        value = getattr(cfg, key)
        if value and not Path(value).is_absolute():
            setattr(cfg, key, str((path.parent / value).resolve()))
    return cfg

import numpy as np
import pytest

from omnisparse.data import gen_synthetic
from omnisparse.model import Architecture, SupernetModel
from omnisparse.sparsity import ScheduleConfig
from omnisparse.trainer import TrainConfig, train


@pytest.fixture(scope="session")
def small_data():
    return gen_synthetic(seed=3, n=800, d=6, num_classes=3, teacher_width=16, label_noise=0.0)


@pytest.fixture
def small_arch():
    return Architecture(in_dim=6, width=16, num_layers=2, num_classes=3)


@pytest.fixture
def small_model(small_arch):
    return SupernetModel.init(small_arch, seed=1, lr=3e-3)


@pytest.fixture
def small_cfg():
    return TrainConfig(batch_size=32, lr=3e-3, total_steps=40, schedule=ScheduleConfig(0.8, 256, 256), seed=5)


@pytest.fixture(scope="session")
def converged_small():
    """A supernet trained well past warm-up on a task big enough not to overfit."""
    train_set, val_set = gen_synthetic(seed=3, n=6000, d=6, num_classes=3, teacher_width=16)
    model = SupernetModel.init(Architecture(6, 16, 2, 3), seed=1, lr=3e-3)
    cfg = TrainConfig(batch_size=32, lr=3e-3, total_steps=3000, schedule=ScheduleConfig(0.8, 512, 256), seed=5)
    train(model, train_set, cfg)
    return model, cfg, train_set, val_set


def snapshot(model):
    return {p.name: p.data.copy() for p in model.params}


def numpy_dense_forward(model, x):
    relu = lambda z: np.maximum(z, 0.0)
    h = relu(x @ model["in.W"].data.T + model["in.b"].data)
    for i in range(model.arch.num_layers):
        h = relu(h @ model[f"h{i}.W"].data.T + model[f"h{i}.b"].data)
    return h @ model["out.W"].data.T + model["out.b"].data


def pytest_terminal_summary(terminalreporter):
    import sys

    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None or not acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(acceptance.RESULTS):
        terminalreporter.write_line(acceptance.RESULTS[n])

import os

import numpy as np
import pytest
import torch

from latentdrive.bev import BevConfig
from latentdrive.planner import PlannerConfig
from latentdrive.routes import RouteSpec, ScenarioInstance, ScenarioKind
from latentdrive.scenarios import Benchmark, BenchmarkConfig, BenchmarkRoute, build_benchmark
from latentdrive.world_model import WorldModelConfig

torch.set_num_threads(1)

TINY_BEV = BevConfig(size=16, meters_per_pixel=3.2)


def straight_route(length=100.0, route_id="straight", **kw) -> RouteSpec:
    return RouteSpec(route_id, ((0.0, 0.0), (length, 0.0)), **kw)


def tiny_world_model_config(**kw) -> WorldModelConfig:
    base = dict(bev=TINY_BEV, groups=4, classes=4, deter=16, hidden=16, mlp_layers=1, cnn_depth=4)
    base.update(kw)
    return WorldModelConfig(**base)


def tiny_planner_config(**kw) -> PlannerConfig:
    base = dict(hidden=16, layers=1, horizon=4)
    base.update(kw)
    return PlannerConfig(**base)


def tiny_train_dict(total_steps=200, **kw) -> dict:
    """Config document for a seconds-long training run."""
    doc = {
        "total-steps": total_steps,
        "num-envs": 1,
        "train-every": 32,
        "prefill": 32,
        "batch": 2,
        "seq-len": 8,
        "log-interval": 64,
        "checkpoint-interval": 0,
        "eval-interval": 0,
        "bev": {"size": 16, "meters-per-pixel": 3.2},
        "world-model": {"groups": 4, "classes": 4, "deter": 16, "hidden": 16, "mlp-layers": 1, "cnn-depth": 4},
        "planner": {"hidden": 16, "layers": 1, "horizon": 4},
    }
    doc.update(kw)
    return doc


@pytest.fixture(scope="session")
def small_benchmark() -> Benchmark:
    cfg = BenchmarkConfig(
        kinds=("LaneFollow", "VanillaTurn", "HardBrake"), train_per_kind=2, plain=1, eval_per_kind=1, seed=3
    )
    return build_benchmark(cfg)


@pytest.fixture
def plain_entry() -> BenchmarkRoute:
    return BenchmarkRoute(straight_route(60.0, "plain-60"), None, ())


@pytest.fixture
def hardbrake_entry() -> BenchmarkRoute:
    route = straight_route(120.0, "hb-120")
    inst = ScenarioInstance(ScenarioKind.HardBrake, 50.0, {})
    return BenchmarkRoute(route, ScenarioKind.HardBrake, (inst,))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def long_tests_enabled() -> bool:
    return os.environ.get("LATENTDRIVE_LONG") == "1"


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

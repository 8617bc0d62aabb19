"""Training configuration loaded from YAML with hyphenated keys.

Top-level keys map onto :class:`TrainConfig` fields (``total-steps`` ->
``total_steps``). The nested sections ``world-model``, ``planner``, ``bev``,
``reward`` and ``benchmark`` override the defaults of their own dataclasses.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import yaml

from .bev import BevConfig, DESK_BEV
from .errors import ValidationError
from .nn.ops import BucketSpec
from .planner import PlannerConfig
from .reward import RewardConfig
from .routes import ScenarioKind
from .scenarios import BenchmarkConfig
from .sim.world import SimConfig
from .world_model import WorldModelConfig


def _kw(d: dict) -> dict:
    return {str(k).replace("-", "_"): v for k, v in d.items()}


def _build(cls, d: dict | None, section: str, **fixed):
    d = _kw(d or {})
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ValidationError(f"unknown keys in {section}: {sorted(k.replace('_', '-') for k in unknown)}")
    d.update(fixed)
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"bad {section} section: {exc}") from exc


@dataclass
class TrainConfig:
    total_steps: int = 300_000
    num_envs: int = 4
    warmup_fraction: float = 0.1
    warmup_kinds: tuple = ("LaneFollow", "VanillaTurn")
    reset_fraction: float = 0.5
    planner_reset: bool = True  # False keeps the planner through the whole run (ablation)
    ratio_start: float = 1.0
    ratio_end: float = 4.0
    seed: int = 0
    checkpoint_interval: int = 50_000
    eval_interval: int = 50_000
    eval_routes: int = 0  # 0 evaluates every route of the eval split
    log_interval: int = 1_000
    train_every: int = 64  # env steps collected per outer iteration
    prefill: int = 2_000
    batch: int = 16
    seq_len: int = 32
    capacity: int = 500_000
    world_model_lr: float = 1e-4
    actor_lr: float = 3e-5
    critic_lr: float = 3e-5
    grad_clip: float = 100.0
    threads: int = 1
    benchmark: str | None = None  # path to a generated benchmark
    world_model: WorldModelConfig = field(default_factory=WorldModelConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    bev: BevConfig = DESK_BEV
    sim: SimConfig = field(default_factory=SimConfig)
    benchmark_config: BenchmarkConfig | None = None  # generated in memory when no path is given

    def __post_init__(self):
        self.warmup_kinds = tuple(ScenarioKind(k).value for k in self.warmup_kinds)
        if self.num_envs < 1:
            raise ValidationError("num-envs must be >= 1")
        if not 0.0 <= self.warmup_fraction < self.reset_fraction < 1.0:
            raise ValidationError("need 0 <= warmup-fraction < reset-fraction < 1")
        if self.total_steps < 0:
            raise ValidationError("total-steps must be >= 0")
        for name in ("train_every", "batch", "seq_len", "capacity", "log_interval"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name.replace('_', '-')} must be >= 1")
        if self.ratio_start < 0 or self.ratio_end < 0:
            raise ValidationError("train ratios must be >= 0")

    @classmethod
    def from_dict(cls, d: dict | None) -> "TrainConfig":
        d = dict(d or {})
        bev = _build(BevConfig, d.pop("bev", None), "bev") if "bev" in d else DESK_BEV
        wm = dict(d.pop("world-model", None) or {})
        buckets = _build(BucketSpec, wm.pop("buckets", None), "world-model.buckets")
        world_model = _build(WorldModelConfig, wm, "world-model", bev=bev, buckets=buckets)
        pl = dict(d.pop("planner", None) or {})
        planner = _build(PlannerConfig, pl, "planner", buckets=buckets)
        reward = _build(RewardConfig, d.pop("reward", None), "reward")
        sim = SimConfig(reward=reward)
        bench = d.pop("benchmark", None)
        bench_path, bench_cfg = None, None
        if isinstance(bench, str):
            bench_path = bench
        elif isinstance(bench, dict):
            bench_cfg = BenchmarkConfig.from_dict(bench)
        elif bench is not None:
            raise ValidationError("benchmark must be a path or a generation config")
        kw = _kw(d)
        names = {f.name for f in dataclasses.fields(cls)} - {
            "world_model", "planner", "bev", "sim", "benchmark", "benchmark_config"
        }
        unknown = set(kw) - names
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(k.replace('_', '-') for k in unknown)}")
        if "warmup_kinds" in kw:
            kw["warmup_kinds"] = tuple(kw["warmup_kinds"])
        try:
            return cls(
                **kw, world_model=world_model, planner=planner, bev=bev, sim=sim,
                benchmark=bench_path, benchmark_config=bench_cfg,
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(f"bad config: {exc}") from exc

    @classmethod
    def load(cls, path: str) -> "TrainConfig":
        try:
            with open(path) as fh:
                doc = yaml.safe_load(fh)
        except OSError as exc:
            raise ValidationError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ValidationError(f"{path}: invalid YAML: {exc}") from exc
        if doc is not None and not isinstance(doc, dict):
            raise ValidationError(f"{path}: config must be a mapping")
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        """Plain, JSON-friendly summary stored in checkpoint metadata."""

        def plain(obj):
            if dataclasses.is_dataclass(obj):
                return {f.name.replace("_", "-"): plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
            if isinstance(obj, (list, tuple)):
                return [plain(x) for x in obj]
            if isinstance(obj, dict):
                return {str(k): plain(v) for k, v in obj.items()}
            if hasattr(obj, "value"):
                return obj.value
            return obj

        return plain(self)

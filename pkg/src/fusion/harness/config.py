"""Experiment configuration, presets and per-cell seeding."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import ConfigError
from ..estimators.training import METHODS, TrainConfig

BASELINE_METHODS = METHODS + ("t_learner",)
BENCHMARK_METHODS = ["pd", "dual_only", "ipm_only", "weighted:alpha=1", "obs_only", "rct_only",
                    "t_learner"]

# Step count and primal step size used by the shipped grids: shorter and
# smaller than the TrainConfig defaults so 210 runs fit a desk budget, and
# because longer runs overfit the 5,000-row datasets.
GRID_TRAIN = {"iters": 1000, "eta_primal": 3e-3}


def derive_seed(master: int, key: str) -> int:
    """Deterministic 32-bit seed from a master seed and a cell key."""
    digest = hashlib.sha256(f"{int(master)}:{key}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


def parse_method(spec: str) -> tuple[str, dict]:
    """'weighted:alpha=1,iters=200' -> ('weighted', {'alpha': 1.0, 'iters': 200})."""
    name, _, rest = spec.partition(":")
    if name not in BASELINE_METHODS:
        raise ConfigError(f"unknown method {name!r}")
    overrides = {}
    for item in filter(None, rest.split(",")):
        key, eq, val = item.partition("=")
        if not eq:
            raise ConfigError(f"bad method override {item!r}")
        overrides[key.strip()] = json.loads(val)
    return name, overrides


@dataclass
class ExperimentConfig:
    methods: list[str]
    seeds: list[int]
    dials: list[float] = field(default_factory=lambda: [0.0])
    dataset: dict = field(default_factory=lambda: {"preset": "benchmark"})
    train: dict = field(default_factory=dict)
    method_overrides: dict = field(default_factory=dict)
    master_seed: int = 0
    heldout_frac: float = 0.2
    out: str | None = None

    def __post_init__(self):
        if not self.methods or not self.seeds:
            raise ConfigError("method and seed lists must be nonempty")
        for m in self.methods:
            parse_method(m)
        if not 0.0 < self.heldout_frac < 1.0:
            raise ConfigError("heldout_frac must lie in (0, 1)")
        TrainConfig.from_dict(self.train)
        self.dials = [float(d) for d in self.dials]

    def train_config(self, method_spec: str, seed: int) -> TrainConfig:
        name, inline = parse_method(method_spec)
        d = dict(self.train)
        d.update(self.method_overrides.get(name, {}))
        d.update(self.method_overrides.get(method_spec, {}))
        d.update(inline)
        d["seed"] = seed
        return TrainConfig.from_dict(d)

    def to_dict(self) -> dict:
        return {"methods": list(self.methods), "seeds": list(self.seeds), "dials": list(self.dials),
                "dataset": copy.deepcopy(self.dataset), "train": dict(self.train),
                "method_overrides": copy.deepcopy(self.method_overrides),
                "master_seed": self.master_seed, "heldout_frac": self.heldout_frac,
                "out": self.out}

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown experiment keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def preset(name: str) -> ExperimentConfig:
    if name == "benchmark":
        return ExperimentConfig(methods=list(BENCHMARK_METHODS), seeds=list(range(10)),
                                dials=[0.0, 0.5, 1.0], dataset={"preset": "benchmark"},
                                train=dict(GRID_TRAIN))
    if name == "severe":
        return ExperimentConfig(methods=list(BENCHMARK_METHODS), seeds=list(range(10)),
                                dials=[0.0], dataset={"preset": "benchmark", "exclusion": "random"},
                                train=dict(GRID_TRAIN))
    if name == "smoke":
        return ExperimentConfig(methods=["pd", "obs_only"], seeds=[0, 1], dials=[0.0],
                                dataset={"preset": "benchmark", "n_cont": 12, "n_cat": 4},
                                train={"iters": 20, "batch_obs": 64, "batch_rct": 64,
                                       "critic_steps": 1})
    raise ConfigError(f"unknown preset {name!r}; expected benchmark, severe or smoke")

"""Experiment configuration: one YAML file plus ``section.key=value`` overrides."""

import copy
import os
from dataclasses import asdict, dataclass, field

import yaml

from ..decoder import Descriptor
from ..errors import ConfigError
from ..invert import InversionConfig

DEFAULTS = {
    "seed": 0,
    "model": {"latent_dim": 128, "resolution": 64, "channels": 3, "width": 1.0},
    "data": {"directory": None, "test_directory": None, "n_test": 50},
    "pretrain": {
        "iterations": 50_000,
        "lr": 1e-3,
        "alpha": None,
        "estimator": "literal",
    },
    "inversion": {
        "stage1_iterations": 1250,
        "stage1_lr": 5e-2,
        "stage2_iterations": 350,
        "stage2_lr": 1e-4,
        "restarts": 1,
    },
    "untrained": {"lr": 1e-3, "momentum": 0.9, "iterations": None},
    "experiment": {
        "task": "cs",
        "ratios": [0.1],
        "shots": [5, 10, 15, 25, 50, 100],
        "losses": ["l2", "mmd"],
        "noise_std": 0.0,
        "checkpoint_dir": "checkpoints",
        "output_dir": "runs/cs",
        "record_wall_time": True,
        "baseline": True,
    },
}


def _merge(base, extra, path=""):
    for key, value in extra.items():
        if key not in base:
            raise ConfigError(f"unknown config key {path}{key}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{path}{key} must be a mapping")
            _merge(base[key], value, f"{path}{key}.")
        else:
            base[key] = value


def apply_override(cfg, assignment):
    """Apply ``a.b.c=value``; the value is parsed as YAML (numbers, lists, null...)."""
    if "=" not in assignment:
        raise ConfigError(f"override must look like key=value, got {assignment!r}")
    dotted, raw = assignment.split("=", 1)
    keys = dotted.strip().split(".")
    node = cfg
    for k in keys[:-1]:
        if not isinstance(node.get(k), dict):
            raise ConfigError(f"unknown config section {k!r} in {dotted}")
        node = node[k]
    if keys[-1] not in node:
        raise ConfigError(f"unknown config key {dotted}")
    node[keys[-1]] = yaml.safe_load(raw)


def load_config(path=None, overrides=(), base_dir=None):
    """Defaults, then the YAML file, then overrides. Relative paths resolve against the file."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        with open(path) as fh:
            loaded = yaml.safe_load(fh) or {}
        _merge(cfg, loaded)
        base_dir = base_dir or os.path.dirname(os.path.abspath(path))
    for o in overrides:
        apply_override(cfg, o)
    base_dir = base_dir or os.getcwd()
    for section, key in (("data", "directory"), ("data", "test_directory"),
                         ("experiment", "checkpoint_dir"), ("experiment", "output_dir")):
        value = cfg[section][key]
        if value is not None and not os.path.isabs(value):
            cfg[section][key] = os.path.normpath(os.path.join(base_dir, value))
    return cfg


@dataclass
class ExperimentSpec:
    task: str
    ratios: list
    shots: list
    losses: list
    n_test: int
    seed: int
    descriptor: Descriptor
    data_directory: str
    checkpoint_dir: str
    output_dir: str
    inversion: InversionConfig
    untrained: dict = field(default_factory=dict)
    test_directory: str = None
    noise_std: float = 0.0
    record_wall_time: bool = True
    baseline: bool = True

    def __post_init__(self):
        if self.task not in ("cs", "colorization"):
            raise ConfigError(f"task must be 'cs' or 'colorization', got {self.task!r}")
        for loss in self.losses:
            if loss not in ("l2", "mmd"):
                raise ConfigError(f"unknown loss {loss!r}")
        if self.task == "cs" and not self.ratios:
            raise ConfigError("compressed sensing needs at least one ratio")

    def checkpoint_path(self, shots, loss):
        return os.path.join(self.checkpoint_dir, f"{loss}_S{shots}.ckpt")

    def to_dict(self):
        d = asdict(self)
        d["descriptor"] = self.descriptor.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["descriptor"] = Descriptor.from_dict(d["descriptor"])
        d["inversion"] = InversionConfig(**d["inversion"])
        return cls(**d)


def experiment_spec(cfg):
    exp = cfg["experiment"]
    inv = dict(cfg["inversion"])
    inv["seed"] = cfg["seed"]
    return ExperimentSpec(
        task=exp["task"],
        ratios=[float(r) for r in exp["ratios"]],
        shots=[int(s) for s in exp["shots"]],
        losses=list(exp["losses"]),
        n_test=int(cfg["data"]["n_test"]),
        seed=int(cfg["seed"]),
        descriptor=Descriptor.from_dict(cfg["model"]),
        data_directory=cfg["data"]["directory"],
        test_directory=cfg["data"]["test_directory"],
        checkpoint_dir=exp["checkpoint_dir"],
        output_dir=exp["output_dir"],
        inversion=InversionConfig(**inv),
        untrained=dict(cfg["untrained"]),
        noise_std=float(exp["noise_std"]),
        record_wall_time=bool(exp["record_wall_time"]),
        baseline=bool(exp["baseline"]),
    )

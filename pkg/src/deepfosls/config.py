"""Run configuration: TOML loading, validation, defaults and hashing.

A config file has top-level ``seed`` and ``out`` keys and the sections
``[problem]``, ``[main]``, ``[aux]`` and ``[train]``::

    seed = 0
    out = "runs/example1"

    [problem]
    name = "example1"
    d = 2
    k = 1

    [main]
    hidden = [15]
    activation = "sigmoid"

    [aux]
    mode = "analytic"        # or "trained", "from-checkpoint"

    [train]
    N = 2000
    steps = 5000
    lr0 = 0.005

Every key is optional. Unknown keys are rejected with their dotted path.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

import tomli

from .auxiliary import AuxTrainConfig
from .errors import ConfigError
from .nn import ACTIVATIONS
from .problems import BENCHMARKS, make_benchmark
from .training import TrainConfig

AUX_MODES = ("analytic", "trained", "from-checkpoint")
PROBLEM_KEYS = {"example1": ("d", "k"), "example2": ("eps",), "remark1d": ()}


@dataclass
class NetSpec:
    """Hidden widths and activation of the ``v`` and ``psi`` networks."""

    # five layers counting input and output
    hidden: list = field(default_factory=lambda: [15, 15, 15])
    activation: str = "sigmoid"

    def __post_init__(self):
        if not self.hidden or any(int(w) != w or w < 1 for w in self.hidden):
            raise ConfigError("hidden widths must be positive integers", "main.hidden")
        self.hidden = [int(w) for w in self.hidden]
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}", "main.activation")


@dataclass
class AuxSpec:
    mode: str = "analytic"
    dir: str | None = None
    train: AuxTrainConfig = field(default_factory=AuxTrainConfig)

    def __post_init__(self):
        if self.mode not in AUX_MODES:
            raise ConfigError(f"must be one of {', '.join(AUX_MODES)}", "aux.mode")
        if self.mode == "from-checkpoint" and not self.dir:
            raise ConfigError("from-checkpoint mode needs a checkpoint directory", "aux.dir")


@dataclass
class RunConfig:
    problem: dict = field(default_factory=lambda: {"name": "example1", "d": 2, "k": 1})
    main: NetSpec = field(default_factory=NetSpec)
    aux: AuxSpec = field(default_factory=AuxSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0
    out: str = "run"

    def __post_init__(self):
        name = self.problem.get("name")
        if name not in BENCHMARKS:
            raise ConfigError(f"unknown benchmark {name!r}; expected one of {', '.join(BENCHMARKS)}", "problem.name")
        allowed = PROBLEM_KEYS[name]
        for key in self.problem:
            if key != "name" and key not in allowed:
                raise ConfigError(f"unknown key for {name}", f"problem.{key}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("must be a non-negative integer", "seed")
        if self.train.seed != self.seed:
            self.train.seed = self.seed

    def build_problem(self):
        params = {k: v for k, v in self.problem.items() if k != "name"}
        return make_benchmark(self.problem["name"], **params)

    def to_dict(self):
        return asdict(self)

    def config_hash(self):
        """Hash of everything that influences results (``out``, ``workers`` and ``timing`` excluded)."""
        data = self.to_dict()
        data.pop("out")
        data["train"].pop("workers")
        data["train"].pop("timing")
        blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _build(cls, table, path):
    """Instantiate dataclass ``cls`` from ``table``, rejecting unknown keys."""
    if not isinstance(table, dict):
        raise ConfigError("expected a table", path)
    names = {f.name for f in fields(cls)}
    for key in table:
        if key not in names:
            raise ConfigError("unknown key", f"{path}.{key}")
    try:
        return cls(**table)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), path) from exc


def config_from_dict(data):
    data = dict(data)
    known = {"problem", "main", "aux", "train", "seed", "out"}
    for key in data:
        if key not in known:
            raise ConfigError("unknown key", key)
    kwargs = {}
    if "problem" in data:
        problem = dict(data["problem"])
        problem.setdefault("name", "example1")
        kwargs["problem"] = problem
    if "main" in data:
        kwargs["main"] = _build(NetSpec, data["main"], "main")
    if "aux" in data:
        table = dict(data["aux"])
        aux_keys = {"mode", "dir"}
        train_part = {k: v for k, v in table.items() if k not in aux_keys}
        kwargs["aux"] = AuxSpec(mode=table.get("mode", "analytic"), dir=table.get("dir"),
                                train=_build(AuxTrainConfig, train_part, "aux"))
    if "train" in data:
        kwargs["train"] = _build(TrainConfig, data["train"], "train")
    if "seed" in data:
        kwargs["seed"] = data["seed"]
    if "out" in data:
        kwargs["out"] = str(data["out"])
    return RunConfig(**kwargs)


def load_config(path):
    """Parse a TOML config file. Missing files raise ``OSError``."""
    with open(path, "rb") as fh:
        try:
            data = tomli.load(fh)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML: {exc}", str(path)) from exc
    return config_from_dict(data)

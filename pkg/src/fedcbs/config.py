"""YAML experiment configuration.

Schema (all sections optional except ``seeds``)::

    name: case2-demo
    seeds: [0, 1, 2]
    output_dir: out
    dataset:
      source: synthetic        # or "idx"
      n_train_per_class: 400
      n_test_per_class: 200
      n_features: 20
      cluster_std: 1.0
      center_scale: 1.0
      seed: 0
      # idx only: train_images, train_labels, test_images, test_labels, n_classes
    partition:
      scheme: case2            # dirichlet | one_class | two_class | case1 | case2
      n_clients: 200
      n_classes: 10
      param: 3                 # Dirichlet alpha, or the case1/case2 ratio
      availability_fraction: 0.3
      samples_per_client: 20
    strategy:                  # used by `run`
      name: fedcbs             # fedcbs | random | pow_d | greedy_qcid | all
      lambda: 10
      beta_schedule: null      # null -> beta_m = m
      qcid_floor: 1.0e-20
      pow_d_candidates: null   # null -> 2 * n_select
      greedy_noise: null
    strategies: [random, fedcbs]   # used by `compare`; names or strategy mappings
    training:
      rounds: 150
      n_select: 10
      local_steps: null
      local_epochs: 5
      batch_size: 50
      learning_rate: 0.01
      lr_decay: 0.9992
      weight_decay: 0.0005
      aggregator: fedavg       # or fednova
      n_hidden: 64
      target_accuracy: null
      n_jobs: 1
"""
from __future__ import annotations

import os
import re
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .core import STRATEGIES, StrategyConfig
from .datasets import Dataset, load_idx_dataset, make_synthetic_split
from .exceptions import ConfigError
from .flsim.engine import TrainingConfig
from .partition import PartitionSpec

OUTPUT_DIR_ENV = "FEDCBS_OUTPUT_DIR"


class _Loader(yaml.SafeLoader):
    """SafeLoader that also reads ``1e-20`` (no dot) as a float."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
    |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
    |\.[0-9_]+(?:[eE][-+][0-9]+)?
    |[-+]?\.(?:inf|Inf|INF)
    |\.(?:nan|NaN|NAN))$""", re.X),
    list("-+0123456789."),
)

_DATASET_KEYS = {"source", "n_train_per_class", "n_test_per_class", "n_features", "cluster_std",
                 "center_scale", "seed", "train_images", "train_labels", "test_images",
                 "test_labels", "n_classes"}
_STRATEGY_KEYS = {"name", "lambda", "beta_schedule", "qcid_floor", "pow_d_candidates", "greedy_noise"}
_TOP_KEYS = {"name", "seeds", "output_dir", "dataset", "partition", "strategy", "strategies", "training"}


@dataclass
class ExperimentConfig:
    name: str
    seeds: list
    partition: PartitionSpec
    strategies: list
    training: TrainingConfig
    dataset: dict = field(default_factory=dict)
    output_dir: Path = Path("out")

    @property
    def strategy(self) -> StrategyConfig:
        return self.strategies[0]

    def load_data(self) -> tuple[Dataset, Dataset]:
        ds = self.dataset
        if ds.get("source", "synthetic") == "idx":
            n_classes = int(ds.get("n_classes", 10))
            try:
                train = load_idx_dataset(ds["train_images"], ds["train_labels"], n_classes)
                test = load_idx_dataset(ds["test_images"], ds["test_labels"], n_classes)
            except KeyError as exc:
                raise ConfigError("idx dataset needs image and label paths", field=f"dataset.{exc.args[0]}")
            return train, test
        return make_synthetic_split(
            int(ds.get("n_train_per_class", 400)), int(ds.get("n_test_per_class", 200)),
            n_classes=self.partition.n_classes, n_features=int(ds.get("n_features", 20)),
            cluster_std=float(ds.get("cluster_std", 1.0)), center_scale=float(ds.get("center_scale", 1.0)),
            seed=int(ds.get("seed", 0)),
        )


def _line_map(text: str) -> dict:
    """``'section.key' -> 1-based line`` for every mapping key in the document."""
    lines = {}

    def walk(node, prefix):
        if isinstance(node, yaml.MappingNode):
            for key, value in node.value:
                path = f"{prefix}{key.value}"
                lines[path] = key.start_mark.line + 1
                walk(value, path + ".")
        elif isinstance(node, yaml.SequenceNode):
            for i, item in enumerate(node.value):
                lines[f"{prefix}{i}"] = item.start_mark.line + 1
                walk(item, f"{prefix}{i}.")

    try:
        root = yaml.compose(text, Loader=_Loader)
    except yaml.YAMLError:
        return lines
    if root is not None:
        walk(root, "")
    return lines


def _build(cls, section: dict, path: str, lines: dict, rename=None):
    rename = rename or {}
    allowed = {f.name for f in fields(cls)}
    kwargs = {}
    for key, value in section.items():
        target = rename.get(key, key)
        if target not in allowed:
            raise ConfigError(f"unknown key {key!r}", field=f"{path}.{key}", line=lines.get(f"{path}.{key}"))
        kwargs[target] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        bad = next((k for k in section if str(k) in str(exc)), None)
        where = f"{path}.{bad}" if bad else path
        raise ConfigError(str(exc), field=where, line=lines.get(where)) from None


def _strategy(entry, path: str, lines: dict) -> StrategyConfig:
    if isinstance(entry, str):
        entry = {"name": entry}
    if not isinstance(entry, dict):
        raise ConfigError("strategy must be a name or a mapping", field=path, line=lines.get(path))
    for key in entry:
        if key not in _STRATEGY_KEYS:
            raise ConfigError(f"unknown key {key!r}", field=f"{path}.{key}", line=lines.get(f"{path}.{key}"))
    name = entry.get("name", "fedcbs")
    if name not in STRATEGIES:
        field_path = f"{path}.name" if f"{path}.name" in lines else path
        raise ConfigError(f"unknown strategy {name!r}; expected one of {STRATEGIES}",
                          field=field_path, line=lines.get(field_path))
    body = {k: v for k, v in entry.items() if k != "name"}
    body["strategy"] = name
    return _build(StrategyConfig, body, path, lines, rename={"lambda": "exploration_factor"})


def parse_config(text: str, base_dir: Path | None = None) -> ExperimentConfig:
    try:
        raw = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"malformed YAML: {getattr(exc, 'problem', exc)}",
                          line=mark.line + 1 if mark else None) from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    lines = _line_map(text)
    for key in raw:
        if key not in _TOP_KEYS:
            raise ConfigError(f"unknown key {key!r}", field=key, line=lines.get(key))

    seeds = raw.get("seeds")
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("seeds must be a non-empty list of integers", field="seeds", line=lines.get("seeds"))

    for section in ("dataset", "partition", "training"):
        if not isinstance(raw.get(section, {}), dict):
            raise ConfigError("section must be a mapping", field=section, line=lines.get(section))
    dataset = dict(raw.get("dataset") or {})
    for key in dataset:
        if key not in _DATASET_KEYS:
            raise ConfigError(f"unknown key {key!r}", field=f"dataset.{key}", line=lines.get(f"dataset.{key}"))
    if dataset.get("source", "synthetic") not in ("synthetic", "idx"):
        raise ConfigError("dataset source must be 'synthetic' or 'idx'", field="dataset.source",
                          line=lines.get("dataset.source"))
    if base_dir is not None:
        for key in ("train_images", "train_labels", "test_images", "test_labels"):
            if key in dataset and not Path(dataset[key]).is_absolute():
                dataset[key] = str(base_dir / dataset[key])

    partition = _build(PartitionSpec, raw.get("partition") or {}, "partition", lines)
    training = _build(TrainingConfig, raw.get("training") or {}, "training", lines)

    if "strategies" in raw:
        entries = raw["strategies"]
        if not isinstance(entries, list) or not entries:
            raise ConfigError("strategies must be a non-empty list", field="strategies",
                              line=lines.get("strategies"))
        strategies = [_strategy(e, f"strategies.{i}", lines) for i, e in enumerate(entries)]
    else:
        strategies = [_strategy(raw.get("strategy") or {}, "strategy", lines)]

    output_dir = Path(os.environ.get(OUTPUT_DIR_ENV) or raw.get("output_dir", "out"))
    if base_dir is not None and not output_dir.is_absolute() and not os.environ.get(OUTPUT_DIR_ENV):
        output_dir = base_dir / output_dir
    return ExperimentConfig(
        name=str(raw.get("name", "experiment")),
        seeds=seeds,
        partition=partition,
        strategies=strategies,
        training=training,
        dataset=dataset,
        output_dir=output_dir,
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config not found: {path}")
    return parse_config(path.read_text(), base_dir=path.parent)

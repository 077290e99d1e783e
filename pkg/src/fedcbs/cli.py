"""Command line entry point: ``fedcbs run|compare|oracle``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction
from pathlib import Path

import yaml

from .config import ExperimentConfig, _Loader, load_config
from .core import StrategyConfig, clients_from_counts
from .exceptions import ConfigError, FedCBSError
from .flsim.engine import run_experiment
from .qcid import expected_qcid, inner_product_matrix
from .report import (aggregate_summaries, format_table, write_json, write_metrics_csv,
                     write_svg)
from .selection import SamplerState, chain_expected_qcid, enumerate_chain

def strategy_labels(strategies) -> list[str]:
    """Unique display label per strategy; repeats get a ``#n`` suffix."""
    seen, labels = {}, []
    for s in strategies:
        seen[s.strategy] = seen.get(s.strategy, 0) + 1
        labels.append(s.strategy if seen[s.strategy] == 1 else f"{s.strategy}#{seen[s.strategy]}")
    return labels


def _one_run(args):
    cfg, strategy, seed, train, test = args
    return run_experiment(cfg.partition, strategy, cfg.training, seed, train, test)


def run_strategies(cfg: ExperimentConfig, strategies, jobs: int = 1) -> dict:
    """Run every strategy on every seed; returns ``{label: [result per seed]}``.

    All strategies share seeds, so partition and availability coincide.
    Output files are written per seed as results arrive.
    """
    train, test = cfg.load_data()
    labels = strategy_labels(strategies)
    tasks = [(label, s, seed) for label, s in zip(labels, strategies) for seed in cfg.seeds]
    payloads = [(cfg, s, seed, train, test) for _, s, seed in tasks]
    out = cfg.output_dir / cfg.name
    results = {label: [] for label in labels}

    def store(task, result):
        label, _, seed = task
        write_metrics_csv(out / label / f"seed{seed}.csv", result.metrics)
        results[label].append(result)

    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            for task, result in zip(tasks, pool.map(_one_run, payloads)):
                store(task, result)
    else:
        for task, payload in zip(tasks, payloads):
            store(task, _one_run(payload))
    return results


def _write_outputs(cfg: ExperimentConfig, results: dict) -> dict:
    out = cfg.output_dir / cfg.name
    summary = {"name": cfg.name, "seeds": list(cfg.seeds), "strategies": {}}
    for label, runs in results.items():
        summary["strategies"][label] = {"per_seed": [r.summary for r in runs],
                                        **aggregate_summaries([r.summary for r in runs])}
    write_json(out / "summary.json", summary)
    series = {}
    for label, runs in results.items():
        rounds = [m.round for m in runs[0].metrics]
        mean_acc = [sum(r.metrics[i].test_accuracy for r in runs) / len(runs) for i in range(len(rounds))]
        series[label] = (rounds, mean_acc)
    write_svg(out / "accuracy.svg", series, title=f"{cfg.name}: test accuracy (mean over seeds)")
    return summary


def _fmt(stat, digits=4):
    if stat["mean"] is None:
        return "-"
    text = f"{stat['mean']:.{digits}f} +- {stat['std']:.{digits}f}"
    return text + (f" ({stat['missing']} missed)" if stat["missing"] else "")


def comparison_rows(summary: dict) -> list[dict]:
    return [{"strategy": label, **stats} for label, stats in summary["strategies"].items()]


def comparison_table(summary: dict) -> str:
    columns = [
        ("strategy", lambda r: r["strategy"]),
        ("best_accuracy", lambda r: _fmt(r["best_accuracy"])),
        ("rounds_to_target", lambda r: _fmt(r["rounds_to_target"], 1)),
        ("mean_qcid", lambda r: _fmt(r["mean_qcid"], 5)),
    ]
    return format_table(comparison_rows(summary), columns)


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    results = run_strategies(cfg, cfg.strategies[:1], args.jobs)
    summary = _write_outputs(cfg, results)
    print(comparison_table(summary))
    print(f"outputs in {cfg.output_dir / cfg.name}")
    return 0


def cmd_compare(args) -> int:
    cfg = load_config(args.config)
    results = run_strategies(cfg, cfg.strategies, args.jobs)
    summary = _write_outputs(cfg, results)
    table = comparison_table(summary)
    (cfg.output_dir / cfg.name).mkdir(parents=True, exist_ok=True)
    (cfg.output_dir / cfg.name / "comparison.txt").write_text(table + "\n")
    print(table)
    return 0


def _number(value) -> dict:
    """Exact value as a string (fractions stay exact) plus a float approximation."""
    return {"value": str(value) if isinstance(value, Fraction) else value, "approx": float(value)}


def oracle_report(instance: dict) -> dict:
    """Exhaustive chain probabilities and expected QCIDs for a small instance.

    ``instance`` holds ``counts`` (one row of class counts per client),
    ``n_select`` and optionally ``lambda``, ``beta_schedule``, ``qcid_floor``,
    ``round``, ``selection_counts``, ``power_betas`` and ``exact``.
    """
    if "counts" not in instance or "n_select" not in instance:
        raise ConfigError("oracle instance needs 'counts' and 'n_select'")
    exact = bool(instance.get("exact", True))
    clients = clients_from_counts(instance["counts"], exact=exact)
    S = inner_product_matrix(clients)
    quantities = [c.quantity for c in clients]
    m = int(instance["n_select"])
    config = StrategyConfig(strategy="fedcbs", exploration_factor=float(instance.get("lambda", 0.0)),
                            beta_schedule=instance.get("beta_schedule"),
                            qcid_floor=instance.get("qcid_floor", 1e-20))
    ids = [c.id for c in clients]
    counts = instance.get("selection_counts") or {}
    state = SamplerState(round_index=int(instance.get("round", 1)),
                         counts={int(k): int(v) for k, v in dict(counts).items()})
    chain = enumerate_chain(ids, S, quantities, m, config, state)
    by_set = {}
    for t, p in chain.items():
        key = tuple(sorted(t))
        by_set[key] = by_set.get(key, 0) + p
    power_betas = instance.get("power_betas", [1, 2, 4])
    return {
        "n_clients": len(clients),
        "n_select": m,
        "betas": list(config.betas(m)),
        "chain": [{"order": list(t), "probability": _number(p)} for t, p in chain.items()],
        "subsets": [{"subset": list(s), "probability": _number(p)} for s, p in sorted(by_set.items())],
        "expected_qcid": {
            "uniform": _number(expected_qcid(clients, m)),
            "chain": _number(chain_expected_qcid(ids, S, quantities, m, config, state)),
            "power": {str(b): _number(expected_qcid(clients, m, b, config.qcid_floor)) for b in power_betas},
        },
    }


def cmd_oracle(args) -> int:
    path = Path(args.instance)
    if not path.exists():
        raise FileNotFoundError(f"instance file not found: {path}")
    try:
        instance = yaml.load(path.read_text(), Loader=_Loader)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed instance file: {exc}") from None
    if not isinstance(instance, dict):
        raise ConfigError("instance file must be a mapping")
    print(json.dumps(oracle_report(instance), indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedcbs", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, help_text in (("run", cmd_run, "run the configured strategy over all seeds"),
                                ("compare", cmd_compare, "run every listed strategy on paired seeds")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config")
        p.add_argument("--jobs", type=int, default=1, help="seeds run in parallel processes")
        p.set_defaults(func=fn)
    p = sub.add_parser("oracle", help="exhaustive chain probabilities for a small instance")
    p.add_argument("instance")
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except FedCBSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

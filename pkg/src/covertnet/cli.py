"""Command-line entry point: ``covertnet <command> [--config FILE] [--seed N] [--out PATH]``.

Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import asdict, replace
from pathlib import Path

from . import dataset as ds_mod
from .dataset import Dataset, PartitionSpec, SplitSpec
from .errors import ConfigError
from .experiment import (
    ExperimentConfig,
    evaluate,
    rows_to_csv,
    run_experiment,
    write_json,
)
from .fedlearn import run_federated, write_history
from .gnn_models import collate, get_model, load_checkpoint, save_checkpoint, train_standalone
from .metrics import MetricsReport, compare
from .pruning import PruneConfig, prune_by_magnitude, sparsity_sweep, sweep_to_csv, validate_prune

FIELD_HELP = """\
config file fields (JSON; every field optional, defaults shown):
  schema_version          1
  name                    "baseline"     run name, used in the output directory
  seed                    0              split, weight-init and shard seed
  model                   "hybrid"       mlp | gcn1 | gcn2 | gcn3 | hybrid
  mode                    "standalone"   standalone | federated (used by `run`)
  train_fraction          0.8
  output_dir              "runs"         `run` writes to <output_dir>/<name>-seed<seed>
  dataset.num_graphs      200
  dataset.nodes_per_graph 5
  dataset.area_bounds     [100, 100]     deployment rectangle in meters
  dataset.seed            0              placement seed
  dataset.adjacency_policy "complete"    stored message-passing graph: complete | mst
  oracle.kind             "brute_force"  brute_force | mst | local_search
  oracle.area_method      "grid"         grid | monte_carlo | exact
  oracle.area_samples     65536
  oracle.area_seed        0
  train.epochs            1000
  train.learning_rate     0.01
  train.optimizer         "adam"         adam | sgd
  train.record_every      10             learning-curve sampling interval
  encoding.adjacency_policy "mst"        graph the models pass messages on (null: stored graph)
  encoding.edge_weighting "length"       length | none
  encoding.self_loop_weight 0.5
  encoding.scale          null           null: longer side of the area
  federated.workers       6
  federated.shard_size    25
  federated.rounds        150
  federated.local_epochs_per_round 7
  federated.optimizer_state_policy "persist"  persist | reset
  prune.levels            []             sparsity levels for `sweep`
  prune.scope             "global_rank"  global_rank | per_layer
  prune.sparsity          null           level for `prune`
  prune.loss_threshold    null           max allowed MAE increase (null: no gate)
  eval_area.*             as oracle.*    area estimator for evaluation
"""


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg.validate()


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def _write_text(path, text: str) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)


def cmd_gen(args):
    cfg = _load_config(args)
    d = cfg.dataset
    seed = d.seed if args.seed is None else args.seed
    ds = ds_mod.generate(d.num_graphs, d.nodes_per_graph, d.area_bounds, seed, d.adjacency_policy)
    ds.save(args.out)


def cmd_label(args):
    cfg = _load_config(args)
    ds = ds_mod.label(Dataset.load(args.dataset), cfg.oracle.kind, cfg.oracle.area)
    ds.save(args.out)


def cmd_split(args):
    cfg = _load_config(args)
    sp = ds_mod.split(Dataset.load(args.dataset), cfg.train_fraction, cfg.seed)
    _write_text(args.out, json.dumps(sp.to_json(), sort_keys=True) + "\n")


def _data_and_split(args):
    ds = Dataset.load(args.dataset)
    sp = SplitSpec.from_json(_read_json(args.split))
    return ds, sp


def cmd_train(args):
    cfg = _load_config(args)
    ds, sp = _data_and_split(args)
    spec = get_model(args.model or cfg.model)
    res = train_standalone(spec, ds, sp, cfg.train_config, record_every=max(1, cfg.train.record_every))
    save_checkpoint(args.out, spec, res.params, res.encoding, res.optimizer_state, cfg.to_json())
    if args.curve:
        header = ["epoch", "train_loss", "train_mae", "train_medae", "test_mae", "test_medae"]
        _write_text(args.curve, rows_to_csv(res.curve, header if sp.test_ids else header[:4]))


def cmd_train_fed(args):
    cfg = _load_config(args)
    if args.model:
        cfg = replace(cfg, model=args.model)
    ds, sp = _data_and_split(args)
    f = cfg.federated
    if args.partition and Path(args.partition).exists():
        part = PartitionSpec.from_json(_read_json(args.partition))
    else:
        part = ds_mod.partition(sp, f.workers, f.shard_size, cfg.seed)
        if args.partition:
            _write_text(args.partition, json.dumps(part.to_json(), sort_keys=True) + "\n")
    res = run_federated(cfg.fed_config, ds, sp, part)
    save_checkpoint(args.out, get_model(cfg.model), res.params, res.encoding, None, cfg.to_json())
    if args.history:
        write_history(args.history, res.history)


def _eval_batches(ckpt, ds, sp):
    return collate(ds.subset(sp.test_ids), ckpt.encoding.resolve(ds.area_bounds))


def cmd_prune(args):
    cfg = _load_config(args)
    ckpt = load_checkpoint(args.checkpoint)
    ds, sp = _data_and_split(args)
    rho = args.sparsity if args.sparsity is not None else cfg.prune.sparsity
    if rho is None:
        raise ConfigError("no sparsity given (--sparsity or prune.sparsity)")
    theta = args.threshold if args.threshold is not None else cfg.prune.loss_threshold
    theta = math.inf if theta is None else theta
    pruned = prune_by_magnitude(ckpt.params, PruneConfig(rho, cfg.prune.scope))
    rep = validate_prune(ckpt.params, pruned, ckpt.spec, _eval_batches(ckpt, ds, sp), theta)
    save_checkpoint(args.out, ckpt.spec, pruned.params, ckpt.encoding, None, cfg.to_json())
    doc = asdict(rep)
    doc["threshold"] = None if math.isinf(theta) else theta
    if args.report:
        write_json(args.report, doc)
    print(json.dumps(doc, sort_keys=True))
    if not rep.accepted:
        print(f"pruning rejected: MAE rose by {rep.delta:.4g} > {theta:.4g}", file=sys.stderr)


def cmd_sweep(args):
    cfg = _load_config(args)
    ckpt = load_checkpoint(args.checkpoint)
    ds, sp = _data_and_split(args)
    levels = args.levels or cfg.prune.levels or (0.0, 0.1, 0.2, 0.3, 0.5, 0.7, 0.9)
    rows = sparsity_sweep(ckpt.params, ckpt.spec, _eval_batches(ckpt, ds, sp), levels, cfg.prune.scope)
    _write_text(args.out, sweep_to_csv(rows))


def cmd_eval(args):
    cfg = _load_config(args)
    ckpt = load_checkpoint(args.checkpoint)
    ds, sp = _data_and_split(args)
    ids = sp.test_ids if args.which == "test" else sp.train_ids
    ev = evaluate(ckpt.spec, ckpt.params, ckpt.encoding, ds, ids, args.which, cfg.eval_area.area)
    _write_text(args.out, json.dumps(ev.report.to_json(), indent=2, sort_keys=True) + "\n")
    if args.per_sample:
        _write_text(args.per_sample, rows_to_csv(ev.per_sample))


def cmd_compare(args):
    reports = [MetricsReport.from_json(_read_json(p)) for p in args.reports]
    names = [r.model_name for r in reports]
    if len(set(names)) < len(names):
        # same architecture trained differently: label rows by file name
        reports = [replace(r, model_name=Path(p).stem) for r, p in zip(reports, args.reports)]
    rows = [asdict(r) for r in compare(reports)]
    _write_text(args.out, rows_to_csv(rows))


def cmd_run(args):
    cfg = _load_config(args)
    if args.out:
        cfg = replace(cfg, output_dir=args.out)
    art = run_experiment(cfg)
    print(art.run_dir)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="covertnet",
        description="Minimum-area covert network radii: data generation, oracle labels, GNN training and evaluation.",
        epilog=FIELD_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_, out_help, out_required=True):
        sp = sub.add_parser(name, help=help_, epilog=FIELD_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
        sp.add_argument("--config", help="experiment config JSON (defaults when omitted)")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", required=out_required, help=out_help)
        sp.set_defaults(fn=fn)
        return sp

    def data_args(sp, split=True):
        sp.add_argument("--dataset", required=True, help="dataset JSON-lines file")
        if split:
            sp.add_argument("--split", required=True, help="split JSON from `split`")

    add("gen", cmd_gen, "generate unlabeled topologies (--seed sets the placement seed)", "dataset JSON-lines path")
    data_args(add("label", cmd_label, "attach oracle radii", "labeled dataset path"), split=False)
    data_args(add("split", cmd_split, "seeded train/test split", "split JSON path"), split=False)

    sp = add("train", cmd_train, "standalone training", "checkpoint path")
    data_args(sp)
    sp.add_argument("--model", help="override the config model")
    sp.add_argument("--curve", help="learning-curve CSV path")

    sp = add("train-fed", cmd_train_fed, "federated training", "checkpoint path")
    data_args(sp)
    sp.add_argument("--model", help="override the config model")
    sp.add_argument("--partition", help="partition JSON; read if present, else written")
    sp.add_argument("--history", help="per-round JSON-lines path")

    sp = add("prune", cmd_prune, "one-shot magnitude pruning with acceptance gate", "pruned checkpoint path")
    data_args(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--sparsity", type=float)
    sp.add_argument("--threshold", type=float, help="max allowed test-MAE increase")
    sp.add_argument("--report", help="prune report JSON path")

    sp = add("sweep", cmd_sweep, "test error over sparsity levels", "CSV path ('-' for stdout)")
    data_args(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--levels", type=float, nargs="+")

    sp = add("eval", cmd_eval, "metrics report for a checkpoint", "report JSON path ('-' for stdout)")
    data_args(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--which", choices=("train", "test"), default="test")
    sp.add_argument("--per-sample", help="per-sample CSV path")

    sp = add("compare", cmd_compare, "rank metrics reports by MAE", "CSV path ('-' for stdout)")
    sp.add_argument("reports", nargs="+", help="report JSON files from `eval`")

    add("run", cmd_run, "full pipeline into a seed-named directory", "output root (overrides output_dir)", False)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.fn(args)
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

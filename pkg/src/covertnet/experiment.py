"""Experiment configuration, model evaluation, and the end-to-end pipeline."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import dataset as ds_mod
from .dataset import Dataset
from .errors import ConfigError, CovertNetError, InvalidInputError
from .fedlearn import FedConfig, run_federated, write_history
from .geometry import induced_adjacency, is_connected
from .gnn_models import (
    GraphEncoding,
    ModelSpec,
    TrainConfig,
    collate,
    get_model,
    predict,
    save_checkpoint,
    train_standalone,
)
from .metrics import MetricsReport, mae, medae
from .oracle import AreaConfig, assignment_area, repair_radii
from .pruning import PruneConfig, prune_by_magnitude, sparsity_sweep, sweep_to_csv, validate_prune
from .tensor_core import ParamSet

CONFIG_SCHEMA_VERSION = 1


class StageError(CovertNetError):
    """A pipeline stage failed for a reason other than invalid input."""


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------


@dataclass
class DatasetSection:
    num_graphs: int = 200
    nodes_per_graph: int = 5
    area_bounds: tuple[float, float] = (100.0, 100.0)
    seed: int = 0
    adjacency_policy: str = "complete"


@dataclass
class OracleSection:
    kind: str = "brute_force"
    area_method: str = "grid"
    area_samples: int = 1 << 16
    area_seed: int = 0

    @property
    def area(self) -> AreaConfig:
        return AreaConfig(self.area_method, self.area_samples, self.area_seed)


@dataclass
class TrainSection:
    epochs: int = 1000
    learning_rate: float = 1e-2
    optimizer: str = "adam"
    record_every: int = 10


@dataclass
class FederatedSection:
    workers: int = 6
    shard_size: int = 25
    rounds: int = 150
    local_epochs_per_round: int = 7
    optimizer_state_policy: str = "persist"


@dataclass
class PruneSection:
    levels: tuple[float, ...] = ()
    scope: str = "global_rank"
    sparsity: float | None = None
    loss_threshold: float | None = None


@dataclass
class ExperimentConfig:
    """Full description of one run. ``seed`` drives the split, initialisation and shards."""

    name: str = "baseline"
    seed: int = 0
    model: str = "hybrid"
    mode: str = "standalone"
    train_fraction: float = 0.8
    output_dir: str = "runs"
    dataset: DatasetSection = field(default_factory=DatasetSection)
    oracle: OracleSection = field(default_factory=OracleSection)
    train: TrainSection = field(default_factory=TrainSection)
    encoding: GraphEncoding = field(default_factory=GraphEncoding)
    federated: FederatedSection = field(default_factory=FederatedSection)
    prune: PruneSection = field(default_factory=PruneSection)
    eval_area: OracleSection = field(default_factory=OracleSection)

    def validate(self) -> "ExperimentConfig":
        get_model(self.model)
        if self.mode not in ("standalone", "federated"):
            raise ConfigError(f"mode must be 'standalone' or 'federated', got {self.mode!r}")
        if self.oracle.kind not in ("brute_force", "mst", "local_search"):
            raise ConfigError(f"unknown oracle {self.oracle.kind!r}")
        ds_mod.AdjacencyPolicy(self.dataset.adjacency_policy)
        AreaConfig(self.oracle.area_method, self.oracle.area_samples, self.oracle.area_seed)
        AreaConfig(self.eval_area.area_method, self.eval_area.area_samples, self.eval_area.area_seed)
        for rho in self.prune.levels:
            PruneConfig(rho, self.prune.scope)
        if self.prune.sparsity is not None:
            PruneConfig(self.prune.sparsity, self.prune.scope)
        return self

    @property
    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.train.epochs,
            learning_rate=self.train.learning_rate,
            seed=self.seed,
            optimizer=self.train.optimizer,
            encoding=self.encoding,
        )

    @property
    def fed_config(self) -> FedConfig:
        f = self.federated
        return FedConfig.from_train_config(
            get_model(self.model),
            self.train_config,
            workers=f.workers,
            rounds=f.rounds,
            local_epochs_per_round=f.local_epochs_per_round,
            optimizer_state_policy=f.optimizer_state_policy,
        )

    @property
    def run_dir(self) -> Path:
        return Path(self.output_dir) / f"{self.name}-seed{self.seed}"

    def to_json(self) -> dict:
        d = asdict(self)
        d["schema_version"] = CONFIG_SCHEMA_VERSION
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "ExperimentConfig":
        obj = dict(obj)
        version = obj.pop("schema_version", CONFIG_SCHEMA_VERSION)
        if version != CONFIG_SCHEMA_VERSION:
            raise ConfigError(f"unsupported config schema_version {version!r}")
        sections = {
            "dataset": DatasetSection,
            "oracle": OracleSection,
            "train": TrainSection,
            "encoding": GraphEncoding,
            "federated": FederatedSection,
            "prune": PruneSection,
            "eval_area": OracleSection,
        }
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        kwargs = {}
        try:
            for key, value in obj.items():
                if key not in sections:
                    kwargs[key] = value
                    continue
                if not isinstance(value, dict):
                    raise ConfigError(f"{key} must be an object")
                section = sections[key]
                bad = set(value) - {f.name for f in fields(section)}
                if bad:
                    raise ConfigError(f"unknown fields in {key}: {sorted(bad)}")
                for tup in ("area_bounds", "levels"):
                    if tup in value:
                        value = {**value, tup: tuple(value[tup])}
                kwargs[key] = section(**value)
            return cls(**kwargs).validate()
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            obj = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_json(obj)


# --------------------------------------------------------------------------
# evaluation
# --------------------------------------------------------------------------


@dataclass
class Evaluation:
    report: MetricsReport
    per_sample: list[dict]


def evaluate(
    spec: ModelSpec,
    params: ParamSet,
    encoding: GraphEncoding,
    dataset: Dataset,
    ids,
    split_name: str = "test",
    area: AreaConfig | None = None,
) -> Evaluation:
    """Pooled per-node MAE/MedAE plus area and feasibility of the predictions.

    Area figures use connectivity-repaired predictions; feasibility counts
    samples whose raw prediction (negatives clamped to 0) is already connected.
    """
    ids = list(ids)
    if not ids:
        raise InvalidInputError("cannot evaluate an empty split")
    samples = dataset.subset(ids)
    if any(s.labels is None for s in samples):
        raise InvalidInputError("evaluation needs labeled samples")
    if spec.in_dim != samples[0].features.shape[1]:
        raise InvalidInputError(f"model expects {spec.in_dim} features, dataset has {samples[0].features.shape[1]}")
    area = area or AreaConfig()
    encoding = encoding.resolve(dataset.area_bounds)
    preds = predict(spec, params, collate(samples, encoding))
    return evaluate_predictions(spec.name, dataset, ids, preds, split_name, area)


def evaluate_predictions(model_name, dataset: Dataset, ids, preds: dict, split_name="test", area=None) -> Evaluation:
    area = area or AreaConfig()
    all_p, all_y, ratios, feasible, per_sample = [], [], [], 0, []
    for sid in ids:
        s = dataset.samples[sid]
        p = np.asarray(preds[sid], dtype=np.float64)
        y = s.label_array
        all_p.append(p)
        all_y.append(y)
        raw_ok = is_connected(induced_adjacency(s.topology, np.maximum(p, 0.0)))
        feasible += raw_ok
        fixed = repair_radii(s.topology, p)
        a_pred = assignment_area(s.topology, fixed, area).value
        a_ref = assignment_area(s.topology, s.labels, area).value
        ratio = a_pred / a_ref if a_ref > 0 else math.nan
        ratios.append(ratio)
        per_sample.append(
            {"id": sid, "mae": mae(p, y), "medae": medae(p, y), "area_ratio": ratio, "feasible": int(raw_ok)}
        )
    p, y = np.concatenate(all_p), np.concatenate(all_y)
    report = MetricsReport(
        model_name=model_name,
        split=split_name,
        mae=mae(p, y),
        medae=medae(p, y),
        mean_area_ratio=float(np.mean(ratios)),
        feasibility_rate=feasible / len(ids),
        n_samples=len(ids),
    )
    return Evaluation(report, per_sample)


# --------------------------------------------------------------------------
# file helpers
# --------------------------------------------------------------------------


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def rows_to_csv(rows: list[dict], header: list[str] | None = None) -> str:
    header = header or (list(rows[0]) if rows else [])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(r[h]) if isinstance(r[h], float) else r[h] for h in header])
    return buf.getvalue()


# --------------------------------------------------------------------------
# pipeline stages
# --------------------------------------------------------------------------


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except CovertNetError as exc:
        raise type(exc)(f"[{name}] {exc}") from exc
    except Exception as exc:  # noqa: BLE001 - re-raised with stage context
        raise StageError(f"[{name}] {type(exc).__name__}: {exc}") from exc


def build_dataset(cfg: ExperimentConfig) -> Dataset:
    d = cfg.dataset
    raw = _stage(
        "generate",
        ds_mod.generate,
        d.num_graphs,
        d.nodes_per_graph,
        d.area_bounds,
        d.seed,
        d.adjacency_policy,
    )
    return _stage("label", ds_mod.label, raw, cfg.oracle.kind, cfg.oracle.area)


@dataclass
class RunArtifacts:
    run_dir: Path
    reports: dict[str, MetricsReport]
    params: ParamSet
    files: list[str]


def run_experiment(cfg: ExperimentConfig, dataset: Dataset | None = None) -> RunArtifacts:
    """generate -> label -> split -> train | train-fed -> (prune / sweep) -> evaluate.

    Everything is written under ``cfg.run_dir``; reruns of one config produce
    byte-identical files.
    """
    cfg.validate()
    out = cfg.run_dir
    out.mkdir(parents=True, exist_ok=True)
    files = []

    def emit(name, text):
        (out / name).write_text(text)
        files.append(name)

    echo = cfg.to_json()
    echo.pop("output_dir")  # outputs should not depend on where they are written
    emit("config.json", json.dumps(echo, indent=2, sort_keys=True) + "\n")
    if dataset is None:
        dataset = build_dataset(cfg)
    dataset.save(out / "dataset.jsonl")
    files.append("dataset.jsonl")
    split = _stage("split", ds_mod.split, dataset, cfg.train_fraction, cfg.seed)
    emit("split.json", json.dumps(split.to_json(), sort_keys=True) + "\n")

    spec = get_model(cfg.model)
    if cfg.mode == "standalone":
        result = _stage(
            "train",
            train_standalone,
            spec,
            dataset,
            split,
            cfg.train_config,
            record_every=max(1, cfg.train.record_every),
        )
        params, encoding, opt_state = result.params, result.encoding, result.optimizer_state
        header = ["epoch", "train_loss", "train_mae", "train_medae", "test_mae", "test_medae"]
        emit("curve.csv", rows_to_csv(result.curve, header))
    else:
        f = cfg.federated
        part = _stage("partition", ds_mod.partition, split, f.workers, f.shard_size, cfg.seed)
        emit("partition.json", json.dumps(part.to_json(), sort_keys=True) + "\n")
        fed = _stage("train-fed", run_federated, cfg.fed_config, dataset, split, part)
        params, encoding, opt_state = fed.params, fed.encoding, None
        write_history(out / "rounds.jsonl", fed.history)
        files.append("rounds.jsonl")

    save_checkpoint(out / "model.json", spec, params, encoding, opt_state, echo)
    files.append("model.json")

    area = cfg.eval_area.area
    reports = {}
    for split_name, ids in (("train", split.train_ids), ("test", split.test_ids)):
        ev = _stage("evaluate", evaluate, spec, params, encoding, dataset, ids, split_name, area)
        reports[split_name] = ev.report
        write_json(out / f"report_{split_name}.json", ev.report.to_json())
        files.append(f"report_{split_name}.json")
        emit(f"per_sample_{split_name}.csv", rows_to_csv(ev.per_sample))

    test_batches = collate(dataset.subset(split.test_ids), encoding)
    if cfg.prune.levels:
        rows = _stage("sweep", sparsity_sweep, params, spec, test_batches, cfg.prune.levels, cfg.prune.scope)
        emit("sweep.csv", sweep_to_csv(rows))
    if cfg.prune.sparsity is not None:
        pruned = _stage("prune", prune_by_magnitude, params, PruneConfig(cfg.prune.sparsity, cfg.prune.scope))
        theta = math.inf if cfg.prune.loss_threshold is None else cfg.prune.loss_threshold
        rep = _stage("prune", validate_prune, params, pruned, spec, test_batches, theta)
        doc = asdict(rep)
        doc["threshold"] = None if math.isinf(theta) else theta
        write_json(out / "prune_report.json", doc)
        files.append("prune_report.json")
        save_checkpoint(out / "model_pruned.json", spec, pruned.params, encoding, None, echo)
        files.append("model_pruned.json")
    return RunArtifacts(out, reports, params, files)

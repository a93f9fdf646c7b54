"""Round-based federated training: local full-batch training plus uniform weight averaging."""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dataset import Dataset, PartitionSpec, SplitSpec
from .errors import InvalidInputError
from .gnn_models import (
    Batch,
    GraphEncoding,
    ModelSpec,
    TrainConfig,
    collate,
    init_params,
    pooled_errors,
    run_epochs,
)
from .tensor_core import OptimizerConfig, ParamSet


def thread_budget() -> int:
    """Parallelism cap from ``COVERTNET_THREADS`` (unset: 1, 0: one per CPU)."""
    raw = os.environ.get("COVERTNET_THREADS", "1").strip() or "1"
    n = int(raw)
    if n < 0:
        raise InvalidInputError("COVERTNET_THREADS must be >= 0")
    return n if n > 0 else (os.cpu_count() or 1)


@dataclass
class WorkerState:
    worker_id: int
    shard: tuple[int, ...]
    batches: list[Batch]
    params: ParamSet | None = None
    optimizer_state: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.shard:
            raise InvalidInputError(f"worker {self.worker_id} has an empty shard")


@dataclass(frozen=True)
class RoundRecord:
    round: int
    global_params_digest: str
    per_worker_train_loss: tuple[float, ...]
    global_test_mae: float
    global_test_medae: float

    def to_json(self) -> dict:
        d = asdict(self)
        d["per_worker_train_loss"] = list(self.per_worker_train_loss)
        return d


@dataclass(frozen=True)
class FedConfig:
    model: ModelSpec
    workers: int = 6
    rounds: int = 150
    local_epochs_per_round: int = 7
    seed: int = 0
    learning_rate: float = 1e-2
    optimizer: str = "adam"
    optimizer_state_policy: str = "persist"
    encoding: GraphEncoding = field(default_factory=GraphEncoding)

    def __post_init__(self):
        if self.workers < 1 or self.rounds < 1:
            raise InvalidInputError("need workers >= 1 and rounds >= 1")
        if self.local_epochs_per_round < 0:
            raise InvalidInputError("local_epochs_per_round must be >= 0")
        if self.optimizer_state_policy not in ("reset", "persist"):
            raise InvalidInputError("optimizer_state_policy is 'reset' or 'persist'")

    @property
    def optimizer_config(self) -> OptimizerConfig:
        return OptimizerConfig(kind=self.optimizer, learning_rate=self.learning_rate)

    def to_json(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_json()
        return d

    @classmethod
    def from_train_config(cls, model: ModelSpec, train: TrainConfig, **kw) -> "FedConfig":
        return cls(
            model=model,
            seed=train.seed,
            learning_rate=train.learning_rate,
            optimizer=train.optimizer,
            encoding=train.encoding,
            **kw,
        )


def local_train(
    worker: WorkerState,
    global_params: ParamSet,
    local_epochs: int,
    spec: ModelSpec,
    opt: OptimizerConfig,
    persist_state: bool = False,
) -> ParamSet:
    """Start from the global weights, run ``local_epochs`` on the worker's shard."""
    template = worker.params if worker.params is not None else global_params
    template.check_congruent(global_params)
    state = worker.optimizer_state if persist_state else None
    params, state = run_epochs(spec, global_params.copy(), worker.batches, opt, state, local_epochs)
    worker.params = params
    worker.optimizer_state = state if persist_state else {}
    return params


def aggregate(worker_params: list[ParamSet]) -> ParamSet:
    """Uniform mean of congruent parameter sets, summed in list (ascending worker id) order.

    Computed as ``p0 + sum_k (p_k - p0) / K`` so identical inputs come back bit-exact.
    """
    if not worker_params:
        raise InvalidInputError("aggregate needs at least one parameter set")
    first = worker_params[0]
    for p in worker_params[1:]:
        first.check_congruent(p)
    k = len(worker_params)
    out = ParamSet()
    for name in first:
        base = np.asarray(first[name], dtype=np.float64)
        acc = np.zeros_like(base)
        for p in worker_params[1:]:
            acc = acc + (p[name] - base)
        out[name] = base + acc / k
    return out


@dataclass
class FedResult:
    params: ParamSet
    history: list[RoundRecord]
    encoding: GraphEncoding


def run_federated(
    config: FedConfig,
    dataset: Dataset,
    split: SplitSpec,
    partition: PartitionSpec,
    threads: int | None = None,
) -> FedResult:
    if partition.workers == 0:
        raise InvalidInputError("empty partition")
    if partition.workers != config.workers:
        raise InvalidInputError(f"partition has {partition.workers} shards, config wants {config.workers}")
    train_ids = set(split.train_ids)
    for shard in partition.worker_shards:
        if not set(shard) <= train_ids:
            raise InvalidInputError("partition uses ids outside the train split")
    if not dataset.is_labeled:
        raise InvalidInputError("federated training needs a labeled dataset")

    spec = config.model
    encoding = config.encoding.resolve(dataset.area_bounds)
    opt = config.optimizer_config
    persist = config.optimizer_state_policy == "persist"
    workers = [
        WorkerState(k, shard, collate(dataset.subset(shard), encoding))
        for k, shard in enumerate(partition.worker_shards)
    ]
    test = collate(dataset.subset(split.test_ids), encoding) if split.test_ids else []
    global_params = init_params(spec, config.seed)
    threads = thread_budget() if threads is None else threads

    def work(worker: WorkerState):
        p = local_train(worker, global_params, config.local_epochs_per_round, spec, opt, persist)
        return p, pooled_errors(spec, p, worker.batches)[0]

    history = []
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for t in range(1, config.rounds + 1):
            if pool is None:
                results = [work(w) for w in workers]
            else:
                # map preserves input order, so aggregation order stays fixed
                results = list(pool.map(work, workers))
            global_params = aggregate([p for p, _ in results])
            test_mae, test_medae = pooled_errors(spec, global_params, test) if test else (float("nan"),) * 2
            history.append(
                RoundRecord(t, global_params.digest(), tuple(loss for _, loss in results), test_mae, test_medae)
            )
    finally:
        if pool is not None:
            pool.shutdown()
    return FedResult(global_params, history, encoding)


def write_history(path, history: list[RoundRecord]) -> None:
    Path(path).write_text("".join(json.dumps(r.to_json(), sort_keys=True) + "\n" for r in history))


def read_history(path) -> list[RoundRecord]:
    out = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            obj = json.loads(line)
            obj["per_worker_train_loss"] = tuple(obj["per_worker_train_loss"])
            out.append(RoundRecord(**obj))
    return out

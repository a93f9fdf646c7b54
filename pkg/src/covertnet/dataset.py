"""Synthetic topologies, oracle labels, JSON-lines storage, splits and shards."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, InvalidInputError
from .geometry import Topology, induced_adjacency, is_connected, pairwise_distances
from .oracle import (
    BRUTE_FORCE_MAX_NODES,
    SOLVERS,
    AreaConfig,
    RadiusAssignment,
    mst,
)

SCHEMA_VERSION = 1
MIN_SEPARATION = 1e-6


class AdjacencyPolicy(str, enum.Enum):
    COMPLETE = "complete"
    MST = "mst"


def message_passing_adjacency(topology: Topology, policy: AdjacencyPolicy | str) -> np.ndarray:
    """GNN input graph over the sample's nodes, self-loops included."""
    policy = AdjacencyPolicy(policy)
    n = topology.n
    if policy is AdjacencyPolicy.COMPLETE:
        return np.ones((n, n), dtype=bool)
    adj = np.eye(n, dtype=bool)
    if n >= 2:
        for i, j in mst(topology).edges:
            adj[i, j] = adj[j, i] = True
    return adj


def normalise_features(topology: Topology, area_bounds) -> np.ndarray:
    w, h = area_bounds
    return topology.positions / np.array([w, h], dtype=np.float64)


@dataclass(eq=False)
class GraphSample:
    id: int
    topology: Topology
    mp_adjacency: np.ndarray
    features: np.ndarray
    labels: RadiusAssignment | None = None

    def __post_init__(self):
        n = self.topology.n
        adj = np.asarray(self.mp_adjacency, dtype=bool)
        if adj.shape != (n, n) or not np.array_equal(adj, adj.T) or not adj.diagonal().all():
            raise InvalidInputError("mp_adjacency must be symmetric (N, N) with a true diagonal")
        self.mp_adjacency = adj
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise InvalidInputError("features need one row per node")
        if self.labels is not None and len(self.labels) != n:
            raise InvalidInputError("labels need one radius per node")

    @property
    def n(self) -> int:
        return self.topology.n

    @property
    def label_array(self) -> np.ndarray:
        if self.labels is None:
            raise InvalidInputError(f"sample {self.id} is unlabeled")
        return self.labels.array

    def __eq__(self, other):
        if not isinstance(other, GraphSample):
            return NotImplemented
        return (
            self.id == other.id
            and self.topology == other.topology
            and np.array_equal(self.mp_adjacency, other.mp_adjacency)
            and np.array_equal(self.features, other.features)
            and self.labels == other.labels
        )


@dataclass
class Dataset:
    samples: list[GraphSample]
    area_bounds: tuple[float, float]
    seed: int
    oracle_config: dict | None = None
    adjacency_policy: AdjacencyPolicy = AdjacencyPolicy.COMPLETE

    def __post_init__(self):
        self.area_bounds = (float(self.area_bounds[0]), float(self.area_bounds[1]))
        self.adjacency_policy = AdjacencyPolicy(self.adjacency_policy)
        if [s.id for s in self.samples] != list(range(len(self.samples))):
            raise InvalidInputError("sample ids must be dense from 0 and in order")

    def __len__(self):
        return len(self.samples)

    def __getitem__(self, i) -> GraphSample:
        return self.samples[i]

    @property
    def is_labeled(self) -> bool:
        return all(s.labels is not None for s in self.samples)

    def subset(self, ids) -> list[GraphSample]:
        return [self.samples[i] for i in ids]

    # ------------------------------------------------------------------ io
    def save(self, path) -> None:
        header = {
            "kind": "header",
            "schema_version": SCHEMA_VERSION,
            "area_bounds": list(self.area_bounds),
            "seed": self.seed,
            "oracle_config": self.oracle_config,
            "adjacency_policy": self.adjacency_policy.value,
            "num_samples": len(self.samples),
        }
        lines = [json.dumps(header, sort_keys=True)]
        for s in self.samples:
            row = {
                "schema_version": SCHEMA_VERSION,
                "id": s.id,
                "positions": s.topology.positions.tolist(),
                "mp_adjacency": s.mp_adjacency.astype(int).tolist(),
                "features": s.features.tolist(),
                "labels": list(s.labels.radii) if s.labels is not None else None,
                "label_source": s.labels.source.value if s.labels is not None else None,
            }
            lines.append(json.dumps(row, sort_keys=True))
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "Dataset":
        lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
        if not lines:
            raise InvalidInputError(f"{path} is empty")
        header = json.loads(lines[0])
        if header.get("kind") != "header":
            raise InvalidInputError(f"{path}: first line must be the dataset header")
        _check_schema(header, path)
        samples = []
        for ln in lines[1:]:
            row = json.loads(ln)
            _check_schema(row, path)
            labels = None
            if row["labels"] is not None:
                labels = RadiusAssignment(tuple(row["labels"]), row.get("label_source") or "brute_force")
            samples.append(
                GraphSample(
                    id=row["id"],
                    topology=Topology(row["positions"]),
                    mp_adjacency=np.array(row["mp_adjacency"], dtype=bool),
                    features=np.array(row["features"], dtype=np.float64),
                    labels=labels,
                )
            )
        return cls(
            samples=samples,
            area_bounds=tuple(header["area_bounds"]),
            seed=header["seed"],
            oracle_config=header.get("oracle_config"),
            adjacency_policy=header.get("adjacency_policy", "complete"),
        )


def _check_schema(obj: dict, path) -> None:
    v = obj.get("schema_version")
    if v != SCHEMA_VERSION:
        raise InvalidInputError(f"{path}: unsupported schema_version {v!r}")


def _draw_positions(rng: np.random.Generator, n: int, bounds: tuple[float, float]) -> np.ndarray:
    w, h = bounds
    floor = MIN_SEPARATION * max(w, h)
    while True:
        pos = rng.random((n, 2)) * np.array([w, h])
        d = pairwise_distances(pos)
        if n == 1 or d[np.triu_indices(n, 1)].min() >= floor:
            return pos


def generate(
    num_graphs: int,
    nodes_per_graph: int,
    area_bounds=(100.0, 100.0),
    seed: int = 0,
    adjacency_policy: AdjacencyPolicy | str = AdjacencyPolicy.COMPLETE,
) -> Dataset:
    """Unlabeled dataset of uniformly placed nodes.

    Sample ``k`` is drawn from its own stream seeded by ``(seed, k)``, so any
    subset regenerates identically regardless of ``num_graphs``.
    """
    if num_graphs < 1 or nodes_per_graph < 2:
        raise InvalidInputError("need num_graphs >= 1 and nodes_per_graph >= 2")
    w, h = float(area_bounds[0]), float(area_bounds[1])
    if not (w > 0 and h > 0 and math.isfinite(w) and math.isfinite(h)):
        raise InvalidInputError(f"area bounds must be positive, got {area_bounds}")
    samples = []
    for k in range(num_graphs):
        rng = np.random.default_rng([seed, k])
        topo = Topology(_draw_positions(rng, nodes_per_graph, (w, h)))
        samples.append(
            GraphSample(
                id=k,
                topology=topo,
                mp_adjacency=message_passing_adjacency(topo, adjacency_policy),
                features=normalise_features(topo, (w, h)),
            )
        )
    return Dataset(samples, (w, h), seed, None, adjacency_policy)


def label(
    dataset: Dataset,
    oracle: str = "brute_force",
    area: AreaConfig | None = None,
    adjacency_policy: AdjacencyPolicy | str | None = None,
) -> Dataset:
    """Return a copy of ``dataset`` with oracle radii attached to every sample."""
    if oracle not in SOLVERS:
        raise ConfigError(f"unknown oracle {oracle!r}; choose from {sorted(SOLVERS)}")
    area = area or AreaConfig()
    policy = AdjacencyPolicy(adjacency_policy or dataset.adjacency_policy)
    if oracle == "brute_force":
        too_big = [s.id for s in dataset.samples if s.n > BRUTE_FORCE_MAX_NODES]
        if too_big:
            raise ConfigError(
                f"brute_force oracle handles at most {BRUTE_FORCE_MAX_NODES} nodes; "
                f"samples {too_big[:5]} exceed it (use local_search)"
            )
    solve = SOLVERS[oracle]
    samples = []
    for s in dataset.samples:
        labels = solve(s.topology, area)
        samples.append(
            replace(
                s,
                mp_adjacency=message_passing_adjacency(s.topology, policy),
                labels=labels,
            )
        )
    config = {
        "oracle": oracle,
        "area_method": area.method.value,
        "area_samples": area.samples,
        "area_seed": area.seed,
    }
    return Dataset(samples, dataset.area_bounds, dataset.seed, config, policy)


def labels_feasible(sample: GraphSample) -> bool:
    return is_connected(induced_adjacency(sample.topology, sample.label_array))


@dataclass(frozen=True)
class SplitSpec:
    train_ids: tuple[int, ...]
    test_ids: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "train_ids", tuple(int(i) for i in self.train_ids))
        object.__setattr__(self, "test_ids", tuple(int(i) for i in self.test_ids))
        if set(self.train_ids) & set(self.test_ids):
            raise InvalidInputError("train and test ids overlap")

    def to_json(self) -> dict:
        return {"train_ids": list(self.train_ids), "test_ids": list(self.test_ids)}

    @classmethod
    def from_json(cls, obj: dict) -> "SplitSpec":
        return cls(tuple(obj["train_ids"]), tuple(obj["test_ids"]))


@dataclass(frozen=True)
class PartitionSpec:
    worker_shards: tuple[tuple[int, ...], ...]
    shard_size: int

    def __post_init__(self):
        shards = tuple(tuple(int(i) for i in s) for s in self.worker_shards)
        object.__setattr__(self, "worker_shards", shards)
        seen = set()
        for s in shards:
            if len(s) != self.shard_size:
                raise InvalidInputError("every shard must have shard_size ids")
            if seen & set(s):
                raise InvalidInputError("shards overlap")
            seen |= set(s)

    @property
    def workers(self) -> int:
        return len(self.worker_shards)

    def to_json(self) -> dict:
        return {"shard_size": self.shard_size, "worker_shards": [list(s) for s in self.worker_shards]}

    @classmethod
    def from_json(cls, obj: dict) -> "PartitionSpec":
        return cls(tuple(tuple(s) for s in obj["worker_shards"]), obj["shard_size"])


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split(dataset: Dataset | int, train_fraction: float = 0.8, seed: int = 0) -> SplitSpec:
    total = dataset if isinstance(dataset, int) else len(dataset)
    if not 0 < train_fraction < 1:
        raise InvalidInputError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n_train = _round_half_up(train_fraction * total)
    if n_train == 0 or n_train == total:
        raise InvalidInputError(f"a {train_fraction} split of {total} samples leaves one side empty")
    perm = np.random.default_rng(seed).permutation(total)
    return SplitSpec(tuple(perm[:n_train]), tuple(perm[n_train:]))


def partition(split_spec: SplitSpec, workers: int, shard_size: int, seed: int = 0) -> PartitionSpec:
    if workers < 1 or shard_size < 1:
        raise InvalidInputError("workers and shard_size must be >= 1")
    if workers * shard_size > len(split_spec.train_ids):
        raise InvalidInputError(
            f"{workers} x {shard_size} shards need more than the {len(split_spec.train_ids)} train samples"
        )
    ids = np.array(split_spec.train_ids)
    ids = ids[np.random.default_rng(seed).permutation(len(ids))]
    shards = tuple(tuple(ids[k * shard_size : (k + 1) * shard_size]) for k in range(workers))
    return PartitionSpec(shards, shard_size)

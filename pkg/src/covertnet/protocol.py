"""Baseline multi-seed protocol shared by the acceptance tests and the scripts.

One labeled dataset (200 five-node graphs, seed 0) is reused across seeds;
each seed re-draws the 80/20 split, weight initialisation and worker shards.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import dataset as D
from .fedlearn import FedConfig, run_federated
from .gnn_models import TrainConfig, collate, get_model, pooled_errors, train_standalone
from .pruning import sparsity_sweep

SEEDS = (0, 1, 2, 3, 4)
SWEEP_LEVELS = (0.0, 0.1, 0.2, 0.3, 0.5, 0.7, 0.9)


def baseline_dataset(num_graphs: int = 200, nodes: int = 5, seed: int = 0) -> D.Dataset:
    return D.label(D.generate(num_graphs, nodes, (100.0, 100.0), seed))


@dataclass
class SeedResult:
    seed: int
    test_mae: dict[str, float] = field(default_factory=dict)
    test_medae: dict[str, float] = field(default_factory=dict)
    fed_test_mae: float | None = None
    fed_test_medae: float | None = None
    sweep: list[tuple[float, float]] = field(default_factory=list)  # (rho, test MAE)


def run_seed(
    ds: D.Dataset,
    seed: int,
    models=("mlp", "gcn2", "hybrid"),
    federated: bool = True,
    sweep_model: str | None = "hybrid",
    epochs: int = 1000,
    rounds: int = 150,
) -> SeedResult:
    sp = D.split(ds, 0.8, seed)
    tc = TrainConfig(epochs=epochs, seed=seed)
    out = SeedResult(seed)
    for name in models:
        spec = get_model(name)
        res = train_standalone(spec, ds, sp, tc, record_every=epochs or 1)
        test = collate(ds.subset(sp.test_ids), res.encoding)
        out.test_mae[name], out.test_medae[name] = pooled_errors(spec, res.params, test)
        if name == sweep_model:
            out.sweep = [(r.rho, r.test_mae) for r in sparsity_sweep(res.params, spec, test, SWEEP_LEVELS)]
    if federated:
        spec = get_model("hybrid")
        part = D.partition(sp, 6, 25, seed)
        fed = run_federated(FedConfig.from_train_config(spec, tc, workers=6, rounds=rounds), ds, sp, part)
        test = collate(ds.subset(sp.test_ids), fed.encoding)
        out.fed_test_mae, out.fed_test_medae = pooled_errors(spec, fed.params, test)
    return out


def mean_over(results: list[SeedResult], key) -> float:
    return float(np.mean([key(r) for r in results]))

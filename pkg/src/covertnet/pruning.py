"""One-shot magnitude pruning of trained weights, its acceptance gate, and sparsity sweeps."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .gnn_models import Batch, ModelSpec, pooled_errors
from .tensor_core import ParamSet

GLOBAL_RANK = "global_rank"
PER_LAYER = "per_layer"


def is_prunable(name: str) -> bool:
    return name.endswith(".weight")


@dataclass(frozen=True)
class PruneConfig:
    sparsity: float
    scope: str = GLOBAL_RANK
    loss_threshold: float = math.inf

    def __post_init__(self):
        if not 0.0 <= self.sparsity <= 1.0:
            raise InvalidInputError(f"sparsity must lie in [0, 1], got {self.sparsity}")
        if self.scope not in (GLOBAL_RANK, PER_LAYER):
            raise InvalidInputError(f"unknown pruning scope {self.scope!r}")
        if self.loss_threshold < 0:
            raise InvalidInputError("loss_threshold must be >= 0")


@dataclass
class PrunedModel:
    params: ParamSet
    mask: dict[str, np.ndarray]  # True where a weight was zeroed
    achieved_sparsity: float


def _count(x: float) -> int:
    return int(math.floor(x + 0.5))


def _ranked_entries(params: ParamSet, names: list[str]):
    """(name, flat index) pairs ordered by |w|, then name, then index."""
    mags, name_idx, flat_idx = [], [], []
    for k, name in enumerate(names):
        v = np.abs(params[name]).reshape(-1)
        mags.append(v)
        name_idx.append(np.full(v.size, k))
        flat_idx.append(np.arange(v.size))
    mags, name_idx, flat_idx = map(np.concatenate, (mags, name_idx, flat_idx))
    order = np.lexsort((flat_idx, name_idx, mags))
    return name_idx[order], flat_idx[order]


def prune_by_magnitude(params: ParamSet, config: PruneConfig) -> PrunedModel:
    """Zero the fraction ``config.sparsity`` of smallest-magnitude weight entries.

    Biases are never touched. Ties at the cutoff go to the lower parameter
    name (sorted) and then the lower flat index, so masks nest as sparsity grows.
    """
    names = sorted(k for k in params if is_prunable(k))
    out = params.copy()
    mask = {k: np.zeros(np.shape(params[k]), dtype=bool) for k in names}
    total = sum(params[k].size for k in names)
    if total == 0:
        return PrunedModel(out, mask, 0.0)
    groups = [names] if config.scope == GLOBAL_RANK else [[k] for k in names]
    zeroed = 0
    for group in groups:
        size = sum(params[k].size for k in group)
        n_prune = _count(config.sparsity * size)
        if n_prune == 0:
            continue
        name_idx, flat_idx = _ranked_entries(params, group)
        for k_local, i in zip(name_idx[:n_prune], flat_idx[:n_prune]):
            mask[group[k_local]].reshape(-1)[i] = True
        zeroed += n_prune
    for k in names:
        out[k] = np.where(mask[k], 0.0, params[k])
    return PrunedModel(out, mask, zeroed / total)


@dataclass(frozen=True)
class PruneReport:
    original_mae: float
    pruned_mae: float
    delta: float
    threshold: float
    accepted: bool
    achieved_sparsity: float


def validate_prune(
    original: ParamSet,
    pruned: PrunedModel,
    spec: ModelSpec,
    eval_batches: list[Batch],
    threshold: float,
) -> PruneReport:
    """Accept iff MAE(pruned) - MAE(original) <= threshold on the evaluation split."""
    if not eval_batches or not any(len(b.ids) for b in eval_batches):
        raise InvalidInputError("validate_prune needs a nonempty evaluation split")
    before, _ = pooled_errors(spec, original, eval_batches)
    after, _ = pooled_errors(spec, pruned.params, eval_batches)
    delta = after - before
    return PruneReport(before, after, delta, threshold, bool(delta <= threshold), pruned.achieved_sparsity)


@dataclass(frozen=True)
class SweepRow:
    rho: float
    test_mae: float
    test_medae: float
    achieved_sparsity: float


def sparsity_sweep(
    params: ParamSet,
    spec: ModelSpec,
    eval_batches: list[Batch],
    levels,
    scope: str = GLOBAL_RANK,
) -> list[SweepRow]:
    """Prune the same original weights independently at each level and evaluate."""
    rows = []
    for rho in levels:
        pruned = prune_by_magnitude(params, PruneConfig(float(rho), scope))
        m, md = pooled_errors(spec, pruned.params, eval_batches)
        rows.append(SweepRow(float(rho), m, md, pruned.achieved_sparsity))
    return rows


SWEEP_HEADER = ["rho", "test_mae", "test_medae", "achieved_sparsity"]


def sweep_to_csv(rows: list[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_HEADER)
    for r in rows:
        w.writerow([repr(r.rho), repr(r.test_mae), repr(r.test_medae), repr(r.achieved_sparsity)])
    return buf.getvalue()

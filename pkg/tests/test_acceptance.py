"""Acceptance criteria 1-10. Each test logs one PASS/FAIL line shown after the run."""

import math
import subprocess
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from covertnet import dataset as D
from covertnet import protocol as P
from covertnet.experiment import DatasetSection, ExperimentConfig, FederatedSection, PruneSection, TrainSection, run_experiment
from covertnet.fedlearn import FedConfig, run_federated
from covertnet.geometry import union_area_arrays
from covertnet.gnn_models import GraphEncoding, TrainConfig, collate, get_model, train_standalone
from covertnet.oracle import AreaConfig, assignment_area, brute_force_mast, mst, radii_from_tree
from covertnet.tensor_core import grad_check
from helpers import generic_params, projected_output_loss

TESTS = Path(__file__).parent


def record(log, k, ok, detail):
    line = f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    log[k] = line
    print(line)
    return ok


def test_c01_geometry_agreement(acceptance_log):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    hits = 0
    for case in range(100):
        n = 1 + case % 2
        centers = rng.uniform(0, 10, (n, 2))
        if n == 2:
            centers[1] = centers[0] + rng.uniform(-6, 6, 2)
        radii = rng.uniform(0.5, 5, n)
        exact = union_area_arrays(centers, radii, "exact").value
        mc = union_area_arrays(centers, radii, "monte_carlo", rng_seed=case, samples=10**6)
        hits += abs(mc.value - exact) <= 3 * mc.std_error
    grid_hits = 0
    for case in range(100):
        centers, radii = rng.uniform(0, 100, (5, 2)), rng.uniform(5, 40, 5)
        g = union_area_arrays(centers, radii, "grid", samples=1 << 16)
        mc = union_area_arrays(centers, radii, "monte_carlo", rng_seed=case, samples=10**5)
        grid_hits += abs(g.value - mc.value) <= 3 * math.hypot(g.std_error, mc.std_error)
    dt = time.perf_counter() - t0
    ok = hits >= 99 and grid_hits == 100 and dt < 60
    record(acceptance_log, 1, ok, f"MC vs exact {hits}/100 within 3 sigma; grid vs MC {grid_hits}/100; {dt:.1f}s")
    assert ok


def test_c02_oracle_dominance(acceptance_log):
    ds = D.generate(200, 5, (100.0, 100.0), seed=0)
    area = AreaConfig()
    never_worse = strictly = 0
    for s in ds.samples:
        b = assignment_area(s.topology, brute_force_mast(s.topology, area), area)
        m = assignment_area(s.topology, radii_from_tree(s.topology, mst(s.topology)), area)
        sigma = math.hypot(b.std_error, m.std_error)
        never_worse += b.value <= m.value + 3 * sigma
        strictly += b.value < m.value - 3 * sigma
    ok = never_worse == 200 and strictly >= 20
    record(acceptance_log, 2, ok, f"brute <= MST + 3 sigma in {never_worse}/200; smaller by > 3 sigma in {strictly}/200")
    assert ok


def test_c03_gradient_correctness(acceptance_log, small_labeled):
    batches = collate(small_labeled.samples[:3], GraphEncoding().resolve((100.0, 100.0)))
    worst, failures, kinks, checked = 0.0, [], 0, 0
    for name in ("mlp", "gcn2", "gcn3", "hybrid"):
        spec = get_model(name)
        for seed in range(10):
            rep = grad_check(projected_output_loss(spec, batches, seed), generic_params(spec, seed), tolerance=1e-4)
            worst = max(worst, rep.worst)
            kinks, checked = kinks + rep.kinks, checked + rep.checked
            if not rep.passed:
                failures.append((name, seed))
    ok = not failures
    record(acceptance_log, 3, ok, f"40 checks, max rel error {worst:.2e} (tol 1e-4), {kinks}/{checked} kink entries skipped")
    assert ok, failures


@pytest.fixture(scope="module")
def protocol_results():
    t0 = time.perf_counter()
    ds = P.baseline_dataset()
    results = [P.run_seed(ds, seed) for seed in P.SEEDS]
    return results, time.perf_counter() - t0


@pytest.mark.slow
def test_c04_table_ordering(acceptance_log, protocol_results):
    res, dt = protocol_results
    m = {k: P.mean_over(res, lambda r, k=k: r.test_mae[k]) for k in ("mlp", "gcn2", "hybrid")}
    reduction = 1 - m["gcn2"] / m["mlp"]
    ok = m["hybrid"] <= m["gcn2"] < m["mlp"] and reduction >= 0.3
    record(
        acceptance_log,
        4,
        ok,
        f"mean test MAE mlp {m['mlp']:.3f}, gcn2 {m['gcn2']:.3f}, hybrid {m['hybrid']:.3f}; "
        f"gcn2 {100 * reduction:.1f}% below mlp; protocol {dt:.0f}s",
    )
    assert ok


@pytest.mark.slow
def test_c05_hybrid_advantage(acceptance_log, protocol_results):
    res, _ = protocol_results
    h = P.mean_over(res, lambda r: r.test_mae["hybrid"])
    g = P.mean_over(res, lambda r: r.test_mae["gcn2"])
    wins = sum(r.test_mae["hybrid"] <= r.test_mae["gcn2"] for r in res)
    ok = h <= g
    record(acceptance_log, 5, ok, f"hybrid {h:.3f} vs gcn2 {g:.3f} (hybrid ahead on {wins}/5 seeds)")
    assert ok


@pytest.mark.slow
def test_c06_federated_viability(acceptance_log, protocol_results):
    res, _ = protocol_results
    fl = P.mean_over(res, lambda r: r.fed_test_medae)
    solo = P.mean_over(res, lambda r: r.test_medae["hybrid"])
    ratio = fl / solo
    ok = ratio <= 1.2
    record(acceptance_log, 6, ok, f"MedAE FL {fl:.3f} vs standalone {solo:.3f}, ratio {ratio:.3f} (gate 1.2)")
    assert ok


def test_c07_single_worker_equivalence(acceptance_log, small_labeled):
    sp = D.split(small_labeled, 0.8, 0)
    part = D.partition(sp, 1, len(sp.train_ids), 0)
    spec = get_model("hybrid")
    worst = 0.0
    for optimizer, policy in (("adam", "persist"), ("sgd", "reset")):
        tc = TrainConfig(epochs=50, seed=1, optimizer=optimizer)
        solo = train_standalone(spec, small_labeled, sp, tc)
        fc = FedConfig.from_train_config(spec, tc, workers=1, rounds=10, local_epochs_per_round=5, optimizer_state_policy=policy)
        fed = run_federated(fc, small_labeled, sp, part)
        worst = max(worst, max(float(np.max(np.abs(fed.params[k] - solo.params[k]))) for k in solo.params))
    ok = worst <= 1e-9
    record(acceptance_log, 7, ok, f"K=1 vs standalone max |delta param| {worst:.1e} (tol 1e-9)")
    assert ok


@pytest.mark.slow
def test_c08_pruning_stability(acceptance_log, protocol_results):
    res, _ = protocol_results
    curve = {rho: P.mean_over(res, lambda r, rho=rho: dict(r.sweep)[rho]) for rho in P.SWEEP_LEVELS}
    r3, r9 = curve[0.3] / curve[0.0], curve[0.9] / curve[0.0]
    ok = r3 <= 1.2 and r9 > 1.2
    shape = ", ".join(f"{rho:g}:{v:.2f}" for rho, v in curve.items())
    record(acceptance_log, 8, ok, f"MAE ratio at rho=0.3 {r3:.3f} (<=1.2), rho=0.9 {r9:.3f} (>1.2); curve {shape}")
    assert ok


def tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_c09_determinism(acceptance_log, tmp_path):
    base = ExperimentConfig(
        name="det",
        dataset=DatasetSection(num_graphs=40),
        train=TrainSection(epochs=60),
        prune=PruneSection(levels=(0.0, 0.3, 0.9), sparsity=0.3, loss_threshold=1.0),
        federated=FederatedSection(workers=3, shard_size=8, rounds=5, local_epochs_per_round=3),
    )
    same, total = 0, 0
    for mode in ("standalone", "federated"):
        cfg = replace(base, mode=mode, name=f"det-{mode}")
        a = tree_bytes(run_experiment(replace(cfg, output_dir=str(tmp_path / "a"))).run_dir)
        b = tree_bytes(run_experiment(replace(cfg, output_dir=str(tmp_path / "b"))).run_dir)
        total += len(a)
        same += sum(a[k] == b.get(k) for k in a) if a.keys() == b.keys() else 0
    ok = same == total
    record(acceptance_log, 9, ok, f"{same}/{total} output files byte-identical across reruns")
    assert ok


PROPERTY_TESTS = [
    "test_gnn_models.py::test_permutation_equivariance",
    "test_tensor_core.py::test_softmax_rows_are_distributions_and_shift_invariant",
    "test_fedlearn.py::test_aggregate_examples",
    "test_fedlearn.py::test_aggregate_permutation_invariant",
    "test_pruning.py::test_masks_nest",
    "test_oracle.py::test_repair_properties",
    "test_dataset.py::test_round_trip",
    "test_tensor_core.py::test_paramset_json_round_trip_is_bit_exact",
]


def test_c10_property_suites(acceptance_log):
    ids = [str(TESTS / t) for t in PROPERTY_TESTS]
    proc = subprocess.run(
        [sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *ids],
        capture_output=True,
        text=True,
        cwd=TESTS.parent,
    )
    summary = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr.strip()[-200:]
    ok = proc.returncode == 0
    record(acceptance_log, 10, ok, f"key property tests re-run: {summary}")
    assert ok, proc.stdout[-2000:]

"""Acceptance gate: end-to-end guarantees of the finished detector.

Every test here pins one externally checkable property of the package as a
whole — exact invertibility at full size, change-of-variables correctness
against finite-difference Jacobians, analytic gradients against numeric
ones, closed-form behavior of the identity configuration, detection quality
and robustness on the synthetic walker benchmark, the parameter budget, the
ranking metric, and bit-level determinism of the command-line pipeline.
Tolerances and time limits are pinned; loosening them is not a fix.
"""

import json
import math
import os
import time

import numpy as np
import pytest

from oracles import assert_close_grad, fd_jacobian, numeric_gradient, pairwise_auc
from skelflow.attention import DualAttention, dual_attention
from skelflow.cli import main
from skelflow.config import ExperimentConfig
from skelflow.experiments import (
    make_benchmark,
    param_audit,
    run_contamination,
    run_noise_robustness,
    run_zero_training,
    train_and_eval,
)
from skelflow.flow import FlowModel, log_prob, nll_loss
from skelflow.graph import build_graph
from skelflow.rng import Rng
from skelflow.scoring import micro_auc
from skelflow.tensor import Tensor, backward, no_grad
from skelflow.train import build_model


def randomize(model, seed, std=0.25):
    """Random parameters everywhere, including the normally-zero projections."""
    rng = np.random.default_rng(seed)
    for name, p in model.parameters():
        if name.endswith("mixer.q"):
            p.data = p.data + 0.2 * rng.standard_normal(p.shape)
        else:
            p.data = std * rng.standard_normal(p.shape)
    for step in model.steps:
        step.actnorm.initialized = True
    return model


# -- shared benchmark run ---------------------------------------------------------
#
# One model is trained once per test session on the synthetic walker benchmark
# (batch 32 so the fixed learning rate gets enough optimizer steps) and shared
# by the detection-quality and robustness tests below.

BENCH = ExperimentConfig(batch_size=32)


@pytest.fixture(scope="module")
def benchmark():
    return make_benchmark(BENCH)


@pytest.fixture(scope="module")
def trained(benchmark):
    train_ds, test_ds, _ = benchmark
    start = time.perf_counter()
    result, ev = train_and_eval(BENCH, train_ds, test_ds)
    elapsed = time.perf_counter() - start
    return result, ev, elapsed


# -- invertibility and change of variables ----------------------------------------

def test_roundtrip_recovers_inputs_to_1em9_at_full_size():
    # Randomly parameterized full-size model; 1000 segments, both directions.
    model = randomize(FlowModel.create(build_graph(18), rng=Rng(11)), seed=101)
    x = np.random.default_rng(7).standard_normal((1000, 2, 24, 18))
    start = time.perf_counter()
    with no_grad():
        z, ld_fwd = model.forward(Tensor(x))
    x_back, ld_inv = model.inverse(z.data)
    elapsed = time.perf_counter() - start
    assert np.abs(x_back - x).max() < 1e-9
    assert np.abs(ld_fwd.data + ld_inv).max() < 1e-9
    assert elapsed < 10.0, f"roundtrip took {elapsed:.1f}s"


def test_logdet_matches_numeric_jacobian_on_twenty_models():
    # 12-dimensional inputs keep the finite-difference Jacobian exact enough
    # for a 1e-5 relative comparison of log|det|.
    graph = build_graph(2, [(0, 1)])
    start = time.perf_counter()
    for trial in range(20):
        model = randomize(
            FlowModel.create(graph, flow_steps=2, rng=Rng(300 + trial)),
            seed=600 + trial)
        x0 = np.random.default_rng(900 + trial).standard_normal(12)

        def f(flat):
            with no_grad():
                z, _ = model.forward(Tensor(flat.reshape(1, 2, 3, 2)))
            return z.data.reshape(-1)

        jac = fd_jacobian(f, x0.copy())
        _, ld_numeric = np.linalg.slogdet(jac)
        with no_grad():
            _, ld = model.forward(Tensor(x0.reshape(1, 2, 3, 2)))
        rel = abs(float(ld.data[0]) - ld_numeric) / max(1.0, abs(ld_numeric))
        assert rel < 1e-5, f"trial {trial}: rel logdet error {rel:.2e}"
    elapsed = time.perf_counter() - start
    assert elapsed < 30.0, f"jacobian sweep took {elapsed:.1f}s"


def test_loss_gradients_match_finite_differences_for_every_parameter():
    graph = build_graph(2, [(0, 1)])
    model = randomize(FlowModel.create(graph, flow_steps=2, rng=Rng(5)), seed=55)
    x = np.random.default_rng(13).standard_normal((2, 2, 3, 2))

    start = time.perf_counter()
    model.zero_grad()
    loss = nll_loss(model, Tensor(x), training=False)
    backward(loss)

    checked = 0
    for name, p in model.parameters():
        analytic = p.grad.copy()

        def f(val, p=p):
            keep = p.data
            p.data = val.reshape(keep.shape)
            with no_grad():
                out = float(nll_loss(model, Tensor(x), training=False).data)
            p.data = keep
            return out

        numeric = numeric_gradient(f, p.data.copy().reshape(-1))
        assert_close_grad(analytic.reshape(-1), numeric, rtol=1e-4, atol=1e-7)
        checked += p.data.size
    elapsed = time.perf_counter() - start
    assert checked == 128  # every parameter of the 2-step model was covered
    assert elapsed < 60.0, f"gradient check took {elapsed:.1f}s"


# -- closed-form behavior ----------------------------------------------------------

def test_identity_model_log_prob_is_the_prior_density():
    model = FlowModel.create(build_graph(18), identity=True)
    x = np.random.default_rng(3).standard_normal((5, 2, 24, 18))
    d = 2 * 24 * 18
    expected = (-0.5 * ((x - 3.0) ** 2).sum(axis=(1, 2, 3))
                - 0.5 * d * math.log(2.0 * math.pi))
    got = log_prob(model, Tensor(x)).data
    assert np.abs(got - expected).max() <= 1e-12 * max(1.0, np.abs(expected).max())


def test_zero_kernel_attention_scales_input_by_exactly_1p5():
    # Both gates sigmoid(0) = 0.5, and the module adds the gated residual, so
    # the untrained module multiplies by exactly 1.5 — bit for bit.
    att = DualAttention()
    x = np.random.default_rng(8).standard_normal((2, 2, 24, 18))
    y = dual_attention(att, Tensor(x))
    assert y.data.tobytes() == (1.5 * x).tobytes()


# -- detection quality on the synthetic benchmark ---------------------------------

def test_trained_detector_reaches_090_frame_auc_within_three_minutes(trained):
    result, ev, elapsed = trained
    assert len(result.epoch_losses) == BENCH.epochs
    assert ev.auc >= 0.90, f"frame AUC {ev.auc:.4f}"
    assert elapsed < 180.0, f"train+eval took {elapsed:.1f}s"


def test_untrained_models_average_above_060_auc_over_100_trials(benchmark):
    train_ds, test_ds, _ = benchmark
    start = time.perf_counter()
    stats = run_zero_training(BENCH, 100, train_ds, test_ds)
    elapsed = time.perf_counter() - start
    assert stats["trials"] == 100 and len(stats["aucs"]) == 100
    assert stats["mean_auc"] >= 0.60, f"mean AUC {stats['mean_auc']:.4f}"
    assert stats["min_auc"] <= stats["mean_auc"] <= stats["max_auc"]
    assert elapsed < 300.0, f"100 untrained trials took {elapsed:.1f}s"


def test_keypoint_noise_at_5pct_of_frame_costs_at_most_5_auc_points(benchmark, trained):
    train_ds, test_ds, _ = benchmark
    rows = run_noise_robustness(BENCH, [0.0, 0.05], train_ds, test_ds)
    _, ev, _ = trained
    # the zero-noise branch must reproduce the clean evaluation bit for bit
    assert rows[0]["drop"] == 0.0
    clean = np.array([r.score for r in ev.rows])
    replay = np.array([r.score for r in rows[0]["rows"]])
    assert np.array_equal(clean, replay)
    assert rows[1]["drop"] <= 0.05, f"noise drop {rows[1]['drop']:.4f}"


def test_5pct_training_contamination_costs_at_most_5_auc_points(benchmark):
    train_ds, test_ds, pool_ds = benchmark
    rows = run_contamination(BENCH, [0.0, 0.05], train_ds, test_ds, pool_ds)
    assert rows[0]["drop"] == 0.0 and rows[0]["replaced"] == 0
    assert rows[1]["replaced"] == int(0.05 * len(train_ds.segments))
    assert rows[1]["drop"] <= 0.05, f"contamination drop {rows[1]['drop']:.4f}"


# -- parameter budget ---------------------------------------------------------------

def test_parameter_count_is_within_15pct_of_the_reference_budget():
    model = build_model(BENCH)
    rows, total = param_audit(model)
    reference = 488
    assert 0.85 * reference <= total <= 1.15 * reference, f"total {total}"
    assert total == sum(r["count"] for r in rows)
    # every step carries the same layer inventory
    per_step = {}
    for r in rows:
        step, name = r["name"].split(".", 1)
        per_step.setdefault(step, {})[name] = r["count"]
    assert len(per_step) == BENCH.flow_steps
    inventories = list(per_step.values())
    assert all(inv == inventories[0] for inv in inventories)
    for needed in ("actnorm.bias", "mixer.q", "projection.weight"):
        assert needed in inventories[0]


# -- ranking metric -----------------------------------------------------------------

def test_auc_equals_exhaustive_pairwise_comparison_on_200_instances():
    rng = np.random.default_rng(23)
    for trial in range(200):
        n = int(rng.integers(2, 40))
        labels = rng.integers(0, 2, n)
        if labels.min() == labels.max():      # force both classes
            labels[0] = 1 - labels[0]
        if trial % 2:
            scores = rng.integers(0, 6, n) * 0.5   # heavy ties
        else:
            scores = rng.standard_normal(n)
        got = micro_auc(scores, labels)
        want = pairwise_auc(np.asarray(scores, dtype=np.float64), labels)
        assert abs(got - want) < 1e-12, f"trial {trial}: {got} vs {want}"


# -- command-line determinism --------------------------------------------------------

def test_cli_train_and_eval_are_byte_identical_across_reruns(tmp_path):
    out = tmp_path / "out"
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps({"batch_size": 32, "out_dir": str(out)}))

    tracked = ["model.json", "loss.csv", "frames.csv", "roc.csv", "metrics.json"]

    def run_and_snapshot():
        assert main(["train", "--config", str(cfg_path)]) == 0
        assert main(["eval", "--config", str(cfg_path)]) == 0
        return {name: (out / name).read_bytes() for name in tracked}

    first = run_and_snapshot()
    second = run_and_snapshot()
    for name in tracked:
        assert first[name] == second[name], f"{name} changed between reruns"

    metrics = json.loads(first["metrics.json"])
    assert metrics["micro_auc"] >= 0.90
    assert os.path.exists(out / "model.json")

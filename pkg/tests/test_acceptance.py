"""Acceptance suite: every criterion runs standalone at its stated
tolerance and prints one pass/fail line (run with ``pytest -v -s``)."""

import itertools
import json
import time

import numpy as np
import pytest

from comodal.align import AlignConfig
from comodal.cli import main as cli_main
from comodal.config import RunConfig, colearn_run_config, fusion_run_config
from comodal.evaluation import (
    concept_similarity_gap,
    eval_colearning,
    eval_retrieval,
    fusion_experiment,
    metrics_bruteforce_oracle,
    retrieval_metrics,
    similarity_matrix,
)
from comodal.gradcheck import GRAD_TOLERANCE, gradient_check_suite
from comodal.model import init_model
from comodal.rng import rng_fork
from comodal.trainer import TrainConfig, run_training, split_heldout
from comodal.world import (
    UnitSet,
    WorldConfig,
    build_world,
    manifest,
    oracle_pair_score,
    sample_datasets,
    syntax_validity,
)

from conftest import manual_world
from test_world import enumerated_validity


def report(criterion: int, name: str, detail: str) -> None:
    print(f"\nACCEPTANCE {criterion} ({name}): PASS  [{detail}]")


@pytest.fixture(scope="module")
def default_run():
    """The default retrieval run shared by criteria 3, 6, and 7."""
    run = RunConfig()
    world = build_world(run.world, rng_fork(0, "world"))
    data = sample_datasets(
        world, (run.datasets.n1, run.datasets.n2, run.datasets.n3), rng_fork(0, "data")
    )
    model0 = init_model(world.vocab_sizes, run.encoder.dims(), world.num_classes,
                        rng_fork(0, "init"))
    start = time.perf_counter()
    trained, trace = run_training(data, model0, run.train)
    elapsed = time.perf_counter() - start
    _, heldout = split_heldout(data, run.train.heldout_fraction)
    return {
        "run": run,
        "world": world,
        "data": data,
        "model0": model0,
        "trained": trained,
        "trace": trace,
        "heldout_pool": heldout.d3,
        "train_seconds": elapsed,
    }


def test_criterion_1_gradient_correctness():
    start = time.perf_counter()
    results = gradient_check_suite(seed=0, num_seeds=20, eps=1e-4)
    elapsed = time.perf_counter() - start
    worst = max(results.values())
    assert worst <= GRAD_TOLERANCE, results
    assert elapsed < 30.0, f"gradient suite took {elapsed:.1f}s"
    report(1, "gradient correctness",
           f"max rel err {worst:.2e} over 20 seeds x {len(results)} paths in {elapsed:.1f}s")


def test_criterion_2_metric_oracle_equivalence(tiny_world):
    checked = 0
    for seed in range(50):
        rng = rng_fork(seed, "matrices")
        values = rng.uniform_array(900)
        if seed % 2:
            values = np.round(values * 6) / 6  # force score ties
        s = values.reshape(30, 30)
        recall, mean_rank = retrieval_metrics(s, (1, 5, 10, 30))
        oracle = metrics_bruteforce_oracle(s, (1, 5, 10, 30))
        assert recall == oracle.recall_at
        assert mean_rank == oracle.mean_rank
        checked += 1

    from comodal.encoders import encode

    model = init_model(tiny_world.vocab_sizes, (6, 8, 6), tiny_world.num_classes,
                       rng_fork(1, "init"))
    pool = sample_datasets(tiny_world, (0, 0, 30), rng_fork(2, "d")).d3
    rep = eval_retrieval(model, pool, (1,))
    direct = float(np.mean([
        1.0 - float(np.asarray(encode(model.enc1, x1), np.float64)
                    @ np.asarray(encode(model.enc2, x2), np.float64))
        for x1, x2 in pool
    ]))
    assert abs(rep.cosine_loss - direct) <= 1e-6
    report(2, "metric-oracle equivalence",
           f"{checked} random 30x30 matrices exact; cosine delta {abs(rep.cosine_loss - direct):.1e}")


def test_criterion_3_retrieval_learning(default_run):
    pool = default_run["heldout_pool"]
    assert len(pool) == 200
    trained_rep = eval_retrieval(default_run["trained"], pool, (1, 5, 10))
    untrained_rep = eval_retrieval(default_run["model0"], pool, (1, 5, 10))
    assert trained_rep.recall_at[1] >= 0.20, trained_rep.recall_at
    assert trained_rep.mean_rank <= 20.0, trained_rep.mean_rank
    assert untrained_rep.recall_at[1] <= 0.02, untrained_rep.recall_at
    assert default_run["train_seconds"] <= 120.0
    report(3, "retrieval learning",
           f"R@1 {trained_rep.recall_at[1]:.2f} mean_rank {trained_rep.mean_rank:.1f} "
           f"vs untrained R@1 {untrained_rep.recall_at[1]:.3f}; "
           f"train {default_run['train_seconds']:.0f}s")


def test_criterion_4_fusion_ordering():
    rep = fusion_experiment(fusion_run_config(0), num_seeds=5)
    a = rep.accuracy
    assert a["m1_mean"] >= a["unimodal_m1_mean"], a
    assert a["m2_mean"] >= a["unimodal_m2_mean"], a
    joint_mean = (a["m1_mean"] + a["m2_mean"]) / 2
    uni_mean = (a["unimodal_m1_mean"] + a["unimodal_m2_mean"]) / 2
    gap = joint_mean - uni_mean
    assert gap >= 0.02, f"mean gap {100 * gap:.2f} points"
    report(4, "fusion ordering",
           f"joint {a['m1_mean']:.3f}/{a['m2_mean']:.3f} vs unimodal "
           f"{a['unimodal_m1_mean']:.3f}/{a['unimodal_m2_mean']:.3f}; gap {100 * gap:.1f}pt over 5 seeds")


def test_criterion_5_colearning_ordering():
    run = colearn_run_config(0)
    world = build_world(run.world, rng_fork(run.train.seed, "world"))
    start = time.perf_counter()
    rep = eval_colearning(world, run.eval.colearn, run)
    elapsed = time.perf_counter() - start
    a = rep.accuracy
    wins = sum(
        a[f"joint_k{k}_mean"] >= a[f"unimodal_k{k}_mean"] for k in run.eval.colearn.shots
    )
    assert wins >= 2, a
    assert a["oracle_mean"] >= a["unimodal_k10_mean"], a
    assert elapsed <= 600.0, f"co-learning took {elapsed:.0f}s"
    detail = " ".join(
        f"k={k}:{a[f'joint_k{k}_mean']:.3f}>={a[f'unimodal_k{k}_mean']:.3f}"
        for k in run.eval.colearn.shots
    )
    report(5, "co-learning ordering",
           f"{detail}; oracle {a['oracle_mean']:.3f}; {wins}/3 wins in {elapsed:.0f}s")


def test_criterion_6_training_contract(default_run, tiny_world):
    data = sample_datasets(tiny_world, (60, 60, 60), rng_fork(3, "d"))
    model0 = init_model(tiny_world.vocab_sizes, (6, 8, 6), tiny_world.num_classes,
                        rng_fork(3, "init"))
    frozen, _ = run_training(
        data, model0, TrainConfig(iterations=0, align=AlignConfig(n_neg=3), seed=3)
    )
    assert all(
        a.tobytes() == b.tobytes()
        for (_, a), (_, b) in zip(frozen.tensors(), model0.tensors())
    )
    zero_lr, _ = run_training(
        data, model0,
        TrainConfig(iterations=100, learning_rate=0.0, align=AlignConfig(n_neg=3),
                    seed=3, eval_every=50),
    )
    assert all(
        a.tobytes() == b.tobytes()
        for (_, a), (_, b) in zip(zero_lr.tensors(), model0.tensors())
    )
    trace = default_run["trace"]
    assert trace.final_heldout < trace.initial_heldout, (
        trace.initial_heldout, trace.final_heldout
    )
    report(6, "training contract",
           f"iter=0 and lr=0 bit-identical; heldout L_align "
           f"{trace.initial_heldout:.3f} -> {trace.final_heldout:.3f} (seed 0)")


def test_criterion_7_smoothness(default_run):
    shared, disjoint = concept_similarity_gap(
        default_run["trained"], default_run["world"], 80, rng_fork(0, "smoothness")
    )
    gap = shared - disjoint
    assert gap >= 0.1, (shared, disjoint)
    report(7, "smoothness", f"shared-concept sim {shared:.3f} vs disjoint {disjoint:.3f}; gap {gap:.3f}")


SMALL_PIPELINE_CONFIG = {
    "world": {"num_concepts": 4, "vocab_size1": 16, "vocab_size2": 16, "num_classes": 4,
              "noise_rate": 0.05},
    "datasets": {"n1": 80, "n2": 80, "n3": 120, "n1_test": 40, "n2_test": 40, "n3_test": 20},
    "encoder": {"embed_dim": 8, "hidden_dim": 12, "output_dim": 8},
    "align": {"n_neg": 4},
    "train": {"iterations": 60, "batch_align": 8, "batch_1": 8, "batch_2": 8,
              "eval_every": 20, "seed": 11},
    "eval": {"recall_ks": [1, 5]},
}


def test_criterion_8_determinism(tmp_path, capsys):
    config = tmp_path / "config.json"
    config.write_text(json.dumps(SMALL_PIPELINE_CONFIG))

    artifacts = []
    for tag in ("a", "b"):
        data = tmp_path / f"data-{tag}"
        ckpt = tmp_path / f"model-{tag}.ckpt"
        out = tmp_path / f"report-{tag}.json"
        assert cli_main(["gen", "--config", str(config), "--out", str(data)]) == 0
        assert cli_main(["train", "--config", str(config), "--data", str(data),
                         "--out", str(ckpt)]) == 0
        assert cli_main(["eval", "--task", "retrieval", "--model", str(ckpt),
                         "--data", str(data), "--out", str(out)]) == 0
        artifacts.append((ckpt.read_bytes(), out.read_bytes(),
                          [(data / n).read_bytes() for n in
                           ("world.json", "d1.jsonl", "d2.jsonl", "d3.jsonl")]))
    capsys.readouterr()
    assert artifacts[0][0] == artifacts[1][0], "checkpoints differ"
    assert artifacts[0][1] == artifacts[1][1], "metric reports differ"
    assert artifacts[0][2] == artifacts[1][2], "dataset files differ"
    report(8, "determinism",
           f"two pipeline runs byte-identical ({len(artifacts[0][0])} ckpt bytes)")


def test_criterion_9_synthetic_world_oracles(default_run):
    # syntax validity vs exhaustive enumeration on small worlds
    checked = 0
    for seed in range(3):
        cfg = WorldConfig(
            num_concepts=4, vocab_size1=16, vocab_size2=20, num_classes=4,
            noise_rate=0.15 if seed else 0.0, support_overlap=0.3 if seed == 2 else 0.0,
        )
        world = build_world(cfg, rng_fork(seed, "world"))
        rng = rng_fork(seed, "sets")
        for modality in (1, 2):
            vocab = world.vocab_size(modality)
            a = UnitSet(modality, frozenset(rng.randint(vocab) for _ in range(6)))
            b = UnitSet(modality, frozenset(rng.randint(vocab) for _ in range(6)))
            got = syntax_validity(world, a, b)
            want = enumerated_validity(world, a, b)
            assert got == pytest.approx(want, abs=1e-9)
            checked += 1

    # every sampled paired example shares its full latent concept set
    data = default_run["data"]
    assert all(oracle_pair_score(x1, x2) == 1.0 for x1, x2 in data.d3)

    # manifestation frequencies match the declared distribution
    world = manual_world(
        supports1=[[1, 4, 6, 9]], probs1=[[0.4, 0.3, 0.2, 0.1]],
        supports2=[[0]], probs2=[[1.0]],
        template=[(0,)], slot_noise1=[0.0], slot_noise2=[0.0], vocab1=12, vocab2=12,
    )
    rng = rng_fork(4, "freq")
    draws = [manifest(world, 0, 1, rng) for _ in range(10000)]
    worst = 0.0
    for unit, p in zip((1, 4, 6, 9), (0.4, 0.3, 0.2, 0.1)):
        worst = max(worst, abs(draws.count(unit) / 10000 - p))
    assert worst <= 0.02
    report(9, "synthetic-world oracles",
           f"{checked} validity checks exact; {len(data.d3)} pairs at overlap 1.0; "
           f"manifest freq worst delta {worst:.3f}")

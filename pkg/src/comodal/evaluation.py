"""Experiment harness: fusion, alignment/retrieval, and co-learning
protocols with their matched baselines and metric reports.

Retrieval ranks follow the deterministic tie rule used everywhere in the
package: a candidate outranks the true match only with a strictly greater
score, or an equal score at a lower index. ``metrics_bruteforce_oracle``
recomputes recall/rank by a full per-row sort, independent of the counting
path in :func:`retrieval_metrics`.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .config import ColearnConfig, RunConfig
from .decoders import ClassifierParams, init_classifier, predict_batch
from .encoders import EncoderParams, encode_batch, init_encoder
from .errors import DataError, DimensionError
from .model import AlignmentModel, init_model
from .rng import RngStream, rng_fork
from .trainer import TrainConfig, _Updater, _align_step, _classify_step, run_training, split_heldout
from .world import ConceptWorld, DatasetTriple, ModalityInstance, compose_instance, sample_datasets

TASKS = ("fusion", "retrieval", "colearn")


@dataclass
class MetricReport:
    task: str
    config_fingerprint: str = ""
    seeds: list[int] = field(default_factory=list)
    accuracy: dict[str, float] | None = None
    recall_at: dict[int, float] | None = None
    mean_rank: float | None = None
    cosine_loss: float | None = None
    baselines: dict[str, dict] | None = None
    per_seed: list[dict] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        metrics: dict = {}
        if self.accuracy is not None:
            metrics["accuracy"] = {k: float(v) for k, v in self.accuracy.items()}
        if self.recall_at is not None:
            metrics["recall_at"] = {str(k): float(v) for k, v in self.recall_at.items()}
        if self.mean_rank is not None:
            metrics["mean_rank"] = float(self.mean_rank)
        if self.cosine_loss is not None:
            metrics["cosine_loss"] = float(self.cosine_loss)
        if self.baselines is not None:
            metrics["baselines"] = self.baselines
        return {
            "task": self.task,
            "config_fingerprint": self.config_fingerprint,
            "metrics": metrics,
            "seeds": list(self.seeds),
            "per_seed": self.per_seed,
        }


def _mean_std(values: list[float]) -> tuple[float, float]:
    """Population mean and standard deviation."""
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def encode_pool(encoder: EncoderParams, instances) -> np.ndarray:
    emb, _ = encode_batch(encoder, list(instances))
    return np.asarray(emb, dtype=np.float64)


def accuracy_on(encoder: EncoderParams, classifier: ClassifierParams, labeled) -> float:
    if not labeled:
        raise DataError("empty test set")
    emb = encode_pool(encoder, [x for x, _ in labeled])
    preds = predict_batch(classifier, emb)
    labels = np.asarray([y for _, y in labeled])
    return float(np.mean(preds == labels))


def similarity_matrix(model: AlignmentModel, pairs) -> np.ndarray:
    """S[i, j] = similarity(e1(x1_i), e2(x2_j)); truth on the diagonal."""
    e1 = encode_pool(model.enc1, [p[0] for p in pairs])
    e2 = encode_pool(model.enc2, [p[1] for p in pairs])
    return e1 @ e2.T


def retrieval_ranks(sim_matrix: np.ndarray) -> np.ndarray:
    """Integer rank of the diagonal entry per row: 1 + strictly-greater
    scores + equal scores at lower candidate indices."""
    s = np.asarray(sim_matrix)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise DimensionError(f"similarity matrix must be square, got {s.shape}")
    n = s.shape[0]
    cols = np.arange(n)
    ranks = np.empty(n, dtype=np.int64)
    for i in range(n):
        truth = s[i, i]
        ranks[i] = 1 + int(np.sum(s[i] > truth)) + int(np.sum((s[i] == truth) & (cols < i)))
    return ranks


def retrieval_metrics(sim_matrix: np.ndarray, ks) -> tuple[dict[int, float], float]:
    n = sim_matrix.shape[0]
    if max(ks) > n:
        raise DataError(f"pool of {n} smaller than max k={max(ks)}")
    ranks = retrieval_ranks(sim_matrix)
    recall = {int(k): float(np.mean(ranks <= k)) for k in ks}
    return recall, float(ranks.mean())


def metrics_bruteforce_oracle(sim_matrix: np.ndarray, ks) -> MetricReport:
    """Independent recall/rank computation by full sort per row."""
    s = np.asarray(sim_matrix, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise DimensionError(f"similarity matrix must be square, got {s.shape}")
    n = s.shape[0]
    if max(ks) > n:
        raise DataError(f"pool of {n} smaller than max k={max(ks)}")
    ranks = []
    for i in range(n):
        order = sorted(range(n), key=lambda j: (-s[i, j], j))
        ranks.append(order.index(i) + 1)
    recall = {int(k): sum(1 for r in ranks if r <= k) / n for k in ks}
    return MetricReport(
        task="retrieval",
        recall_at=recall,
        mean_rank=sum(ranks) / n,
    )


def eval_retrieval(
    model: AlignmentModel, d3_test, ks, config_fingerprint: str = "", seed: int | None = None
) -> MetricReport:
    """Rank every test query against the full test pool; report recall@k,
    mean rank, and the mean paired cosine loss (1 - similarity)."""
    if len(d3_test) < max(ks):
        raise DataError(f"pool of {len(d3_test)} smaller than max k={max(ks)}")
    s = similarity_matrix(model, d3_test)
    recall, mean_rank = retrieval_metrics(s, ks)
    cosine_loss = float(np.mean(1.0 - np.diag(s)))
    return MetricReport(
        task="retrieval",
        config_fingerprint=config_fingerprint,
        seeds=[seed] if seed is not None else [],
        recall_at=recall,
        mean_rank=mean_rank,
        cosine_loss=cosine_loss,
    )


@dataclass
class UnimodalBaseline:
    """Separate per-modality encoders and classifiers, no alignment."""

    enc1: EncoderParams
    clf1: ClassifierParams
    enc2: EncoderParams
    clf2: ClassifierParams


def train_unimodal(datasets: DatasetTriple, run: RunConfig) -> UnimodalBaseline:
    """Train the no-alignment baseline under the joint model's budgets:
    same initialization streams, same split, same iteration count, batch
    sizes, and learning rate; one classification step per modality per
    iteration and no use of the paired set."""
    cfg = run.train
    train, _ = split_heldout(datasets, cfg.heldout_fraction)
    if not train.d1 or not train.d2:
        raise DataError("both labeled training sets must be non-empty")
    init = rng_fork(cfg.seed, "init")
    dims = run.encoder.dims()
    enc1 = init_encoder(run.world.vocab_size1, dims, init.fork("enc1"), modality=1)
    enc2 = init_encoder(run.world.vocab_size2, dims, init.fork("enc2"), modality=2)
    clf1 = init_classifier(dims[2], run.world.num_classes, init.fork("clf"))
    clf2 = init_classifier(dims[2], run.world.num_classes, init.fork("clf"))
    rng = rng_fork(cfg.seed, "train-unimodal")
    updater = _Updater(cfg.momentum)
    for it in range(1, cfg.iterations + 1):
        lr = cfg.learning_rate
        if cfg.lr_decay == "linear":
            lr = cfg.learning_rate * (1.0 - (it - 1) / cfg.iterations)
        _classify_step(enc1, clf1, train.d1, cfg.batch_1, rng, updater, lr, "enc1.", "clf1.")
        _classify_step(enc2, clf2, train.d2, cfg.batch_2, rng, updater, lr, "enc2.", "clf2.")
    return UnimodalBaseline(enc1=enc1, clf1=clf1, enc2=enc2, clf2=clf2)


def eval_fusion(
    model: AlignmentModel,
    test1,
    test2,
    *,
    train_data: DatasetTriple | None = None,
    run: RunConfig | None = None,
    seed: int | None = None,
) -> MetricReport:
    """Accuracy of the shared classifier through each encoder, plus the
    matched Unimodal baseline when training data and config are supplied."""
    fingerprint = run.fingerprint() if run is not None else ""
    acc = {
        "m1": accuracy_on(model.enc1, model.classifier, test1),
        "m2": accuracy_on(model.enc2, model.classifier, test2),
    }
    baselines = None
    if train_data is not None and run is not None:
        uni = train_unimodal(train_data, run)
        baselines = {
            "unimodal": {
                "accuracy_m1": accuracy_on(uni.enc1, uni.clf1, test1),
                "accuracy_m2": accuracy_on(uni.enc2, uni.clf2, test2),
                "config_fingerprint": fingerprint,
            }
        }
    return MetricReport(
        task="fusion",
        config_fingerprint=fingerprint,
        seeds=[seed] if seed is not None else [],
        accuracy=acc,
        baselines=baselines,
    )


def fusion_experiment(run: RunConfig, num_seeds: int | None = None) -> MetricReport:
    """Multi-seed fusion comparison: per seed, resample datasets, train the
    joint model and the matched Unimodal baseline, and score both."""
    n_seeds = num_seeds if num_seeds is not None else run.eval.fusion_seeds
    world = _build_world_for(run)
    seeds = [run.train.seed + i for i in range(n_seeds)]
    per_seed = []
    for s in seeds:
        cfg = run.with_seed(s)
        data = sample_datasets(
            world, (run.datasets.n1, run.datasets.n2, run.datasets.n3), rng_fork(s, "data")
        )
        tests = sample_datasets(
            world, (run.datasets.n1_test, run.datasets.n2_test, 0), rng_fork(s, "test")
        )
        model0 = init_model(
            world.vocab_sizes, run.encoder.dims(), world.num_classes, rng_fork(s, "init"),
            position_slots=world.arity if run.encoder.position_tags else 0,
        )
        joint, _ = run_training(data, model0, cfg.train)
        report = eval_fusion(joint, tests.d1, tests.d2, train_data=data, run=cfg, seed=s)
        per_seed.append(
            {
                "seed": s,
                "m1": report.accuracy["m1"],
                "m2": report.accuracy["m2"],
                "unimodal_m1": report.baselines["unimodal"]["accuracy_m1"],
                "unimodal_m2": report.baselines["unimodal"]["accuracy_m2"],
            }
        )
    acc: dict[str, float] = {}
    for key in ("m1", "m2", "unimodal_m1", "unimodal_m2"):
        mean, std = _mean_std([rec[key] for rec in per_seed])
        acc[f"{key}_mean"] = mean
        acc[f"{key}_std"] = std
    return MetricReport(
        task="fusion",
        config_fingerprint=run.fingerprint(),
        seeds=seeds,
        accuracy=acc,
        per_seed=per_seed,
    )


def _build_world_for(run: RunConfig) -> ConceptWorld:
    from .world import build_world

    return build_world(run.world, rng_fork(run.train.seed, "world"))


def _select_shots(pool, k: int, num_classes: int, rng: RngStream):
    """k labeled target examples: class-stratified when k >= num_classes
    and the pool allows it, uniform without replacement otherwise."""
    if k > len(pool):
        raise DataError(f"k={k} exceeds available target data ({len(pool)})")
    if k >= num_classes:
        by_class: dict[int, list[int]] = {}
        for i, (_, y) in enumerate(pool):
            by_class.setdefault(y, []).append(i)
        base = k // num_classes
        if len(by_class) == num_classes and all(len(v) >= base for v in by_class.values()):
            chosen: list[int] = []
            for y in sorted(by_class):
                idxs = by_class[y]
                picks = rng.sample_without_replacement(len(idxs), base)
                chosen.extend(idxs[p] for p in picks)
            remaining = [i for i in range(len(pool)) if i not in set(chosen)]
            extra = k - len(chosen)
            if extra > 0:
                picks = rng.sample_without_replacement(len(remaining), extra)
                chosen.extend(remaining[p] for p in picks)
            return [pool[i] for i in chosen]
    ids = rng.sample_without_replacement(len(pool), k)
    return [pool[i] for i in ids]


def _finetune_classify(
    encoder: EncoderParams,
    classifier: ClassifierParams,
    labeled,
    iterations: int,
    batch_size: int,
    lr: float,
    rng: RngStream,
    update_encoder: bool = True,
    update_classifier: bool = True,
) -> None:
    from .decoders import classify_loss_batch
    from .encoders import encode_backprop
    from .trainer import sgd_step

    bs = min(batch_size, len(labeled))
    for _ in range(iterations):
        ids = [rng.randint(len(labeled)) for _ in range(bs)]
        emb, tape = encode_batch(encoder, [labeled[i][0] for i in ids])
        _, clf_grads, d_emb = classify_loss_batch(
            classifier, emb, np.asarray([labeled[i][1] for i in ids])
        )
        if update_encoder:
            sgd_step(encoder, encode_backprop(tape, np.asarray(d_emb, dtype=np.float64)), lr)
        if update_classifier:
            sgd_step(classifier, clf_grads, lr)


def _train_source_aligned(world: ConceptWorld, data: DatasetTriple, run: RunConfig, seed: int,
                          source: int) -> AlignmentModel:
    """Co-learning phase 1: alignment on the paired set plus classification
    on the source modality only."""
    cfg = dataclasses.replace(run.train, seed=seed)
    model = init_model(
        world.vocab_sizes, run.encoder.dims(), world.num_classes, rng_fork(seed, "init"),
        position_slots=world.arity if run.encoder.position_tags else 0,
    )
    src_labeled = data.d1 if source == 1 else data.d2
    if not src_labeled or len(data.d3) <= cfg.align.n_neg:
        raise DataError("phase-1 datasets too small")
    rng = rng_fork(seed, "colearn-train")
    updater = _Updater(cfg.momentum)
    src_enc = model.encoder(source)
    src_batch = cfg.batch_1 if source == 1 else cfg.batch_2
    for _ in range(1, cfg.iterations + 1):
        _align_step(model, data.d3, cfg, rng, updater, cfg.learning_rate)
        _classify_step(
            src_enc, model.classifier, src_labeled, src_batch, rng, updater, cfg.learning_rate,
            f"enc{source}.", "classifier.",
        )
    return model


def eval_colearning(
    world: ConceptWorld, config: ColearnConfig, run: RunConfig | None = None
) -> MetricReport:
    """Source-to-target transfer protocol with Unimodal and Oracle baselines.

    Per seed: phase 1 trains the source encoder + shared classifier on
    source labels and both encoders on the paired set; phase 2 clones the
    model and fine-tunes the target encoder + classifier on exactly k
    labeled target examples. Unimodal trains from matched initialization
    on the same k examples with the same phase-2 budget; Oracle trains on
    the full target pool with the full phase-1 budget.
    """
    run = run if run is not None else RunConfig()
    source, target = config.source_modality, config.target_modality
    tgt_batch = run.train.batch_2 if target == 2 else run.train.batch_1
    seeds = [run.train.seed + i for i in range(config.num_seeds)]
    update_enc = "target_encoder" in config.unfreeze
    update_clf = "classifier" in config.unfreeze

    per_seed = []
    for s in seeds:
        data = sample_datasets(
            world, (run.datasets.n1, run.datasets.n2, run.datasets.n3), rng_fork(s, "colearn-data")
        )
        tests = sample_datasets(
            world, (run.datasets.n1_test, run.datasets.n2_test, 0), rng_fork(s, "colearn-test")
        )
        target_pool = data.d2 if target == 2 else data.d1
        target_test = tests.d2 if target == 2 else tests.d1

        phase1 = _train_source_aligned(world, data, run, s, source)

        init = rng_fork(s, "init")
        dims = run.encoder.dims()
        vocab_t = world.vocab_size(target)
        enc_label = "enc2" if target == 2 else "enc1"

        record: dict = {"seed": s}
        for k in config.shots:
            shots = _select_shots(target_pool, k, world.num_classes, rng_fork(s, f"shots:{k}"))

            joint_k = phase1.clone()
            _finetune_classify(
                joint_k.encoder(target), joint_k.classifier, shots,
                config.finetune_iterations, tgt_batch, config.finetune_learning_rate,
                rng_fork(s, f"finetune:{k}"),
                update_encoder=update_enc, update_classifier=update_clf,
            )
            record[f"joint_k{k}"] = accuracy_on(joint_k.encoder(target), joint_k.classifier, target_test)

            uni_enc = init_encoder(vocab_t, dims, init.fork(enc_label), modality=target)
            uni_clf = init_classifier(dims[2], world.num_classes, init.fork("clf"))
            _finetune_classify(
                uni_enc, uni_clf, shots, config.finetune_iterations, tgt_batch,
                config.finetune_learning_rate, rng_fork(s, f"unimodal:{k}"),
            )
            record[f"unimodal_k{k}"] = accuracy_on(uni_enc, uni_clf, target_test)

        oracle_enc = init_encoder(vocab_t, dims, init.fork(enc_label), modality=target)
        oracle_clf = init_classifier(dims[2], world.num_classes, init.fork("clf"))
        _finetune_classify(
            oracle_enc, oracle_clf, target_pool, run.train.iterations, tgt_batch,
            run.train.learning_rate, rng_fork(s, "oracle"),
        )
        record["oracle"] = accuracy_on(oracle_enc, oracle_clf, target_test)
        per_seed.append(record)

    acc: dict[str, float] = {}
    for k in config.shots:
        for name in ("joint", "unimodal"):
            mean, std = _mean_std([rec[f"{name}_k{k}"] for rec in per_seed])
            acc[f"{name}_k{k}_mean"] = mean
            acc[f"{name}_k{k}_std"] = std
    mean, std = _mean_std([rec["oracle"] for rec in per_seed])
    acc["oracle_mean"] = mean
    acc["oracle_std"] = std
    return MetricReport(
        task="colearn",
        config_fingerprint=run.fingerprint(),
        seeds=seeds,
        accuracy=acc,
        per_seed=per_seed,
    )


def concept_similarity_gap(
    model: AlignmentModel, world: ConceptWorld, num_instances: int, rng: RngStream
) -> tuple[float, float]:
    """Mean cross-modal similarity of instance pairs sharing at least one
    latent concept vs pairs with disjoint latents."""
    xs1 = []
    xs2 = []
    for _ in range(num_instances):
        seq1 = world.sequence_at(rng.randint(world.num_sequences))
        seq2 = world.sequence_at(rng.randint(world.num_sequences))
        xs1.append(compose_instance(world, seq1, 1, rng))
        xs2.append(compose_instance(world, seq2, 2, rng))
    e1 = encode_pool(model.enc1, xs1)
    e2 = encode_pool(model.enc2, xs2)
    sims = e1 @ e2.T
    shared_vals = []
    disjoint_vals = []
    for i, a in enumerate(xs1):
        sa = set(a.latent_concepts)
        for j, b in enumerate(xs2):
            if sa & set(b.latent_concepts):
                shared_vals.append(sims[i, j])
            else:
                disjoint_vals.append(sims[i, j])
    if not shared_vals or not disjoint_vals:
        raise DataError("need both shared-concept and disjoint-concept pairs")
    return float(np.mean(shared_vals)), float(np.mean(disjoint_vals))

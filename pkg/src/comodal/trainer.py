"""Training loop: one alignment step on the paired set, then one
classification step per labeled modality, every iteration, with plain
gradient updates.

A 10% held-out slice of each dataset (the trailing fraction) is reserved
before training and never touched by updates; the trace logs training
losses plus a held-out alignment loss computed as the full-pool softmax
contrast over the held-out pairs (deterministic, no negative sampling).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .align import AlignBatch, AlignConfig, nce_loss, sample_negatives
from .decoders import ClassifierParams, classify_loss_batch
from .encoders import EncoderParams, encode_backprop, encode_batch
from .errors import ConfigError, DataError, DimensionError, NumericError, TrainingDiverged
from .model import AlignmentModel
from .rng import RngStream, rng_fork
from .world import DatasetTriple

LR_DECAYS = ("none", "linear")


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 2000
    batch_align: int = 32
    batch_1: int = 32
    batch_2: int = 32
    learning_rate: float = 0.05
    align: AlignConfig = field(default_factory=AlignConfig)
    seed: int = 0
    eval_every: int = 100
    heldout_fraction: float = 0.1
    momentum: float = 0.0
    lr_decay: str = "none"

    def __post_init__(self) -> None:
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if min(self.batch_align, self.batch_1, self.batch_2) < 1:
            raise ConfigError("batch sizes must be >= 1")
        if self.learning_rate < 0:
            raise ConfigError("learning rate must be >= 0")
        if not 0.0 <= self.heldout_fraction < 1.0:
            raise ConfigError("heldout_fraction must be in [0, 1)")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must be in [0, 1)")
        if self.lr_decay not in LR_DECAYS:
            raise ConfigError(f"lr_decay must be one of {LR_DECAYS}")


@dataclass
class TraceRecord:
    iteration: int
    loss_align: float
    loss_1: float
    loss_2: float
    heldout_loss_align: float | None

    def to_json_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "loss_align": self.loss_align,
            "loss_1": self.loss_1,
            "loss_2": self.loss_2,
            "heldout_loss_align": self.heldout_loss_align,
        }


@dataclass
class TrainTrace:
    records: list[TraceRecord] = field(default_factory=list)

    def append(self, rec: TraceRecord) -> None:
        if self.records and rec.iteration <= self.records[-1].iteration:
            raise DataError("trace iterations must be strictly increasing")
        for value in (rec.loss_align, rec.loss_1, rec.loss_2):
            if not math.isfinite(value):
                raise DataError("trace losses must be finite")
        self.records.append(rec)

    @property
    def initial_heldout(self) -> float | None:
        return self.records[0].heldout_loss_align if self.records else None

    @property
    def final_heldout(self) -> float | None:
        return self.records[-1].heldout_loss_align if self.records else None

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r.to_json_dict(), sort_keys=True) + "\n" for r in self.records)


def sgd_step(params, grads: dict[str, np.ndarray], lr: float) -> None:
    """In-place plain gradient step: p <- p - lr * g for every tensor.

    Bumps the params object's version counter once per call.
    """
    tensors = dict(params.tensors())
    for name, arr in tensors.items():
        g = grads.get(name)
        if g is None:
            raise DimensionError(f"missing gradient for {name}")
        if g.shape != arr.shape:
            raise DimensionError(f"gradient shape {g.shape} != parameter shape {arr.shape} for {name}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}")
        arr -= np.asarray(lr, dtype=arr.dtype) * g.astype(arr.dtype)
    params.version += 1


def split_heldout(datasets: DatasetTriple, fraction: float) -> tuple[DatasetTriple, DatasetTriple]:
    """Reserve the trailing fraction of each dataset as a held-out slice."""

    def cut(xs):
        k = int(len(xs) * fraction)
        return (xs[: len(xs) - k], xs[len(xs) - k :]) if k > 0 else (xs, [])

    d1_tr, d1_ho = cut(datasets.d1)
    d2_tr, d2_ho = cut(datasets.d2)
    d3_tr, d3_ho = cut(datasets.d3)
    return DatasetTriple(d1_tr, d2_tr, d3_tr), DatasetTriple(d1_ho, d2_ho, d3_ho)


def heldout_alignment_loss(model: AlignmentModel, d3_heldout, temperature: float) -> float | None:
    """Full-pool softmax alignment loss over held-out pairs: each query's
    true partner against every held-out modality-2 instance."""
    if not d3_heldout:
        return None
    e1, _ = encode_batch(model.enc1, [p[0] for p in d3_heldout])
    e2, _ = encode_batch(model.enc2, [p[1] for p in d3_heldout])
    sims = np.asarray(e1, dtype=np.float64) @ np.asarray(e2, dtype=np.float64).T / temperature
    shifted = sims - sims.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    diag = shifted[np.arange(sims.shape[0]), np.arange(sims.shape[0])]
    return float(np.mean(lse - diag))


class _Updater:
    """Applies (optionally momentum-blended) gradient steps per parameter
    container, slicing model-level gradient keys by prefix."""

    def __init__(self, momentum: float):
        self.momentum = momentum
        self._velocity: dict[str, np.ndarray] = {}

    def apply(self, params, grads: dict[str, np.ndarray], prefix: str, lr: float) -> None:
        sub = {k[len(prefix):]: v for k, v in grads.items() if k.startswith(prefix)}
        if self.momentum > 0.0:
            blended = {}
            for name, g in sub.items():
                key = prefix + name
                v = self._velocity.get(key)
                v = g if v is None else self.momentum * v + g
                self._velocity[key] = v
                blended[name] = v
            sub = blended
        sgd_step(params, sub, lr)


def _align_step(
    model: AlignmentModel, d3_train, cfg: TrainConfig, rng: RngStream, updater: _Updater, lr: float,
) -> float:
    ids = [rng.randint(len(d3_train)) for _ in range(cfg.batch_align)]
    batch = sample_negatives(d3_train, ids, cfg.align.n_neg, rng, symmetric=cfg.align.symmetric_negatives)
    loss, grads = nce_loss(model, batch, cfg.align)
    updater.apply(model.enc1, grads, "enc1.", lr)
    updater.apply(model.enc2, grads, "enc2.", lr)
    return loss


def _classify_step(
    encoder: EncoderParams,
    classifier: ClassifierParams,
    labeled,
    batch_size: int,
    rng: RngStream,
    updater: _Updater,
    lr: float,
    enc_prefix: str,
    clf_prefix: str,
) -> float:
    ids = [rng.randint(len(labeled)) for _ in range(batch_size)]
    instances = [labeled[i][0] for i in ids]
    labels = np.asarray([labeled[i][1] for i in ids])
    emb, tape = encode_batch(encoder, instances)
    loss, clf_grads, d_emb = classify_loss_batch(classifier, emb, labels)
    enc_grads = encode_backprop(tape, np.asarray(d_emb, dtype=np.float64))
    updater.apply(encoder, {enc_prefix + k: v for k, v in enc_grads.items()}, enc_prefix, lr)
    updater.apply(classifier, {clf_prefix + k: v for k, v in clf_grads.items()}, clf_prefix, lr)
    return loss


def _probe_losses(model: AlignmentModel, train: DatasetTriple, cfg: TrainConfig) -> tuple[float, float, float]:
    """Pre-update loss estimates from probe batches on a dedicated fork."""
    rng = rng_fork(cfg.seed, "probe")
    ids = [rng.randint(len(train.d3)) for _ in range(min(cfg.batch_align, len(train.d3)))]
    batch = sample_negatives(train.d3, ids, cfg.align.n_neg, rng, symmetric=cfg.align.symmetric_negatives)
    loss_a, _ = nce_loss(model, batch, cfg.align)

    def probe_classify(labeled, encoder, batch_size):
        ids = [rng.randint(len(labeled)) for _ in range(min(batch_size, len(labeled)))]
        emb, _ = encode_batch(encoder, [labeled[i][0] for i in ids])
        loss, _, _ = classify_loss_batch(model.classifier, emb, np.asarray([labeled[i][1] for i in ids]))
        return loss

    loss_1 = probe_classify(train.d1, model.enc1, cfg.batch_1)
    loss_2 = probe_classify(train.d2, model.enc2, cfg.batch_2)
    return loss_a, loss_1, loss_2


def run_training(
    datasets: DatasetTriple,
    model: AlignmentModel,
    config: TrainConfig,
    trace_path: str | None = None,
) -> tuple[AlignmentModel, TrainTrace]:
    """Run the training protocol; returns a trained copy and its trace.

    The input model is left untouched. Per iteration and in this order:
    paired-batch alignment step (updates enc1 and enc2), modality-1
    classification step (updates enc1 and the shared classifier), then
    modality-2 classification step (updates enc2 and the shared
    classifier). Deterministic per (datasets, model, config).
    """
    train, heldout = split_heldout(datasets, config.heldout_fraction)
    if not train.d3 or len(train.d3) <= config.align.n_neg:
        raise DataError("paired training set too small for the configured negative count")
    if not train.d1 or not train.d2:
        raise DataError("both labeled training sets must be non-empty")

    trained = model.clone()
    trained.hyper = {"iterations": config.iterations, "learning_rate": config.learning_rate,
                     "batch_align": config.batch_align, "batch_1": config.batch_1,
                     "batch_2": config.batch_2, "seed": config.seed}
    trace = TrainTrace()
    tau = config.align.temperature

    loss_a, loss_1, loss_2 = _probe_losses(trained, train, config)
    trace.append(TraceRecord(0, loss_a, loss_1, loss_2, heldout_alignment_loss(trained, heldout.d3, tau)))

    if config.iterations == 0:
        _write_trace(trace, trace_path)
        return trained, trace

    rng = rng_fork(config.seed, "train")
    updater = _Updater(config.momentum)
    for it in range(1, config.iterations + 1):
        lr = config.learning_rate
        if config.lr_decay == "linear":
            lr = config.learning_rate * (1.0 - (it - 1) / config.iterations)
        try:
            loss_a = _align_step(trained, train.d3, config, rng, updater, lr)
            loss_1 = _classify_step(
                trained.enc1, trained.classifier, train.d1, config.batch_1, rng, updater, lr,
                "enc1.", "classifier.",
            )
            loss_2 = _classify_step(
                trained.enc2, trained.classifier, train.d2, config.batch_2, rng, updater, lr,
                "enc2.", "classifier.",
            )
            if it % config.eval_every == 0 or it == config.iterations:
                trace.append(
                    TraceRecord(
                        it, loss_a, loss_1, loss_2, heldout_alignment_loss(trained, heldout.d3, tau)
                    )
                )
        except NumericError as exc:
            raise TrainingDiverged(str(exc), iteration=it) from exc
        if not (math.isfinite(loss_a) and math.isfinite(loss_1) and math.isfinite(loss_2)):
            raise TrainingDiverged("non-finite loss", iteration=it)
    _write_trace(trace, trace_path)
    return trained, trace


def _write_trace(trace: TrainTrace, path: str | None) -> None:
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(trace.to_jsonl())

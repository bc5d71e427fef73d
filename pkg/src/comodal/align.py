"""Coordinated representation space: similarity, alignment probability,
negative sampling, and the contrastive alignment loss with exact gradients.

Two loss forms are supported. ``raw_margin`` is the literal proportional
objective, sum over positives of (-pos_sim + sum of neg sims); it is
bounded here because embeddings are always unit-norm. ``log_softmax`` is
the temperature-scaled softmax contrast of each positive against its own
negatives, the default training objective.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .encoders import encode, encode_backprop, encode_batch
from .errors import ConfigError, DataError, DimensionError
from .kernel import softmax
from .rng import RngStream
from .world import ModalityInstance

LOSS_FORMS = ("raw_margin", "log_softmax")


@dataclass(frozen=True)
class AlignConfig:
    n_neg: int = 8
    temperature: float = 0.1
    loss_form: str = "log_softmax"
    symmetric_negatives: bool = False

    def __post_init__(self) -> None:
        if self.n_neg < 1:
            raise ConfigError("n_neg must be >= 1")
        if not 0.0 < self.temperature <= 10.0:
            raise ConfigError("temperature must be in (0, 10]")
        if self.loss_form not in LOSS_FORMS:
            raise ConfigError(f"loss_form must be one of {LOSS_FORMS}")


@dataclass
class AlignBatch:
    positives: list[tuple[ModalityInstance, ModalityInstance]]
    negatives: list[list[ModalityInstance]]            # modality-2 corruptions per positive
    positive_ids: list[int]
    negative_ids: list[list[int]]
    negatives_m1: list[list[ModalityInstance]] | None = None  # symmetric mode only
    negative_ids_m1: list[list[int]] | None = None


def similarity(u: np.ndarray, v: np.ndarray) -> float:
    """Dot product of two unit-norm vectors (their cosine)."""
    u = np.asarray(u)
    v = np.asarray(v)
    if u.shape != v.shape or u.ndim != 1:
        raise DimensionError(f"similarity shapes {u.shape} vs {v.shape}")
    return float(np.asarray(u, dtype=np.float64) @ np.asarray(v, dtype=np.float64))


def alignment_prob(
    x1: ModalityInstance,
    candidates: Sequence[ModalityInstance],
    model,
    temperature: float = 1.0,
) -> np.ndarray:
    """Softmax over similarity(e1(x1), e2(candidate)) / temperature."""
    if not candidates:
        raise DataError("empty candidate set")
    q = encode(model.encoder(x1.modality), x1)
    other = 2 if x1.modality == 1 else 1
    cand, _ = encode_batch(model.encoder(other), list(candidates))
    sims = np.asarray(cand, dtype=np.float64) @ np.asarray(q, dtype=np.float64)
    return softmax(sims / temperature)


def sample_negatives(
    d3: Sequence[tuple[ModalityInstance, ModalityInstance]],
    batch_positive_ids: Sequence[int],
    n_neg: int,
    rng: RngStream,
    symmetric: bool = False,
) -> AlignBatch:
    """Uniform negatives without replacement per positive, excluding the
    positive's own pair id."""
    if len(d3) <= n_neg:
        raise DataError(f"need more than n_neg={n_neg} pairs in the paired set, got {len(d3)}")
    positives = []
    negatives = []
    negative_ids = []
    negatives_m1: list[list[ModalityInstance]] | None = [] if symmetric else None
    negative_ids_m1: list[list[int]] | None = [] if symmetric else None
    for p in batch_positive_ids:
        if not 0 <= p < len(d3):
            raise DataError(f"positive id {p} out of range")
        positives.append(d3[p])
        ids = rng.sample_without_replacement(len(d3), n_neg, exclude=p)
        negative_ids.append(ids)
        negatives.append([d3[j][1] for j in ids])
        if symmetric:
            ids1 = rng.sample_without_replacement(len(d3), n_neg, exclude=p)
            negative_ids_m1.append(ids1)
            negatives_m1.append([d3[j][0] for j in ids1])
    return AlignBatch(
        positives=positives,
        negatives=negatives,
        positive_ids=list(batch_positive_ids),
        negative_ids=negative_ids,
        negatives_m1=negatives_m1,
        negative_ids_m1=negative_ids_m1,
    )


def nce_loss_from_sims(
    pos_sims: np.ndarray, neg_sims: np.ndarray, config: AlignConfig
) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss and d(loss)/d(similarity) from raw similarities.

    ``pos_sims`` is [B]; ``neg_sims`` is [B, n_neg]. The loss is the mean
    over positives; negatives within a positive are summed.
    """
    pos = np.asarray(pos_sims, dtype=np.float64)
    neg = np.asarray(neg_sims, dtype=np.float64)
    b = pos.shape[0]
    if b == 0:
        raise DataError("empty batch")
    if config.loss_form == "raw_margin":
        loss = float(np.mean(-pos + neg.sum(axis=1)))
        d_pos = np.full(b, -1.0 / b)
        d_neg = np.full_like(neg, 1.0 / b)
        return loss, d_pos, d_neg
    tau = config.temperature
    logits = np.concatenate([pos[:, None], neg], axis=1) / tau
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(lse - shifted[:, 0]))
    p = np.exp(shifted - lse[:, None])
    p[:, 0] -= 1.0
    d_logits = p / (b * tau)
    return loss, d_logits[:, 0], d_logits[:, 1:]


def nce_loss(model, batch: AlignBatch, config: AlignConfig) -> tuple[float, dict[str, np.ndarray]]:
    """Contrastive alignment loss over a batch, with exact parameter
    gradients for both encoders (keys prefixed ``enc1.`` / ``enc2.``)."""
    if not batch.positives:
        raise DataError("empty batch")
    b = len(batch.positives)
    n_neg = len(batch.negatives[0]) if batch.negatives else 0
    if n_neg == 0 or any(len(n) != n_neg for n in batch.negatives):
        raise DataError("every positive needs the same, non-zero number of negatives")

    x1s = [p[0] for p in batch.positives]
    x2s = [p[1] for p in batch.positives]
    neg_flat = [x for group in batch.negatives for x in group]

    e1, tape1 = encode_batch(model.enc1, x1s)
    e2all, tape2 = encode_batch(model.enc2, x2s + neg_flat)
    e1 = np.asarray(e1, dtype=np.float64)
    e2all = np.asarray(e2all, dtype=np.float64)
    e2 = e2all[:b]
    e2neg = e2all[b:].reshape(b, n_neg, -1)

    pos_sims = np.sum(e1 * e2, axis=1)
    neg_sims = np.einsum("bd,bnd->bn", e1, e2neg)
    loss, d_pos, d_neg = nce_loss_from_sims(pos_sims, neg_sims, config)

    d_e1 = d_pos[:, None] * e2 + np.einsum("bn,bnd->bd", d_neg, e2neg)
    d_e2 = d_pos[:, None] * e1
    d_e2neg = d_neg[:, :, None] * e1[:, None, :]
    d_e2all = np.concatenate([d_e2, d_e2neg.reshape(b * n_neg, -1)], axis=0)

    if config.symmetric_negatives:
        if batch.negatives_m1 is None:
            raise DataError("symmetric loss requires modality-1 negatives in the batch")
        neg1_flat = [x for group in batch.negatives_m1 for x in group]
        e1neg_all, tape1n = encode_batch(model.enc1, neg1_flat)
        e1neg = np.asarray(e1neg_all, dtype=np.float64).reshape(b, n_neg, -1)
        rev_neg_sims = np.einsum("bd,bnd->bn", e2, e1neg)
        rev_loss, rd_pos, rd_neg = nce_loss_from_sims(pos_sims, rev_neg_sims, config)
        loss += rev_loss
        d_e1 += rd_pos[:, None] * e2
        d_e2all[:b] += rd_pos[:, None] * e1 + np.einsum("bn,bnd->bd", rd_neg, e1neg)
        d_e1neg = rd_neg[:, :, None] * e2[:, None, :]
        g1n = encode_backprop(tape1n, d_e1neg.reshape(b * n_neg, -1))

    g1 = encode_backprop(tape1, d_e1)
    g2 = encode_backprop(tape2, d_e2all)
    if config.symmetric_negatives:
        for k, v in g1n.items():
            g1[k] = g1[k] + v

    grads = {f"enc1.{k}": v for k, v in g1.items()}
    grads.update({f"enc2.{k}": v for k, v in g2.items()})
    return loss, grads

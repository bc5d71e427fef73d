"""Predictive and retrieval decoders: the shared classifier with
cross-entropy losses, and the argmax cross-modal retrieval rule."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .errors import ConfigError, DataError, DimensionError
from .kernel import MlpParams, cross_entropy_rows, init_mlp, log_softmax_loss, mlp_apply, mlp_backprop
from .rng import RngStream
from .world import ModalityInstance


@dataclass
class ClassifierParams:
    """Shared classifier over the coordinated space (linear by default)."""

    mlp: MlpParams
    version: int = field(default=0, compare=False)

    @property
    def input_dim(self) -> int:
        return self.mlp.in_dim

    @property
    def num_classes(self) -> int:
        return self.mlp.out_dim

    def tensors(self) -> Iterator[tuple[str, np.ndarray]]:
        for name, arr in self.mlp.tensors():
            yield f"mlp.{name}", arr

    def clone(self) -> "ClassifierParams":
        return ClassifierParams(mlp=self.mlp.clone())


def init_classifier(input_dim: int, num_classes: int, rng: RngStream) -> ClassifierParams:
    if input_dim <= 0 or num_classes < 2:
        raise ConfigError(f"bad classifier dims ({input_dim} -> {num_classes})")
    return ClassifierParams(mlp=init_mlp((input_dim, num_classes), rng, activate_final=False))


def classify_logits(clf: ClassifierParams, embeddings: np.ndarray):
    return mlp_apply(clf.mlp, embeddings)


def classify_loss(
    clf: ClassifierParams, embedding: np.ndarray, y: int
) -> tuple[float, dict[str, np.ndarray]]:
    """-log softmax(classifier(embedding))[y] with exact gradients.

    The returned dict holds classifier grads (keys as in ``tensors()``)
    plus the gradient w.r.t. the embedding under key ``"embedding"``.
    """
    if not 0 <= y < clf.num_classes:
        raise DataError(f"label {y} out of range for {clf.num_classes} classes")
    logits, tape = classify_logits(clf, embedding)
    loss, dlogits = log_softmax_loss(logits, y)
    mlp_grads, d_emb = mlp_backprop(tape, dlogits)
    grads = {f"mlp.{k}": v for k, v in mlp_grads.items()}
    grads["embedding"] = d_emb
    return loss, grads


def classify_loss_batch(
    clf: ClassifierParams, embeddings: np.ndarray, labels: np.ndarray
) -> tuple[float, dict[str, np.ndarray], np.ndarray]:
    """Mean cross-entropy over a batch: (loss, classifier grads, dE)."""
    labels = np.asarray(labels)
    if np.any(labels < 0) or np.any(labels >= clf.num_classes):
        raise DataError("label out of range")
    logits, tape = classify_logits(clf, embeddings)
    loss, dlogits = cross_entropy_rows(logits, labels)
    mlp_grads, d_emb = mlp_backprop(tape, dlogits)
    return loss, {f"mlp.{k}": v for k, v in mlp_grads.items()}, d_emb


def predict_label(clf: ClassifierParams, embedding: np.ndarray) -> int:
    """Argmax class; ties break toward the lowest class id."""
    logits, _ = classify_logits(clf, embedding)
    return int(np.argmax(logits))


def predict_batch(clf: ClassifierParams, embeddings: np.ndarray) -> np.ndarray:
    logits, _ = classify_logits(clf, embeddings)
    return np.argmax(logits, axis=1)


@dataclass
class RankedRetrieval:
    ordering: np.ndarray   # candidate indices, best first
    scores: np.ndarray     # similarities, non-increasing


def rank_candidates(similarities: np.ndarray, k: int) -> RankedRetrieval:
    """Sort candidates by similarity descending, ties by lowest index."""
    sims = np.asarray(similarities, dtype=np.float64)
    if sims.size == 0:
        raise DataError("empty candidate set")
    if not 1 <= k <= sims.size:
        raise DimensionError(f"k={k} out of range for {sims.size} candidates")
    order = np.argsort(-sims, kind="stable")[:k]
    return RankedRetrieval(ordering=order, scores=sims[order])


def retrieve(model, query: ModalityInstance, candidates: Sequence[ModalityInstance], k: int) -> RankedRetrieval:
    """Top-k cross-modal retrieval by embedding dot product.

    Query modality picks the encoder; candidates must all belong to the
    other modality (so a modality-2 query ranks modality-1 candidates).
    """
    from .encoders import encode, encode_batch

    if not candidates:
        raise DataError("empty candidate set")
    other = 2 if query.modality == 1 else 1
    if any(c.modality != other for c in candidates):
        raise DataError("candidates must all be in the opposite modality from the query")
    enc_q = model.encoder(query.modality)
    enc_c = model.encoder(other)
    q = encode(enc_q, query)
    cand, _ = encode_batch(enc_c, list(candidates))
    sims = (np.asarray(cand, dtype=np.float64) @ np.asarray(q, dtype=np.float64))
    return rank_candidates(sims, k)

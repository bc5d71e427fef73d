"""Per-modality encoders: unit-embedding lookup, mean pooling, MLP, and
unit normalization into the shared coordinated space."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .kernel import (
    DTYPE,
    MlpParams,
    MlpTape,
    init_mlp,
    l2_normalize_rows,
    l2_normalize_rows_vjp,
    mlp_apply,
    mlp_backprop,
)
from .rng import RngStream
from .world import ModalityInstance


@dataclass
class EncoderParams:
    modality: int
    unit_embeddings: np.ndarray          # [vocab, embed_dim]
    mlp: MlpParams                       # embed_dim -> hidden -> out
    slot_gains: np.ndarray | None = None  # optional [max_slots, embed_dim], position-tag mode
    version: int = field(default=0, compare=False)

    @property
    def vocab_size(self) -> int:
        return self.unit_embeddings.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.unit_embeddings.shape[1]

    @property
    def output_dim(self) -> int:
        return self.mlp.out_dim

    def tensors(self) -> Iterator[tuple[str, np.ndarray]]:
        yield "unit_embeddings", self.unit_embeddings
        if self.slot_gains is not None:
            yield "slot_gains", self.slot_gains
        for name, arr in self.mlp.tensors():
            yield f"mlp.{name}", arr

    def param_count(self) -> int:
        return sum(arr.size for _, arr in self.tensors())

    def clone(self) -> "EncoderParams":
        return EncoderParams(
            modality=self.modality,
            unit_embeddings=self.unit_embeddings.copy(),
            mlp=self.mlp.clone(),
            slot_gains=None if self.slot_gains is None else self.slot_gains.copy(),
        )


def init_encoder(
    vocab_size: int,
    dims: tuple[int, int, int],
    rng: RngStream,
    modality: int = 1,
    position_slots: int = 0,
) -> EncoderParams:
    """Initialize an encoder. ``dims`` is (embed_dim, hidden, out).

    The embedding table uses the same scaled-uniform bound as a weight
    matrix mapping one-hot vocabulary vectors to embed_dim. Position-tag
    slot gains start at zero (a neutral factor of one); an additive offset
    would cancel under mean pooling, so the tag is multiplicative.
    """
    d_e, hidden, d_out = dims
    if min(vocab_size, d_e, hidden, d_out) <= 0:
        raise ConfigError(f"encoder dims must be positive, got vocab={vocab_size} dims={dims}")
    bound = math.sqrt(6.0 / (vocab_size + d_e))
    table = (rng.uniform_array(vocab_size * d_e) * (2.0 * bound) - bound).reshape(
        vocab_size, d_e
    ).astype(DTYPE)
    mlp = init_mlp((d_e, hidden, d_out), rng, activation="tanh", activate_final=True)
    gains = np.zeros((position_slots, d_e), dtype=DTYPE) if position_slots > 0 else None
    return EncoderParams(modality=modality, unit_embeddings=table, mlp=mlp, slot_gains=gains)


@dataclass
class EncodeTape:
    params: EncoderParams
    unit_index: np.ndarray       # [B, L] unit ids
    mlp_tape: MlpTape
    mlp_out64: np.ndarray        # pre-normalization outputs, float64
    norms: np.ndarray


def _check_instance(params: EncoderParams, x: ModalityInstance) -> None:
    if x.modality != params.modality:
        raise DataError(f"instance modality {x.modality} != encoder modality {params.modality}")
    if any(u < 0 or u >= params.vocab_size for u in x.units):
        raise DataError("instance contains out-of-vocabulary unit ids")
    if params.slot_gains is not None and len(x.units) > params.slot_gains.shape[0]:
        raise DataError("instance longer than the configured position-slot table")


def encode_batch(
    params: EncoderParams, instances: Sequence[ModalityInstance]
) -> tuple[np.ndarray, EncodeTape]:
    """Encode instances into unit-norm rows of the coordinated space.

    All instances in a batch must share one length (true for any single
    world, whose instances all have template arity).
    """
    if not instances:
        raise DataError("cannot encode an empty batch")
    length = len(instances[0].units)
    for x in instances:
        _check_instance(params, x)
        if len(x.units) != length:
            raise DataError("batched instances must share one length")
    idx = np.asarray([x.units for x in instances], dtype=np.int64)
    feats = params.unit_embeddings[idx].astype(np.float64)  # [B, L, d_e]
    if params.slot_gains is not None:
        feats = feats * (1.0 + params.slot_gains[None, :length, :].astype(np.float64))
    pooled = feats.mean(axis=1)
    out, mlp_tape = mlp_apply(params.mlp, pooled)
    out64 = np.asarray(out, dtype=np.float64)
    normed, norms = l2_normalize_rows(out64)
    embeddings = normed.astype(np.result_type(params.unit_embeddings, out))
    return embeddings, EncodeTape(params, idx, mlp_tape, out64, norms)


def encode(params: EncoderParams, x: ModalityInstance) -> np.ndarray:
    """Single-instance convenience wrapper around :func:`encode_batch`."""
    emb, _ = encode_batch(params, [x])
    return emb[0]


def encode_backprop(tape: EncodeTape, grad_embeddings: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss w.r.t. all encoder parameters."""
    params = tape.params
    if grad_embeddings.shape != (tape.unit_index.shape[0], params.output_dim):
        raise DataError("grad_embeddings shape does not match the encoded batch")
    g = l2_normalize_rows_vjp(tape.mlp_out64, tape.norms, grad_embeddings)
    mlp_grads, g_pooled = mlp_backprop(tape.mlp_tape, g)
    length = tape.unit_index.shape[1]
    g_feats = np.broadcast_to(
        np.asarray(g_pooled, dtype=np.float64)[:, None, :] / length,
        (*tape.unit_index.shape, params.embed_dim),
    )  # [B, L, d_e]
    table64 = params.unit_embeddings.astype(np.float64)
    if params.slot_gains is not None:
        gains = 1.0 + params.slot_gains[None, :length, :].astype(np.float64)
        g_units = g_feats * gains
    else:
        g_units = g_feats
    g_table = np.zeros_like(params.unit_embeddings, dtype=np.float64)
    np.add.at(g_table, tape.unit_index, g_units)
    grads = {"unit_embeddings": g_table.astype(params.unit_embeddings.dtype)}
    if params.slot_gains is not None:
        g_gain = np.zeros_like(params.slot_gains, dtype=np.float64)
        g_gain[:length] = (g_feats * table64[tape.unit_index]).sum(axis=0)
        grads["slot_gains"] = g_gain.astype(params.slot_gains.dtype)
    for name, arr in mlp_grads.items():
        grads[f"mlp.{name}"] = arr
    return grads

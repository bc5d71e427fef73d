"""Finite-difference verification of every analytic gradient path:
plain MLP, normalization, softmax cross-entropy, both contrastive loss
forms through the encoders, and the classification losses per modality."""

from __future__ import annotations

import numpy as np

from .align import AlignBatch, AlignConfig, nce_loss
from .decoders import ClassifierParams, classify_loss_batch
from .encoders import EncoderParams, encode_backprop, encode_batch
from .kernel import (
    MlpParams,
    cross_entropy_rows,
    finite_diff_check,
    init_mlp,
    mlp_apply,
    mlp_backprop,
)
from .model import AlignmentModel, init_model
from .rng import RngStream, rng_fork
from .world import ModalityInstance

GRAD_TOLERANCE = 1e-4

_VOCAB = 12
_DIMS = (4, 6, 4)
_CLASSES = 5
_LENGTH = 2
_BATCH = 3
_NNEG = 2


def _random_instance(rng: RngStream, modality: int) -> ModalityInstance:
    units = tuple(rng.randint(_VOCAB) for _ in range(_LENGTH))
    return ModalityInstance(modality=modality, units=units)


def _random_batch(rng: RngStream) -> AlignBatch:
    positives = [(_random_instance(rng, 1), _random_instance(rng, 2)) for _ in range(_BATCH)]
    negatives = [[_random_instance(rng, 2) for _ in range(_NNEG)] for _ in range(_BATCH)]
    return AlignBatch(
        positives=positives,
        negatives=negatives,
        positive_ids=list(range(_BATCH)),
        negative_ids=[[0] * _NNEG for _ in range(_BATCH)],
    )


def _mlp_with(template: MlpParams, tensors: dict, prefix: str) -> MlpParams:
    layers = [
        (tensors[f"{prefix}{i}.weight"], tensors[f"{prefix}{i}.bias"])
        for i in range(len(template.layers))
    ]
    return MlpParams(layers=layers, activation=template.activation, activate_final=template.activate_final)


def _encoder_with(template: EncoderParams, tensors: dict, prefix: str) -> EncoderParams:
    return EncoderParams(
        modality=template.modality,
        unit_embeddings=tensors[f"{prefix}unit_embeddings"],
        mlp=_mlp_with(template.mlp, tensors, f"{prefix}mlp."),
        slot_gains=tensors.get(f"{prefix}slot_gains"),
    )


def model_with_tensors(template: AlignmentModel, overrides: dict) -> AlignmentModel:
    tensors = dict(template.tensors())
    tensors.update(overrides)
    return AlignmentModel(
        enc1=_encoder_with(template.enc1, tensors, "enc1."),
        enc2=_encoder_with(template.enc2, tensors, "enc2."),
        classifier=ClassifierParams(mlp=_mlp_with(template.classifier.mlp, tensors, "classifier.mlp.")),
    )


def _check_mlp(rng: RngStream, eps: float) -> float:
    mlp = init_mlp(_DIMS, rng.fork("mlp"))
    x = np.asarray(rng.uniform_array(_DIMS[0]) - 0.5)
    r = np.asarray(rng.uniform_array(_DIMS[-1]) - 0.5)

    def loss_and_grad(t):
        m = _mlp_with(mlp, t, "")
        y, tape = mlp_apply(m, x)
        grads, _ = mlp_backprop(tape, r)
        return float(np.asarray(y, dtype=np.float64) @ r), grads

    return finite_diff_check(loss_and_grad, dict(mlp.tensors()), eps)


def _check_normalize(rng: RngStream, eps: float) -> float:
    v = np.asarray(rng.uniform_array(5)) + 0.2
    r = np.asarray(rng.uniform_array(5) - 0.5)

    def loss_and_grad(t):
        from .kernel import l2_normalize_rows, l2_normalize_rows_vjp

        x = t["v"].reshape(1, -1)
        y, norms = l2_normalize_rows(x)
        loss = float(np.asarray(y[0], dtype=np.float64) @ r)
        g = l2_normalize_rows_vjp(np.asarray(x, dtype=np.float64), norms, r.reshape(1, -1))
        return loss, {"v": g.reshape(-1)}

    return finite_diff_check(loss_and_grad, {"v": v}, eps)


def _check_softmax_ce(rng: RngStream, eps: float) -> float:
    mlp = init_mlp((_DIMS[0], _CLASSES), rng.fork("ce"), activate_final=False)
    x = np.asarray(rng.uniform_array(2 * _DIMS[0]).reshape(2, _DIMS[0]) - 0.5)
    ys = np.asarray([rng.randint(_CLASSES) for _ in range(2)])

    def loss_and_grad(t):
        m = _mlp_with(mlp, t, "")
        logits, tape = mlp_apply(m, x)
        loss, dlogits = cross_entropy_rows(np.asarray(logits, dtype=np.float64), ys)
        grads, _ = mlp_backprop(tape, dlogits)
        return loss, grads

    return finite_diff_check(loss_and_grad, dict(mlp.tensors()), eps)


def _fresh_model(rng: RngStream) -> AlignmentModel:
    return init_model((_VOCAB, _VOCAB), _DIMS, _CLASSES, rng.fork("model"))


def _check_nce(rng: RngStream, eps: float, loss_form: str) -> float:
    model = _fresh_model(rng)
    batch = _random_batch(rng.fork("batch"))
    cfg = AlignConfig(n_neg=_NNEG, temperature=0.5, loss_form=loss_form)
    enc_keys = {k: v for k, v in model.tensors() if not k.startswith("classifier.")}

    def loss_and_grad(t):
        m = model_with_tensors(model, t)
        return nce_loss(m, batch, cfg)

    return finite_diff_check(loss_and_grad, enc_keys, eps)


def _check_classify(rng: RngStream, eps: float, modality: int) -> float:
    model = _fresh_model(rng)
    instances = [_random_instance(rng.fork("x"), modality) for _ in range(_BATCH)]
    ys = np.asarray([rng.randint(_CLASSES) for _ in range(_BATCH)])
    prefix = f"enc{modality}."
    keys = {k: v for k, v in model.tensors() if k.startswith((prefix, "classifier."))}

    def loss_and_grad(t):
        m = model_with_tensors(model, t)
        enc = m.encoder(modality)
        emb, tape = encode_batch(enc, instances)
        loss, clf_grads, d_emb = classify_loss_batch(m.classifier, emb, ys)
        enc_grads = encode_backprop(tape, np.asarray(d_emb, dtype=np.float64))
        grads = {f"{prefix}{k}": v for k, v in enc_grads.items()}
        grads.update({f"classifier.{k}": v for k, v in clf_grads.items()})
        return loss, grads

    return finite_diff_check(loss_and_grad, keys, eps)


PATHS = (
    "mlp",
    "normalize",
    "softmax_cross_entropy",
    "nce_raw_margin",
    "nce_log_softmax",
    "classify_m1",
    "classify_m2",
)


def gradient_check_suite(
    seed: int, num_seeds: int = 20, eps: float = 1e-4
) -> dict[str, float]:
    """Max relative finite-difference error per gradient path over seeds."""
    worst = {name: 0.0 for name in PATHS}
    for i in range(num_seeds):
        rng = rng_fork(seed + i, "gradcheck")
        worst["mlp"] = max(worst["mlp"], _check_mlp(rng.fork("mlp"), eps))
        worst["normalize"] = max(worst["normalize"], _check_normalize(rng.fork("norm"), eps))
        worst["softmax_cross_entropy"] = max(
            worst["softmax_cross_entropy"], _check_softmax_ce(rng.fork("ce"), eps)
        )
        worst["nce_raw_margin"] = max(
            worst["nce_raw_margin"], _check_nce(rng.fork("nce-raw"), eps, "raw_margin")
        )
        worst["nce_log_softmax"] = max(
            worst["nce_log_softmax"], _check_nce(rng.fork("nce-soft"), eps, "log_softmax")
        )
        worst["classify_m1"] = max(worst["classify_m1"], _check_classify(rng.fork("c1"), eps, 1))
        worst["classify_m2"] = max(worst["classify_m2"], _check_classify(rng.fork("c2"), eps, 2))
    return {name: float(v) for name, v in worst.items()}

"""Dense numeric substrate: small MLPs with exact backprop, normalization,
softmax/cross-entropy, and a finite-difference gradient oracle.

Tensors are numpy arrays, float32 row-major by convention. Every op is
dtype-generic: float32 inputs are accumulated in float64 and rounded back
to float32; float64 inputs stay float64 end to end, which is what the
finite-difference oracle relies on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from .errors import DimensionError, NumericError
from .rng import RngStream

DTYPE = np.float32
NORM_EPS = 1e-8

ACTIVATIONS = ("tanh", "relu")


def check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {name}")


def _f64(x: np.ndarray) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _out_dtype(*arrays: np.ndarray) -> np.dtype:
    return np.result_type(*arrays)


@dataclass
class MlpParams:
    """Parameters of a small dense network.

    ``layers`` is an ordered list of ``(weight [out, in], bias [out])``
    pairs; consecutive dimensions must chain. ``activation`` applies after
    every affine layer, or after every layer but the last when
    ``activate_final`` is False (used for logit heads).
    """

    layers: list[tuple[np.ndarray, np.ndarray]]
    activation: str = "tanh"
    activate_final: bool = True
    version: int = field(default=0, compare=False)

    def __post_init__(self) -> None:
        if self.activation not in ACTIVATIONS:
            raise DimensionError(f"unknown activation {self.activation!r}")
        if not self.layers:
            raise DimensionError("MLP needs at least one layer")
        for i, (w, b) in enumerate(self.layers):
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise DimensionError(f"layer {i}: weight {w.shape} / bias {b.shape} mismatch")
            if i > 0 and w.shape[1] != self.layers[i - 1][0].shape[0]:
                raise DimensionError(
                    f"layer {i}: input dim {w.shape[1]} does not chain from "
                    f"previous output dim {self.layers[i - 1][0].shape[0]}"
                )
            check_finite(f"layer {i} weight", w)
            check_finite(f"layer {i} bias", b)

    @property
    def in_dim(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1][0].shape[0]

    def tensors(self) -> Iterator[tuple[str, np.ndarray]]:
        for i, (w, b) in enumerate(self.layers):
            yield f"{i}.weight", w
            yield f"{i}.bias", b

    def param_count(self) -> int:
        return sum(arr.size for _, arr in self.tensors())

    def clone(self) -> "MlpParams":
        return MlpParams(
            layers=[(w.copy(), b.copy()) for w, b in self.layers],
            activation=self.activation,
            activate_final=self.activate_final,
        )


def init_mlp(
    dims: tuple[int, ...],
    rng: RngStream,
    activation: str = "tanh",
    activate_final: bool = True,
) -> MlpParams:
    """Scaled uniform init: weights in +/- sqrt(6/(in+out)), biases zero."""
    if any(d <= 0 for d in dims) or len(dims) < 2:
        raise DimensionError(f"invalid MLP dims {dims}")
    layers = []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        bound = math.sqrt(6.0 / (d_in + d_out))
        flat = rng.uniform_array(d_out * d_in) * (2.0 * bound) - bound
        w = flat.reshape(d_out, d_in).astype(DTYPE)
        b = np.zeros(d_out, dtype=DTYPE)
        layers.append((w, b))
    return MlpParams(layers=layers, activation=activation, activate_final=activate_final)


@dataclass
class MlpTape:
    """Forward cache sufficient for exact backprop (float64 internals)."""

    params: MlpParams
    inputs: list[np.ndarray]       # input to each layer
    activated: list[bool]          # whether layer output went through the activation
    postacts: list[np.ndarray]     # layer outputs after (optional) activation
    preacts: list[np.ndarray]      # affine outputs before activation
    squeezed: bool                 # input was 1-D


def _apply_activation(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(z)
    return np.maximum(0.0, z)


def _activation_deriv(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return 1.0 - a * a
    return (z > 0.0).astype(z.dtype)


def mlp_apply(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, MlpTape]:
    """Forward pass; returns output and a tape for :func:`mlp_backprop`.

    Accepts a single vector [in] or a batch [B, in].
    """
    x = np.asarray(x)
    squeezed = x.ndim == 1
    h = _f64(x.reshape(1, -1) if squeezed else x)
    if h.ndim != 2 or h.shape[1] != params.in_dim:
        raise DimensionError(f"input dim {x.shape} does not match MLP input {params.in_dim}")
    check_finite("mlp input", h)
    out_dtype = _out_dtype(x, *(w for w, _ in params.layers))

    inputs, preacts, postacts, activated = [], [], [], []
    n_layers = len(params.layers)
    for i, (w, b) in enumerate(params.layers):
        inputs.append(h)
        z = h @ _f64(w).T + _f64(b)
        act = params.activate_final or i < n_layers - 1
        a = _apply_activation(params.activation, z) if act else z
        preacts.append(z)
        postacts.append(a)
        activated.append(act)
        h = a
    out = h[0] if squeezed else h
    tape = MlpTape(params, inputs, activated, postacts, preacts, squeezed)
    return out.astype(out_dtype), tape


def mlp_backprop(tape: MlpTape, output_grad: np.ndarray) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Exact reverse-mode gradients of ``output . output_grad``.

    Returns per-parameter grads keyed like ``MlpParams.tensors()`` plus the
    gradient with respect to the input.
    """
    params = tape.params
    g = np.asarray(output_grad)
    if tape.squeezed:
        g = g.reshape(1, -1)
    if g.shape != tape.postacts[-1].shape:
        raise DimensionError(
            f"output_grad shape {output_grad.shape} does not match output "
            f"{tape.postacts[-1].shape[-1] if tape.squeezed else tape.postacts[-1].shape}"
        )
    g = _f64(g)
    grads: dict[str, np.ndarray] = {}
    for i in range(len(params.layers) - 1, -1, -1):
        w, b = params.layers[i]
        if tape.activated[i]:
            g = g * _activation_deriv(params.activation, tape.preacts[i], tape.postacts[i])
        grads[f"{i}.weight"] = (g.T @ tape.inputs[i]).astype(w.dtype)
        grads[f"{i}.bias"] = g.sum(axis=0).astype(b.dtype)
        g = g @ _f64(w)
    input_grad = g[0] if tape.squeezed else g
    in_dtype = _out_dtype(*(w for w, _ in params.layers))
    return grads, input_grad.astype(in_dtype)


def l2_normalize(v: np.ndarray) -> np.ndarray:
    """Scale a vector to unit Euclidean norm. Direction is preserved."""
    v = np.asarray(v)
    n = float(np.linalg.norm(_f64(v)))
    if not math.isfinite(n):
        raise NumericError("non-finite values in l2_normalize input")
    if n <= NORM_EPS:
        raise NumericError(f"cannot normalize near-zero vector (norm {n:.3e})")
    return (_f64(v) / n).astype(v.dtype)


def l2_normalize_rows(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rowwise unit normalization; returns (normalized, norms)."""
    x64 = _f64(x)
    check_finite("l2_normalize input", x64)
    norms = np.linalg.norm(x64, axis=1)
    if np.any(norms <= NORM_EPS):
        raise NumericError("cannot normalize near-zero row")
    return (x64 / norms[:, None]).astype(np.asarray(x).dtype), norms


def l2_normalize_rows_vjp(x64: np.ndarray, norms: np.ndarray, grad_y: np.ndarray) -> np.ndarray:
    """Gradient of rowwise normalization: projection onto the tangent space."""
    y = x64 / norms[:, None]
    g = _f64(grad_y)
    return (g - y * np.sum(y * g, axis=1, keepdims=True)) / norms[:, None]


def softmax(logits: np.ndarray) -> np.ndarray:
    """Max-shifted softmax over a 1-D logits vector."""
    logits = np.asarray(logits)
    if logits.size == 0:
        raise DimensionError("softmax of empty logits")
    z = _f64(logits)
    check_finite("softmax logits", z)
    z = z - z.max()
    e = np.exp(z)
    return (e / e.sum()).astype(logits.dtype)


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = _f64(logits)
    check_finite("softmax logits", z)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax_loss(logits: np.ndarray, index: int) -> tuple[float, np.ndarray]:
    """-log softmax(logits)[index] with its gradient w.r.t. the logits."""
    z = _f64(np.asarray(logits))
    if not 0 <= index < z.size:
        raise DimensionError(f"index {index} out of range for {z.size} logits")
    check_finite("logits", z)
    shifted = z - z.max()
    lse = math.log(np.exp(shifted).sum())
    loss = lse - float(shifted[index])
    grad = np.exp(shifted - lse)
    grad[index] -= 1.0
    return loss, grad.astype(np.asarray(logits).dtype)


def cross_entropy_rows(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean -log softmax(logits)[label] over rows, with the logits gradient."""
    z = _f64(logits)
    check_finite("logits", z)
    n = z.shape[0]
    shifted = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(lse - shifted[rows, labels]))
    grad = np.exp(shifted - lse[:, None])
    grad[rows, labels] -= 1.0
    return loss, grad / n


def finite_diff_check(
    loss_and_grad: Callable[[dict[str, np.ndarray]], tuple[float, dict[str, np.ndarray]]],
    params: dict[str, np.ndarray],
    eps: float = 1e-4,
) -> float:
    """Central-difference check of an analytic gradient.

    ``loss_and_grad`` must be a pure function of the parameter dict,
    returning a scalar loss and a gradient dict with matching keys and
    shapes. Parameters are copied to float64 before checking. Returns the
    max relative error, with denominator max(|analytic|, |numeric|, 1e-8).
    """
    if eps <= 0:
        raise NumericError("eps must be positive")
    work = {k: _f64(v).copy() for k, v in params.items()}
    loss0, grads = loss_and_grad(work)
    if not math.isfinite(loss0):
        raise NumericError("non-finite loss at the base point")
    worst = 0.0
    for name, arr in work.items():
        analytic = _f64(grads[name]).reshape(-1)
        flat = arr.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            lp, _ = loss_and_grad(work)
            flat[i] = orig - eps
            lm, _ = loss_and_grad(work)
            flat[i] = orig
            if not (math.isfinite(lp) and math.isfinite(lm)):
                raise NumericError(f"non-finite loss while perturbing {name}[{i}]")
            numeric = (lp - lm) / (2.0 * eps)
            denom = max(abs(analytic[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(analytic[i] - numeric) / denom)
    return worst

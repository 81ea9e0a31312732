"""Float64 MLP numerics: parameters, forward/backward passes, AdamW, checkpoints.

The model is a plain tanh MLP with a linear output layer. It predicts a
velocity field v(x, t, c); the time scalar t enters as one extra raw input
feature appended after the state x and the condition vector c.

A parameter vector is a flat 1-D float64 array laid out as all weight
matrices in layer order (row-major, shape (fan_out, fan_in)) followed by all
bias vectors in layer order. Everything here is a pure function of explicit
arrays; nothing hides state.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace
from typing import Callable, Protocol

import numpy as np

from .errors import NumericError, ParseError, ShapeError

CHECKPOINT_MAGIC = b"RFPK"
CHECKPOINT_VERSION = 1

# A "ParamVector" is just a flat float64 ndarray with the layout above.
ParamVector = np.ndarray


@dataclass(frozen=True)
class MlpSpec:
    """Architecture of the velocity network.

    Attributes:
        data_dim: dimension of the state x (also the output dimension).
        cond_dim: dimension of the one-hot condition vector c.
        hidden: sizes of the tanh hidden layers (may be empty -> linear model).
    """

    data_dim: int
    cond_dim: int
    hidden: tuple[int, ...] = (32, 32)

    def __post_init__(self):
        if self.data_dim < 1 or self.cond_dim < 1:
            raise ShapeError(f"dims must be >= 1, got {self.data_dim}, {self.cond_dim}")
        if any(h < 1 for h in self.hidden):
            raise ShapeError(f"hidden sizes must be >= 1: {self.hidden}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    @property
    def input_dim(self) -> int:
        return self.data_dim + self.cond_dim + 1  # +1 time feature

    @property
    def output_dim(self) -> int:
        return self.data_dim

    def layer_shapes(self) -> list[tuple[int, int]]:
        """(fan_out, fan_in) for each weight matrix, input to output order."""
        widths = [self.input_dim, *self.hidden, self.output_dim]
        return [(widths[i + 1], widths[i]) for i in range(len(widths) - 1)]

    def param_count(self) -> int:
        return sum(r * c + r for r, c in self.layer_shapes())


def unpack_params(params: ParamVector, spec: MlpSpec) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Split a flat parameter vector into per-layer (weights, biases) views."""
    params = np.asarray(params, dtype=np.float64)
    if params.ndim != 1 or params.size != spec.param_count():
        raise ShapeError(
            f"parameter vector has size {params.size}, spec needs {spec.param_count()}"
        )
    shapes = spec.layer_shapes()
    weights, biases = [], []
    off = 0
    for r, c in shapes:
        weights.append(params[off : off + r * c].reshape(r, c))
        off += r * c
    for r, _ in shapes:
        biases.append(params[off : off + r])
        off += r
    return weights, biases


def pack_params(weights: list[np.ndarray], biases: list[np.ndarray]) -> ParamVector:
    flat = [w.ravel() for w in weights] + list(biases)
    return np.concatenate(flat).astype(np.float64)


def mlp_init(spec: MlpSpec, seed: int) -> ParamVector:
    """Glorot-uniform weights (bound sqrt(6/(fan_in+fan_out))), zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for r, c in spec.layer_shapes():
        bound = math.sqrt(6.0 / (r + c))
        weights.append(rng.uniform(-bound, bound, size=(r, c)))
        biases.append(np.zeros(r))
    return pack_params(weights, biases)


def _check_forward_args(spec: MlpSpec, x: np.ndarray, t: float, c: np.ndarray) -> None:
    if x.shape != (spec.data_dim,):
        raise ShapeError(f"state has shape {x.shape}, expected ({spec.data_dim},)")
    if c.shape != (spec.cond_dim,):
        raise ShapeError(f"condition has shape {c.shape}, expected ({spec.cond_dim},)")
    if not math.isfinite(t):
        raise NumericError(f"non-finite time value {t!r}")


def mlp_forward(params: ParamVector, spec: MlpSpec, x: np.ndarray, t: float, c: np.ndarray) -> np.ndarray:
    """Evaluate the velocity network on a single input. Returns shape (data_dim,)."""
    x = np.asarray(x, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    _check_forward_args(spec, x, t, c)
    weights, biases = unpack_params(params, spec)
    h = np.concatenate([x, c, [float(t)]])
    for w, b in zip(weights[:-1], biases[:-1]):
        h = np.tanh(w @ h + b)
    return weights[-1] @ h + biases[-1]


def forward_single_cached(
    params: ParamVector, spec: MlpSpec, inp: np.ndarray
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Forward pass on one pre-assembled input row, keeping activations.

    Args:
        inp: shape (input_dim,), already the concatenation (x, c, t).

    Returns:
        (output, cache) where cache[i] is the input to layer i (post-tanh for
        i > 0). The cache feeds vjp_single.
    """
    weights, biases = unpack_params(params, spec)
    if inp.shape != (spec.input_dim,):
        raise ShapeError(f"input has shape {inp.shape}, expected ({spec.input_dim},)")
    cache = [inp]
    h = inp
    for w, b in zip(weights[:-1], biases[:-1]):
        h = np.tanh(w @ h + b)
        cache.append(h)
    y = weights[-1] @ h + biases[-1]
    return y, cache


def vjp_single(
    params: ParamVector, spec: MlpSpec, cache: list[np.ndarray], dy: np.ndarray
) -> ParamVector:
    """Parameter gradient of <dy, output> for a cached single-input forward."""
    weights, _ = unpack_params(params, spec)
    n_layers = len(weights)
    d_weights: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    d_biases: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    dz = np.asarray(dy, dtype=np.float64)
    d_weights[-1] = np.outer(dz, cache[-1])
    d_biases[-1] = dz
    dh = weights[-1].T @ dz
    for i in range(n_layers - 2, -1, -1):
        dz = dh * (1.0 - cache[i + 1] ** 2)  # tanh'(z) = 1 - tanh(z)^2
        d_weights[i] = np.outer(dz, cache[i])
        d_biases[i] = dz
        dh = weights[i].T @ dz
    return pack_params(d_weights, d_biases)


def forward_batch_cached(
    params: ParamVector, spec: MlpSpec, inputs: np.ndarray
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Forward pass on a (B, input_dim) matrix of pre-assembled rows."""
    weights, biases = unpack_params(params, spec)
    if inputs.ndim != 2 or inputs.shape[1] != spec.input_dim:
        raise ShapeError(f"batch input has shape {inputs.shape}, expected (B, {spec.input_dim})")
    cache = [inputs]
    h = inputs
    for w, b in zip(weights[:-1], biases[:-1]):
        h = np.tanh(h @ w.T + b)
        cache.append(h)
    y = h @ weights[-1].T + biases[-1]
    return y, cache


def vjp_batch(
    params: ParamVector, spec: MlpSpec, cache: list[np.ndarray], dy: np.ndarray
) -> ParamVector:
    """Parameter gradient of sum_b <dy[b], output[b]> for a cached batch forward."""
    weights, _ = unpack_params(params, spec)
    n_layers = len(weights)
    d_weights: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    d_biases: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    dz = np.asarray(dy, dtype=np.float64)
    d_weights[-1] = dz.T @ cache[-1]
    d_biases[-1] = dz.sum(axis=0)
    dh = dz @ weights[-1]
    for i in range(n_layers - 2, -1, -1):
        dz = dh * (1.0 - cache[i + 1] ** 2)
        d_weights[i] = dz.T @ cache[i]
        d_biases[i] = dz.sum(axis=0)
        dh = dz @ weights[i]
    return pack_params(d_weights, d_biases)


def sigmoid(z: float) -> float:
    """Numerically stable logistic function for scalars."""
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def softplus(z: float) -> float:
    """Numerically stable log(1 + exp(z)); linear for large positive z."""
    return max(z, 0.0) + math.log1p(math.exp(-abs(z)))


class DifferentiableLoss(Protocol):
    """A scalar objective of a parameter vector with an analytic gradient."""

    def value(self, params: ParamVector) -> float: ...

    def value_and_grad(self, params: ParamVector) -> tuple[float, ParamVector]: ...


class FunctionLoss:
    """Bundle a plain value function with its analytic value-and-gradient."""

    def __init__(
        self,
        value: Callable[[ParamVector], float],
        value_and_grad: Callable[[ParamVector], tuple[float, ParamVector]],
    ):
        self._value = value
        self._vag = value_and_grad

    def value(self, params: ParamVector) -> float:
        return float(self._value(params))

    def value_and_grad(self, params: ParamVector) -> tuple[float, ParamVector]:
        v, g = self._vag(params)
        return float(v), np.asarray(g, dtype=np.float64)


def loss_value_and_grad(loss: DifferentiableLoss, params: ParamVector) -> tuple[float, ParamVector]:
    """Evaluate a loss and its reverse-mode gradient, rejecting non-finite output."""
    value, grad = loss.value_and_grad(params)
    if not math.isfinite(value):
        raise NumericError(f"non-finite loss value {value!r}")
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite entries in loss gradient")
    return value, grad


def finite_diff_check(loss: DifferentiableLoss, params: ParamVector, h: float = 1e-5) -> float:
    """Compare the analytic gradient against central finite differences.

    Returns:
        max over coordinates of |analytic - numeric| / max(1e-12, |numeric|).
    """
    params = np.asarray(params, dtype=np.float64)
    _, analytic = loss_value_and_grad(loss, params)
    worst = 0.0
    work = params.copy()
    for i in range(params.size):
        orig = work[i]
        work[i] = orig + h
        up = loss.value(work)
        work[i] = orig - h
        down = loss.value(work)
        work[i] = orig
        numeric = (up - down) / (2.0 * h)
        rel = abs(analytic[i] - numeric) / max(1e-12, abs(numeric))
        if rel > worst:
            worst = rel
    return worst


@dataclass(frozen=True)
class OptimState:
    """AdamW state: moments, step counter, and hyperparameters."""

    lr: float
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0


def optim_init(
    n_params: int,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> OptimState:
    if lr <= 0:
        raise ShapeError(f"learning rate must be positive, got {lr}")
    return OptimState(
        lr=lr,
        first_moment=np.zeros(n_params),
        second_moment=np.zeros(n_params),
        beta1=beta1,
        beta2=beta2,
        eps=eps,
        weight_decay=weight_decay,
    )


def adam_step(
    state: OptimState, params: ParamVector, grad: ParamVector
) -> tuple[OptimState, ParamVector]:
    """One AdamW update (decoupled weight decay, bias-corrected moments)."""
    if grad.shape != params.shape:
        raise ShapeError(f"gradient shape {grad.shape} != parameter shape {params.shape}")
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * grad
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * (grad * grad)
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    update = state.lr * (m_hat / (np.sqrt(v_hat) + state.eps) + state.weight_decay * params)
    new_state = replace(state, first_moment=m, second_moment=v, step_count=t)
    return new_state, params - update


# --- checkpoint format -------------------------------------------------------
#
# magic "RFPK" | version u32 | layer_count u32 | per layer: rows u32, cols u32
# | all weights row-major float64 | all biases float64
# | input_dim u32 | cond_dim u32 | output_dim u32        (all little-endian)


def write_checkpoint(path: str, params: ParamVector, spec: MlpSpec) -> None:
    import os

    weights, biases = unpack_params(params, spec)
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(weights))]
    for w in weights:
        parts.append(struct.pack("<II", w.shape[0], w.shape[1]))
    for w in weights:
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
    for b in biases:
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    parts.append(struct.pack("<III", spec.input_dim, spec.cond_dim, spec.output_dim))
    blob = b"".join(parts)
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(blob)


def read_checkpoint(path: str) -> tuple[ParamVector, MlpSpec]:
    """Load a checkpoint, validating structure. Returns (params, spec)."""
    from .fileio import require_file

    require_file(path, "checkpoint")
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:4] != CHECKPOINT_MAGIC:
        raise ParseError("not a model checkpoint (bad magic)")
    version, n_layers = struct.unpack_from("<II", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise ParseError(f"unsupported checkpoint version {version}")
    if n_layers < 1 or n_layers > 1024:
        raise ParseError(f"implausible layer count {n_layers}")
    off = 12
    if len(blob) < off + 8 * n_layers:
        raise ParseError("truncated checkpoint (layer shape table)")
    shapes = []
    for _ in range(n_layers):
        r, c = struct.unpack_from("<II", blob, off)
        off += 8
        if r < 1 or c < 1:
            raise ParseError(f"bad layer shape ({r}, {c})")
        shapes.append((r, c))
    n_weights = sum(r * c for r, c in shapes)
    n_biases = sum(r for r, _ in shapes)
    expected = off + 8 * (n_weights + n_biases) + 12
    if len(blob) != expected:
        raise ParseError(f"checkpoint size {len(blob)} != expected {expected}")
    values = np.frombuffer(blob, dtype="<f8", count=n_weights + n_biases, offset=off)
    off += 8 * (n_weights + n_biases)
    input_dim, cond_dim, output_dim = struct.unpack_from("<III", blob, off)
    # structural consistency: shapes must chain and match the declared dims
    if shapes[0][1] != input_dim or shapes[-1][0] != output_dim:
        raise ShapeError("checkpoint layer shapes do not match declared dims")
    for (r_prev, _), (_, c_next) in zip(shapes[:-1], shapes[1:]):
        if r_prev != c_next:
            raise ShapeError("checkpoint layer shapes do not chain")
    if input_dim != output_dim + cond_dim + 1:
        raise ShapeError(
            f"declared dims inconsistent: input {input_dim} != data {output_dim} + cond {cond_dim} + 1"
        )
    spec = MlpSpec(data_dim=output_dim, cond_dim=cond_dim, hidden=tuple(r for r, _ in shapes[:-1]))
    return values.astype(np.float64).copy(), spec

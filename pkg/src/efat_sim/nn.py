"""Dense MLP kernel: forward pass, cross-entropy, exact backprop, SGD.

The model is a multilayer perceptron with tanh hidden activations and an
identity output layer, stored as float64 throughout. Gradients are computed
analytically with respect to every parameter and to the input batch; the
mean-over-batch convention matches :func:`cross_entropy`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, FormatError, NumericError, ShapeError
from .rng import rng_from

CHECKPOINT_MAGIC = b"EFATMDL1"


@dataclass
class MlpParams:
    """Layered weights/biases. Each entry is (W [in x out], b [out])."""

    layers: list[tuple[np.ndarray, np.ndarray]]

    @property
    def layer_sizes(self) -> list[int]:
        sizes = [self.layers[0][0].shape[0]]
        sizes.extend(w.shape[1] for w, _ in self.layers)
        return sizes

    @property
    def in_dim(self) -> int:
        return self.layers[0][0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.layers[-1][0].shape[1]

    def copy(self) -> "MlpParams":
        return MlpParams([(w.copy(), b.copy()) for w, b in self.layers])

    def allclose(self, other: "MlpParams", rtol: float = 0.0, atol: float = 0.0) -> bool:
        if self.layer_sizes != other.layer_sizes:
            return False
        return all(
            np.allclose(w, ow, rtol=rtol, atol=atol)
            and np.allclose(b, ob, rtol=rtol, atol=atol)
            for (w, b), (ow, ob) in zip(self.layers, other.layers)
        )


@dataclass
class Gradients:
    """Parameter gradients, shape-congruent with MlpParams, plus the
    gradient with respect to the input batch when requested."""

    layers: list[tuple[np.ndarray, np.ndarray]]
    input_grad: np.ndarray | None = field(default=None)


def init_params(layer_sizes: list[int], seed: int) -> MlpParams:
    """Glorot-uniform weights, zero biases, deterministic in (sizes, seed)."""
    if len(layer_sizes) < 2 or any(int(s) <= 0 for s in layer_sizes):
        raise ConfigError(f"layer_sizes must have >=2 positive entries, got {layer_sizes}")
    rng = rng_from(seed)
    layers = []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        b = np.zeros(fan_out)
        layers.append((w, b))
    return MlpParams(layers)


def _as_batch(batch) -> np.ndarray:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    if x.ndim != 2:
        raise ShapeError(f"batch must be 2-D, got shape {x.shape}")
    return x


def _as_labels(labels, n: int, num_classes: int) -> np.ndarray:
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if y.shape[0] != n:
        raise ShapeError(f"got {y.shape[0]} labels for a batch of {n} rows")
    if n < 1:
        raise DataError("need at least one example")
    if y.size and (y.min() < 0 or y.max() >= num_classes):
        raise DataError(f"labels must lie in [0, {num_classes})")
    return y


def _forward_trace(params: MlpParams, x: np.ndarray) -> list[np.ndarray]:
    if x.shape[1] != params.in_dim:
        raise ShapeError(f"batch width {x.shape[1]} != model input dim {params.in_dim}")
    acts = [x]
    h = x
    last = len(params.layers) - 1
    for i, (w, b) in enumerate(params.layers):
        z = h @ w + b
        h = z if i == last else np.tanh(z)
        acts.append(h)
    return acts


def forward(params: MlpParams, batch) -> np.ndarray:
    """Raw logits [n x classes] for a batch [n x d_in]. Pure function."""
    logits = _forward_trace(params, _as_batch(batch))[-1]
    if not np.isfinite(logits).all():
        raise NumericError("forward produced non-finite logits")
    return logits


def _stable_softmax_terms(logits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Returns (log_softmax, softmax) computed with max-subtraction."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    denom = exp.sum(axis=1, keepdims=True)
    return shifted - np.log(denom), exp / denom


def cross_entropy(logits, labels) -> float:
    """Mean over the batch of -log softmax(logits)[label]."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 2:
        raise ShapeError(f"logits must be 2-D, got shape {z.shape}")
    y = _as_labels(labels, z.shape[0], z.shape[1])
    logp, _ = _stable_softmax_terms(z)
    loss = float(-logp[np.arange(z.shape[0]), y].mean())
    if not np.isfinite(loss):
        raise NumericError("cross_entropy produced a non-finite loss")
    return loss


def value_and_grad(
    params: MlpParams,
    batch,
    labels,
    *,
    want_params: bool = True,
    want_input: bool = True,
) -> tuple[float, Gradients]:
    """Loss plus exact analytic gradients of cross_entropy(forward(.)).

    Parameter and input gradients share one backward sweep so the two views
    are bitwise-consistent.
    """
    x = _as_batch(batch)
    acts = _forward_trace(params, x)
    logits = acts[-1]
    n = x.shape[0]
    y = _as_labels(labels, n, params.out_dim)

    logp, p = _stable_softmax_terms(logits)
    loss = float(-logp[np.arange(n), y].mean())

    delta = p.copy()
    delta[np.arange(n), y] -= 1.0
    delta /= n

    layer_grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(params.layers)  # type: ignore[list-item]
    input_grad = None
    for i in range(len(params.layers) - 1, -1, -1):
        w, _ = params.layers[i]
        if want_params:
            layer_grads[i] = (acts[i].T @ delta, delta.sum(axis=0))
        if i > 0:
            delta = (delta @ w.T) * (1.0 - acts[i] * acts[i])
        elif want_input:
            input_grad = delta @ w.T

    grads = Gradients(layer_grads if want_params else [], input_grad)
    if not np.isfinite(loss):
        raise NumericError("loss is non-finite")
    return loss, grads


def backward(params: MlpParams, batch, labels) -> Gradients:
    """Gradients of the mean cross-entropy w.r.t. every parameter and the input."""
    return value_and_grad(params, batch, labels)[1]


def input_gradient(params: MlpParams, batch, labels) -> np.ndarray:
    """Gradient of the mean cross-entropy w.r.t. the input batch only."""
    return value_and_grad(params, batch, labels, want_params=False)[1].input_grad


def sgd_step(params: MlpParams, grads: Gradients, lr: float) -> MlpParams:
    """theta <- theta - lr * g, elementwise. Returns new params."""
    if lr < 0:
        raise ConfigError(f"lr must be >= 0, got {lr}")
    if len(grads.layers) != len(params.layers):
        raise ShapeError("gradient/parameter layer counts differ")
    layers = []
    for (w, b), (gw, gb) in zip(params.layers, grads.layers):
        if w.shape != gw.shape or b.shape != gb.shape:
            raise ShapeError("gradient shapes do not match parameters")
        if not (np.isfinite(gw).all() and np.isfinite(gb).all()):
            raise NumericError("non-finite gradient in sgd_step")
        layers.append((w - lr * gw, b - lr * gb))
    return MlpParams(layers)


def save_params(params: MlpParams, path) -> None:
    """Checkpoint format: magic, ASCII layer-size line, then per layer the
    raw little-endian float64 weights (row-major) followed by the bias."""
    sizes = params.layer_sizes
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + b"\n")
        fh.write((" ".join(str(s) for s in sizes) + "\n").encode("ascii"))
        for w, b in params.layers:
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_params(path) -> MlpParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    header_end = blob.find(b"\n")
    if header_end < 0 or blob[:header_end] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic")
    sizes_end = blob.find(b"\n", header_end + 1)
    if sizes_end < 0:
        raise FormatError(f"{path}: truncated checkpoint header")
    try:
        sizes = [int(tok) for tok in blob[header_end + 1 : sizes_end].split()]
    except ValueError as exc:
        raise FormatError(f"{path}: unparseable layer sizes") from exc
    if len(sizes) < 2 or any(s <= 0 for s in sizes):
        raise FormatError(f"{path}: invalid layer sizes {sizes}")
    body = blob[sizes_end + 1 :]
    layers = []
    offset = 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        nbytes = 8 * (fan_in * fan_out + fan_out)
        if offset + nbytes > len(body):
            raise FormatError(f"{path}: truncated checkpoint body")
        w = np.frombuffer(body, dtype="<f8", count=fan_in * fan_out, offset=offset)
        offset += 8 * fan_in * fan_out
        b = np.frombuffer(body, dtype="<f8", count=fan_out, offset=offset)
        offset += 8 * fan_out
        layers.append((w.reshape(fan_in, fan_out).copy(), b.copy()))
    if offset != len(body):
        raise FormatError(f"{path}: trailing bytes after checkpoint body")
    return MlpParams(layers)


def flatten_params(params: MlpParams) -> np.ndarray:
    """All parameters as one flat vector (weights row-major, then bias, per layer)."""
    return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in params.layers])


def unflatten_params(vec: np.ndarray, layer_sizes: list[int]) -> MlpParams:
    layers = []
    offset = 0
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        w = vec[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out).copy()
        offset += fan_in * fan_out
        b = vec[offset : offset + fan_out].copy()
        offset += fan_out
        layers.append((w, b))
    if offset != vec.size:
        raise ShapeError(f"vector of length {vec.size} does not match sizes {layer_sizes}")
    return MlpParams(layers)

"""Per-superpixel regressor: a small fully-connected network.

One network is shared by all superpixels; each superpixel's feature vector
runs through it independently and produces a single real value (a log-depth
estimate).  The activation pattern is fixed: rectified linear units on every
hidden layer except the last, which is logistic, and a width-1 linear output
layer.  A network with a single layer is plain affine regression, kept for
tests.

Dropout (inverted scaling, so evaluation needs no correction) is applied to
the outputs of at most the first two rectified layers, only in training mode.
The forward pass records a tape - inputs, pre-activations, dropout masks -
from which ``backward`` accumulates parameter gradients for a whole image in
one call.  Parameters travel as a single flat vector where convenient, which
keeps the optimizer and finite-difference checks trivial.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

RELU = "relu"
LOGISTIC = "logistic"
LINEAR = "linear"


def standard_activations(num_layers: int) -> tuple[str, ...]:
    """relu ... relu, logistic, linear; a single layer is bare linear."""
    if num_layers < 1:
        raise ValueError("need at least one layer")
    if num_layers == 1:
        return (LINEAR,)
    return (RELU,) * (num_layers - 2) + (LOGISTIC, LINEAR)


@dataclass
class UnaryModel:
    """Weights are (fan_in, fan_out); the forward pass is x @ W + b."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: tuple[str, ...]
    dropout_layers: tuple[int, ...]

    def __post_init__(self):
        num_layers = len(self.weights)
        if num_layers != len(self.biases) or num_layers != len(self.activations):
            raise ValueError("weights, biases and activations must align")
        if self.activations != standard_activations(num_layers):
            raise ValueError(
                "activation pattern must be relu*, logistic, linear "
                "(or bare linear for a single layer)"
            )
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {i}: weight/bias shapes disagree")
            if i and w.shape[0] != self.weights[i - 1].shape[1]:
                raise ValueError(f"layer {i}: fan-in does not match previous layer")
        if self.weights[-1].shape[1] != 1:
            raise ValueError("output width must be exactly 1")
        for i in self.dropout_layers:
            if self.activations[i] != RELU:
                raise ValueError("dropout is restricted to rectified layers")

    @property
    def num_layers(self):
        return len(self.weights)

    @property
    def input_dim(self):
        return self.weights[0].shape[0]

    @property
    def layer_dims(self):
        return (self.input_dim,) + tuple(w.shape[1] for w in self.weights)


def parameter_count(layer_dims) -> int:
    return sum(
        layer_dims[i] * layer_dims[i + 1] + layer_dims[i + 1]
        for i in range(len(layer_dims) - 1)
    )


def build_model(layer_dims, seed: int) -> UnaryModel:
    """Uniform [-1/sqrt(fan_in), 1/sqrt(fan_in)] weights, zero biases."""
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2:
        raise ValueError("layer_dims needs an input width and an output width")
    if any(d <= 0 for d in dims):
        raise ValueError("layer widths must be positive")
    if dims[-1] != 1:
        raise ValueError("output width must be exactly 1")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    num_layers = len(weights)
    rectified = max(0, num_layers - 2)
    dropout_layers = tuple(range(min(2, rectified)))
    return UnaryModel(
        weights=weights,
        biases=biases,
        activations=standard_activations(num_layers),
        dropout_layers=dropout_layers,
    )


def _apply(activation, pre):
    if activation == RELU:
        return np.maximum(pre, 0.0)
    if activation == LOGISTIC:
        return expit(pre)  # saturates cleanly instead of overflowing exp
    return pre


@dataclass
class ForwardTape:
    """Everything needed to rerun or differentiate one forward pass."""

    inputs: np.ndarray
    pres: list[np.ndarray]
    posts: list[np.ndarray]
    masks: list[np.ndarray | None]
    keep_prob: float


def forward(model: UnaryModel, features, mode: str = "eval", rng=None, keep_prob: float = 1.0):
    """Run the network over one feature vector or a (count, dim) batch.

    Returns (values, tape); values is a scalar for a single vector, else a
    1-D array.  Training mode draws an independent dropout mask per row.
    """
    if mode not in ("eval", "train"):
        raise ValueError("mode must be 'eval' or 'train'")
    if not 0.0 < keep_prob <= 1.0:
        raise ValueError("keep_prob must be in (0, 1]")
    x = np.asarray(features, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != model.input_dim:
        raise ValueError(f"expected feature dimension {model.input_dim}")
    dropping = mode == "train" and keep_prob < 1.0
    if dropping and rng is None:
        raise ValueError("training mode with dropout needs an rng")
    pres, posts, masks = [], [], []
    out = x
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        pre = out @ w + b
        post = _apply(model.activations[i], pre)
        mask = None
        if dropping and i in model.dropout_layers:
            mask = (rng.random(post.shape) < keep_prob).astype(float)
            post = post * mask / keep_prob
        pres.append(pre)
        posts.append(post)
        masks.append(mask)
        out = post
    tape = ForwardTape(inputs=x, pres=pres, posts=posts, masks=masks, keep_prob=keep_prob)
    values = out[:, 0]
    return (float(values[0]) if single else values), tape


def replay(model: UnaryModel, tape: ForwardTape):
    """Recompute the forward output with the recorded dropout masks."""
    out = tape.inputs
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        post = _apply(model.activations[i], out @ w + b)
        if tape.masks[i] is not None:
            post = post * tape.masks[i] / tape.keep_prob
        out = post
    return out[:, 0]


def backward(model: UnaryModel, tape: ForwardTape, residual) -> np.ndarray:
    """Parameter gradient of sum_p residual_p * z_p, as one flat vector.

    Contributions of the batch rows accumulate additively, which is exactly
    the per-image chain rule when ``residual`` is the loss gradient wrt z.
    """
    res = np.atleast_1d(np.asarray(residual, dtype=float))
    if res.shape != (tape.inputs.shape[0],):
        raise ValueError("residual must have one entry per batch row")
    grads_w = [None] * model.num_layers
    grads_b = [None] * model.num_layers
    delta = res[:, None]
    for i in range(model.num_layers - 1, -1, -1):
        act = model.activations[i]
        if tape.masks[i] is not None:
            delta = delta * tape.masks[i] / tape.keep_prob
        if act == RELU:
            delta = delta * (tape.pres[i] > 0.0)
        elif act == LOGISTIC:
            sig = _apply(LOGISTIC, tape.pres[i])
            delta = delta * sig * (1.0 - sig)
        layer_in = tape.inputs if i == 0 else tape.posts[i - 1]
        grads_w[i] = layer_in.T @ delta
        grads_b[i] = delta.sum(axis=0)
        if i:
            delta = delta @ model.weights[i].T
    return pack(grads_w, grads_b)


def pack(weights, biases) -> np.ndarray:
    """Flatten per-layer arrays into one vector (layer 0 W, b, layer 1 ...)."""
    parts = []
    for w, b in zip(weights, biases):
        parts.append(np.ravel(w))
        parts.append(np.ravel(b))
    return np.concatenate(parts)


def get_params(model: UnaryModel) -> np.ndarray:
    return pack(model.weights, model.biases)


def set_params(model: UnaryModel, vector) -> None:
    vector = np.asarray(vector, dtype=float)
    offset = 0
    for i, w in enumerate(model.weights):
        size = w.size
        model.weights[i] = vector[offset : offset + size].reshape(w.shape)
        offset += size
        size = model.biases[i].size
        model.biases[i] = vector[offset : offset + size].copy()
        offset += size
    if offset != vector.size:
        raise ValueError("parameter vector has the wrong length")


def first_layer_slice(model: UnaryModel) -> slice:
    """Positions of layer 0's weight and bias inside the flat vector."""
    return slice(0, model.weights[0].size + model.biases[0].size)

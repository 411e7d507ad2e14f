"""Plain-numpy MLP mapping fit coefficients to spectral deformation coefficients.

The regressor takes [identity, source expression, target expression] and outputs 3k
spectral coefficients. Forward/backward passes are hand-written matrix math; the
training loop is Adam with seeded shuffling, so identical configs reproduce
identical parameters bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SizingError, TrainingDivergenceError
from .fileio import load_bundle, save_bundle
from .spectral import DisplacementField, SpectralBasis, decode


@dataclass
class MlpParams:
    """Affine layer weights/biases plus activation tags ('relu' or 'linear')."""

    weights: list
    biases: list
    activations: list

    def validate(self):
        if not (len(self.weights) == len(self.biases) == len(self.activations)):
            raise SizingError("layer lists must have equal length")
        if not self.weights:
            raise SizingError("network needs at least one layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise SizingError(f"layer {i}: weight must be (out, in), bias (out,)")
            if i > 0 and w.shape[1] != self.weights[i - 1].shape[0]:
                raise SizingError(
                    f"layer {i} input dim {w.shape[1]} does not chain from "
                    f"layer {i - 1} output dim {self.weights[i - 1].shape[0]}"
                )
        for act in self.activations:
            if act not in ("relu", "linear"):
                raise SizingError(f"unknown activation {act!r}")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    def save(self, path, meta: dict | None = None) -> None:
        planes = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            planes[f"weight_{i}"] = w
            planes[f"bias_{i}"] = b
        merged = {"n_layers": len(self.weights), "activations": list(self.activations)}
        merged.update(meta or {})
        save_bundle(path, planes, meta=merged)

    @classmethod
    def load(cls, path) -> "MlpParams":
        planes, meta = load_bundle(path)
        n = int(meta["n_layers"])
        params = cls(
            weights=[np.asarray(planes[f"weight_{i}"], dtype=np.float64) for i in range(n)],
            biases=[np.asarray(planes[f"bias_{i}"], dtype=np.float64) for i in range(n)],
            activations=list(meta["activations"]),
        )
        params.validate()
        return params


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    epsilon: float = 1e-8
    batch_size: int = 32
    epochs: int = 200
    seed: int = 0
    weight_decay: float = 0.0
    hidden: tuple = (256, 256)


def mlp_init(dims, seed: int) -> MlpParams:
    """Uniform fan-in initialization: W ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), b = 0.

    dims chains input -> hidden... -> output; hidden layers get ReLU, the last layer
    is linear."""
    dims = [int(d) for d in dims]
    if len(dims) < 2:
        raise SizingError("need at least an input and an output dimension")
    if any(d <= 0 for d in dims):
        raise SizingError("layer widths must be positive")
    rng = np.random.default_rng(seed)
    weights, biases, acts = [], [], []
    for i in range(len(dims) - 1):
        fan_in = dims[i]
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(dims[i + 1], dims[i])))
        biases.append(np.zeros(dims[i + 1]))
        acts.append("linear" if i == len(dims) - 2 else "relu")
    params = MlpParams(weights, biases, acts)
    params.validate()
    return params


def _forward_trace(params: MlpParams, x: np.ndarray):
    """Returns (output, pre-activations, post-activations including the input)."""
    post = [x]
    pre = []
    h = x
    for w, b, act in zip(params.weights, params.biases, params.activations):
        z = h @ w.T + b
        pre.append(z)
        # ReLU subgradient at 0 is taken as 0, so the forward uses strict positivity.
        h = np.where(z > 0, z, 0.0) if act == "relu" else z
        post.append(h)
    return h, pre, post


def mlp_forward(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Evaluate the network on (d,) or (B, d) inputs."""
    params.validate()
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.shape[1] != params.input_dim:
        raise SizingError(f"input dim {arr.shape[1]} != network input {params.input_dim}")
    out, _, _ = _forward_trace(params, arr)
    return out[0] if single else out


def mlp_gradient(params: MlpParams, inputs: np.ndarray, targets: np.ndarray):
    """Reverse-mode gradients of the batch MSE loss.

    loss = mean over batch and output dims of (y - t)^2; the gradient of the batch
    mean equals the mean of per-sample gradients."""
    params.validate()
    x = np.asarray(inputs, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if t.ndim == 1:
        t = t[None, :]
    if x.shape[0] != t.shape[0]:
        raise SizingError("inputs and targets must share the batch size")
    if t.shape[1] != params.output_dim:
        raise SizingError("target dim does not match the network output")

    batch = x.shape[0]
    y, pre, post = _forward_trace(params, x)
    loss = float(np.mean((y - t) ** 2))
    if not np.isfinite(loss):
        # Backpropagating non-finite values only spreads NaNs; hand the loss to the
        # caller, whose divergence guard is responsible for aborting.
        return ([np.zeros_like(w) for w in params.weights],
                [np.zeros_like(b) for b in params.biases], loss)

    grad_w = [None] * len(params.weights)
    grad_b = [None] * len(params.weights)
    # d loss / d y for the mean over (batch * output) entries
    delta = 2.0 * (y - t) / (batch * params.output_dim)
    for i in reversed(range(len(params.weights))):
        if params.activations[i] == "relu":
            delta = delta * (pre[i] > 0)
        grad_w[i] = delta.T @ post[i]
        grad_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ params.weights[i]
    return grad_w, grad_b, loss


def train_shape_branch(inputs: np.ndarray, targets: np.ndarray,
                       config: TrainConfig | None = None,
                       params: MlpParams | None = None):
    """Adam training of the regressor; returns (params, per-epoch mean losses).

    Deterministic for a fixed config: initialization and per-epoch shuffling come
    from one seeded generator. A non-finite loss aborts with diagnostics."""
    config = config or TrainConfig()
    x = np.asarray(inputs, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if x.ndim != 2 or t.ndim != 2 or x.shape[0] != t.shape[0]:
        raise SizingError("inputs (B, d) and targets (B, o) must pair up")
    if params is None:
        dims = [x.shape[1], *config.hidden, t.shape[1]]
        params = mlp_init(dims, config.seed)
    params.validate()

    rng = np.random.default_rng(config.seed + 1)
    m_w = [np.zeros_like(w) for w in params.weights]
    v_w = [np.zeros_like(w) for w in params.weights]
    m_b = [np.zeros_like(b) for b in params.biases]
    v_b = [np.zeros_like(b) for b in params.biases]
    step = 0
    history = []
    n = x.shape[0]
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, config.batch_size):
            batch_idx = order[start : start + config.batch_size]
            gw, gb, loss = mlp_gradient(params, x[batch_idx], t[batch_idx])
            if not np.isfinite(loss):
                raise TrainingDivergenceError(
                    f"non-finite loss {loss} at epoch {epoch}, batch {start // config.batch_size}",
                    epoch=epoch, batch=start // config.batch_size, loss=loss,
                )
            epoch_losses.append(loss)
            step += 1
            bc1 = 1.0 - config.beta1 ** step
            bc2 = 1.0 - config.beta2 ** step
            for i in range(len(params.weights)):
                g = gw[i]
                if config.weight_decay > 0:
                    g = g + config.weight_decay * params.weights[i]
                m_w[i] = config.beta1 * m_w[i] + (1 - config.beta1) * g
                v_w[i] = config.beta2 * v_w[i] + (1 - config.beta2) * g * g
                params.weights[i] -= config.learning_rate * (m_w[i] / bc1) / (
                    np.sqrt(v_w[i] / bc2) + config.epsilon
                )
                m_b[i] = config.beta1 * m_b[i] + (1 - config.beta1) * gb[i]
                v_b[i] = config.beta2 * v_b[i] + (1 - config.beta2) * gb[i] * gb[i]
                params.biases[i] -= config.learning_rate * (m_b[i] / bc1) / (
                    np.sqrt(v_b[i] / bc2) + config.epsilon
                )
        history.append(float(np.mean(epoch_losses)))
    return params, history


def predict_deformation(params: MlpParams, identity: np.ndarray,
                        expression_src: np.ndarray, expression_tgt: np.ndarray,
                        basis: SpectralBasis) -> DisplacementField:
    """Decode the network's spectral prediction into a per-vertex field."""
    features = np.concatenate([
        np.asarray(identity, dtype=np.float64).reshape(-1),
        np.asarray(expression_src, dtype=np.float64).reshape(-1),
        np.asarray(expression_tgt, dtype=np.float64).reshape(-1),
    ])
    if features.shape[0] != params.input_dim:
        raise SizingError(
            f"feature dim {features.shape[0]} != network input {params.input_dim}"
        )
    coeffs = mlp_forward(params, features)
    if coeffs.shape[0] != 3 * basis.k:
        raise SizingError("network output dim does not match 3k of the basis")
    return decode(basis, coeffs)

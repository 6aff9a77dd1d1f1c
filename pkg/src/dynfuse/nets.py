"""Minimal dense-network substrate with hand-written backpropagation.

Provides the pieces the fusion classifier is built from: an MLP with cached
forward activations, numerically stable softmax / cross-entropy / MSE,
an Adam optimizer with decoupled weight decay, and a central finite-difference
gradient checker used as the independent oracle for every backward pass.

All matrices are plain float64 numpy arrays, batch rows first.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PROB_FLOOR = 1e-12
ACTIVATIONS = ("relu", "identity", "sigmoid", "softplus")


def stable_sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _activate(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "identity":
        return z
    if kind == "sigmoid":
        return stable_sigmoid(z)
    if kind == "softplus":
        return np.logaddexp(0.0, z)
    raise ValueError(f"unknown activation {kind!r}, expected one of {ACTIVATIONS}")


def _activate_grad(kind: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Derivative of the activation, using output `a` where that is cheaper."""
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    if kind == "identity":
        return np.ones_like(z)
    if kind == "sigmoid":
        return a * (1.0 - a)
    if kind == "softplus":
        return stable_sigmoid(z)
    raise ValueError(f"unknown activation {kind!r}")


@dataclass
class DenseLayer:
    """One affine layer: y = act(x @ W.T + b), optional inverted dropout on y."""

    weight: np.ndarray  # [out, in]
    bias: np.ndarray  # [out]
    activation: str = "identity"
    dropout: float = 0.0

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2:
            raise ValueError("layer weight must be 2-D [out, in]")
        if self.bias.shape != (self.weight.shape[0],):
            raise ValueError(
                f"bias shape {self.bias.shape} does not match weight rows {self.weight.shape[0]}"
            )
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass
class NetGradients:
    weights: list
    biases: list
    input: np.ndarray


class MlpNetwork:
    """Stack of DenseLayers with a mutable activation cache for backprop.

    The cache written by forward() is consumed by backward(); applying a
    parameter update invalidates it. A zero-layer network is the identity.
    """

    def __init__(self, layers: list[DenseLayer]):
        for i in range(1, len(layers)):
            if layers[i].in_dim != layers[i - 1].out_dim:
                raise ValueError(
                    f"layer {i} expects {layers[i].in_dim} inputs but layer {i - 1} "
                    f"produces {layers[i - 1].out_dim}"
                )
        self.layers = list(layers)
        self._cache = None

    @property
    def in_dim(self) -> int | None:
        return self.layers[0].in_dim if self.layers else None

    @property
    def out_dim(self) -> int | None:
        return self.layers[-1].out_dim if self.layers else None

    def forward(self, x: np.ndarray, train_mode: bool = False, rng=None) -> np.ndarray:
        """Run the batch through the network, caching per-layer activations.

        Dropout fires only with train_mode=True on layers with dropout > 0,
        drawing masks from `rng` (inverted scaling, so eval needs no rescale).
        """
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2:
            raise ValueError(f"input must be 2-D [batch, features], got {x.shape}")
        if self.layers and x.shape[1] != self.layers[0].in_dim:
            raise ValueError(
                f"layer 0 expects {self.layers[0].in_dim} input features, got {x.shape[1]}"
            )
        cache = []
        out = x
        for i, layer in enumerate(self.layers):
            z = out @ layer.weight.T + layer.bias
            a = _activate(layer.activation, z)
            mask = None
            if train_mode and layer.dropout > 0.0:
                if rng is None:
                    raise ValueError("train_mode forward with dropout requires rng")
                keep = 1.0 - layer.dropout
                mask = (rng.random(a.shape) < keep).astype(np.float64) / keep
                a = a * mask
            cache.append({"x": out, "z": z, "a": a, "mask": mask})
            out = a
        self._cache = {"input": x, "layers": cache}
        if not np.all(np.isfinite(out)):
            raise FloatingPointError("non-finite values in forward output")
        return out

    def backward(self, output_grad: np.ndarray) -> NetGradients:
        """Backpropagate d(loss)/d(output) to every parameter and the input."""
        if self._cache is None:
            raise RuntimeError("backward called without a cached forward pass")
        g = np.asarray(output_grad, dtype=np.float64)
        expected = self._cache["layers"][-1]["a"].shape if self.layers else self._cache["input"].shape
        if g.shape != expected:
            raise ValueError(f"output_grad shape {g.shape}, expected {expected}")
        w_grads = [None] * len(self.layers)
        b_grads = [None] * len(self.layers)
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            c = self._cache["layers"][i]
            if c["mask"] is not None:
                g = g * c["mask"]
            g = g * _activate_grad(layer.activation, c["z"], c["a"])
            w_grads[i] = g.T @ c["x"]
            b_grads[i] = g.sum(axis=0)
            g = g @ layer.weight
        return NetGradients(weights=w_grads, biases=b_grads, input=g)

    def parameters(self) -> list:
        """Flat list of parameter arrays, weights then bias per layer."""
        out = []
        for layer in self.layers:
            out.append(layer.weight)
            out.append(layer.bias)
        return out

    def invalidate_cache(self) -> None:
        self._cache = None


def make_mlp(dims, activations, rng, dropout=0.0) -> MlpNetwork:
    """Build an MLP with He-scaled normal init for relu layers.

    dims: [in, h1, ..., out]; activations: one per layer. `dropout` applies to
    every layer whose activation is relu (hidden layers of encoders).
    """
    if len(activations) != len(dims) - 1:
        raise ValueError("need one activation per layer")
    layers = []
    for i, act in enumerate(activations):
        fan_in, fan_out = dims[i], dims[i + 1]
        scale = np.sqrt(2.0 / fan_in) if act == "relu" else np.sqrt(1.0 / fan_in)
        w = rng.normal(0.0, scale, size=(fan_out, fan_in))
        b = np.zeros(fan_out)
        layers.append(
            DenseLayer(w, b, activation=act, dropout=dropout if act == "relu" else 0.0)
        )
    return MlpNetwork(layers)


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Max-subtracted softmax; output rows sum to 1 for any finite input."""
    z = np.asarray(logits, dtype=np.float64)
    if z.size == 0:
        raise ValueError("softmax of an empty array")
    if not np.all(np.isfinite(z)):
        raise ValueError("softmax input must be finite")
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_vjp(probs: np.ndarray, grad: np.ndarray, axis: int = -1) -> np.ndarray:
    """Vector-Jacobian product of softmax given its output `probs`."""
    inner = (grad * probs).sum(axis=axis, keepdims=True)
    return probs * (grad - inner)


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log-probability of the true class.

    Probabilities are clamped to >= 1e-12 before the log, so the result is
    finite for any row-stochastic input.
    """
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels)
    if p.ndim != 2:
        raise ValueError("probs must be 2-D [batch, classes]")
    if y.shape != (p.shape[0],):
        raise ValueError(f"labels shape {y.shape} does not match batch {p.shape[0]}")
    if y.size and (y.min() < 0 or y.max() >= p.shape[1]):
        raise ValueError(f"label out of range [0, {p.shape[1]})")
    p_true = p[np.arange(p.shape[0]), y]
    return float(np.mean(-np.log(np.maximum(p_true, PROB_FLOOR))))


def mse(pred: np.ndarray, target: np.ndarray) -> float:
    a = np.asarray(pred, dtype=np.float64)
    b = np.asarray(target, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"mse shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


@dataclass
class AdamState:
    """Adam accumulators for one list of parameter arrays (AdamW-style decay)."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.0
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 < self.beta1 < 1.0 or not 0.0 < self.beta2 < 1.0:
            raise ValueError("beta1 and beta2 must lie in (0, 1)")


def adam_step(params: list, grads: list, state: AdamState) -> None:
    """One in-place Adam update with decoupled weight decay.

    Weight decay multiplies parameters directly by (1 - lr * wd) instead of
    being folded into the gradient.
    """
    if len(params) != len(grads):
        raise ValueError("params and grads length mismatch")
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p) for p in params]
        state.second_moment = [np.zeros_like(p) for p in params]
    if len(state.first_moment) != len(params):
        raise ValueError("Adam state does not match parameter count")
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        if state.weight_decay:
            p *= 1.0 - state.lr * state.weight_decay
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str
    h: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol

    def summary(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return (
            f"gradient check {status}: max rel err {self.max_rel_error:.3e} "
            f"(worst {self.worst_param}, h={self.h:g}, tol={self.tol:g})"
        )


# Below this floor both gradients count as zero; keeps the relative error
# meaningful where central differences are pure roundoff.
_REL_FLOOR = 1e-6


def compare_gradients(params: dict, loss_fn, analytic: dict, h: float = 1e-5,
                      tol: float = 1e-4) -> GradCheckReport:
    """Central-difference check of `analytic` against `loss_fn`.

    params: name -> array, perturbed in place element by element and restored.
    loss_fn: () -> float evaluated at the current parameter values.
    analytic: name -> gradient array (same shapes as params).
    """
    if h <= 0:
        raise ValueError("h must be positive")
    worst = 0.0
    worst_name = "(none)"
    for name, p in params.items():
        a = np.asarray(analytic[name], dtype=np.float64)
        if a.shape != p.shape:
            raise ValueError(f"analytic gradient for {name} has shape {a.shape}, want {p.shape}")
        flat = p.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            f_plus = loss_fn()
            flat[idx] = orig - h
            f_minus = loss_fn()
            flat[idx] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            ana = a.reshape(-1)[idx]
            denom = max(abs(ana), abs(numeric), _REL_FLOOR)
            err = abs(ana - numeric) / denom
            if err > worst:
                worst = err
                worst_name = f"{name}[{idx}]"
    return GradCheckReport(max_rel_error=worst, worst_param=worst_name, h=h, tol=tol)


def finite_diff_check(net: MlpNetwork, x: np.ndarray, loss_fn, h: float = 1e-5,
                      tol: float = 1e-4) -> GradCheckReport:
    """Check net.backward against central differences for a scalar loss.

    loss_fn maps the network output matrix to (loss, d_loss/d_output).
    A network without parameters passes vacuously.
    """
    x = np.asarray(x, dtype=np.float64)

    def scalar_loss():
        return float(loss_fn(net.forward(x))[0])

    out = net.forward(x)
    _, out_grad = loss_fn(out)
    grads = net.backward(np.asarray(out_grad, dtype=np.float64))
    params = {}
    analytic = {}
    for i, layer in enumerate(net.layers):
        params[f"layer{i}.weight"] = layer.weight
        params[f"layer{i}.bias"] = layer.bias
        analytic[f"layer{i}.weight"] = grads.weights[i]
        analytic[f"layer{i}.bias"] = grads.biases[i]
    return compare_gradients(params, scalar_loss, analytic, h=h, tol=tol)

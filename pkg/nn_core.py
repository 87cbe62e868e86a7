"""
Dense Neural Network Engine
Float64 MLPs with exact backpropagation, Adam/SGD and Polyak averaging
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Sequence, Union

import numpy as np

from errors import CheckpointError, ContractError, TrainingError

logger = logging.getLogger(__name__)

ACTIVATIONS = ("relu", "tanh", "identity")


def _activate(tag: str, z: np.ndarray) -> np.ndarray:
    if tag == "relu":
        return np.maximum(z, 0.0)
    if tag == "tanh":
        return np.tanh(z)
    return z


def _activation_grad(tag: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if tag == "relu":
        # subgradient at exactly zero is taken as 0
        return (z > 0).astype(np.float64)
    if tag == "tanh":
        return 1.0 - a * a
    return np.ones_like(z)


class Mlp:
    """Fully connected network; weights[k] has shape (fan_in, fan_out)."""

    def __init__(self, sizes: Sequence[int], activations: Sequence[str],
                 weights: Sequence[np.ndarray], biases: Sequence[np.ndarray]):
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2:
            raise ContractError(f"an MLP needs at least two layer sizes, got {sizes}")
        if len(activations) != len(sizes) - 1:
            raise ContractError(f"{len(sizes) - 1} layers need as many activations, got {len(activations)}")
        for tag in activations:
            if tag not in ACTIVATIONS:
                raise ContractError(f"unknown activation {tag!r}")
        self.sizes = sizes
        self.activations = list(activations)
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[k], sizes[k + 1]) or b.shape != (sizes[k + 1],):
                raise ContractError(f"layer {k} parameter shapes {w.shape}/{b.shape} "
                                    f"do not match sizes {sizes[k]}->{sizes[k + 1]}")

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    @property
    def parameter_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "Mlp":
        return Mlp(self.sizes, self.activations,
                   [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def same_architecture(self, other: "Mlp") -> bool:
        return self.sizes == other.sizes and self.activations == other.activations

    def flat_parameters(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "sizes": list(self.sizes),
            "activations": list(self.activations),
            "parameters": [float(v) for v in self.flat_parameters()],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Mlp":
        try:
            sizes = [int(s) for s in data["sizes"]]
            activations = list(data["activations"])
            flat = np.asarray(data["parameters"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as e:
            raise CheckpointError(f"malformed network entry: {e}")
        weights, biases, offset = [], [], 0
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            n_w = fan_in * fan_out
            if offset + n_w + fan_out > flat.size:
                raise CheckpointError(f"parameter array too short for sizes {sizes}")
            weights.append(flat[offset:offset + n_w].reshape(fan_in, fan_out))
            offset += n_w
            biases.append(flat[offset:offset + fan_out].copy())
            offset += fan_out
        if offset != flat.size:
            raise CheckpointError(f"parameter array has {flat.size - offset} extra values for sizes {sizes}")
        try:
            return cls(sizes, activations, weights, biases)
        except ContractError as e:
            raise CheckpointError(str(e))


@dataclass
class GradientSet:
    """Gradients mirroring an Mlp's parameters, plus the gradient w.r.t. the input."""

    weights: List[np.ndarray]
    biases: List[np.ndarray]
    inputs: np.ndarray


def init_params(sizes: Sequence[int], activations: Sequence[str], rng: np.random.Generator,
                output_scale: float = 1.0) -> Mlp:
    """Uniform +-1/sqrt(fan_in) initialisation; the last layer is multiplied by ``output_scale``."""
    weights, biases = [], []
    last = len(sizes) - 2
    for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        b = rng.uniform(-bound, bound, size=fan_out)
        if k == last:
            w *= output_scale
            b *= output_scale
        weights.append(w)
        biases.append(b)
    return Mlp(sizes, activations, weights, biases)


def _as_batch(net: Mlp, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    batch = x.reshape(1, -1) if x.ndim == 1 else x
    if batch.ndim != 2 or batch.shape[1] != net.sizes[0]:
        raise ContractError(f"input shape {x.shape} does not match first layer size {net.sizes[0]}")
    return batch


def _forward_cache(net: Mlp, batch: np.ndarray):
    pre, post = [], [batch]
    a = batch
    for w, b, tag in zip(net.weights, net.biases, net.activations):
        z = a @ w + b
        a = _activate(tag, z)
        pre.append(z)
        post.append(a)
    return pre, post


def forward(net: Mlp, x: np.ndarray) -> np.ndarray:
    """Evaluate the network on one vector or a (batch, features) matrix."""
    x = np.asarray(x, dtype=np.float64)
    _, post = _forward_cache(net, _as_batch(net, x))
    out = post[-1]
    return out[0] if x.ndim == 1 else out


def backward(net: Mlp, x: np.ndarray, upstream: np.ndarray) -> GradientSet:
    """
    Reverse-mode gradients of ``sum(forward(net, x) * upstream)``.

    Parameter gradients are summed over the batch. The input gradient keeps the
    shape of ``x`` and is what turns a critic into an action gradient.
    """
    x = np.asarray(x, dtype=np.float64)
    batch = _as_batch(net, x)
    upstream = np.asarray(upstream, dtype=np.float64).reshape(batch.shape[0], -1)
    if upstream.shape[1] != net.sizes[-1]:
        raise ContractError(f"upstream shape {upstream.shape} does not match output size {net.sizes[-1]}")
    pre, post = _forward_cache(net, batch)
    grad_w: List[np.ndarray] = [None] * net.num_layers
    grad_b: List[np.ndarray] = [None] * net.num_layers
    delta = upstream
    for k in reversed(range(net.num_layers)):
        delta = delta * _activation_grad(net.activations[k], pre[k], post[k + 1])
        grad_w[k] = post[k].T @ delta
        grad_b[k] = delta.sum(axis=0)
        delta = delta @ net.weights[k].T
    inputs = delta[0] if x.ndim == 1 else delta
    return GradientSet(grad_w, grad_b, inputs)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m_weights: List[np.ndarray] = field(default_factory=list)
    v_weights: List[np.ndarray] = field(default_factory=list)
    m_biases: List[np.ndarray] = field(default_factory=list)
    v_biases: List[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_network(cls, net: Mlp, lr: float = 1e-3, beta1: float = 0.9,
                    beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(
            lr=lr, beta1=beta1, beta2=beta2, eps=eps,
            m_weights=[np.zeros_like(w) for w in net.weights],
            v_weights=[np.zeros_like(w) for w in net.weights],
            m_biases=[np.zeros_like(b) for b in net.biases],
            v_biases=[np.zeros_like(b) for b in net.biases],
        )

    def copy(self) -> "AdamState":
        return AdamState(self.lr, self.beta1, self.beta2, self.eps, self.step,
                         [m.copy() for m in self.m_weights], [v.copy() for v in self.v_weights],
                         [m.copy() for m in self.m_biases], [v.copy() for v in self.v_biases])

    def to_dict(self) -> Dict[str, Any]:
        def flat(arrays):
            return [float(v) for a in arrays for v in a.ravel()]
        return {
            "kind": "adam", "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2,
            "eps": self.eps, "step": self.step,
            "m_weights": flat(self.m_weights), "v_weights": flat(self.v_weights),
            "m_biases": flat(self.m_biases), "v_biases": flat(self.v_biases),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any], net: Mlp) -> "AdamState":
        def unflat(values, shapes):
            values = np.asarray(values, dtype=np.float64)
            expected = sum(int(np.prod(s)) for s in shapes)
            if values.size != expected:
                raise CheckpointError(f"optimizer moment array has {values.size} values, expected {expected}")
            out, offset = [], 0
            for shape in shapes:
                size = int(np.prod(shape))
                out.append(values[offset:offset + size].reshape(shape))
                offset += size
            return out
        try:
            w_shapes = [w.shape for w in net.weights]
            b_shapes = [b.shape for b in net.biases]
            return cls(
                lr=float(data["lr"]), beta1=float(data["beta1"]), beta2=float(data["beta2"]),
                eps=float(data["eps"]), step=int(data["step"]),
                m_weights=unflat(data["m_weights"], w_shapes), v_weights=unflat(data["v_weights"], w_shapes),
                m_biases=unflat(data["m_biases"], b_shapes), v_biases=unflat(data["v_biases"], b_shapes),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise CheckpointError(f"malformed optimizer entry: {e}")


@dataclass
class SgdState:
    lr: float = 1e-3
    step: int = 0

    @classmethod
    def for_network(cls, net: Mlp, lr: float = 1e-3) -> "SgdState":
        return cls(lr=lr)

    def copy(self) -> "SgdState":
        return SgdState(self.lr, self.step)

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": "sgd", "lr": self.lr, "step": self.step}

    @classmethod
    def from_dict(cls, data: Dict[str, Any], net: Mlp) -> "SgdState":
        try:
            return cls(lr=float(data["lr"]), step=int(data["step"]))
        except (KeyError, TypeError, ValueError) as e:
            raise CheckpointError(f"malformed optimizer entry: {e}")


OptimizerState = Union[AdamState, SgdState]


def _check_gradients(net: Mlp, grads: GradientSet) -> None:
    if len(grads.weights) != net.num_layers or len(grads.biases) != net.num_layers:
        raise ContractError(f"gradient set has {len(grads.weights)} layers, network has {net.num_layers}")
    for k in range(net.num_layers):
        if grads.weights[k].shape != net.weights[k].shape or grads.biases[k].shape != net.biases[k].shape:
            raise ContractError(f"layer {k} gradient shape does not match the parameters")
        if not np.all(np.isfinite(grads.weights[k])):
            raise TrainingError(f"non-finite gradient in layer {k} weights")
        if not np.all(np.isfinite(grads.biases[k])):
            raise TrainingError(f"non-finite gradient in layer {k} biases")


def adam_step(net: Mlp, grads: GradientSet, state: AdamState) -> None:
    """One bias-corrected Adam descent step, updating ``net`` and ``state`` in place."""
    _check_gradients(net, grads)
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1 ** state.step
    correction2 = 1.0 - b2 ** state.step
    params = list(zip(net.weights, grads.weights, state.m_weights, state.v_weights)) + \
        list(zip(net.biases, grads.biases, state.m_biases, state.v_biases))
    for param, grad, m, v in params:
        m *= b1
        m += (1.0 - b1) * grad
        v *= b2
        v += (1.0 - b2) * grad * grad
        m_hat = m / correction1
        v_hat = v / correction2
        param -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def sgd_step(net: Mlp, grads: GradientSet, state: SgdState) -> None:
    _check_gradients(net, grads)
    state.step += 1
    for param, grad in zip(net.weights + net.biases, grads.weights + grads.biases):
        param -= state.lr * grad


def make_optimizer(net: Mlp, kind: str, lr: float) -> OptimizerState:
    if kind == "adam":
        return AdamState.for_network(net, lr=lr)
    if kind == "sgd":
        return SgdState.for_network(net, lr=lr)
    raise ContractError(f"unknown optimizer {kind!r}")


def optimizer_step(net: Mlp, grads: GradientSet, state: OptimizerState) -> None:
    if isinstance(state, AdamState):
        adam_step(net, grads, state)
    else:
        sgd_step(net, grads, state)


def optimizer_from_dict(data: Dict[str, Any], net: Mlp) -> OptimizerState:
    kind = data.get("kind") if isinstance(data, dict) else None
    if kind == "adam":
        return AdamState.from_dict(data, net)
    if kind == "sgd":
        return SgdState.from_dict(data, net)
    raise CheckpointError(f"unknown optimizer kind {kind!r}")


def polyak_update(target: Mlp, online: Mlp, tau: float) -> None:
    """target <- tau * online + (1 - tau) * target, in place."""
    if not target.same_architecture(online):
        raise ContractError(f"cannot average {target.sizes} towards {online.sizes}")
    if not 0.0 <= tau <= 1.0:
        raise ContractError(f"tau must lie in [0, 1], got {tau}")
    for t_param, o_param in zip(target.weights + target.biases, online.weights + online.biases):
        if tau == 1.0:
            t_param[...] = o_param
        elif tau > 0.0:
            t_param *= 1.0 - tau
            t_param += tau * o_param

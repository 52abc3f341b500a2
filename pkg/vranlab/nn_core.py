"""
Feedforward network primitives

Just enough neural network for the orchestrators: a ReLU multilayer
perceptron with hand-coded backpropagation, an Adam optimizer and a
self-describing checkpoint format. Everything runs on float64 numpy arrays.

Shapes:
    weights[l]  (fan_in, fan_out)
    biases[l]   (fan_out,)
    inputs      (in_dim,) for a single vector or (batch, in_dim)
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ContractViolation, NumericalInstabilityError

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "vranlab-mlp"
CHECKPOINT_VERSION = 1

# uniform bound for the linear output layer
OUTPUT_INIT_SCALE = 3e-3


class MLP:
    """ReLU hidden layers, linear output layer"""

    def __init__(self, layer_dims: Sequence[int], weights: List[np.ndarray], biases: List[np.ndarray]):
        dims = tuple(int(d) for d in layer_dims)
        if len(dims) < 2 or min(dims) < 1:
            raise ContractViolation(f"invalid layer dims {dims}")
        if len(weights) != len(dims) - 1 or len(biases) != len(dims) - 1:
            raise ContractViolation("one weight matrix and bias vector per layer required")
        # the network owns its parameters; callers' arrays are never aliased
        weights = [np.array(w, dtype=np.float64) for w in weights]
        biases = [np.array(b, dtype=np.float64) for b in biases]
        for l, (w, b) in enumerate(zip(weights, biases)):
            if w.shape != (dims[l], dims[l + 1]) or b.shape != (dims[l + 1],):
                raise ContractViolation(
                    f"layer {l}: expected weights {(dims[l], dims[l + 1])} and bias {(dims[l + 1],)}, "
                    f"got {w.shape} and {b.shape}"
                )
        self._layer_dims = dims
        self.weights = weights
        self.biases = biases

    @classmethod
    def initialize(cls, layer_dims: Sequence[int], rng: np.random.Generator) -> "MLP":
        """He-uniform hidden layers, small uniform output layer, zero biases"""
        dims = tuple(int(d) for d in layer_dims)
        weights, biases = [], []
        for l in range(len(dims) - 1):
            fan_in, fan_out = dims[l], dims[l + 1]
            is_output = l == len(dims) - 2
            limit = OUTPUT_INIT_SCALE if is_output else np.sqrt(6.0 / fan_in)
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(dims, weights, biases)

    @property
    def layer_dims(self) -> Tuple[int, ...]:
        return self._layer_dims

    @property
    def input_dim(self) -> int:
        return self._layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self._layer_dims[-1]

    @property
    def num_layers(self) -> int:
        return len(self._layer_dims) - 1

    def parameters(self) -> List[np.ndarray]:
        params = []
        for w, b in zip(self.weights, self.biases):
            params.extend([w, b])
        return params

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.parameters())

    def __repr__(self):
        return f"MLP(layer_dims={self._layer_dims})"


@dataclass
class Gradients:
    """d(loss)/d(parameter), shaped like the network"""
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def flat(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.extend([w.ravel(), b.ravel()])
        return np.concatenate(parts)


@dataclass
class ForwardCache:
    """Layer inputs and pre-activations kept for backpropagation"""
    inputs: List[np.ndarray]
    pre_activations: List[np.ndarray]


@dataclass
class AdamState:
    """Adam moment accumulators mirroring an MLP's parameters"""
    m_weights: List[np.ndarray]
    v_weights: List[np.ndarray]
    m_biases: List[np.ndarray]
    v_biases: List[np.ndarray]
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0

    @classmethod
    def for_network(cls, net: MLP, learning_rate: float = 1e-3, beta1: float = 0.9,
                    beta2: float = 0.999, epsilon: float = 1e-8) -> "AdamState":
        return cls(
            m_weights=[np.zeros_like(w) for w in net.weights],
            v_weights=[np.zeros_like(w) for w in net.weights],
            m_biases=[np.zeros_like(b) for b in net.biases],
            v_biases=[np.zeros_like(b) for b in net.biases],
            learning_rate=learning_rate,
            beta1=beta1,
            beta2=beta2,
            epsilon=epsilon,
        )


def _as_batch(net: MLP, x) -> Tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[np.newaxis, :]
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ContractViolation(f"input shape {x.shape} does not match input dim {net.input_dim}")
    return x, single


def forward_with_cache(net: MLP, x) -> Tuple[np.ndarray, ForwardCache]:
    batch, single = _as_batch(net, x)
    cache = ForwardCache(inputs=[], pre_activations=[])
    activation = batch
    last = net.num_layers - 1
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        cache.inputs.append(activation)
        z = activation @ w + b
        cache.pre_activations.append(z)
        activation = z if l == last else np.maximum(z, 0.0)
    return (activation[0] if single else activation), cache


def forward(net: MLP, x) -> np.ndarray:
    """Network output for one input vector or a batch of them"""
    output, _ = forward_with_cache(net, x)
    return output


def backward(net: MLP, x, upstream, cache: Optional[ForwardCache] = None) -> Gradients:
    """
    Backpropagate an upstream gradient d(loss)/d(output).

    For a batch the returned gradients are summed over the batch rows, i.e.
    they are the gradients of sum_b <upstream_b, output_b>.
    """
    batch, single = _as_batch(net, x)
    delta = np.asarray(upstream, dtype=np.float64)
    if single and delta.ndim == 1:
        delta = delta[np.newaxis, :]
    if delta.shape != (batch.shape[0], net.output_dim):
        raise ContractViolation(
            f"upstream gradient shape {delta.shape} does not match output {(batch.shape[0], net.output_dim)}"
        )
    if cache is None:
        _, cache = forward_with_cache(net, batch)

    grad_w = [None] * net.num_layers
    grad_b = [None] * net.num_layers
    for l in range(net.num_layers - 1, -1, -1):
        grad_w[l] = cache.inputs[l].T @ delta
        grad_b[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ net.weights[l].T) * (cache.pre_activations[l - 1] > 0.0)
    return Gradients(weights=grad_w, biases=grad_b)


def adam_step(net: MLP, grads: Gradients, opt: AdamState) -> Tuple[MLP, AdamState]:
    """One bias-corrected Adam update, applied in place"""
    if len(grads.weights) != net.num_layers or any(
        g.shape != w.shape for g, w in zip(grads.weights, net.weights)
    ) or any(g.shape != b.shape for g, b in zip(grads.biases, net.biases)):
        raise ContractViolation("gradient shapes do not match network parameters")

    opt.step += 1
    correction1 = 1.0 - opt.beta1 ** opt.step
    correction2 = 1.0 - opt.beta2 ** opt.step

    def update(param, grad, m, v):
        m *= opt.beta1
        m += (1.0 - opt.beta1) * grad
        v *= opt.beta2
        v += (1.0 - opt.beta2) * grad * grad
        m_hat = m / correction1
        v_hat = v / correction2
        param -= opt.learning_rate * m_hat / (np.sqrt(v_hat) + opt.epsilon)

    for l in range(net.num_layers):
        update(net.weights[l], grads.weights[l], opt.m_weights[l], opt.v_weights[l])
        update(net.biases[l], grads.biases[l], opt.m_biases[l], opt.v_biases[l])

    if not net.all_finite():
        raise NumericalInstabilityError(f"non-finite parameters after Adam step {opt.step}")
    return net, opt


def clone_weights(src: MLP) -> MLP:
    """Deep copy of a network"""
    return MLP(src.layer_dims, src.weights, src.biases)


def copy_weights_into(dst: MLP, src: MLP):
    """Overwrite dst's parameters with src's (same shape required)"""
    if dst.layer_dims != src.layer_dims:
        raise ContractViolation(f"cannot copy {src.layer_dims} into {dst.layer_dims}")
    for l in range(src.num_layers):
        dst.weights[l][...] = src.weights[l]
        dst.biases[l][...] = src.biases[l]


def clone_adam(opt: AdamState) -> AdamState:
    return AdamState(
        m_weights=[a.copy() for a in opt.m_weights],
        v_weights=[a.copy() for a in opt.v_weights],
        m_biases=[a.copy() for a in opt.m_biases],
        v_biases=[a.copy() for a in opt.v_biases],
        learning_rate=opt.learning_rate,
        beta1=opt.beta1,
        beta2=opt.beta2,
        epsilon=opt.epsilon,
        step=opt.step,
    )


# Checkpoints ------------------------------------------------------------

@dataclass
class Checkpoint:
    networks: Dict[str, MLP]
    optimizers: Dict[str, AdamState] = field(default_factory=dict)
    metadata: Dict = field(default_factory=dict)


def save_checkpoint(path, networks: Dict[str, MLP], optimizers: Optional[Dict[str, AdamState]] = None,
                    metadata: Optional[Dict] = None) -> Path:
    """
    Write networks (and optionally their optimizer state) to an .npz archive.

    The archive carries a JSON header under ``__header__`` with the format
    name, version, layer dims, optimizer hyperparameters and free-form
    metadata; parameter arrays are stored under ``<name>/W<l>`` etc.
    """
    path = Path(path)
    optimizers = optimizers or {}
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "networks": {name: list(net.layer_dims) for name, net in networks.items()},
        "optimizers": {
            name: {
                "learning_rate": opt.learning_rate,
                "beta1": opt.beta1,
                "beta2": opt.beta2,
                "epsilon": opt.epsilon,
                "step": opt.step,
            }
            for name, opt in optimizers.items()
        },
        "metadata": metadata or {},
    }
    arrays = {"__header__": np.array(json.dumps(header, sort_keys=True))}
    for name, net in networks.items():
        for l in range(net.num_layers):
            arrays[f"{name}/W{l}"] = net.weights[l]
            arrays[f"{name}/b{l}"] = net.biases[l]
    for name, opt in optimizers.items():
        for l in range(len(opt.m_weights)):
            arrays[f"{name}/mW{l}"] = opt.m_weights[l]
            arrays[f"{name}/vW{l}"] = opt.v_weights[l]
            arrays[f"{name}/mb{l}"] = opt.m_biases[l]
            arrays[f"{name}/vb{l}"] = opt.v_biases[l]

    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as handle:
        np.savez_compressed(handle, **arrays)
    logger.debug("Saved checkpoint %s (%s)", path, ", ".join(networks))
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    with np.load(path, allow_pickle=False) as archive:
        header = json.loads(str(archive["__header__"]))
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ContractViolation(f"{path} is not a {CHECKPOINT_FORMAT} checkpoint")
        if header.get("version") != CHECKPOINT_VERSION:
            raise ContractViolation(f"unsupported checkpoint version {header.get('version')}")

        networks = {}
        for name, dims in header["networks"].items():
            layers = len(dims) - 1
            networks[name] = MLP(
                dims,
                [archive[f"{name}/W{l}"].copy() for l in range(layers)],
                [archive[f"{name}/b{l}"].copy() for l in range(layers)],
            )

        optimizers = {}
        for name, hyper in header["optimizers"].items():
            layers = len(header["networks"][name]) - 1
            optimizers[name] = AdamState(
                m_weights=[archive[f"{name}/mW{l}"].copy() for l in range(layers)],
                v_weights=[archive[f"{name}/vW{l}"].copy() for l in range(layers)],
                m_biases=[archive[f"{name}/mb{l}"].copy() for l in range(layers)],
                v_biases=[archive[f"{name}/vb{l}"].copy() for l in range(layers)],
                **hyper,
            )
    return Checkpoint(networks=networks, optimizers=optimizers, metadata=header.get("metadata", {}))

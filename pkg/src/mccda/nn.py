"""Shallow MLPs, gradient reversal and momentum SGD on top of :mod:`mccda.autodiff`."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Var
from .errors import ContractError, DimensionError, ParameterError

ACTIVATIONS = ("relu", "tanh", "none")

LayerSpec = Tuple[int, int, str]


@dataclass
class Layer:
    weight: Union[np.ndarray, Var]  # d_in x d_out
    bias: Union[np.ndarray, Var]  # 1 x d_out
    activation: str = "none"


@dataclass
class ModelParams:
    """Ordered dense layers. Entries are arrays, or ``Var`` once bound to a tape."""

    layers: List[Layer]

    def __post_init__(self):
        for k, layer in enumerate(self.layers):
            if layer.activation not in ACTIVATIONS:
                raise ParameterError(f"layer {k}: unknown activation {layer.activation!r}")
            w, b = _shape(layer.weight), _shape(layer.bias)
            if b != (1, w[1]):
                raise DimensionError(f"layer {k}: bias shape {b} does not match weight {w}")
            if k and _shape(self.layers[k - 1].weight)[1] != w[0]:
                raise DimensionError(
                    f"layer {k}: d_in {w[0]} does not chain with previous d_out "
                    f"{_shape(self.layers[k - 1].weight)[1]}"
                )

    @property
    def d_in(self) -> int:
        return _shape(self.layers[0].weight)[0]

    @property
    def d_out(self) -> int:
        return _shape(self.layers[-1].weight)[1]

    def arrays(self) -> List[np.ndarray]:
        """Flat parameter list: w0, b0, w1, b1, ..."""
        out = []
        for layer in self.layers:
            out.extend([_value(layer.weight), _value(layer.bias)])
        return out

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "ModelParams":
        if len(arrays) != 2 * len(self.layers):
            raise DimensionError(f"expected {2 * len(self.layers)} arrays, got {len(arrays)}")
        return ModelParams(
            [
                Layer(np.asarray(arrays[2 * k]), np.asarray(arrays[2 * k + 1]), layer.activation)
                for k, layer in enumerate(self.layers)
            ]
        )

    def bind(self, tape: Tape) -> "ModelParams":
        """Copy of these parameters registered as leaves on ``tape``."""
        return ModelParams(
            [
                Layer(tape.leaf(_value(l.weight), "weight"), tape.leaf(_value(l.bias), "bias"),
                      l.activation)
                for l in self.layers
            ]
        )

    def vars(self) -> List[Var]:
        out = []
        for layer in self.layers:
            out.extend([layer.weight, layer.bias])
        if not all(isinstance(v, Var) for v in out):
            raise ContractError("parameters are not bound to a tape")
        return out

    def copy(self) -> "ModelParams":
        return self.with_arrays([a.copy() for a in self.arrays()])


def _shape(x) -> Tuple[int, int]:
    return x.shape


def _value(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else x


def init_params(spec: Sequence[LayerSpec], seed) -> ModelParams:
    """Glorot-uniform weights and zero biases for ``[(d_in, d_out, activation), ...]``.

    ``seed`` may be an int or anything ``np.random.default_rng`` accepts.
    """
    if not spec:
        raise DimensionError("empty layer spec")
    for k in range(1, len(spec)):
        if spec[k][0] != spec[k - 1][1]:
            raise DimensionError(
                f"layer spec does not chain: layer {k - 1} d_out={spec[k - 1][1]}, "
                f"layer {k} d_in={spec[k][0]}"
            )
    rng = np.random.default_rng(seed)
    layers = []
    for d_in, d_out, act in spec:
        bound = math.sqrt(6.0 / (d_in + d_out))
        w = rng.uniform(-bound, bound, size=(d_in, d_out))
        layers.append(Layer(w, np.zeros((1, d_out)), act))
    return ModelParams(layers)


def mlp_spec(d_in: int, hidden: Sequence[int], d_out: int, activation: str = "relu") -> List[LayerSpec]:
    dims = [d_in, *hidden]
    spec = [(dims[k], dims[k + 1], activation) for k in range(len(hidden))]
    spec.append((dims[-1], d_out, "none"))
    return spec


def _activate(x, kind: str):
    if kind == "relu":
        return ad.relu(x)
    if kind == "tanh":
        return ad.tanh(x)
    return x


def mlp_forward(params: ModelParams, x):
    """Run the network; returns ``(features, logits)``.

    ``features`` is the input to the final layer (the last hidden
    activation, or ``x`` itself for a single-layer net) and ``logits`` is
    the final layer's output.
    """
    d = x.shape[1]
    if d != params.d_in:
        raise DimensionError(f"input has {d} columns, network expects {params.d_in}")
    h = x
    for layer in params.layers[:-1]:
        h = _activate(ad.add(ad.matmul(h, layer.weight), layer.bias), layer.activation)
    last = params.layers[-1]
    logits = _activate(ad.add(ad.matmul(h, last.weight), last.bias), last.activation)
    return h, logits


def grad_reverse(features, coeff: float):
    """Identity forward; multiplies the incoming gradient by ``-coeff``."""
    c = float(coeff)
    if not isinstance(features, Var):
        return ad.as_matrix(features).copy()
    return features.tape.record(
        "grad_reverse", (features,), features.value.copy(), lambda g: (-c * g,)
    )


def grl_coeff(progress: float, gamma: float = 10.0) -> float:
    """Gradient-reversal ramp ``2 / (1 + exp(-gamma p)) - 1`` for progress p in [0, 1]."""
    return 2.0 / (1.0 + math.exp(-gamma * progress)) - 1.0


@dataclass
class OptState:
    velocity: List[np.ndarray]
    learning_rate: float = 0.01
    momentum: float = 0.9

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ParameterError(f"learning rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ParameterError(f"momentum must be in [0, 1), got {self.momentum}")

    @classmethod
    def for_params(cls, arrays: Sequence[np.ndarray], learning_rate: float = 0.01,
                   momentum: float = 0.9) -> "OptState":
        return cls([np.zeros_like(a) for a in arrays], learning_rate, momentum)


def sgd_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray],
             state: OptState) -> List[np.ndarray]:
    """``v <- momentum * v + g; theta <- theta - lr * v``.

    Returns new parameter arrays; ``state.velocity`` is updated in place.
    """
    if not (len(params) == len(grads) == len(state.velocity)):
        raise DimensionError(
            f"got {len(params)} params, {len(grads)} grads, {len(state.velocity)} velocities"
        )
    out = []
    for k, (p, g, v) in enumerate(zip(params, grads, state.velocity)):
        if not (p.shape == g.shape == v.shape):
            raise DimensionError(f"param {k}: shapes {p.shape}, {g.shape}, {v.shape} differ")
        v = state.momentum * v + g
        state.velocity[k] = v
        out.append(p - state.learning_rate * v)
    return out


# -- checkpoints -------------------------------------------------------------


def params_to_dict(params: ModelParams) -> Dict:
    return {
        "layers": [
            {
                "activation": l.activation,
                "weight": {"shape": list(_value(l.weight).shape),
                           "data": _value(l.weight).reshape(-1).tolist()},
                "bias": {"shape": list(_value(l.bias).shape),
                         "data": _value(l.bias).reshape(-1).tolist()},
            }
            for l in params.layers
        ]
    }


def params_from_dict(d: Dict) -> ModelParams:
    layers = []
    for entry in d["layers"]:
        w = np.asarray(entry["weight"]["data"], dtype=np.float64).reshape(entry["weight"]["shape"])
        b = np.asarray(entry["bias"]["data"], dtype=np.float64).reshape(entry["bias"]["shape"])
        layers.append(Layer(w, b, entry["activation"]))
    return ModelParams(layers)


def save_params(params: ModelParams, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(params_to_dict(params), indent=1) + "\n")
    return path


def load_params(path) -> ModelParams:
    return params_from_dict(json.loads(Path(path).read_text()))

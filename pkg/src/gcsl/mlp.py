"""Small fully connected feature extractor with hand-written backprop.

Hidden layers use ``relu`` or ``tanh``; the last layer is linear so the
features are unconstrained. An empty layer list is the identity map.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError

ACTIVATIONS = ("relu", "tanh")


@dataclass
class MlpParams:
    weights: list  # weights[l] has shape (out_l, in_l)
    biases: list  # biases[l] has shape (out_l,)
    activations: list = field(default_factory=list)  # one per hidden layer

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        if len(self.weights) != len(self.biases):
            raise ContractError("one bias vector per weight matrix")
        if len(self.activations) != max(len(self.weights) - 1, 0):
            raise ContractError("need one activation per hidden layer")
        for act in self.activations:
            if act not in ACTIVATIONS:
                raise ContractError(f"unknown activation {act!r}")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ContractError(f"layer {l}: bad shapes {w.shape}, {b.shape}")
            if l and w.shape[1] != self.weights[l - 1].shape[0]:
                raise ContractError(f"layer {l} input does not chain with layer {l - 1}")

    @property
    def depth(self) -> int:
        return len(self.weights)

    @property
    def in_dim(self):
        return self.weights[0].shape[1] if self.weights else None

    @property
    def out_dim(self):
        return self.weights[-1].shape[0] if self.weights else None

    @classmethod
    def init(cls, sizes, activation, rng: np.random.Generator) -> "MlpParams":
        """He-style fan-in initialisation for layer sizes ``[D_in, ..., D_feat]``."""
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            weights.append(rng.standard_normal((fan_out, fan_in)) * np.sqrt(2.0 / fan_in))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases, [activation] * max(len(weights) - 1, 0))


@dataclass
class ForwardTape:
    inputs: list  # input to each layer, (N, in_l)
    pre: list  # pre-activations of each layer, (N, out_l)
    params: MlpParams


def _act(kind, a):
    if kind == "relu":
        return np.maximum(a, 0.0)
    return np.tanh(a)


def _act_grad(kind, a, h):
    if kind == "relu":
        # subgradient 0 at exactly 0
        return (a > 0).astype(np.float64)
    return 1.0 - h * h


def forward(x, params: MlpParams):
    """Returns ``(z, tape)``; ``x`` is ``(N, D_in)`` or ``(D_in,)``."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if params.depth and h.shape[1] != params.in_dim:
        raise ContractError(f"input dim {h.shape[1]} != first layer {params.in_dim}")
    inputs, pre = [], []
    last = params.depth - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        a = h @ w.T + b
        pre.append(a)
        h = a if l == last else _act(params.activations[l], a)
    tape = ForwardTape(inputs, pre, params)
    return (h[0] if single else h), tape


def backward(tape: ForwardTape, dz):
    """Reverse pass. Returns ``(param_grads, dx)`` with ``param_grads`` a list of ``(dW, db)``."""
    params = tape.params
    dz = np.asarray(dz, dtype=np.float64)
    single = dz.ndim == 1
    g = dz[None, :] if single else dz
    n = tape.inputs[0].shape[0] if tape.inputs else g.shape[0]
    expected = params.out_dim if params.depth else g.shape[1]
    if g.shape != (n, expected):
        raise ContractError(f"upstream gradient shape {g.shape} != ({n}, {expected})")
    grads = [None] * params.depth
    for l in range(params.depth - 1, -1, -1):
        if l != params.depth - 1:
            a = tape.pre[l]
            g = g * _act_grad(params.activations[l], a, _act(params.activations[l], a))
        grads[l] = (g.T @ tape.inputs[l], g.sum(axis=0))
        g = g @ params.weights[l]
    return grads, (g[0] if single else g)

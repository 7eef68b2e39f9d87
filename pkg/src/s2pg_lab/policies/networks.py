"""Network building blocks with a differentiable path and a plain numpy path.

Both paths read parameters from a mapping ``name -> array-like``: tape tensors
for the differentiable path, raw arrays for the numpy path used in rollouts.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

import s2pg_lab.diffcore as dc

__all__ = ["ACTIVATIONS", "MLP", "GatedCell"]


def _np_sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


ACTIVATIONS = {
    "tanh": (dc.tanh, np.tanh),
    "relu": (dc.relu, lambda x: np.maximum(x, 0.0)),
    "sigmoid": (dc.sigmoid, _np_sigmoid),
}


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class MLP:
    """Fully connected network on row-batched input ``(B, sizes[0])``."""

    def __init__(self, prefix: str, sizes: Sequence[int], activation: str = "tanh", out_scale: float = 1.0):
        if len(sizes) < 2:
            raise ValueError("MLP needs at least input and output sizes")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.prefix = prefix
        self.sizes = list(sizes)
        self.activation = activation
        self.out_scale = out_scale
        self._act, self._act_np = ACTIVATIONS[activation]

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def param_names(self) -> list[str]:
        names = []
        for i in range(self.n_layers):
            names += [f"{self.prefix}.W{i}", f"{self.prefix}.b{i}"]
        return names

    def init(self, store: dc.ParameterStore, rng: np.random.Generator) -> None:
        for i, (n_in, n_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            w = _glorot(rng, n_in, n_out)
            if i == self.n_layers - 1:
                w = w * self.out_scale
            store.add(f"{self.prefix}.W{i}", w)
            store.add(f"{self.prefix}.b{i}", np.zeros(n_out))

    def __call__(self, params: Mapping, x) -> dc.Tensor:
        h = x
        for i in range(self.n_layers):
            h = dc.linear(h, params[f"{self.prefix}.W{i}"], params[f"{self.prefix}.b{i}"])
            if i < self.n_layers - 1:
                h = self._act(h)
        return h

    def forward_np(self, params: Mapping, x: np.ndarray) -> np.ndarray:
        h = x
        for i in range(self.n_layers):
            h = h @ params[f"{self.prefix}.W{i}"] + params[f"{self.prefix}.b{i}"]
            if i < self.n_layers - 1:
                h = self._act_np(h)
        return h

    def describe(self) -> dict:
        return {"kind": "mlp", "sizes": self.sizes, "activation": self.activation}


class GatedCell:
    """GRU-style cell: ``z' = (1 - u) * z + u * c``.

    ``u = sigmoid([x, z] W_u + b_u)`` and ``c = tanh([x, z] W_c + b_c)``.
    """

    def __init__(self, prefix: str, d_in: int, d_z: int, gate_bias: float = 0.0):
        self.prefix = prefix
        self.d_in = d_in
        self.d_z = d_z
        # a negative update-gate bias starts the cell close to "keep z"
        self.gate_bias = gate_bias

    def param_names(self) -> list[str]:
        p = self.prefix
        return [f"{p}.Wu", f"{p}.bu", f"{p}.Wc", f"{p}.bc"]

    def init(self, store: dc.ParameterStore, rng: np.random.Generator) -> None:
        n = self.d_in + self.d_z
        store.add(f"{self.prefix}.Wu", _glorot(rng, n, self.d_z))
        store.add(f"{self.prefix}.bu", np.full(self.d_z, self.gate_bias))
        store.add(f"{self.prefix}.Wc", _glorot(rng, n, self.d_z))
        store.add(f"{self.prefix}.bc", np.zeros(self.d_z))

    def __call__(self, params: Mapping, x, z) -> dc.Tensor:
        p = self.prefix
        xz = dc.concat([x, z], axis=-1)
        u = dc.sigmoid(dc.linear(xz, params[f"{p}.Wu"], params[f"{p}.bu"]))
        c = dc.tanh(dc.linear(xz, params[f"{p}.Wc"], params[f"{p}.bc"]))
        return dc.add(z, dc.mul(u, dc.sub(c, z)))

    def forward_np(self, params: Mapping, x: np.ndarray, z: np.ndarray) -> np.ndarray:
        p = self.prefix
        xz = np.concatenate([x, z], axis=-1)
        u = _np_sigmoid(xz @ params[f"{p}.Wu"] + params[f"{p}.bu"])
        c = np.tanh(xz @ params[f"{p}.Wc"] + params[f"{p}.bc"])
        return z + u * (c - z)

    def describe(self) -> dict:
        return {"kind": "gated_cell", "d_in": self.d_in, "d_z": self.d_z, "gate_bias": self.gate_bias}

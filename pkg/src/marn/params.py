"""Named parameter tensors plus per-graph leaf-node caching.

Within one batch graph every use of a parameter must be the same leaf node so
gradients accumulate; `begin_graph` resets the cache between batches.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad


class ParamStore:
    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.values: dict[str, np.ndarray] = {}
        self._leaves: dict[str, ad.Node] = {}

    def create(self, name: str, shape, init: str = "normal", scale: float | None = None) -> None:
        if name in self.values:
            raise ValueError(f"parameter '{name}' already exists")
        if init == "zeros":
            value = np.zeros(shape, dtype=np.float32)
        elif init == "normal":
            std = scale if scale is not None else 0.1
            value = self.rng.normal(0.0, std, size=shape).astype(np.float32)
        elif init == "xavier":
            fan_in = shape[0] if len(shape) > 1 else shape[0]
            std = scale if scale is not None else 1.0 / np.sqrt(fan_in)
            value = self.rng.normal(0.0, std, size=shape).astype(np.float32)
        else:
            raise ValueError(f"unknown init '{init}'")
        self.values[name] = value

    def begin_graph(self) -> None:
        self._leaves = {}

    def leaf(self, name: str) -> ad.Node:
        node = self._leaves.get(name)
        if node is None:
            node = ad.parameter(self.values[name])
            # Leaf shares storage with the stored value; optimizer updates in place.
            node.value = self.values[name]
            self._leaves[name] = node
        return node

    def leaves(self) -> dict[str, ad.Node]:
        return dict(self._leaves)

    def collect_grads(self) -> dict[str, np.ndarray]:
        """Gradients for every stored parameter; zeros when unused this graph."""
        grads = {}
        for name, value in self.values.items():
            leaf = self._leaves.get(name)
            if leaf is not None and leaf.grad is not None:
                grads[name] = leaf.grad
            else:
                grads[name] = np.zeros_like(value)
        return grads

from __future__ import annotations

from typing import Iterator

import numpy as np

from ..exceptions import ShapeError
from .layers import Layer


class Sequential:
    """An ordered chain of layers sharing one forward/backward cache."""

    def __init__(self, layers: list[Layer]):
        self.layers = list(layers)

    def __len__(self):
        return len(self.layers)

    def __iter__(self):
        return iter(self.layers)

    def __repr__(self):
        return "Sequential(" + ", ".join(repr(layer) for layer in self.layers) + ")"

    def infer_shapes(self, input_shape) -> list[tuple[int, ...]]:
        """Static per-layer output shapes (batch axis excluded)."""
        shapes = []
        shape = tuple(int(s) for s in input_shape)
        for i, layer in enumerate(self.layers):
            try:
                shape = layer.output_shape(shape)
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({layer.kind}): {exc}") from None
            shapes.append(shape)
        return shapes

    def forward(self, x: np.ndarray, mode: str = "train") -> np.ndarray:
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        train = mode == "train"
        out = np.asarray(x, dtype=np.float64)
        for i, layer in enumerate(self.layers):
            try:
                out = layer.forward(out, train=train)
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({layer.kind}): {exc}") from None
        return out

    __call__ = forward

    def backward(self, grad: np.ndarray) -> np.ndarray:
        """Propagate ``grad`` (d loss / d output) back; returns d loss / d input.

        Parameter gradients are left in each layer's ``grads`` dict.
        """
        grad = np.asarray(grad, dtype=np.float64)
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def named_parameters(self) -> Iterator[tuple[str, np.ndarray]]:
        for i, layer in enumerate(self.layers):
            for name, value in layer.params.items():
                yield f"{i}.{name}", value

    def named_gradients(self) -> Iterator[tuple[str, np.ndarray]]:
        for i, layer in enumerate(self.layers):
            for name in layer.params:
                yield f"{i}.{name}", layer.grads[name]

    def named_buffers(self) -> Iterator[tuple[str, np.ndarray]]:
        for i, layer in enumerate(self.layers):
            for name, value in layer.buffers.items():
                yield f"{i}.{name}", value

    def parameters(self) -> dict[str, np.ndarray]:
        return dict(self.named_parameters())

    def gradients(self) -> dict[str, np.ndarray]:
        return dict(self.named_gradients())

    def state(self) -> dict[str, np.ndarray]:
        """Copy of parameters and buffers, suitable for ``load_state``."""
        out = {k: v.copy() for k, v in self.named_parameters()}
        out.update({k: v.copy() for k, v in self.named_buffers()})
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for key, value in state.items():
            idx, name = key.split(".", 1)
            layer = self.layers[int(idx)]
            target = layer.params if name in layer.params else layer.buffers
            if name not in target:
                raise KeyError(f"unknown parameter {key!r}")
            value = np.asarray(value, dtype=np.float64)
            if value.shape != target[name].shape:
                raise ShapeError(f"{key}: expected shape {target[name].shape}, got {value.shape}")
            target[name] = value.copy()

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def n_parameters(self) -> int:
        return sum(v.size for _, v in self.named_parameters())

"""Light parameter container: stable dotted names, train/eval mode, buffers.

Attributes that are Tensors with requires_grad are parameters; buffers
(running statistics etc.) are registered explicitly. Names follow attribute
declaration order, which fixes tie-breaking in gradient checks and the layout
of checkpoint archives.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .tensor import Tensor


class Module:
    def __init__(self):
        self.training = True
        self._buffer_names: list[str] = []

    def register_buffer(self, name: str, value: Tensor):
        setattr(self, name, value)
        self._buffer_names.append(name)

    def train(self):
        for m in self._submodules():
            m.training = True
        self.training = True
        return self

    def eval(self):
        for m in self._submodules():
            m.training = False
        self.training = False
        return self

    def _submodules(self) -> Iterator["Module"]:
        for value in self.__dict__.values():
            if isinstance(value, Module):
                yield value
                yield from value._submodules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield item
                        yield from item._submodules()

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        out: list[tuple[str, Tensor]] = []
        buffers = set(self._buffer_names)
        for name, value in self.__dict__.items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor):
                if value.requires_grad and name not in buffers:
                    out.append((full, value))
            elif isinstance(value, Module):
                out.extend(value.named_parameters(f"{full}."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.extend(item.named_parameters(f"{full}.{i}."))
        return out

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def named_state(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        """Every Tensor attribute (parameters, frozen parameters, buffers)."""
        out: list[tuple[str, Tensor]] = []
        for name, value in self.__dict__.items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor):
                out.append((full, value))
            elif isinstance(value, Module):
                out.extend(value.named_state(f"{full}."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.extend(item.named_state(f"{full}.{i}."))
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named_state()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        own = dict(self.named_state())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, tensor in own.items():
            arr = np.asarray(state[name], dtype=tensor.data.dtype)
            if arr.shape != tensor.data.shape:
                raise KeyError(f"shape mismatch for {name}: {arr.shape} vs {tensor.data.shape}")
            tensor.data = arr.copy()

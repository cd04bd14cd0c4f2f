"""Named parameter storage and initializers."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .core import DTYPE, ConfigError, Parameter
from .ops import affine, conv1d, layer_norm
from .rng import RngState


def glorot_uniform(rng: RngState, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return ((rng.uniform(shape) * 2.0 - 1.0) * limit).astype(DTYPE)


class ParamStore:
    """Flat, ordered name -> Parameter map with scoped views.

    ``store.scope("encoder")`` returns a view whose names are prefixed with
    ``encoder/``; both share the same underlying dict.
    """

    def __init__(self, rng: RngState | None = None, _params=None, _prefix: str = ""):
        self.rng = rng
        self._params: dict[str, Parameter] = {} if _params is None else _params
        self._prefix = _prefix

    def scope(self, name: str) -> "ParamStore":
        return ParamStore(self.rng, self._params, f"{self._prefix}{name}/")

    def _full(self, name: str) -> str:
        return f"{self._prefix}{name}"

    def add(self, name: str, value: np.ndarray) -> Parameter:
        full = self._full(name)
        if full in self._params:
            raise ConfigError(f"duplicate parameter name {full!r}")
        p = Parameter(full, value)
        self._params[full] = p
        return p

    def matrix(self, name: str, fan_in: int, fan_out: int) -> Parameter:
        return self.add(name, glorot_uniform(self.rng, (fan_in, fan_out), fan_in, fan_out))

    def kernel(self, name: str, width: int, cin: int, cout: int) -> Parameter:
        return self.add(name, glorot_uniform(self.rng, (width, cin, cout), width * cin, width * cout))

    def zeros(self, name: str, *shape: int) -> Parameter:
        return self.add(name, np.zeros(shape, dtype=DTYPE))

    def ones(self, name: str, *shape: int) -> Parameter:
        return self.add(name, np.ones(shape, dtype=DTYPE))

    def __getitem__(self, name: str) -> Parameter:
        return self._params[self._full(name)]

    def __contains__(self, name: str) -> bool:
        return self._full(name) in self._params

    def __iter__(self) -> Iterator[Parameter]:
        return (p for n, p in self._params.items() if n.startswith(self._prefix))

    def __len__(self) -> int:
        return sum(1 for _ in self)

    def names(self) -> list[str]:
        return [p.name for p in self]

    def num_values(self) -> int:
        return int(sum(p.size for p in self))


class Dense:
    """``dense(x, n) = x W + B`` with its own fresh W and B."""

    def __init__(self, store: ParamStore, name: str, in_dim: int, out_dim: int):
        scope = store.scope(name)
        self.weight = scope.matrix("W", in_dim, out_dim)
        self.bias = scope.zeros("B", out_dim)

    def __call__(self, x):
        return affine(x, self.weight, self.bias)


class LayerNorm:
    def __init__(self, store: ParamStore, name: str, dim: int, epsilon: float = 1e-6):
        scope = store.scope(name)
        self.gain = scope.ones("gain", dim)
        self.bias = scope.zeros("bias", dim)
        self.epsilon = epsilon

    def __call__(self, x):
        return layer_norm(x, self.gain, self.bias, self.epsilon)


class Conv1d:
    def __init__(self, store: ParamStore, name: str, width: int, cin: int, cout: int, stride: int = 1):
        if width < 1 or stride < 1:
            raise ConfigError(f"conv1d {name}: kernel_size and stride must be >= 1")
        scope = store.scope(name)
        self.kernel = scope.kernel("kernel", width, cin, cout)
        self.bias = scope.zeros("bias", cout)
        self.stride = stride

    def __call__(self, x):
        return conv1d(x, self.kernel, self.bias, self.stride)

"""Differentiable arrays and the computation tape.

A :class:`DiffArray` wraps a float32 numpy array. While a :class:`Tape` is
active, every primitive that touches an array requiring gradients appends a
record ``(output, parents, backward_fn)``; :meth:`Tape.backward` replays the
records in reverse and accumulates gradients. With no active tape nothing is
recorded (inference mode).
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float32

_ACTIVE: list["Tape"] = []
_DEBUG = False


class DimensionError(ValueError):
    """Operand shapes are incompatible with an operation."""


class ConfigError(ValueError):
    """An operation was configured with invalid hyperparameters."""


class StateError(RuntimeError):
    """An operation was invoked in the wrong mode or phase."""


class NumericError(FloatingPointError):
    """A non-finite value was produced while debug checks were on."""


def set_debug(flag: bool) -> None:
    """Toggle NaN/Inf detection at every primitive boundary."""
    global _DEBUG
    _DEBUG = bool(flag)


def debug_enabled() -> bool:
    return _DEBUG


class DiffArray:
    __slots__ = ("value", "requires_grad", "__weakref__")

    def __init__(self, value, requires_grad: bool = False):
        self.value = np.asarray(value, dtype=DTYPE)
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def size(self) -> int:
        return self.value.size

    def numpy(self) -> np.ndarray:
        return self.value

    def item(self) -> float:
        return float(self.value)

    def __repr__(self) -> str:
        flag = ", requires_grad" if self.requires_grad else ""
        return f"DiffArray(shape={self.shape}{flag})"

    # Operators are bound in ndgrad.ops to avoid a circular import.


class Parameter(DiffArray):
    """A trainable leaf array with a hierarchical name and Adam moments."""

    __slots__ = ("name", "m", "v")

    def __init__(self, name: str, value):
        super().__init__(value, requires_grad=True)
        self.name = name
        self.m = np.zeros_like(self.value)
        self.v = np.zeros_like(self.value)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_array(x) -> DiffArray:
    if isinstance(x, DiffArray):
        return x
    return DiffArray(x)


def _check_finite(name: str, value: np.ndarray) -> None:
    if not np.all(np.isfinite(value)):
        raise NumericError(f"{name}: non-finite value in output of shape {value.shape}")


def record(
    name: str,
    value: np.ndarray,
    parents: Sequence[DiffArray],
    backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]],
) -> DiffArray:
    """Wrap ``value`` as the output of a primitive and record it if needed.

    ``backward_fn`` maps the output gradient to one gradient (or None) per
    parent, in order.
    """
    if _DEBUG:
        _check_finite(name, value)
    out = DiffArray(value)
    if _ACTIVE and any(p.requires_grad for p in parents):
        out.requires_grad = True
        _ACTIVE[-1]._entries.append((out, tuple(parents), backward_fn))
    return out


class Tape:
    """Records one forward computation; use a fresh tape per training step.

    >>> with Tape() as tape:
    ...     loss = ...
    >>> grads = tape.backward(loss, params)
    """

    def __init__(self):
        self._entries: list = []
        self._grads: dict[int, np.ndarray] | None = None

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def __len__(self) -> int:
        return len(self._entries)

    def _run(self, loss: DiffArray) -> dict[int, np.ndarray]:
        if loss.size != 1:
            raise DimensionError(f"backward: loss must be scalar, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=DTYPE)}
        for out, parents, fn in reversed(self._entries):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for p, pg in zip(parents, fn(g)):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        return grads

    def gradient(self, loss: DiffArray, wrt: Iterable[DiffArray]) -> list[np.ndarray]:
        """Gradients of a scalar ``loss`` w.r.t. each array in ``wrt``.

        Leaves never reached receive zeros.
        """
        if not self._entries and not loss.requires_grad:
            raise StateError("backward: nothing was recorded (inference mode)")
        grads = self._run(loss)
        out = []
        for x in wrt:
            g = grads.get(id(x))
            out.append(np.zeros_like(x.value) if g is None else g.astype(DTYPE, copy=False))
        return out

    def backward(self, loss: DiffArray, params: Iterable[Parameter]) -> dict[str, np.ndarray]:
        params = list(params)
        return {p.name: g for p, g in zip(params, self.gradient(loss, params))}


def active_tape() -> Tape | None:
    return _ACTIVE[-1] if _ACTIVE else None


def backward(loss: DiffArray, params: Iterable[Parameter], tape: Tape | None = None) -> dict[str, np.ndarray]:
    """Gradient map over ``params`` using ``tape`` (default: the active one)."""
    tape = tape or active_tape()
    if tape is None:
        raise StateError("backward called in inference mode: no tape is recording")
    return tape.backward(loss, params)

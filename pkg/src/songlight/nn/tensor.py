"""Dense float tensors plus a record/replay gradient tape.

The tape is deliberately simple: every differentiable op appends one record
(output, inputs, vector-Jacobian product) while a :class:`GradTape` is active,
and :meth:`GradTape.gradient` replays the records in exact reverse order,
accumulating gradients additively for tensors that feed several consumers.
Storage defaults to float32; verification paths may build float64 tensors and
every op preserves the input dtype.
"""

from __future__ import annotations

import numpy as np


class GradTapeError(RuntimeError):
    """Raised when a tape is consumed twice or used outside its scope."""


class Tensor:
    """A numpy array wrapper carrying a ``requires_grad`` flag."""

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=np.float32):
        arr = np.ascontiguousarray(data, dtype=dtype)
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor entries must be finite")
        self.data = arr
        self.requires_grad = bool(requires_grad)

    @classmethod
    def _wrap(cls, data: np.ndarray, requires_grad: bool) -> "Tensor":
        # Internal fast path for op outputs: no copy, no finiteness scan.
        out = cls.__new__(cls)
        out.data = data
        out.requires_grad = requires_grad
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"


_ACTIVE_TAPES: list["GradTape"] = []


def active_tape():
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


class GradTape:
    """Records one forward pass; single-use."""

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], object]] = []
        self._consumed = False

    def __enter__(self):
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _ACTIVE_TAPES.pop()
        assert popped is self
        return False

    def record(self, out: Tensor, inputs: tuple, vjp) -> None:
        self._records.append((out, inputs, vjp))

    def gradient(self, loss: Tensor, sources) -> list[np.ndarray]:
        """Gradients of scalar ``loss`` w.r.t. ``sources``, in order.

        Sources that do not influence the loss get zero gradients.
        """
        if self._consumed:
            raise GradTapeError("tape already consumed; record a new forward pass")
        self._consumed = True
        if loss.data.ndim != 0:
            raise ValueError("loss must be a scalar tensor")
        grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.data.dtype)}
        for out, inputs, vjp in reversed(self._records):
            g_out = grads.pop(id(out), None)
            if g_out is None:
                continue
            for inp, g_in in zip(inputs, vjp(g_out)):
                if g_in is None or not inp.requires_grad:
                    continue
                seen = grads.get(id(inp))
                grads[id(inp)] = g_in if seen is None else seen + g_in
        return [grads.get(id(s), np.zeros_like(s.data)) for s in sources]

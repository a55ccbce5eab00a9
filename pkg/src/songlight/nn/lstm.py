"""Bi-directional LSTM built from the primitive ops.

The cell follows the standard formulation with input/forget/output gates and
a tanh candidate, gate order ``(i, f, g, o)`` along the fused weight columns,
and zero initial state.  Because every step is composed from recorded ops,
backpropagation through time falls out of the tape replay.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .tensor import Tensor


@dataclass
class LSTMParams:
    wx: Tensor    # [input_dim, 4 * hidden]
    wh: Tensor    # [hidden, 4 * hidden]
    bias: Tensor  # [4 * hidden]

    @property
    def hidden(self) -> int:
        return self.wh.shape[0]


def lstm_cell(x_t: Tensor, h_prev: Tensor, c_prev: Tensor,
              params: LSTMParams) -> tuple[Tensor, Tensor]:
    hidden = params.hidden
    gates = ops.add(ops.add(ops.matmul(x_t, params.wx),
                            ops.matmul(h_prev, params.wh)), params.bias)
    i = ops.sigmoid(ops.slice_cols(gates, 0, hidden))
    f = ops.sigmoid(ops.slice_cols(gates, hidden, 2 * hidden))
    g = ops.tanh(ops.slice_cols(gates, 2 * hidden, 3 * hidden))
    o = ops.sigmoid(ops.slice_cols(gates, 3 * hidden, 4 * hidden))
    c = ops.add(ops.mul(f, c_prev), ops.mul(i, g))
    h = ops.mul(o, ops.tanh(c))
    return h, c


def lstm_run(inputs: Tensor, params: LSTMParams, *, reverse: bool = False) -> list[Tensor]:
    """Run one direction over [batch, steps, features]; states align to steps."""
    if inputs.data.ndim != 3:
        raise ValueError("lstm_run expects a [batch, steps, features] tensor")
    batch, steps, _ = inputs.shape
    hidden = params.hidden
    zeros = np.zeros((batch, hidden), dtype=inputs.data.dtype)
    h = Tensor._wrap(zeros, False)
    c = Tensor._wrap(zeros.copy(), False)
    order = range(steps - 1, -1, -1) if reverse else range(steps)
    states: list[Tensor | None] = [None] * steps
    for t in order:
        h, c = lstm_cell(ops.select_step(inputs, t), h, c, params)
        states[t] = h
    return states


def bi_lstm(inputs: Tensor, fwd: LSTMParams, bwd: LSTMParams) -> tuple[list[Tensor], list[Tensor]]:
    """Forward and backward state sequences, both indexed by input position."""
    return lstm_run(inputs, fwd), lstm_run(inputs, bwd, reverse=True)

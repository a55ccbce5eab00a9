"""Minimal numpy network stack: tensors, tape autodiff, layers, Adam."""

from .tensor import GradTape, GradTapeError, Tensor, active_tape
from . import ops
from .lstm import LSTMParams, bi_lstm, lstm_cell, lstm_run
from .optim import AdamState, adam_step

__all__ = [
    "GradTape", "GradTapeError", "Tensor", "active_tape", "ops",
    "LSTMParams", "bi_lstm", "lstm_cell", "lstm_run",
    "AdamState", "adam_step",
]

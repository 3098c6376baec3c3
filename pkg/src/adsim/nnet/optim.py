"""Adagrad with dense and sparse (embedding-row) updates."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(slots=True)
class RowGrad:
    """Sparse gradient touching only ``indices`` rows of a table parameter."""

    indices: np.ndarray   # (n,)
    rows: np.ndarray      # (n, dim)


@dataclass
class OptimizerState:
    """Per-parameter squared-gradient accumulators for Adagrad."""

    learning_rate: float = 0.05
    eps: float = 1e-8
    accumulators: dict = field(default_factory=dict)

    def accumulator_for(self, name: str, param: np.ndarray) -> np.ndarray:
        acc = self.accumulators.get(name)
        if acc is None:
            acc = np.zeros_like(param)
            self.accumulators[name] = acc
        return acc


def adagrad_step(params: dict, grads: dict, state: OptimizerState):
    """One in-place Adagrad update: acc += g^2; p -= lr * g / sqrt(acc + eps).

    ``grads`` maps parameter names to dense arrays or :class:`RowGrad`.
    Parameters without a gradient entry are left untouched. Raises on
    non-finite gradients, naming the offending block.
    """
    lr, eps = state.learning_rate, state.eps
    for name, g in grads.items():
        p = params[name]
        if isinstance(g, RowGrad):
            if not np.isfinite(g.rows).all():
                raise FloatingPointError(f"non-finite gradient in parameter block {name!r}")
            acc = state.accumulator_for(name, p)
            # aggregate duplicate rows so the accumulator sees one g^2 per step
            uniq, inv = np.unique(g.indices, return_inverse=True)
            agg = np.zeros((len(uniq), g.rows.shape[1]))
            np.add.at(agg, inv, g.rows)
            acc[uniq] += agg ** 2
            p[uniq] -= lr * agg / np.sqrt(acc[uniq] + eps)
        else:
            g = np.asarray(g, dtype=np.float64)
            if not np.isfinite(g).all():
                raise FloatingPointError(f"non-finite gradient in parameter block {name!r}")
            acc = state.accumulator_for(name, p)
            acc += g ** 2
            p -= lr * g / np.sqrt(acc + eps)
    return params, state

"""Central finite-difference gradient checker."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(slots=True)
class GradCheckResult:
    max_rel_error: float
    worst_index: int
    checked: int

    def __float__(self) -> float:
        return self.max_rel_error


def grad_check(loss_fn, get_params, set_params, probe_indices=None,
               eps: float = 1e-5) -> GradCheckResult:
    """Compare analytic gradients against central finite differences.

    ``loss_fn()`` returns ``(loss, flat_grad)`` for the current parameters;
    ``get_params()``/``set_params(vec)`` expose the flat parameter vector.
    ``probe_indices`` restricts the check to a subset of coordinates (useful
    when the parameter vector is large); default checks every coordinate.

    Relative error uses ``|a - n| / max(|a|, |n|, 1e-6)`` so coordinates with
    exactly-zero gradients do not blow up on finite-difference noise.
    """
    theta = np.array(get_params(), dtype=np.float64)
    _, analytic = loss_fn()
    analytic = np.asarray(analytic, dtype=np.float64)
    if analytic.shape != theta.shape:
        raise ValueError("analytic gradient length does not match parameter vector")
    idx = np.arange(len(theta)) if probe_indices is None else np.asarray(probe_indices)

    worst, worst_i = 0.0, -1
    for i in idx.tolist():
        orig = theta[i]
        theta[i] = orig + eps
        set_params(theta)
        lp, _ = loss_fn()
        theta[i] = orig - eps
        set_params(theta)
        lm, _ = loss_fn()
        theta[i] = orig
        numeric = (lp - lm) / (2.0 * eps)
        a = float(analytic[i])
        rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-6)
        if rel > worst:
            worst, worst_i = rel, i
    set_params(theta)
    return GradCheckResult(worst, worst_i, len(idx))

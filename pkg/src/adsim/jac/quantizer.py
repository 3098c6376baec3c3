"""Log-scale quantization of ad-CTR scores and the codebook bridge.

The forward bridge is piecewise constant (a codebook row lookup at the
quantized code). Gradients cross it straight-through: the active row takes
the upstream gradient, and the gradient w.r.t. the input probability is
computed on a piecewise-linear surrogate that interpolates adjacent rows.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..nnet.optim import RowGrad


@dataclass
class QuantizerConfig:
    num_codes: int = 8192     # codebook rows (K)
    curvature: float = 100.0  # log-warp strength (r)
    dim: int = 128            # codebook row width (D)

    def __post_init__(self):
        if self.num_codes < 2:
            raise ValueError("num_codes must be >= 2")
        if self.curvature <= 0:
            raise ValueError("curvature must be positive")


def _code_real(p: np.ndarray, cfg: QuantizerConfig) -> np.ndarray:
    r = cfg.curvature
    return cfg.num_codes * np.log1p(r * p) / math.log1p(r)


def quantize_pctr(p, cfg: QuantizerConfig):
    """Integer code floor(K * log_{r+1}(1 + r p)), clamped into [0, K-1].

    Monotone non-decreasing in p; p=1 raises the raw value K, which the
    clamp maps to K-1. Raises for p outside [0,1]."""
    arr = np.asarray(p, dtype=np.float64)
    if not np.isfinite(arr).all() or (arr < 0).any() or (arr > 1).any():
        raise ValueError("pctr must be finite and inside [0,1]")
    codes = np.clip(np.floor(_code_real(arr, cfg)).astype(np.int64), 0, cfg.num_codes - 1)
    return int(codes) if np.isscalar(p) or arr.ndim == 0 else codes


def code_lower_bound(code: int, cfg: QuantizerConfig) -> float:
    """Smallest p mapping to ``code`` (inverse of the warp at bucket edges)."""
    r = cfg.curvature
    return float(((1.0 + r) ** (code / cfg.num_codes) - 1.0) / r)


def _interp(p: np.ndarray, cfg: QuantizerConfig):
    """Clamped interpolation coordinates: lower row q in [0, K-2], t in [0,1]."""
    cr = np.clip(_code_real(p, cfg), 0.0, cfg.num_codes - 1.0)
    q = np.minimum(np.floor(cr).astype(np.int64), cfg.num_codes - 2)
    return q, cr - q


def _dcode_dp(p: np.ndarray, cfg: QuantizerConfig) -> np.ndarray:
    r = cfg.curvature
    return cfg.num_codes * r / ((1.0 + r * p) * math.log1p(r))


def bridge_embed(p, cfg: QuantizerConfig, codebook: np.ndarray) -> np.ndarray:
    """Codebook row at the quantized code (the training-time forward value)."""
    return codebook[quantize_pctr(p, cfg)]


def bridge_surrogate(p, cfg: QuantizerConfig, codebook: np.ndarray) -> np.ndarray:
    """Differentiable relaxation: interpolation between adjacent rows."""
    arr = np.asarray(p, dtype=np.float64)
    q, t = _interp(arr, cfg)
    t = np.expand_dims(t, -1)
    return (1.0 - t) * codebook[q] + t * codebook[q + 1]


def bridge_backward_batch(upstream: np.ndarray, p: np.ndarray, cfg: QuantizerConfig,
                          codebook: np.ndarray, mode: str = "quantized",
                          pctr_gradient: bool = True):
    """Batched bridge gradients.

    Returns (RowGrad for the codebook, dloss/dp array). In ``quantized``
    mode the active row takes the whole upstream gradient (straight-through);
    in ``surrogate`` mode the upstream splits across the interpolation pair,
    matching :func:`bridge_surrogate` exactly. dloss/dp always follows the
    surrogate slope; ``pctr_gradient=False`` stops it (pure stop-gradient).
    """
    p = np.asarray(p, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    q, t = _interp(p, cfg)
    slope = codebook[q + 1] - codebook[q]                      # (B, D)
    if pctr_gradient:
        dp = (upstream * slope).sum(axis=-1) * _dcode_dp(p, cfg)
    else:
        dp = np.zeros(p.shape)
    if mode == "quantized":
        codes = quantize_pctr(p, cfg)
        row_grad = RowGrad(np.atleast_1d(codes), np.atleast_2d(upstream))
    elif mode == "surrogate":
        tw = np.expand_dims(t, -1)
        idx = np.concatenate([np.atleast_1d(q), np.atleast_1d(q) + 1])
        rows = np.concatenate([np.atleast_2d((1.0 - tw) * upstream),
                               np.atleast_2d(tw * upstream)])
        row_grad = RowGrad(idx, rows)
    else:
        raise ValueError(f"unknown bridge mode {mode!r}")
    return row_grad, dp


def bridge_backward(upstream_grad: np.ndarray, p: float, cfg: QuantizerConfig,
                    codebook: np.ndarray):
    """Single-sample straight-through backward: (codebook RowGrad, dloss/dp)."""
    row_grad, dp = bridge_backward_batch(
        np.asarray(upstream_grad)[None, :], np.asarray([p]), cfg, codebook
    )
    return row_grad, float(dp[0])


def calibrate_curvature(pctrs: np.ndarray, labels: np.ndarray, cfg: QuantizerConfig,
                        grid=(1.0, 10.0, 100.0, 1000.0)) -> float:
    """Pick the warp strength maximizing label information gain of the code.

    Information gain is the mutual information between the bucketed score and
    the binary label on the supplied validation slice."""
    pctrs = np.asarray(pctrs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    best_r, best_mi = None, -1.0
    for r in grid:
        trial = QuantizerConfig(cfg.num_codes, float(r), cfg.dim)
        codes = quantize_pctr(pctrs, trial)
        mi = _mutual_information(codes, labels)
        if mi > best_mi:
            best_mi, best_r = mi, float(r)
    return best_r


def _mutual_information(codes: np.ndarray, labels: np.ndarray) -> float:
    n = len(codes)
    uniq, inv = np.unique(codes, return_inverse=True)
    joint = np.zeros((len(uniq), 2))
    np.add.at(joint, (inv, labels), 1.0)
    joint /= n
    pc = joint.sum(axis=1, keepdims=True)
    py = joint.sum(axis=0, keepdims=True)
    mask = joint > 0
    return float((joint[mask] * np.log(joint[mask] / (pc @ py)[mask])).sum())

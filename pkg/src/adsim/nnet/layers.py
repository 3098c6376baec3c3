"""Dense stacks, DCN cross layers, and single-head attention pooling.

Every forward returns a cache consumed by the matching backward; backwards
are hand-written and validated against central finite differences.
All math is float64; inputs may be single vectors or ``(batch, dim)`` arrays.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class NonFiniteError(FloatingPointError):
    """A forward pass produced a non-finite intermediate."""


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def bce_loss(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean binary cross-entropy computed from logits (stable form)."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    loss = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    return float(loss.mean())


# ---------------------------------------------------------------------------
# Dense stack: relu hidden layers, logistic scalar output
# ---------------------------------------------------------------------------

@dataclass
class DenseLayerStack:
    """Fully connected layers; rectifier activations, logistic scalar output."""

    weights: list
    biases: list

    @classmethod
    def init(cls, dims: list[int], rng: np.random.Generator) -> "DenseLayerStack":
        """He-scaled normal weights, zero biases; ``dims`` includes the input
        width and ends implicitly in a scalar output layer."""
        widths = list(dims) + [1]
        weights, biases = [], []
        for d_in, d_out in zip(widths[:-1], widths[1:]):
            weights.append(rng.normal(0.0, math.sqrt(2.0 / d_in), size=(d_in, d_out)))
            biases.append(np.zeros(d_out))
        return cls(weights, biases)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]


def dense_forward(x: np.ndarray, stack: DenseLayerStack):
    """Returns (output in (0,1), cache). Output has one entry per input row."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.shape[1] != stack.input_dim:
        raise ValueError(f"input width {h.shape[1]} != first layer width {stack.input_dim}")
    acts = [h]
    n_layers = len(stack.weights)
    for i, (w, b) in enumerate(zip(stack.weights, stack.biases)):
        z = h @ w + b
        if not np.isfinite(z).all():
            raise NonFiniteError(f"non-finite pre-activation at dense layer {i}")
        h = np.maximum(z, 0.0) if i < n_layers - 1 else z
        acts.append(h)
    logit = acts[-1][:, 0]
    p = sigmoid(logit)
    # clip keeps the output strictly inside (0,1) at float64 saturation
    p = np.clip(p, 1e-15, 1.0 - 1e-15)
    cache = {"acts": acts, "p": p, "logit": logit, "single": single, "stack": stack}
    return (float(p[0]) if single else p), cache


def dense_backward(cache, upstream_grad, wrt: str = "output"):
    """Gradients of the stack given upstream gradients.

    ``wrt="output"``: upstream is d(loss)/d(sigmoid output);
    ``wrt="logit"``: upstream is d(loss)/d(pre-sigmoid logit), the form used
    in training (BCE through the logistic gives ``p - y``).
    Returns (param_grads dict ``{"w0", "b0", ...}``, input gradient).
    """
    stack: DenseLayerStack = cache["stack"]
    acts, p, single = cache["acts"], cache["p"], cache["single"]
    g = np.atleast_1d(np.asarray(upstream_grad, dtype=np.float64))
    if wrt == "output":
        dlogit = g * p * (1.0 - p)
    elif wrt == "logit":
        dlogit = g
    else:
        raise ValueError(f"unknown wrt {wrt!r}")
    grads = {}
    dh = dlogit[:, None]
    n_layers = len(stack.weights)
    for i in range(n_layers - 1, -1, -1):
        if i < n_layers - 1:
            dh = dh * (acts[i + 1] > 0)
        grads[f"w{i}"] = acts[i].T @ dh
        grads[f"b{i}"] = dh.sum(axis=0)
        dh = dh @ stack.weights[i].T
    dx = dh[0] if single else dh
    return grads, dx


# ---------------------------------------------------------------------------
# DCN cross layer: x0 * (xl . w) + b + xl
# ---------------------------------------------------------------------------

def cross_layer_forward(x0: np.ndarray, xl: np.ndarray, w: np.ndarray, b: np.ndarray):
    x0 = np.asarray(x0, dtype=np.float64)
    xl = np.asarray(xl, dtype=np.float64)
    if x0.shape != xl.shape or x0.shape[-1] != w.shape[0] or w.shape != b.shape:
        raise ValueError("cross layer width mismatch")
    single = x0.ndim == 1
    x0b = x0[None, :] if single else x0
    xlb = xl[None, :] if single else xl
    s = xlb @ w                                   # (B,)
    y = x0b * s[:, None] + b + xlb
    cache = {"x0": x0b, "xl": xlb, "w": w, "s": s, "single": single}
    return (y[0] if single else y), cache


def cross_layer_backward(cache, dy: np.ndarray):
    """Returns (dx0, dxl, dw, db) for upstream gradient dy."""
    x0, xl, w, s, single = cache["x0"], cache["xl"], cache["w"], cache["s"], cache["single"]
    dyb = np.asarray(dy, dtype=np.float64)
    dyb = dyb[None, :] if single else dyb
    ds = (dyb * x0).sum(axis=1)                   # (B,)
    dx0 = dyb * s[:, None]
    dxl = ds[:, None] * w + dyb
    dw = (xl * ds[:, None]).sum(axis=0)
    db = dyb.sum(axis=0)
    if single:
        dx0, dxl = dx0[0], dxl[0]
    return dx0, dxl, dw, db


def cross_layer(x0: np.ndarray, xl: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    y, _ = cross_layer_forward(x0, xl, w, b)
    return y


# ---------------------------------------------------------------------------
# Single-head scaled dot-product attention pooling
# ---------------------------------------------------------------------------

@dataclass
class AttentionPoolParams:
    wk: np.ndarray   # (dim, dim) key projection
    wv: np.ndarray   # (dim, dim) value projection
    q: np.ndarray    # (dim,) learned query

    @classmethod
    def init(cls, dim: int, rng: np.random.Generator) -> "AttentionPoolParams":
        scale = math.sqrt(1.0 / dim)
        return cls(
            wk=rng.normal(0.0, scale, size=(dim, dim)),
            wv=rng.normal(0.0, scale, size=(dim, dim)),
            q=rng.normal(0.0, scale, size=dim),
        )


def attention_pool_forward(seq: np.ndarray, mask: np.ndarray, params: AttentionPoolParams):
    """Pool ``seq`` (B, T, d) into (B, d); ``mask`` marks valid positions.

    Rows with an empty sequence pool to the zero vector and are flagged in
    the returned cache (``cache["cold"]``).
    """
    seq = np.asarray(seq, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    d = seq.shape[-1]
    keys = seq @ params.wk                              # (B,T,d)
    vals = seq @ params.wv
    logits = (keys @ params.q) / math.sqrt(d)           # (B,T)
    neg = np.where(mask, logits, -np.inf)
    zmax = np.max(neg, axis=1, keepdims=True)
    cold = ~np.isfinite(zmax[:, 0])                     # all-masked rows
    zmax = np.where(np.isfinite(zmax), zmax, 0.0)
    ex = np.where(mask, np.exp(neg - zmax), 0.0)
    denom = ex.sum(axis=1, keepdims=True)
    weights = np.where(denom > 0, ex / np.where(denom > 0, denom, 1.0), 0.0)
    pooled = np.einsum("bt,btd->bd", weights, vals)
    cache = {"seq": seq, "mask": mask, "keys": keys, "vals": vals,
             "weights": weights, "params": params, "cold": cold, "d": d}
    return pooled, cache


def attention_pool_backward(cache, dpool: np.ndarray):
    """Returns (dseq, dparams dict with keys wk/wv/q)."""
    seq, mask, keys, vals = cache["seq"], cache["mask"], cache["keys"], cache["vals"]
    weights, params, d = cache["weights"], cache["params"], cache["d"]
    dpool = np.asarray(dpool, dtype=np.float64)

    dvals = weights[:, :, None] * dpool[:, None, :]            # (B,T,d)
    dwv = np.einsum("btd,bte->de", seq, dvals)
    dseq = dvals @ params.wv.T

    dweights = np.einsum("btd,bd->bt", vals, dpool)            # (B,T)
    wsum = (weights * dweights).sum(axis=1, keepdims=True)
    dlogits = weights * (dweights - wsum)                      # softmax backward
    dlogits = np.where(mask, dlogits, 0.0) / math.sqrt(d)

    dq = np.einsum("btd,bt->d", keys, dlogits)
    dkeys = dlogits[:, :, None] * params.q
    dwk = np.einsum("btd,bte->de", seq, dkeys)
    dseq = dseq + dkeys @ params.wk.T
    dseq = np.where(mask[:, :, None], dseq, 0.0)
    return dseq, {"wk": dwk, "wv": dwv, "q": dq}


def attention_pool(sequence, params: AttentionPoolParams):
    """Convenience wrapper for one sequence (list of vectors).

    Returns (pooled vector, cold_start flag); an empty sequence pools to the
    zero vector with the flag set.
    """
    if len(sequence) == 0:
        return np.zeros(params.q.shape[0]), True
    seq = np.asarray(sequence, dtype=np.float64)[None, :, :]
    mask = np.ones((1, seq.shape[1]), dtype=bool)
    pooled, cache = attention_pool_forward(seq, mask, params)
    return pooled[0], bool(cache["cold"][0])

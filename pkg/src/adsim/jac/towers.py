"""The ad-ranking (AR) and creative-ranking (CR) towers.

AR: hashed id embeddings + attention-pooled behavior sequence feeding a
DCN-style cross stack and a dense head. CR: a lighter embedding set and a
small dense stack, optionally taking the quantized-score bridge vector as an
extra input block. Both output a click probability in (0, 1).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..nnet.hashing import EmbeddingTable, stable_hash
from ..nnet.layers import (
    AttentionPoolParams,
    DenseLayerStack,
    attention_pool_backward,
    attention_pool_forward,
    cross_layer_backward,
    cross_layer_forward,
    dense_backward,
    dense_forward,
)
from ..nnet.optim import RowGrad

EMBED_INIT = 0.05


@dataclass
class ArConfig:
    embed_dim: int = 8
    buckets: int = 2 ** 16
    hidden: tuple = (64, 64, 32)
    cross_depth: int = 2
    seed: int = 0


@dataclass
class CrConfig:
    embed_dim: int = 4
    buckets: int = 2 ** 16
    hidden: tuple = (32, 16, 8)
    use_bridge: bool = True
    bridge_dim: int = 128
    seed: int = 1


def _make_table(name: str, buckets: int, dim: int, seed: int) -> EmbeddingTable:
    return EmbeddingTable(buckets, dim, hash_seed=stable_hash(name, seed),
                          init_scale=EMBED_INIT)


class ArTower:
    """Creative-unaware ad CTR tower."""

    ID_FIELDS = ("user", "ad", "cross")

    def __init__(self, cfg: ArConfig):
        self.cfg = cfg
        d = cfg.embed_dim
        rng = np.random.Generator(np.random.Philox(key=[cfg.seed & 0xFFFFFFFF, 0xA7]))
        self.tables = {f: _make_table(f"ar/{f}", cfg.buckets, d, cfg.seed)
                       for f in self.ID_FIELDS}
        self.tables["seq"] = _make_table("ar/seq", cfg.buckets, d, cfg.seed)
        self.attn = AttentionPoolParams.init(d, rng)
        x0_dim = d * 5  # user, ad, cross, demo, pooled sequence
        self.stack = DenseLayerStack.init([x0_dim, *cfg.hidden], rng)
        self.params: dict[str, np.ndarray] = {}
        for f, t in self.tables.items():
            self.params[f"emb_{f}"] = t.values
        self.params["emb_demo"] = rng.uniform(-EMBED_INIT, EMBED_INIT, size=(2, d))
        self.params["attn_wk"] = self.attn.wk
        self.params["attn_wv"] = self.attn.wv
        self.params["attn_q"] = self.attn.q
        for i in range(cfg.cross_depth):
            self.params[f"cross_w{i}"] = np.zeros(x0_dim)
            self.params[f"cross_b{i}"] = np.zeros(x0_dim)
        for i, (w, b) in enumerate(zip(self.stack.weights, self.stack.biases)):
            self.params[f"dense_w{i}"] = w
            self.params[f"dense_b{i}"] = b

    def forward(self, batch: dict):
        embeds, idx = {}, {}
        for f in self.ID_FIELDS:
            embeds[f], idx[f] = self.tables[f].lookup(batch[f])
        demo = batch["demo"]
        e_demo = self.params["emb_demo"][demo]
        seq, mask = batch["seq"], batch["seq_mask"]
        seq_idx = self.tables["seq"].buckets(seq.ravel()).reshape(seq.shape)
        seq_emb = self.tables["seq"].values[seq_idx]
        pooled, attn_cache = attention_pool_forward(seq_emb, mask, self.attn)

        x0 = np.concatenate([embeds["user"], embeds["ad"], embeds["cross"],
                             e_demo, pooled], axis=1)
        xs, cross_caches = [x0], []
        for i in range(self.cfg.cross_depth):
            y, c = cross_layer_forward(x0, xs[-1],
                                       self.params[f"cross_w{i}"],
                                       self.params[f"cross_b{i}"])
            xs.append(y)
            cross_caches.append(c)
        p, dense_cache = dense_forward(xs[-1], self.stack)
        cache = {"idx": idx, "demo": demo, "seq_idx": seq_idx, "mask": mask,
                 "attn": attn_cache, "cross": cross_caches, "dense": dense_cache,
                 "d": self.cfg.embed_dim}
        return p, cache

    def backward(self, cache: dict, dlogit: np.ndarray) -> dict:
        grads, dx = dense_backward(cache["dense"], dlogit, wrt="logit")
        out = {f"dense_{k}": v for k, v in grads.items()}
        dx0 = np.zeros_like(dx)
        dxl = dx
        for i in range(self.cfg.cross_depth - 1, -1, -1):
            dx0_i, dxl, dw, db = cross_layer_backward(cache["cross"][i], dxl)
            dx0 += dx0_i
            out[f"cross_w{i}"] = dw
            out[f"cross_b{i}"] = db
        dx0 += dxl
        d = cache["d"]
        blocks = np.split(dx0, [d, 2 * d, 3 * d, 4 * d], axis=1)
        for f, block in zip(self.ID_FIELDS, blocks[:3]):
            out[f"emb_{f}"] = RowGrad(cache["idx"][f], block)
        out["emb_demo"] = RowGrad(cache["demo"], blocks[3])
        dseq, attn_grads = attention_pool_backward(cache["attn"], blocks[4])
        out["attn_wk"] = attn_grads["wk"]
        out["attn_wv"] = attn_grads["wv"]
        out["attn_q"] = attn_grads["q"]
        mask = cache["mask"]
        out["emb_seq"] = RowGrad(cache["seq_idx"][mask], dseq[mask])
        return out


class CrTower:
    """Creative CTR tower; optionally consumes the bridge vector."""

    ID_FIELDS = ("user", "ad", "creative", "content")

    def __init__(self, cfg: CrConfig):
        self.cfg = cfg
        d = cfg.embed_dim
        rng = np.random.Generator(np.random.Philox(key=[cfg.seed & 0xFFFFFFFF, 0xC4]))
        self.tables = {f: _make_table(f"cr/{f}", cfg.buckets, d, cfg.seed)
                       for f in self.ID_FIELDS}
        in_dim = d * 5 + (cfg.bridge_dim if cfg.use_bridge else 0)
        self.stack = DenseLayerStack.init([in_dim, *cfg.hidden], rng)
        self.params: dict[str, np.ndarray] = {}
        for f, t in self.tables.items():
            self.params[f"emb_{f}"] = t.values
        self.params["emb_demo"] = rng.uniform(-EMBED_INIT, EMBED_INIT, size=(2, d))
        for i, (w, b) in enumerate(zip(self.stack.weights, self.stack.biases)):
            self.params[f"dense_w{i}"] = w
            self.params[f"dense_b{i}"] = b

    def forward(self, batch: dict, bridge: np.ndarray | None = None):
        embeds, idx = {}, {}
        for f in self.ID_FIELDS:
            embeds[f], idx[f] = self.tables[f].lookup(batch[f])
        demo = batch["demo"]
        parts = [embeds[f] for f in self.ID_FIELDS] + [self.params["emb_demo"][demo]]
        if self.cfg.use_bridge:
            if bridge is None:
                raise ValueError("this CR tower requires a bridge input")
            parts.append(bridge)
        elif bridge is not None:
            raise ValueError("bridge input supplied to a bridgeless CR tower")
        x = np.concatenate(parts, axis=1)
        p, dense_cache = dense_forward(x, self.stack)
        cache = {"idx": idx, "demo": demo, "dense": dense_cache, "d": self.cfg.embed_dim}
        return p, cache

    def backward(self, cache: dict, dlogit: np.ndarray):
        grads, dx = dense_backward(cache["dense"], dlogit, wrt="logit")
        out = {f"dense_{k}": v for k, v in grads.items()}
        d = cache["d"]
        for j, f in enumerate(self.ID_FIELDS):
            out[f"emb_{f}"] = RowGrad(cache["idx"][f], dx[:, j * d:(j + 1) * d])
        out["emb_demo"] = RowGrad(cache["demo"], dx[:, 4 * d:5 * d])
        dbridge = dx[:, 5 * d:] if self.cfg.use_bridge else None
        return out, dbridge

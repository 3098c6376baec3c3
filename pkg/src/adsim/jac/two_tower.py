"""Cosine two-tower creative ranker (vector-product baseline)."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..nnet.checkpoint import save_checkpoint
from ..nnet.hashing import EmbeddingTable, stable_hash
from ..nnet.layers import bce_loss, sigmoid
from ..nnet.optim import OptimizerState, RowGrad, adagrad_step
from ..simworld import World
from .features import FeatureEncoder
from .model import _RankerMixin, _SCORE_CHUNK, _creative_table

_NORM_FLOOR = 1e-12


@dataclass
class TwoTowerConfig:
    embed_dim: int = 4
    buckets: int = 2 ** 16
    vec_dim: int = 16
    seed: int = 2


class TwoTowerModel:
    """Query-user tower vs ad-creative tower, scored by cosine distance."""

    model_type = "two_tower"

    def __init__(self, cfg: TwoTowerConfig | None = None):
        self.cfg = cfg = cfg or TwoTowerConfig()
        d, v = cfg.embed_dim, cfg.vec_dim
        rng = np.random.Generator(np.random.Philox(key=[cfg.seed & 0xFFFFFFFF, 0x77]))
        self.tables = {
            f: EmbeddingTable(cfg.buckets, d, hash_seed=stable_hash(f"tt/{f}", cfg.seed))
            for f in ("user", "ad", "creative")
        }
        self.params = {f"emb_{f}": t.values for f, t in self.tables.items()}
        self.params["emb_demo"] = rng.uniform(-0.05, 0.05, size=(2, d))
        self.params["w_user"] = rng.normal(0.0, (2 * d) ** -0.5, size=(2 * d, v))
        self.params["w_item"] = rng.normal(0.0, (2 * d) ** -0.5, size=(2 * d, v))
        self.params["scale"] = np.array([4.0])
        self.params["bias"] = np.array([-4.0])

    def forward(self, enc: FeatureEncoder, users, ads, creatives):
        demo = enc.demo[np.asarray(users, dtype=np.int64)]
        eu, iu = self.tables["user"].lookup(users)
        ea, ia = self.tables["ad"].lookup(ads)
        ec, ic = self.tables["creative"].lookup(creatives)
        xu = np.concatenate([eu, self.params["emb_demo"][demo]], axis=1)
        xv = np.concatenate([ea, ec], axis=1)
        u = xu @ self.params["w_user"]
        v = xv @ self.params["w_item"]
        nu = np.sqrt((u * u).sum(axis=1)) + _NORM_FLOOR
        nv = np.sqrt((v * v).sum(axis=1)) + _NORM_FLOOR
        cos = (u * v).sum(axis=1) / (nu * nv)
        logit = self.params["scale"][0] * cos + self.params["bias"][0]
        p = np.clip(sigmoid(logit), 1e-15, 1 - 1e-15)
        cache = dict(xu=xu, xv=xv, u=u, v=v, nu=nu, nv=nv, cos=cos, logit=logit,
                     p=p, iu=iu, ia=ia, ic=ic, demo=demo)
        return p, cache

    def backward(self, cache, dlogit):
        u, v, nu, nv, cos = cache["u"], cache["v"], cache["nu"], cache["nv"], cache["cos"]
        grads = {
            "scale": np.array([float(dlogit @ cos)]),
            "bias": np.array([float(dlogit.sum())]),
        }
        dcos = (dlogit * self.params["scale"][0])[:, None]
        du = dcos * (v / (nu * nv)[:, None] - (cos / nu ** 2)[:, None] * u)
        dv = dcos * (u / (nu * nv)[:, None] - (cos / nv ** 2)[:, None] * v)
        grads["w_user"] = cache["xu"].T @ du
        grads["w_item"] = cache["xv"].T @ dv
        dxu = du @ self.params["w_user"].T
        dxv = dv @ self.params["w_item"].T
        d = self.cfg.embed_dim
        grads["emb_user"] = RowGrad(cache["iu"], dxu[:, :d])
        grads["emb_demo"] = RowGrad(cache["demo"], dxu[:, d:])
        grads["emb_ad"] = RowGrad(cache["ia"], dxv[:, :d])
        grads["emb_creative"] = RowGrad(cache["ic"], dxv[:, d:])
        return grads

    def train_step(self, enc, users, ads, creatives, labels, opt: OptimizerState):
        p, cache = self.forward(enc, users, ads, creatives)
        loss = bce_loss(cache["logit"], labels)
        grads = self.backward(cache, (p - labels) / len(labels))
        adagrad_step(self.params, grads, opt)
        return {"loss_cr": loss}

    def scorer(self, world: World) -> "TwoTowerScorer":
        return TwoTowerScorer(self, FeatureEncoder(world))


class TwoTowerScorer(_RankerMixin):
    def __init__(self, model: TwoTowerModel, enc: FeatureEncoder):
        self.model = model
        self.enc = enc

    def score_many(self, users, ads, creatives) -> np.ndarray:
        out = np.empty(len(users))
        for lo in range(0, len(users), _SCORE_CHUNK):
            hi = min(lo + _SCORE_CHUNK, len(users))
            p, _ = self.model.forward(self.enc, users[lo:hi], ads[lo:hi],
                                      creatives[lo:hi])
            out[lo:hi] = p
        return out

    def table(self, world: World) -> np.ndarray:
        return _creative_table(self, world)


def save_two_tower(model: TwoTowerModel, path) -> None:
    save_checkpoint(path, dict(model.params),
                    {"model_type": model.model_type, "cfg": asdict(model.cfg)})

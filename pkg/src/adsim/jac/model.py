"""Joint ad/creative CTR model: training, serving split, and scorers.

The joint model runs the AR tower, quantizes its output probability into a
codebook embedding (the bridge), and feeds that embedding to the CR tower
alongside the creative features. Both heads train against the click label;
gradients reach the AR tower through its own head and through the bridge's
straight-through path.

After training the model splits into two independent serving halves: the AR
tower standalone, and the CR tower with the live bridge input replaced by a
per-ad historical CTR.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..nnet.checkpoint import load_checkpoint, save_checkpoint
from ..nnet.layers import bce_loss
from ..nnet.optim import OptimizerState, RowGrad, adagrad_step
from ..records import LogColumns, as_columns
from ..simworld import CREATIVE_BASE, World
from .features import FeatureEncoder
from .quantizer import (
    QuantizerConfig,
    bridge_backward_batch,
    bridge_embed,
    bridge_surrogate,
)
from .towers import ArConfig, ArTower, CrConfig, CrTower

DEFAULT_PRIOR_CTR = 0.024  # global fallback for ads missing a historical CTR


# ---------------------------------------------------------------------------
# Flat parameter plumbing (for the gradient checker)
# ---------------------------------------------------------------------------

def flat_spec(params: dict) -> list[tuple[str, int, int]]:
    """(name, offset, size) for the deterministic flat layout (sorted names)."""
    spec, off = [], 0
    for name in sorted(params):
        size = params[name].size
        spec.append((name, off, size))
        off += size
    return spec


def get_flat(params: dict) -> np.ndarray:
    return np.concatenate([params[n].ravel() for n, _, _ in flat_spec(params)])


def set_flat(params: dict, vec: np.ndarray) -> None:
    for name, off, size in flat_spec(params):
        np.copyto(params[name], vec[off:off + size].reshape(params[name].shape))


def grads_to_flat(params: dict, grads: dict) -> np.ndarray:
    out = np.zeros(sum(p.size for p in params.values()))
    for name, off, size in flat_spec(params):
        g = grads.get(name)
        if g is None:
            continue
        if isinstance(g, RowGrad):
            dense = np.zeros_like(params[name])
            np.add.at(dense, g.indices, g.rows)
            out[off:off + size] = dense.ravel()
        else:
            out[off:off + size] = np.asarray(g).ravel()
    return out


# ---------------------------------------------------------------------------
# Standalone towers as trainable models
# ---------------------------------------------------------------------------

class ArModel:
    """Creative-unaware ad CTR model (the non-joint baseline)."""

    model_type = "ar"

    def __init__(self, cfg: ArConfig | None = None):
        self.cfg = cfg or ArConfig()
        self.tower = ArTower(self.cfg)
        self.params = self.tower.params

    def train_step(self, enc: FeatureEncoder, users, ads, creatives, labels,
                   opt: OptimizerState) -> dict:
        p, cache = self.tower.forward(enc.ar_arrays(users, ads))
        logit = cache["dense"]["logit"]
        loss = bce_loss(logit, labels)
        grads = self.tower.backward(cache, (p - labels) / len(labels))
        adagrad_step(self.params, grads, opt)
        return {"loss_ad": loss}

    def scorer(self, world: World) -> "ArScorer":
        return ArScorer(self.tower, FeatureEncoder(world))


class CrModel:
    """Standalone creative CTR model (no bridge input)."""

    model_type = "cr"

    def __init__(self, cfg: CrConfig | None = None):
        cfg = cfg or CrConfig(use_bridge=False)
        if cfg.use_bridge:
            raise ValueError("standalone CR must be built with use_bridge=False")
        self.cfg = cfg
        self.tower = CrTower(cfg)
        self.params = self.tower.params

    def train_step(self, enc: FeatureEncoder, users, ads, creatives, labels,
                   opt: OptimizerState) -> dict:
        p, cache = self.tower.forward(enc.cr_arrays(users, ads, creatives))
        loss = bce_loss(cache["dense"]["logit"], labels)
        grads, _ = self.tower.backward(cache, (p - labels) / len(labels))
        adagrad_step(self.params, grads, opt)
        return {"loss_cr": loss}

    def scorer(self, world: World) -> "CrScorer":
        return CrScorer(self.tower, FeatureEncoder(world))


# ---------------------------------------------------------------------------
# The joint model
# ---------------------------------------------------------------------------

class JacModel:
    """AR and CR towers trained jointly through the quantized-score bridge."""

    model_type = "jac"

    def __init__(self, ar_cfg: ArConfig | None = None, cr_cfg: CrConfig | None = None,
                 qcfg: QuantizerConfig | None = None, loss_weight: float = 1.0,
                 pctr_gradient: bool = True, seed: int = 0):
        self.qcfg = qcfg or QuantizerConfig()
        self.ar_cfg = ar_cfg or ArConfig(seed=seed)
        cr_cfg = cr_cfg or CrConfig(seed=seed + 1, bridge_dim=self.qcfg.dim)
        if not cr_cfg.use_bridge:
            raise ValueError("the joint model needs a bridged CR tower")
        if cr_cfg.bridge_dim != self.qcfg.dim:
            raise ValueError("CR bridge width must equal the codebook dimension")
        self.cr_cfg = cr_cfg
        self.loss_weight = loss_weight
        self.pctr_gradient = pctr_gradient
        self.seed = seed
        self.ar = ArTower(self.ar_cfg)
        self.cr = CrTower(self.cr_cfg)
        rng = np.random.Generator(np.random.Philox(key=[seed & 0xFFFFFFFF, 0xB00C]))
        self.codebook = rng.uniform(-0.05, 0.05, size=(self.qcfg.num_codes, self.qcfg.dim))
        self.params = {f"ar/{k}": v for k, v in self.ar.params.items()}
        self.params.update({f"cr/{k}": v for k, v in self.cr.params.items()})
        self.params["codebook"] = self.codebook

    def forward(self, enc: FeatureEncoder, users, ads, creatives,
                mode: str = "quantized"):
        """Returns (pctr_ad, pctr_c, cache)."""
        p_ad, ar_cache = self.ar.forward(enc.ar_arrays(users, ads))
        if mode == "quantized":
            bridge = bridge_embed(p_ad, self.qcfg, self.codebook)
        elif mode == "surrogate":
            bridge = bridge_surrogate(p_ad, self.qcfg, self.codebook)
        else:
            raise ValueError(f"unknown bridge mode {mode!r}")
        p_c, cr_cache = self.cr.forward(enc.cr_arrays(users, ads, creatives), bridge)
        return p_ad, p_c, {"ar": ar_cache, "cr": cr_cache, "p_ad": p_ad,
                           "labels": None, "mode": mode}

    def loss_and_grads(self, enc: FeatureEncoder, users, ads, creatives, labels,
                       mode: str = "quantized"):
        labels = np.asarray(labels, dtype=np.float64)
        p_ad, p_c, cache = self.forward(enc, users, ads, creatives, mode)
        loss_ad = bce_loss(cache["ar"]["dense"]["logit"], labels)
        loss_cr = bce_loss(cache["cr"]["dense"]["logit"], labels)
        n = len(labels)
        cr_grads, dbridge = self.cr.backward(cache["cr"],
                                             self.loss_weight * (p_c - labels) / n)
        row_grad, dp = bridge_backward_batch(dbridge, p_ad, self.qcfg, self.codebook,
                                             mode=mode, pctr_gradient=self.pctr_gradient)
        dlogit_ar = (p_ad - labels) / n + dp * p_ad * (1.0 - p_ad)
        ar_grads = self.ar.backward(cache["ar"], dlogit_ar)
        grads = {f"ar/{k}": v for k, v in ar_grads.items()}
        grads.update({f"cr/{k}": v for k, v in cr_grads.items()})
        grads["codebook"] = row_grad
        return loss_ad, loss_cr, grads

    def train_step(self, enc: FeatureEncoder, users, ads, creatives, labels,
                   opt: OptimizerState) -> dict:
        loss_ad, loss_cr, grads = self.loss_and_grads(enc, users, ads, creatives, labels)
        adagrad_step(self.params, grads, opt)
        return {"loss_ad": loss_ad, "loss_cr": loss_cr}

    # -- gradient-checker interface -------------------------------------

    def flat_params(self) -> np.ndarray:
        return get_flat(self.params)

    def set_flat_params(self, vec: np.ndarray) -> None:
        set_flat(self.params, vec)

    def flat_loss_and_grad(self, enc, users, ads, creatives, labels,
                           mode: str = "surrogate"):
        """Total loss plus flat gradient, on the differentiable surrogate path."""
        loss_ad, loss_cr, grads = self.loss_and_grads(enc, users, ads, creatives,
                                                      labels, mode=mode)
        return loss_ad + self.loss_weight * loss_cr, grads_to_flat(self.params, grads)

    # -- serving ----------------------------------------------------------

    def split_for_serving(self, historical_ctr: np.ndarray,
                          global_prior: float = DEFAULT_PRIOR_CTR):
        """Split into (ArPlus, CrPlus); neither half calls the other.

        ``historical_ctr`` is a per-ad vector; nan entries mean cold ads and
        fall back to ``global_prior``."""
        return (ArPlusModel(self.ar_cfg, _copy_params(self.ar.params)),
                CrPlusModel(self.cr_cfg, self.qcfg, _copy_params(self.cr.params),
                            self.codebook.copy(),
                            np.asarray(historical_ctr, dtype=np.float64),
                            global_prior))

    def joint_scorer(self, world: World) -> "JacJointScorer":
        return JacJointScorer(self, FeatureEncoder(world))

    def ar_scorer(self, world: World) -> "ArScorer":
        return ArScorer(self.ar, FeatureEncoder(world))


def _copy_params(params: dict) -> dict:
    return {k: v.copy() for k, v in params.items()}


def _load_tower(tower, params: dict) -> None:
    for k, v in params.items():
        np.copyto(tower.params[k], v)


class ArPlusModel:
    """Serving half: the AR tower split out of a trained joint model."""

    model_type = "ar_plus"

    def __init__(self, cfg: ArConfig, params: dict):
        self.cfg = cfg
        self.tower = ArTower(cfg)
        _load_tower(self.tower, params)
        self.params = self.tower.params

    def scorer(self, world: World) -> "ArScorer":
        return ArScorer(self.tower, FeatureEncoder(world))


class CrPlusModel:
    """Serving half: the CR tower with a historical-CTR bridge input."""

    model_type = "cr_plus"

    def __init__(self, cfg: CrConfig, qcfg: QuantizerConfig, params: dict,
                 codebook: np.ndarray, historical_ctr: np.ndarray,
                 global_prior: float = DEFAULT_PRIOR_CTR):
        self.cfg = cfg
        self.qcfg = qcfg
        self.tower = CrTower(cfg)
        _load_tower(self.tower, params)
        self.params = self.tower.params
        self.codebook = codebook
        self.historical_ctr = historical_ctr
        self.global_prior = global_prior
        self.cold_ad_warnings = 0

    def bridge_input(self, ads: np.ndarray) -> np.ndarray:
        p = self.historical_ctr[ads]
        missing = np.isnan(p)
        self.cold_ad_warnings += int(missing.sum())
        return np.where(missing, self.global_prior, p)

    def scorer(self, world: World) -> "CrScorer":
        return CrScorer(self.tower, FeatureEncoder(world), bridge_source=self)


def historical_ctr_from_log(log, num_ads: int) -> np.ndarray:
    """Laplace-smoothed per-ad CTR, (clicks+1)/(impressions+2); nan = unseen."""
    cols = as_columns(log)
    imps = np.bincount(cols.ad_id, minlength=num_ads).astype(np.float64)
    clicks = np.bincount(cols.ad_id, weights=cols.click, minlength=num_ads)
    out = (clicks + 1.0) / (imps + 2.0)
    out[imps == 0] = np.nan
    return out


# ---------------------------------------------------------------------------
# Scorers: vectorized model evaluation for metrics and serving
# ---------------------------------------------------------------------------

_SCORE_CHUNK = 65536


class _RankerMixin:
    """Adapts a vectorized scorer to the per-record creative-ranker contract."""

    def __call__(self, record, creative_id) -> float:
        return float(self.score_many(np.asarray([record.user_id]),
                                     np.asarray([record.ad_id]),
                                     np.asarray([creative_id]))[0])


class ArScorer:
    """Ad-level pCTR for (user, ad) pairs."""

    def __init__(self, tower: ArTower, enc: FeatureEncoder):
        self.tower = tower
        self.enc = enc

    def score(self, users: np.ndarray, ads: np.ndarray) -> np.ndarray:
        out = np.empty(len(users))
        for lo in range(0, len(users), _SCORE_CHUNK):
            hi = min(lo + _SCORE_CHUNK, len(users))
            p, _ = self.tower.forward(self.enc.ar_arrays(users[lo:hi], ads[lo:hi]))
            out[lo:hi] = p
        return out

    def table(self, world: World) -> np.ndarray:
        """Full (num_users, num_ads) score table."""
        users, ads = np.meshgrid(np.arange(world.num_users),
                                 np.arange(world.num_ads), indexing="ij")
        return self.score(users.ravel(), ads.ravel()).reshape(users.shape)


class CrScorer(_RankerMixin):
    """Creative-level pCTR; covers standalone CR and CR+ (historical bridge)."""

    def __init__(self, tower: CrTower, enc: FeatureEncoder,
                 bridge_source: CrPlusModel | None = None):
        if tower.cfg.use_bridge and bridge_source is None:
            raise ValueError("bridged CR tower needs a bridge source for serving")
        self.tower = tower
        self.enc = enc
        self.bridge_source = bridge_source

    def score_many(self, users: np.ndarray, ads: np.ndarray,
                   creatives: np.ndarray) -> np.ndarray:
        out = np.empty(len(users))
        for lo in range(0, len(users), _SCORE_CHUNK):
            hi = min(lo + _SCORE_CHUNK, len(users))
            batch = self.enc.cr_arrays(users[lo:hi], ads[lo:hi], creatives[lo:hi])
            bridge = None
            if self.bridge_source is not None:
                p_hist = self.bridge_source.bridge_input(np.asarray(ads[lo:hi]))
                bridge = bridge_embed(p_hist, self.bridge_source.qcfg,
                                      self.bridge_source.codebook)
            p, _ = self.tower.forward(batch, bridge)
            out[lo:hi] = p
        return out

    def table(self, world: World) -> np.ndarray:
        """(num_users, num_ads, max_n) creative score table; invalid slots nan."""
        return _creative_table(self, world)


class JacJointScorer(_RankerMixin):
    """Joint forward (live AR output feeding the bridge); offline use only."""

    def __init__(self, model: JacModel, enc: FeatureEncoder):
        self.model = model
        self.enc = enc

    def score_many(self, users, ads, creatives) -> np.ndarray:
        out = np.empty(len(users))
        for lo in range(0, len(users), _SCORE_CHUNK):
            hi = min(lo + _SCORE_CHUNK, len(users))
            _, p_c, _ = self.model.forward(self.enc, users[lo:hi], ads[lo:hi],
                                           creatives[lo:hi])
            out[lo:hi] = p_c
        return out

    def table(self, world: World) -> np.ndarray:
        return _creative_table(self, world)


def _creative_table(scorer, world: World) -> np.ndarray:
    max_n = world.max_n
    users, ads, slots = np.meshgrid(np.arange(world.num_users),
                                    np.arange(world.num_ads),
                                    np.arange(max_n), indexing="ij")
    valid = slots < world.n_creatives[ads]
    creatives = ads * CREATIVE_BASE + slots
    table = np.full(users.shape, np.nan)
    table[valid] = scorer.score_many(users[valid], ads[valid], creatives[valid])
    return table


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

def train_on_log(model, world: World, log, batch_size: int = 512,
                 learning_rate: float = 0.05, epochs: int = 1) -> list[dict]:
    """Single-threaded minibatch training in log order; returns the loss curve.

    Raises FloatingPointError with batch diagnostics on a non-finite loss."""
    cols = as_columns(log)
    enc = FeatureEncoder(world)
    opt = OptimizerState(learning_rate=learning_rate)
    curve = []
    n = len(cols)
    step = 0
    for _ in range(epochs):
        for lo in range(0, n, batch_size):
            hi = min(lo + batch_size, n)
            losses = model.train_step(
                enc, cols.user_id[lo:hi], cols.ad_id[lo:hi],
                cols.shown_creative_id[lo:hi],
                cols.click[lo:hi].astype(np.float64), opt,
            )
            if any(not np.isfinite(v) for v in losses.values()):
                raise FloatingPointError(
                    f"non-finite loss at step {step} (records {lo}:{hi}): {losses}"
                )
            curve.append({"step": step, **losses})
            step += 1
    return curve


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_model(model, path) -> None:
    meta: dict = {"model_type": model.model_type}
    arrays = dict(model.params)
    if model.model_type in ("ar", "ar_plus"):
        meta["ar_cfg"] = asdict(model.cfg)
    elif model.model_type == "cr":
        meta["cr_cfg"] = asdict(model.cfg)
    elif model.model_type == "cr_plus":
        meta["cr_cfg"] = asdict(model.cfg)
        meta["qcfg"] = asdict(model.qcfg)
        meta["global_prior"] = model.global_prior
        arrays = dict(arrays, codebook=model.codebook,
                      historical_ctr=model.historical_ctr)
    elif model.model_type == "jac":
        meta["ar_cfg"] = asdict(model.ar_cfg)
        meta["cr_cfg"] = asdict(model.cr_cfg)
        meta["qcfg"] = asdict(model.qcfg)
        meta["loss_weight"] = model.loss_weight
        meta["pctr_gradient"] = model.pctr_gradient
        meta["seed"] = model.seed
    elif model.model_type == "two_tower":
        meta["cfg"] = asdict(model.cfg)
    else:
        raise ValueError(f"unknown model type {model.model_type!r}")
    save_checkpoint(path, arrays, meta)


def load_model(path):
    arrays, meta = load_checkpoint(path)
    kind = meta["model_type"]
    if kind == "ar":
        model = ArModel(ArConfig(**_tupled(meta["ar_cfg"], "hidden")))
    elif kind == "ar_plus":
        cfg = ArConfig(**_tupled(meta["ar_cfg"], "hidden"))
        return ArPlusModel(cfg, arrays)
    elif kind == "cr":
        model = CrModel(CrConfig(**_tupled(meta["cr_cfg"], "hidden")))
    elif kind == "cr_plus":
        return CrPlusModel(
            CrConfig(**_tupled(meta["cr_cfg"], "hidden")),
            QuantizerConfig(**meta["qcfg"]),
            {k: v for k, v in arrays.items()
             if k not in ("codebook", "historical_ctr")},
            arrays["codebook"], arrays["historical_ctr"],
            meta.get("global_prior", DEFAULT_PRIOR_CTR),
        )
    elif kind == "jac":
        model = JacModel(
            ArConfig(**_tupled(meta["ar_cfg"], "hidden")),
            CrConfig(**_tupled(meta["cr_cfg"], "hidden")),
            QuantizerConfig(**meta["qcfg"]),
            loss_weight=meta["loss_weight"],
            pctr_gradient=meta["pctr_gradient"],
            seed=meta.get("seed", 0),
        )
    elif kind == "two_tower":
        from .two_tower import TwoTowerConfig, TwoTowerModel
        model = TwoTowerModel(TwoTowerConfig(**meta["cfg"]))
    else:
        raise ValueError(f"unknown model type {kind!r}")
    for k, v in arrays.items():
        np.copyto(model.params[k], v)
    return model


def _tupled(cfg: dict, key: str) -> dict:
    cfg = dict(cfg)
    cfg[key] = tuple(cfg[key])
    return cfg

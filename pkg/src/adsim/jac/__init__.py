"""Joint ad/creative CTR model and its serving split."""
from .features import FeatureEncoder
from .model import (
    ArModel,
    ArPlusModel,
    ArScorer,
    CrModel,
    CrPlusModel,
    CrScorer,
    JacJointScorer,
    JacModel,
    DEFAULT_PRIOR_CTR,
    historical_ctr_from_log,
    load_model,
    save_model,
    train_on_log,
)
from .quantizer import (
    QuantizerConfig,
    bridge_backward,
    bridge_embed,
    bridge_surrogate,
    calibrate_curvature,
    code_lower_bound,
    quantize_pctr,
)
from .towers import ArConfig, ArTower, CrConfig, CrTower
from .two_tower import TwoTowerConfig, TwoTowerModel, TwoTowerScorer, save_two_tower

__all__ = [
    "FeatureEncoder",
    "ArModel", "ArPlusModel", "ArScorer", "CrModel", "CrPlusModel", "CrScorer",
    "JacJointScorer", "JacModel", "DEFAULT_PRIOR_CTR",
    "historical_ctr_from_log", "load_model", "save_model", "train_on_log",
    "QuantizerConfig", "bridge_backward", "bridge_embed", "bridge_surrogate",
    "calibrate_curvature", "code_lower_bound", "quantize_pctr",
    "ArConfig", "ArTower", "CrConfig", "CrTower",
    "TwoTowerConfig", "TwoTowerModel", "TwoTowerScorer", "save_two_tower",
]

"""adsim: ad/creative ranking simulator with replay metrics and a joint CTR model."""
from . import jac, metrics, nnet, pipeline, presets, rankers, records, simworld

__version__ = "0.1.0"

__all__ = ["jac", "metrics", "nnet", "pipeline", "presets", "rankers",
           "records", "simworld", "__version__"]

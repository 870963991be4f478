"""Meta-learning for bags of instances in heterogeneous networks."""

__version__ = "0.1.0"

from .config import RunConfig, load_config, parse_config, stage_seed
from .hmin import Hmin, load_hmin, save_hmin, validate
from .meta import GlobalPrior, adapt_and_predict, inner_adapt, meta_train
from .metrics import evaluate, format_report, summarize
from .synth import SynthConfig, generate_synthetic

__all__ = [
    "GlobalPrior",
    "Hmin",
    "RunConfig",
    "SynthConfig",
    "adapt_and_predict",
    "evaluate",
    "format_report",
    "generate_synthetic",
    "inner_adapt",
    "load_config",
    "load_hmin",
    "meta_train",
    "parse_config",
    "save_hmin",
    "stage_seed",
    "summarize",
    "validate",
]

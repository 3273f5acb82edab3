"""Ordinal variable-response-propensity estimation for surveys with nonignorable nonresponse."""

__version__ = "0.1.0"

from .bvn import bvn_cdf, rect_prob, std_normal_cdf  # noqa: E402
from .estimator import FitConfig, FitResult, fit  # noqa: E402
from .likelihood import CellTable, NonresponseDesign, log_likelihood  # noqa: E402
from .model import ModelSpec, ParamSet, RespondentRecord, Stratum, pack, unpack  # noqa: E402
from .vrp import OrdinalVRP  # noqa: E402

__all__ = [
    "__version__",
    "bvn_cdf", "rect_prob", "std_normal_cdf",
    "FitConfig", "FitResult", "fit",
    "CellTable", "NonresponseDesign", "log_likelihood",
    "ModelSpec", "ParamSet", "RespondentRecord", "Stratum", "pack", "unpack",
    "OrdinalVRP",
]

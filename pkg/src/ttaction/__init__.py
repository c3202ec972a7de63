"""Matrix-free tensor-train toolkit.

Build tensor-train representations of high-order tensors using only their
action (contraction against one vector per mode, one mode left free), and
expose high-order derivative tensors of implicitly defined maps as such
actions.
"""

from .core import (
    DENSE_GUARD,
    ActionOracle,
    TensorTrain,
    dense_action,
    fix_signs,
    frobenius,
    oracle_from_dense,
    oracle_from_tt,
    relative_error,
    tt_apply,
    tt_dense_error,
    tt_load,
    tt_load_json,
    tt_partial_apply,
    tt_round,
    tt_save,
    tt_save_json,
    tt_svd,
    tt_to_dense,
)
from .builder import (
    BuildConfig,
    BuildReport,
    predicted_action_count,
    solve_interpolation,
    tt_from_actions,
)
from .rangefinder import (
    RangeBasis,
    RangeProblem,
    adaptive_range,
    posterior_error,
    randomized_range,
)
from . import errors

__version__ = "0.1.0"

__all__ = [
    "ActionOracle",
    "BuildConfig",
    "BuildReport",
    "DENSE_GUARD",
    "RangeBasis",
    "RangeProblem",
    "TensorTrain",
    "adaptive_range",
    "dense_action",
    "errors",
    "fix_signs",
    "frobenius",
    "oracle_from_dense",
    "oracle_from_tt",
    "posterior_error",
    "predicted_action_count",
    "randomized_range",
    "relative_error",
    "solve_interpolation",
    "tt_apply",
    "tt_dense_error",
    "tt_from_actions",
    "tt_load",
    "tt_load_json",
    "tt_partial_apply",
    "tt_round",
    "tt_save",
    "tt_save_json",
    "tt_svd",
    "tt_to_dense",
    "__version__",
]

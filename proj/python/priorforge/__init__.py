"""Synthetic tabular priors, a toy in-context tabular transformer and
prior-quality analysis tools."""

from ._priorforge import (
    PRIORS,
    Model,
    PriorforgeError,
    TfmConfig,
    TrainHp,
    __version__,
    auc_ovo,
    generate,
    leaderboard,
    select_priors,
)

__all__ = [
    "PRIORS",
    "Model",
    "PriorforgeError",
    "TfmConfig",
    "TrainHp",
    "__version__",
    "auc_ovo",
    "generate",
    "leaderboard",
    "select_priors",
]

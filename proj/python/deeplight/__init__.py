"""Lightning occurrence forecasting on an hourly grid.

Thin Python layer over the C++ core: synthetic scenes, the forecaster
forward pass, the blurred-label loss, and verification scores. The CLI
(`deeplight` binary) and the dataset/checkpoint file formats are the
primary interface; this module mirrors the pieces useful from notebooks.
"""

from ._core import (
    DeeplightError,
    Model,
    blur_ground_truth,
    generate,
    load_dataset,
    persistence,
    scores,
    total_loss,
    wbce_loss,
)

__all__ = [
    "DeeplightError",
    "Model",
    "blur_ground_truth",
    "generate",
    "load_dataset",
    "persistence",
    "scores",
    "total_loss",
    "wbce_loss",
]

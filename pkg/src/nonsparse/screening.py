"""Sure independence screening by marginal correlation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model_core import Dataset

__all__ = ["ScreenResult", "sis_screen"]


@dataclass(frozen=True)
class ScreenResult:
    kept: np.ndarray  # ascending 0-based column indices
    scores: np.ndarray


def sis_screen(d: Dataset, d_keep: int | None = None) -> ScreenResult:
    """Keep the ``d_keep`` columns with the largest ``|x_j'Y| / n``.

    Columns must already be standardized.  Ties go to the lower index.
    ``d_keep`` defaults to ``n - 1``.
    """
    if d_keep is None:
        d_keep = d.n - 1
    if not 1 <= d_keep <= d.p:
        raise ValueError(f"d_keep must be in [1, {d.p}], got {d_keep}")
    scores = np.abs(d.design.T @ d.response) / d.n
    order = np.lexsort((np.arange(d.p), -scores))
    return ScreenResult(np.sort(order[:d_keep]), scores)

from __future__ import annotations

from enum import Enum

import numpy as np
from scipy import ndimage


class MorphOp(Enum):
    DILATE = "dilate"
    ERODE = "erode"


def perturb_mask(mask, op: MorphOp | str, radius: int = 1) -> np.ndarray:
    """Binary dilation/erosion with a (2r+1)-square structuring element; outside pixels count as 0."""
    op = MorphOp(op)
    if radius < 1:
        raise ValueError(f"radius must be >= 1, got {radius}")
    mask = np.asarray(mask, dtype=bool)
    structure = np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)
    if op is MorphOp.DILATE:
        return ndimage.binary_dilation(mask, structure=structure, border_value=0)
    return ndimage.binary_erosion(mask, structure=structure, border_value=0)


def parse_perturbation(spec: str) -> tuple[MorphOp, int]:
    """Parse ``"dilate:1"`` style perturbation specs."""
    name, _, radius = spec.partition(":")
    try:
        return MorphOp(name.strip().lower()), int(radius or 1)
    except ValueError:
        raise ValueError(f"bad perturbation {spec!r}; expected dilate:R or erode:R") from None

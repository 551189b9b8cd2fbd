from __future__ import annotations

import os

import torch

PRECISION_ENV = "IFDL_PRECISION"

_DTYPES = {"float32": torch.float32, "float64": torch.float64}


def default_dtype() -> torch.dtype:
    """Working dtype for models and losses; ``IFDL_PRECISION=float64`` selects gradient-check mode."""
    name = os.environ.get(PRECISION_ENV, "float32").strip().lower()
    if name not in _DTYPES:
        raise ValueError(f"{PRECISION_ENV} must be one of {sorted(_DTYPES)}, got {name!r}")
    return _DTYPES[name]


def dtype_from_name(name: str) -> torch.dtype:
    if name not in _DTYPES:
        raise ValueError(f"unknown precision {name!r}; expected one of {sorted(_DTYPES)}")
    return _DTYPES[name]

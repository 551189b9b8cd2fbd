"""Two-stage image forgery detection, localization and explanation at desk scale."""

from ifdl.precision import default_dtype

__version__ = "0.1.0"

__all__ = ["default_dtype", "__version__"]

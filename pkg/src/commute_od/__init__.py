"""Home/work inference and commute origin-destination estimation from GPS pings."""

from .errors import ConfigError, DataQualityError, StageInputError
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "ConfigError", "DataQualityError", "StageInputError", "__version__"]

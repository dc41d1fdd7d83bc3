"""R-VGAL sequential variational Bayes for generalized linear mixed models."""

from ._core import *  # noqa: F401,F403
from ._core import (  # noqa: F401
    Config,
    Dataset,
    Fit,
    Group,
    RvgalError,
    SPEC_VERSION,
)

__all__ = [name for name in dir() if not name.startswith("_")]

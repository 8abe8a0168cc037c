"""Structured pruning toolkit for sandwich-norm GQA transformers."""

from prunekit._core import *  # noqa: F401,F403
from prunekit._core import __doc__  # noqa: F401

__version__ = "0.1.0"

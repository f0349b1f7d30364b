"""Plug-and-play restoration with a learned regularizer gradient.

Images are float arrays shaped (H, W), (C, H, W) or (N, C, H, W); results
come back as (N, C, H, W).
"""

from ._pnpreg import *  # noqa: F401,F403
from ._pnpreg import __doc__  # noqa: F401

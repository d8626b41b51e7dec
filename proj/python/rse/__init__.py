"""Partner-choice benchmark: CMA-ES versus PPO under rare significant events."""

from ._rse import *  # noqa: F401,F403
from ._rse import __doc__  # noqa: F401

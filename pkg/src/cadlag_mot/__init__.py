"""Model-free super-hedging bounds via discrete martingale transport on path lattices."""

from .discretization import *  # noqa: F401,F403
from .hedging import *  # noqa: F401,F403
from .lp import *  # noqa: F401,F403
from .measures import *  # noqa: F401,F403
from .mot import *  # noqa: F401,F403
from .paths import *  # noqa: F401,F403
from .payoffs import *  # noqa: F401,F403

__version__ = "0.1.0"

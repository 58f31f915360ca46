"""Optimal liquidation of multi-asset portfolios under regime-switching dynamics.

The pipeline decomposes a multi-asset execution problem into scalar
sub-problems along approximately orthogonal portfolios, solves each by
dynamic programming, and refines the combined strategy with a small
neural network trained on pathwise gradients of the terminal objective.
"""

__version__ = "0.1.0"

from execkit.market import MarketSpec, RegimeParams, PathState  # noqa: F401
from execkit.dp import SingleAssetSpec, ValueTable  # noqa: F401
from execkit.ortho import OrthoDecomposition  # noqa: F401
from execkit.policy import MlpPolicy, TrainConfig  # noqa: F401

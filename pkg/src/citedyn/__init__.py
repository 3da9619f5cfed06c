"""citedyn: citation dynamics toolkit.

Fits the quantitative dimension (citation-count distributions via quantile
plots), the temporal dimension (jump-decay plus constant-attention history
curves), derives normalized citation indices from the two combined, and
simulates the underlying stochastic attention process.
"""

__version__ = "1.0.0"

from . import corpus, distfit, errors, gamma, historyfit, stochastic  # noqa: F401

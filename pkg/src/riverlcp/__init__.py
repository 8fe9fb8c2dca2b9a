"""Water-release market equilibria on line-graph river basins.

Library layout:

* ``lcp``: mixed linear complementarity problems, FB semismooth Newton
  and lexicographic Lemke solvers.
* ``basin``: basin configuration, validation, derived coefficients and
  the two bundled datasets.
* ``formulations``: the three market-structure assemblers, welfare
  evaluation, and the sequential no-market oracle.
* ``metrics``: rewards, characteristic values, imputation tests and the
  profile display quantities.
* ``theory``: executable price-identity checks and the single-trade
  existence construction.
* ``scenarios``: the 1296-scenario factorial study.
* ``deferment``: the capital-installation deferment study.
* ``cli``: the ``riverlcp`` command-line tool.
"""

__version__ = "0.1.0"

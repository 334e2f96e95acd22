"""Chordal Loewner evolutions driven by ``sqrt(kappa) B + theta**(1/alpha) S``.

Modules: ``levy_driver`` (driver sampling), ``loewner`` (exact slit-map
chains), ``trace`` (trace, cadlag and generation checks), ``superharmonic``
(the operator Lambda and its sign scan), ``stats_verify`` (Monte Carlo
checks), ``comb`` (the comb-space curve), ``io`` and ``cli``.
"""

__version__ = "0.1.0"

"""Simulation and certification tools for arbitrage questions on continuous price paths.

Modules: ``procgen`` (path generation), ``strategy`` (stopping rules and simple
strategies), ``detect`` (sign tests, reachability, strategy search), ``dmw``
(finite scenario trees), ``xform`` (monotone maps and time changes),
``frackernel`` (fBm kernel and Girsanov density), ``hedge`` (spacing projection
and discrete hedging) and ``experiments``/``cli`` (the experiment runner).
"""

__version__ = "0.1.0"

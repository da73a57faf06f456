"""Federated epidemic surveillance toolkit.

Sites run an exact Poisson rate-ratio surge test on private count series;
only p-values (and optional coarse totals) cross the trust boundary, where
meta-analytic combiners rebuild a region-level alarm that is scored against
centralized ground truth.
"""

__version__ = "0.1.0"

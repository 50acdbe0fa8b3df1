"""Causal control lab.

Samples linear time-series SCMs with latent confounders, discovers their
graphs from mixed observational/interventional data, and runs a
regret-minimizing intervention loop that plans through the equivalence class
of discovered graphs.
"""

__version__ = "0.1.0"

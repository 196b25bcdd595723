"""Desk-scale simulation and photon-counting analytics for an integrated
atomic-frequency-comb memory experiment: waveguide loss budgets, spectral
engineering of a rare-earth ensemble, photon-echo coherence probes, a Monte
Carlo heralded-photon source, storage/retrieval, and correlation analytics.
"""

__version__ = "0.1.0"

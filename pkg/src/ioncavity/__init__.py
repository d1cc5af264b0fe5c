"""Single-photon generation from a trapped 40Ca+ ion in an optical cavity.

Master-equation dynamics of the 8-level ion coupled to two cavity modes,
two-time coherence functions, Hong-Ou-Mandel and HBT observables, parameter
sweeps and detector click-stream analysis.
"""

__version__ = "0.1.0"

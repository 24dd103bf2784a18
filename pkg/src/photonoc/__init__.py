"""Thermal-aware design of VCSEL-based ring optical networks-on-chip.

The chip is described as stacked layers of material blocks
(:mod:`photonoc.chipmodel`), solved for its steady temperature field
(:mod:`photonoc.thermal`), and the resulting device temperatures feed the
laser, microring and ring-network models (:mod:`photonoc.photonics`,
:mod:`photonoc.snr`).  :mod:`photonoc.explore` sweeps and optimises the
power knobs; :mod:`photonoc.cli` exposes everything on the command line.
"""

__version__ = "0.1.0"

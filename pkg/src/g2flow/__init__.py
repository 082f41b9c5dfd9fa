"""Isometric flow of G2-structures on flat 7-tori.

Core subpackages: algebra (structure tables and pointwise Clifford/cross/
Hodge operations), grid (periodic field calculus), structures (the spinor /
three-form / torsion correspondence), flow (time integration), analysis
(energy, variations, symbols, spectra), plus a FastAPI service and a CLI.
"""

__version__ = "0.1.0"

"""Desk-scale numerical laboratory for quantum Coulomb systems on finite
grids: Fock-space Hamiltonians, free energies, localization, and verifiers
for the electrostatic and entropy inequalities behind their thermodynamics.
"""

from . import coulomb, fock, geometry, inequalities, localization, scan

__version__ = "0.1.0"

__all__ = ["coulomb", "fock", "geometry", "inequalities", "localization", "scan"]

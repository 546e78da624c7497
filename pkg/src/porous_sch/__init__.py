"""Phase separation of a binary fluid in a periodically perforated domain.

Microscale Cahn-Hilliard/Stokes solver, periodic cell problems for the
effective tensors, and the homogenised macroscale model.
"""

__version__ = "0.1.0"

"""mapwave - Hard-constraint PINN solver for exterior Helmholtz problems."""

__version__ = "0.1.0"

"""Exception types shared across the toolkit.

Input problems raise plain ValueError; anything that fails *during* a
computation (eigensolver stagnation, diverging relaxation, invalid ground
energy in the inversion) raises NumericalError so callers can tell the two
apart.
"""


class NumericalError(RuntimeError):
    """A numerical procedure failed to produce a trustworthy result."""

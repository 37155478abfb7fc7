"""Exception hierarchy shared across the package.

The CLI maps these onto its exit-code contract: ConfigError -> 3,
IdentityViolation -> 2, everything else is an ordinary failure.
"""


class RdmLabError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(RdmLabError):
    """Run configuration is missing, unreadable, or inconsistent."""


class DegenerateSpectrumError(RdmLabError):
    """A system Hamiltonian has a level gap below tolerance."""

    def __init__(self, gap, tolerance):
        super().__init__(
            f"degenerate spectrum: min level gap {gap:.3e} below tolerance {tolerance:.3e}"
        )
        self.gap = gap
        self.tolerance = tolerance


class DimensionCapError(RdmLabError):
    """Total Hilbert-space dimension exceeds the dense-diagonalization cap."""


class IdentityViolation(RdmLabError):
    """An exact algebraic identity failed beyond numerical tolerance (a bug)."""

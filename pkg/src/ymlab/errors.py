"""Exception hierarchy.

Domain errors map to CLI exit code 1, numerical failures to exit code 2.
"""

from __future__ import annotations


class DomainError(ValueError):
    """Input outside the supported parameter regime."""


class NumericalFailure(RuntimeError):
    """A solver could not produce a trustworthy result."""


class TrappingViolation(NumericalFailure):
    """Heteroclinic trajectory left the phase-plane trapping set."""


class DivergentIntegrand(NumericalFailure):
    """Integrand grows against the Gaussian weight."""


class SingularDivision(NumericalFailure):
    """Division by a profile that vanishes on the grid."""


class SeriesSeedFailure(NumericalFailure):
    """Origin series seed not accurate at the requested start point."""


class BranchContamination(NumericalFailure):
    """Inward integration did not suppress the growing branch."""


class NoRootInBracket(NumericalFailure):
    """Matching function has no sign change in the search interval."""


class ConstraintInsoluble(NumericalFailure):
    """Initial-data correction scalars could not be found."""


class JacobianSingular(NumericalFailure):
    """Modulation Jacobian is numerically singular."""


class BlowupEscape(NumericalFailure):
    """Profile left the bubble regime."""


class InsufficientDecay(NumericalFailure):
    """Trace too short for a rate fit."""

"""
Exception hierarchy for the hyperbolic Allen-Cahn toolkit.
Every error raised by the package derives from AllenCahnError.
"""
from typing import Any, Optional


class AllenCahnError(Exception):
    """Base class for all toolkit errors"""


class DomainError(AllenCahnError, ValueError):
    """Input outside the domain of an evaluator (non-finite or wrong shape)"""


class InvalidPotentialError(AllenCahnError):
    """Potential evaluated below -tol_zero"""


class HypothesisViolationError(AllenCahnError):
    """Hessian of F is not positive definite at a listed zero"""


class PositivityCertificationError(AllenCahnError):
    """Sampled smallest eigenvalue of sym(G) is not positive"""

    def __init__(self, message: str, certificate: Any = None):
        super().__init__(message)
        self.certificate = certificate

    @property
    def worst_point(self):
        return None if self.certificate is None else self.certificate.worst_point


class PathOptimizationError(AllenCahnError):
    """String relaxation did not converge; best_value is an upper bound on phi"""

    def __init__(self, message: str, best_value: float, path: Any = None):
        super().__init__(message)
        self.best_value = best_value
        self.path = path


class ProfileSolveError(AllenCahnError):
    """Layer profile ODE did not reach the path endpoints"""


class ConfigurationError(AllenCahnError, ValueError):
    """Inconsistent parameters (CFL, grid resolution, step functions, config keys)"""


class SolverConvergenceError(AllenCahnError):
    """Nonlinear solve of an implicit step failed"""


class BlowUpError(AllenCahnError):
    """Non-finite state after a time step; last_state is the last finite one"""

    def __init__(self, message: str, last_state: Optional[Any] = None, summary: Optional[Any] = None):
        super().__init__(message)
        self.last_state = last_state
        # partial trajectory, filled in by the solver run loop
        self.summary = summary


class LayerConsistencyError(AllenCahnError):
    """Energy of a layered profile fell below the asymptotic energy"""


class InsufficientDataError(AllenCahnError):
    """Too few usable rows for a rate fit"""


class CorruptionError(AllenCahnError):
    """Stored config hash does not match the stored config"""

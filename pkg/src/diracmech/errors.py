"""Exception types shared across the package."""


class DiracMechError(Exception):
    """Base class for every error raised by diracmech."""


class DimensionMismatchError(DiracMechError, ValueError):
    """Vector or matrix dimensions that do not line up."""


class RankDeficiencyError(DiracMechError, ValueError):
    """A basis matrix that fails its full-column-rank requirement."""


class DegenerateConstraintError(DiracMechError, ValueError):
    """An annihilator matrix A(q) that loses row rank at some configuration."""


class EvaluationError(DiracMechError, RuntimeError):
    """A user-supplied function or derivative raised during evaluation."""


class ConvergenceError(DiracMechError, RuntimeError):
    """Newton iteration exhausted its budget without meeting the tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class SingularJacobianError(DiracMechError, RuntimeError):
    """Newton hit a numerically singular Jacobian; carries a condition estimate."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class CertificationError(DiracMechError, RuntimeError):
    """An accepted step failed the Dirac-inclusion residual gate."""

    def __init__(self, message, inclusion_residual=None):
        super().__init__(message)
        self.inclusion_residual = inclusion_residual


class UnsupportedOperationError(DiracMechError, TypeError):
    """Operation applied to a system kind it is not defined for."""


class StepFailureError(DiracMechError, RuntimeError):
    """A trajectory aborted mid-run; carries the failing index and the partial result.

    ``trajectory`` is None when the very first Hamiltonian step fails (no
    completed point exists yet).
    """

    def __init__(self, message, step_index, trajectory=None):
        super().__init__(message)
        self.step_index = step_index
        self.trajectory = trajectory


class ConfigError(DiracMechError, ValueError):
    """A run configuration that fails parsing or validation."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field

"""
Global exceptions for the FD-DLM augmented Lagrangian toolkit.

Every error raised by the services derives from FdalError so the CLI can
report it uniformly.
"""
from typing import Optional


class FdalError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(FdalError, ValueError):
    """Invalid problem, preconditioner or experiment configuration."""


class DimensionMismatch(FdalError, ValueError):
    """Operand shapes do not agree."""


class PointOutsideMesh(FdalError):
    """A query point lies in no cell of the mesh."""

    def __init__(self, point, message: Optional[str] = None):
        self.point = tuple(float(c) for c in point)
        super().__init__(message or f"Point {self.point} lies outside the mesh")


class SingularMatrix(FdalError):
    """A factorization met a (numerically) zero pivot."""


class NotSPD(FdalError):
    """A matrix expected to be symmetric positive definite is not."""


class AsymmetricMatrix(FdalError):
    """A matrix expected to be symmetric violates the symmetry tolerance."""


class SizeGuardExceeded(FdalError):
    """A dense operation was requested above the desk-scale size limit."""


class NoConvergence(FdalError):
    """The QR iteration failed to deflate an active block."""

    def __init__(self, lo: int, hi: int, sweeps: int):
        self.block = (lo, hi)
        self.sweeps = sweeps
        super().__init__(f"QR iteration stuck on block [{lo}, {hi}] after {sweeps} sweeps")


class Breakdown(FdalError):
    """Arnoldi breakdown without convergence."""


class IndefiniteOperator(FdalError):
    """CG met a direction of nonpositive curvature."""


class NonConvergence(FdalError):
    """An outer Krylov solve exhausted its iteration budget."""

    def __init__(self, message: str, report=None):
        self.report = report
        super().__init__(message)


class AmgSetupError(FdalError):
    """The AMG hierarchy could not be built or failed its setup checks."""


class ParseError(FdalError):
    """Malformed input file."""

    def __init__(self, message: str, line: Optional[int] = None, path: Optional[str] = None):
        self.line = line
        self.path = path
        location = f"{path}:" if path else ""
        location += f"line {line}: " if line is not None else ""
        super().__init__(f"{location}{message}")

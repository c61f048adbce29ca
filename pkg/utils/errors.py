"""
错误类型 (Error types) shared by every package.

Library code raises these; the CLI and the MCP tools turn them into an exit
code or a {"status": "failure"} response.
"""


class NoptError(Exception):
    """Base class for every error raised by this toolkit."""


class ShapeError(NoptError, ValueError):
    """Operand, field or channel shapes do not conform."""


class NonFiniteError(NoptError, ArithmeticError):
    """A NaN or Inf appeared in a computed value."""


class GradientError(NoptError, ValueError):
    """Backward was asked for something it cannot differentiate."""


class DatasetFormatError(NoptError, ValueError):
    """A dataset container, manifest or raw import is malformed."""


class SolverError(NoptError, RuntimeError):
    """A PDE solver precondition (SPD, stability, CFL) failed."""


class ModelStateError(NoptError, RuntimeError):
    """The model is in the wrong state for the request (e.g. no decoder)."""


class DegenerateTargetError(NoptError, ValueError):
    """A metric was asked about an all-zero or constant target."""


class DemoError(NoptError, ValueError):
    """Invalid top-k or an exhausted demo pool."""


class RolloutError(NoptError, ValueError):
    """Ground truth is too short for the requested rollout."""


class ConfigError(NoptError, ValueError):
    """Invalid configuration key or value."""


class ArtifactError(NoptError, FileNotFoundError):
    """An upstream artifact required by a stage is missing."""

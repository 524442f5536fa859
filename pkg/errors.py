class MeshError(ValueError):
    """Invalid mesh input: empty mesh, bad index, degenerate or inverted element."""


class TopologyError(MeshError):
    """A facet is shared inconsistently (non-conforming mesh)."""


class ConfigError(ValueError):
    """Problem description does not match the mesh or is malformed."""


class AssemblyError(ValueError):
    """Element data cannot be integrated (zero volume)."""


class SolverError(RuntimeError):
    """The saddle point matrix could not be factorized."""


class NumericalFailure(SolverError):
    """The factorization succeeded but the residual check failed."""

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class ExpressionSyntaxError(ValueError):
    """Malformed coordinate expression."""

    def __init__(self, message: str, offset: int, expected: str):
        super().__init__(f"{message} at offset {offset} (expected {expected})")
        self.offset = offset
        self.expected = expected


class MeshFormatError(ValueError):
    """Malformed JSON mesh or solution document."""


class AMRAborted(RuntimeError):
    """A stage of the adaptive loop failed; the rows logged so far are attached."""

    def __init__(self, message: str, log=None):
        super().__init__(message)
        self.log = log

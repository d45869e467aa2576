"""Exception hierarchy. Each class carries the CLI exit status it maps to."""


class IngpError(Exception):
    exit_code = 1


class ConfigError(IngpError):
    exit_code = 2


class DataError(IngpError):
    exit_code = 3


class NumericalError(IngpError):
    exit_code = 4


class ResourceError(IngpError):
    exit_code = 5


class DomainError(DataError):
    """A point or file is inconsistent with the domain it is used on."""


class NoEmbeddingError(DomainError):
    pass


class DegenerateMetricError(NumericalError):
    def __init__(self, point, reason="metric is not positive definite"):
        self.point = point
        super().__init__(f"degenerate metric at {list(point)}: {reason}")


class StuckPathError(NumericalError):
    """Raised when Neumann rejection cannot find an interior proposal."""

    def __init__(self, path, step, point, attempts):
        self.path = path
        self.step = step
        self.point = point
        self.attempts = attempts
        super().__init__(
            f"path {path} stuck at step {step} near {list(point)} after "
            f"{attempts} rejected proposals; the boundary is too narrow for dt"
        )


class MissingEnsemblesError(IngpError):
    """Predictive variance needs ensembles started at the test points."""

    exit_code = 2


class FitError(NumericalError):
    pass

"""Domain errors. All subclass ValueError so the route layer maps them to 400."""


class SupercorrError(ValueError):
    """Base error carrying optional diagnostics"""

    def __init__(self, message: str, **details):
        super().__init__(message)
        self.details = details

    def __str__(self) -> str:
        base = super().__str__()
        if not self.details:
            return base
        extra = ", ".join(f"{k}={v}" for k, v in self.details.items())
        return f"{base} ({extra})"


class DegenerateLatticeError(SupercorrError):
    pass


class InvalidSizeError(SupercorrError):
    pass


class BasisMismatchError(SupercorrError):
    pass


class DomainError(SupercorrError):
    pass


class CutoffTooSmallError(SupercorrError):
    pass


class EigensolverError(SupercorrError):
    pass


class MetallicSystemError(SupercorrError):
    pass


class SingularModeError(SupercorrError):
    pass


class ExcludedPointError(SupercorrError):
    pass


class NonFiniteValueError(SupercorrError):
    pass


class IncreaseRadiusError(SupercorrError):
    pass


class MetallicIterationError(SupercorrError):
    pass


class DefectTooStrongError(SupercorrError):
    pass


class NonConvergenceError(SupercorrError):
    pass


class RankDeficiencyError(SupercorrError):
    pass

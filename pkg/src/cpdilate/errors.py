"""Exception hierarchy shared by all modules."""


class CpDilateError(Exception):
    """Base class for all errors raised by the package."""


class InvalidInput(CpDilateError, ValueError):
    pass


class DimensionMismatch(CpDilateError, ValueError):
    pass


class AlgebraMismatch(CpDilateError, ValueError):
    pass


class NotAProjection(CpDilateError, ValueError):
    pass


class NotCP(CpDilateError, ValueError):
    pass


class NotContractive(CpDilateError, ValueError):
    pass


class NotPositive(CpDilateError, ValueError):
    pass


class NotCommuting(CpDilateError, ValueError):
    pass


class NotMarkov(CpDilateError, ValueError):
    pass


class NotStrong(CpDilateError, ValueError):
    pass


class NotAboveP(CpDilateError, ValueError):
    pass


class NotRowContractive(CpDilateError, ValueError):
    pass


class CapExceeded(CpDilateError, ValueError):
    pass


class ExchangeConditionViolated(CpDilateError, ValueError):
    def __init__(self, message: str, witness=None, residual: float = 0.0):
        super().__init__(message)
        self.witness = witness
        self.residual = residual


class UnitConstraintViolated(CpDilateError, ValueError):
    pass


class UnsupportedDepth(CpDilateError, ValueError):
    pass


class UnsupportedSupport(CpDilateError, ValueError):
    pass


class ParameterOutOfRange(CpDilateError, ValueError):
    pass

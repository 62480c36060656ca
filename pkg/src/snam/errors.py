"""Exception hierarchy. The ``exit_code`` attribute drives CLI exit statuses:
2 usage/config error, 3 data error, 4 numeric failure."""


class SnamError(Exception):
    exit_code = 1


class ConfigError(SnamError):
    exit_code = 2


class DataError(SnamError):
    exit_code = 3


class NumericError(SnamError):
    exit_code = 4


class DimensionMismatch(ConfigError):
    pass


class WrongUnitKind(ConfigError):
    pass


class TooManyParameters(ConfigError):
    pass


class DegenerateData(DataError):
    pass


class SchemaMismatch(DataError):
    pass


class EmptyFile(DataError):
    pass


class ZeroVariance(DataError):
    pass


class SingleClassAUC(DataError):
    pass


class TooFewRows(DataError):
    pass


class NonBinaryTarget(DataError):
    pass


class SingularSystem(NumericError):
    pass


class InvalidBandwidth(NumericError):
    pass


class KnotCollapse(NumericError):
    pass


class NonFiniteGradient(NumericError):
    pass


class DivergedFit(NumericError):
    pass


class SingularNormalEquations(NumericError):
    pass


class NotPositiveDefinite(NumericError):
    pass

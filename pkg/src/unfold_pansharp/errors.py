"""Exception hierarchy. Each class carries the tag printed by the CLI as ``ERROR[<tag>]``."""


class PansharpError(Exception):
    tag = "error"


class ContractViolation(PansharpError, ValueError):
    tag = "contract"


class DegenerateInputError(PansharpError, ValueError):
    tag = "degenerate"


class NumericalError(PansharpError, ArithmeticError):
    tag = "numerical"


class TrainingDivergenceError(NumericalError):
    tag = "divergence"


class ConfigError(PansharpError, ValueError):
    tag = "config"


class VersionError(PansharpError):
    tag = "version"


class DataIOError(PansharpError, OSError):
    tag = "io"

"""Exception hierarchy.

Every error carries a stable ``code`` that the command-line front end maps to
an exit status (2 config, 3 data, 4 numerical).
"""


class BoundsError(Exception):
    code = 4


class ConfigError(BoundsError):
    code = 2


class DataError(BoundsError):
    code = 3


class NumericalError(BoundsError):
    code = 4


class EmptyCell(DataError):
    def __init__(self, d, s, cell=None):
        self.d, self.s, self.cell = d, s, cell
        where = f" in covariate cell {cell!r}" if cell is not None else ""
        super().__init__(f"no records with (d={d}, s={s}){where}")


class BadFlag(DataError):
    pass


class MissingOutcome(DataError):
    def __init__(self, index, line=None):
        self.index, self.line = index, line
        loc = f"line {line}" if line is not None else f"record {index}"
        super().__init__(f"selected record at {loc} has no outcome")


class EmptyInput(DataError):
    pass


class EmptyTrim(DataError):
    pass


class ParseError(DataError):
    def __init__(self, line, msg):
        self.line = line
        super().__init__(f"line {line}: {msg}")


class MissingColumn(ConfigError):
    pass


class TooFewObservations(DataError):
    pass


class DivideByZero(NumericalError):
    pass


class DegenerateSelection(NumericalError):
    pass


class DegenerateControlSelection(NumericalError):
    pass


class ZeroSelection(NumericalError):
    pass


class NonIntegrable(NumericalError):
    pass


class ZeroDensity(NumericalError):
    pass


class SingularMatrix(NumericalError):
    pass


class RootBracketFailure(NumericalError):
    pass


class BadBandwidth(ConfigError):
    pass


class Assumption5Violated(NumericalError):
    pass


class SupportTooLarge(ConfigError):
    pass


class InvalidDgp(ConfigError):
    pass

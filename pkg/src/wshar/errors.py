"""Exception hierarchy shared by the pipeline modules.

The CLI maps these onto exit codes: usage problems exit 1, bad data
exits 2, numeric failures exit 3.
"""


class WsharError(Exception):
    exit_code = 2


class ParameterError(WsharError, ValueError):
    """An argument is outside its documented range."""

    exit_code = 1


class SchemaError(WsharError, ValueError):
    exit_code = 1


class ContractError(WsharError, ValueError):
    """Shapes, dimensions or indices do not fit together."""

    exit_code = 1


class ParseError(WsharError, ValueError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"line {line}: "
        elif where:
            where += " "
        super().__init__(where + message)


class EmptyInputError(WsharError, ValueError):
    pass


class DataError(WsharError, ValueError):
    pass


class ConstraintError(WsharError, ValueError):
    pass


class NumericError(WsharError, ArithmeticError):
    exit_code = 3

    def __init__(self, message, term=None, step=None):
        self.term = term
        self.step = step
        super().__init__(message)

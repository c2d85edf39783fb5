class HaamError(Exception):
    pass


class InvalidInputError(HaamError, ValueError):
    pass


class NumericError(HaamError, ArithmeticError):
    pass


class DataFormatError(HaamError):
    """Malformed dataset or checkpoint file."""

    def __init__(self, message: str, path=None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line

"""Exception hierarchy. Each family carries the CLI exit code it maps to."""


class SproutLabError(Exception):
    exit_code = 1


class ConfigError(SproutLabError):
    exit_code = 2


class DataError(SproutLabError):
    exit_code = 3


class NumericError(SproutLabError):
    exit_code = 4


class ShapeError(NumericError, ValueError):
    """Operand shapes do not conform for a primitive."""

    def __init__(self, op, *shapes, detail=""):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        shown = " vs ".join(str(s) for s in self.shapes)
        msg = f"{op}: incompatible shapes {shown}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class DomainError(NumericError, ValueError):
    """Input outside the domain of a primitive (e.g. log of a non-positive value)."""


class GraphError(SproutLabError, ValueError):
    """Misuse of the computation record (non-scalar loss, unknown node id, ...)."""

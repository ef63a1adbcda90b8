"""Exception hierarchy shared by every module in the package."""


class PoolSkipError(Exception):
    """Base class for all package errors."""


class ShapeMismatch(PoolSkipError, ValueError):
    pass


class ZeroExtent(PoolSkipError, ValueError):
    pass


class KernelTooLarge(PoolSkipError, ValueError):
    pass


class NonOddKernel(PoolSkipError, ValueError):
    pass


class IndivisiblePoolSize(PoolSkipError, ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("pool size violates divisibility: " + ", ".join(self.violations))


class InconsistentIndices(PoolSkipError, ValueError):
    pass


class DegenerateBatch(PoolSkipError, ValueError):
    pass


class LabelOutOfRange(PoolSkipError, ValueError):
    pass


class IncompleteTape(PoolSkipError, RuntimeError):
    pass


class MissingGradient(PoolSkipError, KeyError):
    pass


class TruncatedFile(PoolSkipError, ValueError):
    pass


class ParseError(PoolSkipError, ValueError):
    """Config syntax or semantic error; ``errors`` holds ``(line, message)`` pairs."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(f"line {ln}: {msg}" for ln, msg in self.errors))


class StaticShapeError(PoolSkipError, ValueError):
    def __init__(self, layer, violations, line=None):
        self.layer = layer
        self.violations = list(violations)
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(
            f"{where}pool skip at conv layer {layer} violates " + ", ".join(self.violations)
        )

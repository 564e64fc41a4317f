"""Exception types shared across the package."""


class StarError(Exception):
    """Base class for all errors raised by this package."""


class ExprSyntaxError(StarError):
    """Malformed expression text. ``offset`` is the byte offset of the fault."""

    def __init__(self, message, offset):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class UnknownIdentifierError(ExprSyntaxError):
    pass


class ExprDomainError(StarError):
    """Evaluation left the domain of a sub-expression (division by zero, log of a non-positive, ...)."""

    def __init__(self, message, subexpr):
        super().__init__(f"{message} in '{subexpr}'")
        self.subexpr = subexpr


class GridMismatchError(StarError):
    pass


class DeltaOrderOverflow(StarError):
    pass


class NumericalError(StarError):
    """Singular or ill-conditioned discrete system, excluded nodes, breakdown of an iteration."""


class SingularError(NumericalError):
    pass


class ExcludedNodesError(NumericalError):
    def __init__(self, message, nodes):
        super().__init__(f"{message}: excluded nodes {list(nodes)}")
        self.nodes = list(nodes)


class AnnihilatorError(NumericalError):
    pass


class ProblemError(StarError):
    """Invalid problem file; ``path`` names the offending field."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path

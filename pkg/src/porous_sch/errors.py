"""Exception hierarchy shared by all solver modules."""


class InvalidArgumentError(ValueError):
    """A precondition on an input argument is violated."""


class ResolutionError(ValueError):
    """The grid is too coarse to resolve the requested perforation period."""

    def __init__(self, epsilon: float, min_epsilon: float):
        self.epsilon = epsilon
        self.min_epsilon = min_epsilon
        super().__init__(
            f"epsilon={epsilon:g} is not resolvable on this grid; "
            f"minimum resolvable epsilon is {min_epsilon:g}"
        )


class CompatibilityError(ValueError):
    """A pure-Neumann problem has a source that does not balance the boundary flux."""


class InvalidStateError(ValueError):
    """A state contains non-finite values or mismatched shapes."""


class SolverError(RuntimeError):
    """An iterative solve failed to reach its tolerance."""

    def __init__(self, message: str, residual: float = float("nan"), iterations: int = 0):
        self.residual = residual
        self.iterations = iterations
        super().__init__(f"{message} (residual={residual:.3e}, iterations={iterations})")

"""Exception types raised by the solver stack."""


class ConfigurationError(ValueError):
    """Invalid scenario, grid, or solver parameters."""


class DivergenceError(RuntimeError):
    """A non-finite value appeared during the iteration."""

    def __init__(self, component: str, iteration: int):
        super().__init__(f"non-finite values in {component!r} at iteration {iteration}")
        self.component = component
        self.iteration = iteration


class ResourceError(MemoryError):
    """A requested computation would exceed the configured memory budget."""


class EllipticSolveError(RuntimeError):
    """The space-time elliptic plan hit a singular system (should never happen)."""

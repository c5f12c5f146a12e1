"""Exception types shared across the package.

Every failure mode that callers are expected to catch has its own class;
payload attributes carry the numerical evidence (which block failed, the
offending quadrature node, iteration counts) so errors stay machine-readable
all the way up to the CLI.
"""


class NcratError(Exception):
    """Base class for all package-specific errors."""


class SingularBlock(NcratError):
    def __init__(self, which, detail=""):
        self.which = which
        super().__init__(f"singular block {which!r}" + (f": {detail}" if detail else ""))


class NotHermitian(NcratError):
    pass


class ConvergenceFailure(NcratError):
    pass


class ExprSyntaxError(NcratError):
    def __init__(self, position, message):
        self.position = position
        super().__init__(f"syntax error at position {position}: {message}")


class ArityError(NcratError):
    pass


class DomainError(NcratError):
    """Evaluation hit a non-invertible inverse; `path` locates the Inv node."""

    def __init__(self, path, detail=""):
        self.path = tuple(path)
        super().__init__(f"out of domain at {'/'.join(map(str, self.path)) or '<root>'}"
                         + (f": {detail}" if detail else ""))


class NotRegularAtZero(NcratError):
    def __init__(self, path):
        self.path = tuple(path)
        super().__init__(f"expression not regular at 0 (inverse at {'/'.join(map(str, self.path)) or '<root>'})")


class ShapeMismatch(NcratError):
    pass


class SingularQ0(NcratError):
    pass


class NotSignature(NcratError):
    pass


class SingularG(NcratError):
    pass


class NearSingularResolvent(NcratError):
    def __init__(self, t):
        self.t = t
        super().__init__(f"resolvent nearly singular at spectral point t={t}")


class NoConvergence(NcratError):
    def __init__(self, iterations, last_delta):
        self.iterations = iterations
        self.last_delta = last_delta
        super().__init__(f"fixed point did not converge after {iterations} iterations "
                         f"(last delta {last_delta:.3e})")


class BoundaryLimitUnstable(NcratError):
    def __init__(self, deltas):
        self.deltas = deltas
        super().__init__(f"boundary limit unstable; successive corner deltas {deltas}")


class NotSelfadjointInput(NcratError):
    pass


class DimensionMismatch(NcratError):
    pass


class EmptyPool(NcratError):
    pass


class DomainStarved(NcratError):
    def __init__(self, discarded, total):
        self.discarded = discarded
        self.total = total
        super().__init__(f"{discarded}/{total} sampled tuples fell outside the domain")


class ConfigError(NcratError):
    pass

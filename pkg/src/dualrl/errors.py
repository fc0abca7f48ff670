"""Exception types shared across the package."""


class DualRLError(Exception):
    """Base class for every error raised by this package."""


class MdpValidationError(DualRLError, ValueError):
    """An MDP failed validation; ``violations`` lists every broken invariant."""

    def __init__(self, violations):
        self.violations = list(violations)
        lines = "; ".join(str(v) for v in self.violations)
        super().__init__(f"invalid MDP: {lines}")

    @property
    def kinds(self):
        return sorted({v.kind for v in self.violations})


class PolicyValidationError(DualRLError, ValueError):
    pass


class ShapeMismatch(DualRLError, ValueError):
    pass


class MissingPolicy(DualRLError, ValueError):
    pass


class UndiscountedUnsupported(DualRLError, ValueError):
    """Raised by discounted-only routines when discount == 1."""


class SingularSystem(DualRLError, ArithmeticError):
    pass


class IdentityMismatch(DualRLError, ArithmeticError):
    """The two closed-form expressions of the policy value disagree."""


class NotErgodic(DualRLError):
    pass


class BudgetExceeded(DualRLError, ValueError):
    pass


class Nonconvergence(DualRLError):
    pass


class InnerNonconvergence(Nonconvergence):
    pass


class DomainError(DualRLError, ValueError):
    pass


class SupportViolation(DualRLError, ValueError):
    pass


class UnsupportedConstrainedGenerator(DualRLError, ValueError):
    pass


class Infeasible(DualRLError):
    pass


class CoverageError(DualRLError):
    def __init__(self, violations, message=None):
        self.violations = list(violations)
        super().__init__(message or f"dataset does not cover {len(self.violations)} state-action pair(s)")


class ClosedFormUnsupported(DualRLError, ValueError):
    pass


class NonFiniteObjective(DualRLError, FloatingPointError):
    pass


class MissingCatalogEntry(DualRLError, KeyError):
    def __init__(self, method):
        self.method = method
        super().__init__(f"no catalog entry for method {method!r}")

    def __str__(self):
        return self.args[0]


class MethodParseError(DualRLError, ValueError):
    pass

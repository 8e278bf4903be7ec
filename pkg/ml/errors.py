class ShapeError(ValueError):
    """Operand shapes do not agree."""


class NumericsError(ArithmeticError):
    """A tensor left the finite domain, or a backward pass was malformed."""


class InfeasibleTargetError(ValueError):
    """A CTC target needs more frames than the posterior matrix has."""


class InstanceTooLargeError(ValueError):
    """A brute-force oracle was asked to enumerate too many paths."""


class NonDeterminizableError(RuntimeError):
    """Determinization hit its state cap or met a non-functional transducer."""


class EmptyLatticeError(RuntimeError):
    """Beam search pruned every hypothesis before reaching a final state."""


class MissingArtifactError(RuntimeError):
    """A pipeline stage needs an artifact that has not been produced yet."""

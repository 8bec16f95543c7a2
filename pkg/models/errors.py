# Path-dependent McKean-Vlasov sampler
# File: models/errors.py

from typing import Optional


class SamplerError(Exception):
    """Base class for every error raised by the sampler"""


class InvalidArgumentError(SamplerError, ValueError):
    """Bad shapes, out-of-range parameters, unsupported combinations"""


class DivergedTrajectoryError(SamplerError):
    """A walker produced a non-finite force or position"""

    def __init__(self, walker: int, step: int, detail: str = "non-finite state"):
        self.walker = walker
        self.step = step
        super().__init__(f"walker {walker} diverged at step {step}: {detail}")


class IllConditionedBasisError(SamplerError):
    """Gram matrix keeps too few directions after flooring"""


class InsufficientSamplesError(SamplerError):
    """Dataset too small for the requested sketch size"""


class DegenerateFitError(SamplerError):
    """A tree node collapsed to rank 0"""

    def __init__(self, node: str, detail: Optional[str] = None):
        self.node = node
        message = f"rank collapsed to 0 at node {node}"
        if detail:
            message = f"{message} ({detail})"
        super().__init__(message)


class IncompatibleBiasError(SamplerError):
    """Bias snapshot does not match the run configuration"""


class EmptyDatasetError(SamplerError):
    """Nothing to histogram or reweight"""

"""
Exception types shared across the AltLoRA library.

Pure kernels raise these; the runner, the check suite and the CLI catch them,
log them and turn them into failed checks or exit codes.
"""

from typing import List, Optional

import numpy as np


class AltLoraError(Exception):
    """Base class for every error raised by this package."""


class ShapeMismatch(AltLoraError, ValueError):
    pass


class SingularGram(AltLoraError, np.linalg.LinAlgError):
    """The SPD factorization of an undamped Gram matrix failed; retry with lambda > 0."""


class SingularSystem(AltLoraError, np.linalg.LinAlgError):
    """A flattened normal-equation system of an oracle is rank deficient."""


class PreconditionViolated(AltLoraError, ValueError):
    pass


class InvalidSpec(AltLoraError, ValueError):
    pass


class StateBudgetExceeded(AltLoraError):
    """An optimizer state holds more entries than the low-rank budget allows."""


class DivergenceDetected(AltLoraError):
    """
    Training produced a non-finite loss or a loss above the divergence ceiling.

    The partial RunRecord collected up to the failure is attached as `record`.
    """

    def __init__(self, message: str, record=None):
        super().__init__(message)
        self.record = record


class SchemaMismatch(AltLoraError):
    def __init__(self, message: str, files: Optional[List[str]] = None):
        super().__init__(message)
        self.files = files or []

"""Exception types raised by hlcr."""

import numpy as np


class HLCRError(Exception):
    """Base class for all hlcr errors."""


class NonPositiveDefinite(HLCRError, np.linalg.LinAlgError):
    """Cholesky factorization failed; the matrix is not SPD."""


class DowndateSingular(HLCRError, ArithmeticError):
    """Rank-one downdate denominator fell below the guard threshold."""


class InvalidShape(HLCRError, ValueError):
    pass


class InvalidParameter(HLCRError, ValueError):
    pass


class DatasetFormatError(HLCRError, ValueError):
    """Malformed dataset file. Messages carry the 1-based file line number."""


class CheckpointError(HLCRError, ValueError):
    pass

"""Input validation helpers in the spirit of ``sklearn.utils.validation``."""

import numbers

import numpy as np

from .exceptions import ContractViolation


def check_phase_points(Z, dim=None, name="Z"):
    """Return ``Z`` as a finite float array of shape ``(n, 2*dim)``.

    A single point (1-D input) is promoted to shape ``(1, 2*dim)``.
    """
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[None, :]
    if Z.ndim != 2:
        raise ContractViolation(f"{name} must be 1-D or 2-D, got ndim={Z.ndim}")
    if Z.shape[1] == 0 or Z.shape[1] % 2:
        raise ContractViolation(f"{name} must have an even, nonzero number of columns")
    if dim is not None and Z.shape[1] != 2 * dim:
        raise ContractViolation(
            f"{name} has phase-space dimension {Z.shape[1]}, expected {2 * dim}"
        )
    if not np.all(np.isfinite(Z)):
        raise ContractViolation(f"{name} contains non-finite entries")
    return Z


def check_positions(q, dim=None, name="q"):
    q = np.asarray(q, dtype=float)
    if q.ndim == 1:
        q = q[None, :]
    if q.ndim != 2:
        raise ContractViolation(f"{name} must be 1-D or 2-D")
    if dim is not None and q.shape[1] != dim:
        raise ContractViolation(f"{name} has dimension {q.shape[1]}, expected {dim}")
    return q


def check_scalar(value, name, *, positive=False, nonnegative=False, integer=False):
    if integer:
        if not isinstance(value, numbers.Integral) or isinstance(value, bool):
            raise ContractViolation(f"{name} must be an integer, got {value!r}")
    elif not isinstance(value, numbers.Real) or isinstance(value, bool):
        raise ContractViolation(f"{name} must be a real number, got {value!r}")
    if not np.isfinite(value):
        raise ContractViolation(f"{name} must be finite")
    if positive and not value > 0:
        raise ContractViolation(f"{name} must be > 0, got {value}")
    if nonnegative and not value >= 0:
        raise ContractViolation(f"{name} must be >= 0, got {value}")
    return value


def check_square(A, name="A"):
    A = np.asarray(A)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise ContractViolation(f"{name} must be square, got shape {A.shape}")
    return A

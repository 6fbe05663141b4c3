"""Small dense linear algebra: inverse of a k x k matrix, k <= 16."""

from __future__ import annotations

import numpy as np

from .errors import DomainError, SingularMatrixError

MAX_DIM = 16
MAX_CONDITION = 1e12


def mat_inverse(M) -> np.ndarray:
    """Invert ``M`` by Gauss-Jordan elimination with partial pivoting.

    Raises:
        SingularMatrixError: if a pivot vanishes or the 1-norm condition number
            estimate ``||M||_1 ||M^-1||_1`` exceeds ``MAX_CONDITION``.
    """
    a = np.array(M, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DomainError(f"matrix must be square, got shape {a.shape}")
    k = a.shape[0]
    if k == 0 or k > MAX_DIM:
        raise DomainError(f"matrix dimension must be in 1..{MAX_DIM}, got {k}")
    if not np.all(np.isfinite(a)):
        raise DomainError("matrix has non-finite entries")

    norm_m = np.abs(a).sum(axis=0).max()
    aug = np.hstack([a, np.eye(k)])
    for col in range(k):
        pivot = col + int(np.argmax(np.abs(aug[col:, col])))
        if aug[pivot, col] == 0.0 or abs(aug[pivot, col]) <= norm_m * 1e-300:
            raise SingularMatrixError("matrix is singular", float("inf"))
        if pivot != col:
            aug[[col, pivot]] = aug[[pivot, col]]
        aug[col] /= aug[col, col]
        others = np.arange(k) != col
        aug[others] -= np.outer(aug[others, col], aug[col])

    inv = aug[:, k:]
    cond = norm_m * np.abs(inv).sum(axis=0).max()
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise SingularMatrixError("matrix is too ill-conditioned to invert", float(cond))
    return inv

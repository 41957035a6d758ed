"""Guarded linear solves: hard errors instead of silent regularization.

Moment matrices here are invertible by assumption of the estimation theory;
masking a violation with a ridge or pseudo-inverse would hide misspecification,
so an ill-conditioned system raises with the columns that look collinear.
"""

from __future__ import annotations

import numpy as np

from .errors import SingularMatrixError

COND_LIMIT = 1e10


def condition_number(a: np.ndarray) -> float:
    s = np.linalg.svd(a, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return np.inf
    return float(s[0] / s[-1]) if s[-1] > 0 else np.inf


def _suspect_columns(a: np.ndarray, names) -> str:
    _, _, vt = np.linalg.svd(a)
    v = np.abs(vt[-1])
    bad = np.nonzero(v > 0.5 * v.max())[0]
    if names is None:
        return ", ".join(f"column {int(j)}" for j in bad)
    return ", ".join(str(names[int(j)]) for j in bad)


def guarded_solve(a: np.ndarray, b: np.ndarray, what: str = "moment matrix",
                  names=None, cond_limit: float = COND_LIMIT) -> np.ndarray:
    """Solve a x = b, raising :class:`SingularMatrixError` when ``a`` is
    singular or its condition number exceeds ``cond_limit``."""
    a = np.asarray(a, dtype=np.float64)
    cond = condition_number(a)
    if not np.isfinite(cond) or cond > cond_limit:
        raise SingularMatrixError(
            f"{what} is singular or ill-conditioned (cond={cond:.3g}); "
            f"suspect: {_suspect_columns(a, names)}; prune collinear columns")
    return np.linalg.solve(a, b)

"""Network-robust variance estimation for the exposure-effect coefficients.

Scores of sampled units are summed over pairs within twice the dependence
radius on the *sampled* network; the resulting meat matrix is positive
semidefinite only after clipping the negative eigenvalues of the 0/1 pair
kernel, which yields a conservative estimate. The heteroskedasticity-only
sandwich (pairs restricted to i = j) is reported alongside as the baseline
that ignores network dependence.

Scale conventions: ``sigma_over_n`` and the composed ``sandwich`` follow the
root-N normalization, so the covariance of the coefficient vector itself is
``sandwich / N`` and standard errors divide the diagonal by N before the
square root.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ._linalg import guarded_solve
from .errors import NumericalError, UserInputError
from .estimator import Dataset, EstimationResult, ResidualizedDesign
from .graph import NeighborhoodIndex

PLAIN = "plain"
EIGEN = "eigen"
EHW = "ehw"

CLIP_REL_TOL = 1e-12  # eigenvalues in (-tol * max, 0) are solver noise, not signal


@dataclass(frozen=True)
class HacSpec:
    k: int
    modification: str = EIGEN
    gamma_source: str = "hat"  # "hat" or "tilde"

    def __post_init__(self):
        if self.k < 1:
            raise UserInputError("dependence radius must be >= 1")
        if self.modification not in (PLAIN, EIGEN):
            raise UserInputError("modification must be 'plain' or 'eigen'")
        if self.gamma_source not in ("hat", "tilde"):
            raise UserInputError("gamma_source must be 'hat' or 'tilde'")


@dataclass(frozen=True)
class HacKernel:
    """0/1 pair kernel over sampled units: 1 iff sampled distance <= 2k."""

    sampled: np.ndarray  # node ids of the kernel's rows
    kmat: np.ndarray     # (N, N), symmetric, unit diagonal

    @property
    def n_sampled(self) -> int:
        return self.sampled.size


@dataclass(frozen=True)
class VarianceResult:
    sigma_over_n: np.ndarray               # (d, d) plain meat
    sigma_plus_over_n: np.ndarray | None   # clipped meat, None for plain mode
    sandwich: np.ndarray                   # bread^-1 meat bread^-1 (root-N scale)
    se: np.ndarray                         # standard errors of the coefficients
    ehw_sandwich: np.ndarray
    se_ehw: np.ndarray
    modification: str
    nobs: int

    @property
    def theta_cov(self) -> np.ndarray:
        return self.sandwich / self.nobs


def score_vectors(ds: Dataset, rd: ResidualizedDesign, theta: np.ndarray,
                  gamma: np.ndarray) -> np.ndarray:
    """Per-unit scores: residualized exposure times the residual built from
    the supplied coefficients. Rows of unsampled units are zero. With the
    jointly fitted gamma the scores sum to zero over the sample."""
    mask = ds.r.astype(bool)
    resid = np.zeros(ds.n)
    resid[mask] = ds.y[mask] - rd.xmat[mask] @ theta - ds.covariates[mask] @ gamma
    return rd.xmat * resid[:, None] * ds.r[:, None]


def hac_kernel(index: NeighborhoodIndex, r, k: int) -> HacKernel:
    """Pair kernel from a sampled-network distance index, truncation 2k.

    The diagonal is always one (a unit is at distance zero from itself), so
    an empty sampled network reduces the meat to the heteroskedasticity-only
    form.
    """
    if index.smax < 2 * k:
        raise UserInputError(
            f"distance index reaches {index.smax}, need 2k = {2 * k}")
    sampled = np.nonzero(np.asarray(r))[0]
    pos = -np.ones(index.n, dtype=np.int64)
    pos[sampled] = np.arange(sampled.size)
    kmat = np.zeros((sampled.size, sampled.size))
    for row, i in enumerate(sampled):
        nodes, dist = index.reach(i)
        within = nodes[dist <= 2 * k]
        cols = pos[within]
        kmat[row, cols[cols >= 0]] = 1.0
    np.fill_diagonal(kmat, 1.0)
    return HacKernel(sampled=sampled, kmat=kmat)


def hac_sigma(psi: np.ndarray, kernel: HacKernel) -> np.ndarray:
    """Plain network meat: (1/N) sum over kernel pairs of psi_i psi_j'."""
    n_s = kernel.n_sampled
    if n_s == 0:
        raise NumericalError("no sampled units")
    ps = psi[kernel.sampled]
    return ps.T @ kernel.kmat @ ps / n_s


def eigen_clip(kmat: np.ndarray):
    """Split a symmetric kernel into its PSD projection and the clipped part.

    Returns (kplus, kminus) with kplus = Q max(eig, 0) Q' and
    kminus = kplus - kmat (itself PSD). Eigenvalues within a relative
    tolerance of zero are treated as zero to avoid solver sign noise.
    """
    if not np.allclose(kmat, kmat.T, atol=1e-12):
        raise UserInputError("kernel matrix must be symmetric")
    try:
        eigvals, eigvecs = np.linalg.eigh(kmat)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition failed: {exc}") from exc
    clipped = _clip_eigvals(eigvals)
    kplus = (eigvecs * clipped) @ eigvecs.T
    return kplus, kplus - kmat


def _clip_eigvals(eigvals: np.ndarray) -> np.ndarray:
    tol = CLIP_REL_TOL * max(float(eigvals.max()), 0.0)
    out = eigvals.copy()
    out[out < tol] = 0.0
    return out


def psd_projected_sigma(eigvals: np.ndarray, eigvecs: np.ndarray,
                        psi_sampled: np.ndarray, n_s: int) -> np.ndarray:
    """Clipped meat from a precomputed eigendecomposition of the kernel.

    Avoids materializing the projected kernel when it is reused across many
    score matrices (the expensive step is the decomposition itself).
    """
    b = eigvecs.T @ psi_sampled
    return (b.T * _clip_eigvals(eigvals)) @ b / n_s


def sandwich(qxx: np.ndarray, sigma_over_n: np.ndarray, nobs: int):
    """Compose bread and meat; returns the composed matrix and the standard
    errors of the coefficients (diagonal / N under the root). A negative
    diagonal entry (possible for the unclipped meat) warns and yields NaN."""
    bread = guarded_solve(qxx, np.eye(qxx.shape[0]),
                          what="exposure second-moment matrix")
    composed = bread @ sigma_over_n @ bread
    diag = np.diag(composed).copy()
    if np.any(diag < 0):
        warnings.warn("negative variance diagonal; standard error set to NaN "
                      "(consider the eigenvalue-clipped estimator)",
                      RuntimeWarning, stacklevel=2)
    se = np.sqrt(np.where(diag >= 0, diag, np.nan) / nobs)
    return composed, se


def ehw_meat(ds: Dataset, rd: ResidualizedDesign, residuals: np.ndarray) -> np.ndarray:
    """Heteroskedasticity-only meat: (1/N) sum of x x' eps^2 over the sample."""
    mask = ds.r.astype(bool)
    ps = rd.xmat[mask] * residuals[mask][:, None]
    return ps.T @ ps / int(mask.sum())


def ehw_variance(ds: Dataset, rd: ResidualizedDesign, res: EstimationResult):
    """Baseline sandwich ignoring cross-unit dependence."""
    meat = ehw_meat(ds, rd, res.residuals)
    return sandwich(res.qxx, meat, res.nobs)


def estimate_variance(ds: Dataset, rd: ResidualizedDesign, res: EstimationResult,
                      index: NeighborhoodIndex, spec: HacSpec,
                      gamma_value: np.ndarray | None = None) -> VarianceResult:
    """Full variance report for one fit: network meat (plain and clipped),
    composed sandwich for the requested modification, and the EHW baseline.

    ``gamma_value`` overrides the covariate coefficients used in the score
    residuals (pass the rescaled estimator when targeting the
    population-level estimand); the jointly fitted one is used by default.
    """
    gamma = res.gamma if gamma_value is None else gamma_value
    psi = score_vectors(ds, rd, res.theta, gamma)
    kernel = hac_kernel(index, ds.r, spec.k)
    sigma = hac_sigma(psi, kernel)
    sigma_plus = None
    if spec.modification == EIGEN:
        kplus, _ = eigen_clip(kernel.kmat)
        ps = psi[kernel.sampled]
        sigma_plus = ps.T @ kplus @ ps / kernel.n_sampled
        composed, se = sandwich(res.qxx, sigma_plus, res.nobs)
    else:
        composed, se = sandwich(res.qxx, sigma, res.nobs)
    ehw_composed, ehw_se = ehw_variance(ds, rd, res)
    return VarianceResult(sigma_over_n=sigma, sigma_plus_over_n=sigma_plus,
                          sandwich=composed, se=se, ehw_sandwich=ehw_composed,
                          se_ehw=ehw_se, modification=spec.modification,
                          nobs=res.nobs)


def clip_diagnostics(kminus: np.ndarray, ids: np.ndarray,
                     population_index: NeighborhoodIndex, n: int,
                     k: int) -> dict:
    """Magnitude report for the eigenvalue clipping.

    Row sums of |kminus| measure how much the PSD projection moved the
    kernel; all three statistics should stay bounded as the network grows for
    the clipped estimator to stay close to the plain one. Reported for user
    judgment, never asserted.
    """
    two_k = 2 * k
    if population_index.smax < two_k:
        raise UserInputError("population index must reach 2k")
    rows = np.zeros(n)
    rows[ids] = np.abs(kminus).sum(axis=1)
    j_total = 0.0
    for i in ids:
        if rows[i] == 0.0:
            continue
        nodes, dist = population_index.reach(i)
        j_total += rows[i] * float(rows[nodes[dist <= two_k]].sum())
    return {
        "delta_minus_mean_row_sum": float(rows.mean()),
        "delta_minus_second_moment_ratio": float(np.mean(rows ** 2) / n),
        "j_minus_ratio": float(j_total / n ** 2),
    }

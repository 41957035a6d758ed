"""Residualized OLS, causal estimands, contamination decompositions, and the
rescaled nuisance coefficient estimator.

The regression residualizes observed exposures on covariates that span their
conditional means given the sample, then fits outcomes jointly on the
residualized exposures and the covariates over sampled units. Two weighted
averages of the heterogeneous effect vectors serve as targets: a
population-level one that averages over both sampling and assignment, and a
sample-level one conditional on the realized sample. Both are computed from
exact conditional moments (no inner simulation for the cataloged components),
and each coefficient can be decomposed into its own-effect weight vector and
the contamination carried over from other exposure elements.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import _moments
from ._linalg import condition_number, guarded_solve
from .design import DesignSpec, Draw, draw_sample, rng_for
from .errors import NumericalError, UserInputError
from .exposure import EvalContext, ExposureSpec
from .graph import Network

ENUMERATION_CAP = 16


@dataclass(frozen=True)
class Dataset:
    """Inputs to one regression: outcomes, exposures, covariates, sample flags.

    Covariates must include (or span) the exposure conditional-mean columns;
    rows with r=0 never enter any sample moment.
    """

    y: np.ndarray           # (n,)
    exposures: np.ndarray   # (n, d) observed exposure values
    covariates: np.ndarray  # (n, q)
    r: np.ndarray           # (n,) 0/1 sampling indicators
    cond_mean: np.ndarray   # (n, d) E[exposure | sample]
    exposure_names: tuple | None = None
    covariate_names: tuple | None = None

    def __post_init__(self):
        n = self.y.shape[0]
        if self.exposures.shape[0] != n or self.covariates.shape[0] != n \
                or self.r.shape[0] != n or self.cond_mean.shape != self.exposures.shape:
            raise UserInputError("dataset arrays have inconsistent shapes")
        if not np.isin(self.r, (0, 1)).all():
            raise UserInputError("sampling indicators must be 0/1")
        mask = self.r.astype(bool)
        if not np.isfinite(self.y[mask]).all():
            raise UserInputError("sampled outcomes contain non-finite values")

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def n_sampled(self) -> int:
        return int(self.r.sum())

    @property
    def d(self) -> int:
        return self.exposures.shape[1]


@dataclass(frozen=True)
class ResidualizedDesign:
    lambda_: np.ndarray  # (d, q) projection of conditional means on covariates
    xmat: np.ndarray     # (n, d) exposures minus lambda_ @ covariates


@dataclass(frozen=True)
class EstimationResult:
    theta: np.ndarray      # (d,)
    gamma: np.ndarray      # (q,)
    residuals: np.ndarray  # (n,), zero for unsampled rows
    qxx: np.ndarray        # (d, d) sample second moment of residualized exposures
    nobs: int
    design_condition: float


def assemble_covariates(cond_mean: np.ndarray, r, extra: np.ndarray | None = None,
                        extra_names=(), add_intercept: bool = True):
    """Covariate matrix from conditional-mean columns plus optional extras.

    Candidate columns are the conditional means (in order), an intercept, and
    any extra columns. A column that is *exactly* in the span of the columns
    already kept is dropped with a note -- indicator-style conditional means
    routinely collapse to constants when everyone is sampled, and a duplicated
    column would make the design singular rather than informative. Dropping
    exact aliases preserves the span, so the exposure coefficients are
    unchanged; merely ill-conditioned (not aliased) designs still raise later.
    Returns (matrix, names, notes).
    """
    mask = np.asarray(r).astype(bool)
    n = cond_mean.shape[0]
    candidates = [(f"cond_mean_{k}", cond_mean[:, k]) for k in range(cond_mean.shape[1])]
    if add_intercept:
        candidates.append(("intercept", np.ones(n)))
    if extra is not None and extra.shape[1]:
        candidates.extend((name, extra[:, j]) for j, name in enumerate(extra_names))
    kept, names, notes = [], [], []
    basis = np.zeros((int(mask.sum()), 0))
    for name, col in candidates:
        sub = col[mask]
        scale = np.linalg.norm(sub)
        if scale == 0.0:
            notes.append(f"{name} dropped: zero over the sample")
            continue
        if basis.shape[1]:
            coef, *_ = np.linalg.lstsq(basis, sub, rcond=None)
            resid = sub - basis @ coef
        else:
            resid = sub
        if np.linalg.norm(resid) <= 1e-10 * scale:
            notes.append(f"{name} dropped: spanned by earlier covariates")
            continue
        kept.append(col)
        names.append(name)
        basis = np.column_stack([basis, sub])
    return np.column_stack(kept), tuple(names), notes


def residualize(ds: Dataset) -> ResidualizedDesign:
    """Project exposure conditional means on the covariates over the sample.

    Note the normal equations regress the conditional-mean columns, not the
    realized exposures, on the covariates; when the covariates contain the
    conditional means themselves the residualized exposure is exactly
    exposure minus conditional mean.
    """
    mask = ds.r.astype(bool)
    z = ds.covariates[mask]
    m = ds.cond_mean[mask]
    ztz = z.T @ z
    lam = guarded_solve(ztz, z.T @ m, what="covariate moment matrix",
                        names=ds.covariate_names).T
    xmat = ds.exposures - ds.covariates @ lam.T
    return ResidualizedDesign(lambda_=lam, xmat=xmat)


def ols_fit(ds: Dataset, rd: ResidualizedDesign) -> EstimationResult:
    """Joint least squares of y on (residualized exposures, covariates)."""
    mask = ds.r.astype(bool)
    w = np.hstack([rd.xmat[mask], ds.covariates[mask]])
    names = tuple(ds.exposure_names or [f"x{k}" for k in range(ds.d)]) + \
        tuple(ds.covariate_names or [f"z{k}" for k in range(ds.covariates.shape[1])])
    gram = w.T @ w
    beta = guarded_solve(gram, w.T @ ds.y[mask], what="design matrix",
                         names=names)
    d = ds.d
    resid = np.zeros(ds.n)
    resid[mask] = ds.y[mask] - w @ beta
    nobs = int(mask.sum())
    qxx = rd.xmat[mask].T @ rd.xmat[mask] / nobs
    return EstimationResult(theta=beta[:d], gamma=beta[d:], residuals=resid,
                            qxx=qxx, nobs=nobs,
                            design_condition=condition_number(gram))


def gamma_tilde(ds: Dataset, m: int, rho: float | None = None) -> np.ndarray:
    """Covariate coefficients rescaled to target the population-level slope.

    The first ``m`` covariate columns must be the ones that depend on the
    unit's own sampling indicator multiplicatively; their blocks in the
    covariate moment equations are rescaled by the sampling probability
    (``rho``, or its plug-in N/n when omitted) before solving the
    covariates-only regression.
    """
    if not 0 <= m <= ds.covariates.shape[1]:
        raise UserInputError("m must index a prefix of the covariate columns")
    mask = ds.r.astype(bool)
    n_s = int(mask.sum())
    if n_s == 0:
        raise NumericalError("no sampled units")
    rho_val = float(rho) if rho is not None else n_s / ds.n
    z = ds.covariates[mask]
    pzz = z.T @ z / n_s
    pzy = z.T @ ds.y[mask] / n_s
    pzz = pzz.copy()
    pzz[:m, :] *= rho_val
    pzz[:, :m] *= rho_val
    if m:
        pzz[:m, :m] /= rho_val
    pzy = pzy.copy()
    pzy[:m] *= rho_val
    return guarded_solve(pzz, pzy, what="rescaled covariate moment matrix",
                         names=ds.covariate_names)


# ---------------------------------------------------------------------------
# DGP-mode estimands
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DgpTruth:
    """Fixed heterogeneous effects and intercepts of the outcome model."""

    theta: np.ndarray  # (n, d_true)
    nu: np.ndarray     # (n,)

    @property
    def d(self) -> int:
        return self.theta.shape[1]

    def outcomes(self, exposures_true: np.ndarray) -> np.ndarray:
        return np.einsum("ik,ik->i", exposures_true, self.theta) + self.nu


@dataclass(frozen=True)
class EstimandResult:
    theta: np.ndarray       # (d,) weighted-average effect target
    gram: np.ndarray        # (d, d) summed regressor second moments
    cross: np.ndarray       # (d, d_true) summed cross moments vs true exposures
    per_unit_gram: np.ndarray | None = None   # (n, d, d)
    per_unit_cross: np.ndarray | None = None  # (n, d, d_true)
    weights_r: np.ndarray | None = None       # per-unit multipliers used


class CondMoments:
    """Exact per-unit conditional covariance blocks for spec pairs on a draw."""

    def __init__(self, g: Network, draw: Draw, p, ctx: EvalContext | None = None):
        self.g = g
        self.draw = draw
        n = g.n
        self.p = np.broadcast_to(np.asarray(p, dtype=np.float64), (n,))
        self.ctx = ctx if ctx is not None else EvalContext.from_draw(g, draw, p=self.p)
        self.scale = self.p * (1.0 - self.p)
        self._rows = {}
        self._terms = {}

    def _net(self, spec: ExposureSpec):
        return self.ctx.network(spec.network_source)

    def rows(self, spec: ExposureSpec):
        key = id(spec)
        if key not in self._rows:
            net = self._net(spec)
            rows = []
            for c in spec.components:
                rr = c.rows(self.ctx, net)
                if rr is None:
                    rows = None
                    break
                rows.append(rr)
            self._rows[key] = rows
        return self._rows[key]

    def terms(self, spec: ExposureSpec):
        key = id(spec)
        if key not in self._terms:
            net = self._net(spec)
            per_comp = [c.terms(self.ctx, net) for c in spec.components]
            self._terms[key] = [[per_comp[k][i] for k in range(spec.d)]
                                for i in range(self.g.n)]
        return self._terms[key]

    def blocks(self, spec_a: ExposureSpec, spec_b: ExposureSpec) -> np.ndarray:
        """(n, da, db) array of Cov(a_k, b_l | sample) per unit."""
        rows_a, rows_b = self.rows(spec_a), self.rows(spec_b)
        if rows_a is not None and rows_b is not None:
            return _moments.linear_cov_blocks(rows_a, rows_b, self.scale)
        return _moments.unit_cov_blocks(self.terms(spec_a), self.terms(spec_b),
                                        self.p)


def _unconditional_linear_blocks(spec: ExposureSpec, g: Network, rho: float,
                                 p: np.ndarray) -> np.ndarray:
    """Exact E[Cov(T|R)] for all-linear population-source specs.

    Coefficients on the latent treatments are a_ik R_k with fixed a, so the
    expectation over the sample replaces each coordinate's variance weight by
    rho p (1-p).
    """
    ctx = EvalContext(population=g, a_tilde=g, a_censored=g,
                      r=np.ones(g.n), p=p)
    rows = [c.rows(ctx, g, masked=False) for c in spec.components]
    scale = rho * p * (1.0 - p)
    return _moments.linear_cov_blocks(rows, rows, scale)


def population_estimand(g: Network, spec_true: ExposureSpec, design: DesignSpec,
                        truth: DgpTruth, mode: str = "auto",
                        draws: int = 2000, rng=None,
                        enumeration_cap: int = ENUMERATION_CAP,
                        per_unit: bool = False) -> EstimandResult:
    """Population-level target: effect vectors averaged with weights
    E[X_i X_i'] over both sampling and assignment randomness.

    ``mode``: ``closed_form`` demands exactness (analytic for all-linear
    population-source specs, full enumeration over samples when n is within
    the enumeration cap, error otherwise); ``monte_carlo`` averages exact
    conditional moments over sample draws; ``auto`` picks the cheapest exact
    route and falls back to Monte Carlo.
    """
    p = design.p_vector(g.n)
    if truth.theta.shape != (g.n, spec_true.d):
        raise UserInputError("truth dimensions do not match the exposure spec")

    def finish(blocks):
        gram = blocks.sum(axis=0)
        cross_sum = np.einsum("ikl,il->k", blocks, truth.theta)
        theta = guarded_solve(gram, cross_sum, what="population moment matrix")
        return EstimandResult(theta=theta, gram=gram,
                              cross=np.einsum("ikl->kl", blocks),
                              per_unit_gram=blocks if per_unit else None,
                              per_unit_cross=blocks if per_unit else None,
                              weights_r=np.ones(g.n))

    linear_ok = spec_true.network_source == "population" and all(
        c.kind in ("own_treatment", "treated_friends_share",
                   "treated_friends_count", "second_neighbor_share")
        for c in spec_true.components)
    if mode in ("auto", "closed_form") and linear_ok:
        return finish(_unconditional_linear_blocks(spec_true, g, design.rho, p))
    if mode == "closed_form" or (mode == "auto" and g.n <= enumeration_cap):
        if g.n > enumeration_cap:
            raise UserInputError(
                f"closed_form enumeration refused for n={g.n} > {enumeration_cap}")
        blocks = np.zeros((g.n, spec_true.d, spec_true.d))
        for bits in itertools.product((0, 1), repeat=g.n):
            r = np.array(bits, dtype=np.int8)
            weight = float(np.prod(np.where(r, design.rho, 1.0 - design.rho)))
            if weight == 0.0:
                continue
            draw = draw_sample(g, design, rng_for(0, 0), forced_r=r,
                               forced_dstar=np.zeros(g.n, dtype=np.int8))
            cm = CondMoments(g, draw, p)
            blocks += weight * cm.blocks(spec_true, spec_true)
        return finish(blocks)
    # Monte Carlo over samples, exact conditional moments within each
    rng = rng if rng is not None else rng_for(0, 9)
    blocks = np.zeros((g.n, spec_true.d, spec_true.d))
    for _ in range(draws):
        draw = draw_sample(g, design, rng)
        cm = CondMoments(g, draw, p)
        blocks += cm.blocks(spec_true, spec_true)
    blocks /= draws
    return finish(blocks)


def sample_estimand(draw: Draw, g: Network, spec_obs: ExposureSpec,
                    spec_true: ExposureSpec, truth: DgpTruth, p=None,
                    per_unit: bool = False,
                    cond_moments: CondMoments | None = None) -> EstimandResult:
    """Sample-level target for one draw: solves the conditional moment system
    with weights E[X~ X~' | sample] and cross moments E[X~ X' | sample].

    Exact for the cataloged components. The result's dimension follows the
    observed spec; contamination across elements is visible through
    :func:`contamination_weights`.
    """
    if truth.theta.shape != (g.n, spec_true.d):
        raise UserInputError("truth dimensions do not match the true spec")
    cm = cond_moments if cond_moments is not None else CondMoments(
        g, draw, p if p is not None else 0.5)
    r = draw.r.astype(np.float64)
    g_obs = cm.blocks(spec_obs, spec_obs)
    g_cross = cm.blocks(spec_obs, spec_true)
    gram = np.einsum("i,ikl->kl", r, g_obs)
    rhs = np.einsum("i,ikl,il->k", r, g_cross, truth.theta)
    theta = guarded_solve(gram, rhs, what="conditional moment matrix")
    return EstimandResult(theta=theta, gram=gram,
                          cross=np.einsum("i,ikl->kl", r, g_cross),
                          per_unit_gram=g_obs if per_unit else None,
                          per_unit_cross=g_cross if per_unit else None,
                          weights_r=r)


@dataclass(frozen=True)
class ContaminationReport:
    """Element-wise decomposition of one estimand component.

    ``weights`` holds each unit's loading on every true-effect element; the
    component equals ``(weights * theta).sum()``. When the observed and true
    dimensions agree the own/contamination split is reported, with
    negative-own-weight diagnostics.
    """

    k: int
    weights: np.ndarray              # (n, d_true)
    total: float
    own_term: float | None = None
    contamination_term: float | None = None
    own_weights: np.ndarray | None = None
    contamination_weights: np.ndarray | None = None  # (n, d_true - 1)
    negative_own_weights: int = 0


def contamination_weights(per_unit_gram: np.ndarray,
                          per_unit_cross: np.ndarray,
                          truth: DgpTruth, k: int,
                          weights_r: np.ndarray | None = None) -> ContaminationReport:
    """Decompose component ``k`` of an estimand into per-unit effect weights.

    ``per_unit_gram`` are the unit-level second moments of the regressor-side
    residualized exposures, ``per_unit_cross`` the unit-level cross moments
    against the true residualized exposures (equal to the gram in the
    population case). The residual of projecting element k on the remaining
    elements defines the weights; by construction the regressor-side cross
    weights sum to zero.
    """
    n, d, _ = per_unit_gram.shape
    dt = per_unit_cross.shape[2]
    if not 0 <= k < d:
        raise UserInputError(f"element index {k} out of range for d={d}")
    rw = np.ones(n) if weights_r is None else np.asarray(weights_r, dtype=np.float64)
    gram = np.einsum("i,ikl->kl", rw, per_unit_gram)
    others = [l for l in range(d) if l != k]
    if others:
        c = guarded_solve(gram[np.ix_(others, others)], gram[others, k],
                          what="projection moment matrix")
        u_cross = per_unit_cross[:, k, :] - np.einsum(
            "m,iml->il", c, per_unit_cross[:, others, :])
        denom = gram[k, k] - float(c @ gram[others, k])
    else:
        u_cross = per_unit_cross[:, k, :]
        denom = gram[k, k]
    if denom <= 0:
        raise NumericalError(f"element {k} has no residual variation")
    weights = rw[:, None] * u_cross / denom
    total = float(np.einsum("il,il->", weights, truth.theta))
    report = {"k": k, "weights": weights, "total": total}
    if d == dt:
        own_w = weights[:, k]
        own = float(own_w @ truth.theta[:, k])
        report.update(
            own_term=own, contamination_term=total - own, own_weights=own_w,
            contamination_weights=weights[:, [l for l in range(dt) if l != k]],
            negative_own_weights=int(np.sum(own_w < -1e-12)))
    return ContaminationReport(**report)

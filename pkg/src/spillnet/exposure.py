"""Exposure mappings: evaluation, exact conditional expectations given the
sample, dependence radius, and cross-element correlation diagnostics.

An :class:`ExposureSpec` is an ordered list of cataloged components evaluated
on one network source (the population network, the sampled network, or the
censored network). Components are deliberately a closed catalog: each one
knows how to evaluate itself, how to state its conditional expectation given
the sampling indicators in closed form, and how to expose its latent-treatment
structure to the moment engine. Ratio conventions follow the usual design:
a share with an empty denominator is 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import _kernels, _moments
from .design import Draw
from .errors import UserInputError
from .graph import Network

POPULATION = "population"
SAMPLED = "sampled"
CENSORED = "censored"
SOURCES = (POPULATION, SAMPLED, CENSORED)


def _csr_dot_dense(indptr, cols, vals, dense):
    """Per-row sums sum_k vals[k] * dense[cols[k]]."""
    gathered = vals * dense[cols]
    cs = np.concatenate([[0.0], np.cumsum(gathered)])
    return cs[indptr[1:]] - cs[indptr[:-1]]


def _safe_ratio(num, denom):
    out = np.zeros_like(num, dtype=np.float64)
    ok = denom > 0
    out[ok] = num[ok] / denom[ok]
    return out


class EvalContext:
    """Resolved inputs for one evaluation: networks, indicators, probabilities.

    Caches second-order path rows per (network, exclusion flag) since they are
    by far the most expensive per-draw structure.
    """

    def __init__(self, population: Network | None, a_tilde: Network | None,
                 a_censored: Network | None, r, p, dstar=None):
        self.population = population
        self.a_tilde = a_tilde
        self.a_censored = a_censored if a_censored is not None else a_tilde
        self.r = np.asarray(r, dtype=np.float64)
        self.p = np.asarray(p, dtype=np.float64)
        self.dstar = None if dstar is None else np.asarray(dstar, dtype=np.float64)
        self._second = {}

    @classmethod
    def build(cls, spec: "ExposureSpec", network, r, p, dstar=None,
              population: Network | None = None) -> "EvalContext":
        if isinstance(network, Draw):
            draw = network
            return cls(population=population, a_tilde=draw.a_tilde,
                       a_censored=draw.a_censored, r=draw.r if r is None else r,
                       p=p, dstar=draw.dstar if dstar is None else dstar)
        return cls(population=network, a_tilde=network, a_censored=network,
                   r=r, p=p, dstar=dstar)

    @classmethod
    def from_draw(cls, g: Network, draw: Draw, p, dstar=None) -> "EvalContext":
        return cls(population=g, a_tilde=draw.a_tilde, a_censored=draw.a_censored,
                   r=draw.r, p=p,
                   dstar=draw.dstar if dstar is None else dstar)

    @property
    def d(self):
        return self.r * self.dstar

    def network(self, source: str) -> Network:
        net = {POPULATION: self.population, SAMPLED: self.a_tilde,
               CENSORED: self.a_censored}[source]
        if net is None:
            raise UserInputError(
                f"{source} network required but not available in this context")
        return net

    def second_rows(self, net: Network, exclude: bool):
        key = (id(net), exclude)
        if key not in self._second:
            self._second[key] = _kernels.second_order_rows(
                net.indptr, net.indices, exclude)
        return self._second[key]


# ---------------------------------------------------------------------------
# component catalog
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OwnTreatment:
    """Unit's own realized treatment."""

    radius: int = field(default=0, init=False)
    kind = "own_treatment"

    def values(self, ctx, net):
        return ctx.d.copy()

    def cond_mean(self, ctx, net):
        return ctx.r * ctx.p

    def rows(self, ctx, net, masked=True):
        n = net.n
        indptr = np.arange(n + 1, dtype=np.int64)
        cols = np.arange(n, dtype=np.int64)
        vals = ctx.r.astype(np.float64) if masked else np.ones(n)
        return indptr, cols, vals

    def terms(self, ctx, net):
        out = []
        for i in range(net.n):
            if ctx.r[i]:
                out.append(_moments.linear(0.0, [i], [1.0]))
            else:
                out.append(_moments.ZERO)
        return out


@dataclass(frozen=True)
class TreatedFriendsShare:
    """Share of treated units among the network neighbors (0 when isolated)."""

    radius: int = field(default=1, init=False)
    kind = "treated_friends_share"

    def values(self, ctx, net):
        num = _kernels.neighbor_value_sums(net.indptr, net.indices, ctx.d)
        return _safe_ratio(num, net.degrees)

    def cond_mean(self, ctx, net):
        num = _kernels.neighbor_value_sums(net.indptr, net.indices, ctx.r * ctx.p)
        return _safe_ratio(num, net.degrees)

    def rows(self, ctx, net, masked=True):
        deg = net.degrees.astype(np.float64)
        inv = np.where(deg > 0, 1.0 / np.maximum(deg, 1.0), 0.0)
        vals = np.repeat(inv, net.degrees)
        if masked:
            vals = vals * ctx.r[net.indices]
        return net.indptr, net.indices.copy(), vals

    def terms(self, ctx, net):
        indptr, cols, vals = self.rows(ctx, net)
        out = []
        for i in range(net.n):
            lo, hi = indptr[i], indptr[i + 1]
            c, w = cols[lo:hi], vals[lo:hi]
            keep = w != 0
            out.append(_moments.linear(0.0, c[keep], w[keep]) if keep.any()
                       else _moments.ZERO)
        return out


@dataclass(frozen=True)
class TreatedFriendsCount:
    """Number of treated network neighbors."""

    radius: int = field(default=1, init=False)
    kind = "treated_friends_count"

    def values(self, ctx, net):
        return _kernels.neighbor_value_sums(net.indptr, net.indices, ctx.d)

    def cond_mean(self, ctx, net):
        return _kernels.neighbor_value_sums(net.indptr, net.indices, ctx.r * ctx.p)

    def rows(self, ctx, net, masked=True):
        vals = np.ones(net.indices.size)
        if masked:
            vals = ctx.r[net.indices].astype(np.float64)
        return net.indptr, net.indices.copy(), vals

    def terms(self, ctx, net):
        out = []
        for i in range(net.n):
            nbrs = net.neighbors(i)
            keep = nbrs[ctx.r[nbrs] > 0]
            out.append(_moments.linear(0.0, keep, np.ones(keep.size))
                       if keep.size else _moments.ZERO)
        return out


@dataclass(frozen=True)
class TreatedFriendsAny:
    """Indicator of at least one treated network neighbor."""

    radius: int = field(default=1, init=False)
    kind = "treated_friends_any"

    def values(self, ctx, net):
        num = _kernels.neighbor_value_sums(net.indptr, net.indices, ctx.d)
        return (num > 0).astype(np.float64)

    def cond_mean(self, ctx, net):
        none = _kernels.neighbor_value_products(net.indptr, net.indices,
                                                1.0 - ctx.r * ctx.p)
        out = 1.0 - none
        out[net.degrees == 0] = 0.0
        return out

    def rows(self, ctx, net, masked=True):
        return None  # not linear in the latent treatments

    def terms(self, ctx, net):
        out = []
        for i in range(net.n):
            nbrs = net.neighbors(i)
            keep = nbrs[ctx.r[nbrs] > 0]
            out.append(_moments.AnyOf(keep) if keep.size else _moments.ZERO)
        return out


@dataclass(frozen=True)
class SecondNeighborShare:
    """Treated share among second-order contacts, weighted by path counts.

    Each endpoint k of a two-step path i-j-k (k != i) contributes once per
    shared neighbor j. With ``exclude_triangles`` the endpoints that are also
    direct neighbors of i are dropped, which removes the double counting of
    units that would otherwise enter both this component and the first-order
    share.
    """

    exclude_triangles: bool = True
    radius: int = field(default=2, init=False)
    kind = "second_neighbor_share"

    def _rows_raw(self, ctx, net):
        return ctx.second_rows(net, self.exclude_triangles)

    def values(self, ctx, net):
        rp, cols, cnts = self._rows_raw(ctx, net)
        num = _csr_dot_dense(rp, cols, cnts, ctx.d)
        denom = _csr_dot_dense(rp, cols, cnts, np.ones(net.n))
        return _safe_ratio(num, denom)

    def cond_mean(self, ctx, net):
        rp, cols, cnts = self._rows_raw(ctx, net)
        num = _csr_dot_dense(rp, cols, cnts, ctx.r * ctx.p)
        denom = _csr_dot_dense(rp, cols, cnts, np.ones(net.n))
        return _safe_ratio(num, denom)

    def rows(self, ctx, net, masked=True):
        rp, cols, cnts = self._rows_raw(ctx, net)
        denom = _csr_dot_dense(rp, cols, cnts, np.ones(net.n))
        inv = np.where(denom > 0, 1.0 / np.maximum(denom, 1.0), 0.0)
        vals = cnts * np.repeat(inv, np.diff(rp))
        if masked:
            vals = vals * ctx.r[cols]
        return rp, cols.copy(), vals

    def terms(self, ctx, net):
        indptr, cols, vals = self.rows(ctx, net)
        out = []
        for i in range(net.n):
            lo, hi = indptr[i], indptr[i + 1]
            c, w = cols[lo:hi], vals[lo:hi]
            keep = w != 0
            out.append(_moments.linear(0.0, c[keep], w[keep]) if keep.any()
                       else _moments.ZERO)
        return out


@dataclass(frozen=True)
class InteractionOwnTimesShare:
    """Own treatment times the treated-friends share."""

    radius: int = field(default=1, init=False)
    kind = "interaction_own_times_share"
    _share = TreatedFriendsShare()

    def values(self, ctx, net):
        return ctx.d * self._share.values(ctx, net)

    def cond_mean(self, ctx, net):
        # own treatment is independent of the share (the share excludes i)
        return ctx.r * ctx.p * self._share.cond_mean(ctx, net)

    def rows(self, ctx, net, masked=True):
        return None

    def terms(self, ctx, net):
        shares = self._share.terms(ctx, net)
        out = []
        for i in range(net.n):
            if not ctx.r[i]:
                out.append(_moments.ZERO)
            elif isinstance(shares[i], _moments.Linear) and shares[i].idx.size == 0:
                out.append(_moments.ZERO)
            else:
                out.append(_moments.OwnTimes(i, shares[i]))
        return out


@dataclass(frozen=True)
class CensorAware:
    """Evaluate ``inner`` on the censored network.

    With ``zero_if_censored`` the component is zeroed for units whose reported
    link count reached the cap, so the element is unaffected by what the cap
    may have hidden. ``cap`` must then repeat the reporting cap in force.
    """

    inner: object
    zero_if_censored: bool = False
    cap: int | None = None

    kind = "censor_aware"

    def __post_init__(self):
        if self.zero_if_censored and self.cap is None:
            raise UserInputError("zero_if_censored requires the reporting cap")

    @property
    def radius(self):
        return self.inner.radius

    def _mask(self, ctx, net):
        if not self.zero_if_censored:
            return None
        return (net.degrees < self.cap).astype(np.float64)

    def values(self, ctx, net):
        cnet = ctx.network(CENSORED)
        out = self.inner.values(ctx, cnet)
        m = self._mask(ctx, cnet)
        return out if m is None else out * m

    def cond_mean(self, ctx, net):
        cnet = ctx.network(CENSORED)
        out = self.inner.cond_mean(ctx, cnet)
        m = self._mask(ctx, cnet)
        return out if m is None else out * m

    def rows(self, ctx, net, masked=True):
        cnet = ctx.network(CENSORED)
        rows = self.inner.rows(ctx, cnet, masked=masked)
        if rows is None:
            return None
        m = self._mask(ctx, cnet)
        if m is None:
            return rows
        indptr, cols, vals = rows
        return indptr, cols, vals * np.repeat(m, np.diff(indptr))

    def terms(self, ctx, net):
        cnet = ctx.network(CENSORED)
        inner = self.inner.terms(ctx, cnet)
        m = self._mask(ctx, cnet)
        if m is None:
            return inner
        return [t if m[i] else _moments.ZERO for i, t in enumerate(inner)]


_KINDS = {
    "own_treatment": OwnTreatment,
    "treated_friends_share": TreatedFriendsShare,
    "treated_friends_count": TreatedFriendsCount,
    "treated_friends_any": TreatedFriendsAny,
    "second_neighbor_share": SecondNeighborShare,
    "interaction_own_times_share": InteractionOwnTimesShare,
    "censor_aware": CensorAware,
}


@dataclass(frozen=True)
class ExposureSpec:
    """Ordered exposure components plus the network they are computed on."""

    components: tuple
    network_source: str = SAMPLED

    def __post_init__(self):
        if not self.components:
            raise UserInputError("an exposure spec needs at least one component")
        if self.network_source not in SOURCES:
            raise UserInputError(f"network_source must be one of {SOURCES}")
        object.__setattr__(self, "components", tuple(self.components))

    @property
    def d(self) -> int:
        return len(self.components)

    def all_linear(self, ctx) -> bool:
        return all(c.rows(ctx, None if isinstance(c, CensorAware)
                          else ctx.network(self.network_source)) is not None
                   for c in self.components)

    def to_json_dict(self) -> dict:
        return {"components": [_component_to_json(c) for c in self.components],
                "network_source": self.network_source}

    @classmethod
    def from_json_dict(cls, obj: dict) -> "ExposureSpec":
        comps = tuple(_component_from_json(c) for c in obj["components"])
        return cls(components=comps,
                   network_source=obj.get("network_source", SAMPLED))


def _component_to_json(c) -> dict:
    out = {"kind": c.kind}
    if isinstance(c, SecondNeighborShare):
        out["exclude_triangles"] = c.exclude_triangles
    if isinstance(c, CensorAware):
        out["inner"] = _component_to_json(c.inner)
        out["zero_if_censored"] = c.zero_if_censored
        out["cap"] = c.cap
    return out


def _component_from_json(obj: dict):
    kind = obj.get("kind")
    if kind not in _KINDS:
        raise UserInputError(f"unknown exposure component kind {kind!r}")
    if kind == "second_neighbor_share":
        return SecondNeighborShare(exclude_triangles=bool(
            obj.get("exclude_triangles", True)))
    if kind == "censor_aware":
        return CensorAware(inner=_component_from_json(obj["inner"]),
                           zero_if_censored=bool(obj.get("zero_if_censored", False)),
                           cap=obj.get("cap"))
    return _KINDS[kind]()


def spec_from_json(text: str) -> ExposureSpec:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UserInputError(f"invalid exposure spec JSON: {exc}") from exc
    return ExposureSpec.from_json_dict(obj)


@dataclass(frozen=True)
class ExposureMatrix:
    values: np.ndarray     # (n, d) realized components
    cond_mean: np.ndarray  # (n, d) E[component | sample]
    radius: int


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def compute_exposure(spec: ExposureSpec, draw: Draw, g: Network,
                     p=None) -> np.ndarray:
    """Evaluate the spec's components for every unit on one draw."""
    p = 0.0 if p is None else p
    ctx = EvalContext.from_draw(g, draw, p=np.broadcast_to(
        np.asarray(p, dtype=np.float64), (g.n,)))
    net = ctx.network(spec.network_source)
    return np.column_stack([c.values(ctx, net) for c in spec.components])


def conditional_expectation(spec: ExposureSpec, r, network, p,
                            population: Network | None = None) -> np.ndarray:
    """Exact E[T | sample] per unit and component.

    ``network`` is either the resolved adjacency for the spec's source or a
    :class:`Draw`, in which case sampled and censored networks are taken from
    it (pass ``population`` as well for population-source specs). Share
    denominators of zero follow the 0 convention.
    """
    n = network.n if isinstance(network, Network) else network.a_tilde.n
    p = np.broadcast_to(np.asarray(p, dtype=np.float64), (n,))
    ctx = EvalContext.build(spec, network, r=r, p=p, population=population)
    net = ctx.network(spec.network_source)
    return np.column_stack([c.cond_mean(ctx, net) for c in spec.components])


def exposure_matrix(spec: ExposureSpec, draw: Draw, g: Network, p) -> ExposureMatrix:
    """Values plus conditional means plus the dependence radius, in one pass."""
    p = np.broadcast_to(np.asarray(p, dtype=np.float64), (g.n,))
    ctx = EvalContext.from_draw(g, draw, p=p)
    net = ctx.network(spec.network_source)
    values = np.column_stack([c.values(ctx, net) for c in spec.components])
    means = np.column_stack([c.cond_mean(ctx, net) for c in spec.components])
    return ExposureMatrix(values=values, cond_mean=means,
                          radius=dependency_radius(spec))


def dependency_radius(spec: ExposureSpec) -> int:
    """Largest neighborhood order any component touches, floored at 1.

    The floor keeps the downstream HAC truncation conservative even for
    own-treatment-only specs, where it is harmless.
    """
    return max(1, max(c.radius for c in spec.components))


@dataclass(frozen=True)
class OverlapDiagnostic:
    covariance: np.ndarray  # (d, d) conditional covariance, averaged over sample
    mc_se: np.ndarray       # matching Monte Carlo standard errors
    flagged: tuple          # (k, l) pairs with |cov| above 3 MC standard errors
    draws: int

    @property
    def contaminated(self) -> bool:
        return len(self.flagged) > 0


def overlap_diagnostic(spec: ExposureSpec, r, network, p, b: int,
                       rng: np.random.Generator) -> OverlapDiagnostic:
    """Monte Carlo check of the no-correlation condition across elements.

    Estimates Cov(T_(k), T_(l) | sample) averaged over sampled units by
    redrawing the latent treatments ``b`` times with the sample held fixed,
    and flags element pairs whose covariance exceeds three MC standard errors.
    Correlated elements mean OLS coefficients can absorb effects from other
    elements, so flagged pairs deserve a redesigned mapping.
    """
    if b < 100:
        raise UserInputError("overlap diagnostic needs at least 100 draws")
    r = np.asarray(r, dtype=np.int8)
    n = network.n if isinstance(network, Network) else network.a_tilde.n
    p = np.broadcast_to(np.asarray(p, dtype=np.float64), (n,))
    sampled = np.nonzero(r)[0]
    d = spec.d
    vals = np.empty((b, sampled.size, d))
    for t in range(b):
        dstar = (rng.random(n) < p).astype(np.int8)
        ctx = EvalContext.build(spec, network, r=r, p=p, dstar=dstar)
        net = ctx.network(spec.network_source)
        vals[t] = np.column_stack(
            [c.values(ctx, net) for c in spec.components])[sampled]
    mu = vals.mean(axis=0, keepdims=True)
    centered = vals - mu
    # per-draw average cross product over units; its spread gives the MC error
    per_draw = np.einsum("bik,bil->bkl", centered, centered) / max(sampled.size, 1)
    factor = b / (b - 1)
    cov = per_draw.mean(axis=0) * factor
    se = per_draw.std(axis=0, ddof=1) / np.sqrt(b) * factor
    flagged = []
    for k in range(d):
        for l in range(k + 1, d):
            if abs(cov[k, l]) > 3.0 * max(se[k, l], 1e-15):
                flagged.append((k, l))
    return OverlapDiagnostic(covariance=cov, mc_se=se, flagged=tuple(flagged),
                             draws=b)

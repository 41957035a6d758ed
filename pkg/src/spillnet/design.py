"""Sampling indicators, treatment assignment, sampled and censored networks.

One experimental draw consists of unit sampling indicators R, latent
treatments D*, realized treatments D = R * D*, the sampled adjacency (induced
subgraph or star), and an optional censored adjacency when a reporting cap is
in force. Draws are pure functions of (graph, spec, seed).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .errors import UserInputError
from .graph import Network, NeighborhoodIndex, build_index

INDUCED = "induced"
STAR = "star"
SCHEMES = (INDUCED, STAR)


def rng_for(master_seed: int, *path: int) -> np.random.Generator:
    """Derive an independent generator from a master seed and an integer path.

    The same (seed, path) always yields the same stream; distinct paths give
    statistically independent streams, so replications can run concurrently.
    """
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class DesignSpec:
    """Sampling and assignment plan for one experiment.

    ``p`` may be a scalar or a length-n array of per-unit assignment
    probabilities. ``censor_preference`` orders each node's neighbors for the
    reporting cap; by default lower node index wins (survey orderings such as
    closeness are data we do not have, and a deterministic default keeps
    results reproducible).
    """

    rho: float
    p: float | np.ndarray = 0.5
    scheme: str = INDUCED
    censor_cap: int | None = None
    censor_preference: np.ndarray | None = None  # lower rank value = kept first

    def __post_init__(self):
        if not (0.0 < self.rho <= 1.0):
            raise UserInputError(f"rho must be in (0, 1], got {self.rho}")
        if self.scheme not in SCHEMES:
            raise UserInputError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.censor_cap is not None and self.censor_cap < 1:
            raise UserInputError("censor_cap must be >= 1 when present")
        p = np.asarray(self.p, dtype=np.float64)
        if np.any(p < 0.0) or np.any(p > 1.0):
            raise UserInputError("every assignment probability must lie in [0, 1]")

    def p_vector(self, n: int) -> np.ndarray:
        p = np.asarray(self.p, dtype=np.float64)
        if p.ndim == 0:
            return np.full(n, float(p))
        if p.shape != (n,):
            raise UserInputError(f"p has length {p.shape[0]}, expected {n}")
        return p

    def to_json_dict(self) -> dict:
        p = np.asarray(self.p)
        return {
            "rho": self.rho,
            "p": float(p) if p.ndim == 0 else p.tolist(),
            "scheme": self.scheme,
            "censor_cap": self.censor_cap,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "DesignSpec":
        p = obj.get("p", 0.5)
        if isinstance(p, list):
            p = np.asarray(p, dtype=np.float64)
        return cls(rho=float(obj["rho"]), p=p,
                   scheme=obj.get("scheme", INDUCED),
                   censor_cap=obj.get("censor_cap"))


@dataclass(frozen=True)
class Draw:
    """One realization of sampling and assignment.

    ``a_tilde`` is the sampled adjacency; ``a_censored`` equals ``a_tilde``
    unless a reporting cap applied (the all-ones censoring default).
    """

    r: np.ndarray        # 0/1 sampling indicators
    dstar: np.ndarray    # 0/1 latent treatments
    d: np.ndarray        # realized treatments r * dstar
    a_tilde: Network
    a_censored: Network
    seed: int | None = None

    @property
    def n_sampled(self) -> int:
        return int(self.r.sum())

    def sampled_ids(self) -> np.ndarray:
        return np.nonzero(self.r)[0]

    def with_dstar(self, dstar) -> "Draw":
        dstar = np.asarray(dstar, dtype=np.int8)
        return replace(self, dstar=dstar, d=(self.r * dstar).astype(np.int8), seed=None)


def sample_network(g: Network, r: np.ndarray, scheme: str) -> Network:
    """Sampled adjacency: both endpoints sampled (induced) or at least one (star)."""
    keep = []
    for i in range(g.n):
        for j in g.neighbors(i):
            if i < j:
                if scheme == INDUCED:
                    if r[i] and r[j]:
                        keep.append((i, int(j)))
                else:
                    if r[i] or r[j]:
                        keep.append((i, int(j)))
    return Network.from_edges(g.n, keep)


def apply_censoring(a_tilde: Network, r: np.ndarray, cap: int,
                    preference: np.ndarray | None = None,
                    report_from: Network | None = None) -> Network:
    """Censored network: each sampled unit reports at most ``cap`` links.

    A sampled unit keeps its top-``cap`` neighbors under ``preference``
    (lower value preferred, node index breaking ties; default is index
    order). The result is symmetrized so a link survives when either endpoint
    reports it, and is always an edge subset of ``a_tilde``.

    ``report_from`` selects the list a unit ranks: under star sampling units
    report from their full population neighbor list, under induced-subgraph
    sampling from their sampled neighbors; by default the ranking list is
    ``a_tilde`` itself.
    """
    if cap < 1:
        raise UserInputError("censor_cap must be >= 1")
    base = report_from if report_from is not None else a_tilde
    n = a_tilde.n
    if preference is not None:
        preference = np.asarray(preference, dtype=np.float64)
        if preference.shape != (n,):
            raise UserInputError("censor preference must assign a rank to every node")
    reported = set()
    for i in range(n):
        if not r[i]:
            continue
        nbrs = base.neighbors(i)
        if nbrs.size > cap:
            if preference is None:
                kept = nbrs[:cap]  # neighbor lists are sorted by index
            else:
                order = np.lexsort((nbrs, preference[nbrs]))
                kept = nbrs[order[:cap]]
        else:
            kept = nbrs
        for j in kept:
            reported.add((min(i, int(j)), max(i, int(j))))
    kept_edges = reported & a_tilde.edge_set()
    return Network.from_edges(n, kept_edges)


def draw_sample(g: Network, spec: DesignSpec, rng: np.random.Generator | int,
                forced_r=None, forced_dstar=None) -> Draw:
    """Draw (R, D*, D) and the sampled/censored networks for one replication.

    R_i ~ Bernoulli(rho) and D*_i ~ Bernoulli(p_i), all independent. The
    ``forced_*`` hooks bypass randomness for tests and for conditioning on an
    observed sample.
    """
    seed = None
    if isinstance(rng, (int, np.integer)):
        seed = int(rng)
        rng = rng_for(seed, 0)
    p = spec.p_vector(g.n)
    if forced_r is None:
        r = (rng.random(g.n) < spec.rho).astype(np.int8)
    else:
        r = np.asarray(forced_r, dtype=np.int8)
    if forced_dstar is None:
        dstar = (rng.random(g.n) < p).astype(np.int8)
    else:
        dstar = np.asarray(forced_dstar, dtype=np.int8)
    d = (r * dstar).astype(np.int8)
    a_tilde = sample_network(g, r, spec.scheme)
    if spec.censor_cap is not None:
        report_from = g if spec.scheme == STAR else a_tilde
        a_censored = apply_censoring(a_tilde, r, spec.censor_cap,
                                     spec.censor_preference, report_from=report_from)
    else:
        a_censored = a_tilde
    return Draw(r=r, dstar=dstar, d=d, a_tilde=a_tilde, a_censored=a_censored, seed=seed)


def draw_from_observed(g: Network, r, d, scheme: str = INDUCED,
                       censor_cap: int | None = None,
                       censor_preference=None) -> Draw:
    """Wrap observed (R, D) data as a draw; D* is set to D (unknown off-sample)."""
    r = np.asarray(r, dtype=np.int8)
    d = np.asarray(d, dtype=np.int8)
    if np.any(d > r):
        raise UserInputError("treated units must be sampled (D_i <= R_i)")
    a_tilde = sample_network(g, r, scheme)
    if censor_cap is not None:
        report_from = g if scheme == STAR else a_tilde
        a_censored = apply_censoring(a_tilde, r, censor_cap, censor_preference,
                                     report_from=report_from)
    else:
        a_censored = a_tilde
    return Draw(r=r, dstar=d.copy(), d=d, a_tilde=a_tilde, a_censored=a_censored)


def sampled_distances(a_tilde: Network, smax: int) -> NeighborhoodIndex:
    """Exact-distance shells on the sampled network (monotonically >= population)."""
    return build_index(a_tilde, smax)


def design_spec_from_json(text: str) -> DesignSpec:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UserInputError(f"invalid design JSON: {exc}") from exc
    return DesignSpec.from_json_dict(obj)

"""Command-line surface: estimate, diagnose, expectation, simulate, summary.

Reports are JSON-first (sorted keys, stable layout, embedded config hash,
seed, and tool version, so identical inputs give byte-identical files);
tables also flatten to CSV where noted. Exit codes: 0 success, 2 user error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .design import (INDUCED, SCHEMES, draw_from_observed, rng_for,
                     sampled_distances)
from .errors import NumericalError, UserInputError
from .estimator import (Dataset, assemble_covariates, gamma_tilde,
                        ols_fit, residualize)
from .exposure import (ExposureSpec, conditional_expectation, dependency_radius,
                       exposure_matrix, overlap_diagnostic, spec_from_json)
from .graph import (Network, build_index, load_edge_list, network_summary,
                    sparsity_diagnostics)
from .montecarlo import (SimulationConfig, config_hash, run_simulation,
                         synthetic_village_graph)
from .variance import (HacSpec, clip_diagnostics, eigen_clip, estimate_variance,
                       hac_kernel)


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UserInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spillnet",
        description="Spillover-effect estimation on sampled networks")
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="fit the regression and report "
                         "coefficients with network-robust standard errors")
    _graph_flags(est)
    _data_flags(est)
    est.add_argument("--hac-k", type=int, default=None,
                     help="dependence radius (default: from the exposure spec)")
    est.add_argument("--variance", choices=["ehw", "plain", "eigen"],
                     default="eigen")
    est.add_argument("--gamma", choices=["hat", "tilde"], default="hat")
    est.add_argument("--gamma-m", type=int, default=1,
                     help="leading covariate columns that scale with the "
                          "unit's own sampling indicator (tilde only)")
    est.add_argument("--out", type=Path, default=None)
    est.set_defaults(func=cmd_estimate)

    dia = sub.add_parser("diagnose", help="covariate-span, correlation, and "
                         "sparsity diagnostics")
    _graph_flags(dia)
    _data_flags(dia)
    dia.add_argument("--hac-k", type=int, default=None)
    dia.add_argument("--b", type=int, default=500,
                     help="draws for the correlation diagnostic")
    dia.add_argument("--seed", type=int, default=0)
    dia.add_argument("--out", type=Path, default=None)
    dia.set_defaults(func=cmd_diagnose)

    exp = sub.add_parser("expectation", help="CSV of exact conditional "
                         "expectations of the exposure components")
    _graph_flags(exp)
    exp.add_argument("--spec", type=Path, required=True)
    exp.add_argument("--rho", type=float, default=None,
                     help="draw the sample with this probability")
    exp.add_argument("--r-file", type=Path, default=None,
                     help="file with one 0/1 sampling indicator per line")
    exp.add_argument("--p", type=float, default=0.5)
    exp.add_argument("--p-file", type=Path, default=None,
                     help="file with one assignment probability per line")
    exp.add_argument("--scheme", choices=list(SCHEMES), default=INDUCED)
    exp.add_argument("--censor-cap", type=int, default=None)
    exp.add_argument("--seed", type=int, default=0)
    exp.add_argument("--out", type=Path, default=None)
    exp.set_defaults(func=cmd_expectation)

    sim = sub.add_parser("simulate", help="replication study over a "
                         "sampling-probability grid")
    sim.add_argument("--config", type=Path, required=True)
    sim.add_argument("--out", type=Path, required=True,
                     help="output directory for report.json / report.csv")
    sim.add_argument("--graph", type=Path, default=None,
                     help="override the graph path in the config")
    sim.add_argument("--workers", type=int, default=None)
    sim.set_defaults(func=cmd_simulate)

    summ = sub.add_parser("summary", help="network summary and sparsity "
                          "diagnostics")
    _graph_flags(summ)
    summ.add_argument("--hac-k", type=int, default=1)
    summ.add_argument("--out", type=Path, default=None)
    summ.set_defaults(func=cmd_summary)
    return parser


def _graph_flags(p):
    p.add_argument("--graph", type=Path, required=True,
                   help="edge-list file (whitespace or comma separated)")
    p.add_argument("--index-base", type=int, choices=[0, 1], default=0)
    p.add_argument("--n", type=int, default=None,
                   help="number of nodes (default: inferred)")


def _data_flags(p):
    p.add_argument("--data", type=Path, required=True,
                   help="CSV with id, y, d and optional r, p, covariates; "
                        "units absent from the file count as unsampled")
    p.add_argument("--spec", type=Path, required=True,
                   help="exposure spec JSON")
    p.add_argument("--rho", type=float, default=None)
    p.add_argument("--estimate-rho", action="store_true",
                   help="use the sampled share N/n instead of a known rho")
    p.add_argument("--p", type=float, default=None)
    p.add_argument("--p-col", default=None)
    p.add_argument("--scheme", choices=list(SCHEMES), default=INDUCED)
    p.add_argument("--censor-cap", type=int, default=None)
    p.add_argument("--covariates", default=None,
                   help="comma-separated extra covariate columns")


def _load_graph(args) -> Network:
    try:
        with open(args.graph, encoding="utf-8") as fh:
            return load_edge_list(fh, n=args.n, one_based=args.index_base == 1)
    except OSError as exc:
        raise UserInputError(f"cannot read graph file: {exc}") from exc


def _load_spec(path: Path) -> ExposureSpec:
    try:
        return spec_from_json(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise UserInputError(f"cannot read exposure spec: {exc}") from exc


def _read_column_file(path: Path, n: int, what: str) -> np.ndarray:
    try:
        values = [float(tok) for tok in path.read_text().split()]
    except (OSError, ValueError) as exc:
        raise UserInputError(f"cannot read {what} file: {exc}") from exc
    if len(values) != n:
        raise UserInputError(f"{what} file has {len(values)} entries, expected {n}")
    return np.asarray(values)


def _parse_cell(row_values, col, lineno, required=True, default=None):
    if col not in row_values or row_values[col] in ("", None):
        if required:
            raise UserInputError(f"missing value for column {col!r} at line {lineno}")
        return default
    try:
        return float(row_values[col])
    except ValueError as exc:
        raise UserInputError(
            f"non-numeric value {row_values[col]!r} in column {col!r} "
            f"at line {lineno}") from exc


def _load_data(args, g: Network):
    """Read the analysis CSV into per-node arrays keyed to graph ids."""
    base = args.index_base
    extra = [c.strip() for c in args.covariates.split(",")] if args.covariates else []
    n = g.n
    y = np.zeros(n)
    r = np.zeros(n, dtype=np.int8)
    d = np.zeros(n, dtype=np.int8)
    p = np.full(n, args.p if args.p is not None else 0.5)
    z_extra = np.zeros((n, len(extra)))
    try:
        fh = open(args.data, newline="", encoding="utf-8")
    except OSError as exc:
        raise UserInputError(f"cannot read data file: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise UserInputError("data file is empty")
        cols = [c.strip() for c in reader.fieldnames]
        for needed in ["id", "y", "d"] + extra + ([args.p_col] if args.p_col else []):
            if needed not in cols:
                raise UserInputError(f"data file lacks required column {needed!r}")
        seen = set()
        for lineno, row in enumerate(reader, start=2):
            row = {k.strip(): (v.strip() if isinstance(v, str) else v)
                   for k, v in row.items()}
            idx = int(_parse_cell(row, "id", lineno)) - base
            if not 0 <= idx < n:
                raise UserInputError(f"id out of range at line {lineno}")
            if idx in seen:
                raise UserInputError(f"duplicate id at line {lineno}")
            seen.add(idx)
            y[idx] = _parse_cell(row, "y", lineno)
            r_val = _parse_cell(row, "r", lineno, required=False, default=1.0) \
                if "r" in cols else 1.0
            r[idx] = int(r_val)
            d[idx] = int(_parse_cell(row, "d", lineno))
            if args.p_col:
                p[idx] = _parse_cell(row, args.p_col, lineno)
            for j, c in enumerate(extra):
                z_extra[idx, j] = _parse_cell(row, c, lineno)
    if args.rho is not None and args.estimate_rho:
        raise UserInputError("pass exactly one of --rho / --estimate-rho")
    return y, r, d, p, z_extra, extra


def _assemble(args, g, spec):
    y, r, d, p, z_extra, extra_names = _load_data(args, g)
    draw = draw_from_observed(g, r, d, scheme=args.scheme,
                              censor_cap=args.censor_cap)
    em = exposure_matrix(spec, draw, g, p)
    covariates, cov_names, notes = assemble_covariates(
        em.cond_mean, r, extra=z_extra if extra_names else None,
        extra_names=extra_names)
    ds = Dataset(y=y, exposures=em.values, covariates=covariates, r=r,
                 cond_mean=em.cond_mean,
                 exposure_names=tuple(f"exposure_{k}" for k in range(spec.d)),
                 covariate_names=cov_names)
    return ds, draw, em, p, notes


def _emit(obj: dict, out: Path | None) -> None:
    text = json.dumps(obj, sort_keys=True, indent=2) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding="utf-8")


def _report_header(args, seed=None) -> dict:
    cfg = {k: (str(v) if isinstance(v, Path) else v)
           for k, v in sorted(vars(args).items()) if k != "func"}
    return {"tool_version": __version__,
            "config_hash": config_hash(cfg),
            "seed": seed if seed is not None else cfg.get("seed")}


def cmd_estimate(args) -> int:
    g = _load_graph(args)
    spec = _load_spec(args.spec)
    ds, draw, em, p, notes = _assemble(args, g, spec)
    rho = args.rho if args.rho is not None else ds.n_sampled / g.n
    rd = residualize(ds)
    res = ols_fit(ds, rd)
    k = args.hac_k if args.hac_k is not None else dependency_radius(spec)
    index = sampled_distances(draw.a_tilde, 2 * k)
    gamma_val = None
    if args.gamma == "tilde":
        gamma_val = gamma_tilde(ds, m=args.gamma_m,
                                rho=None if args.estimate_rho else rho)
    vr_eigen = estimate_variance(ds, rd, res, index, HacSpec(k, "eigen"),
                                 gamma_value=gamma_val)
    vr_plain = estimate_variance(ds, rd, res, index, HacSpec(k, "plain"),
                                 gamma_value=gamma_val)
    chosen = {"ehw": vr_eigen.se_ehw, "plain": vr_plain.se,
              "eigen": vr_eigen.se}[args.variance]
    report = _report_header(args)
    report.update({
        "n": g.n, "n_sampled": ds.n_sampled, "rho": rho, "hac_k": k,
        "theta_hat": res.theta.tolist(),
        "gamma_hat": res.gamma.tolist(),
        "gamma_used": (gamma_val if gamma_val is not None else res.gamma).tolist(),
        "se": _se_list(chosen),
        "se_ehw": _se_list(vr_eigen.se_ehw),
        "se_hac_plain": _se_list(vr_plain.se),
        "se_hac_eigen": _se_list(vr_eigen.se),
        "qxx_condition_number": res.design_condition,
        "variance": args.variance,
        "notes": notes,
    })
    _emit(report, args.out)
    return 0


def _se_list(values) -> list:
    # NaN (negative plain-HAC diagonal) is not valid JSON; emit null
    return [None if not np.isfinite(v) else float(v) for v in np.asarray(values)]


def cmd_diagnose(args) -> int:
    g = _load_graph(args)
    spec = _load_spec(args.spec)
    ds, draw, em, p, notes = _assemble(args, g, spec)
    rd = residualize(ds)
    # (a) do the covariates span the exposure conditional means?
    mask = ds.r.astype(bool)
    z = ds.covariates[mask]
    m = ds.cond_mean[mask]
    coeff, *_ = np.linalg.lstsq(z, m, rcond=None)
    resid = m - z @ coeff
    scale = max(float(np.linalg.norm(m)), 1e-300)
    span_residual = float(np.linalg.norm(resid)) / scale
    # (b) cross-element correlation
    od = overlap_diagnostic(spec, ds.r, draw, p, b=args.b,
                            rng=rng_for(args.seed, 3))
    # (c) sparsity and clipping magnitudes
    k = args.hac_k if args.hac_k is not None else dependency_radius(spec)
    sparsity = sparsity_diagnostics(g, k)
    index = sampled_distances(draw.a_tilde, 2 * k)
    kernel = hac_kernel(index, ds.r, k)
    _, kminus = eigen_clip(kernel.kmat)
    pop_index = build_index(g, 2 * k)
    clip = clip_diagnostics(kminus, kernel.sampled, pop_index, g.n, k)
    # (d) flowchart verdicts
    first_order = max(c.radius for c in spec.components) <= 1
    pop_interpretable = (not od.contaminated) and (
        spec.network_source == "population" or
        (args.scheme == "star" and first_order))
    verdicts = {
        "covariates_span_conditional_means": bool(span_residual <= 1e-8),
        "no_correlation_condition": not od.contaminated,
        "interpretation": ("population-level estimand" if pop_interpretable
                           else "sample-level estimand only"),
        "hac_radius": k,
    }
    report = _report_header(args)
    report.update({
        "n": g.n, "n_sampled": ds.n_sampled,
        "span_residual": span_residual,
        "overlap_covariance": od.covariance.tolist(),
        "overlap_mc_se": od.mc_se.tolist(),
        "overlap_flagged_pairs": [list(pair) for pair in od.flagged],
        "sparsity": sparsity,
        "clip": clip,
        "verdicts": verdicts,
    })
    _emit(report, args.out)
    return 0


def cmd_expectation(args) -> int:
    g = _load_graph(args)
    spec = _load_spec(args.spec)
    if (args.rho is None) == (args.r_file is None):
        raise UserInputError("pass exactly one of --rho / --r-file")
    if args.r_file is not None:
        r = _read_column_file(args.r_file, g.n, "sampling indicator")
        if not np.isin(r, (0.0, 1.0)).all():
            raise UserInputError("sampling indicators must be 0/1")
        r = r.astype(np.int8)
    else:
        if not 0.0 < args.rho <= 1.0:
            raise UserInputError("rho must be in (0, 1]")
        r = (rng_for(args.seed, 0).random(g.n) < args.rho).astype(np.int8)
    p = _read_column_file(args.p_file, g.n, "assignment probability") \
        if args.p_file is not None else np.full(g.n, args.p)
    if np.any((p < 0) | (p > 1)):
        raise UserInputError("assignment probabilities must lie in [0, 1]")
    draw = draw_from_observed(g, r, np.zeros(g.n, dtype=np.int8),
                              scheme=args.scheme, censor_cap=args.censor_cap)
    means = conditional_expectation(spec, r, draw, p, population=g)
    lines = ["id," + ",".join(f"component_{k}" for k in range(spec.d))]
    base = args.index_base
    for i in range(g.n):
        lines.append(f"{i + base}," + ",".join(f"{v:.12g}" for v in means[i]))
    text = "\n".join(lines) + "\n"
    if args.out is None:
        sys.stdout.write(text)
    else:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(text, encoding="utf-8")
    return 0


def cmd_simulate(args) -> int:
    try:
        cfg_obj = json.loads(args.config.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UserInputError(f"cannot read simulation config: {exc}") from exc
    graph_spec = cfg_obj.pop("graph", None)
    index_base = int(cfg_obj.pop("index_base", 0))
    if args.graph is not None:
        graph_spec = str(args.graph)
    if graph_spec is None:
        raise UserInputError("config must name a graph (path or 'synthetic')")
    if isinstance(graph_spec, str) and graph_spec.startswith("synthetic"):
        seed = int(graph_spec.split(":", 1)[1]) if ":" in graph_spec else 7
        g = synthetic_village_graph(seed=seed)
    else:
        with open(graph_spec, encoding="utf-8") as fh:
            g = load_edge_list(fh, one_based=index_base == 1)
    if args.workers is not None:
        cfg_obj["workers"] = args.workers
    config = SimulationConfig.from_json_dict(cfg_obj)
    report = run_simulation(g, config)
    args.out.mkdir(parents=True, exist_ok=True)
    payload = report.to_json_dict()
    payload["tool_version"] = __version__
    payload["graph"] = {"nodes": g.n, "edges": g.edge_count,
                        "source": str(graph_spec)}
    (args.out / "report.json").write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    (args.out / "report.csv").write_text(report.to_csv_text(), encoding="utf-8")
    return 0


def cmd_summary(args) -> int:
    g = _load_graph(args)
    report = _report_header(args)
    report.update(network_summary(g))
    report["sparsity"] = sparsity_diagnostics(g, args.hac_k)
    _emit(report, args.out)
    return 0

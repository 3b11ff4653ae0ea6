"""Command-line pipeline.

Stages (each runnable alone, intermediate files are the contracts)::

    cocite ingest   --nodes N.csv --edges E.csv --out graph.ccg
    cocite pairs    --graph graph.ccg --out pairs.csv
    cocite theta    --graph graph.ccg --pairs pairs.csv --out theta.csv
    cocite fit      --theta theta.csv --out fits.json
    cocite gof      --theta theta.csv --out-dir gof/
    cocite kinetics --graph graph.ccg --pairs theta.csv --out kinetics.csv
    cocite simulate --out-dir corpus/ --n-pubs 10000
    cocite pipeline --nodes N.csv --edges E.csv --out-dir run/

Exit codes: 0 ok, 1 usage, 2 data error, 3 numerical failure. Defaults can
be overridden with ``COCITE_<FLAG>`` environment variables (for example
``COCITE_SEED``, ``COCITE_WORKERS``).
"""
from __future__ import annotations

import argparse
import contextlib
import datetime as _dt
import json
import logging
import os
import platform
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .copair import (PairStats, build_highly_cited, cocited_pairs, connectedness_by_percentile,
                     frequency_quantiles)
from .distfit import ConvergenceError, FitError, NonIdentifiableError, fit_lognormal, fit_powerlaw, tail_restrict
from .gof import (DEFAULT_E_MINS, DEFAULT_THETA_EDGES, fit_grid, independence_test, stratify,
                  theta_bin_index)
from .graph_store import GraphError, ingest_graph, load_snapshot, save_snapshot
from .kinetics import kinetics_row
from .reports import (FITS_SCHEMA, clean, read_pairs, write_csv, write_grid, write_json,
                      write_kinetics, write_pairs, write_theta)
from .synth import gen_citation_corpus
from .theta import theta_batch

logger = logging.getLogger("cocite")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
ENV_PREFIX = "COCITE_"


class StageError(Exception):
    def __init__(self, stage: str, message: str, code: int):
        super().__init__(f"[{stage}] {message}")
        self.stage, self.code = stage, code


@dataclass
class RunConfig:
    nodes: str | None = None
    edges: str | None = None
    out_dir: str = "cocite-run"
    min_frequency: int = 10
    cutoff: float = 0.99
    min_refs: int = 5
    citing_years: tuple | None = None
    x_min_values: tuple = (10, 20, 50, 100, 200)
    theta_edges: tuple = DEFAULT_THETA_EDGES
    e_mins: tuple = DEFAULT_E_MINS
    ks_replicates: int = 100
    ks_variant: str = "two-sample"
    min_obs: int = 20
    batch_size: int = 50
    seed: int = 0
    workers: int = 1

    def validate(self):
        for name in ("x_min_values", "theta_edges", "e_mins"):
            if not getattr(self, name):
                raise StageError("config", f"{name} must not be empty", EXIT_USAGE)
        if self.min_frequency < 1:
            raise StageError("config", "min_frequency must be >= 1", EXIT_USAGE)
        if not 0 < self.cutoff < 1:
            raise StageError("config", "cutoff must lie in (0, 1)", EXIT_USAGE)
        if list(self.theta_edges) != sorted(self.theta_edges):
            raise StageError("config", "theta edges must be increasing", EXIT_USAGE)


# -- helpers ---------------------------------------------------------------


@contextlib.contextmanager
def staged_output(path):
    """Yield a ``.partial`` path that is renamed to ``path`` on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    partial = path.with_name(path.name + ".partial")
    yield partial
    os.replace(partial, path)


@contextlib.contextmanager
def stage(name: str):
    try:
        yield
    except StageError:
        raise
    except (NonIdentifiableError, ConvergenceError, FitError, FloatingPointError) as e:
        raise StageError(name, f"numerical failure: {e}", EXIT_NUMERIC) from e
    except (GraphError, ValueError, KeyError, OSError) as e:
        raise StageError(name, f"data error: {e}", EXIT_DATA) from e


def _env(name, default, cast=str):
    raw = os.environ.get(ENV_PREFIX + name.upper())
    if raw is None:
        return default
    if cast in (list, tuple):
        return raw
    return cast(raw)


def versions() -> dict:
    return {"cocite": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


# -- stages ----------------------------------------------------------------


def run_ingest(nodes, edges, out, delimiter=None, header=None) -> dict:
    with stage("ingest"):
        g, stats = ingest_graph(nodes, edges, delimiter=delimiter, header=header)
        with staged_output(out) as tmp:
            save_snapshot(g, tmp)
    return {"graph": g, "stats": stats.to_dict()}


def run_pairs(graph_path, out, cfg: RunConfig) -> dict:
    with stage("pairs"):
        g = load_snapshot(graph_path)
        hcs = build_highly_cited(g, cfg.cutoff)
        years = tuple(cfg.citing_years) if cfg.citing_years else (float("-inf"), float("inf"))
        stats = PairStats()
        pairs = cocited_pairs(g, hcs, years, cfg.min_refs, workers=cfg.workers, stats=stats)
        with staged_output(out) as tmp:
            write_pairs(tmp, pairs.values())
    return {"highly_cited": len(hcs), "pairs": len(pairs), "emitted": stats.emitted,
            "inconsistent_years": stats.inconsistent_years}


def run_theta(graph_path, pairs_path, out, cfg: RunConfig) -> dict:
    with stage("theta"):
        g = load_snapshot(graph_path)
        pairs = [p for p in read_pairs(pairs_path) if p.frequency >= cfg.min_frequency]
        results = theta_batch(g, pairs, cfg.batch_size, cfg.workers)
        with staged_output(out) as tmp:
            write_theta(tmp, pairs, results)
    n_def = sum(r.defined for r in results)
    return {"pairs": len(pairs), "defined": n_def, "undefined": len(pairs) - n_def,
            "clamped": sum(r.clamped for r in results)}


def run_fit(theta_path, out, cfg: RunConfig) -> dict:
    """Fit both families in each stratum; no tests."""
    with stage("fit"):
        pairs = read_pairs(theta_path)
        strata, undefined = stratify(pairs, cfg.theta_edges, True)
        reports = []
        for (b, conn) in sorted(strata, key=lambda k: (k[0], not k[1])):
            freqs = strata[(b, conn)]
            for x_min in cfg.x_min_values:
                entry = {"theta_bin": [cfg.theta_edges[b], cfg.theta_edges[b + 1]],
                         "connected": conn, "x_min": x_min, "fits": []}
                try:
                    t = tail_restrict(freqs, x_min)
                except FitError:
                    entry["n_obs"] = 0
                    reports.append(entry)
                    continue
                entry["n_obs"] = t.total
                for fitter in (fit_powerlaw, fit_lognormal):
                    try:
                        entry["fits"].append(fitter(t).to_dict())
                    except ConvergenceError as e:
                        if e.best is not None:
                            entry["fits"].append(e.best.to_dict())
                    except NonIdentifiableError as e:
                        entry["fits"].append({"family": fitter.__name__[4:], "error": str(e)})
                reports.append(entry)
        with staged_output(out) as tmp:
            write_json(tmp, clean({"schema": FITS_SCHEMA, "undefined_theta": undefined,
                                   "cells": reports}))
    return {"cells": len(reports), "undefined_theta": undefined}


def run_gof(theta_path, out_dir, cfg: RunConfig) -> dict:
    with stage("gof"):
        pairs = read_pairs(theta_path)
        out_dir = Path(out_dir)
        cells = fit_grid(pairs, cfg.theta_edges, cfg.x_min_values, True, cfg.e_mins,
                         cfg.ks_replicates, cfg.seed, cfg.min_obs, cfg.workers, cfg.ks_variant)
        indep = independence_test(pairs, cfg.theta_edges)
        with staged_output(out_dir / "grid.json") as tj, staged_output(out_dir / "grid.csv") as tc:
            write_grid(tj, tc, cells, cfg.e_mins)
        with staged_output(out_dir / "independence.json") as ti:
            write_json(ti, clean({"schema": "cocite.independence/1", **indep.to_dict()}))
    verdicts = {}
    for c in cells:
        verdicts[c.verdict] = verdicts.get(c.verdict, 0) + 1
    return {"cells": len(cells), "verdicts": verdicts, "independence_p": indep.p_value}


def run_kinetics(graph_path, pairs_path, out, cfg: RunConfig) -> dict:
    with stage("kinetics"):
        g = load_snapshot(graph_path)
        pairs = [p for p in read_pairs(pairs_path) if p.frequency >= cfg.min_frequency]
        rows = [kinetics_row(g, p.x, p.y, p.connected) for p in pairs]
        with staged_output(out) as tmp:
            write_kinetics(tmp, rows)
    return {"pairs": len(rows), "dropped_citers": sum(r["dropped"] for r in rows)}


def write_plot_data(out_dir, theta_path, cfg: RunConfig) -> None:
    """CSV tables behind the frequency, connectedness and theta figures."""
    pairs = read_pairs(theta_path)
    plots = Path(out_dir)
    plots.mkdir(parents=True, exist_ok=True)
    if not pairs:
        return
    probs = [round(0.01 * i, 2) for i in range(1, 100)] + [0.999]
    qs = frequency_quantiles(pairs, probs)
    write_csv(plots / "frequency_quantiles.csv", "cocite.plot.quantiles/1", ["prob", "frequency"],
              ({"prob": p, "frequency": q} for p, q in zip(probs, qs)))
    write_csv(plots / "connectedness_by_percentile.csv", "cocite.plot.connectedness/1",
              ["percentile_bin", "n_pairs", "min_frequency", "max_frequency", "connected_share"],
              connectedness_by_percentile(pairs, 100))
    counts: dict[int, int] = {}
    for p in pairs:
        b = theta_bin_index(p.theta, cfg.theta_edges) if p.theta is not None else None
        if b is not None:
            counts[b] = counts.get(b, 0) + 1
    write_csv(plots / "theta_interval_counts.csv", "cocite.plot.theta-counts/1",
              ["theta_lo", "theta_hi", "n_pairs"],
              ({"theta_lo": cfg.theta_edges[b], "theta_hi": cfg.theta_edges[b + 1],
                "n_pairs": counts.get(b, 0)} for b in range(len(cfg.theta_edges) - 1)))
    # number of pairs at each frequency, per stratum (log-log tail plots)
    strata, _ = stratify(pairs, cfg.theta_edges, True)
    rows = []
    for (b, conn) in sorted(strata, key=lambda k: (k[0], not k[1])):
        values, mult = np.unique(strata[(b, conn)], return_counts=True)
        rows += [{"theta_lo": cfg.theta_edges[b], "theta_hi": cfg.theta_edges[b + 1],
                  "connected": conn, "frequency": int(v), "n_pairs": int(m)}
                 for v, m in zip(values, mult)]
    write_csv(plots / "tail_counts.csv", "cocite.plot.tail-counts/1",
              ["theta_lo", "theta_hi", "connected", "frequency", "n_pairs"], rows)


def run_pipeline(cfg: RunConfig, simulate: dict | None = None) -> dict:
    cfg.validate()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    counts: dict = {}
    if simulate:
        with stage("simulate"):
            corpus = gen_citation_corpus(seed=cfg.seed, **simulate)
            corpus.write(out / "corpus")
        cfg.nodes, cfg.edges = str(out / "corpus" / "nodes.csv"), str(out / "corpus" / "edges.csv")
        counts["simulate"] = corpus.spec
    if not cfg.nodes or not cfg.edges:
        raise StageError("pipeline", "--nodes and --edges are required", EXIT_USAGE)
    graph = out / "graph.ccg"
    counts["ingest"] = run_ingest(cfg.nodes, cfg.edges, graph)["stats"]
    counts["pairs"] = run_pairs(graph, out / "pairs.csv", cfg)
    counts["theta"] = run_theta(graph, out / "pairs.csv", out / "theta.csv", cfg)
    counts["fit"] = run_fit(out / "theta.csv", out / "fits.json", cfg)
    counts["gof"] = run_gof(out / "theta.csv", out, cfg)
    counts["kinetics"] = run_kinetics(graph, out / "theta.csv", out / "kinetics.csv", cfg)
    with stage("plots"):
        write_plot_data(out / "plots", out / "theta.csv", cfg)
    manifest = {"schema": "cocite.manifest/1", "config": clean(asdict(cfg)),
                "versions": versions(), "counts": clean(counts),
                "created": _dt.datetime.now(_dt.timezone.utc).isoformat()}
    write_json(out / "manifest.json", manifest)
    return manifest


# -- argument parsing ------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(s):
    return tuple(float(v) for v in str(s).replace(",", " ").split())


def _ints(s):
    return tuple(int(v) for v in str(s).replace(",", " ").split())


def _add_run_flags(p, *, fit=False, pairs=False):
    p.add_argument("--min-frequency", type=int, default=_env("min_frequency", 10, int))
    if pairs:
        p.add_argument("--cutoff", type=float, default=_env("cutoff", 0.99, float),
                       help="within-year percentile for the highly-cited set")
        p.add_argument("--min-refs", type=int, default=_env("min_refs", 5, int))
        p.add_argument("--citing-years", type=int, nargs=2, metavar=("FIRST", "LAST"),
                       default=None)
        p.add_argument("--batch-size", type=int, default=_env("batch_size", 50, int))
    if fit:
        p.add_argument("--x-min", type=_ints, default=_env("x_min", "10 20 50 100 200", _ints),
                       help="tail starts, e.g. '10,20,50'")
        p.add_argument("--theta-edges", type=_floats,
                       default=_env("theta_edges", "0 0.2 0.4 0.6 0.8 1.0", _floats))
        p.add_argument("--e-min", type=_ints, default=_env("e_min", "10 20 50 70", _ints),
                       help="chi-square minimum expected counts")
        p.add_argument("--ks-replicates", type=int, default=_env("ks_replicates", 100, int))
        p.add_argument("--ks-variant", choices=("two-sample", "classical"),
                       default=_env("ks_variant", "two-sample"))
        p.add_argument("--min-obs", type=int, default=_env("min_obs", 20, int))


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cocite", description=__doc__.split("\n\n")[0])
    p.add_argument("--seed", type=int, default=_env("seed", 0, int))
    p.add_argument("--workers", type=int, default=_env("workers", 1, int))
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.add_argument("--version", action="version", version=f"cocite {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("ingest", help="CSV/TSV tables to a graph snapshot")
    s.add_argument("--nodes", required=True)
    s.add_argument("--edges", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--delimiter")
    hdr = s.add_mutually_exclusive_group()
    hdr.add_argument("--header", dest="header", action="store_true", default=None)
    hdr.add_argument("--no-header", dest="header", action="store_false")

    s = sub.add_parser("pairs", help="co-cited pairs of highly cited publications")
    s.add_argument("--graph", required=True)
    s.add_argument("--out", required=True)
    _add_run_flags(s, pairs=True)

    s = sub.add_parser("theta", help="theta for pairs at or above --min-frequency")
    s.add_argument("--graph", required=True)
    s.add_argument("--pairs", required=True)
    s.add_argument("--out", required=True)
    _add_run_flags(s, pairs=True)

    s = sub.add_parser("fit", help="stratified power-law and lognormal fits")
    s.add_argument("--theta", required=True)
    s.add_argument("--out", required=True)
    _add_run_flags(s, fit=True)

    s = sub.add_parser("gof", help="goodness-of-fit grid and independence test")
    s.add_argument("--theta", required=True)
    s.add_argument("--out-dir", required=True)
    _add_run_flags(s, fit=True)

    s = sub.add_parser("kinetics", help="beauty coefficient and timelag per pair")
    s.add_argument("--graph", required=True)
    s.add_argument("--pairs", required=True)
    s.add_argument("--out", required=True)
    _add_run_flags(s)

    s = sub.add_parser("simulate", help="write a synthetic preferential-attachment corpus")
    s.add_argument("--out-dir", required=True)
    _add_sim_flags(s)

    s = sub.add_parser("pipeline", help="run every stage end to end")
    s.add_argument("--nodes")
    s.add_argument("--edges")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--simulate", action="store_true",
                   help="generate a synthetic corpus instead of reading --nodes/--edges")
    _add_sim_flags(s)
    _add_run_flags(s, fit=True, pairs=True)
    return p


def _add_sim_flags(s):
    s.add_argument("--n-pubs", type=int, default=_env("n_pubs", 10000, int))
    s.add_argument("--years", type=int, nargs=2, default=(1960, 1995), metavar=("FIRST", "LAST"))
    s.add_argument("--attach-exponent", type=float, default=_env("attach_exponent", 1.0, float))
    s.add_argument("--extra-refs-mean", type=float, default=10.0)


def config_from_args(a) -> RunConfig:
    cfg = RunConfig(seed=a.seed, workers=a.workers)
    for name in ("min_frequency", "cutoff", "min_refs", "batch_size", "ks_replicates",
                 "ks_variant", "min_obs"):
        if hasattr(a, name):
            setattr(cfg, name, getattr(a, name))
    if getattr(a, "citing_years", None):
        cfg.citing_years = tuple(a.citing_years)
    if hasattr(a, "x_min"):
        cfg.x_min_values, cfg.theta_edges, cfg.e_mins = a.x_min, a.theta_edges, a.e_min
    for name in ("nodes", "edges", "out_dir"):
        if getattr(a, name, None):
            setattr(cfg, name, getattr(a, name))
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    a = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(a.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = config_from_args(a)
    try:
        cfg.validate()
        if a.command == "ingest":
            result = run_ingest(a.nodes, a.edges, a.out, a.delimiter, a.header)["stats"]
        elif a.command == "pairs":
            result = run_pairs(a.graph, a.out, cfg)
        elif a.command == "theta":
            result = run_theta(a.graph, a.pairs, a.out, cfg)
        elif a.command == "fit":
            result = run_fit(a.theta, a.out, cfg)
        elif a.command == "gof":
            result = run_gof(a.theta, a.out_dir, cfg)
        elif a.command == "kinetics":
            result = run_kinetics(a.graph, a.pairs, a.out, cfg)
        elif a.command == "simulate":
            with stage("simulate"):
                corpus = gen_citation_corpus(a.n_pubs, tuple(a.years), a.attach_exponent,
                                             a.seed, extra_refs_mean=a.extra_refs_mean)
                result = corpus.write(a.out_dir)
        else:
            sim = None
            if a.simulate:
                sim = {"n_pubs": a.n_pubs, "years": tuple(a.years),
                       "attach_exponent": a.attach_exponent, "extra_refs_mean": a.extra_refs_mean}
            result = run_pipeline(cfg, sim)["counts"]
    except StageError as e:
        print(f"cocite: {e}", file=sys.stderr)
        return e.code
    print(json.dumps(clean(result), sort_keys=True, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

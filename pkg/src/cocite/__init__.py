"""Co-citation probability, heavy-tail fitting and co-citation kinetics."""
from __future__ import annotations

__version__ = "0.1.0"

from .graph_store import CitationGraph, IngestStats, build_graph, ingest_graph, load_snapshot, save_snapshot
from .copair import CoPair, build_highly_cited, cocited_pairs
from .theta import ThetaResult, compute_theta, theta_batch
from .distfit import (LognormalFit, PowerLawFit, TailSample, fit_lognormal, fit_powerlaw,
                      hurwitz_zeta, tail_restrict)
from .gof import build_bins, chi2_test, fit_grid, independence_test, kl_divergence, ks_test
from .kinetics import beauty_coefficient, cocitation_timeline, timelag
from .synth import SynthSpec, gen_citation_corpus, sample_discrete

__all__ = [
    "CitationGraph", "IngestStats", "build_graph", "ingest_graph", "load_snapshot", "save_snapshot",
    "CoPair", "build_highly_cited", "cocited_pairs",
    "ThetaResult", "compute_theta", "theta_batch",
    "LognormalFit", "PowerLawFit", "TailSample", "fit_lognormal", "fit_powerlaw", "hurwitz_zeta",
    "tail_restrict",
    "build_bins", "chi2_test", "fit_grid", "independence_test", "kl_divergence", "ks_test",
    "beauty_coefficient", "cocitation_timeline", "timelag",
    "SynthSpec", "gen_citation_corpus", "sample_discrete",
]

"""Immutable directed citation graph with year attributes.

Publications are opaque string ids. The graph keeps both adjacency
directions (``out``: references, ``in``: citers) as frozensets so it can be
shared read-only between threads and worker processes.
"""
from __future__ import annotations

import csv
import gzip
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping

logger = logging.getLogger(__name__)

YEAR_MIN = 1500
YEAR_MAX = 2100

SNAPSHOT_MAGIC = b"COCITEG\x00"
SNAPSHOT_VERSION = 1

_EMPTY: frozenset = frozenset()


class GraphError(Exception):
    """Base class for graph errors."""


class IngestError(GraphError):
    """Raised when an input source cannot be parsed."""

    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        self.line = line
        self.source = source
        where = ""
        if source is not None:
            where += f"{source}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)


class NodeNotFound(GraphError, KeyError):
    def __str__(self):
        return f"unknown publication id {self.args[0]!r}"


@dataclass(frozen=True)
class Publication:
    id: str
    year: int


@dataclass
class IngestStats:
    n_nodes: int = 0
    n_edges: int = 0
    dropped_unknown: int = 0
    dropped_self_loops: int = 0
    duplicate_edges: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


class CitationGraph:
    """Read-only citation graph.

    Parameters
    ----------
    years : mapping of id -> year
    out_edges : mapping of id -> iterable of cited ids

    The constructor trusts its input; use :func:`ingest_graph` or
    :meth:`from_edges` for validated construction.
    """

    __slots__ = ("_years", "_out", "_in", "_n_edges")

    def __init__(self, years: Mapping[str, int], out_edges: Mapping[str, Iterable[str]]):
        self._years = MappingProxyType(dict(years))
        out: dict[str, frozenset] = {}
        inc: dict[str, set] = {}
        n = 0
        for src, dsts in out_edges.items():
            fs = frozenset(dsts)
            if not fs:
                continue
            out[src] = fs
            n += len(fs)
            for d in fs:
                inc.setdefault(d, set()).add(src)
        self._out = MappingProxyType(out)
        self._in = MappingProxyType({k: frozenset(v) for k, v in inc.items()})
        self._n_edges = n

    @classmethod
    def from_edges(cls, nodes: Iterable[tuple[str, int]], edges: Iterable[tuple[str, str]]) -> "CitationGraph":
        g, _ = build_graph(nodes, edges)
        return g

    # -- queries ---------------------------------------------------------

    def __contains__(self, pid) -> bool:
        return pid in self._years

    def __len__(self) -> int:
        return len(self._years)

    @property
    def n_nodes(self) -> int:
        return len(self._years)

    @property
    def n_edges(self) -> int:
        return self._n_edges

    @property
    def years(self) -> Mapping[str, int]:
        return self._years

    def nodes(self) -> list[str]:
        return sorted(self._years)

    def edges(self):
        """Yield (citing, cited) pairs in sorted order."""
        for src in sorted(self._out):
            for dst in sorted(self._out[src]):
                yield src, dst

    def year_of(self, pid: str) -> int:
        try:
            return self._years[pid]
        except KeyError:
            raise NodeNotFound(pid) from None

    def references(self, pid: str) -> frozenset:
        if pid not in self._years:
            raise NodeNotFound(pid)
        return self._out.get(pid, _EMPTY)

    def citers(self, pid: str) -> frozenset:
        if pid not in self._years:
            raise NodeNotFound(pid)
        return self._in.get(pid, _EMPTY)

    def neighbors(self, pid: str, direction: str = "out") -> frozenset:
        if direction == "out":
            return self.references(pid)
        if direction == "in":
            return self.citers(pid)
        raise ValueError(f"direction must be 'out' or 'in', got {direction!r}")

    def in_degree(self, pid: str) -> int:
        return len(self.citers(pid))

    def cites(self, a: str, b: str) -> bool:
        return b in self._out.get(a, _EMPTY)

    def __eq__(self, other) -> bool:
        if not isinstance(other, CitationGraph):
            return NotImplemented
        return dict(self._years) == dict(other._years) and dict(self._out) == dict(other._out)

    def __repr__(self) -> str:
        return f"CitationGraph(n_nodes={self.n_nodes}, n_edges={self.n_edges})"

    # the mapping proxies do not pickle; ship plain dicts to worker processes
    def __getstate__(self):
        return {"years": dict(self._years), "out": {k: tuple(v) for k, v in self._out.items()}}

    def __setstate__(self, state):
        self.__init__(state["years"], state["out"])


def neighbors(g: CitationGraph, pid: str, direction: str = "out") -> frozenset:
    return g.neighbors(pid, direction)


def year_of(g: CitationGraph, pid: str) -> int:
    return g.year_of(pid)


def build_graph(nodes: Iterable[tuple[str, int]], edges: Iterable[tuple[str, str]]):
    """Build a graph from in-memory records, applying the ingestion rules.

    Returns ``(graph, stats)``. Unknown endpoints and self-loops are dropped
    and counted, duplicate edges are collapsed.
    """
    years: dict[str, int] = {}
    for pid, year in nodes:
        pid = str(pid)
        if pid in years:
            raise IngestError(f"duplicate publication id {pid!r}")
        year = int(year)
        if not YEAR_MIN <= year <= YEAR_MAX:
            raise IngestError(f"year {year} outside [{YEAR_MIN}, {YEAR_MAX}] for {pid!r}")
        years[pid] = year
    if not years:
        raise IngestError("node source is empty")

    stats = IngestStats(n_nodes=len(years))
    out: dict[str, set] = {}
    for src, dst in edges:
        src, dst = str(src), str(dst)
        if src == dst:
            stats.dropped_self_loops += 1
            continue
        if src not in years or dst not in years:
            stats.dropped_unknown += 1
            continue
        refs = out.setdefault(src, set())
        if dst in refs:
            stats.duplicate_edges += 1
            continue
        refs.add(dst)
    g = CitationGraph(years, out)
    stats.n_edges = g.n_edges
    return g, stats


# -- file ingestion --------------------------------------------------------


def _sniff_delimiter(first_line: str) -> str:
    if "\t" in first_line:
        return "\t"
    if "," in first_line:
        return ","
    if ";" in first_line:
        return ";"
    return ","


def _read_rows(stream, name: str, delimiter: str | None, header: bool | None, kind: str):
    """Parse a two-column text source.

    Returns ``(rows, header_used)`` where rows are ``(line_number, a, b)``.
    """
    rows = []
    delim = delimiter
    first = True
    for lineno, raw in enumerate(stream, start=1):
        if not raw.strip() or raw.lstrip().startswith("#"):
            continue
        if delim is None:
            delim = _sniff_delimiter(raw)
        row = [c.strip() for c in next(csv.reader([raw], delimiter=delim))]
        if len(row) != 2 or not row[0] or not row[1]:
            raise IngestError(f"expected 2 non-empty columns, got {len(row)}", lineno, name)
        if first:
            first = False
            if header is None:
                # ids are opaque, so only a node file's year column can reveal a header
                header = kind == "nodes" and not _is_int(row[1])
            if header:
                continue
        rows.append((lineno, row[0], row[1]))
    return rows, bool(header)


def _is_int(s: str) -> bool:
    try:
        int(s)
    except ValueError:
        return False
    return True


def _read_source(source, delimiter, header, kind):
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8", newline="") as fh:
            return _read_rows(fh, str(source), delimiter, header, kind)
    return _read_rows(source, getattr(source, "name", "<stream>"), delimiter, header, kind)


def ingest_graph(nodes_source, edges_source, *, delimiter: str | None = None,
                 header: bool | None = None):
    """Read node and edge tables into a :class:`CitationGraph`.

    Parameters
    ----------
    nodes_source, edges_source : path or text stream
        Two-column CSV/TSV: ``(id, year)`` and ``(citing_id, cited_id)``.
        Blank lines and lines starting with ``#`` are skipped.
    delimiter : str, optional
        Column separator; sniffed from the first data line when omitted.
    header : bool, optional
        Whether the first row of each file is a header. When omitted it is
        detected from the node file (non-integer year field) and the edge
        file is assumed to follow the same convention.

    Returns
    -------
    (CitationGraph, IngestStats)
    """
    name = str(nodes_source) if isinstance(nodes_source, (str, Path)) else "<nodes>"
    rows, had_header = _read_source(nodes_source, delimiter, header, "nodes")
    nodes = []
    seen = set()
    for lineno, pid, year in rows:
        if not _is_int(year):
            raise IngestError(f"year {year!r} is not an integer", lineno, name)
        y = int(year)
        if not YEAR_MIN <= y <= YEAR_MAX:
            raise IngestError(f"year {y} outside [{YEAR_MIN}, {YEAR_MAX}]", lineno, name)
        if pid in seen:
            raise IngestError(f"duplicate publication id {pid!r}", lineno, name)
        seen.add(pid)
        nodes.append((pid, y))
    if not nodes:
        raise IngestError("node source is empty", None, name)

    erows, _ = _read_source(edges_source, delimiter, had_header if header is None else header, "edges")
    g, stats = build_graph(nodes, ((a, b) for _, a, b in erows))
    logger.info("ingested %d nodes, %d edges (dropped %d unknown, %d self-loops, %d duplicates)",
                stats.n_nodes, stats.n_edges, stats.dropped_unknown, stats.dropped_self_loops,
                stats.duplicate_edges)
    return g, stats


def write_graph_csv(g: CitationGraph, nodes_path, edges_path, delimiter: str = ",") -> None:
    with open(nodes_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(["id", "year"])
        for pid in g.nodes():
            w.writerow([pid, g.year_of(pid)])
    with open(edges_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(["citing_id", "cited_id"])
        for a, b in g.edges():
            w.writerow([a, b])


# -- binary snapshot -------------------------------------------------------
# Layout: 8-byte magic, 2-byte little-endian version, then a gzip member
# holding JSON {"ids": [...], "years": [...], "src": [...], "dst": [...]},
# edge endpoints as indexes into ids (sorted order).


def save_snapshot(g: CitationGraph, path) -> None:
    ids = g.nodes()
    index = {pid: i for i, pid in enumerate(ids)}
    src, dst = [], []
    for a, b in g.edges():
        src.append(index[a])
        dst.append(index[b])
    payload = json.dumps({"ids": ids, "years": [g.year_of(i) for i in ids], "src": src, "dst": dst},
                         separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(SNAPSHOT_VERSION.to_bytes(2, "little"))
        # name and mtime pinned so snapshots are byte-reproducible
        with gzip.GzipFile(filename="", fileobj=fh, mode="wb", mtime=0) as gz:
            gz.write(payload)


def load_snapshot(path) -> CitationGraph:
    with open(path, "rb") as fh:
        magic = fh.read(len(SNAPSHOT_MAGIC))
        if magic != SNAPSHOT_MAGIC:
            raise IngestError("not a graph snapshot (bad magic)", None, str(path))
        version = int.from_bytes(fh.read(2), "little")
        if version != SNAPSHOT_VERSION:
            raise IngestError(f"unsupported snapshot version {version}", None, str(path))
        with gzip.GzipFile(fileobj=fh, mode="rb") as gz:
            data = json.loads(gz.read().decode("utf-8"))
    ids = data["ids"]
    out: dict[str, list] = {}
    for s, d in zip(data["src"], data["dst"]):
        out.setdefault(ids[s], []).append(ids[d])
    return CitationGraph(dict(zip(ids, data["years"])), out)

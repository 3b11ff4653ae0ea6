"""Readers and writers for the pipeline's intermediate files.

Every CSV starts with a ``# schema: <name>/<version>`` comment line; JSON
reports carry a ``schema`` field.
"""
from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

from .copair import CoPair
from .theta import ThetaResult

PAIRS_SCHEMA = "cocite.pairs/1"
THETA_SCHEMA = "cocite.theta/1"
GRID_SCHEMA = "cocite.grid/1"
KINETICS_SCHEMA = "cocite.kinetics/1"
FITS_SCHEMA = "cocite.fits/1"

PAIR_COLUMNS = ["x", "y", "frequency", "connected", "first_year"]
THETA_COLUMNS = PAIR_COLUMNS + ["theta", "raw_theta", "edge_count", "nx_size", "ny_size",
                                "clamped", "status"]
KINETICS_COLUMNS = ["x", "y", "t0", "c0", "t_peak", "B", "t_l", "frequency", "connected"]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        if math.isnan(v):
            return ""
        return repr(v)
    return str(v)


def _bool(s: str) -> bool:
    return s.strip().lower() in ("1", "true", "yes")


def write_csv(path, schema: str, columns: Sequence[str], rows: Iterable[dict]) -> None:
    buf = io.StringIO()
    buf.write(f"# schema: {schema}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row.get(c)) for c in columns])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_csv(path, schema_prefix: str | None = None) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        first = fh.readline()
        if not first.startswith("# schema:"):
            fh.seek(0)
        elif schema_prefix and not first.split(":", 1)[1].strip().startswith(schema_prefix):
            raise ValueError(f"{path}: expected schema {schema_prefix}, found {first.strip()}")
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n",
                          encoding="utf-8")


def pair_row(p: CoPair) -> dict:
    return {"x": p.x, "y": p.y, "frequency": p.frequency, "connected": p.connected,
            "first_year": p.first_year}


def write_pairs(path, pairs: Iterable[CoPair]) -> None:
    write_csv(path, PAIRS_SCHEMA, PAIR_COLUMNS, (pair_row(p) for p in pairs))


def read_pairs(path) -> list[CoPair]:
    """Read a pairs or theta CSV; theta is attached when present."""
    out = []
    for r in read_csv(path, "cocite."):
        theta = r.get("theta")
        out.append(CoPair(r["x"], r["y"], int(r["frequency"]), _bool(r["connected"]),
                          int(r["first_year"]), float(theta) if theta else None))
    return out


def theta_row(p: CoPair, res: ThetaResult) -> dict:
    row = pair_row(p)
    row.update({"theta": res.theta, "raw_theta": res.raw_theta, "edge_count": res.edge_count,
                "nx_size": res.nx_size, "ny_size": res.ny_size,
                "clamped": res.clamped if res.defined else None, "status": res.status})
    return row


def write_theta(path, pairs: Sequence[CoPair], results: Sequence[ThetaResult]) -> None:
    write_csv(path, THETA_SCHEMA, THETA_COLUMNS, (theta_row(p, r) for p, r in zip(pairs, results)))


def write_kinetics(path, rows: Iterable[dict]) -> None:
    write_csv(path, KINETICS_SCHEMA, KINETICS_COLUMNS, rows)


def _clean(obj):
    """Make a report JSON-safe: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if hasattr(obj, "item") and not isinstance(obj, (str, bytes)):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return "nan" if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj


def grid_rows(cells) -> list[dict]:
    """Flatten grid cells to one row per (cell, family) for plotting."""
    rows = []
    for c in cells:
        base = {"theta_lo": c.theta_bin[0], "theta_hi": c.theta_bin[1], "x_min": c.x_min,
                "connected": c.connected, "n_obs": c.n_obs, "verdict": c.verdict}
        if not c.results:
            rows.append({**base, "family": ""})
            continue
        for fam, res in c.results.items():
            row = {**base, "family": fam, "fits": res.get("fits"),
                   "alpha": res.get("params", {}).get("alpha"),
                   "mu": res.get("params", {}).get("mu"),
                   "sigma": res.get("params", {}).get("sigma"),
                   "loglik": res.get("loglik"), "ks_p": res.get("ks_p"),
                   "kl_fo_fd": res.get("kl_fo_fd"), "kl_fd_fo": res.get("kl_fd_fo")}
            for e, chi in res.get("chi2", {}).items():
                row[f"chi2_p_{e}"] = chi["p_value"]
            rows.append(row)
    return rows


def write_grid(json_path, csv_path, cells, e_mins, extra: dict | None = None) -> None:
    doc = {"schema": GRID_SCHEMA, "cells": [_clean(c.to_dict()) for c in cells]}
    if extra:
        doc.update(_clean(extra))
    write_json(json_path, doc)
    columns = ["theta_lo", "theta_hi", "x_min", "connected", "n_obs", "verdict", "family", "fits",
               "alpha", "mu", "sigma", "loglik", "ks_p"] + [f"chi2_p_{e}" for e in e_mins] + \
              ["kl_fo_fd", "kl_fd_fo"]
    write_csv(csv_path, GRID_SCHEMA, columns, grid_rows(cells))


def clean(obj):
    return _clean(obj)

"""Tab-delimited file formats.

Count matrix: ``gene_id`` then one column per sample named
``t<time index>_r<replicate>``.  A metadata sidecar with columns
``column_name, time_value, condition, replicate`` carries the time structure.
Every file written here starts with ``#`` comment lines recording the tool
version and the resolved configuration; readers skip them.
"""
from __future__ import annotations

import json
import math
import re
from pathlib import Path

import numpy as np

from . import __version__
from .errors import GmnbError, StructureError, ValidationError
from .model import CountTensor

_COL = re.compile(r"^t(\d+)_r(\d+)$")


class IOFailure(GmnbError, OSError):
    code = "io"
    exit_code = 4


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        return repr(x)
    return str(x)


def header_lines(config: dict | None) -> list[str]:
    lines = [f"# gmnb {__version__}"]
    if config is not None:
        lines.append("# config: " + json.dumps(config, sort_keys=True, default=_json_default))
        if "seed" in config:
            lines.append(f"# seed: {config['seed']}")
    return lines


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    return str(o)


def write_table(path, columns: list[str], rows, config: dict | None = None):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for line in header_lines(config):
                fh.write(line + "\n")
            fh.write("\t".join(columns) + "\n")
            for row in rows:
                if isinstance(row, dict):
                    row = [row[c] for c in columns]
                fh.write("\t".join(_fmt(v) for v in row) + "\n")
    except OSError as exc:
        raise IOFailure(f"cannot write {path}: {exc}") from exc


def read_table(path) -> tuple[list[str], list[list[str]], dict | None]:
    """Header, rows (as strings) and the embedded config, if any."""
    path = Path(path)
    config = None
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise IOFailure(f"cannot read {path}: {exc}") from exc
    body = []
    for line in lines:
        if line.startswith("#"):
            if line.startswith("# config: "):
                config = json.loads(line[len("# config: "):])
            continue
        if line.strip():
            body.append(line.split("\t"))
    if not body:
        raise ValidationError(f"{path} has no header row")
    header, rows = body[0], body[1:]
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise ValidationError(f"{path}: row {i + 1} has {len(row)} fields, "
                                  f"expected {len(header)}")
    return header, rows, config


def write_json(path, obj):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(obj, sort_keys=True, indent=1, default=_json_default) + "\n",
                        encoding="utf-8")
    except OSError as exc:
        raise IOFailure(f"cannot write {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# count matrices


def column_names(data: CountTensor) -> list[str]:
    return [f"t{t}_r{r}" for t, r in zip(data.time_index, data.replicate)]


def write_counts(data: CountTensor, counts_path, meta_path, config: dict | None = None):
    cols = column_names(data)
    if len(set(cols)) != len(cols):
        raise StructureError("duplicate (time, replicate) pairs cannot be written")
    write_table(counts_path, ["gene_id"] + cols,
                ([g] + list(row) for g, row in zip(data.gene_ids, data.counts)), config)
    write_table(meta_path, ["column_name", "time_value", "condition", "replicate"],
                ([c, data.time_labels[t], cond, r] for c, t, cond, r in
                 zip(cols, data.time_index, data.condition, data.replicate)), config)


def read_counts(counts_path, meta_path) -> CountTensor:
    header, rows, _ = read_table(counts_path)
    if not header or header[0] != "gene_id":
        raise ValidationError(f"{counts_path}: first column must be gene_id")
    mheader, mrows, _ = read_table(meta_path)
    need = ["column_name", "time_value", "condition", "replicate"]
    if mheader[:4] != need:
        raise ValidationError(f"{meta_path}: columns must be {need}")
    meta = {}
    for row in mrows:
        try:
            meta[row[0]] = (float(row[1]), int(row[2]), int(row[3]))
        except ValueError as exc:
            raise ValidationError(f"{meta_path}: bad metadata row {row}") from exc
    cols = header[1:]
    missing = [c for c in cols if c not in meta]
    if missing:
        raise ValidationError(f"{meta_path}: no metadata for columns {missing[:5]}")
    for c in cols:
        if not _COL.match(c):
            raise ValidationError(f"{counts_path}: column {c!r} is not named t<index>_r<replicate>")
    times = sorted({meta[c][0] for c in cols})
    tpos = {v: i for i, v in enumerate(times)}
    order = sorted(range(len(cols)), key=lambda i: (tpos[meta[cols[i]][0]], i))
    try:
        counts = np.array([[_parse_count(v) for v in row[1:]] for row in rows],
                          dtype=np.int64).reshape(len(rows), len(cols))
    except ValueError as exc:
        raise ValidationError(f"{counts_path}: {exc}") from exc
    return CountTensor(counts[:, order], [row[0] for row in rows], times,
                       [tpos[meta[cols[i]][0]] for i in order],
                       [meta[cols[i]][1] for i in order],
                       [meta[cols[i]][2] for i in order])


def _parse_count(v: str) -> int:
    v = v.strip()
    if v == "" or v.lower() in ("na", "nan", "null"):
        raise ValueError("missing values are not permitted")
    x = float(v)
    if x != int(x) or x < 0:
        raise ValueError(f"count {v!r} is not a nonnegative integer")
    return int(x)


# ---------------------------------------------------------------------------
# reports

BF_COLUMNS = ["gene_id", "rank", "log_bf", "log_ml_m0", "log_ml_m1", "log_ml_m2",
              "estimator", "log_bf_alt", "all_zero"]


def write_bf_report(report, path, config=None):
    write_table(path, BF_COLUMNS, report.rows(), config)


def read_bf_report(path):
    """gene_id -> row dict (numbers parsed)."""
    header, rows, _ = read_table(path)
    if header[:7] != BF_COLUMNS[:7]:
        raise ValidationError(f"{path}: not a BF report (columns {header[:7]})")
    out = []
    for row in rows:
        d = dict(zip(header, row))
        for k in ("log_bf", "log_ml_m0", "log_ml_m1", "log_ml_m2"):
            d[k] = float(d[k])
        d["rank"] = int(d["rank"])
        out.append(d)
    return out


def write_truth(ds, path, config=None):
    params = ds.param_table()
    names = sorted(k for k in params if not k.startswith("size_factors"))
    write_table(path, ["gene_id", "is_de"] + names,
                ([g, bool(ds.truth[i])] + [params[n][i] for n in names]
                 for i, g in enumerate(ds.data_cond1.gene_ids)), config)


def read_truth(path) -> dict:
    header, rows, _ = read_table(path)
    if header[:2] != ["gene_id", "is_de"]:
        raise ValidationError(f"{path}: truth file needs gene_id, is_de columns")
    return {row[0]: row[1].strip() in ("1", "True", "true") for row in rows}


def write_curve(curve, path, kind, config=None):
    cols = ["fpr", "tpr"] if kind == "roc" else ["recall", "precision"]
    write_table(path, cols, curve.points.tolist(), config)


def write_posterior_summary(samples, data: CountTensor, path, config=None, level=0.99):
    lo_q, hi_q = (1 - level) / 2, 1 - (1 - level) / 2
    r = samples.r
    mean = r.mean(axis=0)
    lo = np.quantile(r, lo_q, axis=0)
    hi = np.quantile(r, hi_q, axis=0)
    rows = ([g, t, data.time_labels[t], mean[k, t], lo[k, t], hi[k, t]]
            for k, g in enumerate(data.gene_ids) for t in range(data.n_times))
    write_table(path, ["gene_id", "time_index", "time_value", "r_mean",
                       f"r_q{lo_q:.3f}", f"r_q{hi_q:.3f}"], rows, config)

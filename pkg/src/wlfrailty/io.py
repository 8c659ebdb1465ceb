"""CSV input, JSON fit results and debug dumps.

Fit result schema (``"schema": "wlfrailty.fit/1"``)::

    coefficients  list of {name, estimate, se, z, p, significant}
    theta         {estimate, se}
    kendall_tau   float
    baseline      {kind: "weibull", lam, rho, se_lam, se_rho}
                  or {kind: "step", times, increments}
    frailties     list of {cluster_id, z_hat, kappa_hat}
    loglik, n_iter, loglik_trace, ascent_violations

Non-finite numbers are written as ``null``. Floats are written with
``repr`` precision, so reading a file back reproduces every estimate.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .em import FitResult
from .errors import DataError
from .model import Dataset, StepBaseline, WeibullBaseline

__all__ = [
    "SCHEMA",
    "Coefficient",
    "load_csv",
    "dump_csv",
    "coefficient_table",
    "result_to_dict",
    "write_result",
    "read_result",
    "to_json",
]

SCHEMA = "wlfrailty.fit/1"
SIGNIFICANCE_LEVEL = 0.05


def _parse_float(text):
    try:
        v = float(text)
    except ValueError:
        return None
    return v if math.isfinite(v) else None


def load_csv(path, time_col: str, status_col: str, cluster_col: str,
             covariate_cols=None) -> Dataset:
    """Read a header-first CSV into a :class:`Dataset`.

    ``covariate_cols`` defaults to every other column. A covariate column
    with any non-numeric entry is categorical and expands to reference-coded
    dummies named ``<column><level>``; the alphabetically first level is
    the reference.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError("empty file", line=1) from None
        if len(set(header)) != len(header):
            raise DataError("duplicate column names in header", line=1)
        if covariate_cols is None:
            covariate_cols = [h for h in header if h not in (time_col, status_col, cluster_col)]
        wanted = [time_col, status_col, cluster_col, *covariate_cols]
        missing = [c for c in wanted if c not in header]
        if missing:
            raise DataError(f"unknown column(s): {', '.join(missing)}", line=1)
        pos = {c: header.index(c) for c in wanted}

        times, status, clusters, raw, lines = [], [], [], [], []
        for row in reader:
            lineno = reader.line_num
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise DataError(f"expected {len(header)} fields, found {len(row)}", line=lineno)
            t = _parse_float(row[pos[time_col]])
            if t is None:
                raise DataError(f"time {row[pos[time_col]]!r} is not a number", line=lineno)
            if t <= 0:
                raise DataError(f"time must be positive, found {t:g}", line=lineno)
            s = row[pos[status_col]].strip()
            if s not in ("0", "1"):
                raise DataError(f"status must be 0 or 1, found {s!r}", line=lineno)
            times.append(t)
            status.append(s == "1")
            clusters.append(row[pos[cluster_col]].strip())
            raw.append([row[pos[c]].strip() for c in covariate_cols])
            lines.append(lineno)
    if not times:
        raise DataError("no data rows")

    columns, names = [], []
    for k, col in enumerate(covariate_cols):
        cells = [r[k] for r in raw]
        values = [_parse_float(c) for c in cells]
        if all(v is not None for v in values):
            columns.append(np.array(values))
            names.append(col)
            continue
        for c, line in zip(cells, lines):
            if not c:
                raise DataError(f"missing value in column {col!r}", line=line)
        levels = sorted(set(cells))
        for level in levels[1:]:
            columns.append(np.array([c == level for c in cells], dtype=float))
            names.append(f"{col}{level}")
    X = np.column_stack(columns) if columns else np.zeros((len(times), 0))
    return Dataset(np.array(times), np.array(status), X, clusters, names)


def dump_csv(data: Dataset, path) -> None:
    """Write a dataset back to CSV with round-trip float precision."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["cluster", "time", "status", *data.covariate_names])
        for k in range(data.n):
            w.writerow([data.cluster_ids[data.cluster[k]], repr(float(data.time[k])),
                        int(data.event[k]), *(repr(float(v)) for v in data.X[k])])


@dataclass(frozen=True)
class Coefficient:
    name: str
    estimate: float
    se: float
    z: float
    p: float

    @property
    def significant(self) -> bool:
        return self.p < SIGNIFICANCE_LEVEL


def coefficient_table(names, estimates, ses) -> list[Coefficient]:
    """Wald z statistics and two-sided normal p-values."""
    out = []
    for name, est, se in zip(names, estimates, ses):
        est, se = float(est), float(se)
        if se > 0 and math.isfinite(se):
            z = est / se
            p = math.erfc(abs(z) / math.sqrt(2.0))
        else:
            z = p = math.nan
        out.append(Coefficient(str(name), est, se, z, p))
    return out


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if obj is None or isinstance(obj, str):
        return obj
    return str(obj)


def to_json(obj) -> str:
    """Deterministic JSON text (sorted keys, non-finite as null)."""
    return json.dumps(_clean(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def result_to_dict(fit: FitResult) -> dict:
    names = fit.covariate_names or [f"x{k + 1}" for k in range(len(fit.beta_hat))]
    coefs = [
        {"name": c.name, "estimate": c.estimate, "se": c.se, "z": c.z, "p": c.p,
         "significant": c.significant}
        for c in coefficient_table(names, fit.beta_hat, fit.se_beta)
    ]
    b = fit.baseline_hat
    if isinstance(b, WeibullBaseline):
        baseline = {"kind": "weibull", "lam": b.lam, "rho": b.rho,
                    "se_lam": fit.se_baseline.get("lam", math.nan),
                    "se_rho": fit.se_baseline.get("rho", math.nan)}
    else:
        baseline = {"kind": "step", "times": list(b.times), "increments": list(b.increments)}
    ids = fit.cluster_ids or list(range(len(fit.z_hat)))
    return {
        "schema": SCHEMA,
        "coefficients": coefs,
        "theta": {"estimate": fit.theta_hat, "se": fit.se_theta},
        "kendall_tau": fit.kendall_tau,
        "baseline": baseline,
        "frailties": [{"cluster_id": cid, "z_hat": z, "kappa_hat": k}
                      for cid, z, k in zip(ids, fit.z_hat, fit.kappa_hat)],
        "loglik": fit.loglik,
        "loglik_trace": list(fit.loglik_trace),
        "n_iter": fit.n_iter,
        "ascent_violations": fit.ascent_violations,
    }


def write_result(fit: FitResult, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(to_json(result_to_dict(fit)))


def _num(v):
    return math.nan if v is None else float(v)


def read_result(path) -> FitResult:
    """Load a result written by :func:`write_result`."""
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"invalid JSON: {exc.msg}", line=exc.lineno) from None
    if doc.get("schema") != SCHEMA:
        raise DataError(f"not a {SCHEMA} document")
    try:
        coefs = doc["coefficients"]
        b = doc["baseline"]
        if b["kind"] == "weibull":
            baseline = WeibullBaseline(float(b["lam"]), float(b["rho"]))
            se_base = {"lam": _num(b.get("se_lam")), "rho": _num(b.get("se_rho"))}
        elif b["kind"] == "step":
            baseline = StepBaseline(np.array(b["times"], dtype=float),
                                    np.array(b["increments"], dtype=float))
            se_base = {}
        else:
            raise DataError(f"unknown baseline kind {b['kind']!r}")
        fr = doc["frailties"]
        return FitResult(
            beta_hat=np.array([c["estimate"] for c in coefs], dtype=float),
            theta_hat=float(doc["theta"]["estimate"]),
            baseline_hat=baseline,
            se_beta=np.array([_num(c["se"]) for c in coefs]),
            se_theta=_num(doc["theta"]["se"]),
            z_hat=np.array([f["z_hat"] for f in fr], dtype=float),
            kappa_hat=np.array([_num(f.get("kappa_hat")) for f in fr]),
            loglik_trace=[_num(v) for v in doc.get("loglik_trace", [doc.get("loglik")])],
            n_iter=int(doc["n_iter"]),
            kendall_tau=_num(doc["kendall_tau"]),
            covariate_names=[c["name"] for c in coefs],
            cluster_ids=[f["cluster_id"] for f in fr],
            se_baseline=se_base,
            ascent_violations=int(doc.get("ascent_violations", 0)),
        )
    except (KeyError, TypeError) as exc:
        raise DataError(f"malformed result document: missing or bad field {exc}") from None

"""CSV readers and writers for regression and recurrent-event data.

Regression file: header ``y, c:<name>..., b:<name>...``.

Recurrent data come in two files. The events file is long format with
``subject_id, t`` and either ``y`` (log gap) or ``gap`` (raw gap), plus
time-varying covariates ``z:<name>``. A row with an empty response may
follow the last event of a subject and carries the covariates of the
censored occasion. The subjects file holds ``subject_id, tau`` plus fixed
regression covariates ``x:<name>`` and similarity covariates ``c:``/``b:``.
An optional ``censor_bound`` column overrides the bound derived from ``tau``.
"""
from __future__ import annotations

import csv
import math
from collections import OrderedDict

import numpy as np

from .core import MixedCovariateMatrix, RecurrentDataset
from .errors import CensorBeforeLastEvent, NonBinaryValue, NonMonotoneOccasions, ParseError


def _fmt(x) -> str:
    return repr(float(x))


def _read(path):
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise ParseError(f"{path}: empty file", row=1)
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header):
        raise ParseError(f"{path}: duplicate column names", row=1)
    for r, row in enumerate(rows[1:], 2):
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, found {len(row)}", row=r)
    return header, rows[1:]


def _float(text, row, col, allow_empty=False):
    text = text.strip()
    if allow_empty and text == "":
        return math.nan
    try:
        val = float(text)
    except ValueError:
        raise ParseError(f"cannot parse {text!r} as a number", row=row, column=col) from None
    if not math.isfinite(val):
        raise ParseError(f"non-finite value {text!r}", row=row, column=col)
    return val


def _binary(text, row, col):
    val = _float(text, row, col)
    if val not in (0.0, 1.0):
        raise NonBinaryValue(f"binary covariate must be 0 or 1, found {text.strip()!r}", row=row, column=col)
    return int(val)


def _columns(header, prefix):
    return [j for j, h in enumerate(header) if h.startswith(prefix)]


def _covariates(header, rows, metric, first_row=2):
    ci, bi = _columns(header, "c:"), _columns(header, "b:")
    if not ci and not bi:
        return None
    C = np.array([[_float(row[j], r, header[j]) for j in ci] for r, row in enumerate(rows, first_row)],
                 dtype=float).reshape(len(rows), len(ci))
    B = np.array([[_binary(row[j], r, header[j]) for j in bi] for r, row in enumerate(rows, first_row)],
                 dtype=np.int64).reshape(len(rows), len(bi))
    return MixedCovariateMatrix.from_arrays(C, B, metric)


def covariate_names(header) -> tuple[list, list]:
    return [h[2:] for h in header if h.startswith("c:")], [h[2:] for h in header if h.startswith("b:")]


def load_regression_csv(path, metric="sample"):
    """Return ``(y, covariates)``; ``covariates`` is ``None`` when no c:/b: columns exist."""
    header, rows = _read(path)
    if not rows:
        raise ParseError(f"{path}: no data rows", row=2)
    return load_regression_rows(header, rows, metric)


def load_regression_rows(header, rows, metric="sample"):
    if "y" not in header:
        raise ParseError("missing response column", row=1, column="y")
    known = {"y"} | {h for h in header if h.startswith(("c:", "b:"))}
    for h in header:
        if h not in known:
            raise ParseError("unrecognised column (expected y, c:<name> or b:<name>)", row=1, column=h)
    jy = header.index("y")
    y = np.array([_float(row[jy], r, "y") for r, row in enumerate(rows, 2)])
    return y, _covariates(header, rows, metric)


def write_regression_csv(path, y, covariates: MixedCovariateMatrix | None, names=None):
    mc = covariates.m_c if covariates is not None else 0
    mb = covariates.m_b if covariates is not None else 0
    cn, bn = names or ([f"x{c + 1}" for c in range(mc)], [f"x{mc + c + 1}" for c in range(mb)])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["y"] + [f"c:{s}" for s in cn] + [f"b:{s}" for s in bn])
        for i, yi in enumerate(np.asarray(y, dtype=float)):
            row = [_fmt(yi)]
            if covariates is not None:
                row += [_fmt(v) for v in covariates.continuous[i]]
                row += [str(int(v)) for v in covariates.binary[i]]
            w.writerow(row)


def design_matrix(covariates: MixedCovariateMatrix | None, n=None) -> np.ndarray:
    """Intercept column followed by the continuous and binary covariates."""
    if covariates is None:
        return np.ones((n, 1))
    return np.column_stack([np.ones(covariates.n), covariates.continuous, covariates.binary.astype(float)])


# ---------------------------------------------------------------------------
# recurrent events


def load_recurrent_csv(events_path, subjects_path, metric="sample") -> RecurrentDataset:
    eh, erows = _read(events_path)
    sh, srows = _read(subjects_path)
    for col in ("subject_id", "t"):
        if col not in eh:
            raise ParseError("missing column in events file", row=1, column=col)
    if ("y" in eh) == ("gap" in eh):
        raise ParseError("events file needs exactly one of the columns y and gap", row=1)
    for col in ("subject_id",):
        if col not in sh:
            raise ParseError("missing column in subjects file", row=1, column=col)
    if "tau" not in sh and "censor_bound" not in sh:
        raise ParseError("subjects file needs a tau column", row=1, column="tau")
    log_scale = "y" in eh
    jid, jt, jr = eh.index("subject_id"), eh.index("t"), eh.index("y" if log_scale else "gap")
    rcol = eh[jr]
    zi = _columns(eh, "z:")

    events = OrderedDict()
    for r, row in enumerate(erows, 2):
        sid = row[jid].strip()
        t = _float(row[jt], r, "t")
        if t != int(t):
            raise ParseError("occasion index must be an integer", row=r, column="t")
        val = _float(row[jr], r, rcol, allow_empty=True)
        if not math.isnan(val) and not log_scale:
            if val <= 0:
                raise ParseError("gap times must be positive", row=r, column=rcol)
            val = math.log(val)
        z = [_float(row[j], r, eh[j]) for j in zi]
        events.setdefault(sid, []).append((int(t), val, z, r))

    sid_col = sh.index("subject_id")
    by_id = {}
    for r, row in enumerate(srows, 2):
        sid = row[sid_col].strip()
        if sid in by_id:
            raise ParseError(f"duplicate subject {sid!r}", row=r, column="subject_id")
        by_id[sid] = (r, row)
    order = [s for s in by_id if s in events]
    for sid in events:
        if sid not in by_id:
            raise ParseError(f"subject {sid!r} has events but no subjects-file row", column="subject_id")
    if not order:
        raise ParseError(f"{subjects_path}: no subjects with events", row=2)

    ys, zs, bounds = [], [], []
    for sid in order:
        ev = events[sid]
        ts = [e[0] for e in ev]
        if ts != list(range(1, len(ts) + 1)):
            bad = next(e for e, want in zip(ev, range(1, len(ev) + 1)) if e[0] != want)
            raise NonMonotoneOccasions(f"subject {sid!r}: occasions must run 1, 2, ... without gaps",
                                       row=bad[3], column="t")
        obs = [e for e in ev if not math.isnan(e[1])]
        cens = [e for e in ev if math.isnan(e[1])]
        if cens and (len(cens) > 1 or cens[0] is not ev[-1]):
            raise ParseError(f"subject {sid!r}: only the trailing censored occasion may lack a response",
                             row=cens[0][3], column=rcol)
        if not obs:
            raise ParseError(f"subject {sid!r}: no observed gap times", row=ev[0][3], column=rcol)
        y = np.array([e[1] for e in obs])
        if zi:
            if not cens:
                raise ParseError(f"subject {sid!r}: time-varying covariates of the censored occasion "
                                 "are missing", row=ev[-1][3], column=eh[zi[0]])
            z = np.array([e[2] for e in ev])
        else:
            z = np.zeros((len(obs) + 1, 0))
        r, row = by_id[sid]
        if "censor_bound" in sh and row[sh.index("censor_bound")].strip():
            bound = _float(row[sh.index("censor_bound")], r, "censor_bound")
        else:
            tau = _float(row[sh.index("tau")], r, "tau")
            rest = tau - np.exp(y).sum()
            if not rest > 0:
                raise CensorBeforeLastEvent(f"subject {sid!r}: tau = {tau:g} does not exceed the "
                                            f"total observed time {np.exp(y).sum():g}", row=r, column="tau")
            bound = math.log(rest)
        ys.append(y)
        zs.append(z)
        bounds.append(bound)

    srows_kept = [by_id[s][1] for s in order]
    first = [by_id[s][0] for s in order]
    xi = _columns(sh, "x:")
    xf = np.array([[_float(row[j], r, sh[j]) for j in xi] for r, row in zip(first, srows_kept)],
                  dtype=float).reshape(len(order), len(xi))
    cov = None
    if _columns(sh, "c:") or _columns(sh, "b:"):
        cov = _covariates(sh, srows_kept, metric, first_row=2)
    return RecurrentDataset.from_lists(ys, bounds, xf, zs, cov, tuple(order))


def write_recurrent_csv(events_path, subjects_path, data: RecurrentDataset, names=None):
    """Write both files; ``tau`` is derived from the bound and ``censor_bound`` is kept exactly."""
    names = names or {}
    zn = names.get("z", [f"z{c + 1}" for c in range(data.p2)])
    xn = names.get("x", [f"x{c + 1}" for c in range(data.p1)])
    cov = data.covariates
    cn = names.get("c", [f"c{c + 1}" for c in range(cov.m_c)] if cov is not None else [])
    bn = names.get("b", [f"b{c + 1}" for c in range(cov.m_b)] if cov is not None else [])
    with open(events_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", "t", "y"] + [f"z:{s}" for s in zn])
        for i, sid in enumerate(data.subject_ids):
            m = int(data.m[i])
            for t in range(m + 1):
                resp = _fmt(data.y[i, t]) if t < m else ""
                w.writerow([sid, t + 1, resp] + [_fmt(v) for v in data.x_time[i, t]])
    with open(subjects_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", "tau", "censor_bound"] + [f"x:{s}" for s in xn]
                   + [f"c:{s}" for s in cn] + [f"b:{s}" for s in bn])
        for i, sid in enumerate(data.subject_ids):
            tau = np.exp(data.observed(i)).sum() + math.exp(data.censor_bound[i])
            row = [sid, _fmt(tau), _fmt(data.censor_bound[i])] + [_fmt(v) for v in data.x_fixed[i]]
            if cov is not None:
                row += [_fmt(v) for v in cov.continuous[i]] + [str(int(v)) for v in cov.binary[i]]
            w.writerow(row)


def write_partition_csv(path, partition, ids=None):
    alloc = partition.allocations if hasattr(partition, "allocations") else np.asarray(partition)
    ids = ids if ids is not None else range(len(alloc))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["item", "block"])
        for i, a in zip(ids, alloc):
            w.writerow([i, int(a)])


def write_vector_csv(path, name, values, ids=None):
    values = np.asarray(values, dtype=float)
    ids = ids if ids is not None else range(values.size)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["item", name])
        for i, v in zip(ids, values):
            w.writerow([i, _fmt(v)])

"""Storage for retained MCMC draws, with a plain CSV layout on disk.

Files written by :meth:`TraceStore.save`:

    trace.csv     iter, u, k, allocations (space-separated canonical labels)
    params.csv    iter, block, one column per cluster parameter
    loglik.csv    one row per iteration, one column per item: log f(y_i | theta)
    extras.csv    iter plus flattened per-iteration vectors (regression terms)
    manifest.txt  key = value lines
"""
from __future__ import annotations

import csv
import hashlib
import os
from dataclasses import dataclass, field

import numpy as np

from .core import Partition, canonical_labels
from .errors import EmptyTrace


def _fmt(x) -> str:
    return repr(float(x))


@dataclass
class TraceStore:
    n: int
    param_names: tuple = ()
    allocations: list = field(default_factory=list)
    u: list = field(default_factory=list)
    params: list = field(default_factory=list)
    loglik: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def append(self, allocations, u, params=None, loglik=None, **extras):
        # params rows follow the canonical block order
        alloc = np.asarray(allocations, dtype=np.int64)
        canon = canonical_labels(alloc)
        self.allocations.append(canon)
        self.u.append(float(u))
        if params is not None:
            params = np.asarray(params, dtype=float)
            if params.ndim == 1:
                params = params[:, None]
            order = _block_order(alloc)
            self.params.append(params[order])
        if loglik is not None:
            self.loglik.append(np.asarray(loglik, dtype=float).copy())
        for key, val in extras.items():
            self.extras.setdefault(key, []).append(np.atleast_1d(np.asarray(val, dtype=float)).ravel().copy())

    def __len__(self):
        return len(self.allocations)

    def _check(self):
        if not self.allocations:
            raise EmptyTrace("trace has no retained iterations")

    def allocation_matrix(self) -> np.ndarray:
        self._check()
        return np.vstack(self.allocations)

    def partitions(self) -> list[Partition]:
        return [Partition(a) for a in self.allocations]

    def k_trace(self) -> np.ndarray:
        return np.array([int(a.max()) + 1 if a.size else 0 for a in self.allocations])

    def loglik_matrix(self) -> np.ndarray:
        self._check()
        if not self.loglik:
            raise EmptyTrace("trace carries no per-item log densities")
        return np.vstack(self.loglik)

    def extra(self, key) -> np.ndarray:
        return np.vstack(self.extras[key])

    # ---- persistence

    def save(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "trace.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iter", "u", "k", "allocations"])
            for g, (a, u) in enumerate(zip(self.allocations, self.u)):
                w.writerow([g, _fmt(u), int(a.max()) + 1 if a.size else 0, " ".join(map(str, a.tolist()))])
        if self.params:
            with open(os.path.join(out_dir, "params.csv"), "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                names = list(self.param_names) or [f"p{j}" for j in range(self.params[0].shape[1])]
                w.writerow(["iter", "block", *names])
                for g, th in enumerate(self.params):
                    for j, row in enumerate(th):
                        w.writerow([g, j, *map(_fmt, row)])
        if self.loglik:
            with open(os.path.join(out_dir, "loglik.csv"), "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow([f"item{i}" for i in range(self.n)])
                for row in self.loglik:
                    w.writerow(list(map(_fmt, row)))
        if self.extras:
            keys = sorted(self.extras)
            with open(os.path.join(out_dir, "extras.csv"), "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                header = ["iter"]
                for key in keys:
                    header += [f"{key}[{c}]" for c in range(self.extras[key][0].size)]
                w.writerow(header)
                for g in range(len(self)):
                    row = [g]
                    for key in keys:
                        row += list(map(_fmt, self.extras[key][g]))
                    w.writerow(row)
        with open(os.path.join(out_dir, "manifest.txt"), "w") as fh:
            fh.write(f"n = {self.n}\n")
            fh.write(f"iterations = {len(self)}\n")
            fh.write(f"param_names = {' '.join(self.param_names)}\n")
            for key in sorted(self.meta):
                fh.write(f"{key} = {self.meta[key]}\n")

    @classmethod
    def load(cls, out_dir) -> "TraceStore":
        meta = {}
        with open(os.path.join(out_dir, "manifest.txt")) as fh:
            for line in fh:
                if "=" in line:
                    key, _, val = line.partition("=")
                    meta[key.strip()] = val.strip()
        n = int(meta.pop("n"))
        meta.pop("iterations", None)
        names = tuple(meta.pop("param_names", "").split())
        tr = cls(n=n, param_names=names, meta=meta)
        with open(os.path.join(out_dir, "trace.csv"), newline="") as fh:
            rows = list(csv.reader(fh))[1:]
        for row in rows:
            tr.allocations.append(np.array([int(v) for v in row[3].split()], dtype=np.int64))
            tr.u.append(float(row[1]))
        path = os.path.join(out_dir, "params.csv")
        if os.path.exists(path):
            with open(path, newline="") as fh:
                rows = list(csv.reader(fh))[1:]
            per = {}
            for row in rows:
                per.setdefault(int(row[0]), []).append([float(v) for v in row[2:]])
            tr.params = [np.array(per[g]) for g in sorted(per)]
        path = os.path.join(out_dir, "loglik.csv")
        if os.path.exists(path):
            tr.loglik = list(np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2))
        path = os.path.join(out_dir, "extras.csv")
        if os.path.exists(path):
            with open(path, newline="") as fh:
                rows = list(csv.reader(fh))
            header = rows[0][1:]
            keys = [h.split("[")[0] for h in header]
            data = np.array([[float(v) for v in r[1:]] for r in rows[1:]]).reshape(len(rows) - 1, len(header))
            for key in dict.fromkeys(keys):
                cols = [c for c, kk in enumerate(keys) if kk == key]
                tr.extras[key] = list(data[:, cols])
        return tr


def _block_order(alloc) -> np.ndarray:
    """Original block labels sorted by smallest member (canonical order)."""
    _, first = np.unique(alloc, return_index=True)
    labels = alloc[np.sort(first)]
    return labels


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        h.update(fh.read())
    return h.hexdigest()

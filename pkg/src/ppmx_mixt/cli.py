"""Command-line entry point ``ppmx-mixt``.

Exit status 0 on success, 1 on invalid input or configuration, 2 when the
sampler or a quadrature fails numerically.
"""
from __future__ import annotations

import argparse
import os
import platform
import sys

import numpy as np

from . import __version__
from . import io as pio
from .config import RunConfig, load_config
from .conjugate import ConjPriorConfig, RegressionData, predict_new_regression, run_chain_conjugate
from .core import Family, NggParams, Partition, SimilarityConfig
from .datasets import simulate_appendix_e, simulate_recurrent_synthetic
from .errors import NonConvergence, NumericalFailure, PPMxError, QuadratureFailure
from .recurrent import predict_new_subject, run_chain_recurrent
from .similarity import calibrate_lambda
from .summaries import (cluster_covariate_summary, estimate_partition_vi, lpml, misclassification_rate,
                        similarity_matrix, write_rows)
from .trace import TraceStore

APPX_E_CONFIG = {
    "ngg.kappa": 0.3, "ngg.sigma": 0.2, "similarity.lambda": 0.5, "similarity.alpha": 1.0,
    "prior.B0_scale": 100, "prior.a0": 2, "prior.b0": 1,
    "sampler.n_iter": 15000, "sampler.n_burnin": 10000, "sampler.init": "singletons",
}
APPX_F_CONFIG = {
    "ngg.kappa": 0.001, "ngg.sigma": 0.2, "similarity.family": "C", "similarity.eps_star": 0.1,
    "prior.B0_scale": 100, "sampler.n_iter": 3000, "sampler.n_burnin": 1500,
}


def _versions() -> dict:
    import numba
    import scipy
    return {"version": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__}


def _chain_seeds(seed: int, chains: int):
    return np.random.SeedSequence(seed).spawn(chains)


def _save(trace: TraceStore, out, cfg: RunConfig, chain: int, extra=None):
    trace.meta.update(_versions())
    trace.meta.update(config_digest=cfg.digest(), seed=cfg.seed, chain=chain)
    trace.meta.update(extra or {})
    trace.save(out)


def _write_config(cfg: RunConfig, out):
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "config.txt"), "w") as fh:
        fh.write(cfg.to_text())


def _lambda(cfg: RunConfig, X, rng):
    """Calibrated lambda when ``similarity.eps_star`` is set, else the configured one."""
    if cfg.eps_star is None or X is None:
        return None
    return calibrate_lambda(X, cfg.eps_star, rng=rng)


def _out(args, cfg):
    return args.out or cfg.output_dir


def _load(args, base=None) -> RunConfig:
    over = {}
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if getattr(args, "chains", None) is not None:
        over["chains"] = args.chains
    if getattr(args, "out", None):
        over["output_dir"] = args.out
    return load_config(args.config, over, base=base)


# ---------------------------------------------------------------------------
# fitting


def cmd_fit_regression(args) -> int:
    base = {"model": "conjugate_regression"}
    cfg = _load(args, base)
    y, cov = pio.load_regression_csv(args.data, metric=cfg.get("covariates.metric"))
    X = pio.design_matrix(cov, y.size)
    data = RegressionData(X, y, cov)
    if not cfg.similarity().is_constant and cov is None:
        raise PPMxError("similarity.family needs c:/b: covariate columns")
    seeds = _chain_seeds(cfg.seed, cfg.chains)
    lam = _lambda(cfg, cov, np.random.default_rng(seeds[0].spawn(1)[0]))
    conf = cfg.conjugate(data.p, lam)
    out = _out(args, cfg)
    _write_config(cfg, out)
    for c, ss in enumerate(seeds):
        tr = run_chain_conjugate(data, conf, np.random.default_rng(ss))
        _save(tr, os.path.join(out, f"chain{c}"), cfg, c, {"data": os.path.abspath(args.data)})
        print(f"chain {c}: {len(tr)} draws written to {os.path.join(out, f'chain{c}')}")
    return 0


def _load_recurrent(args, cfg):
    return pio.load_recurrent_csv(args.events, args.subjects, metric=cfg.get("covariates.metric"))


def cmd_fit_recurrent(args) -> int:
    cfg = _load(args, {"model": "recurrent"})
    data = _load_recurrent(args, cfg)
    if not cfg.similarity().is_constant and data.covariates is None:
        raise PPMxError("similarity.family needs c:/b: columns in the subjects file")
    seeds = _chain_seeds(cfg.seed, cfg.chains)
    lam = _lambda(cfg, data.covariates, np.random.default_rng(seeds[0].spawn(1)[0]))
    conf = cfg.recurrent(data.p1, lam)
    out = _out(args, cfg)
    _write_config(cfg, out)
    for c, ss in enumerate(seeds):
        tr = run_chain_recurrent(data, conf, np.random.default_rng(ss))
        _save(tr, os.path.join(out, f"chain{c}"), cfg, c,
              {"events": os.path.abspath(args.events), "subjects": os.path.abspath(args.subjects)})
        print(f"chain {c}: {len(tr)} draws written to {os.path.join(out, f'chain{c}')}")
    return 0


# ---------------------------------------------------------------------------
# prediction and summaries


def _trace_similarity(trace: TraceStore) -> tuple[NggParams, SimilarityConfig]:
    m = trace.meta
    return (NggParams(float(m["kappa"]), float(m["sigma"])),
            SimilarityConfig(Family(m["family"]), float(m["lam"]), float(m["alpha"])))


def cmd_predict(args) -> int:
    trace = TraceStore.load(args.trace)
    ngg, sim = _trace_similarity(trace)
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    model = trace.meta.get("model", "conjugate_regression")
    cfg = _load(args, {"model": model})
    rows = []
    if model == "conjugate_regression":
        y, cov = pio.load_regression_csv(args.data, metric=cfg.get("covariates.metric"))
        data = RegressionData(pio.design_matrix(cov, y.size), y, cov)
        if data.n != trace.n:
            raise PPMxError("training data and trace differ in the number of items")
        _, newcov = _read_new_covariates(args.new)
        prior = cfg.conj_prior(data.p)
        for i in range(newcov.n if newcov is not None else 0):
            zc, zb = newcov.row(i)
            x = np.concatenate([[1.0], zc, zb.astype(float)])
            draws, mean = predict_new_regression(trace, x, data, ngg, sim, (zc, zb), rng, prior)
            rows.append({"item": i, "mean": mean, "q05": float(np.quantile(draws, 0.05)),
                         "q95": float(np.quantile(draws, 0.95))})
    else:
        data = _load_recurrent(args, cfg)
        if data.n != trace.n:
            raise PPMxError("training data and trace differ in the number of subjects")
        conf = cfg.recurrent(data.p1, sim.lam)
        conf.ngg, conf.similarity = ngg, sim
        for sid, x_new in _read_new_subjects(args.new, args.new_events, args.horizon, data):
            draws = predict_new_subject(trace, x_new, args.horizon, data, conf, rng)
            for t in range(args.horizon):
                rows.append({"subject_id": sid, "t": t + 1, "mean": float(draws[:, t].mean()),
                             "q05": float(np.quantile(draws[:, t], 0.05)),
                             "q95": float(np.quantile(draws[:, t], 0.95))})
    out = _out(args, cfg)
    os.makedirs(out, exist_ok=True)
    write_rows(os.path.join(out, "predictions.csv"), rows)
    print(f"{len(rows)} predictions written to {os.path.join(out, 'predictions.csv')}")
    return 0


def _read_new_covariates(path):
    """Covariate rows in the regression schema; the y column is optional."""
    header, rows = pio._read(path)
    if "y" not in header:
        header = ["y"] + header
        rows = [["0"] + r for r in rows]
    return pio.load_regression_rows(header, rows)


def _read_new_subjects(subjects_path, events_path, horizon, data):
    header, rows = pio._read(subjects_path)
    xi = pio._columns(header, "x:")
    if len(xi) != data.p1:
        raise PPMxError(f"new subjects need {data.p1} x: columns, found {len(xi)}")
    cov = pio._covariates(header, rows, "identity")
    sid = header.index("subject_id") if "subject_id" in header else None
    z = {}
    if data.p2:
        if events_path is None:
            raise PPMxError("the model has time-varying covariates; pass --new-events")
        eh, erows = pio._read(events_path)
        zi = pio._columns(eh, "z:")
        for r, row in enumerate(erows, 2):
            key = row[eh.index("subject_id")].strip()
            z.setdefault(key, []).append([pio._float(row[j], r, eh[j]) for j in zi])
    for r, row in enumerate(rows):
        key = row[sid].strip() if sid is not None else str(r)
        x_new = {"x_fixed": np.array([pio._float(row[j], r + 2, header[j]) for j in xi])}
        if data.p2:
            zt = np.array(z.get(key, []), dtype=float).reshape(-1, data.p2)
            if zt.shape[0] < horizon:
                raise PPMxError(f"subject {key!r}: time-varying covariates cover fewer than {horizon} occasions")
            x_new["x_time"] = zt[:horizon]
        if cov is not None:
            x_new["covariates"] = cov.row(r)
        yield key, x_new


def cmd_summarize(args) -> int:
    trace = TraceStore.load(args.trace)
    out = args.out or args.trace
    os.makedirs(out, exist_ok=True)
    psm = similarity_matrix(trace)
    psm.to_csv(os.path.join(out, "psm.csv"))
    est, loss = estimate_partition_vi(trace, psm, return_loss=True)
    pio.write_partition_csv(os.path.join(out, "partition.csv"), est)
    lines = [f"k = {est.k}", f"sizes = {' '.join(map(str, est.sizes.tolist()))}",
             f"expected_vi = {float(loss)!r}"]
    if trace.loglik:
        total, log_cpo = lpml(trace)
        pio.write_vector_csv(os.path.join(out, "cpo.csv"), "log_cpo", log_cpo)
        lines.append(f"lpml = {total!r}")
    cov = None
    if args.data:
        _, cov = pio.load_regression_csv(args.data)
    elif args.subjects:
        header, rows = pio._read(args.subjects)
        cov = pio._covariates(header, rows, "identity")
    if cov is not None:
        write_rows(os.path.join(out, "clusters.csv"), cluster_covariate_summary(est, cov))
    if args.truth:
        truth = _read_truth(args.truth)
        lines.append(f"misclassification = {float(misclassification_rate(est, truth))!r}")
    with open(os.path.join(out, "summary.txt"), "w") as fh:
        fh.write("".join(line + "\n" for line in lines))
    print("\n".join(lines))
    return 0


def _read_truth(path) -> Partition:
    header, rows = pio._read(path)
    j = header.index("block") if "block" in header else len(header) - 1
    return Partition.from_labels([int(pio._float(r[j], i + 2, header[j])) for i, r in enumerate(rows)])


# ---------------------------------------------------------------------------
# simulation and calibration


def cmd_simulate(args) -> int:
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    if args.which == "appendix-e":
        s = simulate_appendix_e(rng)
        pio.write_regression_csv(os.path.join(out, "data.csv"), s.y, s.covariates)
        pio.write_partition_csv(os.path.join(out, "truth.csv"), s.truth)
    else:
        data, truth = simulate_recurrent_synthetic(None, rng)
        pio.write_recurrent_csv(os.path.join(out, "events.csv"), os.path.join(out, "subjects.csv"), data)
        pio.write_partition_csv(os.path.join(out, "truth.csv"), truth, data.subject_ids)
    print(f"wrote {args.which} data to {out}")
    return 0


def cmd_calibrate_lambda(args) -> int:
    if args.data:
        _, cov = pio.load_regression_csv(args.data)
    else:
        header, rows = pio._read(args.subjects)
        cov = pio._covariates(header, rows, "sample")
    if cov is None:
        raise PPMxError("no c:/b: covariate columns found")
    if not args.eps_star > 0:
        raise PPMxError("--eps-star must be positive")
    lam = calibrate_lambda(cov, args.eps_star, n_mc=args.n_mc,
                           rng=np.random.default_rng(args.seed if args.seed is not None else 0))
    print(f"lambda = {lam!r}")
    return 0


# ---------------------------------------------------------------------------
# benchmarks


def cmd_benchmark(args) -> int:
    if args.which == "appendix-e":
        return _bench_appendix_e(args)
    return _bench_appendix_f(args)


def _bench_appendix_e(args) -> int:
    cfg = _load(args, APPX_E_CONFIG)
    out = _out(args, cfg)
    os.makedirs(out, exist_ok=True)
    rows = []
    for rep, ss in enumerate(np.random.SeedSequence(cfg.seed).spawn(args.reps)):
        data_ss, *fam_ss = ss.spawn(4)
        s = simulate_appendix_e(np.random.default_rng(data_ss))
        data = RegressionData(s.design, s.y, s.covariates)
        for fam, fss in zip(("C", "A", "ONE"), fam_ss):
            cfg.raw["similarity.family"] = fam
            conf = cfg.conjugate(data.p)
            tr = run_chain_conjugate(data, conf, np.random.default_rng(fss))
            est = estimate_partition_vi(tr)
            rate = misclassification_rate(est, s.truth)
            total, _ = lpml(tr)
            rows.append({"rep": rep, "family": "1" if fam == "ONE" else fam, "k": est.k,
                         "misclassification": rate, "lpml": total})
            print(f"rep {rep} g_{rows[-1]['family']}: k = {est.k}, misclassification = {rate:.3f}")
    write_rows(os.path.join(out, "misclassification.csv"), rows)
    return 0


def _bench_appendix_f(args) -> int:
    if not args.data:
        raise PPMxError("benchmark appendix-f needs --data (regression CSV with the source dataset)")
    cfg = _load(args, APPX_F_CONFIG)
    y, cov = pio.load_regression_csv(args.data, metric=cfg.get("covariates.metric"))
    if cov is None:
        raise PPMxError("the source dataset needs c:/b: covariate columns")
    n = y.size
    if args.subsample >= n:
        raise PPMxError(f"--subsample must be smaller than the dataset size {n}")
    combos, truth = _cell_truth(y, cov, args.truth)
    root = np.random.SeedSequence(cfg.seed)
    lam_ss, *rep_ss = root.spawn(args.m + 1)
    lam = _lambda(cfg, cov, np.random.default_rng(lam_ss))
    X = pio.design_matrix(cov)
    sq = np.zeros(len(combos))
    for m, ss in enumerate(rep_ss):
        rng = np.random.default_rng(ss)
        idx = np.sort(rng.choice(n, args.subsample, replace=False))
        sub = RegressionData(X[idx], y[idx], cov.subset(idx))
        prior = _empirical_bayes_prior(sub.y, sub.p, cfg)
        conf = cfg.conjugate(sub.p, lam)
        conf.prior = prior
        tr = run_chain_conjugate(sub, conf, rng)
        for c, (zc, zb) in enumerate(combos):
            x = np.concatenate([[1.0], zc, zb.astype(float)])
            _, mean = predict_new_regression(tr, x, sub, conf.ngg, conf.similarity, (zc, zb), rng, prior)
            sq[c] += (mean - truth[c]) ** 2
        print(f"subsample {m + 1}/{args.m} done")
    rmse = np.sqrt(sq / args.m)
    out = _out(args, cfg)
    os.makedirs(out, exist_ok=True)
    rows = []
    for (zc, zb), t, r in zip(combos, truth, rmse):
        row = {f"c{j + 1}": float(v) for j, v in enumerate(zc)}
        row.update({f"b{j + 1}": int(v) for j, v in enumerate(zb)})
        row.update(truth=float(t), rmse=float(r))
        rows.append(row)
    write_rows(os.path.join(out, "rmse.csv"), rows)
    print(f"average rMSE = {rmse.mean():.4f}; lambda = {conf.similarity.lam!r}")
    return 0


def _empirical_bayes_prior(y, p, cfg: RunConfig) -> ConjPriorConfig:
    """Intercept centred at the sample mean; IG(2, var) so that E(sigma2) equals the sample variance."""
    mu0 = np.zeros(p)
    mu0[0] = float(np.mean(y))
    scale = float(cfg.get("prior.B0_scale"))
    return ConjPriorConfig(mu0, scale * np.eye(p), 2.0, float(np.var(y, ddof=1)))


def _cell_truth(y, cov, truth_path):
    """Distinct covariate rows and E(Y | x) for each: from a file or the full-data cell means."""
    full = np.column_stack([cov.continuous, cov.binary.astype(float)])
    uniq, inv = np.unique(full, axis=0, return_inverse=True)
    inv = inv.ravel()
    combos = [(u[: cov.m_c], u[cov.m_c:].astype(np.int64)) for u in uniq]
    if truth_path is None:
        return combos, np.array([y[inv == c].mean() for c in range(len(uniq))])
    header, rows = pio._read(truth_path)
    if "mean" not in header:
        raise PPMxError("truth file needs a mean column")
    tc = pio._columns(header, "c:") + pio._columns(header, "b:")
    table = {}
    for r, row in enumerate(rows, 2):
        key = tuple(pio._float(row[j], r, header[j]) for j in tc)
        table[key] = pio._float(row[header.index("mean")], r, "mean")
    truth = []
    for u in uniq:
        key = tuple(float(v) for v in u)
        if key not in table:
            raise PPMxError(f"truth file lacks covariate combination {key}")
        truth.append(table[key])
    return combos, np.array(truth)


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ppmx-mixt", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, chains=True):
        p.add_argument("--config", help="flat key = value configuration file")
        p.add_argument("--seed", type=int, help="root random seed (overrides the config)")
        if chains:
            p.add_argument("--chains", type=int, help="number of independent chains")
        p.add_argument("--out", help="output directory")

    p = sub.add_parser("fit-regression", help="fit the conjugate regression model")
    common(p)
    p.add_argument("--data", required=True, help="CSV with y, c:<name>, b:<name> columns")
    p.set_defaults(func=cmd_fit_regression)

    p = sub.add_parser("fit-recurrent", help="fit the recurrent gap-time model")
    common(p)
    p.add_argument("--events", required=True)
    p.add_argument("--subjects", required=True)
    p.set_defaults(func=cmd_fit_recurrent)

    p = sub.add_parser("predict", help="posterior predictive for new items")
    common(p, chains=False)
    p.add_argument("--trace", required=True, help="chain directory written by a fit")
    p.add_argument("--data", help="training regression CSV")
    p.add_argument("--events", help="training events CSV")
    p.add_argument("--subjects", help="training subjects CSV")
    p.add_argument("--new", required=True, help="covariates of the new items (regression or subjects schema)")
    p.add_argument("--new-events", help="time-varying covariates of new subjects")
    p.add_argument("--horizon", type=int, default=1, help="occasions to predict per new subject")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("summarize", help="similarity matrix, VI estimate, LPML and cluster tables")
    p.add_argument("--trace", required=True)
    p.add_argument("--data", help="regression CSV for the per-cluster covariate table")
    p.add_argument("--subjects", help="subjects CSV for the per-cluster covariate table")
    p.add_argument("--truth", help="CSV of true labels (column 'block')")
    p.add_argument("--out")
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("simulate", help="write a synthetic dataset")
    p.add_argument("which", choices=["appendix-e", "recurrent"])
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("calibrate-lambda", help="lambda from a target compactness increment")
    p.add_argument("--data")
    p.add_argument("--subjects")
    p.add_argument("--eps-star", type=float, required=True)
    p.add_argument("--n-mc", type=int, default=100)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_calibrate_lambda)

    p = sub.add_parser("benchmark", help="simulation protocols")
    common(p, chains=False)
    p.add_argument("which", choices=["appendix-e", "appendix-f"])
    p.add_argument("--reps", type=int, default=1, help="appendix-e: number of simulated datasets")
    p.add_argument("--data", help="appendix-f: source regression CSV")
    p.add_argument("--truth", help="appendix-f: CSV of c:/b: columns plus the true mean")
    p.add_argument("--m", type=int, default=100, help="appendix-f: number of subsamples")
    p.add_argument("--subsample", type=int, default=200, help="appendix-f: subsample size")
    p.set_defaults(func=cmd_benchmark)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "calibrate-lambda" and (args.data is None) == (args.subjects is None):
        print("error: pass exactly one of --data and --subjects", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except (NumericalFailure, QuadratureFailure, NonConvergence, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (PPMxError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

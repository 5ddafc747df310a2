"""Command-line interface: ``ssgp {simulate,fit,predict,bench,check}``.

Settings come from (highest priority first) command-line flags, an INI file
given with ``--config`` and built-in defaults. INI sections and keys::

    [kernel]      type, lengthscale, sigma_f
    [likelihood]  type, sigma_n, nu
    [inference]   scheme, mean, seed
    [interp]      enabled, K (default 2000), boundary
    [optimizer]   optimize, max_evals, fix (comma separated)

The ``SSGP_SEED`` environment variable overrides any configured seed.
Tabular outputs are CSV; logs go to stderr one ``key=value`` record per line.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import sys
import time

import numpy as np

from . import __version__
from .data import GENERATORS, Dataset, read_csv, resolve_seed, simulate
from .errors import SSGPError
from .experiments import bench, cross_validate, oracle_check, rows_to_dicts
from .inference import SCHEMES, GPModel, InferenceResult, infer, predict
from .kernels import parse_kernel
from .learning import optimize
from .likelihoods import LIKELIHOODS, parse_likelihood
from .means import MEANS, parse_mean

log = logging.getLogger("ssgp")

DEFAULTS = {
    ("kernel", "type"): "matern32",
    ("kernel", "lengthscale"): None,
    ("kernel", "sigma_f"): None,
    ("likelihood", "type"): "gaussian",
    ("likelihood", "sigma_n"): None,
    ("likelihood", "nu"): None,
    ("inference", "scheme"): "auto",
    ("inference", "mean"): "zero",
    ("inference", "seed"): None,
    ("interp", "enabled"): "false",
    ("interp", "K"): "2000",
    ("interp", "boundary"): "keys",
    ("optimizer", "optimize"): "false",
    ("optimizer", "max_evals"): "100",
    ("optimizer", "fix"): "",
}


class Settings:
    """Merged view of flags, config file and defaults."""

    def __init__(self, args):
        self.cfg = configparser.ConfigParser()
        self.cfg.optionxform = str
        if getattr(args, "config", None):
            with open(args.config) as fh:
                self.cfg.read_file(fh)
        self.args = args

    def get(self, section, key, flag=None):
        v = getattr(self.args, flag, None) if flag else None
        if v is not None:
            return v
        if self.cfg.has_option(section, key):
            return self.cfg.get(section, key)
        return DEFAULTS.get((section, key))

    def get_float(self, section, key, flag=None):
        v = self.get(section, key, flag)
        return None if v in (None, "") else float(v)

    def get_bool(self, section, key, flag=None):
        v = self.get(section, key, flag)
        if isinstance(v, bool):
            return v
        return str(v).strip().lower() in ("1", "true", "yes", "on")


def _setup_logging(verbose):
    # a fresh handler per call so repeated main() invocations follow the current sys.stderr
    for h in [h for h in log.handlers if getattr(h, "_ssgp_cli", False)]:
        log.removeHandler(h)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter('level=%(levelname)s logger=%(name)s msg="%(message)s"'))
    handler._ssgp_cli = True
    log.addHandler(handler)
    log.setLevel(logging.DEBUG if verbose else logging.WARNING)
    log.propagate = False


def _build_model(st):
    kernel = parse_kernel(
        st.get("kernel", "type", "kernel"),
        lengthscale=st.get_float("kernel", "lengthscale", "lengthscale"),
        sigma_f=st.get_float("kernel", "sigma_f", "sigma_f"),
    )
    lik_kw = {}
    for key in ("sigma_n", "nu"):
        v = st.get_float("likelihood", key, key)
        if v is not None:
            lik_kw[key] = v
    lik = parse_likelihood(st.get("likelihood", "type", "lik"), **lik_kw)
    mean = parse_mean(st.get("inference", "mean", "mean"))
    return GPModel(kernel, lik, mean)


def _model_from_file(path):
    with open(path) as fh:
        doc = json.load(fh)
    model = GPModel(parse_kernel(doc["kernel"]), parse_likelihood(doc["likelihood"]), parse_mean(doc["mean"]))
    return model.with_theta(np.array(doc["theta"], dtype=float)), doc


def _write_rows(path, rows):
    if not rows:
        fh = open(path, "w") if path != "-" else sys.stdout
        if fh is not sys.stdout:
            fh.close()
        return
    keys = list(rows[0].keys())
    fh = open(path, "w", newline="") if path != "-" else sys.stdout
    try:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r[k]) for k in keys})
    finally:
        if fh is not sys.stdout:
            fh.close()


def _parse_k(text):
    """Node count from ``"20"`` or ``"K=20"``."""
    s = str(text).strip()
    if s.upper().startswith("K="):
        s = s[2:]
    try:
        return int(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid node count {text!r}") from None


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_simulate(args):
    st = Settings(args)
    seed = resolve_seed(args.seed if args.seed is not None else st.get("inference", "seed"))
    d = simulate(args.generator, args.n, seed=seed, noise=args.noise)
    d.to_csv(sys.stdout if args.out == "-" else args.out)
    log.info("wrote %d rows to %s (seed=%d)", d.n, args.out, seed)
    return 0


def cmd_fit(args):
    st = Settings(args)
    data = read_csv(args.data)
    scheme = st.get("inference", "scheme", "infer")
    K = args.interp
    if K is None and st.get_bool("interp", "enabled"):
        K = _parse_k(st.get("interp", "K"))
    boundary = st.get("interp", "boundary")
    if args.warm_start_from:
        model, prev = _model_from_file(args.warm_start_from)
        kspec, mspec = prev["kernel"], prev["mean"]
    else:
        model = _build_model(st)
        kspec, mspec = str(st.get("kernel", "type", "kernel")), str(st.get("inference", "mean", "mean"))
    fix = [f for f in str(st.get("optimizer", "fix", None) or "").split(",") if f.strip()]
    fix += list(args.fix or [])
    report = {}
    t0 = time.perf_counter()
    if st.get_bool("optimizer", "optimize", "optimize"):
        opt = optimize(
            model, data.t, data.y, scheme, max_evals=int(st.get("optimizer", "max_evals", "max_evals")),
            fix=[f.strip() for f in fix], K=K, boundary=boundary,
        )
        model = opt.model
        report.update(opt_evals=opt.n_evals, opt_success=opt.success, opt_message=opt.message)
    res = infer(model, data.t, data.y, scheme, K=K, boundary=boundary)
    log.info("fit scheme=%s n=%d log_z=%.10g iterations=%d", res.scheme, data.n, res.log_z, res.iterations)
    seconds = time.perf_counter() - t0
    report.update(
        scheme=res.scheme, kernel=kspec, likelihood=model.likelihood.name,
        n=data.n, n_labeled=int(np.sum(data.mask)), log_z=res.log_z,
        iterations=res.iterations, converged=res.converged, seconds=seconds,
    )
    for name, v in zip(model.names, model.theta):
        report[f"theta.{name}"] = float(v)
    if K is not None:
        ex = infer(model, data.t, data.y, scheme)
        report["rel_delta_log_z_interp"] = abs(res.log_z - ex.log_z) / abs(ex.log_z)
    if args.oracle == "dense":
        # compares the reported run (interpolation included) against the dense oracle
        if data.n > args.oracle_cap:
            raise ValueError(f"dense oracle limited to n <= {args.oracle_cap}, got {data.n}")
        dn = infer(model, data.t, data.y, scheme, backend="dense")
        report.update(
            mae_alpha=float(np.mean(np.abs(res.alpha - dn.alpha))),
            mae_W=float(np.mean(np.abs(res.W - dn.W))),
            mae_mu=float(np.mean(np.abs(res.post_mean - dn.post_mean))),
        )
    if args.cv:
        seed = resolve_seed(st.get("inference", "seed"))
        cv = cross_validate(model, data.t, data.y, res.scheme, k=args.cv, seed=seed,
                            parallel=args.parallel_folds, K=K, boundary=boundary)
        report.update(cv_rmse=cv.rmse, cv_nlpd=cv.nlpd)
    if args.model_out:
        doc = {
            "kernel": kspec, "likelihood": model.likelihood.name,
            "mean": mspec, "names": list(model.names),
            "theta": model.theta.tolist(), "scheme": res.scheme, "K": K, "boundary": boundary,
            "t": data.t.tolist(), "W": res.W.tolist(), "b": res.b.tolist(), "log_z": res.log_z,
        }
        with open(args.model_out, "w") as fh:
            json.dump(doc, fh, indent=1)
    _write_rows(args.report, [{"field": k, "value": v} for k, v in report.items()])
    return 0


def cmd_predict(args):
    model, doc = _model_from_file(args.model)
    t = np.asarray(doc["t"], dtype=float)
    res = InferenceResult(doc["scheme"], None, np.asarray(doc["W"]), np.asarray(doc["b"]), doc["log_z"])
    if args.at:
        t_star = read_csv_inputs(args.at)
    else:
        a, b, n = args.grid.split(":")
        t_star = np.linspace(float(a), float(b), int(n))
    mu, var = predict(model, t, res, t_star, K=doc.get("K"), boundary=doc.get("boundary", "keys"))
    rows = [{"t": float(ti), "mean": float(m), "var": float(v)} for ti, m, v in zip(t_star, mu, var)]
    _write_rows(args.out, rows)
    return 0


def read_csv_inputs(path):
    """First column of a CSV (header allowed) as test inputs."""
    vals = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not row[0].strip():
                continue
            try:
                vals.append(float(row[0]))
            except ValueError:
                if lineno == 1 and not vals:
                    continue
                raise ValueError(f"{path}:{lineno}: cannot parse input {row[0]!r}") from None
    return np.array(vals)


def cmd_bench(args):
    ns = [int(x) for x in args.n.split(",") if x.strip()] if args.n else []
    seed = resolve_seed(args.seed)
    rows = bench(ns, reps=args.reps, generator=args.generator, dense_cap=args.dense_cap,
                 K=args.interp, seed=seed)
    _write_rows(args.out, rows_to_dicts(rows))
    return 0


def cmd_check(args):
    rows = oracle_check(n=args.n, seed=resolve_seed(args.seed))
    if args.out:
        _write_rows(args.out, rows_to_dicts(rows))
    ok = True
    for r in rows:
        status = "PASS" if r.passed else "FAIL"
        ok &= r.passed
        print(f"{status} {r.likelihood:9s} {r.scheme:8s} MAE(alpha)={r.mae_alpha:.2e} "
              f"(bound {r.bound:.0e}) MAE(W)={r.mae_W:.2e} MAE(mu*)={r.mae_mu_star:.2e}")
    return 0 if ok else 1


def build_parser():
    p = argparse.ArgumentParser(prog="ssgp", description="Linear-time state-space GP inference.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS,
                        help="debug logging to stderr")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="write a synthetic data set as CSV")
    s.add_argument("--generator", choices=GENERATORS, default="sinusoids")
    s.add_argument("--n", type=int, default=1000)
    s.add_argument("--seed", type=int)
    s.add_argument("--noise", type=float, help="Gaussian noise standard deviation")
    s.add_argument("--config")
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", parents=[common], help="run inference (optionally learn hyperparameters) on a CSV")
    f.add_argument("data")
    f.add_argument("--config")
    f.add_argument("--kernel", help="e.g. matern32, matern52+constant")
    f.add_argument("--lengthscale", type=float)
    f.add_argument("--sigma-f", dest="sigma_f", type=float)
    f.add_argument("--lik", choices=sorted(LIKELIHOODS))
    f.add_argument("--sigma-n", dest="sigma_n", type=float)
    f.add_argument("--nu", type=float)
    f.add_argument("--mean", choices=sorted(MEANS))
    f.add_argument("--infer", choices=("auto",) + SCHEMES)
    f.add_argument("--interp", type=_parse_k, metavar="K",
                   help="interpolate transitions on K nodes (also accepts K=20)")
    f.add_argument("--optimize", action="store_const", const=True, default=None)
    f.add_argument("--max-evals", dest="max_evals", type=int)
    f.add_argument("--fix", action="append", metavar="PARAM")
    f.add_argument("--warm-start-from", dest="warm_start_from", metavar="MODEL_JSON")
    f.add_argument("--oracle", choices=("none", "dense"), default="none")
    f.add_argument("--oracle-cap", dest="oracle_cap", type=int, default=5000)
    f.add_argument("--cv", type=int, metavar="FOLDS", help="k-fold cross-validation")
    f.add_argument("--parallel-folds", dest="parallel_folds", action="store_true")
    f.add_argument("--model-out", dest="model_out")
    f.add_argument("--report", default="-")
    f.set_defaults(func=cmd_fit)

    q = sub.add_parser("predict", parents=[common], help="predict from a saved model")
    q.add_argument("--model", required=True)
    g = q.add_mutually_exclusive_group(required=True)
    g.add_argument("--at", help="CSV whose first column holds test inputs")
    g.add_argument("--grid", help="start:stop:count")
    q.add_argument("--out", default="-")
    q.set_defaults(func=cmd_predict)

    b = sub.add_parser("bench", parents=[common], help="time fit + predict as n grows")
    b.add_argument("--generator", choices=GENERATORS, default="sinc")
    b.add_argument("--n", default="500,1000,2000", help="comma-separated sizes")
    b.add_argument("--reps", type=int, default=10)
    b.add_argument("--dense-cap", dest="dense_cap", type=int, default=4000)
    b.add_argument("--interp", type=_parse_k, metavar="K")
    b.add_argument("--seed", type=int)
    b.add_argument("--out", default="-")
    b.set_defaults(func=cmd_bench)

    c = sub.add_parser("check", parents=[common], help="state-space vs dense agreement for every likelihood/scheme pair")
    c.add_argument("--n", type=int, default=1000)
    c.add_argument("--seed", type=int)
    c.add_argument("--out")
    c.set_defaults(func=cmd_check)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args.verbose)
    try:
        return args.func(args)
    except (SSGPError, ValueError, OSError, KeyError, configparser.Error) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

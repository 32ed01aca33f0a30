"""Command-line interface: fit a dataset, simulate one, or run the
identity check suite.

    aireml fit      data.csv config.yaml
    aireml simulate config.yaml out.csv
    aireml check    data.csv config.yaml

Exit codes: 0 success, 1 failed checks, 2 input/validation errors,
3 fit did not converge (report still written).
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np
import pandas as pd

from . import information, ingest, likelihood, mme, oracle, predict, solver
from .errors import AiremlError, ConfigError
from .model import Model, Theta, build_H, validate
from .simulate import SimConfig, simulate_y

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_INPUT = 2
EXIT_NO_CONVERGENCE = 3


# ---------------------------------------------------------------------------
# Serialization: every float is written with 17 significant digits so the
# report round-trips bit-exactly; the stdlib encoder cannot override float
# formatting, hence the small emitter below.
# ---------------------------------------------------------------------------


def _f17(x) -> str:
    x = float(x)
    if not np.isfinite(x):
        return "null"
    return format(x, ".17g")


def dumps17(obj, indent: int = 0) -> str:
    pad = "  " * indent
    inner = "  " * (indent + 1)
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _f17(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        return dumps17(obj.tolist(), indent)
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = ",\n".join(inner + dumps17(v, indent + 1) for v in obj)
        return "[\n" + items + "\n" + pad + "]"
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = ",\n".join(f"{inner}{json.dumps(str(k))}: {dumps17(v, indent + 1)}"
                           for k, v in obj.items())
        return "{\n" + items + "\n" + pad + "}"
    raise TypeError(f"cannot serialize {type(obj)!r}")


def _trace_line(rec) -> str:
    theta = ",".join(_f17(v) for v in rec.theta)
    return (f"iter {rec.k} theta={theta} loglik={_f17(rec.loglik)} "
            f"score_norm={_f17(rec.score_norm)} halvings={rec.halvings}")


def build_report_dict(report: predict.FitReport, model: Model,
                      dinfo: ingest.DesignInfo) -> dict:
    return {
        "status": report.status,
        "variant": report.variant,
        "scale": model.spec.scale,
        "n": model.n, "p": model.p, "b": model.b, "m": model.m,
        "parameter_names": list(model.parameter_names()),
        "theta_hat": {"sigma2": report.theta_hat.sigma2,
                      "kappa": report.theta_hat.kappa},
        "se_theta": report.se_theta,
        "info_kind_used": report.info_kind_used,
        "loglik": report.loglik,
        "n_iter": report.n_iter,
        "fixed_effects": {"names": list(dinfo.fixed_names),
                          "estimates": report.tau_hat,
                          "covariance": report.tau_cov},
        "random_effects": {"names": list(dinfo.random_names),
                           "blup": report.u_tilde,
                           "pev_diag": report.u_pev_diag,
                           "pev": report.u_cov},
        "trace": [{"iter": r.k, "theta": r.theta, "loglik": r.loglik,
                   "score_norm": r.score_norm, "halvings": r.halvings,
                   "variant": r.variant} for r in report.trace],
    }


def _print_summary(report: predict.FitReport, model: Model,
                   dinfo: ingest.DesignInfo) -> None:
    print(f"status: {report.status}  variant: {report.variant}  "
          f"iterations: {report.n_iter}")
    print(f"restricted log-likelihood: {report.loglik:.6f}")
    print("variance parameters (estimate +/- se):")
    theta = report.theta_hat.as_vector()
    for name, val, se in zip(model.parameter_names(), theta, report.se_theta):
        print(f"  {name:<20s} {val: .6g} +/- {se:.3g}")
    print("fixed effects:")
    se_tau = np.sqrt(np.diag(report.tau_cov))
    for name, val, se in zip(dinfo.fixed_names, report.tau_hat, se_tau):
        print(f"  {name:<20s} {val: .6g} +/- {se:.3g}")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _read_frame(path: str) -> pd.DataFrame:
    try:
        return pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise ConfigError(f"cannot read dataset {path!r}: {exc}") from exc


def _build_model(data_path: str, config_path: str):
    cfg = ingest.load_config(config_path)
    frame = _read_frame(data_path)
    ds, spec, dinfo = ingest.build_design(frame, cfg)
    return cfg, validate(ds, spec), dinfo


def cmd_fit(data_path: str, config_path: str) -> int:
    try:
        cfg, model, dinfo = _build_model(data_path, config_path)
        if cfg.report_path is None:
            raise ConfigError("missing required key 'output.report'")
        opts = solver.SolveOptions(variant=cfg.variant, tol=cfg.tol,
                                   max_iter=cfg.max_iter, init=cfg.init)
        report = solver.fit(model, opts)
    except AiremlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    with open(cfg.report_path, "w", encoding="utf-8") as fh:
        fh.write(dumps17(build_report_dict(report, model, dinfo)) + "\n")
    if cfg.trace_path is not None:
        with open(cfg.trace_path, "w", encoding="utf-8") as fh:
            for rec in report.trace:
                fh.write(_trace_line(rec) + "\n")
    _print_summary(report, model, dinfo)
    return EXIT_OK if report.converged else EXIT_NO_CONVERGENCE


def cmd_simulate(config_path: str, out_path: str) -> int:
    try:
        cfg = ingest.load_config(config_path)
        frame = ingest.simulated_frame(cfg)
        ds, spec, _ = ingest.build_design(frame, cfg)
        model = validate(ds, spec)
        sim = cfg.sim
        theta = Theta(sigma2=sim.theta_true_sigma2, kappa=np.asarray(sim.theta_true_kappa))
        y = simulate_y(model, SimConfig(theta_true=theta, seed=sim.seed,
                                        tau_true=np.asarray(sim.tau_true)))
    except AiremlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    frame[cfg.response] = y
    frame.to_csv(out_path, index=False, float_format="%.17g")
    print(f"wrote {len(frame)} rows to {out_path}")
    return EXIT_OK


def _run_checks(model: Model, theta: Theta):
    """The identity suite; yields (name, residual, tol) triples."""
    y, X = model.dataset.y, model.dataset.X
    n, p = model.n, model.p
    system = mme.assemble(model, theta)
    P_oracle = oracle.dense_P(model, theta)
    P_mme = mme.projection_dense(system)
    H = build_H(model, theta)

    yield "projection-annihilates-X", float(np.abs(mme.apply_P(system, X)).max()), 1e-9
    yield "P*H*P-equals-P", float(np.abs(P_oracle @ H @ P_oracle - P_oracle).max()), 1e-8
    yield "trace-PH-equals-n-minus-p", abs(float(np.trace(P_oracle @ H)) - (n - p)), 1e-8

    py_o = P_oracle @ y
    denom = max(float(np.abs(py_o).max()), 1e-30)
    yield "Py-two-routes", float(np.abs(mme.apply_P(system, y) - py_o).max()) / denom, 1e-9
    yield "dense-P-two-routes", float(np.abs(P_mme - P_oracle).max()), 1e-9
    yield "woodbury-H-inverse", float(
        np.abs(mme.h_inverse_dense(model, theta) - np.linalg.inv(H)).max()), 1e-9

    io_ = information.observed(model, theta, system=system).values
    if_ = information.fisher(model, theta, system=system).values
    ia_ = information.average(model, theta, system=system).values
    iz_ = information.splitting_residual(model, theta, system=system).values
    scale = max(float(np.abs(io_).max()), 1.0)
    yield "splitting-identity", float(
        np.abs((io_ + if_) / 2.0 - ia_ - iz_).max()) / scale, 1e-9

    ll = likelihood.log_likelihood(model, theta, system=system)
    yield "contrast-form-loglik", abs(oracle.l2_form_loglik(model, theta) - ll), 1e-8

    tp = oracle.transform_pair(X)
    hat = X @ np.linalg.solve(X.T @ X, X.T)
    t_res = max(
        float(np.abs(tp.K1 @ tp.K1.T - hat).max()),
        float(np.abs(tp.K2.T @ X).max()),
        float(np.abs(np.eye(n) - hat - tp.K2 @ tp.K2.T).max()),
        float(np.abs(tp.L1.T @ X - np.eye(p)).max()),
        float(np.abs(tp.L2.T @ X).max()),
        float(np.abs(np.eye(n) - hat
                     - tp.L2 @ np.linalg.solve(tp.L2.T @ tp.L2, tp.L2.T)).max()),
    )
    yield "contrast-transform", t_res, 1e-9
    M = tp.L2.T @ H @ tp.L2
    yield "projection-contrast-route", float(
        np.abs(P_oracle - tp.L2 @ np.linalg.solve(M, tp.L2.T)).max()), 1e-8
    lhs = np.linalg.inv(X.T @ np.linalg.solve(H, X))
    rhs = tp.L1.T @ H @ tp.L1 - tp.L1.T @ H @ tp.L2 @ np.linalg.solve(M, tp.L2.T @ H @ tp.L1)
    yield "gls-covariance-contrast-route", float(np.abs(lhs - rhs).max()), 1e-8

    sc = likelihood.score(model, theta, system=system).as_vector()
    fd = oracle.fd_score(model, theta)
    yield "score-vs-finite-difference", float(
        np.abs(sc - fd).max() / (1.0 + np.abs(sc).max())), 1e-6
    fdh = oracle.fd_hessian(model, theta)
    yield "observed-vs-finite-difference-hessian", float(
        np.abs(io_ + fdh).max() / max(np.abs(io_).max(), 1.0)), 1e-5


def cmd_check(data_path: str, config_path: str) -> int:
    try:
        _, model, _ = _build_model(data_path, config_path)
        if model.n > mme.DENSE_CAP:
            print(f"SKIP all checks: n = {model.n} above the dense cap {mme.DENSE_CAP}")
            return EXIT_OK
        theta = solver.initial_theta(model)
        results = list(_run_checks(model, theta))
    except AiremlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    failed = 0
    for name, residual, tol in results:
        ok = residual <= tol
        failed += 0 if ok else 1
        print(f"{'PASS' if ok else 'FAIL'} {name} residual={residual:.3e} tol={tol:.0e}")
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_CHECK_FAILED


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="aireml",
        description="REML variance-component estimation for linear mixed models")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit a model to a CSV dataset")
    p_fit.add_argument("data", help="CSV dataset with header row")
    p_fit.add_argument("config", help="YAML run configuration")

    p_sim = sub.add_parser("simulate", help="write a synthetic CSV dataset")
    p_sim.add_argument("config", help="YAML run configuration with a simulate section")
    p_sim.add_argument("out", help="output CSV path")

    p_chk = sub.add_parser("check", help="run the matrix-identity check suite")
    p_chk.add_argument("data", help="CSV dataset with header row")
    p_chk.add_argument("config", help="YAML run configuration")

    args = parser.parse_args(argv)
    if args.command == "fit":
        return cmd_fit(args.data, args.config)
    if args.command == "simulate":
        return cmd_simulate(args.config, args.out)
    return cmd_check(args.data, args.config)


if __name__ == "__main__":
    sys.exit(main())

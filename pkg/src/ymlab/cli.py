"""Command-line front end: ``ymlab <subcommand> [options]``.

Exit codes: 0 success, 1 domain error, 2 numerical failure, 64 usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .errors import DomainError, NumericalFailure

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_NUMERICAL = 2
EXIT_USAGE = 64

log = logging.getLogger("ymlab")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # noqa: D401 - argparse hook
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def fmt(x) -> str:
    """Round-trip-safe text for floats (17 significant digits)."""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    if x is None:
        return ""
    return str(x)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        # JSON has no inf/nan; keep them as strings
        return v if math.isfinite(v) else str(v)
    return obj


def dumps(obj) -> str:
    """JSON with floats printed to 17 significant digits."""
    return _encode(_jsonable(obj), 0)


def _encode(obj, indent: int) -> str:
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(k)}: {_encode(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list)) for v in obj):
            return "[" + ", ".join(_encode(v, indent + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + _encode(v, indent + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, float):
        return format(obj, ".17g") if obj != int(obj) or abs(obj) >= 1e16 else format(obj, ".1f")
    return json.dumps(obj)


def write_csv(path: str, header: list[str], rows: list[list]) -> None:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    for r in rows:
        wr.writerow([fmt(v) for v in r])
    _write_text(path, buf.getvalue())


def _write_text(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


class Output:
    """Summary to stdout; files only when ``--out`` is given."""

    def __init__(self, out: str | None, name: str) -> None:
        self.out = out
        self.name = name
        if out is not None:
            os.makedirs(out, exist_ok=True)

    def path(self, fname: str) -> str | None:
        return None if self.out is None else os.path.join(self.out, fname)

    def csv(self, fname: str, header, rows) -> None:
        p = self.path(fname)
        if p is not None:
            write_csv(p, header, rows)

    def summary(self, data: dict) -> None:
        text = dumps(data) + "\n"
        p = self.path(f"{self.name}.json")
        if p is not None:
            _write_text(p, text)
        sys.stdout.write(text)


# --- subcommands -------------------------------------------------------------


def _params(d: int):
    from .constants import make_dimension_params

    return make_dimension_params(d)


def cmd_constants(args) -> dict:
    from .constants import make_coeff_table

    p = _params(args.d)
    r1, r2 = p.quadratic_residuals()
    table = make_coeff_table(p, args.i_max)
    out = p.to_dict()
    out.update({"m": p.m, "quadratic_residuals": [r1, r2], "a": table.a, "C": table.C})
    return out


def cmd_ground_state(args, output: Output) -> dict:
    from .ground_state import solve_ground_state

    p = _params(args.d)
    gs = solve_ground_state(p, xi_max=args.xi_max)
    xi = np.linspace(0.0, 50.0, 5001)
    Q = gs.Q(xi)
    out = {"d": p.d, "q0": gs.q0, "a0": gs.a0, "h_plus": gs.h_plus, "diagnostics": gs.diagnostics}
    if p.d == 10:
        out["max_abs_error_vs_closed_form"] = float(np.max(np.abs(Q + 1.0 / (xi * xi + 1.0))))
    xs = np.geomspace(1e-3, args.xi_max, 400)
    Qs, dQs, LQs, pots, _ = gs.evaluate_all(xs)
    output.csv("ground_state.csv", ["xi", "Q", "dQ", "LambdaQ", "potential"], np.column_stack([xs, Qs, dQs, LQs, pots]).tolist())
    return out


def cmd_quadrature_selftest(args, output: Output) -> dict:
    from .weighted import quadrature_selftest, total_mass, make_weight_context, integrate

    p = _params(args.d)
    rows = quadrature_selftest(p, args.beta, args.k_max)
    ctx = make_weight_context(p, args.beta)
    mass = integrate(ctx, 1.0)
    header = list(rows[0].keys())
    output.csv("quadrature_selftest.csv", header, [[r[k] for k in header] for r in rows])
    worst = max(max(r["laguerre_rel_err"], r["graded_rel_err"]) for r in rows)
    return {"d": p.d, "beta": args.beta, "total_mass": mass, "total_mass_exact": total_mass(p),
            "max_moment_rel_err": worst, "rows": rows}


def cmd_spectrum(args, output: Output) -> dict:
    from .spectrum import build_basis, eigen_residual, eigen_residual_fd
    from .weighted import make_weight_context

    p = _params(args.d)
    basis = build_basis(make_weight_context(p, args.beta), args.i_max)
    G = basis.gram()
    off = G / np.sqrt(np.outer(np.diag(G), np.diag(G))) - np.eye(G.shape[0])
    rows = []
    for i in range(args.i_max + 1):
        rows.append([i, basis.eigenvalues[i], basis.norms[i], eigen_residual(basis, i), eigen_residual_fd(basis, i)])
    output.csv("spectrum.csv", ["i", "eigenvalue", "norm_sq", "residual_exact", "residual_fd"], rows)
    return {
        "d": p.d, "beta": args.beta, "eigenvalues": basis.eigenvalues, "norms": basis.norms,
        "norm_ratio_1_0": basis.norms[1] / basis.norms[0] if args.i_max >= 1 else None,
        "residual_exact": [r[3] for r in rows], "residual_fd": [r[4] for r in rows],
        "orthogonality_max": float(np.max(np.abs(off))),
    }


def cmd_kernel(args, output: Output) -> dict:
    from .ground_state import solve_ground_state
    from .kernel import build_kernel_family

    p = _params(args.d)
    kf = build_kernel_family(solve_ground_state(p), args.j_max)
    ratios = kf.C_hat[1:] / kf.C_hat[:-1]
    exact = kf.C_exact[1:] / kf.C_exact[:-1]
    rows = [[j, kf.C_hat[j], kf.C_exact[j], kf.fit_exponents[j], 2 * j - p.gamma] for j in range(args.j_max + 1)]
    output.csv("kernel.csv", ["j", "C_hat", "C_exact", "fit_exponent", "exact_exponent"], rows)
    return {"d": p.d, "C_hat": kf.C_hat, "C_exact": kf.C_exact, "ratio_hat": ratios, "ratio_exact": exact,
            "ratio_rel_err": np.abs(ratios / exact - 1.0), "roundtrip": kf.roundtrip}


def eigen_point(d: int, beta: float, i: int, b: float, method: str, m0: bool) -> dict:
    """One ``L_b`` eigenvalue; shared by ``eigen-lb`` and the eigen sweep."""
    from .eigen import compute_m0, limit_eigenvalue, match_eigenvalue, matrix_eigensolve
    from .ground_state import solve_ground_state
    from .kernel import build_kernel_family
    from .spectrum import build_basis
    from .weighted import make_weight_context

    p = _params(d)
    gs = solve_ground_state(p)
    ctx = make_weight_context(p, beta)
    row = {"d": d, "beta": beta, "i": i, "b": b, "limit": limit_eigenvalue(p, beta, i)}
    if method in ("shooting", "both"):
        kf = build_kernel_family(gs, max(i, 1))
        basis = build_basis(ctx, i + 1)
        res = match_eigenvalue(kf, basis, i, b, beta)
        row.update({"lambda": res.lam, "lambda_tilde": res.lambda_tilde, "match_residual": res.match_residual})
        if m0:
            row["m0"] = compute_m0(kf, basis, b, beta)["m0"]
    if method in ("matrix", "both"):
        mat = matrix_eigensolve(gs, ctx, b, i + 1)[i]
        row.update({"lambda_matrix": mat.lam, "matrix_error_estimate": mat.diagnostics["error_estimate"],
                    "sign_changes": mat.diagnostics["sign_changes"]})
        if "lambda" not in row:
            row["lambda"] = mat.lam
            row["lambda_tilde"] = mat.lam - row["limit"]
    return row


def cmd_eigen_lb(args, output: Output) -> dict:
    rows = [eigen_point(args.d, args.beta, args.i, b, args.method, args.m0) for b in args.b]
    header = sorted({k for r in rows for k in r})
    output.csv("eigen_lb.csv", header, [[r.get(k) for k in header] for r in rows])
    return {"rows": rows}


def _setup_from_config(cfg):
    from .discrete import make_radial_grid
    from .ground_state import solve_ground_state
    from .simulation import ShrinkParams, make_setup

    p = _params(cfg.d)
    gs = solve_ground_state(p)
    grid = make_radial_grid(cfg.grid.y_min, cfg.grid.y_max, cfg.grid.n_log)
    shrink = ShrinkParams(cfg.shrink.A, cfg.shrink.eta, cfg.shrink.eta_tilde, cfg.shrink.delta)
    return make_setup(gs, cfg.ell, grid, cfg.m0, shrink, cfg.step_tol, cfg.newton_tol)


def simulate(cfg, out: str | None = None, resume: str | None = None) -> dict:
    """Run one configuration; writes trace, summary and checkpoint under ``out``."""
    from . import checkpoint
    from .simulation import (
        ShrinkMonitor, build_initial_data, compatibility_residuals, fit_trace, modulation_residual, run, tau0_for_b0,
    )

    setup = _setup_from_config(cfg)
    p = setup.p
    tau0 = cfg.tau0 if cfg.tau0 is not None else tau0_for_b0(setup, cfg.b0)
    digest = cfg.digest()
    report = {}
    if resume:
        state, stored = checkpoint.read(resume)
        if stored != digest:
            raise DomainError("checkpoint was written by a different configuration")
    else:
        state, report = build_initial_data(setup, tau0, np.array(cfg.dvec) if cfg.dvec else None)
    ckpt_path = None if out is None else os.path.join(out, "checkpoint.bin")

    def on_ckpt(s):
        if ckpt_path is not None:
            checkpoint.write(ckpt_path, s, digest)

    trace, final = run(
        setup, state, tau0 + cfg.tau_span, ShrinkMonitor(setup),
        checkpoint_every=cfg.checkpoint_every, on_checkpoint=on_ckpt, stop_on_escape=cfg.stop_on_escape,
    )
    if ckpt_path is not None:
        checkpoint.write(ckpt_path, final, digest)
        cols, rows = trace.table()
        write_csv(os.path.join(out, "trace.csv"), cols, rows)
    summary = {
        "config": cfg.to_dict(), "status": trace.status, "reason": trace.reason, "tau0": tau0,
        "tau_end": final.tau, "steps": final.steps, "m0": setup.m0, "initial_data": report,
        "tau_escape": trace.tau_escape,
        "escape_time": None if trace.tau_escape is None else trace.tau_escape - tau0,
        "shrink_params": cfg.to_dict()["shrink"],
    }
    mu = trace.array("mu")
    summary["mu_decades"] = float(np.log10(mu[0] / mu[-1]))
    if setup.ell == 1 and trace.rows:
        summary["max_compatibility_residual"] = float(np.max(compatibility_residuals(trace, setup)))
        try:
            summary["rate_fit"] = fit_trace(trace).to_dict()
            summary["target_exponent"] = 2.0 / p.alpha
            summary["modulation_residual_rel"] = modulation_residual(trace, p, tau0 + 3.0) / abs(1.0 - 2.0 / p.alpha)
        except NumericalFailure as exc:
            summary["rate_fit"] = {"error": str(exc)}
    return summary


def cmd_simulate(args, output: Output) -> dict:
    from .config import RunConfig

    with open(args.config, encoding="utf-8") as fh:
        cfg = RunConfig.from_json(fh.read())
    return simulate(cfg, output.out, args.resume)


def read_trace_csv(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        cols = {h: [] for h in header}
        for row in rd:
            for h, v in zip(header, row):
                cols[h].append(float(v) if v != "" else float("nan"))
    return {k: np.array(v) for k, v in cols.items()}


def cmd_fit_rate(args, output: Output) -> dict:
    from .simulation import fit_blowup_rate

    cols = read_trace_csv(args.trace)
    missing = [c for c in ("tau", "t", "mu", "lambda", "beta") if c not in cols]
    if missing:
        raise DomainError(f"trace lacks columns: {', '.join(missing)}")
    fit = fit_blowup_rate(cols["tau"], cols["t"], cols["mu"], cols["lambda"], cols["beta"],
                          skip_decades=args.skip_decades, min_decades=args.min_decades)
    return fit.to_dict()


# --- sweep -------------------------------------------------------------------

EIGEN_BASE = {"d": 11, "beta": 0.5, "i": 0, "b": 1e-2, "method": "shooting", "m0": False}
EIGEN_RESULT_COLUMNS = ["status", "lambda", "lambda_tilde", "limit", "error"]
SIM_RESULT_COLUMNS = ["status", "escape_time", "exponent", "mu_decades", "error"]


def _point_key(point: dict) -> str:
    return json.dumps(point, sort_keys=True, separators=(",", ":"))


def _run_point(kind: str, base: dict, point: dict) -> dict:
    merged = {**base, **point}
    try:
        if kind == "eigen-lb":
            unknown = set(merged) - set(EIGEN_BASE)
            if unknown:
                raise DomainError(f"unknown eigen-lb keys: {sorted(unknown)}")
            q = {**EIGEN_BASE, **merged}
            row = eigen_point(q["d"], q["beta"], q["i"], q["b"], q["method"], q["m0"])
            return {"status": "ok", **row}
        from .config import RunConfig

        cfg = RunConfig.from_dict(merged)
        s = simulate(cfg)
        fit = s.get("rate_fit", {})
        return {"status": s["status"], "escape_time": s["escape_time"], "exponent": fit.get("exponent"),
                "mu_decades": s["mu_decades"]}
    except (DomainError, NumericalFailure) as exc:
        return {"status": "failed", "error": f"{type(exc).__name__}: {exc}"}


def worker_count() -> int:
    raw = os.environ.get("YMLAB_THREADS", "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise DomainError(f"YMLAB_THREADS must be an integer, got {raw!r}") from exc
    if n < 1:
        raise DomainError("YMLAB_THREADS must be at least 1")
    return n


def sweep(cfg, workers: int = 1) -> tuple[list[str], list[list]]:
    """Deduplicated points, run in parallel, rows sorted by point key."""
    keys = {}
    for pt in cfg.points:
        k = _point_key(pt)
        if k in keys:
            log.warning("duplicate sweep point dropped: %s", k)
            continue
        keys[k] = pt
    order = sorted(keys)
    points = [keys[k] for k in order]
    param_cols = sorted({c for pt in points for c in pt})
    result_cols = EIGEN_RESULT_COLUMNS if cfg.kind == "eigen-lb" else SIM_RESULT_COLUMNS
    if workers > 1 and len(points) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_run_point, [cfg.kind] * len(points), [cfg.base] * len(points), points))
    else:
        results = [_run_point(cfg.kind, cfg.base, pt) for pt in points]
    rows = [[pt.get(c) for c in param_cols] + [res.get(c) for c in result_cols] for pt, res in zip(points, results)]
    return param_cols + result_cols, rows


def cmd_sweep(args, output: Output) -> dict:
    from .config import SweepConfig

    with open(args.config, encoding="utf-8") as fh:
        cfg = SweepConfig.from_json(fh.read())
    header, rows = sweep(cfg, worker_count())
    output.csv("sweep.csv", header, rows)
    return {"kind": cfg.kind, "n_points": len(rows), "columns": header, "rows": rows}


# --- dispatch ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ymlab", description="Type-II blowup laboratory for the radial Yang-Mills heat flow.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--out", default=None, help="output directory")
        return sp

    sp = add("constants", "dimension constants and coefficient table")
    sp.add_argument("--d", type=int, required=True)
    sp.add_argument("--i-max", type=int, default=4)

    sp = add("ground-state", "ground state profile and far-field constants")
    sp.add_argument("--d", type=int, required=True)
    sp.add_argument("--xi-max", type=float, default=1e3)

    sp = add("quadrature-selftest", "Gamma-moment oracle for the weighted quadrature")
    sp.add_argument("--d", type=int, required=True)
    sp.add_argument("--beta", type=float, default=0.5)
    sp.add_argument("--k-max", type=int, default=20)

    sp = add("spectrum", "limit-operator eigenbasis diagnostics")
    sp.add_argument("--d", type=int, required=True)
    sp.add_argument("--beta", type=float, default=0.5)
    sp.add_argument("--i-max", type=int, default=4)

    sp = add("kernel", "kernel generator family")
    sp.add_argument("--d", type=int, required=True)
    sp.add_argument("--j-max", type=int, default=3)

    sp = add("eigen-lb", "eigenvalues of the time-frozen operator")
    sp.add_argument("--d", type=int, required=True)
    sp.add_argument("--beta", type=float, default=0.5)
    sp.add_argument("--i", type=int, default=0)
    sp.add_argument("--b", type=float, nargs="+", required=True)
    sp.add_argument("--method", choices=("shooting", "matrix", "both"), default="shooting")
    sp.add_argument("--m0", action="store_true", help="also compute m0 at each b")

    sp = add("simulate", "modulated blowup run from a JSON config")
    sp.add_argument("--config", required=True)
    sp.add_argument("--resume", default=None, help="checkpoint to continue from")

    sp = add("fit-rate", "fit the blowup exponent from a trace CSV")
    sp.add_argument("--trace", required=True)
    sp.add_argument("--skip-decades", type=float, default=1.0)
    sp.add_argument("--min-decades", type=float, default=4.0)

    sp = add("sweep", "parallel parameter sweep from a JSON config")
    sp.add_argument("--config", required=True)
    return parser


HANDLERS = {
    "ground-state": cmd_ground_state,
    "quadrature-selftest": cmd_quadrature_selftest,
    "spectrum": cmd_spectrum,
    "kernel": cmd_kernel,
    "eigen-lb": cmd_eigen_lb,
    "simulate": cmd_simulate,
    "fit-rate": cmd_fit_rate,
    "sweep": cmd_sweep,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_help())
    except UsageError as exc:
        sys.stderr.write(str(exc) + "\n")
        return EXIT_USAGE
    try:
        output = Output(args.out, args.command.replace("-", "_"))
        if args.command == "constants":
            data = cmd_constants(args)
        else:
            data = HANDLERS[args.command](args, output)
        output.summary(data)
    except DomainError as exc:
        sys.stderr.write(f"domain error: {exc}\n")
        return EXIT_DOMAIN
    except NumericalFailure as exc:
        sys.stderr.write(f"numerical failure: {type(exc).__name__}: {exc}\n")
        return EXIT_NUMERICAL
    except OSError as exc:
        sys.stderr.write(f"i/o error: {exc}\n")
        return EXIT_DOMAIN
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())

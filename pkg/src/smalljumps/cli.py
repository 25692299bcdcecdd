"""Command-line front end: configuration, orchestration, and artifacts.

Every experiment subcommand resolves its parameters into a plain dict,
echoes that dict to ``config.json``, and writes results as UTF-8 CSV with a
mandatory header row.  Artifacts land via a temp-file rename, so an
interrupted run never leaves a partial file, and ``manifest.json`` lists a
checksum for each one.  Re-running an emitted config with
``smalljumps --config out/config.json`` reproduces the artifacts bit for
bit, and worker counts never change results because all randomness is keyed
by path index.

Exit codes: 0 success, 2 configuration error, 3 hypothesis-check failure,
4 numerical or statistical failure.  Simulation subcommands run the model
hypothesis checks first unless ``--skip-checks`` is passed.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import time

import numpy as np

from . import __version__
from .distance import TestFunctionFamily, distance_curve, rate_fit
from .malliavin import laplace_bound_check, nondegeneracy_diagnostics
from .measure import a_eps, b_eps, check_hypotheses, eta_p
from .models import load_model, make_constant_model, make_sine_model
from .simulate import PathConfig, run_terminals
from .splitting import MinorizationError, splitting_report

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_HYPOTHESIS = 3
EXIT_NUMERICAL = 4

#: Subcommands that simulate paths and therefore get the hypothesis
#: pre-check; closed-form and file-only subcommands skip it.
_SIMULATING = {"simulate", "distance", "malliavin", "laplace-check",
               "splitting-check"}


class ConfigError(Exception):
    """Bad parameter or file; maps to exit code 2."""


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


def _parse_floats(text: str, flag: str) -> list[float]:
    try:
        return [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as exc:
        raise ConfigError(f"{flag}: could not parse {text!r} as "
                          "comma-separated numbers") from exc


def _atomic_bytes(path: str, data: bytes) -> None:
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


class ArtifactWriter:
    """Collects artifacts for one run and emits the manifest.

    CSV cells are written with ``repr`` float formatting (shortest
    round-trip), which is what makes rerun checksums comparable down to the
    byte.
    """

    def __init__(self, out_dir: str):
        os.makedirs(out_dir, exist_ok=True)
        self.out_dir = out_dir
        self.checksums: dict[str, str] = {}
        self.timings: dict[str, float] = {}

    def _store(self, name: str, data: bytes) -> None:
        _atomic_bytes(os.path.join(self.out_dir, name), data)
        self.checksums[name] = hashlib.sha256(data).hexdigest()

    def write_csv(self, name: str, header: list[str], rows: list[tuple]) -> None:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([x if isinstance(x, str) else repr(x) if
                             isinstance(x, float) else str(x) for x in row])
        self._store(name, buf.getvalue().encode("utf-8"))

    def write_json(self, name: str, payload: dict) -> None:
        data = (json.dumps(payload, indent=2, sort_keys=True) + "\n").encode("utf-8")
        self._store(name, data)

    def finish(self, subcommand: str, params: dict) -> None:
        config = {"subcommand": subcommand, "params": params}
        self.write_json("config.json", config)
        canonical = json.dumps(config, sort_keys=True).encode("utf-8")
        manifest = {
            "config_hash": hashlib.sha256(canonical).hexdigest(),
            "version": __version__,
            "outputs": dict(sorted(self.checksums.items())),
            "timings": {k: round(v, 6) for k, v in self.timings.items()},
        }
        data = (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode("utf-8")
        _atomic_bytes(os.path.join(self.out_dir, "manifest.json"), data)


def _writer_for(args) -> ArtifactWriter | None:
    return ArtifactWriter(args.out) if args.out else None


def _resolve_model(args):
    """Model from ``--model``, else a built-in keyed by ``--rho``.

    ``eta`` defaults to the unit-amplitude constant model so that its output
    is the bare measure moment; every other subcommand defaults to the sine
    model the experiments are specified on.
    """
    if args.model is not None:
        _require(args.rho is None,
                 "pass either --model or --rho, not both")
        _require(os.path.exists(args.model), f"model file not found: {args.model}")
        return load_model(args.model)
    rho = 0.5 if args.rho is None else args.rho
    _require(0.0 <= rho < 1.0, f"rho out of [0, 1): {rho}")
    if args.subcommand == "eta":
        return make_constant_model(rho=rho, scale=1.0)
    return make_sine_model(rho=rho)


def _check_eps(eps: float) -> None:
    _require(0.0 < eps <= 1.0, f"eps out of (0, 1]: {eps}")


def _params(args) -> dict:
    skip = {"func", "config"}
    out = {}
    for key, val in vars(args).items():
        if key in skip:
            continue
        out[key] = list(val) if isinstance(val, tuple) else val
    return out


# -- subcommand handlers ---------------------------------------------------


def _cmd_eta(args, model) -> int:
    _check_eps(args.eps)
    _require(args.p > model.rho,
             f"moment order p={args.p} must exceed rho={model.rho}")
    print(f"{eta_p(model, args.p, args.eps):.5e}")
    return EXIT_OK


def _cmd_coeffs(args, model) -> int:
    _check_eps(args.eps)
    xs = np.linspace(args.x_lo, args.x_hi, args.x_n)
    rows = [(float(x), b_eps(model, args.s, float(x), args.eps),
             a_eps(model, args.s, float(x), args.eps)) for x in xs]
    writer = _writer_for(args)
    if writer is None:
        print("x,b_eps,a_eps")
        for x, b, a in rows:
            print(f"{x!r},{b!r},{a!r}")
    else:
        t0 = time.perf_counter()
        writer.write_csv("coeffs.csv", ["x", "b_eps", "a_eps"], rows)
        writer.timings["write"] = time.perf_counter() - t0
        writer.finish("coeffs", _params(args))
    return EXIT_OK


def _cmd_check(args, model) -> int:
    report = check_hypotheses(model)
    print(report.summary())
    writer = _writer_for(args)
    if writer is not None:
        writer.write_csv("hypotheses.csv",
                         ["condition", "worst_margin", "pass", "detail"],
                         [tuple(r.values()) for r in report.rows()])
        writer.finish("check", _params(args))
    return EXIT_OK if report.passed else EXIT_HYPOTHESIS


def _cmd_splitting_check(args, model) -> int:
    indices = [int(k) for k in _parse_floats(args.bands, "--bands")]
    t0 = time.perf_counter()
    checks = splitting_report(model, indices, args.n_paths, seed=args.seed)
    elapsed = time.perf_counter() - t0
    for c in checks:
        flag = "ok " if c.ok else "FAIL"
        print(f"[{flag}] band {c.index:>3}: ks={c.ks_stat:.5f} "
              f"p_split={c.p_split:.5f} expected={c.p_split_expected:.5f} "
              f"(3 SE = {3 * c.binomial_se:.5f})")
    writer = _writer_for(args)
    if writer is not None:
        writer.timings["run"] = elapsed
        writer.write_csv(
            "splitting.csv",
            ["band", "n", "ks_stat", "p_split", "p_split_expected",
             "binomial_se", "ok"],
            [(c.index, c.n, c.ks_stat, c.p_split, c.p_split_expected,
              c.binomial_se, str(c.ok).lower()) for c in checks])
        writer.finish("splitting-check", _params(args))
    return EXIT_OK if all(c.ok for c in checks) else EXIT_NUMERICAL


def _cmd_simulate(args, model) -> int:
    _check_eps(args.eps)
    cfg = PathConfig(x0=args.x0, T=args.T, eps=args.eps, n_steps=args.n_steps,
                     scheme=args.scheme, seed=args.seed)
    t0 = time.perf_counter()
    terminals = run_terminals(model, cfg, args.n_paths, workers=args.workers)
    elapsed = time.perf_counter() - t0
    mean = float(terminals.mean())
    se = float(terminals.std(ddof=1) / math.sqrt(args.n_paths))
    print(f"n={args.n_paths} scheme={args.scheme} eps={args.eps} "
          f"mean={mean:.6f} se={se:.2e} ({elapsed:.1f}s)")
    writer = _writer_for(args)
    if writer is not None:
        writer.timings["run"] = elapsed
        writer.write_csv("terminals.csv", ["path_index", "x_T"],
                         [(i, float(v)) for i, v in enumerate(terminals)])
        writer.finish("simulate", _params(args))
    return EXIT_OK


def _cmd_distance(args, model) -> int:
    eps_grid = _parse_floats(args.eps_grid, "--eps-grid")
    _require(len(eps_grid) > 0, "--eps-grid is empty")
    for eps in eps_grid:
        _check_eps(eps)
    cfg = PathConfig(x0=args.x0, T=args.T, n_steps=args.n_steps, seed=args.seed)
    t0 = time.perf_counter()
    report = distance_curve(model, cfg, eps_grid, args.n_paths,
                            eps_ref=args.eps_ref, n_replicas=args.n_replicas,
                            workers=args.workers)
    elapsed = time.perf_counter() - t0
    for row in report.rows:
        print(f"eps={row.eps:<7g} d3={row.d3:.4e}~{row.d3_stderr:.1e} "
              f"trunc={row.trunc:.4e}~{row.trunc_stderr:.1e} "
              f"tv={row.tv:.4f}~{row.tv_stderr:.4f}")
    for channel, fit in report.fits.items():
        if fit.ok:
            print(f"fit[{channel}]: slope={fit.slope:.4f} "
                  f"r2={fit.r_squared:.4f} n={fit.n_used}")
        else:
            print(f"fit[{channel}]: refused ({fit.flag})")
    writer = _writer_for(args)
    if writer is not None:
        writer.timings["run"] = elapsed
        writer.write_csv(
            "distance.csv",
            ["eps", "d3", "d3_stderr", "d3_function", "trunc", "trunc_stderr",
             "trunc_function", "tv", "tv_stderr", "eta3", "eta1"],
            [(r.eps, r.d3, r.d3_stderr, r.d3_function, r.trunc,
              r.trunc_stderr, r.trunc_function, r.tv, r.tv_stderr,
              r.eta3, r.eta1) for r in report.rows])
        writer.write_csv(
            "rates.csv",
            ["channel", "slope", "intercept", "r_squared", "n_used", "flag",
             "excluded"],
            [(ch, fit.slope, fit.intercept, fit.r_squared, fit.n_used,
              fit.flag or "", ";".join(repr(e) for e in fit.excluded))
             for ch, fit in report.fits.items()])
        if args.emit_plot_data:
            def _ln(v: float) -> object:
                return math.log(v) if v > 0 else ""
            writer.write_csv(
                "plot_distance.csv",
                ["ln_eps", "ln_d3", "ln_tv", "ln_eta3"],
                [(math.log(r.eps), _ln(r.d3), _ln(r.tv), _ln(r.eta3))
                 for r in report.rows])
        writer.finish("distance", _params(args))
    return EXIT_OK


def _cmd_rate(args, model) -> int:
    _require(os.path.exists(args.input), f"input file not found: {args.input}")
    value_col = {"d3": "d3", "trunc": "trunc", "tv": "tv"}[args.channel]
    err_col = f"{value_col}_stderr"
    rows = []
    with open(args.input, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        _require(reader.fieldnames is not None
                 and {"eps", value_col, err_col} <= set(reader.fieldnames),
                 f"{args.input} lacks columns eps/{value_col}/{err_col}")
        for rec in reader:
            rows.append((float(rec["eps"]), float(rec[value_col]),
                         float(rec[err_col])))
    fit = rate_fit(rows)
    if fit.ok:
        print(f"slope={fit.slope:.4f} intercept={fit.intercept:.4f} "
              f"r2={fit.r_squared:.4f} n={fit.n_used}")
    else:
        print(f"refused ({fit.flag}); excluded={list(fit.excluded)}")
    writer = _writer_for(args)
    if writer is not None:
        writer.write_csv(
            "rates.csv",
            ["channel", "slope", "intercept", "r_squared", "n_used", "flag",
             "excluded"],
            [(args.channel, fit.slope, fit.intercept, fit.r_squared,
              fit.n_used, fit.flag or "",
              ";".join(repr(e) for e in fit.excluded))])
        writer.finish("rate", _params(args))
    return EXIT_OK


def _cmd_malliavin(args, model) -> int:
    levels = _parse_floats(args.bands, "--bands")
    _require(all(m > 1.0 for m in levels), "band ceilings must exceed 1")
    p_list = _parse_floats(args.p_list, "--p-list")
    t0 = time.perf_counter()
    report = nondegeneracy_diagnostics(
        model, levels, args.T, p_list, args.n_paths, seed=args.seed,
        n_steps=args.n_steps, workers=args.workers, n_boot=args.n_boot)
    elapsed = time.perf_counter() - t0
    for row in report.rows:
        tail = "  heavy-tail" if row.heavy_tail else ""
        print(f"M={row.M:<6g} p={row.p:g} E[sigma^-p]={row.inv_moment:.4e} "
              f"ci=[{row.ci_lo:.4e}, {row.ci_hi:.4e}] "
              f"degenerate={row.degeneracy_count}{tail}")
    for warning in report.warnings:
        print(f"warning: {warning}")
    for p, growing in report.growth_flags.items():
        status = "grows with M" if growing else "stable in M"
        print(f"inverse moment p={p:g}: {status}")
    writer = _writer_for(args)
    if writer is not None:
        writer.timings["run"] = elapsed
        writer.write_csv(
            "malliavin.csv",
            ["M", "p", "inv_moment", "ci_lo", "ci_hi", "degeneracy_count"],
            [(row.M, row.p, row.inv_moment, row.ci_lo, row.ci_hi,
              row.degeneracy_count) for row in report.rows])
        writer.finish("malliavin", _params(args))
    return EXIT_OK


def _cmd_laplace_check(args, model) -> int:
    _require(args.M > 1.0, f"band ceiling M must exceed 1, got {args.M}")
    if args.s_grid:
        s_grid = np.array(_parse_floats(args.s_grid, "--s-grid"))
    else:
        s_grid = np.logspace(-2.0, 2.0, 20)
    t0 = time.perf_counter()
    report = laplace_bound_check(model, args.M, args.T, s_grid, args.n_paths,
                                 seed=args.seed, workers=args.workers)
    elapsed = time.perf_counter() - t0
    bad = [row for row in report.rows if not row.ok]
    for row in report.rows:
        flag = "ok " if row.ok else "FAIL"
        print(f"[{flag}] s={row.s:<12.6g} empirical={row.empirical:.6f} "
              f"bound={row.bound:.6f} se={row.stderr:.2e}")
    for g in report.growth:
        est = "" if g.estimate is None else f" closed-form={g.estimate:.4f}"
        print(f"plateau measure at u={g.u:g}: m={g.m_value:.4f} "
              f"ratio-to-log={g.ratio:.4f}{est}")
    print("plateau measure grows beyond every multiple of log(u): "
          f"{report.growing}")
    writer = _writer_for(args)
    if writer is not None:
        writer.timings["run"] = elapsed
        writer.write_csv("laplace.csv", ["s", "emp_laplace", "bound"],
                         [(row.s, row.empirical, row.bound)
                          for row in report.rows])
        writer.finish("laplace-check", _params(args))
    return EXIT_OK if not bad else EXIT_NUMERICAL


# -- parser and dispatch ---------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", default=None,
                        help="model file (YAML); default is the sine model")
    common.add_argument("--rho", type=float, default=None,
                        help="stability index for the default model")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("--out", default=None,
                        help="artifact directory; created if missing")
    common.add_argument("--emit-plot-data", action="store_true",
                        help="also write log-log plot columns where supported")
    common.add_argument("--skip-checks", action="store_true",
                        help="skip the hypothesis pre-check before "
                             "simulation subcommands")

    parser = argparse.ArgumentParser(
        prog="smalljumps",
        description="Monte Carlo toolkit for jump SDEs with Gaussian "
                    "substitution of small jumps")
    parser.add_argument("--config", default=None,
                        help="re-run an emitted config.json exactly")
    sub = parser.add_subparsers(dest="subcommand")

    p = sub.add_parser("eta", parents=[common],
                       help="print the envelope moment eta_p(eps)")
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--eps", type=float, required=True)
    p.set_defaults(func=_cmd_eta)

    p = sub.add_parser("coeffs", parents=[common],
                       help="table of substituted drift and variance")
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--s", type=float, default=0.0)
    p.add_argument("--x-lo", type=float, default=-3.0)
    p.add_argument("--x-hi", type=float, default=9.0)
    p.add_argument("--x-n", type=int, default=25)
    p.set_defaults(func=_cmd_coeffs)

    p = sub.add_parser("check", parents=[common],
                       help="verify the standing model hypotheses")
    p.set_defaults(func=_cmd_check)

    p = sub.add_parser("splitting-check", parents=[common],
                       help="two-sample identity check of the band splitting")
    p.add_argument("--bands", default="1,2,5,10",
                   help="comma-separated unit band indices")
    p.add_argument("--n-paths", type=int, default=100_000,
                   help="draws per side")
    p.set_defaults(func=_cmd_splitting_check)

    p = sub.add_parser("simulate", parents=[common],
                       help="terminal samples of one scheme")
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--n-paths", type=int, default=10_000)
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--x0", type=float, default=1.0)
    p.add_argument("--n-steps", type=int, default=512)
    p.add_argument("--scheme", default="gaussian_substitution",
                   choices=["gaussian_substitution", "truncation_only",
                            "reference"])
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("distance", parents=[common],
                       help="coupled distance curve over an eps grid")
    p.add_argument("--eps-grid", default="0.4,0.2,0.1,0.05")
    p.add_argument("--n-paths", type=int, default=100_000)
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--x0", type=float, default=1.0)
    p.add_argument("--n-steps", type=int, default=256)
    p.add_argument("--n-replicas", type=int, default=4)
    p.add_argument("--eps-ref", type=float, default=None,
                   help="reference level; default is min(eps)/8")
    p.set_defaults(func=_cmd_distance)

    p = sub.add_parser("rate", parents=[common],
                       help="log-log rate fit of an emitted distance table")
    p.add_argument("--input", required=True, help="distance.csv path")
    p.add_argument("--channel", default="d3", choices=["d3", "trunc", "tv"])
    p.set_defaults(func=_cmd_rate)

    p = sub.add_parser("malliavin", parents=[common],
                       help="inverse-moment stability of the flow covariance")
    p.add_argument("--bands", default="2,4,8,16",
                   help="comma-separated band ceilings M")
    p.add_argument("--p-list", default="1")
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--n-paths", type=int, default=10_000)
    p.add_argument("--n-steps", type=int, default=256)
    p.add_argument("--n-boot", type=int, default=1000)
    p.set_defaults(func=_cmd_malliavin)

    p = sub.add_parser("laplace-check", parents=[common],
                       help="empirical Laplace transform against its bound")
    p.add_argument("--M", type=float, default=4.0)
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--s-grid", default=None,
                   help="comma-separated s values; default logspace(-2,2,20)")
    p.add_argument("--n-paths", type=int, default=100_000)
    p.set_defaults(func=_cmd_laplace_check)

    return parser


def _load_config(path: str) -> argparse.Namespace:
    _require(os.path.exists(path), f"config file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(
                f"{path}: invalid JSON at line {exc.lineno}, column "
                f"{exc.colno}") from exc
    for key in ("subcommand", "params"):
        _require(key in payload, f"{path}: missing key {key!r}")
    handlers = {
        "eta": _cmd_eta, "coeffs": _cmd_coeffs, "check": _cmd_check,
        "splitting-check": _cmd_splitting_check, "simulate": _cmd_simulate,
        "distance": _cmd_distance, "rate": _cmd_rate,
        "malliavin": _cmd_malliavin, "laplace-check": _cmd_laplace_check,
    }
    name = payload["subcommand"]
    _require(name in handlers, f"{path}: unknown subcommand {name!r}")
    ns = argparse.Namespace(**payload["params"])
    ns.subcommand = name
    ns.func = handlers[name]
    return ns


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.config is not None:
            _require(args.subcommand is None,
                     "--config replaces the subcommand; pass one or the other")
            args = _load_config(args.config)
        elif args.subcommand is None:
            parser.print_help()
            return EXIT_CONFIG

        model = _resolve_model(args)
        if args.subcommand in _SIMULATING and not args.skip_checks:
            report = check_hypotheses(model)
            if not report.passed:
                for res in report:
                    if not res.passed:
                        print(f"hypothesis check failed: {res.condition} "
                              f"(worst margin {res.worst_margin:+.3e})",
                              file=sys.stderr)
                return EXIT_HYPOTHESIS
        return args.func(args, model)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MinorizationError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except RuntimeError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``stochapprox {run,check,series,finprob}``."""

from __future__ import annotations

import argparse
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import checker as ck
from . import config as cfg
from . import process as pe
from . import series as sl
from .errors import StochApproxError
from .finprob_suite import format_table, run_suite

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


class UsageError(Exception):
    pass


def parse_seeds(text: str, base: int = 0) -> range:
    try:
        if ".." in text:
            lo, hi = (int(t) for t in text.split("..", 1))
        else:
            lo = hi = int(text)
    except ValueError:
        raise UsageError(f"bad seed range {text!r}; expected A..B") from None
    if hi < lo or lo < 0:
        raise UsageError(f"empty or negative seed range {text!r}")
    return range(lo + base, hi + base + 1)


def parse_int_list(text: str | None) -> tuple:
    if not text:
        return ()
    try:
        return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise UsageError(f"bad integer list {text!r}") from None


def _timestamp(args):
    if args.no_timestamp:
        return None
    return datetime.now(timezone.utc).replace(microsecond=0).isoformat()


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_run(args) -> int:
    lp = cfg.load_problem(args.spec)
    seeds = parse_seeds(args.seeds, args.seed_base)
    if args.horizon < 1:
        raise UsageError("horizon must be >= 1")
    cps = parse_int_list(args.checkpoints)
    report = pe.monte_carlo_convergence(lp.spec, seeds, args.horizon, args.eps, cps, jobs=args.jobs)
    _emit(report.to_json(_timestamp(args)), args.out)
    if args.trajectories:
        outdir = Path(args.trajectories)
        outdir.mkdir(parents=True, exist_ok=True)
        for tr in pe.simulate_batch(lp.spec, seeds, args.horizon):
            with open(outdir / f"seed_{tr.seed}.csv", "w") as fh:
                tr.write_csv(fh)
    return EXIT_OK


def cmd_check(args) -> int:
    lp = cfg.load_problem(args.spec)
    loaded = cfg.load_params(args.params, lp, mode=args.mode, horizon=args.horizon)
    conf = loaded.config
    if args.jobs != 1:
        conf = cfg.certify_config({k: getattr(conf, k) for k in conf.__dataclass_fields__}, jobs=args.jobs)
    if args.seed_base:
        base = args.seed_base
        conf = cfg.certify_config({k: getattr(conf, k) for k in conf.__dataclass_fields__},
                                  mc_seeds=tuple(s + base for s in conf.mc_seeds))
    cert = ck.certify(lp.spec, loaded.params, lp.spec.x_star, conf)
    _emit(cert.to_json(_timestamp(args)), args.out)
    for tag in cert.ledger.failing():
        print(f"{tag}: fail", file=sys.stderr)
    return EXIT_OK if cert.passed else EXIT_FAIL


def _write_seq(values, out):
    if out:
        with open(out, "w") as fh:
            sl.write_csv_sequence(values, fh)


def cmd_series(args) -> int:
    a = sl.parse_sequence(args.a)
    if args.series_cmd == "rm-check":
        r = sl.validate_rm_schedule(a, args.horizon, args.tol, args.div_threshold)
        mark = lambda ok: "PASS" if ok else "FAIL"  # noqa: E731
        lines = [
            f"a_n -> 0        {mark(r.tends_to_zero)}  last-decile max {r.last_decile_max:.6e} (tol {r.tol:g})",
            f"sum a_n = inf   {mark(r.sum_diverges.diverges)}  S_N {r.sum_diverges.partial_sum:.6f} "
            f"(threshold {args.div_threshold:g}, {r.sum_diverges.kind})",
            f"sum a_n^2 < inf {mark(r.sum_sq_converges.converges)}  tail residual "
            f"{r.sum_sq_converges.residual:.6e} ({r.sum_sq_converges.kind})",
        ]
        _emit("\n".join(lines) + "\n", args.out)
        return EXIT_OK if r.ok else EXIT_FAIL
    if args.series_cmd == "dubois":
        b = sl.du_bois_reymond_companion(a, args.horizon, tol=args.tol, div_threshold=args.div_threshold)
        vals = b.values(args.horizon)
        weighted = float(sl.partial_sums(a.values(args.horizon) * vals, args.horizon)[-1])
        r0 = float(a.values(args.horizon).sum())
        print(f"sum a_n b_n {weighted:.12g}  bound 2 sqrt(r_0) {2 * r0 ** 0.5:.12g}  b_N {vals[-1]:.6g}")
        _write_seq(vals, args.out)
        return EXIT_OK
    rho = sl.abel_dini_rho(a, args.horizon)
    vals = rho.values(args.horizon)
    weighted = float(sl.partial_sums(a.values(args.horizon) * vals, args.horizon)[-1])
    print(f"rho_N {vals[-1]:.6g}  sum a_n rho_n {weighted:.12g}")
    _write_seq(vals, args.out)
    return EXIT_OK


def cmd_finprob(args) -> int:
    results = run_suite(args.trials, args.seed, args.max_size)
    _emit(format_table(results) + "\n", args.out)
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL


def _common(parser, suppress: bool):
    d = argparse.SUPPRESS
    parser.add_argument("--seed-base", type=int, default=d if suppress else 0)
    parser.add_argument("--jobs", type=int, default=d if suppress else 1)
    parser.add_argument("--no-timestamp", action="store_true", default=d if suppress else False)
    parser.add_argument("--out", default=d if suppress else None)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stochapprox", description="Stochastic approximation experiments.")
    _common(p, suppress=False)
    sub = p.add_subparsers(dest="cmd", required=True)

    run = sub.add_parser("run", help="Monte Carlo convergence report")
    _common(run, suppress=True)
    run.add_argument("--spec", required=True, help="problem JSON file or builtin:NAME")
    run.add_argument("--seeds", default="0..99", help="inclusive range A..B")
    run.add_argument("--horizon", type=int, default=1000)
    run.add_argument("--eps", type=float, default=0.05)
    run.add_argument("--checkpoints", default="")
    run.add_argument("--trajectories", help="directory for per-seed n,x,t,w CSV files")
    run.set_defaults(func=cmd_run)

    chk = sub.add_parser("check", help="hypothesis ledger")
    _common(chk, suppress=True)
    chk.add_argument("--spec", required=True)
    chk.add_argument("--params", required=True)
    chk.add_argument("--mode", choices=("original", "weak"))
    chk.add_argument("--horizon", type=int)
    chk.set_defaults(func=cmd_check)

    ser = sub.add_parser("series", help="series constructions")
    _common(ser, suppress=True)
    ssub = ser.add_subparsers(dest="series_cmd", required=True)
    for name in ("rm-check", "dubois", "abel-dini"):
        s = ssub.add_parser(name)
        _common(s, suppress=True)
        s.add_argument("--a", required=True, help="builtin sequence name or csv:PATH")
        s.add_argument("--horizon", type=int, default=sl.DEFAULT_HORIZON)
        s.add_argument("--tol", type=float, default=1e-3 if name == "rm-check" else sl.DEFAULT_TOL)
        s.add_argument("--div-threshold", type=float, default=sl.DEFAULT_DIV_THRESHOLD)
    ser.set_defaults(func=cmd_series)

    fp = sub.add_parser("finprob", help="finite-probability property suite")
    _common(fp, suppress=True)
    fsub = fp.add_subparsers(dest="finprob_cmd", required=True)
    st = fsub.add_parser("selftest")
    _common(st, suppress=True)
    st.add_argument("--trials", type=int, default=1000)
    st.add_argument("--seed", type=int, default=0)
    st.add_argument("--max-size", type=int, default=64)
    fp.set_defaults(func=cmd_finprob)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return exc.code if isinstance(exc.code, int) else EXIT_CONFIG
    try:
        return args.func(args)
    except (UsageError, StochApproxError, ValueError, KeyError, IndexError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"stochapprox: error: {msg}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

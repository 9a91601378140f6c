"""Spectral support, subspace estimates and CLT checks from the command line.

Exit codes: 0 success, 2 invalid configuration, 3 separation failure,
4 numerical non-convergence.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from contextlib import contextmanager
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .empirical import confinement_check, decompose
from .errors import ConfigError, ConvergenceError, DomainError, SeparationError
from .estimators import contour_build, estimate_all
from .fluctuations import gamma_assemble, mse_predict, vartheta_table
from .model import load_scenario, sample_realization
from .montecarlo import run_trials
from .spectrum import density_eval, support_compute

log = logging.getLogger("gmusic_clt")

VARIANCE_METHODS = {
    "numeric": "numeric",
    "spiked": "spiked_closed",
    "trad": "trad_numeric",
    "trad_closed": "trad_closed",
}


@contextmanager
def stage(name: str):
    t0 = time.perf_counter()
    yield
    log.info("%s: %.3f s", name, time.perf_counter() - t0)


def _write(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise ConfigError(f"cannot write {path}: {exc}") from None


def _json(payload: dict, args) -> str:
    if not args.deterministic:
        payload = {**payload, "generated_at": datetime.now(timezone.utc).isoformat()}
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
    return buf.getvalue()


def _separated_support(model):
    with stage("support"):
        support = support_compute(model)
    if not support.separated:
        raise SeparationError(
            f"separation fails (A-1={support.separated_a1}, A-2={support.separated_a2})"
        )
    return support


def cmd_support(args, sc) -> None:
    with stage("support"):
        support = support_compute(sc.model)
    _write(args.out, _json({"support": support.to_dict()}, args))


def cmd_density(args, sc) -> None:
    model = sc.model
    with stage("support"):
        support = support_compute(model)
    lo = args.x_min if args.x_min is not None else 0.0
    hi = args.x_max if args.x_max is not None else float(support.clusters[-1, 1]) * 1.1
    if not hi > lo or args.points < 2:
        raise ConfigError("density grid needs x_max > x_min and at least 2 points")
    x = np.linspace(lo, hi, args.points)
    with stage("density"):
        y = density_eval(model, x, support)
    _write(args.out, _csv(["x", "density"], zip(x, y)))


def cmd_spectrum(args, sc) -> None:
    with stage("decompose"):
        spec = decompose(sc.model, sample_realization(sc.model, args.seed))
    rows = zip(range(1, spec.lambda_hat.size + 1), spec.lambda_hat, spec.omega_hat)
    _write(args.out, _csv(["index", "lambda_hat", "omega_hat"], rows))


def cmd_estimate(args, sc) -> None:
    model = sc.model
    support = _separated_support(model)
    with stage("decompose"):
        spec = decompose(model, sample_realization(model, args.seed))
    verdict = confinement_check(spec, support)
    if not verdict.ok:
        log.warning("sample eigenvalues are not confined; the residue path may be unreliable")
    with stage("estimate"):
        res = estimate_all(model, support, spec, sc.query, nodes=args.nodes)
    payload = {"seed": args.seed, "confined": verdict.ok, "estimates": res.to_dict()}
    _write(args.out, _json(payload, args))


def cmd_variance(args, sc) -> None:
    model = sc.model
    method = VARIANCE_METHODS.get(args.method or "numeric")
    if method is None:
        raise ConfigError(f"--method must be one of {sorted(VARIANCE_METHODS)}")
    support = _separated_support(model)
    contour = contour_build(support, args.nodes)
    with stage("variance"):
        table = vartheta_table(model, support, contour, method)
    asm = gamma_assemble(model, sc.query, table)
    var, nondeg = mse_predict(asm, sc.query.xi)
    payload = {
        "table": table.to_dict(),
        "covariance": asm.to_dict(),
        "predicted_variance": var,
        "nondegenerate": nondeg,
    }
    _write(args.out, _json(payload, args))


def cmd_clt(args, sc) -> None:
    estimator = args.method or "improved"
    if estimator not in ("improved", "traditional"):
        raise ConfigError("--method for clt must be 'improved' or 'traditional'")
    statistic = args.statistic
    if statistic is None:
        statistic = "quadratic" if sc.query.is_quadratic else "bilinear-real"
    seed = args.seed if args.seed is not None else sc.seed
    with stage("trials"):
        rep = run_trials(sc, args.trials, seed, estimator, statistic, args.threads, args.nodes)
    _write(args.out, _json(rep.to_dict(), args))
    if args.out not in (None, "-"):
        hist = Path(args.out).with_suffix(".histogram.csv")
        _write(str(hist), _csv(["bin_left", "bin_right", "count", "normal_pdf_at_center"],
                               rep.histogram_rows()))


COMMANDS = {
    "support": cmd_support,
    "density": cmd_density,
    "spectrum": cmd_spectrum,
    "estimate": cmd_estimate,
    "variance": cmd_variance,
    "clt": cmd_clt,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", required=True, help="scenario JSON file")
    common.add_argument("--out", default=None, help="output file (default stdout)")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--trials", type=int, default=20000)
    common.add_argument("--nodes", type=int, default=64, help="Gauss-Legendre nodes per contour segment")
    common.add_argument("--method", default=None)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--deterministic", action="store_true", help="omit the timestamp field")
    common.add_argument("--log", action="store_true", help="log per-stage timings to stderr")

    p = argparse.ArgumentParser(prog="gmusic-clt", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "density":
            sp.add_argument("--x-min", type=float, default=None)
            sp.add_argument("--x-max", type=float, default=None)
            sp.add_argument("--points", type=int, default=400)
        if name == "clt":
            sp.add_argument("--statistic", choices=("quadratic", "bilinear-real", "bivariate"))
    return p


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    handler = None
    if args.log:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(message)s"))
        log.addHandler(handler)
        log.setLevel(logging.INFO)
    try:
        sc = load_scenario(args.scenario)
        if args.seed is None and args.command != "clt":
            args.seed = sc.seed
        if args.nodes < 1 or args.threads < 1:
            raise ConfigError("--nodes and --threads must be positive")
        COMMANDS[args.command](args, sc)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SeparationError as exc:
        print(f"separation failure: {exc}", file=sys.stderr)
        return 3
    except (ConvergenceError, DomainError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    finally:
        if handler is not None:
            log.removeHandler(handler)
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()

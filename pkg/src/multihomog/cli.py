"""Command line entry point: ``multihomog <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from .cell import reiterated_on_lattice, solve_cell_1d, solve_cell_2d
from .coefficients import identity_residual, reperiodize
from .diophantine import simultaneous_approx
from .elliptic import face_gradient, solve_dirichlet
from .errors import MultihomogError
from .gridio import write_corrector_table, write_field
from .harness.config import load_coefficient, parse_config, parse_config_dict
from .harness.report import csv_text, emit_report, to_plain
from .harness.sweeps import run_experiment
from .operators import lp_norm
from .reduction import reduce_one_scale

log = logging.getLogger("multihomog")

SWEEPS = {"sweep-cz": "cz", "sweep-lip": "lipschitz", "sweep-qp": "quasiperiodic", "sweep": None}


def _number(text: str) -> float:
    """Accept decimals and fractions such as ``1/256``."""
    try:
        return float(Fraction(text.strip()))
    except (ValueError, ZeroDivisionError) as exc:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from exc


def _number_list(text: str) -> list[float]:
    return [_number(t) for t in text.split(",") if t.strip()]


def _emit(obj) -> None:
    print(json.dumps(to_plain(obj), indent=2, sort_keys=True))


def _out_dir(args) -> Path | None:
    if args.out is None:
        return None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ------------------------------------------------------------ commands


def cmd_approx(args) -> int:
    _emit(simultaneous_approx(args.alphas, args.Q, cap=args.cap).to_dict())
    return 0


def cmd_reperiodize(args) -> int:
    coef = load_coefficient(args.coef)
    res = reperiodize(coef, args.Q, cap=args.cap)
    rng = np.random.default_rng(args.seed)
    x = rng.random((args.points, coef.dim))
    a = res.approx
    separation = [1.0 / (a.q * g) for g in a.gamma if g > 0]
    _emit({**res.to_dict(), "scales": list(coef.scales), "identity_residual": identity_residual(coef, res.sharp, x),
           "separation": separation})
    return 0


def cmd_cell(args) -> int:
    coef = load_coefficient(args.coef)
    out = _out_dir(args)
    if coef.n == 1:
        if coef.dim == 1:
            corr, eff = solve_cell_1d(coef, cells=int(round(1 / args.h)))
        else:
            corr, eff = solve_cell_2d(coef, args.h)
        info = {"effective": eff.value, "mean_residual": corr.mean_residual,
                "energy": corr.energy, "min_rayleigh": eff.min_rayleigh(seed=args.seed),
                "ellipticity": coef.ellipticity, "h": args.h}
        _emit(info)
        return 0
    table = reiterated_on_lattice(coef, args.lattice, args.h, threads=args.threads or 1, keep_correctors=out is not None)
    mins = [float(np.min(np.linalg.eigvalsh(0.5 * (m + m.T)))) for m in table.matrices]
    info = {"slow_points": table.slow_points, "matrices": table.matrices, "h": args.h,
            "min_eigenvalue": min(mins), "ellipticity": coef.ellipticity}
    if table.correctors is not None:
        info["max_mean_residual"] = max(float(np.max(c.mean_residual)) for c in table.correctors)
    if out is not None:
        path = out / "correctors.mhg"
        write_corrector_table(path, table)
        info["table"] = str(path)
    _emit(info)
    return 0


def cmd_solve(args) -> int:
    coef = load_coefficient(args.coef)
    f = None
    if args.f:
        parts = [p.strip() for p in args.f.split(";")]
        f = parts if coef.dim > 1 else parts[0]
    u = solve_dirichlet(coef, f=f, F=args.F, h=args.h, override=args.override)
    grad = face_gradient(u)
    info = {"h": u.h, "grad_L2": lp_norm(grad, 2), "u_max": float(np.max(np.abs(u.values))),
            **{k: v for k, v in u.meta.items() if np.isscalar(v)}}
    out = _out_dir(args)
    if out is not None:
        write_field(out / "u.mhg", u)
        write_field(out / "grad_u.mhg", grad)
        info["field"] = str(out / "u.mhg")
    _emit(info)
    return 0


def cmd_reduce(args) -> int:
    coef = load_coefficient(args.coef)
    _, rep = reduce_one_scale(coef, F=args.F, r=args.r, Q=args.Q, h=args.h, center=args.center,
                              threads=args.threads or 1)
    _emit(rep.to_dict())
    return 0


def _load_config(args, experiment: str | None):
    cfg = parse_config(args.config) if args.config else parse_config_dict({"experiment": experiment or "cz"})
    if experiment is not None and cfg.experiment != experiment:
        cfg = replace(cfg, experiment=experiment)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.threads is not None:
        cfg = replace(cfg, threads=args.threads)
    return cfg


def _run_and_emit(cfg, args) -> int:
    report = run_experiment(cfg)
    out = Path(args.out) if args.out else Path(cfg.outputs.dir)
    emit_report(report, out, figures=cfg.outputs.figures)
    for line in report.summary_lines():
        print(line)
    log.info("wrote %s", out)
    return 1 if report.failed else 0


def cmd_rate(args) -> int:
    cfg = _load_config(args, "rate")
    report = run_experiment(cfg)
    if args.out:
        emit_report(report, args.out, figures=cfg.outputs.figures)
    sys.stdout.write(csv_text(report.records))
    return 1 if report.failed else 0


def cmd_sweep(args) -> int:
    return _run_and_emit(_load_config(args, SWEEPS[args.command]), args)


# ------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="multihomog", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, threads=True):
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, default=None)
        if threads:
            p.add_argument("--threads", type=int, default=None)
        return p

    p = common(sub.add_parser("approx", help="simultaneous Dirichlet approximation"), threads=False)
    p.add_argument("--alphas", type=_number_list, required=True)
    p.add_argument("--Q", type=_number, required=True)
    p.add_argument("--cap", type=int, default=10**7)
    p.set_defaults(func=cmd_approx)

    p = common(sub.add_parser("reperiodize", help="reperiodize a coefficient file"), threads=False)
    p.add_argument("--coef", required=True)
    p.add_argument("--Q", type=_number, required=True)
    p.add_argument("--cap", type=int, default=10**7)
    p.add_argument("--points", type=int, default=1000)
    p.set_defaults(func=cmd_reperiodize)

    p = common(sub.add_parser("cell", help="cell problems and effective matrices"))
    p.add_argument("--coef", required=True)
    p.add_argument("--h", type=_number, default=1 / 256)
    p.add_argument("--lattice", type=int, default=8, help="slow lattice points per axis")
    p.set_defaults(func=cmd_cell)

    p = common(sub.add_parser("solve", help="Dirichlet problem on the unit cube"), threads=False)
    p.add_argument("--coef", required=True)
    p.add_argument("--F", default=None, help="scalar right-hand side expression in x")
    p.add_argument("--f", default=None, help="divergence data, components separated by ';'")
    p.add_argument("--h", type=_number, default=None)
    p.add_argument("--override", action="store_true", help="allow grids that under-resolve the finest scale")
    p.set_defaults(func=cmd_solve)

    p = common(sub.add_parser("reduce", help="one step of scale reduction"))
    p.add_argument("--coef", required=True)
    p.add_argument("--Q", type=_number, default=None)
    p.add_argument("--r", type=_number, default=0.25)
    p.add_argument("--F", default="1")
    p.add_argument("--h", type=_number, default=None)
    p.add_argument("--center", type=_number, default=0.5)
    p.set_defaults(func=cmd_reduce)

    p = common(sub.add_parser("rate", help="locally periodic convergence rate (CSV on stdout)"))
    p.add_argument("--config")
    p.set_defaults(func=cmd_rate)

    for name, experiment in SWEEPS.items():
        what = experiment or "the experiment named in the config"
        p = common(sub.add_parser(name, help=f"run {what} sweep"))
        p.add_argument("--config", required=experiment is None)
        p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except MultihomogError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

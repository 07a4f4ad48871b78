"""Experiment drivers.

Each runner turns a :class:`SweepConfig` into an :class:`ExperimentReport`.
Instances run in a thread pool; records are ordered by instance key, and
verdicts are recomputed from the records alone by :func:`compute_verdicts`.
"""

from __future__ import annotations

import math
from dataclasses import replace
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence

import numpy as np

from ..coefficients import MultiscaleCoefficient, check_ellipticity, parse_expression
from ..diophantine import approx_with_integer_parts
from ..elliptic import GridField, default_h, face_gradient, solve_dirichlet
from ..errors import DegenerateFit, MultihomogError, WindowEmpty
from ..operators import Box, average_Mt, lp_norm, region_weights
from ..rates import fit_rate
from ..reduction import rate_locally_periodic, reduce_one_scale
from .config import SweepConfig
from .report import ExperimentReport, Verdict, provenance

CZ_SLOPE_MAX = 0.05
CZ_SPREAD_MAX = 3.0
K_STABILITY = 0.2
REDUCTION_SLACK = 0.1
REDUCTION_SLOPE_MIN = 0.2
ENERGY_CONSTANT_MAX = 50.0
RATE_WINDOW = (0.85, 1.15)
LIPSCHITZ_P = 4.0


def _scales_text(scales: Sequence[float]) -> str:
    return ";".join(repr(float(s)) for s in scales)


def _pool_map(fn: Callable, items: list, threads: int) -> list:
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def _grid_h(coef: MultiscaleCoefficient, cfg: SweepConfig) -> float | None:
    """Spacing for the instance, or None when it exceeds the grid budget."""
    h = default_h(coef, cells_per_scale=cfg.grid.cells_per_scale)
    return None if round(1.0 / h) > cfg.grid.max_cells else h


def _vector_on_cells(exprs: tuple[str, ...], grid) -> GridField:
    pts = grid.cell_points()
    comps = [np.broadcast_to(parse_expression(e, ("x",))(x=pts), (len(pts),)).astype(float) for e in exprs]
    shape = (grid.cells,) * grid.dim
    return GridField(grid, np.stack([c.reshape(shape) for c in comps]), kind="vector", location="cell")


def _check_coefficient(coef: MultiscaleCoefficient, seed: int) -> str | None:
    rep = check_ellipticity(coef, n_samples=256, seed=seed)
    return None if rep.passed else f"ellipticity check failed (min quotient {rep.min_quotient:.3g})"


# ------------------------------------------------------------ CZ


def _cz_instance(cfg: SweepConfig, forcing: str, index: int, scales, coef) -> list[dict]:
    base = {"key": f"{forcing}|{index:03d}", "forcing": forcing, "index": index,
            "scales": _scales_text(scales), "eps_n": float(coef.scales[-1])}
    h = _grid_h(coef, cfg)
    if h is None:
        return [{**base, "p": float(p), "status": "skipped", "message": "finest scale exceeds the grid budget"}
                for p in cfg.p]
    try:
        problem = _check_coefficient(coef, cfg.seed)
        if problem:
            raise MultihomogError(problem)
        comps = cfg.forcing.components(forcing, cfg.dim)
        u = solve_dirichlet(coef, f=list(comps) if cfg.dim > 1 else comps[0], h=h)
        grad = face_gradient(u)
        f_cells = _vector_on_cells(comps, u.grid)
        rows = []
        for p in cfg.p:
            gn, fn = lp_norm(grad, p), lp_norm(f_cells, p)
            rows.append({**base, "p": float(p), "h": h, "grad_norm": gn, "f_norm": fn, "R": gn / fn,
                         "residual": float(u.meta["residual"]), "status": "ok", "message": ""})
        return rows
    except MultihomogError as exc:
        return [{**base, "p": float(p), "status": "error", "message": f"{type(exc).__name__}: {exc}"}
                for p in cfg.p]


def _cz_records(cfg: SweepConfig) -> list[dict]:
    instances = cfg.instances()
    jobs = [(forcing, k, s, c) for forcing in cfg.forcing.f for k, (s, c) in enumerate(instances)]
    out = _pool_map(lambda job: _cz_instance(cfg, *job), jobs, cfg.threads)
    return sorted((r for rows in out for r in rows), key=lambda r: (r["key"], r["p"]))


def cz_verdicts(records: list[dict]) -> list[Verdict]:
    groups: dict[tuple, list[dict]] = {}
    for r in records:
        groups.setdefault((r["forcing"], r["p"]), []).append(r)
    verdicts = []
    for (forcing, p), rows in sorted(groups.items()):
        name = f"cz[{forcing}, p={p:g}]"
        errors = [r for r in rows if r["status"] == "error"]
        ok = [r for r in rows if r["status"] == "ok"]
        if len(ok) < 3:
            verdicts.append(Verdict(name, "FAIL", {"reason": "fewer than three solved instances"}))
            continue
        R = [r["R"] for r in ok]
        try:
            fit = fit_rate([(1.0 / r["eps_n"], r["R"]) for r in ok])
        except DegenerateFit as exc:
            verdicts.append(Verdict(name, "FAIL", {"reason": str(exc)}))
            continue
        spread = max(R) / min(R)
        passed = abs(fit.slope) <= CZ_SLOPE_MAX and spread <= CZ_SPREAD_MAX and not errors
        verdicts.append(Verdict(name, "PASS" if passed else "FAIL",
                                {"slope": fit.slope, "spread": spread, "r2": fit.r2, "instances": len(ok),
                                 "errors": len(errors)}))
    return verdicts


def run_cz_sweep(cfg: SweepConfig) -> ExperimentReport:
    records = _cz_records(cfg)
    return ExperimentReport.build(cfg, records, [], cz_verdicts(records))


def run_quasiperiodic(cfg: SweepConfig) -> ExperimentReport:
    """Lift B(Mx/eps) to a periodic multiscale coefficient, then run the CZ sweep."""
    if cfg.experiment != "quasiperiodic":
        cfg = replace(cfg, experiment="quasiperiodic")
    records = _cz_records(cfg)
    return ExperimentReport.build(cfg, records, [], cz_verdicts(records))


# ------------------------------------------------------------ Lipschitz


def lipschitz_window(scales: Sequence[float], alpha: float, r_max: float, delta: float | None = None):
    """Radius window and denominator for the profile test.

    Two scales: ``[eps_2^(1-alpha), r_max]`` with q = 1.  Three or more:
    ``[q delta, min(q delta^(1-alpha), r_max)]`` with q from the Dirichlet
    search on ``delta/eps_i`` at ``Q = delta^-alpha`` (the slot equal to
    ``delta`` is exact and excluded).
    """
    scales = [float(s) for s in scales]
    n = len(scales)
    if n <= 2:
        lo = scales[-1] ** (1 - alpha)
        if lo >= r_max:
            raise WindowEmpty(f"eps_n^(1-alpha) = {lo:.3g} >= r_max = {r_max}")
        return lo, r_max, 1, None
    delta = scales[-1] if delta is None else float(delta)
    ratios = [delta / s for s in scales if not math.isclose(s, delta, rel_tol=1e-12)]
    exact = len(ratios) < n
    Q = delta ** -alpha
    approx = approx_with_integer_parts(ratios, Q)
    q = approx.q
    lo, hi = q * delta, min(q * delta ** (1 - alpha), r_max)
    if lo >= hi:
        raise WindowEmpty(f"window [{lo:.3g}, {hi:.3g}] is empty (q={q})")
    bound = delta ** (-(n - 1) * alpha) if exact else delta ** (-n * alpha)
    return lo, hi, q, bound


def _radius_ladder(lo: float, hi: float, points: int) -> np.ndarray:
    return np.geomspace(lo, hi, points)


def _lipschitz_instance(cfg: SweepConfig, index: int, scales, coef) -> tuple[dict, list[dict]]:
    rad = cfg.radii
    base = {"key": f"{index:03d}", "index": index, "scales": _scales_text(scales), "eps_n": float(coef.scales[-1])}
    try:
        lo, hi, q, bound = lipschitz_window(coef.scales, cfg.alpha, rad.r_max, cfg.delta)
    except WindowEmpty as exc:
        return {**base, "status": "error", "message": f"WindowEmpty: {exc}"}, []
    h = _grid_h(coef, cfg)
    if h is None:
        return {**base, "status": "skipped", "message": "finest scale exceeds the grid budget"}, []
    try:
        u = solve_dirichlet(coef, F=cfg.forcing.F, h=h)
    except MultihomogError as exc:
        return {**base, "status": "error", "message": f"{type(exc).__name__}: {exc}"}, []
    grad = face_gradient(u)
    d = cfg.dim
    centre = np.full(d, rad.center)
    radii = _radius_ladder(min(lo, rad.r_max) / 2, rad.r_max, rad.points)
    radii = np.unique(np.concatenate([radii, [lo, hi]]))
    profile = np.array([average_Mt(grad, r, centre[None])[0] for r in radii])
    F_nodes = GridField(u.grid, np.broadcast_to(_scalar_nodes(cfg.forcing.F, u.grid), u.grid.shape))
    top = hi
    top_value = float(np.interp(top, radii, profile))
    box = Box.around(centre, top)
    F_avg = mean_power(F_nodes, LIPSCHITZ_P, box) ** (1 / LIPSCHITZ_P)
    forcing_term = F_avg if len(coef.scales) <= 2 else top ** (1 - d / LIPSCHITZ_P) * F_avg
    denom = top_value + forcing_term
    inside = (radii >= lo * (1 - 1e-12)) & (radii <= hi * (1 + 1e-12))
    K = float(np.max(profile[inside]) / denom) if denom > 0 else math.inf
    record = {**base, "status": "ok", "message": "", "h": h, "window_lo": lo, "window_hi": hi, "q": q,
              "q_bound": bound, "top_value": top_value, "forcing_term": forcing_term, "K": K}
    rows = [{"key": base["key"], "r": float(r), "value": float(v), "in_window": bool(w)}
            for r, v, w in zip(radii, profile, inside)]
    return record, rows


def _scalar_nodes(F: str, grid) -> np.ndarray:
    pts = grid.node_points()
    vals = parse_expression(F, ("x",))(x=pts)
    return np.broadcast_to(vals, (len(pts),)).reshape(grid.shape).astype(float)


def mean_power(field: GridField, p: float, region: Box) -> float:
    """Average of |field|^p over a box."""
    w = region_weights(field, region)
    return float(np.sum(w * np.sqrt(field.magnitude_squared()) ** p) / w.sum())


def lipschitz_verdicts(records: list[dict]) -> list[Verdict]:
    ok = [r for r in records if r["status"] == "ok"]
    errors = [r for r in records if r["status"] == "error"]
    verdicts = []
    if not ok:
        return [Verdict("lipschitz[K stable]", "FAIL", {"reason": "no solved instances"})]
    K = np.array([r["K"] for r in ok])
    centre = float(np.median(K))
    dev = float(np.max(np.abs(K - centre)) / centre)
    passed = np.all(np.isfinite(K)) and dev <= K_STABILITY and not errors
    verdicts.append(Verdict("lipschitz[K stable]", "PASS" if passed else "FAIL",
                            {"K_median": centre, "K_max": float(K.max()), "K_min": float(K.min()),
                             "relative_deviation": dev, "instances": len(ok), "errors": len(errors)}))
    bounded = [r for r in ok if r.get("q_bound") is not None]
    if bounded:
        q_ok = all(r["q"] <= r["q_bound"] * (1 + 1e-12) for r in bounded)
        verdicts.append(Verdict("lipschitz[q bound]", "PASS" if q_ok else "FAIL",
                                {"q": [r["q"] for r in bounded], "bound": [r["q_bound"] for r in bounded]}))
    return verdicts


def run_lipschitz(cfg: SweepConfig) -> ExperimentReport:
    instances = cfg.instances()
    jobs = list(enumerate(instances))
    out = _pool_map(lambda job: _lipschitz_instance(cfg, job[0], *job[1]), jobs, cfg.threads)
    records = sorted((rec for rec, _ in out), key=lambda r: r["key"])
    profile = sorted((row for _, rows in out for row in rows), key=lambda r: (r["key"], r["r"]))
    return ExperimentReport.build(cfg, records, profile, lipschitz_verdicts(records))


def harmonic_profile(dim: int = 2, cells: int = 128, radii: Sequence[float] = (0.05, 0.1, 0.2, 0.3, 0.4, 0.5),
                     boundary: Callable | None = None) -> np.ndarray:
    """Ball-average profile of |grad u| for a boundary-driven harmonic function.

    Since |grad u|^2 is subharmonic its ball means grow with the radius.
    """
    if boundary is None:
        boundary = (lambda p: p[:, 0] ** 2 - p[:, 1] ** 2 + p[:, 0]) if dim == 2 else (lambda p: 1 + 2 * p[:, 0])
    u = solve_dirichlet(lambda pts: np.broadcast_to(np.eye(dim), (len(pts), dim, dim)).copy(), h=1.0 / cells,
                        dim=dim, boundary=boundary)
    grad = face_gradient(u)
    centre = np.full((1, dim), 0.5)
    return np.array([average_Mt(grad, r, centre)[0] for r in radii])


# ------------------------------------------------------------ rate and reduction


def rate_verdicts(records: list[dict]) -> list[Verdict]:
    slopes = {r["l2_slope"] for r in records}
    if not records or None in slopes or any(isinstance(s, float) and math.isnan(s) for s in slopes):
        return [Verdict("rate[L2 slope]", "FLAGGED", {"reason": "errors at solver tolerance"})]
    slope = records[0]["l2_slope"]
    lo, hi = RATE_WINDOW
    return [Verdict("rate[L2 slope]", "PASS" if lo <= slope <= hi else "FAIL",
                    {"slope": slope, "gradient_slope": records[0]["gradient_slope"]})]


def run_rate(cfg: SweepConfig) -> ExperimentReport:
    spec = cfg.locally_periodic
    table = rate_locally_periodic(spec.expr, spec.eps, cells_per_period=spec.cells_per_period, F=cfg.forcing.F)
    info = table.to_dict()
    records = [{"key": f"{k:03d}", **row, "l2_slope": info["l2_slope"], "gradient_slope": info["gradient_slope"]}
               for k, row in enumerate(info["rows"])]
    return ExperimentReport.build(cfg, records, [], rate_verdicts(records))


def reduction_verdicts(records: list[dict]) -> list[Verdict]:
    ok = sorted((r for r in records if r["status"] == "ok"), key=lambda r: -r["eps_n"])
    if len(ok) < 3:
        return [Verdict("reduction[decay]", "FAIL", {"reason": "fewer than three instances"})]
    e = [r["error"] for r in ok]
    mono = all(b <= (1 + REDUCTION_SLACK) * a for a, b in zip(e, e[1:]))
    fit = fit_rate([(r["eps_n"], r["error"]) for r in ok])
    C = max(r["energy_constant"] for r in ok)
    return [
        Verdict("reduction[decay]", "PASS" if mono and fit.slope > REDUCTION_SLOPE_MIN else "FAIL",
                {"monotone": mono, "slope": fit.slope, "r2": fit.r2}),
        Verdict("reduction[energy]", "PASS" if C <= ENERGY_CONSTANT_MAX else "FAIL", {"max_constant": C}),
    ]


def run_reduction(cfg: SweepConfig) -> ExperimentReport:
    r = cfg.radii.r

    def one(job):
        k, (scales, coef) = job
        base = {"key": f"{k:03d}", "index": k, "scales": _scales_text(scales), "eps_n": float(coef.scales[-1])}
        try:
            Q = cfg.Q_for(r, coef.scales[-1], coef.n)
            _, rep = reduce_one_scale(coef, F=cfg.forcing.F, r=r, Q=Q, center=cfg.radii.center,
                                      cells_per_scale=max(cfg.grid.cells_per_scale, 32))
        except MultihomogError as exc:
            return {**base, "status": "error", "message": f"{type(exc).__name__}: {exc}"}
        return {**base, "status": "ok", "message": "", "Q": rep.Q, "q": rep.approximation.get("q", 1),
                "new_scales": _scales_text(rep.new_scales), "error": rep.error,
                "relative_error": rep.relative_error, "energy_constant": rep.energy_constant,
                "separation_ratio": rep.separation_ratio, "h": rep.h}

    records = sorted(_pool_map(one, list(enumerate(cfg.instances())), cfg.threads), key=lambda r: r["key"])
    ok = [rec for rec in records if rec["status"] == "ok"]
    if len(ok) >= 3:
        sigma = fit_rate([(rec["separation_ratio"], rec["error"]) for rec in ok]).slope
        tau = cfg.coefficient.holder[0]
        for rec in ok:
            rec["sigma_hat"] = sigma
            rec["bound_proxy"] = rec["separation_ratio"] ** sigma + rec["Q"] ** (-tau)
    return ExperimentReport.build(cfg, records, [], reduction_verdicts(records))


VERDICTS = {"cz": cz_verdicts, "quasiperiodic": cz_verdicts, "lipschitz": lipschitz_verdicts,
            "rate": rate_verdicts, "reduction": reduction_verdicts}
RUNNERS = {"cz": run_cz_sweep, "quasiperiodic": run_quasiperiodic, "lipschitz": run_lipschitz,
           "rate": run_rate, "reduction": run_reduction}


def compute_verdicts(experiment: str, records: list[dict]) -> list[Verdict]:
    """Verdicts as a pure function of the recorded numbers."""
    return VERDICTS[experiment](records)


def run_experiment(cfg: SweepConfig) -> ExperimentReport:
    return RUNNERS[cfg.experiment](cfg)


__all__ = ["compute_verdicts", "cz_verdicts", "harmonic_profile", "lipschitz_verdicts", "lipschitz_window",
           "mean_power", "provenance", "run_cz_sweep", "run_experiment", "run_lipschitz", "run_quasiperiodic",
           "run_rate", "run_reduction"]

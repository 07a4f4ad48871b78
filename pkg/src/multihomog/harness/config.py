"""Sweep configuration: YAML schema, validation and canonical form.

Every section is a mapping with a fixed key set; unknown keys and bad
values raise :class:`ConfigError` naming the dotted path of the field.
Defaults are filled in on parsing, so ``to_dict`` gives the full semantic
content and ``parse_config_dict(cfg.to_dict()) == cfg``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from ..coefficients import MultiscaleCoefficient, lift_quasiperiodic, parse_coefficient, parse_expression
from ..errors import ConfigError, InvalidInput, MultihomogError

EXPERIMENTS = ("cz", "lipschitz", "quasiperiodic", "rate", "reduction")
FORCING_PRESETS = {
    1: {"smooth": ("cos(2*pi*x) + 0.5*sin(6*pi*x)",),
        "piecewise": ("step(0.5 - x) - 0.5*step(x - 0.75)",)},
    2: {"smooth": ("cos(2*pi*x[1])*sin(pi*x[2])", "0.5*sin(2*pi*x[1] + 4*pi*x[2])"),
        "piecewise": ("step(0.5 - x[1])", "step(x[2] - 0.3) - step(x[1] - 0.7)")},
}


def liouville(terms: int = 4) -> float:
    """Truncated Liouville constant sum_{k<=terms} 10^(-k!)."""
    return float(sum(10.0 ** -math.factorial(k) for k in range(1, terms + 1)))


def _mapping(data, path) -> dict:
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(path, f"expected a mapping, got {type(data).__name__}")
    return data


def _check_keys(data: dict, allowed, path: str) -> None:
    for key in data:
        if key not in allowed:
            where = f"{path}.{key}" if path else str(key)
            raise ConfigError(where, f"unknown key (allowed: {', '.join(sorted(allowed))})")


def _number(value, path, positive=False, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    if integer and int(value) != value:
        raise ConfigError(path, f"expected an integer, got {value!r}")
    if not math.isfinite(value) or (positive and value <= 0):
        raise ConfigError(path, f"expected a positive finite number, got {value!r}")
    return int(value) if integer else float(value)


def _numbers(value, path, positive=False) -> tuple:
    if not isinstance(value, (list, tuple)) or not value:
        raise ConfigError(path, "expected a nonempty list")
    return tuple(_number(v, f"{path}[{k}]", positive) for k, v in enumerate(value))


@dataclass(frozen=True)
class CoefficientSpec:
    expr: str = "(2+sin(2*pi*y1))*(2+cos(2*pi*y2))"
    ellipticity: float = 1.0 / 9.0
    holder: tuple[float, float] = (1.0, 2 * math.pi * 3)

    @classmethod
    def parse(cls, data, path="coefficient") -> "CoefficientSpec":
        data = _mapping(data, path)
        _check_keys(data, {f.name for f in fields(cls)}, path)
        out = {}
        if "expr" in data:
            if not isinstance(data["expr"], str):
                raise ConfigError(f"{path}.expr", "expected an expression string")
            out["expr"] = data["expr"]
        if "ellipticity" in data:
            lam = _number(data["ellipticity"], f"{path}.ellipticity", positive=True)
            if lam > 1:
                raise ConfigError(f"{path}.ellipticity", "must lie in (0, 1]")
            out["ellipticity"] = lam
        if "holder" in data:
            h = _numbers(data["holder"], f"{path}.holder", positive=True)
            if len(h) != 2 or h[0] > 1:
                raise ConfigError(f"{path}.holder", "expected [tau, L] with 0 < tau <= 1")
            out["holder"] = h
        return cls(**out)


@dataclass(frozen=True)
class FamilySpec:
    """Scale vectors: explicit ``instances`` or ``rules`` in ``eps1`` over ``eps1`` values."""

    eps1: tuple[float, ...] = tuple(2.0**-k for k in range(4, 10))
    rules: tuple[str, ...] = ("eps1", "eps1*(1/3 + sqrt(eps1))")
    instances: tuple[tuple[float, ...], ...] = ()

    @classmethod
    def parse(cls, data, path="family") -> "FamilySpec":
        data = _mapping(data, path)
        _check_keys(data, {"eps1", "rules", "instances"}, path)
        out = {}
        if "eps1" in data:
            v = data["eps1"]
            if isinstance(v, dict):
                _check_keys(v, {"base", "exponents"}, f"{path}.eps1")
                base = _number(v.get("base", 2), f"{path}.eps1.base", positive=True)
                exps = _numbers(v.get("exponents"), f"{path}.eps1.exponents")
                out["eps1"] = tuple(float(base ** -e) for e in exps)
            else:
                out["eps1"] = _numbers(v, f"{path}.eps1", positive=True)
        if "rules" in data:
            rules = data["rules"]
            if not isinstance(rules, (list, tuple)) or not rules or not all(isinstance(r, str) for r in rules):
                raise ConfigError(f"{path}.rules", "expected a list of expressions in eps1")
            for k, rule in enumerate(rules):
                try:
                    parse_expression(rule, ("eps1",))
                except MultihomogError as exc:
                    raise ConfigError(f"{path}.rules[{k}]", str(exc)) from None
            out["rules"] = tuple(rules)
        if data.get("instances"):
            inst = data["instances"]
            if not isinstance(inst, (list, tuple)) or not inst:
                raise ConfigError(f"{path}.instances", "expected a list of scale lists")
            out["instances"] = tuple(_numbers(s, f"{path}.instances[{k}]", positive=True)
                                     for k, s in enumerate(inst))
        spec = cls(**out)
        for k, scales in enumerate(spec.scale_vectors(path)):
            if any(a < b for a, b in zip(scales, scales[1:])):
                raise ConfigError(f"{path}", f"instance {k} scales {scales} are not nonincreasing")
        return spec

    def scale_vectors(self, path="family") -> list[tuple[float, ...]]:
        if self.instances:
            vecs = [tuple(s) for s in self.instances]
        else:
            exprs = [parse_expression(r, ("eps1",)) for r in self.rules]
            vecs = []
            for e1 in self.eps1:
                vals = tuple(float(ex(eps1=np.float64(e1))) for ex in exprs)
                if not all(v > 0 and math.isfinite(v) for v in vals):
                    raise ConfigError(f"{path}.rules", f"nonpositive scale at eps1={e1}")
                vecs.append(vals)
        return sorted(vecs, key=lambda v: tuple(-x for x in v))


@dataclass(frozen=True)
class QuasiSpec:
    B: str = "(2+sin(2*pi*y1[1]))*(2+cos(2*pi*y1[2]))"
    M: tuple[tuple[float, ...], ...] | str = "liouville"
    eps: tuple[float, ...] = tuple(2.0**-k for k in range(4, 10))

    @classmethod
    def parse(cls, data, path="quasiperiodic") -> "QuasiSpec":
        data = _mapping(data, path)
        _check_keys(data, {"B", "M", "eps"}, path)
        out = {}
        if "B" in data:
            if not isinstance(data["B"], str):
                raise ConfigError(f"{path}.B", "expected an expression string")
            out["B"] = data["B"]
        if "M" in data:
            M = data["M"]
            if isinstance(M, str):
                if M != "liouville":
                    raise ConfigError(f"{path}.M", "unknown preset (known: liouville)")
                out["M"] = M
            elif isinstance(M, (list, tuple)) and M:
                rows = tuple(_numbers(row if isinstance(row, (list, tuple)) else [row], f"{path}.M[{k}]")
                             for k, row in enumerate(M))
                if len({len(r) for r in rows}) != 1:
                    raise ConfigError(f"{path}.M", "rows must have equal length")
                out["M"] = rows
            else:
                raise ConfigError(f"{path}.M", "expected a matrix or a preset name")
        if "eps" in data:
            out["eps"] = tuple(sorted(_numbers(data["eps"], f"{path}.eps", positive=True), reverse=True))
        return cls(**out)

    def matrix(self) -> np.ndarray:
        if self.M == "liouville":
            return np.array([[1.0], [1.0 + liouville(4)]])
        return np.asarray(self.M, dtype=float)


@dataclass(frozen=True)
class RateSpec:
    expr: str = "(1 + x^2/2)*(2 + sin(2*pi*y))"
    eps: tuple[float, ...] = tuple(2.0**-k for k in range(4, 9))
    cells_per_period: int = 64

    @classmethod
    def parse(cls, data, path="locally_periodic") -> "RateSpec":
        data = _mapping(data, path)
        _check_keys(data, {f.name for f in fields(cls)}, path)
        out = {}
        if "expr" in data:
            try:
                parse_expression(data["expr"], ("x", "y"))
            except MultihomogError as exc:
                raise ConfigError(f"{path}.expr", str(exc)) from None
            out["expr"] = data["expr"]
        if "eps" in data:
            eps = _numbers(data["eps"], f"{path}.eps", positive=True)
            if len(eps) < 4:
                raise ConfigError(f"{path}.eps", "need at least four values")
            out["eps"] = tuple(sorted(eps, reverse=True))
        if "cells_per_period" in data:
            out["cells_per_period"] = _number(data["cells_per_period"], f"{path}.cells_per_period",
                                              positive=True, integer=True)
        return cls(**out)


@dataclass(frozen=True)
class ForcingSpec:
    f: tuple[str, ...] = ("smooth", "piecewise")  # preset names or "expr1; expr2" component lists
    F: str = "1"

    @classmethod
    def parse(cls, data, dim: int, path="forcing") -> "ForcingSpec":
        data = _mapping(data, path)
        _check_keys(data, {"f", "F"}, path)
        out = {}
        if "f" in data:
            f = data["f"]
            items = [f] if isinstance(f, str) else f
            if not isinstance(items, (list, tuple)) or not items or not all(isinstance(s, str) for s in items):
                raise ConfigError(f"{path}.f", "expected preset names or expression strings")
            for k, item in enumerate(items):
                if item in FORCING_PRESETS[dim]:
                    continue
                comps = [c.strip() for c in item.split(";")]
                if len(comps) != dim:
                    raise ConfigError(f"{path}.f[{k}]", f"needs {dim} ';'-separated components")
                for c in comps:
                    try:
                        parse_expression(c, ("x",))
                    except MultihomogError as exc:
                        raise ConfigError(f"{path}.f[{k}]", str(exc)) from None
            out["f"] = tuple(items)
        if "F" in data:
            F = data["F"]
            F = str(F) if isinstance(F, (int, float)) and not isinstance(F, bool) else F
            if not isinstance(F, str):
                raise ConfigError(f"{path}.F", "expected an expression string")
            try:
                parse_expression(F, ("x",))
            except MultihomogError as exc:
                raise ConfigError(f"{path}.F", str(exc)) from None
            out["F"] = F
        return cls(**out)

    def components(self, name: str, dim: int) -> tuple[str, ...]:
        if name in FORCING_PRESETS[dim]:
            return FORCING_PRESETS[dim][name]
        return tuple(c.strip() for c in name.split(";"))


@dataclass(frozen=True)
class GridSpec:
    cells_per_scale: int = 16
    max_cells: int = 2**16

    @classmethod
    def parse(cls, data, path="grid") -> "GridSpec":
        data = _mapping(data, path)
        _check_keys(data, {f.name for f in fields(cls)}, path)
        out = {k: _number(v, f"{path}.{k}", positive=True, integer=True) for k, v in data.items()}
        if out.get("cells_per_scale", 16) < 8:
            raise ConfigError(f"{path}.cells_per_scale", "at least 8 cells per finest period are required")
        return cls(**out)


@dataclass(frozen=True)
class RadiiSpec:
    r: float = 0.25
    r_max: float = 0.5
    points: int = 16
    center: float = 0.5

    @classmethod
    def parse(cls, data, path="radii") -> "RadiiSpec":
        data = _mapping(data, path)
        _check_keys(data, {f.name for f in fields(cls)}, path)
        out = {}
        for k, v in data.items():
            out[k] = _number(v, f"{path}.{k}", positive=True, integer=(k == "points"))
        spec = cls(**out)
        if spec.center - spec.r_max < -1e-12 or spec.center + spec.r_max > 1 + 1e-12:
            raise ConfigError(f"{path}.r_max", "ball around the center leaves the unit domain")
        if spec.points < 3:
            raise ConfigError(f"{path}.points", "need at least three radii")
        return spec


@dataclass(frozen=True)
class OutputSpec:
    dir: str = "out"
    figures: bool = True

    @classmethod
    def parse(cls, data, path="outputs") -> "OutputSpec":
        data = _mapping(data, path)
        _check_keys(data, {"dir", "figures"}, path)
        out = {}
        if "dir" in data:
            if not isinstance(data["dir"], str):
                raise ConfigError(f"{path}.dir", "expected a path string")
            out["dir"] = data["dir"]
        if "figures" in data:
            if not isinstance(data["figures"], bool):
                raise ConfigError(f"{path}.figures", "expected true or false")
            out["figures"] = data["figures"]
        return cls(**out)


@dataclass(frozen=True)
class SweepConfig:
    experiment: str = "cz"
    dim: int = 1
    coefficient: CoefficientSpec = field(default_factory=CoefficientSpec)
    family: FamilySpec = field(default_factory=FamilySpec)
    quasiperiodic: QuasiSpec = field(default_factory=QuasiSpec)
    locally_periodic: RateSpec = field(default_factory=RateSpec)
    forcing: ForcingSpec = field(default_factory=ForcingSpec)
    p: tuple[float, ...] = (2.0, 4.0)
    grid: GridSpec = field(default_factory=GridSpec)
    Q: str = "(r/eps_n)^(1/(2*(n-1)))"
    radii: RadiiSpec = field(default_factory=RadiiSpec)
    alpha: float = 0.25
    delta: float | None = None
    seed: int = 0
    threads: int = 1
    outputs: OutputSpec = field(default_factory=OutputSpec)

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def config_hash(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    # -------------------------------------------------------- instances

    def coefficient_for(self, scales) -> MultiscaleCoefficient:
        c = self.coefficient
        return MultiscaleCoefficient.from_expr(c.expr, scales, dim=self.dim, ellipticity=c.ellipticity,
                                               holder=c.holder)

    def instances(self) -> list[tuple[tuple[float, ...], MultiscaleCoefficient]]:
        """(key scales, coefficient) pairs; quasiperiodic instances are lifted."""
        if self.experiment == "quasiperiodic":
            q = self.quasiperiodic
            M = q.matrix()
            B = MultiscaleCoefficient.from_expr(q.B, [1.0], dim=self.dim, cell_dim=M.shape[0],
                                                ellipticity=self.coefficient.ellipticity)
            return [((eps,), lift_quasiperiodic(B, M, eps)) for eps in q.eps]
        return [(s, self.coefficient_for(s)) for s in self.family.scale_vectors()]

    def Q_for(self, r: float, eps_n: float, n: int) -> float:
        ex = parse_expression(self.Q, ("r", "eps_n", "n"))
        return float(ex(r=np.float64(r), eps_n=np.float64(eps_n), n=np.float64(n)))


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


TOP_KEYS = {f.name for f in fields(SweepConfig)}


def parse_config_dict(data: Any, source: str = "<config>") -> SweepConfig:
    data = _mapping(data, source)
    _check_keys(data, TOP_KEYS, "")
    out: dict[str, Any] = {}
    if "experiment" in data:
        if data["experiment"] not in EXPERIMENTS:
            raise ConfigError("experiment", f"must be one of {', '.join(EXPERIMENTS)}")
        out["experiment"] = data["experiment"]
    dim = data.get("dim", 1)
    if dim not in (1, 2) or isinstance(dim, bool):
        raise ConfigError("dim", "must be 1 or 2")
    out["dim"] = dim
    out["coefficient"] = CoefficientSpec.parse(data.get("coefficient"))
    out["family"] = FamilySpec.parse(data.get("family"))
    out["quasiperiodic"] = QuasiSpec.parse(data.get("quasiperiodic"))
    out["locally_periodic"] = RateSpec.parse(data.get("locally_periodic"))
    out["forcing"] = ForcingSpec.parse(data.get("forcing"), dim)
    if "p" in data:
        raw = data["p"] if isinstance(data["p"], (list, tuple)) else [data["p"]]
        for k, p in enumerate(raw):
            if isinstance(p, (int, float)) and not isinstance(p, bool) and not 1 < p < math.inf:
                raise InvalidInput(f"p[{k}] = {p}: exponents must satisfy 1 < p < infinity")
        out["p"] = _numbers(data["p"], "p")
    out["grid"] = GridSpec.parse(data.get("grid"))
    if "Q" in data:
        Q = data["Q"]
        Q = str(Q) if isinstance(Q, (int, float)) and not isinstance(Q, bool) else Q
        if not isinstance(Q, str):
            raise ConfigError("Q", "expected a number or an expression in r, eps_n, n")
        try:
            parse_expression(Q, ("r", "eps_n", "n"))
        except MultihomogError as exc:
            raise ConfigError("Q", str(exc)) from None
        out["Q"] = Q
    out["radii"] = RadiiSpec.parse(data.get("radii"))
    if "alpha" in data:
        a = _number(data["alpha"], "alpha", positive=True)
        if a >= 1:
            raise ConfigError("alpha", "must lie in (0, 1)")
        out["alpha"] = a
    if data.get("delta") is not None:
        out["delta"] = _number(data["delta"], "delta", positive=True)
    for key in ("seed", "threads"):
        if key in data:
            v = _number(data[key], key, integer=True)
            if v < (1 if key == "threads" else 0):
                raise ConfigError(key, "out of range")
            out[key] = v
    out["outputs"] = OutputSpec.parse(data.get("outputs"))
    cfg = SweepConfig(**out)
    if cfg.experiment == "quasiperiodic":
        try:
            parse_coefficient(cfg.quasiperiodic.B, n=1, dim=dim, cell_dim=cfg.quasiperiodic.matrix().shape[0])
        except MultihomogError as exc:
            raise ConfigError("quasiperiodic.B", str(exc)) from None
        if cfg.quasiperiodic.matrix().shape[1] != dim:
            raise ConfigError("quasiperiodic.M", f"needs {dim} columns")
    elif cfg.experiment != "rate":
        n = len(cfg.family.scale_vectors()[0])
        try:
            parse_coefficient(cfg.coefficient.expr, n=n, dim=dim)
        except MultihomogError as exc:
            raise ConfigError("coefficient.expr", str(exc)) from None
    return cfg


def parse_config(path) -> SweepConfig:
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(str(path), f"invalid YAML: {exc}") from None
    return parse_config_dict(data, str(path))


def dump_config(cfg: SweepConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))


def load_coefficient(path) -> MultiscaleCoefficient:
    """Coefficient file: ``expr`` and ``scales`` plus optional ``dim``,
    ``cell_dim``, ``ellipticity`` and ``holder``."""
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(str(path), f"invalid YAML: {exc}") from exc
    data = _mapping(data, str(path))
    _check_keys(data, {"expr", "scales", "dim", "cell_dim", "ellipticity", "holder"}, "coef")
    if "expr" not in data or "scales" not in data:
        raise ConfigError("coef", "expr and scales are required")
    spec = CoefficientSpec.parse({k: data[k] for k in ("expr", "ellipticity", "holder") if k in data}, "coef")
    scales = _numbers(data["scales"], "coef.scales", positive=True)
    dim = data.get("dim")
    cell_dim = data.get("cell_dim")
    try:
        return MultiscaleCoefficient.from_expr(
            spec.expr, scales, dim=None if dim is None else int(_number(dim, "coef.dim", integer=True)),
            ellipticity=spec.ellipticity, holder=spec.holder,
            cell_dim=None if cell_dim is None else int(_number(cell_dim, "coef.cell_dim", integer=True)))
    except MultihomogError as exc:
        raise ConfigError("coef.expr", str(exc)) from exc

"""A small expression language for coefficient kernels and forcing terms.

Grammar (whitespace insignificant)::

    top     := matrix | expr
    matrix  := '[' row (',' row)* ']'
    row     := '[' expr (',' expr)* ']'
    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := ('+' | '-') unary | power
    power   := atom (('^' | '**') unary)?
    atom    := NUMBER | 'pi' | NAME ('[' INT ']')? | FUNC '(' expr ')' | '(' expr ')'

In *periodic* mode (coefficient kernels) the variables are ``y1 .. yn``,
each a point of R^d addressed by 1-based component, e.g. ``y2[1]``.  A
bare ``y1`` is allowed when the cell dimension is 1.  Variables may only
occur inside ``sin``/``cos`` whose argument is affine in the coordinates
with every coefficient an integer multiple of 2*pi; all other functions
are smooth compositions.  This makes every accepted kernel 1-periodic in
each variable by construction.

In *free* mode (forcing terms, scale-family rules) any whitelisted name may
appear anywhere and a few non-smooth helpers (``abs``, ``step``) are
available.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence, Union

import numpy as np

from ..errors import ParseError, PeriodicityViolation

SMOOTH_FUNCS: dict[str, Callable] = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "sqrt": np.sqrt,
    "log": np.log,
    "tanh": np.tanh,
}
FREE_ONLY_FUNCS: dict[str, Callable] = {
    "abs": np.abs,
    "step": lambda v: np.where(v >= 0, 1.0, 0.0),
}
TRIG = {"sin", "cos"}
PERIODIC_VAR = re.compile(r"y(\d+)$")


# --------------------------------------------------------------------- AST


@dataclass(frozen=True)
class Num:
    value: float
    pos: int = 0


@dataclass(frozen=True)
class Var:
    name: str
    index: int | None  # 1-based component, None for bare use
    pos: int = 0


@dataclass(frozen=True)
class Unary:
    op: str
    arg: "Node"
    pos: int = 0


@dataclass(frozen=True)
class Bin:
    op: str
    left: "Node"
    right: "Node"
    pos: int = 0


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Node"
    pos: int = 0


@dataclass(frozen=True)
class Matrix:
    rows: tuple[tuple["Node", ...], ...]
    pos: int = 0


Node = Union[Num, Var, Unary, Bin, Call, Matrix]


# --------------------------------------------------------------- tokenizer

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[-+*/^()\[\],]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            stripped = len(text[pos:]) - len(text[pos:].lstrip())
            raise ParseError(f"unexpected character {text[pos + stripped]!r}", pos + stripped, text)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, funcs: Mapping[str, Callable]):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0
        self.funcs = funcs

    @property
    def tok(self):
        return self.tokens[self.i]

    def error(self, msg, pos=None):
        return ParseError(msg, self.tok[2] if pos is None else pos, self.text)

    def accept(self, value):
        if self.tok[0] == "op" and self.tok[1] == value:
            self.i += 1
            return True
        return False

    def expect(self, value):
        if not self.accept(value):
            got = self.tok[1] or "end of input"
            raise self.error(f"expected {value!r}, got {got!r}")

    def parse(self) -> Node:
        if self.tok[0] == "op" and self.tok[1] == "[":
            node = self.matrix()
        else:
            node = self.expr()
        if self.tok[0] != "end":
            raise self.error(f"unexpected token {self.tok[1]!r}")
        return node

    def matrix(self) -> Matrix:
        pos = self.tok[2]
        self.expect("[")
        rows = [self.row()]
        while self.accept(","):
            rows.append(self.row())
        self.expect("]")
        width = len(rows[0])
        if any(len(r) != width for r in rows) or width != len(rows):
            raise ParseError("matrix must be square with equal row lengths", pos, self.text)
        return Matrix(tuple(rows), pos)

    def row(self) -> tuple[Node, ...]:
        self.expect("[")
        items = [self.expr()]
        while self.accept(","):
            items.append(self.expr())
        self.expect("]")
        return tuple(items)

    def expr(self) -> Node:
        node = self.term()
        while self.tok[0] == "op" and self.tok[1] in "+-":
            op, pos = self.tok[1], self.tok[2]
            self.i += 1
            node = Bin(op, node, self.term(), pos)
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.tok[0] == "op" and self.tok[1] in ("*", "/"):
            op, pos = self.tok[1], self.tok[2]
            self.i += 1
            node = Bin(op, node, self.unary(), pos)
        return node

    def unary(self) -> Node:
        if self.tok[0] == "op" and self.tok[1] in "+-":
            op, pos = self.tok[1], self.tok[2]
            self.i += 1
            arg = self.unary()
            return arg if op == "+" else Unary("-", arg, pos)
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.tok[0] == "op" and self.tok[1] in ("^", "**"):
            pos = self.tok[2]
            self.i += 1
            return Bin("^", base, self.unary(), pos)
        return base

    def atom(self) -> Node:
        kind, value, pos = self.tok
        if kind == "num":
            self.i += 1
            return Num(float(value), pos)
        if kind == "name":
            self.i += 1
            if value == "pi":
                return Num(math.pi, pos)
            if self.tok[0] == "op" and self.tok[1] == "(":
                if value not in self.funcs:
                    raise ParseError(f"unknown function {value!r}", pos, self.text)
                self.i += 1
                arg = self.expr()
                self.expect(")")
                return Call(value, arg, pos)
            index = None
            if self.accept("["):
                if self.tok[0] != "num" or not re.fullmatch(r"\d+", self.tok[1]):
                    raise self.error("component index must be a positive integer")
                index = int(self.tok[1])
                if index < 1:
                    raise self.error("component indices are 1-based")
                self.i += 1
                self.expect("]")
            return Var(value, index, pos)
        if kind == "op" and value == "(":
            self.i += 1
            node = self.expr()
            self.expect(")")
            return node
        raise self.error(f"unexpected token {value or 'end of input'!r}")


# ------------------------------------------------------------ evaluation


def _compile(node: Node, funcs: Mapping[str, Callable]) -> Callable[[Mapping[str, np.ndarray]], np.ndarray]:
    if isinstance(node, Num):
        v = node.value
        return lambda env: v
    if isinstance(node, Var):
        name, idx = node.name, node.index
        if idx is None:
            return lambda env: env[name][..., 0] if np.ndim(env[name]) > 1 else env[name]
        k = idx - 1
        return lambda env: env[name][..., k]
    if isinstance(node, Unary):
        f = _compile(node.arg, funcs)
        return lambda env: -f(env)
    if isinstance(node, Bin):
        a = _compile(node.left, funcs)
        b = _compile(node.right, funcs)
        op = {"+": np.add, "-": np.subtract, "*": np.multiply, "/": np.divide, "^": np.power}[node.op]
        return lambda env: op(a(env), b(env))
    if isinstance(node, Call):
        fn = funcs[node.func]
        f = _compile(node.arg, funcs)
        return lambda env: fn(f(env))
    raise TypeError(f"cannot compile {node!r}")


def free_variables(node: Node) -> set[tuple[str, int | None]]:
    if isinstance(node, Var):
        return {(node.name, node.index)}
    if isinstance(node, Num):
        return set()
    if isinstance(node, Unary):
        return free_variables(node.arg)
    if isinstance(node, Bin):
        return free_variables(node.left) | free_variables(node.right)
    if isinstance(node, Call):
        return free_variables(node.arg)
    if isinstance(node, Matrix):
        out = set()
        for row in node.rows:
            for item in row:
                out |= free_variables(item)
        return out
    raise TypeError(node)


# ------------------------------------------------------ periodicity check


class _Nonlinear(Exception):
    pass


def _affine(node: Node, funcs) -> tuple[float, dict]:
    """Constant term and coordinate coefficients of an affine expression."""
    if isinstance(node, Num):
        return node.value, {}
    if isinstance(node, Var):
        return 0.0, {(node.name, node.index): 1.0}
    if isinstance(node, Unary):
        c, lin = _affine(node.arg, funcs)
        return -c, {k: -v for k, v in lin.items()}
    if isinstance(node, Bin):
        ca, la = _affine(node.left, funcs)
        cb, lb = _affine(node.right, funcs)
        if node.op in "+-":
            sign = 1.0 if node.op == "+" else -1.0
            lin = dict(la)
            for k, v in lb.items():
                lin[k] = lin.get(k, 0.0) + sign * v
            return ca + sign * cb, lin
        if node.op == "*":
            if la and lb:
                raise _Nonlinear
            if la:
                return ca * cb, {k: v * cb for k, v in la.items()}
            return ca * cb, {k: v * ca for k, v in lb.items()}
        if node.op == "/":
            if lb:
                raise _Nonlinear
            return ca / cb, {k: v / cb for k, v in la.items()}
        if la or lb:
            raise _Nonlinear
        return ca**cb, {}
    if isinstance(node, Call):
        c, lin = _affine(node.arg, funcs)
        if lin:
            raise _Nonlinear
        return float(funcs[node.func](c)), {}
    raise _Nonlinear


def _check_periodic(node: Node, text: str, funcs, inside_trig=False) -> None:
    if isinstance(node, Var):
        if not inside_trig:
            raise PeriodicityViolation(
                f"variable {node.name!r} used outside a sin/cos argument", node.pos, text)
        return
    if isinstance(node, Num):
        return
    if isinstance(node, Unary):
        _check_periodic(node.arg, text, funcs, inside_trig)
        return
    if isinstance(node, Bin):
        _check_periodic(node.left, text, funcs, inside_trig)
        _check_periodic(node.right, text, funcs, inside_trig)
        return
    if isinstance(node, Matrix):
        for row in node.rows:
            for item in row:
                _check_periodic(item, text, funcs)
        return
    if isinstance(node, Call):
        if node.func in TRIG:
            try:
                _, lin = _affine(node.arg, funcs)
            except _Nonlinear:
                raise PeriodicityViolation(
                    f"argument of {node.func} must be affine in the coordinates", node.pos, text
                ) from None
            for (name, idx), coeff in lin.items():
                freq = coeff / (2 * math.pi)
                if abs(freq - round(freq)) > 1e-9 * max(1.0, abs(freq)):
                    label = name if idx is None else f"{name}[{idx}]"
                    raise PeriodicityViolation(
                        f"frequency of {label} in {node.func} is {coeff:.6g}, "
                        "not an integer multiple of 2*pi", node.pos, text)
            return
        _check_periodic(node.arg, text, funcs, inside_trig)
        return
    raise TypeError(node)


# ------------------------------------------------------------ public API


@dataclass(frozen=True)
class CoefficientExpr:
    """Parsed kernel ``(y1, ..., yn) -> d x d`` matrix.

    ``n`` is the number of slots, ``cell_dim`` the dimension of each slot
    and ``dim`` the matrix size. A scalar expression denotes ``a * I``.
    """

    text: str
    ast: Node
    n: int
    dim: int
    cell_dim: int
    _entries: tuple = field(repr=False, compare=False, default=())

    def variables(self) -> set[int]:
        """1-based slot numbers that actually occur in the expression."""
        return {int(PERIODIC_VAR.match(name).group(1)) for name, _ in free_variables(self.ast)}

    def __call__(self, ys: np.ndarray) -> np.ndarray:
        """Evaluate at ``ys`` of shape (P, n, cell_dim); returns (P, dim, dim)."""
        ys = np.asarray(ys, dtype=float)
        if ys.ndim == 2:
            ys = ys[None]
        P = ys.shape[0]
        env = {f"y{i + 1}": ys[:, i, :] for i in range(ys.shape[1])}
        out = np.zeros((P, self.dim, self.dim))
        if isinstance(self.ast, Matrix):
            for i, row in enumerate(self._entries):
                for j, fn in enumerate(row):
                    out[:, i, j] = fn(env)
        else:
            val = np.broadcast_to(self._entries[0][0](env), (P,))
            for i in range(self.dim):
                out[:, i, i] = val
        return out


def _max_slot(ast) -> int:
    slots = [int(PERIODIC_VAR.match(name).group(1)) for name, _ in free_variables(ast)]
    return max(slots, default=1)


def parse_coefficient(text: str, n: int | None = None, dim: int | None = None,
                      cell_dim: int | None = None) -> CoefficientExpr:
    """Parse a periodic kernel expression.

    >>> a = parse_coefficient("2 + sin(2*pi*y1)")
    >>> float(a([[[0.25]]])[0, 0, 0])
    3.0
    """
    funcs = SMOOTH_FUNCS
    ast = _Parser(text, funcs).parse()
    for name, idx in free_variables(ast):
        if not PERIODIC_VAR.match(name):
            raise ParseError(f"unknown variable {name!r}; kernels use y1..yn", _find(ast, name), text)
    _check_periodic(ast, text, funcs)
    if isinstance(ast, Matrix):
        size = len(ast.rows)
        if dim is not None and dim != size:
            raise ParseError(f"matrix is {size}x{size} but dim={dim}", ast.pos, text)
        dim = size
    dim = dim or 1
    cell_dim = cell_dim or dim
    max_slot = _max_slot(ast)
    n = n or max_slot
    if max_slot > n:
        raise ParseError(f"expression uses y{max_slot} but n={n}", _find(ast, f"y{max_slot}"), text)
    for name, idx in free_variables(ast):
        if idx is None and cell_dim > 1:
            raise ParseError(f"{name} is a {cell_dim}-vector; use {name}[k]", _find(ast, name), text)
        if idx is not None and idx > cell_dim:
            raise ParseError(f"component {name}[{idx}] exceeds cell dimension {cell_dim}",
                             _find(ast, name), text)
    if isinstance(ast, Matrix):
        entries = tuple(tuple(_compile(item, funcs) for item in row) for row in ast.rows)
    else:
        entries = ((_compile(ast, funcs),),)
    return CoefficientExpr(text=text, ast=ast, n=n, dim=dim, cell_dim=cell_dim, _entries=entries)


def _find(ast, name) -> int:
    stack = [ast]
    while stack:
        node = stack.pop()
        if isinstance(node, Var) and node.name == name:
            return node.pos
        if isinstance(node, Unary):
            stack.append(node.arg)
        elif isinstance(node, Bin):
            stack += [node.right, node.left]
        elif isinstance(node, Call):
            stack.append(node.arg)
        elif isinstance(node, Matrix):
            for row in node.rows:
                stack += list(row)
    return 0


@dataclass(frozen=True)
class ScalarExpr:
    """Free-mode scalar expression over named variables."""

    text: str
    ast: Node
    names: tuple[str, ...]
    _fn: Callable = field(repr=False, compare=False, default=None)

    def __call__(self, **env) -> np.ndarray:
        return self._fn({k: np.asarray(v, dtype=float) for k, v in env.items()})


def parse_expression(text: str, names: Sequence[str]) -> ScalarExpr:
    """Parse a non-periodic scalar expression in the given variable names.

    A name used with an index (``x[2]``) receives the trailing-axis
    component of the bound array.
    """
    funcs = {**SMOOTH_FUNCS, **FREE_ONLY_FUNCS}
    ast = _Parser(text, funcs).parse()
    if isinstance(ast, Matrix):
        raise ParseError("matrix literal not allowed here", ast.pos, text)
    for name, _ in free_variables(ast):
        if name not in names:
            raise ParseError(f"unknown variable {name!r}; expected one of {sorted(names)}",
                             _find(ast, name), text)
    return ScalarExpr(text=text, ast=ast, names=tuple(names), _fn=_compile(ast, funcs))

"""Expression language for system right-hand sides.

Scalar expressions over a declared signature (time ``t``, slow variables
``x1..xk``, fast variables ``y1..ym``, named parameters) are parsed into
immutable trees, evaluated in IEEE double precision, and differentiated
exactly with forward-mode dual numbers (one seeded pass per derivative
column).

Environments may bind variables to floats or to equal-length 1-D numpy
arrays; evaluation broadcasts, which is how the rest of the package runs
grids of points through one tree walk.  Expressions are immutable and
evaluation is pure, so parsed trees may be shared across threads.

Grammar (documented as EBNF in the repository docs)::

    expr   := term   (("+" | "-") term)*
    term   := unary  (("*" | "/") unary)*
    unary  := "-" unary | power
    power  := atom ["^" unary]              (right associative)
    atom   := NUMBER | IDENT | IDENT "(" expr ("," expr)* ")" | "(" expr ")"

``^`` binds tighter than unary minus, so ``-x^2 == -(x^2)``.  ``pi`` is a
built-in constant.  There is no implicit multiplication.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import (
    DomainEvalError,
    NonSmoothWarning,
    ParseError,
    UnknownIdentifierError,
)

__all__ = [
    "Const", "Var", "Neg", "Bin", "Call", "Expr", "Signature",
    "parse", "eval_expr", "jacobian", "to_source", "free_vars", "FUNCTIONS",
]

FUNCTIONS = {"sin": 1, "cos": 1, "exp": 1, "tanh": 1, "sqrt": 1, "abs": 1,
             "norm": None}  # None: n-ary, at least one argument


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: "Expr"


@dataclass(frozen=True)
class Bin:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    fn: str
    args: tuple


Expr = Union[Const, Var, Neg, Bin, Call]


@dataclass(frozen=True)
class Signature:
    """Declared variables an expression may reference."""

    k: int
    m: int = 0
    params: tuple = ()

    def names(self):
        out = {"t"}
        out.update(f"x{i + 1}" for i in range(self.k))
        out.update(f"y{i + 1}" for i in range(self.m))
        out.update(self.params)
        return out

    def x_names(self):
        return tuple(f"x{i + 1}" for i in range(self.k))

    def y_names(self):
        return tuple(f"y{i + 1}" for i in range(self.m))


# --- tokenizer --------------------------------------------------------------

_OPS = set("+-*/^(),")


def _tokenize(source):
    toks = []
    i, n = 0, len(source)
    while i < n:
        c = source[i]
        if c in " \t\r\n":
            i += 1
            continue
        if c in _OPS:
            toks.append((c, c, i))
            i += 1
            continue
        if c.isdigit() or (c == "." and i + 1 < n and source[i + 1].isdigit()):
            j = i
            while j < n and source[j].isdigit():
                j += 1
            if j < n and source[j] == ".":
                j += 1
                while j < n and source[j].isdigit():
                    j += 1
            if j < n and source[j] in "eE":
                j2 = j + 1
                if j2 < n and source[j2] in "+-":
                    j2 += 1
                if j2 < n and source[j2].isdigit():
                    j = j2
                    while j < n and source[j].isdigit():
                        j += 1
            toks.append(("num", source[i:j], i))
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (source[j].isalnum() or source[j] == "_"):
                j += 1
            toks.append(("ident", source[i:j], i))
            i = j
            continue
        raise ParseError(f"unexpected character {c!r}", i,
                         {"number", "identifier", "operator"})
    toks.append(("end", "", n))
    return toks


# --- parser -----------------------------------------------------------------

_ATOM_EXPECTED = {"number", "identifier", "'('", "'-'"}


class _Parser:
    def __init__(self, source, signature):
        self.toks = _tokenize(source)
        self.pos = 0
        self.sig = signature
        self.names = signature.names()

    def peek(self):
        return self.toks[self.pos]

    def advance(self):
        tok = self.toks[self.pos]
        self.pos += 1
        return tok

    def expect(self, kind, expected):
        tok = self.peek()
        if tok[0] != kind:
            raise ParseError(f"unexpected token {tok[1] or 'end of input'!r}",
                             tok[2], expected)
        return self.advance()

    def parse(self):
        node = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            raise ParseError(f"trailing input {tok[1]!r}", tok[2],
                             {"operator", "end"})
        return node

    def expr(self):
        node = self.term()
        while self.peek()[0] in ("+", "-"):
            op = self.advance()[0]
            node = Bin(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[0] in ("*", "/"):
            op = self.advance()[0]
            node = Bin(op, node, self.unary())
        return node

    def unary(self):
        if self.peek()[0] == "-":
            self.advance()
            return Neg(self.unary())
        return self.power()

    def power(self):
        node = self.atom()
        if self.peek()[0] == "^":
            self.advance()
            node = Bin("^", node, self.unary())
        return node

    def atom(self):
        kind, text, offset = self.peek()
        if kind == "num":
            self.advance()
            return Const(float(text))
        if kind == "(":
            self.advance()
            node = self.expr()
            self.expect(")", {"')'"})
            return node
        if kind == "ident":
            self.advance()
            if self.peek()[0] == "(":
                if text not in FUNCTIONS:
                    raise UnknownIdentifierError(text, offset)
                self.advance()
                args = [self.expr()]
                while self.peek()[0] == ",":
                    self.advance()
                    args.append(self.expr())
                self.expect(")", {"')'", "','"})
                arity = FUNCTIONS[text]
                if arity is not None and len(args) != arity:
                    raise ParseError(
                        f"function '{text}' takes {arity} argument(s), "
                        f"got {len(args)}", offset, {f"{arity} arguments"})
                return Call(text, tuple(args))
            if text in FUNCTIONS:
                raise ParseError(f"function '{text}' used without arguments",
                                 offset, {"'('"})
            if text == "pi":
                return Const(math.pi)
            if text in self.names:
                return Var(text)
            raise UnknownIdentifierError(text, offset)
        raise ParseError(f"unexpected token {text or 'end of input'!r}",
                         offset, _ATOM_EXPECTED)


def parse(source, signature):
    """Parse ``source`` against ``signature``; all free variables must resolve.

    Raises :class:`ParseError` (with byte offset and expected-token set) or
    :class:`UnknownIdentifierError`.
    """
    return _Parser(source, signature).parse()


# --- dual numbers -----------------------------------------------------------

class Dual:
    """Forward-mode dual number; ``val``/``der`` are floats or numpy arrays."""

    __slots__ = ("val", "der")
    __array_ufunc__ = None  # make ndarray <op> Dual defer to the reflected ops

    def __init__(self, val, der):
        self.val = val
        self.der = der

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val + other.val, self.der + other.der)
        return Dual(self.val + other, self.der)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val - other.val, self.der - other.der)
        return Dual(self.val - other, self.der)

    def __rsub__(self, other):
        return Dual(other - self.val, -self.der)

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val * other.val,
                        self.der * other.val + self.val * other.der)
        return Dual(self.val * other, self.der * other)

    __rmul__ = __mul__

    def __neg__(self):
        return Dual(-self.val, -self.der)


def _value(x):
    return x.val if isinstance(x, Dual) else x


def _div(a, b, node):
    bv = _value(b)
    if np.any(bv == 0.0):
        raise DomainEvalError("division by zero", node)
    if isinstance(a, Dual) or isinstance(b, Dual):
        av, ad = (a.val, a.der) if isinstance(a, Dual) else (a, 0.0)
        bd = b.der if isinstance(b, Dual) else 0.0
        return Dual(av / bv, (ad * bv - av * bd) / (bv * bv))
    return a / b


def _pow(a, b, node):
    av, bv = _value(a), _value(b)
    b_is_const = not isinstance(b, Dual) or np.all(b.der == 0.0)
    if b_is_const and np.all(bv == np.round(bv)):
        p = bv
        if np.any((av == 0.0) & (p < 0)):
            raise DomainEvalError("zero raised to a negative power", node)
        val = np.power(av, p)
        if isinstance(a, Dual):
            der = np.where(p == 0.0, 0.0, p * np.power(av, p - 1) * a.der)
            return Dual(val, der)
        return val
    # general case x^y = exp(y ln x) needs a positive base
    if np.any(av <= 0.0):
        raise DomainEvalError("non-integer power of a non-positive base", node)
    val = np.power(av, bv)
    if isinstance(a, Dual) or isinstance(b, Dual):
        ad = a.der if isinstance(a, Dual) else 0.0
        bd = b.der if isinstance(b, Dual) else 0.0
        der = val * (bd * np.log(av) + bv * ad / av)
        return Dual(val, der)
    return val


def _sqrt(x, node):
    xv = _value(x)
    if np.any(xv < 0.0):
        raise DomainEvalError("sqrt of a negative value", node)
    val = np.sqrt(xv)
    if isinstance(x, Dual):
        if np.any(xv == 0.0):
            if np.any(x.der != 0.0):
                warnings.warn("sqrt differentiated at 0; derivative set to 0",
                              NonSmoothWarning, stacklevel=2)
            der = np.where(xv == 0.0, 0.0, x.der / (2.0 * val))
        else:
            der = x.der / (2.0 * val)
        return Dual(val, der)
    return val


def _abs(x, node):
    xv = _value(x)
    val = np.abs(xv)
    if isinstance(x, Dual):
        if np.any(xv == 0.0) and np.any(x.der != 0.0):
            warnings.warn("abs differentiated at 0; subderivative 0 returned",
                          NonSmoothWarning, stacklevel=2)
        return Dual(val, np.sign(xv) * x.der)
    return val


def _norm(args, node):
    vals = [_value(a) for a in args]
    sq = vals[0] * vals[0]
    for v in vals[1:]:
        sq = sq + v * v
    r = np.sqrt(sq)
    if not any(isinstance(a, Dual) for a in args):
        return r
    num = 0.0
    for a, v in zip(args, vals):
        if isinstance(a, Dual):
            num = num + v * a.der
    if np.any(r == 0.0):
        warnings.warn("norm differentiated at the origin; "
                      "subderivative 0 returned", NonSmoothWarning,
                      stacklevel=2)
        der = np.where(r == 0.0, 0.0, num / np.where(r == 0.0, 1.0, r))
    else:
        der = num / r
    return Dual(r, der)


_UNARY_FNS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "tanh": np.tanh}


def _eval(node, env):
    tp = type(node)
    if tp is Bin:
        a = _eval(node.left, env)
        b = _eval(node.right, env)
        op = node.op
        if op == "+":
            return a + b
        if op == "-":
            return a - b
        if op == "*":
            return a * b
        if op == "/":
            return _div(a, b, node)
        return _pow(a, b, node)
    if tp is Var:
        return env[node.name]
    if tp is Const:
        return node.value
    if tp is Call:
        fn = node.fn
        if fn == "norm":
            return _norm([_eval(a, env) for a in node.args], node)
        arg = _eval(node.args[0], env)
        if fn == "sqrt":
            return _sqrt(arg, node)
        if fn == "abs":
            return _abs(arg, node)
        f = _UNARY_FNS[fn]
        if isinstance(arg, Dual):
            if fn == "sin":
                return Dual(np.sin(arg.val), np.cos(arg.val) * arg.der)
            if fn == "cos":
                return Dual(np.cos(arg.val), -np.sin(arg.val) * arg.der)
            if fn == "exp":
                v = np.exp(arg.val)
                return Dual(v, v * arg.der)
            v = np.tanh(arg.val)
            return Dual(v, (1.0 - v * v) * arg.der)
        return f(arg)
    # Neg
    return -_eval(node.arg, env)


def eval_expr(expr, env):
    """Evaluate ``expr`` with the bindings in ``env``.

    Scalar bindings give a float; 1-D array bindings broadcast and give an
    array.  Raises :class:`DomainEvalError` carrying the offending node, or
    ``KeyError`` when a free variable is unbound.
    """
    out = _eval(expr, env)
    if np.ndim(out) == 0:
        return float(out)
    return np.asarray(out, dtype=float)


def jacobian(exprs, env, wrt):
    """Derivative matrix of ``exprs`` with respect to the variables ``wrt``.

    One seeded dual-number pass per column.  Rows are ordered as ``exprs``,
    columns as ``wrt``.  With scalar bindings the result has shape
    ``(len(exprs), len(wrt))``; with 1-D array bindings of length P it has
    shape ``(len(exprs), len(wrt), P)``.
    """
    wrt = list(wrt)
    if len(set(wrt)) != len(wrt):
        raise ValueError("sysdsl.jacobian: wrt names must be distinct")
    if not wrt:
        return np.zeros((len(exprs), 0))
    vector = np.ndim(env[wrt[0]]) > 0
    cols = []
    for name in wrt:
        seeded = dict(env)
        base = env[name]
        one = np.ones_like(np.asarray(base, dtype=float)) if vector else 1.0
        seeded[name] = Dual(base, one)
        col = []
        for e in exprs:
            out = _eval(e, seeded)
            if isinstance(out, Dual):
                d = out.der
            else:
                d = np.zeros_like(np.asarray(out, dtype=float)) if vector else 0.0
            col.append(d + (np.zeros_like(one) if vector else 0.0))
        cols.append(col)
    mat = np.array(cols, dtype=float)          # (wrt, exprs[, P])
    return np.swapaxes(mat, 0, 1)              # (exprs, wrt[, P])


def free_vars(expr):
    """Set of variable names referenced by ``expr``."""
    out = set()
    stack = [expr]
    while stack:
        node = stack.pop()
        tp = type(node)
        if tp is Var:
            out.add(node.name)
        elif tp is Neg:
            stack.append(node.arg)
        elif tp is Bin:
            stack.append(node.left)
            stack.append(node.right)
        elif tp is Call:
            stack.extend(node.args)
    return out


def contains_nonsmooth(expr):
    """True when the tree contains abs/norm/sqrt nodes (kinks possible)."""
    stack = [expr]
    while stack:
        node = stack.pop()
        tp = type(node)
        if tp is Call:
            if node.fn in ("abs", "norm", "sqrt"):
                return True
            stack.extend(node.args)
        elif tp is Neg:
            stack.append(node.arg)
        elif tp is Bin:
            stack.append(node.left)
            stack.append(node.right)
    return False


# --- printing ---------------------------------------------------------------

_LEVEL = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}


def _print(node, min_level):
    tp = type(node)
    if tp is Const:
        v = node.value
        s = repr(v)
        return f"({s})" if v < 0 else s
    if tp is Var:
        return node.name
    if tp is Neg:
        s = f"-{_print(node.arg, 3)}"
        return f"({s})" if min_level > 3 else s
    if tp is Call:
        return f"{node.fn}({', '.join(_print(a, 0) for a in node.args)})"
    lvl = _LEVEL[node.op]
    if node.op == "^":  # right associative: parenthesize an equal-level left child
        left = _print(node.left, lvl + 1)
        right = _print(node.right, lvl)
    else:
        left = _print(node.left, lvl)
        right = _print(node.right, lvl + 1)
    s = f"{left} {node.op} {right}"
    return f"({s})" if lvl < min_level else s


def to_source(expr):
    """Render ``expr`` as parseable text; reparsing evaluates identically."""
    return _print(expr, 0)

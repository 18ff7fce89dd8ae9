"""Problem-definition files: a small expression language, no eval().

File format is line-oriented ``key = expression`` with ``#`` comments:

    # two-rate discounting
    name = my-problem
    T = 1.0
    b = u
    sigma = 0.4
    g = exp(-0.05*(t - tau)) * (0.5*u^2 + 0.5*x^2)
    h = exp(-0.5*(T - tau)) * x^2
    u_lo = -5
    u_hi = 5
    x_lo = -6
    x_hi = 6

Expressions support + - * / (also the unicode signs), ^ or ** for powers,
unary minus, parentheses, and the functions exp / min / max. Variables are
restricted per coefficient: b and sigma see (t, x, u); g sees
(tau, t, x, u, y, z); h sees (tau, x). The horizon T is available as a
constant everywhere. Parsing is a plain recursive-descent pass producing a
tuple AST that compiles to numpy-vectorized closures.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import UsageError
from .problem import ProblemSpec

__all__ = ["parse_expr", "serialize_expr", "compile_expr", "load_problem_file", "parse_problem_text"]

_FUNCS = {"exp": 1, "min": None, "max": None}  # None = variadic (>= 2)
_VARS = ("tau", "t", "x", "u", "y", "z", "T")


# -- tokenizer ---------------------------------------------------------------

def _tokenize(text: str) -> list:
    out = []
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
            continue
        if c in "+-*/^(),":
            if c == "*" and i + 1 < n and text[i + 1] == "*":
                out.append(("op", "^"))
                i += 2
                continue
            kind = "op" if c not in "()," else c
            out.append((kind, c) if kind == "op" else (c, c))
            i += 1
            continue
        if c == "×":  # ×
            out.append(("op", "*"))
            i += 1
            continue
        if c == "÷":  # ÷
            out.append(("op", "/"))
            i += 1
            continue
        if c == "τ":  # τ
            out.append(("name", "tau"))
            i += 1
            continue
        if c.isdigit() or (c == "." and i + 1 < n and text[i + 1].isdigit()):
            j = i
            seen_e = False
            while j < n and (
                text[j].isdigit()
                or text[j] == "."
                or text[j] in "eE"
                or (seen_e and text[j] in "+-" and text[j - 1] in "eE")
            ):
                if text[j] in "eE":
                    if seen_e:
                        break
                    seen_e = True
                j += 1
            try:
                val = float(text[i:j])
            except ValueError:
                raise UsageError(f"bad number literal {text[i:j]!r}")
            out.append(("num", val))
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            out.append(("name", text[i:j]))
            i = j
            continue
        raise UsageError(f"unexpected character {c!r} in expression")
    out.append(("end", ""))
    return out


# -- parser ------------------------------------------------------------------

class _Parser:
    def __init__(self, tokens):
        self.toks = tokens
        self.pos = 0

    def peek(self):
        return self.toks[self.pos]

    def take(self):
        tok = self.toks[self.pos]
        self.pos += 1
        return tok

    def expect(self, kind, val=None):
        tok = self.take()
        if tok[0] != kind or (val is not None and tok[1] != val):
            raise UsageError(f"expected {val or kind}, found {tok[1]!r}")
        return tok

    def parse(self):
        node = self.sum()
        if self.peek()[0] != "end":
            raise UsageError(f"trailing input starting at {self.peek()[1]!r}")
        return node

    def sum(self):
        node = self.product()
        while self.peek() == ("op", "+") or self.peek() == ("op", "-"):
            op = self.take()[1]
            node = ("bin", op, node, self.product())
        return node

    def product(self):
        node = self.unary()
        while self.peek() == ("op", "*") or self.peek() == ("op", "/"):
            op = self.take()[1]
            node = ("bin", op, node, self.unary())
        return node

    def unary(self):
        if self.peek() == ("op", "-"):
            self.take()
            return ("neg", self.unary())
        if self.peek() == ("op", "+"):
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek() == ("op", "^"):
            self.take()
            return ("bin", "^", base, self.unary())  # right-associative
        return base

    def atom(self):
        kind, val = self.take()
        if kind == "num":
            return ("num", val)
        if kind == "name":
            if self.peek()[0] == "(":
                if val not in _FUNCS:
                    raise UsageError(f"unknown function {val!r}")
                self.take()
                args = [self.sum()]
                while self.peek()[0] == ",":
                    self.take()
                    args.append(self.sum())
                self.expect(")")
                arity = _FUNCS[val]
                if arity is not None and len(args) != arity:
                    raise UsageError(f"{val} takes {arity} argument(s)")
                if arity is None and len(args) < 2:
                    raise UsageError(f"{val} takes at least two arguments")
                return ("call", val, tuple(args))
            if val not in _VARS:
                raise UsageError(f"unknown variable {val!r}")
            return ("var", val)
        if kind == "(":
            node = self.sum()
            self.expect(")")
            return node
        raise UsageError(f"unexpected token {val!r}")


def parse_expr(text: str):
    """Parse an expression into a tuple AST."""
    return _Parser(_tokenize(text)).parse()


def serialize_expr(node) -> str:
    """Deterministic fully-parenthesized rendering; parse(serialize(n)) == n."""
    kind = node[0]
    if kind == "num":
        return repr(node[1])
    if kind == "var":
        return node[1]
    if kind == "neg":
        return f"(-{serialize_expr(node[1])})"
    if kind == "bin":
        _, op, lhs, rhs = node
        return f"({serialize_expr(lhs)} {op} {serialize_expr(rhs)})"
    if kind == "call":
        _, fn, args = node
        return f"{fn}({', '.join(serialize_expr(a) for a in args)})"
    raise UsageError(f"bad AST node {node!r}")


def free_vars(node) -> set:
    kind = node[0]
    if kind == "num":
        return set()
    if kind == "var":
        return {node[1]}
    if kind == "neg":
        return free_vars(node[1])
    if kind == "bin":
        return free_vars(node[2]) | free_vars(node[3])
    if kind == "call":
        out = set()
        for a in node[2]:
            out |= free_vars(a)
        return out
    raise UsageError(f"bad AST node {node!r}")


def compile_expr(node, allowed: tuple):
    """Compile an AST into f(env-dict) using numpy operations."""
    extra = free_vars(node) - set(allowed) - {"T"}
    if extra:
        raise UsageError(
            f"variable(s) {sorted(extra)} not allowed here (allowed: {list(allowed)})"
        )

    def build(n):
        kind = n[0]
        if kind == "num":
            v = n[1]
            return lambda env: v
        if kind == "var":
            name = n[1]
            return lambda env: env[name]
        if kind == "neg":
            f = build(n[1])
            return lambda env: -f(env)
        if kind == "bin":
            _, op, ln, rn = n
            lf, rf = build(ln), build(rn)
            if op == "+":
                return lambda env: lf(env) + rf(env)
            if op == "-":
                return lambda env: lf(env) - rf(env)
            if op == "*":
                return lambda env: lf(env) * rf(env)
            if op == "/":
                return lambda env: lf(env) / rf(env)
            if op == "^":
                return lambda env: lf(env) ** rf(env)
        if kind == "call":
            _, fn, argn = n
            fs = [build(a) for a in argn]
            if fn == "exp":
                f0 = fs[0]
                return lambda env: np.exp(f0(env))
            if fn == "min":
                return lambda env: _fold(np.minimum, fs, env)
            if fn == "max":
                return lambda env: _fold(np.maximum, fs, env)
        raise UsageError(f"bad AST node {n!r}")

    return build(node)


def _fold(op, fs, env):
    acc = fs[0](env)
    for f in fs[1:]:
        acc = op(acc, f(env))
    return acc


# -- problem files -----------------------------------------------------------

_REQUIRED = ("T", "b", "sigma", "g", "h", "u_lo", "u_hi", "x_lo", "x_hi")
_CONST_KEYS = ("T", "u_lo", "u_hi", "x_lo", "x_hi", "lipschitz_L")


def parse_problem_text(text: str, name: str = "problem-file") -> ProblemSpec:
    entries = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"line {lineno}: expected 'key = expression'")
        key, _, rhs = line.partition("=")
        key, rhs = key.strip(), rhs.strip()
        if key in entries:
            raise UsageError(f"line {lineno}: duplicate key {key!r}")
        if not rhs:
            raise UsageError(f"line {lineno}: empty value for {key!r}")
        entries[key] = rhs

    missing = [k for k in _REQUIRED if k not in entries]
    if missing:
        raise UsageError(f"problem file missing key(s): {', '.join(missing)}")
    known = set(_REQUIRED) | {"name", "lipschitz_L"}
    unknown = set(entries) - known
    if unknown:
        raise UsageError(f"unknown problem-file key(s): {', '.join(sorted(unknown))}")

    consts = {}
    for key in _CONST_KEYS:
        if key not in entries:
            continue
        node = parse_expr(entries[key])
        if free_vars(node):
            raise UsageError(f"{key} must be a constant expression")
        consts[key] = float(compile_expr(node, ())({}))

    horizon = consts["T"]
    env_base = {"T": horizon}

    def make(key, allowed, argnames):
        node = parse_expr(entries[key])
        fn = compile_expr(node, allowed)

        def call(*args):
            env = dict(env_base)
            env.update(zip(argnames, args))
            return fn(env)

        return call

    b = make("b", ("t", "x", "u"), ("t", "x", "u"))
    sigma = make("sigma", ("t", "x", "u"), ("t", "x", "u"))
    g = make("g", ("tau", "t", "x", "u", "y", "z"), ("tau", "t", "x", "u", "y", "z"))
    h = make("h", ("tau", "x"), ("tau", "x"))

    return ProblemSpec(
        name=entries.get("name", name),
        horizon=horizon,
        b=lambda t, x, u: b(t, x, u) + 0.0 * np.asarray(x) + 0.0 * np.asarray(u),
        sigma=lambda t, x, u: sigma(t, x, u) + 0.0 * np.asarray(x) + 0.0 * np.asarray(u),
        g=lambda tau, t, x, u, y, z: g(tau, t, x, u, y, z)
        + 0.0 * np.asarray(x) * np.asarray(u),
        h=lambda tau, x: h(tau, x) + 0.0 * np.asarray(x),
        u_lo=consts["u_lo"],
        u_hi=consts["u_hi"],
        x_lo=consts["x_lo"],
        x_hi=consts["x_hi"],
        lipschitz_L=consts.get("lipschitz_L"),
    )


def load_problem_file(path) -> ProblemSpec:
    path = Path(path)
    if not path.exists():
        raise UsageError(f"problem file not found: {path}")
    return parse_problem_text(path.read_text(), name=path.stem)

"""Arithmetic expressions for custom drift and diffusion fields.

Expressions are parsed with sympy and compiled to vectorized numpy callables.
Only a fixed vocabulary is accepted: + - * / ^ (or **), parentheses, numbers,
the functions tanh exp sqrt abs sin cos log, the constants pi and e, named
user constants, and the state variables (``x`` in one dimension, ``x1 .. xn``
otherwise; ``x`` is also accepted for ``x1``).
"""
import re
import tokenize
from io import StringIO
from typing import Dict, Iterable, List, Mapping, Optional

import numpy as np
import sympy
from sympy.parsing.sympy_parser import convert_xor, parse_expr, standard_transformations

from errors import ConfigError

FUNCTIONS = {
    "tanh": sympy.tanh,
    "exp": sympy.exp,
    "sqrt": sympy.sqrt,
    "abs": sympy.Abs,
    "sin": sympy.sin,
    "cos": sympy.cos,
    "log": sympy.log,
}
BUILTIN_CONSTANTS = {"pi": sympy.pi, "e": sympy.E}

_NUMBER = re.compile(r"^(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")
_OPERATORS = {"+", "-", "*", "/", "^", "**", "(", ")"}


def variable_names(dim: int) -> List[str]:
    return ["x"] if dim == 1 else [f"x{i + 1}" for i in range(dim)]


def _check_tokens(text: str, allowed: Iterable[str]) -> None:
    allowed = set(allowed)
    try:
        tokens = list(tokenize.generate_tokens(StringIO(text).readline))
    except (tokenize.TokenError, IndentationError) as e:
        raise ConfigError(f"cannot tokenize expression {text!r}: {e}")
    for tok in tokens:
        if tok.type in (tokenize.NEWLINE, tokenize.NL, tokenize.ENDMARKER):
            continue
        if tok.type == tokenize.NAME:
            if tok.string not in allowed:
                raise ConfigError(f"unknown name {tok.string!r} in expression {text!r}")
        elif tok.type == tokenize.NUMBER:
            if not _NUMBER.match(tok.string):
                raise ConfigError(f"unsupported number literal {tok.string!r} in expression {text!r}")
        elif tok.type == tokenize.OP:
            if tok.string not in _OPERATORS:
                raise ConfigError(f"unsupported operator {tok.string!r} in expression {text!r}")
        else:
            raise ConfigError(f"unsupported token {tok.string!r} in expression {text!r}")


class CompiledExpression:
    """Scalar field f(x) built from an expression string; picklable."""

    def __init__(self, text: str, dim: int = 1, constants: Optional[Mapping[str, float]] = None):
        self.text = text
        self.dim = int(dim)
        self.constants = {k: float(v) for k, v in (constants or {}).items()}
        self._compile()

    def _compile(self):
        names = variable_names(self.dim)
        clash = set(self.constants) & (set(FUNCTIONS) | set(BUILTIN_CONSTANTS) | set(names) | {"x"})
        if clash:
            raise ConfigError(f"constant names shadow reserved names: {sorted(clash)}")

        symbols = [sympy.Symbol(n, real=True) for n in names]
        local: Dict[str, object] = dict(FUNCTIONS)
        local.update(BUILTIN_CONSTANTS)
        local.update({n: s for n, s in zip(names, symbols)})
        if self.dim > 1:
            local["x"] = symbols[0]
        local.update({k: sympy.Float(v) for k, v in self.constants.items()})

        _check_tokens(self.text, local.keys())
        try:
            expr = parse_expr(
                self.text,
                local_dict=local,
                transformations=standard_transformations + (convert_xor,),
                evaluate=True,
            )
        except (SyntaxError, TypeError, ValueError, sympy.SympifyError) as e:
            raise ConfigError(f"cannot parse expression {self.text!r}: {e}")
        if not isinstance(expr, sympy.Expr) or not expr.free_symbols <= set(symbols):
            raise ConfigError(f"expression {self.text!r} is not a scalar field of {names}")

        self.expr = expr
        self._symbols = symbols
        self._fn = sympy.lambdify(symbols, expr, modules="numpy")

    def __call__(self, x: np.ndarray) -> np.ndarray:
        """Evaluate at states of shape (m, dim), or (m,) in one dimension."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None] if self.dim == 1 else x[None, :]
        value = self._fn(*[x[:, i] for i in range(self.dim)])
        return np.broadcast_to(np.asarray(value, dtype=float), (x.shape[0],)).copy()

    def __getstate__(self):
        return {"text": self.text, "dim": self.dim, "constants": self.constants}

    def __setstate__(self, state):
        self.text = state["text"]
        self.dim = state["dim"]
        self.constants = state["constants"]
        self._compile()

    def __repr__(self):
        return f"CompiledExpression({self.text!r}, dim={self.dim})"

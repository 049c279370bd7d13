"""Restricted numeric expressions for config files.

Propensities and mean surfaces in configs are written over the variables
t, x1, ..., xd plus a small numpy vocabulary; anything else is rejected at
compile time.
"""
from __future__ import annotations

import re

import numpy as np

from .errors import ConfigError

__all__ = ["compile_expression"]

_ALLOWED = {
    "exp": np.exp, "log": np.log, "sqrt": np.sqrt, "abs": np.abs,
    "where": np.where, "sin": np.sin, "cos": np.cos, "tanh": np.tanh,
    "minimum": np.minimum, "maximum": np.maximum, "clip": np.clip,
    "pi": np.pi, "e": np.e,
}
_VAR = re.compile(r"x(\d+)$")


def compile_expression(expr: str, d_x: int, with_t: bool = False):
    """Compile an expression into a vectorized callable.

    Returns f(X) -> (n,) or, with_t=True, f(t, X) -> (n,).
    """
    try:
        code = compile(expr, "<config expression>", "eval")
    except SyntaxError as exc:
        raise ConfigError(f"bad expression {expr!r}: {exc}") from None
    for name in code.co_names:
        if name in _ALLOWED or (with_t and name == "t"):
            continue
        m = _VAR.match(name)
        if m and 1 <= int(m.group(1)) <= d_x:
            continue
        raise ConfigError(f"expression {expr!r} uses unknown name {name!r}")

    def evaluate(X, t=None):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        env = dict(_ALLOWED)
        for j in range(d_x):
            env[f"x{j+1}"] = X[:, j]
        if with_t:
            env["t"] = np.asarray(t, dtype=float)
        out = eval(code, {"__builtins__": {}}, env)
        return np.broadcast_to(np.asarray(out, dtype=float), (len(X),)).copy()

    if with_t:
        return lambda t, X: evaluate(X, t)
    return evaluate

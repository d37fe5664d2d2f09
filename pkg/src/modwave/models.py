"""Reaction models u_t = u_xx + c u_x + f(u).

A model is the nonlinearity f together with its exact Jacobian df. Fields are
stored component-major: an (n, ...) array whose first axis is the state
component and whose remaining axes are grid axes. f maps (n, ...) -> (n, ...),
df maps (n, ...) -> (n, n, ...).
"""

from __future__ import annotations

import importlib
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


@dataclass
class ReactionModel:
    name: str
    n: int
    f: Callable[[np.ndarray], np.ndarray]
    df: Callable[[np.ndarray], np.ndarray]
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("state dimension must be >= 1")


def rgl_model() -> ReactionModel:
    """Real Ginzburg-Landau system, two components: f(u) = u (1 - |u|^2)."""

    def f(u):
        r2 = u[0] ** 2 + u[1] ** 2
        return u * (1.0 - r2)

    def df(u):
        r2 = u[0] ** 2 + u[1] ** 2
        out = np.zeros((2, 2) + u.shape[1:], dtype=u.dtype)
        out[0, 0] = 1.0 - r2 - 2.0 * u[0] * u[0]
        out[0, 1] = -2.0 * u[0] * u[1]
        out[1, 0] = -2.0 * u[1] * u[0]
        out[1, 1] = 1.0 - r2 - 2.0 * u[1] * u[1]
        return out

    return ReactionModel(name="rgl", n=2, f=f, df=df)


def linear_model(matrix) -> ReactionModel:
    """Constant-coefficient linear reaction f(u) = A u (any state dimension)."""
    A = np.atleast_2d(np.asarray(matrix, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise ValueError("matrix must be square")
    n = A.shape[0]

    def f(u):
        return np.einsum("ij,j...->i...", A, u)

    def df(u):
        shape = (n, n) + u.shape[1:]
        out = np.empty(shape, dtype=float)
        out[...] = A.reshape((n, n) + (1,) * (u.ndim - 1))
        return out

    return ReactionModel(name="linear", n=n, f=f, df=df,
                         params={"matrix": A.tolist()})


def model_from_config(cfg: dict) -> ReactionModel:
    """Build a model from a configuration mapping.

    Supported: {"name": "rgl"}, {"name": "linear", "matrix": [[...]]},
    and {"name": "custom", "factory": "some.module:function", ...} where the
    factory receives the remaining keys as keyword arguments and returns a
    ReactionModel.
    """
    name = cfg.get("name")
    if name == "rgl":
        return rgl_model()
    if name == "linear":
        return linear_model(cfg["matrix"])
    if name == "custom":
        mod_name, _, fn_name = cfg["factory"].partition(":")
        factory = getattr(importlib.import_module(mod_name), fn_name)
        kwargs = {k: v for k, v in cfg.items() if k not in ("name", "factory")}
        model = factory(**kwargs)
        if not isinstance(model, ReactionModel):
            raise TypeError("custom factory must return a ReactionModel")
        return model
    raise ValueError(f"unknown model name {name!r}")


def jacobian_error(model: ReactionModel, u: np.ndarray, eps: float = 1e-6) -> float:
    """Max relative deviation of df from a central finite difference of f."""
    u = np.asarray(u, dtype=float)
    J = model.df(u)
    scale = max(np.abs(J).max(), 1.0)
    worst = 0.0
    for j in range(model.n):
        du = np.zeros_like(u)
        du[j] = eps
        col = (model.f(u + du) - model.f(u - du)) / (2.0 * eps)
        worst = max(worst, float(np.abs(col - J[:, j]).max()) / scale)
    return worst

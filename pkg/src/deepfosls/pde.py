"""Second-order elliptic problem description.

``-div(A grad u) + B u = f`` with ``B u = beta . grad u + gamma u``, Dirichlet
data on one part of the boundary and conormal data ``A grad u . nu`` on the
rest. All coefficient and data callables are batched: they take an ``(n, d)``
array and return ``(n,)``, ``(n, d)`` or ``(n, d, d)`` arrays.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError


def identity_matrix(scale=1.0):
    def A(x):
        n, d = np.atleast_2d(x).shape
        return np.broadcast_to(scale * np.eye(d), (n, d, d))

    return A


def divergence_form(beta, div_beta, gamma=None):
    """Rewrite ``B v = div(beta v) + gamma v`` as ``beta . grad v + (div beta + gamma) v``.

    Returns the ``(beta, gamma)`` pair to pass to :class:`PdeProblem`.
    ``div_beta`` must be supplied analytically.
    """

    def reaction(x):
        out = div_beta(x)
        return out + gamma(x) if gamma is not None else out

    return beta, reaction


@dataclass
class ExactSolution:
    u: Callable
    grad: Callable
    # div(A grad u), needed only for continuous-residual checks
    div_flux: Callable | None = None


@dataclass
class PdeProblem:
    domain: object
    A: Callable
    f: Callable
    patches: list
    beta: Callable | None = None
    gamma: Callable | None = None
    eigen_bounds: tuple | None = None
    exact: ExactSolution | None = None
    # analytic smooth extensions of the boundary data, when known
    lift_D: Callable | None = None
    lift_N: Callable | None = None
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        labels = [p.label for p in self.patches]
        if labels.count("dirichlet") != 1 or labels.count("neumann") > 1:
            raise ConfigError("need exactly one Dirichlet patch and at most one Neumann patch", "boundary")
        if self.dirichlet.measure <= 0:
            raise ConfigError("Dirichlet patch must have positive measure", "boundary.dirichlet")
        if self.eigen_bounds is not None:
            lam, Lam = self.eigen_bounds
            if not 0 < lam <= Lam:
                raise ConfigError("eigen bounds need 0 < lambda <= Lambda", "problem.eigen_bounds")

    @property
    def dim(self):
        return self.domain.dim

    @property
    def dirichlet(self):
        return next(p for p in self.patches if p.label == "dirichlet")

    @property
    def neumann(self):
        return next((p for p in self.patches if p.label == "neumann"), None)

    def operator_B(self, x, u, grad_u):
        out = np.zeros(np.shape(u))
        if self.beta is not None:
            out = out + np.einsum("ni,ni->n", self.beta(x), grad_u)
        if self.gamma is not None:
            out = out + self.gamma(x) * u
        return out

    def check_symmetric(self, x, tol=1e-12):
        a = self.A(np.atleast_2d(x))
        return float(np.max(np.abs(a - np.swapaxes(a, 1, 2)))) <= tol

    def continuous_residual(self, x):
        """Residuals of the exact pair ``(u*, A grad u*)`` using analytic derivatives."""
        if self.exact is None or self.exact.div_flux is None:
            raise ConfigError(f"problem {self.name!r} has no analytic flux divergence")
        x = np.atleast_2d(x)
        u = self.exact.u(x)
        g = self.exact.grad(x)
        return self.exact.div_flux(x) - self.operator_B(x, u, g) + self.f(x)

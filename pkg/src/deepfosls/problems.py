"""Benchmark problems with closed-form solutions."""
from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .pde import ExactSolution, PdeProblem, identity_matrix
from .sampling import Box, all_faces, face_patch

BENCHMARKS = ("example1", "example2", "remark1d")


def make_example1(d=2, k=1):
    """Poisson problem on ``(-1, 1)^d`` with a Neumann top face.

    Exact solution ``u = prod_{i<d} sin(k pi x_i) * (1 - x_d^2)``. The face
    ``x_d = 1`` carries ``grad u . nu = -2 prod sin(k pi x_i)``; all other
    faces are homogeneous Dirichlet.
    """
    if d < 2 or k < 1 or int(k) != k:
        raise ConfigError("example1 needs d >= 2 and integer k >= 1", "problem")
    k = int(k)
    w = k * np.pi
    box = Box([[-1.0, 1.0]] * d)
    top = (d - 1, 1)

    def sines(x):
        return np.prod(np.sin(w * x[:, : d - 1]), axis=1)

    def u(x):
        return sines(x) * (1.0 - x[:, -1] ** 2)

    def grad(x):
        s = np.sin(w * x[:, : d - 1])
        c = np.cos(w * x[:, : d - 1])
        bump = 1.0 - x[:, -1] ** 2
        g = np.empty_like(x)
        for j in range(d - 1):
            others = np.prod(np.delete(s, j, axis=1), axis=1)
            g[:, j] = w * c[:, j] * others * bump
        g[:, -1] = -2.0 * x[:, -1] * np.prod(s, axis=1)
        return g

    def f(x):
        return sines(x) * ((d - 1) * w**2 * (1.0 - x[:, -1] ** 2) + 2.0)

    def g_N(x):
        return -2.0 * sines(x)

    dirichlet = face_patch(box, [fc for fc in all_faces(d) if fc != top], "dirichlet")
    neumann = face_patch(box, [top], "neumann", data=g_N)
    return PdeProblem(
        domain=box, A=identity_matrix(), f=f, patches=[dirichlet, neumann],
        eigen_bounds=(1.0, 1.0),
        exact=ExactSolution(u, grad, div_flux=lambda x: -f(x)),
        # g_N does not depend on x_d, so it extends to the box as is
        lift_N=g_N,
        name="example1", params={"d": d, "k": k},
    )


def _layer(t, eps):
    """``t - (1 - exp(-t/eps)) / (1 - exp(-1/eps))`` and its first two derivatives."""
    denom = -np.expm1(-1.0 / eps)
    e = np.exp(-t / eps)
    p = t + np.expm1(-t / eps) / denom
    dp = 1.0 - e / (eps * denom)
    ddp = e / (eps**2 * denom)
    return p, dp, ddp


def make_example2(eps=0.05):
    """Singularly perturbed convection-diffusion-reaction on the unit square.

    ``-eps lap u + b . grad u + c u = f`` with ``b = (2 eps - 1, 2 eps - 1)``,
    ``c = 2 (1 - eps)`` and ``u = 0`` on the whole boundary. The solution has
    layers of width ``eps`` along ``x = 0`` and ``y = 0``.
    """
    if not 0.0 < eps < 1.0:
        raise ConfigError("example2 needs 0 < eps < 1", "problem.eps")
    eps = float(eps)
    box = Box([[0.0, 1.0], [0.0, 1.0]])
    b = np.array([2.0 * eps - 1.0, 2.0 * eps - 1.0])
    c = 2.0 * (1.0 - eps)

    def u(x):
        px, _, _ = _layer(x[:, 0], eps)
        py, _, _ = _layer(x[:, 1], eps)
        return px * py * np.exp(x[:, 0] + x[:, 1])

    def grad(x):
        px, dpx, _ = _layer(x[:, 0], eps)
        py, dpy, _ = _layer(x[:, 1], eps)
        ex = np.exp(x[:, 0] + x[:, 1])
        return np.stack([(dpx + px) * py * ex, px * (dpy + py) * ex], axis=1)

    def laplacian(x):
        px, dpx, ddpx = _layer(x[:, 0], eps)
        py, dpy, ddpy = _layer(x[:, 1], eps)
        ex = np.exp(x[:, 0] + x[:, 1])
        return ((ddpx + 2 * dpx + px) * py + px * (ddpy + 2 * dpy + py)) * ex

    def f(x):
        px, _, _ = _layer(x[:, 0], eps)
        py, _, _ = _layer(x[:, 1], eps)
        return -(px + py) * np.exp(x[:, 0] + x[:, 1])

    dirichlet = face_patch(box, all_faces(2), "dirichlet")
    return PdeProblem(
        domain=box, A=identity_matrix(eps), f=f, patches=[dirichlet],
        beta=lambda x: np.broadcast_to(b, np.atleast_2d(x).shape),
        gamma=lambda x: np.full(np.atleast_2d(x).shape[0], c),
        eigen_bounds=(eps, eps),
        exact=ExactSolution(u, grad, div_flux=lambda x: eps * laplacian(x)),
        name="example2", params={"eps": eps},
    )


def make_remark1d():
    """``phi - u' = 0``, ``phi' = 0`` on (0, 1) with ``u(0) = 0``, ``u(1) = 1``.

    Shipped to demonstrate the spurious near-step minimizers that the
    parameter-norm bound rules out, not as an accuracy benchmark.
    """
    box = Box([[0.0, 1.0]])

    def g_D(x):
        return np.asarray(x)[:, 0].copy()

    dirichlet = face_patch(box, [(0, -1), (0, 1)], "dirichlet", data=g_D)
    return PdeProblem(
        domain=box, A=identity_matrix(), f=lambda x: np.zeros(np.atleast_2d(x).shape[0]), patches=[dirichlet],
        eigen_bounds=(1.0, 1.0),
        exact=ExactSolution(lambda x: x[:, 0].copy(), lambda x: np.ones_like(x),
                            div_flux=lambda x: np.zeros(np.atleast_2d(x).shape[0])),
        lift_D=g_D,
        name="remark1d",
    )


def spurious_step_pair(delta):
    """Ramp ``u`` rising from 0 to 1 on ``(1/2 - delta, 1/2 + delta)`` and its derivative.

    The pair satisfies both equations of :func:`make_remark1d` away from the
    ramp, so any collocation set that misses the ramp sees zero residual.
    """
    lo, hi = 0.5 - delta, 0.5 + delta

    def u(x):
        return np.clip((np.atleast_2d(x)[:, 0] - lo) / (2 * delta), 0.0, 1.0)

    def phi(x):
        t = np.atleast_2d(x)[:, :1]
        return np.where((t > lo) & (t < hi), 1.0 / (2 * delta), 0.0)

    return u, phi


def make_benchmark(name, **params):
    if name == "example1":
        return make_example1(int(params.get("d", params.get("dim", 2))), int(params.get("k", 1)))
    if name == "example2":
        return make_example2(float(params.get("eps", 0.05)))
    if name == "remark1d":
        return make_remark1d()
    raise ConfigError(f"unknown benchmark {name!r}; expected one of {', '.join(BENCHMARKS)}", "problem.name")

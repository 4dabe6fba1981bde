"""Trial fields, finite-difference residuals and the Monte Carlo least-squares loss."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigError
from .nn import GradientRecord, backward_batch, forward, forward_batch


def default_fd_step(domain):
    """1e-3 on a domain of half-width one, scaled with the domain's half-width."""
    return 1e-3 * domain.half_width


def stencil_points(x, h):
    """Rows ``[x, x+h e_0, x-h e_0, x+h e_1, ...]`` stacked into ``((2d+1) n, d)``."""
    n, d = x.shape
    out = np.empty((2 * d + 1, n, d))
    out[0] = x
    for i in range(d):
        out[2 * i + 1] = x
        out[2 * i + 1, :, i] += h
        out[2 * i + 2] = x
        out[2 * i + 2, :, i] -= h
    return out.reshape(-1, d)


def fd_partial(fun, x, i, h):
    """Central difference ``(fun(x + h e_i) - fun(x - h e_i)) / 2h``.

    ``fun`` maps a batch ``(n, d)`` to ``(n,)`` or ``(n, k)``; a single point
    may be passed as a 1-D ``x``.
    """
    if h <= 0:
        raise ConfigError("finite-difference step must be positive", "h")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    plus, minus = xb.copy(), xb.copy()
    plus[:, i] += h
    minus[:, i] -= h
    out = (np.asarray(fun(plus)) - np.asarray(fun(minus))) / (2.0 * h)
    return out[0] if single else out


def fd_gradient(fun, x, h):
    """Columns of central differences; ``fun`` is scalar-valued and batched."""
    x = np.atleast_2d(x)
    return np.stack([fd_partial(fun, x, i, h) for i in range(x.shape[1])], axis=1)


def compose_u(G_D, d_D, v):
    """``G_D + d_D v`` (arrays of matching shape)."""
    return G_D + d_D * v


def compose_phi(psi, G_N, d_N, n):
    """``psi + (G_N - psi.n / (1 + d_N)) n`` for batches of vectors."""
    coef = G_N - np.einsum("ni,ni->n", psi, n) / (1.0 + d_N)
    return psi + coef[:, None] * n


class AnalyticFields:
    """A ``(u, phi)`` pair given by closed-form callables."""

    def __init__(self, u, phi, fd_step):
        self._u = u
        self._phi = phi
        self.fd_step = fd_step

    def u(self, x):
        return self._u(np.atleast_2d(x))

    def phi(self, x):
        return self._phi(np.atleast_2d(x))


class TrialFields:
    """Networks ``v`` and ``psi`` composed with the auxiliary functions.

    ``u = G_D + d_D v`` takes the Dirichlet data wherever ``d_D`` vanishes and
    ``phi`` has normal component ``G_N`` wherever ``d_N`` vanishes.
    """

    def __init__(self, v, psi, aux, fd_step):
        if v.out_dim != 1:
            raise ConfigError("v must be scalar-valued", "model.v")
        if psi.out_dim != psi.in_dim or v.in_dim != psi.in_dim:
            raise ConfigError("psi must map R^d to R^d with the same d as v", "model.psi")
        if fd_step <= 0:
            raise ConfigError("finite-difference step must be positive", "train.h")
        self.v = v
        self.psi = psi
        self.aux = aux
        self.fd_step = float(fd_step)

    @property
    def dim(self):
        return self.v.in_dim

    @property
    def params(self):
        return np.concatenate([self.v.params, self.psi.params])

    def set_params(self, theta):
        k = self.v.n_params
        self.v.params = np.ascontiguousarray(theta[:k], dtype=np.float64)
        self.psi.params = np.ascontiguousarray(theta[k:], dtype=np.float64)

    def copy(self):
        return TrialFields(self.v.copy(), self.psi.copy(), self.aux, self.fd_step)

    def u(self, x):
        x = np.atleast_2d(x)
        return compose_u(self.aux.G_D(x), self.aux.d_D(x), forward(self.v, x)[:, 0])

    def phi(self, x):
        x = np.atleast_2d(x)
        psi = forward(self.psi, x)
        if not self.aux.has_neumann:
            return psi
        return compose_phi(psi, self.aux.G_N(x), self.aux.d_N(x), self.aux.n(x))


@dataclass
class ResidualSample:
    r_flux: np.ndarray
    r_div: float


@dataclass
class LossValue:
    """Loss with its flux (``phi - A grad u``) and divergence parts."""

    total: float
    flux: float
    div: float

    def __float__(self):
        return self.total


def _residuals_from_stencil(problem, x, h, u_s, phi_s):
    n, d = x.shape
    u_s = u_s.reshape(2 * d + 1, n)
    phi_s = phi_s.reshape(2 * d + 1, n, d)
    grad_u = np.empty((n, d))
    div_phi = np.zeros(n)
    for i in range(d):
        grad_u[:, i] = (u_s[2 * i + 1] - u_s[2 * i + 2]) / (2.0 * h)
        div_phi += (phi_s[2 * i + 1, :, i] - phi_s[2 * i + 2, :, i]) / (2.0 * h)
    A = problem.A(x)
    r_flux = phi_s[0] - np.einsum("nij,nj->ni", A, grad_u)
    r_div = div_phi - problem.operator_B(x, u_s[0], grad_u) + problem.f(x)
    return r_flux, r_div, A


def residuals(problem, fields, x):
    """Pointwise residuals ``(r_flux (n, d), r_div (n,))`` at a batch of points."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    h = fields.fd_step
    s = stencil_points(x, h)
    r_flux, r_div, _ = _residuals_from_stencil(problem, x, h, fields.u(s), fields.phi(s))
    return r_flux, r_div


def residual_at(problem, fields, x):
    r_flux, r_div = residuals(problem, fields, np.asarray(x, dtype=np.float64)[None, :])
    return ResidualSample(r_flux[0], float(r_div[0]))


def _weighted_sum(scale, sq_flux, sq_div, weights):
    w_flux, w_div = weights
    flux = scale * w_flux * float(np.sum(sq_flux))
    div = scale * w_div * float(np.sum(sq_div))
    total = scale * float(np.sum(w_flux * sq_flux + w_div * sq_div))
    return total, flux, div


def _check_points(problem, points):
    x = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if x.shape[0] == 0 or x.size == 0:
        raise ConfigError("loss needs at least one collocation point")
    if x.shape[1] != problem.dim:
        raise ConfigError(f"points have dimension {x.shape[1]}, problem has {problem.dim}")
    return x


def discrete_loss(problem, fields, points, weights=(1.0, 1.0)):
    """``|Omega|/N sum_k |r_flux(x_k)|^2 + r_div(x_k)^2`` with its two parts."""
    x = _check_points(problem, points)
    r_flux, r_div = residuals(problem, fields, x)
    scale = problem.domain.volume / x.shape[0]
    return LossValue(*_weighted_sum(scale, np.sum(r_flux**2, axis=1), r_div**2, weights))


def _chunk_value_and_grad(problem, trial, x, scale, weights):
    n, d = x.shape
    h = trial.fd_step
    aux = trial.aux
    s = stencil_points(x, h)

    v_out, v_cache = forward_batch(trial.v, s)
    psi_out, psi_cache = forward_batch(trial.psi, s)
    d_D = aux.d_D(s)
    u_s = compose_u(aux.G_D(s), d_D, v_out[:, 0])
    if aux.has_neumann:
        d_N, nvec = aux.d_N(s), aux.n(s)
        phi_s = compose_phi(psi_out, aux.G_N(s), d_N, nvec)
    else:
        phi_s = psi_out

    r_flux, r_div, A = _residuals_from_stencil(problem, x, h, u_s, phi_s)
    sq_flux = np.sum(r_flux**2, axis=1)
    value = _weighted_sum(scale, sq_flux, r_div**2, weights)

    # reverse sweep through the (affine) residual map
    g_flux = 2.0 * scale * weights[0] * r_flux
    g_div = 2.0 * scale * weights[1] * r_div
    g_u = np.zeros((2 * d + 1, n))
    g_phi = np.zeros((2 * d + 1, n, d))
    g_phi[0] = g_flux
    g_grad = -np.einsum("nij,ni->nj", A, g_flux)
    if problem.beta is not None:
        g_grad -= problem.beta(x) * g_div[:, None]
    if problem.gamma is not None:
        g_u[0] -= problem.gamma(x) * g_div
    for i in range(d):
        g_u[2 * i + 1] += g_grad[:, i] / (2.0 * h)
        g_u[2 * i + 2] -= g_grad[:, i] / (2.0 * h)
        g_phi[2 * i + 1, :, i] += g_div / (2.0 * h)
        g_phi[2 * i + 2, :, i] -= g_div / (2.0 * h)
    g_u = g_u.reshape(-1)
    g_phi = g_phi.reshape(-1, d)

    g_v = (d_D * g_u)[:, None]
    if aux.has_neumann:
        # d phi / d psi = I - n n^T / (1 + d_N), symmetric
        g_psi = g_phi - (np.einsum("ni,ni->n", g_phi, nvec) / (1.0 + d_N))[:, None] * nvec
    else:
        g_psi = g_phi
    return value, backward_batch(trial.v, v_cache, g_v), backward_batch(trial.psi, psi_cache, g_psi)


def grad_loss(problem, trial, points, weights=(1.0, 1.0), workers=1):
    """Loss value and exact parameter gradients for ``v`` and ``psi``.

    Every stencil evaluation ``x_k +- h e_i`` is an ordinary forward pass, so
    the gradient is that of the discrete loss itself, not of a continuous
    surrogate.

    With ``workers > 1`` the points are split into contiguous chunks evaluated
    on a thread pool; partial sums are added in chunk order.

    Returns:
        ``(LossValue, GradientRecord for v, GradientRecord for psi)``
    """
    x = _check_points(problem, points)
    scale = problem.domain.volume / x.shape[0]
    weights = (float(weights[0]), float(weights[1]))
    if workers <= 1 or x.shape[0] < 2 * workers:
        parts = [_chunk_value_and_grad(problem, trial, x, scale, weights)]
    else:
        chunks = np.array_split(x, workers)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda c: _chunk_value_and_grad(problem, trial, c, scale, weights), chunks))
    total = flux = div = 0.0
    g_v = np.zeros(trial.v.n_params)
    g_psi = np.zeros(trial.psi.n_params)
    for (t, fl, dv), gv, gp in parts:
        total += t
        flux += fl
        div += dv
        g_v += gv
        g_psi += gp
    return LossValue(total, flux, div), GradientRecord(g_v), GradientRecord(g_psi)


# generalized K-term loss


@dataclass
class LossTerm:
    """One Monte Carlo term ``mu(omega) / N sum_{x in omega} F(fields, x)``.

    ``region`` is ``"interior"`` or a boundary patch, ``weight`` the total
    measure ``mu(omega)`` and ``sampler(n, rng)`` draws points from the region
    with the normalized measure.
    """

    region: object
    weight: float
    integrand: Callable
    sampler: Callable
    name: str = ""

    def __post_init__(self):
        if not self.weight > 0:
            raise ConfigError("loss term weight must be positive", f"terms.{self.name or 'term'}.weight")


def interior_term(problem, integrand, name="interior"):
    dom = problem.domain
    return LossTerm("interior", dom.volume, integrand, dom.sample, name)


def boundary_term(patch, integrand, name=None):
    return LossTerm(patch, patch.measure, integrand, patch.sample, name or patch.label)


def fosls_integrand(problem):
    def integrand(fields, x):
        r_flux, r_div = residuals(problem, fields, x)
        return np.sum(r_flux**2, axis=1) + r_div**2

    return integrand


def dirichlet_mismatch(patch):
    def integrand(fields, x):
        return (fields.u(x) - patch.g(x)) ** 2

    return integrand


def neumann_mismatch(patch):
    def integrand(fields, x):
        flux_n = np.einsum("ni,ni->n", fields.phi(x), patch.normal(x))
        return (flux_n - patch.g(x)) ** 2

    return integrand


def penalty_terms(problem):
    """Interior least-squares term plus boundary-mismatch penalties."""
    terms = [interior_term(problem, fosls_integrand(problem)),
             boundary_term(problem.dirichlet, dirichlet_mismatch(problem.dirichlet), "dirichlet")]
    if problem.neumann is not None:
        terms.append(boundary_term(problem.neumann, neumann_mismatch(problem.neumann), "neumann"))
    return terms


def assemble_generalized_loss(terms):
    """Build ``loss(fields, n=None, rng=None, points=None)`` summing all terms.

    Either pass ``n`` and ``rng`` to draw ``n`` fresh points per term, or pass
    ``points`` as a list with one array per term. Returns
    ``(total, [per-term values])``.
    """
    terms = list(terms)

    def loss(fields, n=None, rng=None, points=None):
        if points is None:
            if n is None or rng is None:
                raise ConfigError("pass either points or both n and rng")
            points = [t.sampler(n, rng) for t in terms]
        if len(points) != len(terms):
            raise ConfigError(f"expected {len(terms)} point sets, got {len(points)}")
        values = []
        for term, x in zip(terms, points):
            x = np.atleast_2d(x)
            if x.shape[0] == 0:
                raise ConfigError(f"term {term.name!r} received no points")
            values.append(term.weight / x.shape[0] * float(np.sum(term.integrand(fields, x))))
        return float(sum(values)), values

    return loss

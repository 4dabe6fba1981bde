"""Reference computations kept independent of the package's vectorized paths."""
import numpy as np

LD = np.longdouble


def ld_forward(widths, activation, params, x):
    """Network forward pass in extended precision.

    ``params`` may be one vector ``(m,)`` or a stack ``(P, m)``; the result is
    ``(n, out)`` or ``(P, n, out)`` accordingly.
    """
    params = np.asarray(params, dtype=LD)
    single = params.ndim == 1
    params = np.atleast_2d(params)
    h = np.broadcast_to(np.asarray(x, dtype=LD), (params.shape[0],) + np.shape(x))
    pos = 0
    n_layers = len(widths) - 1
    for layer in range(n_layers):
        n_in, n_out = widths[layer], widths[layer + 1]
        W = params[:, pos:pos + n_in * n_out].reshape(-1, n_out, n_in)
        pos += n_in * n_out
        b = params[:, pos:pos + n_out]
        pos += n_out
        z = np.einsum("poi,pni->pno", W, h) + b[:, None, :]
        if layer == n_layers - 1:
            h = z
        elif activation == "sigmoid":
            h = LD(1) / (LD(1) + np.exp(-z))
        elif activation == "tanh":
            h = np.tanh(z)
        else:
            h = np.maximum(z, LD(0))
    return h[0] if single else h


def ld_fosls_loss(problem, aux, v, psi, theta, points, h):
    """Discrete least-squares loss at parameters ``theta`` (v then psi), in long double.

    Coefficients and auxiliary functions are evaluated in double precision;
    only the parameter-dependent arithmetic runs in extended precision.
    """
    theta = np.asarray(theta, dtype=LD)
    single = theta.ndim == 1
    theta = np.atleast_2d(theta)
    tv, tp = theta[:, : v.n_params], theta[:, v.n_params:]
    x = np.asarray(points, dtype=np.float64)
    n, d = x.shape
    hh = LD(h)

    def fields(y):
        vy = ld_forward(v.widths, v.activation, tv, y)[..., 0]
        py = ld_forward(psi.widths, psi.activation, tp, y)
        u = aux.G_D(y).astype(LD) + aux.d_D(y).astype(LD) * vy
        if aux.d_N is None:
            return u, py
        nv = aux.n(y).astype(LD)
        dn = aux.d_N(y).astype(LD)
        gn = aux.G_N(y).astype(LD)
        coef = gn - np.sum(py * nv, axis=-1) / (LD(1) + dn)
        return u, py + coef[..., None] * nv

    u0, phi0 = fields(x)
    P = theta.shape[0]
    grad_u = np.zeros((P, n, d), dtype=LD)
    div = np.zeros((P, n), dtype=LD)
    for i in range(d):
        xp, xm = x.copy(), x.copy()
        xp[:, i] += h
        xm[:, i] -= h
        up, pp = fields(xp)
        um, pm = fields(xm)
        grad_u[:, :, i] = (up - um) / (LD(2) * hh)
        div += (pp[..., i] - pm[..., i]) / (LD(2) * hh)
    A = problem.A(x).astype(LD)
    r_flux = phi0 - np.einsum("nij,pnj->pni", A, grad_u)
    Bu = np.zeros((P, n), dtype=LD)
    if problem.beta is not None:
        Bu += np.sum(problem.beta(x).astype(LD) * grad_u, axis=-1)
    if problem.gamma is not None:
        Bu += problem.gamma(x).astype(LD) * u0
    r_div = div - Bu + problem.f(x).astype(LD)
    out = LD(problem.domain.volume) / LD(n) * np.sum(np.sum(r_flux**2, axis=-1) + r_div**2, axis=-1)
    return out[0] if single else out


def ld_central_gradient(fun, theta, step=1e-6):
    """Central differences of ``fun`` at ``theta``; ``fun`` takes a stack of parameter vectors."""
    theta = np.asarray(theta, dtype=LD)
    E = np.eye(theta.size, dtype=LD) * LD(step)
    out = (fun(theta + E) - fun(theta - E)) / (LD(2) * LD(step))
    return out.astype(np.float64)


def max_relative_error(g, ref):
    """Largest componentwise ``|g - ref| / max(|g|, |ref|)``.

    Components where both entries are below ``1e-9 * max|ref|`` are compared
    on that floor instead, so exact zeros do not divide by zero.
    """
    g = np.asarray(g, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    floor = 1e-9 * max(np.max(np.abs(ref)), 1e-300)
    denom = np.maximum(np.maximum(np.abs(g), np.abs(ref)), floor)
    return float(np.max(np.abs(g - ref) / denom))

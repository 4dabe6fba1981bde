"""Auxiliary functions that impose boundary conditions by construction.

Five functions enter the trial fields: distances ``d_D``, ``d_N`` to the
Dirichlet and Neumann parts of the boundary, liftings ``G_D``, ``G_N`` of the
boundary data and a unit field ``n`` extending the outward normal on the
Neumann part. Each is either a closed-form callable or a small trained
network.
"""
from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DivergenceError, UnsupportedGeometryError
from .nn import ACTIVATIONS, atomic_write_text, backward_batch, forward_batch, init_params, load_checkpoint, save_checkpoint
from .sampling import Box, DistanceTargets, box_face_distance, sample_boundary, sample_interior, update_distance_targets
from .training import AdamState, TrainConfig, adam_step, lr_at

log = logging.getLogger(__name__)

ROLES = ("distance_D", "distance_N", "lifting_D", "lifting_N", "normal_field")
SLOTS = {"distance_D": "d_D", "distance_N": "d_N", "lifting_D": "G_D", "lifting_N": "G_N", "normal_field": "n"}


class AuxFunction:
    """An auxiliary function, analytic or trained.

    Trained distance functions are read through ``relu`` so they never go
    negative; every other trained role uses the raw network output.
    """

    def __init__(self, role, fn=None, net=None, transform="identity", is_zero=False):
        if role not in ROLES:
            raise ConfigError(f"unknown auxiliary role {role!r}")
        if (fn is None) == (net is None):
            raise ConfigError("give exactly one of fn or net")
        self.role = role
        self.fn = fn
        self.net = net
        self.transform = transform
        self.is_zero = is_zero

    @property
    def variant(self):
        return "analytic" if self.fn is not None else "trained"

    def __call__(self, x):
        x = np.atleast_2d(x)
        if self.fn is not None:
            return self.fn(x)
        y, _ = forward_batch(self.net, x)
        if self.role != "normal_field":
            y = y[:, 0]
        if self.transform == "relu":
            y = np.maximum(y, 0.0)
        return y


def zero_function(role):
    return AuxFunction(role, fn=lambda x: np.zeros(np.atleast_2d(x).shape[0]), is_zero=True)


@dataclass
class AuxiliarySet:
    d_D: AuxFunction
    G_D: AuxFunction
    d_N: AuxFunction | None = None
    G_N: AuxFunction | None = None
    n: AuxFunction | None = None

    @property
    def has_neumann(self):
        return self.d_N is not None

    def __post_init__(self):
        parts = (self.d_N, self.G_N, self.n)
        if any(p is None for p in parts) and not all(p is None for p in parts):
            raise ConfigError("d_N, G_N and n must be given together")

    def items(self):
        for role in ROLES:
            fn = getattr(self, SLOTS[role])
            if fn is not None:
                yield role, fn


# analytic construction


def analytic_hypercube_aux(box, dirichlet_faces, neumann_faces=(), lift_D=None, lift_N=None, normal_field=None):
    """Closed-form auxiliaries on a box.

    Distances are the min over the owned faces of the gap to each face. The
    normal field is the constant outward normal of the Neumann face; a union
    of faces with different normals needs an explicit ``normal_field``.
    Missing liftings mean homogeneous data.
    """
    if not isinstance(box, Box):
        raise UnsupportedGeometryError("analytic auxiliaries need a hypercube domain")
    dirichlet_faces = list(dirichlet_faces)
    neumann_faces = list(neumann_faces)
    if not dirichlet_faces:
        raise ConfigError("Dirichlet boundary must not be empty", "boundary.dirichlet")
    if set(dirichlet_faces) & set(neumann_faces):
        raise ConfigError("Dirichlet and Neumann faces overlap", "boundary")

    d_D = AuxFunction("distance_D", fn=lambda x: box_face_distance(box, dirichlet_faces, x))
    G_D = AuxFunction("lifting_D", fn=lift_D) if lift_D is not None else zero_function("lifting_D")
    if not neumann_faces:
        return AuxiliarySet(d_D, G_D)

    if normal_field is None:
        normals = {(a, s) for a, s in neumann_faces}
        if len(normals) != 1:
            raise UnsupportedGeometryError(
                "Neumann faces have different outward normals; supply a normal field or use trained mode")
        axis, sign = neumann_faces[0]
        const = np.zeros(box.dim)
        const[axis] = float(sign)
        normal_field = lambda x: np.broadcast_to(const, np.atleast_2d(x).shape).copy()  # noqa: E731

    d_N = AuxFunction("distance_N", fn=lambda x: box_face_distance(box, neumann_faces, x))
    G_N = AuxFunction("lifting_N", fn=lift_N) if lift_N is not None else zero_function("lifting_N")
    return AuxiliarySet(d_D, G_D, d_N, G_N, AuxFunction("normal_field", fn=normal_field))


def analytic_aux_for(problem):
    neu = problem.neumann
    return analytic_hypercube_aux(
        problem.domain, problem.dirichlet.faces, neu.faces if neu is not None else (),
        lift_D=problem.lift_D if problem.dirichlet.data is not None else None,
        lift_N=problem.lift_N if neu is not None and neu.data is not None else None,
    )


# Stage-1 training


@dataclass
class AuxTrainConfig:
    """Hyperparameters shared by all Stage-1 fits.

    ``hidden`` lists hidden-layer widths. ``distance_activation`` is used for
    ``d_D``/``d_N``; liftings and the normal field use ``smooth_activation``
    because they are differentiated by finite differences in Stage 2.
    ``refit_output`` finishes distance and lifting fits with an exact linear
    least-squares solve for the output layer.
    """

    hidden: list = field(default_factory=lambda: [10])
    distance_activation: str = "relu"
    smooth_activation: str = "tanh"
    steps: int = 2000
    lr0: float = 1e-2
    halve_every: int = 1000
    n_interior: int = 1000
    n_boundary: int = 256
    refit_output: bool = True

    def __post_init__(self):
        checks = [
            (len(self.hidden) > 0 and all(int(w) == w and w >= 1 for w in self.hidden), "hidden",
             "must be a non-empty list of positive integers"),
            (self.distance_activation in ACTIVATIONS, "distance_activation", "unknown activation"),
            (self.smooth_activation in ACTIVATIONS, "smooth_activation", "unknown activation"),
            (self.steps >= 1, "steps", "must be >= 1"),
            (self.lr0 > 0, "lr0", "must be > 0"),
            (self.halve_every >= 1, "halve_every", "must be >= 1"),
            (self.n_interior >= 1, "n_interior", "must be >= 1"),
            (self.n_boundary >= 1, "n_boundary", "must be >= 1"),
        ]
        for ok, name, msg in checks:
            if not ok:
                raise ConfigError(msg, f"aux.{name}")
        self.hidden = [int(w) for w in self.hidden]

    def schedule(self):
        return TrainConfig(N=1, steps=max(self.steps, 1), lr0=self.lr0, halve_every=self.halve_every)


def _fit(net, value_and_cotangents, cfg, rng, what):
    """ADAM loop shared by all auxiliary fits.

    ``value_and_cotangents(params, rng)`` returns ``(loss, [(cache, cot), ...])``:
    the loss and, for each forward cache the net produced, the cotangent of
    the loss with respect to the outputs there.
    """
    schedule = cfg.schedule()
    state = AdamState.zeros(net.n_params)
    theta = net.params.copy()
    last_finite = theta
    losses = []
    for step in range(cfg.steps):
        loss, pieces = value_and_cotangents(theta, rng)
        if not math.isfinite(loss):
            raise DivergenceError(f"{what}: non-finite loss at step {step}", step=step, params=last_finite)
        grad = np.zeros_like(theta)
        for cache, cot in pieces:
            grad += backward_batch(net, cache, cot, theta)
        last_finite = theta
        losses.append(loss)
        theta, state = adam_step(theta, grad, state, lr_at(schedule, step))
    net.params = theta
    return net, losses


def _refit_output(net, blocks):
    """Solve for the output layer of a scalar net by weighted linear least squares.

    Both the distance and the lifting losses are quadratic in the output
    layer once the hidden layers are fixed, so ADAM's last iterate can be
    replaced by the exact minimizer. ``blocks`` holds ``(x, target, weight)``
    triples, one per mean-square term.
    """
    rows, rhs = [], []
    for x, target, weight in blocks:
        _, cache = forward_batch(net, x)
        feats = cache[-1][1] if len(cache) > 1 else x
        s = math.sqrt(weight)
        rows.append(s * np.hstack([feats, np.ones((len(x), 1))]))
        rhs.append(s * np.asarray(target, dtype=np.float64))
    sol = np.linalg.lstsq(np.vstack(rows), np.concatenate(rhs), rcond=None)[0]
    w, b = net.layers()[-1]
    w[0] = sol[:-1]
    b[0] = sol[-1]
    return net


def train_distance(patch, domain, cfg=None, rng=None, role="distance_D"):
    """Fit a network to the distance from ``patch``.

    Targets are running minima over freshly sampled boundary batches; the
    loss adds the mean square of the network on each batch so the zero set
    sits on the patch.

    Returns:
        ``(AuxFunction, loss history)``
    """
    cfg = cfg or AuxTrainConfig()
    rng = np.random.default_rng(rng)
    d = domain.dim
    net = init_params([d, *cfg.hidden, 1], cfg.distance_activation, rng)
    targets = DistanceTargets(sample_interior(domain, cfg.n_interior, rng))
    x = targets.points

    def value(theta, rng):
        z = sample_boundary(patch, cfg.n_boundary, rng)
        update_distance_targets(targets, z)
        yx, cx = forward_batch(net, x, theta)
        yz, cz = forward_batch(net, z, theta)
        rx = yx[:, 0] - targets.D
        loss = float(np.mean(rx**2) + np.mean(yz[:, 0] ** 2))
        return loss, [(cx, (2.0 / len(x)) * rx[:, None]), (cz, (2.0 / len(z)) * yz)]

    # raw output is fitted; relu is applied on read so gradients never die at 0
    net, losses = _fit(net, value, cfg, rng, role)
    if cfg.refit_output:
        z = sample_boundary(patch, 4 * cfg.n_boundary, rng)
        update_distance_targets(targets, z)
        _refit_output(net, [(x, targets.D, 1.0 / len(x)), (z, np.zeros(len(z)), 1.0 / len(z))])
    return AuxFunction(role, net=net, transform="relu"), losses


def train_lifting(patch, g=None, cfg=None, rng=None, role="lifting_D", dim=None):
    """Fit a network to boundary data ``g`` on ``patch`` in mean square.

    Homogeneous data (``g`` is None) gives the exact zero function without
    training.
    """
    cfg = cfg or AuxTrainConfig()
    if g is None:
        return zero_function(role), []
    rng = np.random.default_rng(rng)
    if dim is None:
        dim = patch.sample(1, np.random.default_rng(0)).shape[1]
    net = init_params([dim, *cfg.hidden, 1], cfg.smooth_activation, rng)

    def value(theta, rng):
        z = sample_boundary(patch, cfg.n_boundary, rng)
        y, cache = forward_batch(net, z, theta)
        r = y[:, 0] - g(z)
        return float(np.mean(r**2)), [(cache, (2.0 / len(z)) * r[:, None])]

    net, losses = _fit(net, value, cfg, rng, role)
    if cfg.refit_output:
        z = sample_boundary(patch, 16 * cfg.n_boundary, rng)
        _refit_output(net, [(z, g(z), 1.0)])
    return AuxFunction(role, net=net), losses


def train_normal_field(patch, domain, cfg=None, rng=None):
    """Fit ``m`` with ``m ~ nu`` on the patch and ``|m| ~ 1`` inside the domain."""
    cfg = cfg or AuxTrainConfig()
    rng = np.random.default_rng(rng)
    d = domain.dim
    net = init_params([d, *cfg.hidden, d], cfg.smooth_activation, rng)

    def value(theta, rng):
        z = sample_boundary(patch, cfg.n_boundary, rng)
        x = sample_interior(domain, cfg.n_boundary, rng)
        yz, cz = forward_batch(net, z, theta)
        yx, cx = forward_batch(net, x, theta)
        rz = yz - patch.normal(z)
        rx = np.sum(yx**2, axis=1) - 1.0
        loss = float(np.mean(np.sum(rz**2, axis=1)) + np.mean(rx**2))
        return loss, [(cz, (2.0 / len(z)) * rz), (cx, (4.0 / len(x)) * rx[:, None] * yx)]

    net, losses = _fit(net, value, cfg, rng, "normal_field")
    return AuxFunction("normal_field", net=net), losses


def train_aux_set(problem, cfg=None, rng=None):
    """Stage 1: train every auxiliary function the problem needs.

    Returns ``(AuxiliarySet, {role: loss history})``.
    """
    cfg = cfg or AuxTrainConfig()
    rng = np.random.default_rng(rng)
    # one child generator per role so each fit is reproducible on its own
    child = dict(zip(ROLES, rng.spawn(len(ROLES))))
    dom = problem.domain
    dir_patch, neu_patch = problem.dirichlet, problem.neumann
    losses = {}
    d_D, losses["distance_D"] = train_distance(dir_patch, dom, cfg, child["distance_D"], "distance_D")
    G_D, losses["lifting_D"] = train_lifting(dir_patch, dir_patch.data, cfg, child["lifting_D"], "lifting_D", dom.dim)
    if neu_patch is None:
        return AuxiliarySet(d_D, G_D), losses
    d_N, losses["distance_N"] = train_distance(neu_patch, dom, cfg, child["distance_N"], "distance_N")
    G_N, losses["lifting_N"] = train_lifting(neu_patch, neu_patch.data, cfg, child["lifting_N"], "lifting_N", dom.dim)
    n, losses["normal_field"] = train_normal_field(neu_patch, dom, cfg, child["normal_field"])
    return AuxiliarySet(d_D, G_D, d_N, G_N, n), losses


def boundary_diagnostics(aux, problem, m=1000, rng=None):
    """RMS and max boundary mismatches of an auxiliary set on fresh boundary samples."""
    rng = np.random.default_rng(rng)
    out = {}

    def record(name, r):
        r = np.abs(np.asarray(r))
        out[name] = {"rms": float(np.sqrt(np.mean(r**2))), "max": float(np.max(r))}

    zd = sample_boundary(problem.dirichlet, m, rng)
    record("d_D", aux.d_D(zd))
    record("G_D", aux.G_D(zd) - problem.dirichlet.g(zd))
    if aux.has_neumann and problem.neumann is not None:
        zn = sample_boundary(problem.neumann, m, rng)
        record("d_N", aux.d_N(zn))
        record("G_N", aux.G_N(zn) - problem.neumann.g(zn))
        record("n", np.linalg.norm(aux.n(zn) - problem.neumann.normal(zn), axis=1))
    return out


# persistence


def save_aux_set(aux, directory, meta=None):
    """One checkpoint per trained function plus a ``<slot>.meta.json`` sidecar for every role."""
    os.makedirs(directory, exist_ok=True)
    for role, fn in aux.items():
        slot = SLOTS[role]
        info = {"role": role, "variant": fn.variant, "transform": fn.transform}
        if fn.variant == "trained":
            save_checkpoint(fn.net, os.path.join(directory, f"{slot}.json"))
        elif fn.is_zero:
            info["variant"] = "zero"
        info.update(meta or {})
        atomic_write_text(os.path.join(directory, f"{slot}.meta.json"), json.dumps(info, indent=1, sort_keys=True) + "\n")


def load_aux_set(directory, problem):
    """Rebuild an auxiliary set from :func:`save_aux_set` output.

    Analytic entries are reconstructed from ``problem``.
    """
    analytic = None
    found = {}
    for role in ROLES:
        slot = SLOTS[role]
        meta_path = os.path.join(directory, f"{slot}.meta.json")
        if not os.path.exists(meta_path):
            continue
        with open(meta_path) as fh:
            info = json.load(fh)
        if info.get("role") != role:
            raise ConfigError(f"{meta_path} has role {info.get('role')!r}, expected {role!r}")
        if info["variant"] == "trained":
            net = load_checkpoint(os.path.join(directory, f"{slot}.json"))
            found[slot] = AuxFunction(role, net=net, transform=info.get("transform", "identity"))
        elif info["variant"] == "zero":
            found[slot] = zero_function(role)
        else:
            if analytic is None:
                analytic = analytic_aux_for(problem)
            found[slot] = getattr(analytic, slot)
    if "d_D" not in found or "G_D" not in found:
        raise ConfigError(f"no Dirichlet auxiliaries found in {directory}", "aux.dir")
    return AuxiliarySet(**found)

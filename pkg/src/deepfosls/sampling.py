"""Domains, boundary patches, seeded sampling and distance targets."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigError, SamplingError

STREAM_NAMES = ("stage1", "stage2", "init", "eval")


def rng_streams(seed):
    """Independent PCG64 generators keyed by name, all derived from one seed.

    Streams come from ``SeedSequence.spawn`` so drawing from one never shifts
    another.
    """
    children = np.random.SeedSequence(seed).spawn(len(STREAM_NAMES))
    return {name: np.random.Generator(np.random.PCG64(s)) for name, s in zip(STREAM_NAMES, children)}


class Box:
    """Axis-aligned box ``prod_i (lo_i, hi_i)``."""

    kind = "hypercube"

    def __init__(self, bounds):
        bounds = np.array(bounds, dtype=np.float64)
        if bounds.ndim != 2 or bounds.shape[1] != 2 or bounds.shape[0] < 1:
            raise ConfigError("bounds must be a list of [lo, hi] pairs", "domain.bounds")
        if np.any(bounds[:, 1] <= bounds[:, 0]):
            raise ConfigError("every axis needs lo < hi", "domain.bounds")
        self.bounds = bounds

    @property
    def dim(self):
        return self.bounds.shape[0]

    @property
    def lo(self):
        return self.bounds[:, 0]

    @property
    def hi(self):
        return self.bounds[:, 1]

    @property
    def volume(self):
        return float(np.prod(self.hi - self.lo))

    @property
    def bounding_box(self):
        return self.bounds

    @property
    def half_width(self):
        return float(np.max(self.hi - self.lo) / 2.0)

    def contains(self, x):
        x = np.atleast_2d(x)
        return np.all((x > self.lo) & (x < self.hi), axis=1)

    def sample(self, n, rng):
        x = rng.uniform(self.lo, self.hi, size=(n, self.dim))
        # uniform() may return lo exactly; push those onto the open box
        on_edge = x <= self.lo
        if np.any(on_edge):
            x[on_edge] = np.broadcast_to(np.nextafter(self.lo, self.hi), x.shape)[on_edge]
        return x

    def face_measure(self, axis):
        widths = np.delete(self.hi - self.lo, axis)
        return float(np.prod(widths)) if widths.size else 1.0

    def __repr__(self):
        return f"Box({self.bounds.tolist()})"


class PredicateDomain:
    """Region ``{x in box : predicate(x)}`` sampled by rejection.

    The volume is estimated once at construction from ``volume_trials`` uniform
    draws in the bounding box.
    """

    kind = "predicate"
    min_acceptance = 1e-6

    def __init__(self, predicate, bounds, volume_trials=1_000_000, seed=0):
        self.box = Box(bounds)
        self.predicate = predicate
        rng = np.random.default_rng(seed)
        hits = 0
        remaining = int(volume_trials)
        while remaining > 0:
            chunk = min(remaining, 200_000)
            hits += int(np.count_nonzero(predicate(self.box.sample(chunk, rng))))
            remaining -= chunk
        self.acceptance = hits / volume_trials
        if self.acceptance < self.min_acceptance:
            raise SamplingError(f"predicate acceptance rate {self.acceptance:.3g} is below {self.min_acceptance:g}")
        self.volume = self.box.volume * self.acceptance

    @property
    def dim(self):
        return self.box.dim

    @property
    def bounding_box(self):
        return self.box.bounds

    @property
    def half_width(self):
        return self.box.half_width

    def contains(self, x):
        x = np.atleast_2d(x)
        return self.box.contains(x) & np.asarray(self.predicate(x), dtype=bool)

    def sample(self, n, rng):
        out = np.empty((0, self.dim))
        while out.shape[0] < n:
            need = n - out.shape[0]
            batch = self.box.sample(max(int(1.2 * need / self.acceptance), 16), rng)
            out = np.vstack([out, batch[self.contains(batch)][:need]])
        return out


def sample_interior(domain, n, rng):
    """``n`` i.i.d. uniform points in the domain, shape ``(n, d)``."""
    if n < 0:
        raise ConfigError("sample count must be non-negative")
    if n == 0:
        return np.empty((0, domain.dim))
    return domain.sample(int(n), rng)


def mc_integrate(domain, g, n, rng):
    """Plain Monte Carlo estimate ``|domain| / n * sum g(x_k)``."""
    x = sample_interior(domain, n, rng)
    return domain.volume * float(np.mean(g(x)))


@dataclass
class BoundaryPatch:
    """A labelled piece of the boundary.

    ``sampler(count, rng)`` returns points on the patch; ``normal(x)`` returns
    unit outward normals at points on it. ``data`` is the boundary datum
    (``g_D`` or ``g_N``) as a batched callable, or None for homogeneous data.
    """

    label: str
    sampler: Callable
    normal: Callable
    data: Callable | None = None
    measure: float = 1.0
    faces: tuple = field(default=())

    def __post_init__(self):
        if self.label not in ("dirichlet", "neumann"):
            raise ConfigError(f"patch label must be dirichlet or neumann, got {self.label!r}")

    def sample(self, m, rng):
        return sample_boundary(self, m, rng)

    def g(self, x):
        if self.data is None:
            return np.zeros(np.atleast_2d(x).shape[0])
        return self.data(np.atleast_2d(x))


def face_patch(box, faces, label, data=None):
    """Boundary patch made of whole faces of a box.

    Args:
        box: the :class:`Box`.
        faces: iterable of ``(axis, sign)`` with ``sign`` = -1 for the face
            ``x[axis] = lo`` and +1 for ``x[axis] = hi``.
        label: ``"dirichlet"`` or ``"neumann"``.
        data: batched boundary datum, optional.
    """
    faces = tuple((int(a), int(s)) for a, s in faces)
    for axis, sign in faces:
        if not 0 <= axis < box.dim or sign not in (-1, 1):
            raise ConfigError(f"bad face ({axis}, {sign}) for a {box.dim}-d box", "boundary.faces")
    if len(set(faces)) != len(faces):
        raise ConfigError("duplicate faces in patch", "boundary.faces")
    measures = np.array([box.face_measure(a) for a, _ in faces])

    def sampler(m, rng):
        if m == 0:
            return np.empty((0, box.dim))
        which = rng.choice(len(faces), size=m, p=measures / measures.sum())
        x = rng.uniform(box.lo, box.hi, size=(m, box.dim))
        for j, (axis, sign) in enumerate(faces):
            x[which == j, axis] = box.hi[axis] if sign > 0 else box.lo[axis]
        return x

    def normal(x):
        x = np.atleast_2d(x)
        # face each point is closest to, among the patch's own faces
        gaps = np.stack([np.abs(x[:, a] - (box.hi[a] if s > 0 else box.lo[a])) for a, s in faces], axis=1)
        owner = np.argmin(gaps, axis=1)
        nu = np.zeros_like(x)
        for j, (axis, sign) in enumerate(faces):
            nu[owner == j, axis] = float(sign)
        return nu

    return BoundaryPatch(label, sampler, normal, data, float(measures.sum()) if faces else 0.0, faces)


def sample_boundary(patch, m, rng):
    """``m`` points uniform over the patch's surface measure."""
    if m < 0:
        raise ConfigError("sample count must be non-negative")
    return patch.sampler(int(m), rng)


@dataclass
class DistanceTargets:
    """Interior points and the running-minimum distance to sampled boundary points."""

    points: np.ndarray
    D: np.ndarray = None

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        if self.D is None:
            self.D = np.full(self.points.shape[0], np.inf)


def update_distance_targets(targets, boundary_batch):
    """Lower each ``D_k`` to the nearest distance from ``x_k`` to the batch.

    Uses a k-d tree over the batch; the result is the same as the brute-force
    ``min_i |x_k - z_i|``.
    """
    z = np.atleast_2d(np.asarray(boundary_batch, dtype=np.float64))
    if z.shape[0] == 0:
        raise ConfigError("boundary batch must not be empty")
    nearest, _ = cKDTree(z).query(targets.points, k=1)
    targets.D = np.minimum(targets.D, nearest)
    return targets


def box_face_distance(box, faces, x):
    """Min over the given faces of the signed gap ``x`` to each face plane.

    Inside the box this is the Euclidean distance to the union of the faces.
    Outside it goes negative, which keeps finite-difference stencils that
    poke past the boundary smooth.
    """
    x = np.atleast_2d(x)
    gaps = [(box.hi[a] - x[:, a]) if s > 0 else (x[:, a] - box.lo[a]) for a, s in faces]
    return np.min(np.stack(gaps, axis=1), axis=1)


def all_faces(dim):
    return [(a, s) for a in range(dim) for s in (-1, 1)]


"""ADAM, step learning-rate schedule, norm clipping and the solve loop."""
from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DivergenceError
from .loss import grad_loss
from .sampling import rng_streams, sample_interior

log = logging.getLogger(__name__)

BETA1 = 0.9
BETA2 = 0.999
EPS_ADAM = 1e-8


@dataclass
class TrainConfig:
    """Stage-2 hyperparameters.

    ``resample`` is ``"every_step"`` (fresh collocation points each step) or
    ``"fixed"`` (one point set drawn up front).
    """

    N: int = 2000
    steps: int = 10_000
    lr0: float = 1e-2
    halve_every: int = 2500
    h: float | None = None
    clip_radius: float | None = None
    seed: int = 0
    resample: str = "every_step"
    error_every: int = 10
    error_points: int = 5000
    workers: int = 1
    timing: bool = True

    def __post_init__(self):
        checks = [
            (self.N >= 1, "N", "must be >= 1"),
            (self.steps >= 0, "steps", "must be >= 0"),
            (self.lr0 > 0, "lr0", "must be > 0"),
            (self.halve_every >= 1, "halve_every", "must be >= 1"),
            (self.h is None or self.h > 0, "h", "must be > 0"),
            (self.clip_radius is None or self.clip_radius > 0, "clip_radius", "must be > 0"),
            (self.resample in ("every_step", "fixed"), "resample", "must be every_step or fixed"),
            (self.error_every >= 0, "error_every", "must be >= 0"),
            (self.workers >= 1, "workers", "must be >= 1"),
        ]
        for ok, name, msg in checks:
            if not ok:
                raise ConfigError(msg, f"train.{name}")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(params, grads, state, lr):
    """One bias-corrected ADAM update. Returns ``(new_params, new_state)``; inputs are not modified."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise ConfigError("params, grads and optimizer state must have matching lengths")
    if not np.all(np.isfinite(grads)):
        raise DivergenceError("non-finite gradient entries", step=state.t, params=params)
    t = state.t + 1
    m = BETA1 * state.m + (1.0 - BETA1) * grads
    v = BETA2 * state.v + (1.0 - BETA2) * grads * grads
    m_hat = m / (1.0 - BETA1**t)
    v_hat = v / (1.0 - BETA2**t)
    new = params - lr * m_hat / (np.sqrt(v_hat) + EPS_ADAM)
    return new, AdamState(m, v, t)


def lr_at(cfg, step):
    """``lr0 * 2**(-floor(step / halve_every))``."""
    return cfg.lr0 * 0.5 ** (step // cfg.halve_every)


def clip_params(theta, radius):
    """Radial projection onto the closed ball of the given radius."""
    norm = float(np.linalg.norm(theta))
    if norm <= radius:
        return theta
    return theta * (radius / norm)


HISTORY_COLUMNS = ("step", "loss", "loss_flux", "loss_div", "lr", "l2_error", "mse", "seconds")


@dataclass
class TrainHistory:
    rows: list = field(default_factory=list)

    def append(self, step, loss, lr, l2_error=None, mse=None, seconds=None):
        values = [loss.total, loss.flux, loss.div, lr] + [x for x in (l2_error, mse, seconds) if x is not None]
        if not all(math.isfinite(x) for x in values):
            raise DivergenceError(f"non-finite value recorded at step {step}", step=step, history=self)
        if self.rows and step <= self.rows[-1]["step"]:
            raise ValueError("history steps must increase")
        self.rows.append({"step": step, "loss": loss.total, "loss_flux": loss.flux, "loss_div": loss.div,
                          "lr": lr, "l2_error": l2_error, "mse": mse, "seconds": seconds})

    def __len__(self):
        return len(self.rows)

    def column(self, name):
        return np.array([np.nan if r[name] is None else r[name] for r in self.rows])

    @property
    def final_loss(self):
        return self.rows[-1]["loss"] if self.rows else None

    def to_csv(self, header_comment=None):
        buf = io.StringIO()
        if header_comment:
            buf.write(f"# {header_comment}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(HISTORY_COLUMNS)
        for r in self.rows:
            writer.writerow(["" if r[c] is None else repr(r[c]) for c in HISTORY_COLUMNS])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
        hist = cls()
        for rec in csv.DictReader(lines):
            row = {}
            for c in HISTORY_COLUMNS:
                raw = rec[c]
                row[c] = None if raw == "" else (int(raw) if c == "step" else float(raw))
            hist.rows.append(row)
        return hist


def mc_error(fields, exact_u, domain, m=5000, rng=None):
    """Monte Carlo ``(L2 error, MSE)`` of ``fields.u`` against ``exact_u`` on fresh points."""
    y = sample_interior(domain, m, np.random.default_rng(rng))
    diff = fields.u(y) - exact_u(y)
    mse = float(np.mean(diff * diff))
    return math.sqrt(domain.volume * mse), mse


def solve(problem, trial, cfg, rng=None, eval_rng=None, callback=None):
    """Stage-2 training of ``trial`` (modified in place and returned).

    Each step draws collocation points (unless ``cfg.resample == "fixed"``),
    takes one ADAM step on the joint ``(v, psi)`` parameter vector at
    ``lr_at(cfg, step)`` and, when ``cfg.clip_radius`` is set, projects the
    parameters back into the ball of that radius. Step ``k`` of the history
    holds the loss evaluated before the update of step ``k``.

    Raises:
        DivergenceError: on a non-finite loss or gradient. ``exc.history`` and
            ``exc.params`` hold the state before the failing step.
    """
    streams = rng_streams(cfg.seed)
    rng = streams["stage2"] if rng is None else np.random.default_rng(rng)
    eval_rng = streams["eval"] if eval_rng is None else np.random.default_rng(eval_rng)
    history = TrainHistory()
    if cfg.steps == 0:
        return trial, history
    domain = problem.domain
    theta = trial.params
    if cfg.clip_radius is not None:
        theta = clip_params(theta, cfg.clip_radius)
        trial.set_params(theta)
    state = AdamState.zeros(theta.size)
    fixed = sample_interior(domain, cfg.N, rng) if cfg.resample == "fixed" else None
    exact = problem.exact
    start = time.perf_counter()
    for step in range(cfg.steps):
        points = fixed if fixed is not None else sample_interior(domain, cfg.N, rng)
        with np.errstate(over="ignore", invalid="ignore"):
            value, g_v, g_psi = grad_loss(problem, trial, points, workers=cfg.workers)
        lr = lr_at(cfg, step)
        grads = np.concatenate([g_v.grad, g_psi.grad])
        if not (math.isfinite(value.total) and np.all(np.isfinite(grads))):
            raise DivergenceError(f"non-finite loss at step {step}", step=step, params=theta, history=history)
        l2 = mse = None
        if exact is not None and cfg.error_every and (step % cfg.error_every == 0 or step == cfg.steps - 1):
            l2, mse = mc_error(trial, exact.u, domain, cfg.error_points, eval_rng)
        seconds = time.perf_counter() - start if cfg.timing else None
        history.append(step, value, lr, l2, mse, seconds)
        theta, state = adam_step(theta, grads, state, lr)
        if cfg.clip_radius is not None:
            theta = clip_params(theta, cfg.clip_radius)
        trial.set_params(theta)
        if callback is not None:
            callback(step, value, theta)
        if step % 500 == 0:
            log.debug("step %d loss %.6g (flux %.4g, div %.4g) lr %.3g", step, value.total, value.flux, value.div, lr)
    return trial, history


def with_overrides(cfg, **kwargs):
    return replace(cfg, **{k: v for k, v in kwargs.items() if v is not None})

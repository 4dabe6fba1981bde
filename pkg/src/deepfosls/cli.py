"""``deepfosls`` command line: ``aux-train``, ``solve`` and ``eval``.

Exit codes: 0 success, 2 configuration error, 3 divergence, 4 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from dataclasses import asdict, replace

import numpy as np

from .auxiliary import analytic_aux_for, boundary_diagnostics, load_aux_set, save_aux_set, train_aux_set
from .config import AUX_MODES, PROBLEM_KEYS, AuxSpec, NetSpec, RunConfig, config_from_dict, load_config
from .errors import ConfigError, DivergenceError
from .loss import AnalyticFields, TrialFields, default_fd_step
from .nn import atomic_write_text, init_params, load_checkpoint, save_checkpoint
from .problems import BENCHMARKS
from .sampling import rng_streams
from .training import TrainHistory, solve, with_overrides

log = logging.getLogger("deepfosls")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4


# configuration


def _common_parser():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("benchmark", nargs="?", choices=BENCHMARKS, help="benchmark shorthand")
    p.add_argument("--config", help="TOML run configuration")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--workers", type=int, help="threads for the loss reduction (1 is deterministic)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--dim", type=int, help="example1 dimension")
    p.add_argument("--k", type=int, help="example1 frequency")
    p.add_argument("--eps", type=float, help="example2 diffusion")
    p.add_argument("--steps", type=int, help="training steps")
    p.add_argument("--N", type=int, dest="N", help="collocation points per step")
    p.add_argument("--lr0", type=float, help="initial learning rate")
    p.add_argument("--halve-every", type=int, help="steps between learning-rate halvings")
    p.add_argument("--clip-radius", type=float, help="bound on the parameter norm")
    p.add_argument("--resample", choices=("every_step", "fixed"))
    p.add_argument("--hidden", help="hidden widths of the main networks, e.g. 15 or 25,25")
    p.add_argument("--activation", help="activation of the main networks")
    p.add_argument("--aux", choices=AUX_MODES, help="how auxiliary functions are obtained")
    p.add_argument("--aux-dir", help="auxiliary checkpoint directory (from-checkpoint mode)")
    p.add_argument("--aux-steps", type=int, help="ADAM steps per auxiliary fit")
    p.add_argument("--no-timing", action="store_true", help="leave the seconds column empty so reruns are byte-identical")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def build_parser():
    parser = argparse.ArgumentParser(prog="deepfosls", description="Least-squares neural solver for elliptic PDEs.")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common_parser()
    sub.add_parser("aux-train", parents=[common], help="train or export the auxiliary functions")
    sub.add_parser("solve", parents=[common], help="train the solution networks")
    ev = sub.add_parser("eval", help="evaluate a solved run on a grid or slice")
    ev.add_argument("run", help="directory written by solve")
    ev.add_argument("--points", type=int, default=41, help="grid points per free axis")
    ev.add_argument("--fix", action="append", default=[], metavar="xI=VALUE", help="fix coordinate I (1-based)")
    ev.add_argument("--range", action="append", default=[], metavar="xI=LO:HI", help="range of a free axis")
    ev.add_argument("--output", help="CSV path (default RUN/eval.csv)")
    ev.add_argument("--exact-trial", action="store_true", help="evaluate the exact solution pair instead")
    ev.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def resolve_config(args):
    """Config file (or defaults) with command-line overrides applied."""
    cfg = load_config(args.config) if args.config else RunConfig()
    problem = dict(cfg.problem)
    if args.benchmark and args.benchmark != problem.get("name"):
        problem = {"name": args.benchmark}
    for key, value in (("d", args.dim), ("k", args.k), ("eps", args.eps)):
        if value is not None:
            if key not in PROBLEM_KEYS[problem["name"]]:
                raise ConfigError(f"--{'dim' if key == 'd' else key} does not apply to {problem['name']}", f"problem.{key}")
            problem[key] = value
    main = cfg.main
    if args.hidden or args.activation:
        hidden = [int(w) for w in args.hidden.split(",")] if args.hidden else main.hidden
        main = NetSpec(hidden, args.activation or main.activation)
    aux = cfg.aux
    if args.aux or args.aux_dir or args.aux_steps:
        train = replace(aux.train, steps=args.aux_steps) if args.aux_steps else aux.train
        aux = AuxSpec(args.aux or aux.mode, args.aux_dir or aux.dir, train)
    train = with_overrides(cfg.train, steps=args.steps, N=args.N, lr0=args.lr0, halve_every=args.halve_every,
                           clip_radius=args.clip_radius, resample=args.resample, workers=args.workers)
    if args.no_timing:
        train = replace(train, timing=False)
    seed = cfg.seed if args.seed is None else args.seed
    return RunConfig(problem=problem, main=main, aux=aux, train=replace(train, seed=seed), seed=seed,
                     out=args.out or cfg.out)


def config_table(cfg):
    """Inverse of :func:`config_from_dict`."""
    data = asdict(cfg)
    aux = data.pop("aux")
    data["aux"] = {"mode": aux["mode"], **({"dir": aux["dir"]} if aux["dir"] else {}), **aux["train"]}
    return data


def header(cfg):
    return f"config_hash={cfg.config_hash()} seed={cfg.seed}"


def write_json(path, data):
    atomic_write_text(path, json.dumps(data, indent=1, sort_keys=True) + "\n")


# auxiliary functions


def obtain_aux(cfg, problem, out=None):
    """Auxiliary set for ``cfg.aux.mode``; trained sets are saved under ``out/aux``."""
    mode = cfg.aux.mode
    if mode == "analytic":
        aux = analytic_aux_for(problem)
        if out:
            save_aux_set(aux, os.path.join(out, "aux"), {"config_hash": cfg.config_hash(), "seed": cfg.seed})
        return aux, None
    if mode == "from-checkpoint":
        directory = cfg.aux.dir
        if not os.path.isdir(directory):
            raise FileNotFoundError(f"auxiliary checkpoint directory {directory!r} does not exist")
        return load_aux_set(directory, problem), None
    aux, losses = train_aux_set(problem, cfg.aux.train, rng_streams(cfg.seed)["stage1"])
    if out:
        aux_dir = os.path.join(out, "aux")
        save_aux_set(aux, aux_dir, {"config_hash": cfg.config_hash(), "seed": cfg.seed})
        atomic_write_text(os.path.join(aux_dir, "aux_losses.csv"), aux_losses_csv(losses, header(cfg)))
    return aux, losses


def aux_losses_csv(losses, comment):
    roles = list(losses)
    buf = io.StringIO()
    buf.write(f"# {comment}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["step", *roles])
    for step in range(max((len(v) for v in losses.values()), default=0)):
        writer.writerow([step] + [repr(losses[r][step]) if step < len(losses[r]) else "" for r in roles])
    return buf.getvalue()


def cmd_aux_train(cfg):
    problem = cfg.build_problem()
    out = cfg.out
    aux, _ = obtain_aux(cfg, problem, out)
    diag = boundary_diagnostics(aux, problem, 1000, rng_streams(cfg.seed)["eval"])
    write_json(os.path.join(out, "aux", "diagnostics.json"),
               {"config_hash": cfg.config_hash(), "seed": cfg.seed, "mode": cfg.aux.mode, "boundary": diag})
    for name, stats in diag.items():
        print(f"{name}: boundary rms={stats['rms']:.3e} max={stats['max']:.3e}")
    return EXIT_OK


# solve


def fd_step(cfg, problem):
    return cfg.train.h if cfg.train.h is not None else default_fd_step(problem.domain)


def make_trial(cfg, problem, aux, rng):
    d = problem.dim
    v = init_params([d, *cfg.main.hidden, 1], cfg.main.activation, rng)
    psi = init_params([d, *cfg.main.hidden, d], cfg.main.activation, rng)
    return TrialFields(v, psi, aux, fd_step(cfg, problem))


def save_trial(trial, out, cfg):
    meta = {"config_hash": cfg.config_hash(), "seed": cfg.seed}
    for name, net in (("v", trial.v), ("psi", trial.psi)):
        save_checkpoint(net, os.path.join(out, f"{name}.json"))
        write_json(os.path.join(out, f"{name}.meta.json"), {"role": name, **meta})


def cmd_solve(cfg):
    problem = cfg.build_problem()
    out = cfg.out
    os.makedirs(out, exist_ok=True)
    write_json(os.path.join(out, "config.json"),
               {"config_hash": cfg.config_hash(), "seed": cfg.seed, "config": config_table(cfg)})
    history_path = os.path.join(out, "history.csv")
    if cfg.train.steps == 0:
        atomic_write_text(history_path, TrainHistory().to_csv(header(cfg)))
        print(f"steps=0 nothing to train seed={cfg.seed}")
        return EXIT_OK
    start = time.perf_counter()
    aux, _ = obtain_aux(cfg, problem, out)
    trial = make_trial(cfg, problem, aux, rng_streams(cfg.seed)["init"])
    try:
        trial, history = solve(problem, trial, cfg.train)
    except DivergenceError as exc:
        if exc.history is not None:
            atomic_write_text(history_path, exc.history.to_csv(header(cfg)))
        log.error("training diverged: %s", exc)
        print(f"diverged at step {exc.step}; partial history in {history_path}", file=sys.stderr)
        return EXIT_DIVERGED
    atomic_write_text(history_path, history.to_csv(header(cfg)))
    save_trial(trial, out, cfg)
    seconds = time.perf_counter() - start
    l2 = history.rows[-1]["l2_error"] if history.rows else None
    summary = {"config_hash": cfg.config_hash(), "seed": cfg.seed, "final_loss": history.final_loss,
               "final_l2_error": l2, "steps": len(history)}
    if cfg.train.timing:
        summary["seconds"] = seconds
    write_json(os.path.join(out, "summary.json"), summary)
    l2_text = "n/a" if l2 is None else f"{l2:.6g}"
    print(f"final_loss={history.final_loss:.6g} l2_error={l2_text} seconds={seconds:.1f} seed={cfg.seed}")
    return EXIT_OK


# eval


def _axis_spec(items, sep, what):
    out = {}
    for item in items:
        try:
            name, value = item.split("=", 1)
            if not name.startswith("x"):
                raise ValueError
            axis = int(name[1:]) - 1
            if sep:
                lo, hi = value.split(sep)
                out[axis] = (float(lo), float(hi))
            else:
                out[axis] = float(value)
        except ValueError as exc:
            raise ConfigError(f"cannot parse {item!r}", f"eval.{what}") from exc
    return out


def eval_grid(domain, points, fixed, ranges):
    """Tensor grid over the free axes with the fixed axes pinned.

    Raises:
        ConfigError: listing every requested bound outside the domain's box.
    """
    lo, hi = domain.lo, domain.hi
    d = len(lo)
    bad = [f"x{a + 1}" for a in list(fixed) + list(ranges) if not 0 <= a < d]
    if bad:
        raise ConfigError(f"axes {', '.join(bad)} do not exist in dimension {d}", "eval")
    if points < 1:
        raise ConfigError("must be >= 1", "eval.points")
    offending = []
    axes = []
    for a in range(d):
        if a in fixed:
            value = fixed[a]
            if not lo[a] <= value <= hi[a]:
                offending.append(f"x{a + 1}={value:g} outside [{lo[a]:g}, {hi[a]:g}]")
            axes.append(np.array([value]))
        else:
            a_lo, a_hi = ranges.get(a, (lo[a], hi[a]))
            if a_lo < lo[a] or a_hi > hi[a] or a_lo > a_hi:
                offending.append(f"x{a + 1}={a_lo:g}:{a_hi:g} outside [{lo[a]:g}, {hi[a]:g}]")
            axes.append(np.linspace(a_lo, a_hi, points))
    if offending:
        raise ConfigError("grid outside the domain: " + "; ".join(offending), "eval")
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def load_run(run_dir):
    with open(os.path.join(run_dir, "config.json")) as fh:
        try:
            stored = json.load(fh)
        except ValueError as exc:
            raise ConfigError(f"malformed run config: {exc}", os.path.join(run_dir, "config.json")) from exc
    return config_from_dict(stored["config"])


def eval_csv(problem, fields, x, comment):
    d = problem.dim
    u = fields.u(x)
    phi = fields.phi(x)
    cols = [f"x{i + 1}" for i in range(d)] + ["u"] + [f"phi{i + 1}" for i in range(d)]
    table = [x, u[:, None], phi]
    if problem.exact is not None:
        exact = problem.exact.u(x)
        cols += ["u_exact", "abs_error"]
        table += [exact[:, None], np.abs(u - exact)[:, None]]
    data = np.hstack(table)
    buf = io.StringIO()
    buf.write(f"# {comment}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    for row in data:
        writer.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


def cmd_eval(args):
    cfg = load_run(args.run)
    problem = cfg.build_problem()
    fixed = _axis_spec(args.fix, None, "fix")
    ranges = _axis_spec(args.range, ":", "range")
    x = eval_grid(problem.domain, args.points, fixed, ranges)
    if args.exact_trial:
        if problem.exact is None:
            raise ConfigError("problem has no exact solution", "eval.exact_trial")

        def flux(y):
            return np.einsum("nij,nj->ni", problem.A(y), problem.exact.grad(y))

        fields = AnalyticFields(problem.exact.u, flux, fd_step(cfg, problem))
    else:
        if cfg.aux.mode == "trained":
            aux = load_aux_set(os.path.join(args.run, "aux"), problem)
        elif cfg.aux.mode == "from-checkpoint":
            aux = load_aux_set(cfg.aux.dir, problem)
        else:
            aux = analytic_aux_for(problem)
        v = load_checkpoint(os.path.join(args.run, "v.json"))
        psi = load_checkpoint(os.path.join(args.run, "psi.json"))
        fields = TrialFields(v, psi, aux, fd_step(cfg, problem))
    output = args.output or os.path.join(args.run, "eval.csv")
    atomic_write_text(output, eval_csv(problem, fields, x, header(cfg)))
    print(f"wrote {len(x)} rows to {output}")
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "eval":
            return cmd_eval(args)
        cfg = resolve_config(args)
        if args.command == "aux-train":
            return cmd_aux_train(cfg)
        return cmd_solve(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

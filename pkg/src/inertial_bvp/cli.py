"""Command-line runner for the decoupling and manifold experiments.

Exit codes: 0 success, 2 config error, 3 solver failure, 4 partial result (some sweep rows failed or a trajectory stopped early).
"""
import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bounds import GapData, t_lower_bound, truncation_bound
from .config import ConfigError, RunConfig, load_config, schema
from .errors import GapViolationError, InertialBvpError, InputError
from . import manifold as mf

log = logging.getLogger("inertial_bvp")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_PARTIAL = 0, 2, 3, 4


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "{:.16e}".format(float(v))
    return str(v).replace(",", ";")


def _header(cfg, command):
    blob = json.dumps({"command": command, "version": __version__, "config": cfg.resolved()},
                      sort_keys=True, separators=(",", ":"))
    return f"# inertial_bvp {command}\n# config {blob}\n"


def write_csv(path, cfg, command, columns, rows):
    lines = [_header(cfg, command), ",".join(columns) + "\n"]
    for r in rows:
        lines.append(",".join(_fmt(v) for v in r) + "\n")
    Path(path).write_text("".join(lines))


def write_json(path, cfg, command, payload):
    doc = {"command": command, "version": __version__, "config": cfg.resolved(), "result": payload}
    Path(path).write_text(json.dumps(_jsonable(doc), sort_keys=True, indent=2) + "\n")


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if np.isfinite(x) else None
    if isinstance(x, (np.integer,)):
        return int(x)
    return x


# --- commands -----------------------------------------------------------------

def cmd_decouple(cfg: RunConfig, out: Path, workers=1):
    problem = cfg.make_problem()
    dc = cfg.decouple
    if not dc.t1 > dc.t0:
        raise ConfigError("decouple needs t1 > t0 (empty time grid)")
    d, p = problem.dim, cfg.p
    if not p < d:
        raise ConfigError(f"p={p} must be smaller than d={d}")
    what0 = None if cfg.what_boundary is None else [np.asarray(w, dtype=float) for w in cfg.what_boundary]
    kw = dict(what0=what0, rtol=dc.rtol, atol=dc.atol,
              max_step=np.inf if dc.max_step is None else dc.max_step)
    if cfg.linearization == "anchor":
        run = mf.decouple(lambda t: problem.linear_part(t), d, p, dc.t0, dc.t1, **kw)
    else:
        u0 = dc.u0
        if u0 is None:
            u0 = 0.1 * np.random.default_rng(cfg.seed).standard_normal(d)
        if len(u0) != d:
            raise ConfigError(f"decouple.u0 must have length {d}")
        run = mf.decouple(problem, d, p, dc.t0, dc.t1, u0=np.asarray(u0, dtype=float), **kw)
    events = {}
    for t, flips in run.events:
        events.setdefault(float(t), []).append("".join("1" if f else "0" for f in flips))
    cols = ["t"] + [f"D{i + 1}{i + 1}" for i in range(d)] + ["leak11", "leak21", "sigma", "reembed"]
    rows = []
    for (t, B), sig in zip(run.blocks, run.sigma):
        diag = np.concatenate([np.diag(B.D11), np.diag(B.D22)])
        rows.append([t, *diag, B.leak11, B.leak21, "".join("+" if s > 0 else "-" for s in sig),
                     "|".join(events.get(float(t), []))])
    write_csv(out / "decouple.csv", cfg, "decouple", cols, rows)
    write_json(out / "decouple_summary.json", cfg, "decouple",
               {"diag_average": run.diag_average, "n_events": len(run.events),
                "max_leak11": max(B.leak11 for _, B in run.blocks),
                "max_leak21": max(B.leak21 for _, B in run.blocks)})
    return EXIT_OK


def cmd_manifold_point(cfg: RunConfig, out: Path, workers=1):
    problem = cfg.make_problem()
    q = cfg.query(problem)
    pt = mf.manifold_point(problem, q)
    rec = pt.record()
    if cfg.defect_horizon:
        rec["pullback_defect"] = mf.pullback_defect(problem, pt, cfg.defect_horizon)
    write_json(out / "manifold_point.json", cfg, "manifold-point", rec)
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, out: Path, workers=1):
    problem = cfg.make_problem()
    if cfg.what_grid is not None:
        base = cfg.query(problem)
        res = mf.sweep_what(problem, base, cfg.what_grid, defect_horizon=cfg.defect_horizon,
                            workers=workers)
        key_col = "what"
    else:
        Ts = cfg.T_values()
        base = cfg.query(problem, T=Ts[0])
        res = mf.sweep_T(problem, base, Ts, defect_horizon=cfg.defect_horizon, workers=workers)
        key_col = "T"
    cols = [key_col, "residual", "defect", "bvp_residual", "n_nodes", "newton_iterations",
            "reembeds", "y", "x", "error"]
    rows = []
    for r in res.rows:
        key = r.T if key_col == "T" else " ".join(_fmt(v) for w in r.what for v in w)
        vec = lambda v: "" if v is None else " ".join(_fmt(a) for a in v)
        rows.append([key, r.residual, r.defect, r.bvp_residual, r.n_nodes, r.newton_iterations,
                     r.reembeds, vec(r.y), vec(r.x), r.error])
    write_csv(out / "sweep.csv", cfg, "sweep", cols, rows)
    best = res.best("residual" if problem.has_residual else "defect")
    write_json(out / "sweep_summary.json", cfg, "sweep",
               {"rows": len(res.rows), "failed": len(res.failed), "knee": res.knee,
                "best": None if best is None else {key_col: best.T if key_col == "T" else best.what,
                                                   "residual": best.residual, "defect": best.defect}})
    if len(res.failed) == len(res.rows):
        return EXIT_SOLVER
    return EXIT_PARTIAL if res.failed else EXIT_OK


def cmd_trajectory(cfg: RunConfig, out: Path, workers=1):
    problem = cfg.make_problem()
    q = cfg.query(problem)
    tc = cfg.trajectory
    tr = mf.manifold_trajectory(problem, q, tc.dt, tc.N, scheme=tc.scheme)
    p = q.p
    cols = ["t"] + [f"y{i + 1}" for i in range(p)] + [f"x{i + 1}" for i in range(problem.dim - p)] + \
        [f"u{i + 1}" for i in range(problem.dim)] + ["residual", "bvp_residual"]
    rows = [[tr.t[k], *tr.y[k], *tr.x[k], *tr.u[k], tr.residual[k], tr.bvp_residual[k]]
            for k in range(tr.t.size)]
    write_csv(out / "trajectory.csv", cfg, "trajectory", cols, rows)
    res = np.abs(tr.residual)
    summary = {"steps": int(tr.t.size - 1), "solves": tr.solves,
               "solves_after_startup": tr.solves_after_startup, "scheme": tr.scheme,
               "order": tr.order, "complete": tr.complete, "error": tr.error}
    if np.all(np.isfinite(res)):
        summary.update(initial_residual=res[0], max_residual=res.max(),
                       drift_factor=res.max() / res[0] if res[0] > 0 else None)
    write_json(out / "trajectory_summary.json", cfg, "trajectory", summary)
    if not tr.complete:
        log.error("trajectory stopped early: %s", tr.error)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_tbound(cfg: RunConfig, out: Path, workers=1):
    tb = cfg.tbound
    if tb is None:
        raise ConfigError("tbound section missing")
    try:
        g = GapData(K=tb.K, alpha=tb.alpha, beta=tb.beta, L=tb.L, sigma=tb.sigma,
                    provenance={k: "given" for k in ("K", "alpha", "beta", "L")})
    except InputError as exc:
        raise ConfigError(str(exc)) from exc
    payload = {"gapdata": g.as_dict()}
    try:
        T_min = t_lower_bound(g, tb.tol, tb.x0_norm, tb.t0)
    except GapViolationError as exc:
        payload["gap_violation"] = str(exc)
        write_json(out / "tbound.json", cfg, "tbound", payload)
        log.error("%s", exc)
        return EXIT_SOLVER
    T_max = tb.T_max if tb.T_max is not None else max(T_min, tb.t0) + 2.0 * max(T_min - tb.t0, 1.0)
    Ts = np.linspace(tb.t0, T_max, tb.samples)
    payload.update(T_min=T_min, C=g.C, bound_at_T_min=float(truncation_bound(g, tb.x0_norm, tb.t0, T_min)),
                   curve={"T": Ts, "bound": truncation_bound(g, tb.x0_norm, tb.t0, Ts)})
    write_json(out / "tbound.json", cfg, "tbound", payload)
    return EXIT_OK


COMMANDS = {
    "decouple": cmd_decouple,
    "manifold-point": cmd_manifold_point,
    "sweep": cmd_sweep,
    "trajectory": cmd_trajectory,
    "tbound": cmd_tbound,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="inertial-bvp", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="JSON run configuration")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--workers", type=int, default=1, help="parallel sweep workers")
        sp.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        sp.add_argument("-v", "--verbose", action="store_true")
    sub.add_parser("schema", help="print the JSON schema of the config")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "schema":
        print(json.dumps(schema(), indent=2, sort_keys=True))
        return EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(Path(args.config).read_text())
        if args.seed is not None:
            cfg = cfg.model_copy(update={"seed": args.seed})
        if args.workers < 1:
            raise ConfigError("--workers must be at least 1")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out, workers=args.workers)
    except (ConfigError, OSError) as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except InputError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except InertialBvpError as exc:
        log.error("solver failure: %s: %s", type(exc).__name__, exc)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())

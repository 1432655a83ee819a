"""Command line: upstream, solve, sweep and export verbs driven by an INI config."""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig
from .fit import continuation, extract_free_boundary, solve_jet
from .geometry import build_grid
from .postproc import downstream_state, export, farfield_residuals, recover_fields
from .solver import StreamField, validate_structure
from .thermo import lambda_eps
from .upstream import UpstreamError, build_stream_profiles, solve_upstream

log = logging.getLogger("axijet")

OUT_ENV = "AXIJET_OUT"
EXIT_INADMISSIBLE = 2


class StageError(RuntimeError):
    def __init__(self, stage, exc):
        super().__init__(f"stage {stage} failed: {exc}")
        self.stage = stage
        self.cause = exc


def _atomic_write(path, text):
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


class Run:
    """Output directory, stage timings and the manifest of one command."""

    def __init__(self, cfg: RunConfig, out: str, command: str):
        self.cfg = cfg
        self.out = out
        self.command = command
        self.t_start = time.time()
        self.stages: dict = {}
        self.flags: dict = {}
        os.makedirs(out, exist_ok=True)

    def stage(self, name, fn, *args, **kw):
        t0 = time.perf_counter()
        log.info("stage %s", name)
        try:
            out = fn(*args, **kw)
        except (UpstreamError, StageError):
            raise
        except Exception as exc:
            raise StageError(name, exc) from exc
        finally:
            self.stages[name] = round(time.perf_counter() - t0, 3)
        return out

    def path(self, name):
        return os.path.join(self.out, name)

    def manifest(self):
        doc = dict(command=self.command, config_hash=self.cfg.digest(), version=__version__,
                   stage_seconds=self.stages, flags=self.flags)
        _atomic_write(self.path("manifest.json"), json.dumps(doc, indent=2, sort_keys=True) + "\n")
        _atomic_write(self.path("config.ini"), self.cfg.to_ini())

    def mark_partial(self):
        """Suffix files written by this run with .partial."""
        for name in os.listdir(self.out):
            p = self.path(name)
            if os.path.isfile(p) and not name.endswith(".partial") \
                    and os.path.getmtime(p) >= self.t_start - 1.0:
                os.replace(p, p + ".partial")


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def upstream_stage(cfg: RunConfig):
    prof = cfg.profiles()
    state = solve_upstream(prof, cfg.Q)
    gas = build_stream_profiles(state, cfg.eps)
    return prof, state, gas


def upstream_table(state, gas):
    return dict(pbar=state.pbar, Q_star=state.Q_star, Q_upper=state.Q_upper,
                kappa=state.kappa, kappa0=gas.kappa0)


def _prebracket(cfg: RunConfig):
    return 1.0 / 16.0 if cfg.prebracket and cfg.hy < 1.0 / 16.0 else None


def postprocess(cfg, prof, state, gas, field: StreamField, dom, boundary=None):
    sol = recover_fields(field, dom, gas)
    sol.boundary = boundary if boundary is not None else extract_free_boundary(field, dom)
    down = downstream_state(field.Lambda, gas, prof, state)
    sol.downstream = down
    up_res, dn_res = farfield_residuals(field, dom, state, down)
    struct = validate_structure(field, dom, gas)
    summary = dict(Q=cfg.Q, Lambda=field.Lambda, lambda_eps=lambda_eps(field.Lambda, gas),
                   pbar=state.pbar, p_out=down.p_out, H_low=down.H_low, kappa=state.kappa,
                   kappa0=gas.kappa0, subsonic_margin=struct["subsonic_margin"],
                   upstream_residual=up_res, downstream_residual=dn_res)
    return sol, summary, struct


def save_solution(path, field: StreamField, dom):
    tmp = path + ".tmp.npz"
    np.savez(tmp, psi=field.psi, Q=field.Q, Lambda=field.Lambda, lam2=field.lam2,
             eps=field.eps, mu=dom.mu, R=dom.R, hx=dom.hx, hy=dom.hy)
    os.replace(tmp, path)


def load_solution(path, cfg: RunConfig):
    z = np.load(path)
    dom = build_grid(cfg.nozzle(), float(z["mu"]), float(z["R"]), float(z["hx"]), float(z["hy"]))
    field = StreamField(np.array(z["psi"]), float(z["Q"]), float(z["Lambda"]), float(z["lam2"]),
                        float(z["eps"]))
    if field.psi.shape != dom.shape:
        raise ValueError("stored solution does not match the configured nozzle")
    return field, dom


def _rows_csv(header, rows):
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join(v if isinstance(v, str) else "%.17g" % v for v in r))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_upstream(cfg: RunConfig, out: str):
    run = Run(cfg, out, "upstream")
    prof, state, gas = run.stage("upstream", upstream_stage, cfg)
    tab = upstream_table(state, gas)
    width = max(len(k) for k in tab)
    for k, v in tab.items():
        print(f"{k:<{width}}  {v:.12g}")
    _atomic_write(run.path("upstream.txt"), "".join(f"{k}={v!r}\n" for k, v in tab.items()))
    run.flags["admissible"] = True
    run.manifest()
    return 0


def cmd_solve(cfg: RunConfig, out: str, level: Optional[int] = None):
    run = Run(cfg, out, "solve")
    try:
        prof, state, gas = run.stage("upstream", upstream_stage, cfg)
        levels = cfg.levels[:level] if level else cfg.levels
        res, dom = run.stage("continuation", continuation, cfg.nozzle(), levels, gas, cfg.hx,
                             cfg.hy, c0=cfg.c0, rel_tol=cfg.continuation_tol,
                             tol_phi=cfg.fit_tol * cfg.hx, prebracket=_prebracket(cfg),
                             threads=cfg.threads, tol=cfg.solver_tol)
        _atomic_write(run.path("fit_log.csv"), res.log_csv())
        keys = ("level", "mu", "R", "Lambda", "phi", "H_low", "H_star", "dLambda",
                "boundary_move", "seconds")
        _atomic_write(run.path("continuation.csv"),
                      _rows_csv(keys, [[float(r[k]) for k in keys] for r in res.table]))
        js = res.solve
        save_solution(run.path("solution.npz"), js.field, dom)
        sol, summary, struct = run.stage("postproc", postprocess, cfg, prof, state, gas,
                                         js.field, dom, js.boundary)
        run.stage("export", export, sol, out, summary)
        run.flags.update(solver_converged=bool(js.report.converged),
                         fit_converged=bool(res.converged),
                         subsonic=bool(struct["subsonic"]), Lambda=res.Lambda_star)
        run.manifest()
    except StageError:
        run.mark_partial()
        raise
    for k, v in summary.items():
        print(f"{k}={v:.12g}")
    return 0


def cmd_sweep(cfg: RunConfig, out: str, lambdas: Sequence[float]):
    run = Run(cfg, out, "sweep")
    if len(lambdas) < 1:
        raise ConfigError("sweep needs at least one Lambda")
    prof, state, gas = run.stage("upstream", upstream_stage, cfg)
    mu, R = cfg.levels[0]
    nozzle = cfg.nozzle()
    dom = run.stage("geometry", build_grid, nozzle, mu, R, cfg.hx, cfg.hy)
    rows = []
    for L in sorted(float(v) for v in lambdas):
        try:
            js = solve_jet(nozzle, dom, gas, L, threads=cfg.threads, tol=cfg.solver_tol)
            rows.append((L, js.phi, js.boundary.H_lower, js.report.energy))
        except Exception as exc:  # one bad Lambda does not stop the sweep
            log.error("Lambda=%g failed: %s", L, exc)
            rows.append((L, math.nan, math.nan, math.nan))
        print("%.12g,%.12g,%.12g,%.12g" % rows[-1], flush=True)
    _atomic_write(run.path("sweep.csv"),
                  _rows_csv(("Lambda", "Upsilon_top", "H_low_est", "energy"), rows))
    run.flags["failed"] = int(sum(math.isnan(r[1]) for r in rows))
    run.manifest()
    return 0


def cmd_export(cfg: RunConfig, out: str, source: Optional[str] = None):
    run = Run(cfg, out, "export")
    src = source or out
    try:
        prof, state, gas = run.stage("upstream", upstream_stage, cfg)
        field, dom = run.stage("load", load_solution, os.path.join(src, "solution.npz"), cfg)
        sol, summary, _ = run.stage("postproc", postprocess, cfg, prof, state, gas, field, dom)
        run.stage("export", export, sol, out, summary)
        run.manifest()
    except StageError:
        run.mark_partial()
        raise
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _parser():
    p = argparse.ArgumentParser(prog="axijet", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI run configuration")
    common.add_argument("--out", metavar="DIR", help=f"output directory (else ${OUT_ENV}, "
                        "else the config value)")
    common.add_argument("--threads", type=int, metavar="N", help="solver threads")
    common.add_argument("--level", type=int, metavar="K", help="use at most K truncation levels")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("upstream", parents=[common], help="solve the upstream state")
    sub.add_parser("solve", parents=[common], help="fit Lambda and export the jet")
    sw = sub.add_parser("sweep", parents=[common], help="Upsilon(1) over a Lambda list")
    sw.add_argument("--lambdas", metavar="L1,L2,...", help="override the config list")
    ex = sub.add_parser("export", parents=[common], help="re-export a stored solution")
    ex.add_argument("--from", dest="source", metavar="DIR",
                    help="directory holding solution.npz (default: the output directory)")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    logging.captureWarnings(True)
    try:
        cfg = RunConfig.load(args.config) if args.config else RunConfig()
        if args.threads is not None:
            cfg.threads = args.threads
            cfg.validate()
    except (ConfigError, OSError) as exc:
        print(f"axijet: config error: {exc}", file=sys.stderr)
        return 1
    out = args.out or os.environ.get(OUT_ENV) or cfg.out
    try:
        if args.command == "upstream":
            return cmd_upstream(cfg, out)
        if args.command == "solve":
            return cmd_solve(cfg, out, args.level)
        if args.command == "sweep":
            lams = [float(v) for v in args.lambdas.split(",")] if args.lambdas else cfg.lambdas
            return cmd_sweep(cfg, out, lams)
        return cmd_export(cfg, out, args.source)
    except UpstreamError as exc:
        print(f"axijet: {exc}", file=sys.stderr)
        if "no admissible subsonic upstream state" not in str(exc):
            print("axijet: no admissible subsonic upstream state", file=sys.stderr)
        return EXIT_INADMISSIBLE
    except StageError as exc:
        if isinstance(exc.cause, UpstreamError):
            print(f"axijet: {exc.cause}", file=sys.stderr)
            return EXIT_INADMISSIBLE
        print(f"axijet: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"axijet: config error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

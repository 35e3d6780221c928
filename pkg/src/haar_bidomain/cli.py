"""Batch command-line front end.

``haar-bidomain MODE --config FILE --out DIR [--jobs N] [--seed-probes LIST]``
with MODE one of simulate, error-table, grid-validation, temporal-order,
coeff-decay; ``haar-bidomain presets`` lists the available presets.

Exit status: 0 success, 2 configuration error, 3 solver failure, 4 failed
check in a harness mode.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    MODES,
    RunConfig,
    build_problem,
    build_stepping,
    describe_presets,
    emit,
    parse_config,
    stepping_options,
)
from .errors import ConfigError, DomainError, StepError
from .harness import (
    coefficient_decay_check,
    error_table,
    grid_validation,
    reference_run,
    temporal_order,
)
from .stepper import SteppingConfig, Trajectory, run

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_CHECK = 0, 2, 3, 4
MANIFEST = "manifest.json"

log = logging.getLogger("haar_bidomain")


@dataclass
class RunManifest:
    config: str
    mode: str
    version: str = __version__
    status: str = "ok"
    exit_code: int = EXIT_OK
    wall_clock_seconds: float = 0.0
    gmres: list = field(default_factory=list)
    checks: dict = field(default_factory=dict)
    failure: dict | None = None
    files: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True) + "\n"


# --------------------------------------------------------------------------- output


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if isinstance(x, str):
        return x
    return "%.17g" % float(x)


def _atomic_write(path: Path, data: bytes):
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class OutputDir:
    def __init__(self, path: Path):
        self.path = path
        self.written: list[str] = []

    def csv(self, name: str, header: list[str], rows) -> None:
        lines = [",".join(header)]
        lines += [",".join(_fmt(x) for x in row) for row in rows]
        self.raw(name, ("\n".join(lines) + "\n").encode())

    def raw(self, name: str, data: bytes) -> None:
        _atomic_write(self.path / name, data)
        if name not in self.written:
            self.written.append(name)

    def hashes(self) -> dict:
        return {n: hashlib.sha256((self.path / n).read_bytes()).hexdigest()
                for n in sorted(self.written)}


def prepare_output_dir(path: Path, force: bool = False) -> None:
    """Create ``path``; refuse to mix with unrelated files so the manifest stays complete."""
    path.mkdir(parents=True, exist_ok=True)
    existing = [p for p in path.iterdir()]
    if not existing:
        return
    if not force:
        raise ConfigError(f"output directory {path} is not empty (use --force to replace a previous run)")
    old = path / MANIFEST
    listed = set()
    if old.exists():
        listed = set(json.loads(old.read_text()).get("files", {}))
    for p in existing:
        if p.name in listed or p.name == MANIFEST:
            p.unlink()
    leftover = [p.name for p in path.iterdir()]
    if leftover:
        raise ConfigError(f"output directory holds files not from a previous run: {leftover[:5]}")


def _coord_names(dim: int) -> list[str]:
    return ["x", "y", "z"][:dim]


def _state_rows(traj: Trajectory, state):
    pts = traj.context.points
    return [list(pts[k]) + [state.v[k], state.ue[k]] + list(state.w[:, k])
            for k in range(len(pts))]


def _w_names(d: int) -> list[str]:
    return ["w"] if d == 1 else [f"w{c + 1}" for c in range(d)]


# --------------------------------------------------------------------------- modes


def _simulate(cfg: RunConfig, out: OutputDir, man: RunManifest, jobs: int):
    problem = build_problem(cfg.problem)
    traj = run(problem, cfg.levels(), build_stepping(cfg))
    dim, d = problem.dim, problem.ionic.d
    header = _coord_names(dim) + ["v", "ue"] + _w_names(d)
    for s in traj.snapshots:
        out.csv(f"snapshot_{s.step:06d}.csv", header, _state_rows(traj, s))
    fin = traj.final
    pts = traj.context.points
    for name, vals in (("v", fin.v), ("ue", fin.ue)) + tuple(
            (wn, fin.w[c]) for c, wn in enumerate(_w_names(d))):
        out.csv(f"plot_{name}.csv", _coord_names(dim) + [name],
                [list(pts[k]) + [vals[k]] for k in range(len(pts))])
    _gmres_csv(out, traj)
    man.gmres.append(traj.gmres_summary())


def _gmres_csv(out: OutputDir, traj: Trajectory, name: str = "gmres_stats.csv"):
    rows = [[r.step, sum(g.iterations for g in r.gating), r.vue.iterations,
             r.vue.final_relative_residual, int(r.vue.converged)] for r in traj.reports]
    out.csv(name, ["step", "gating_iterations", "vue_iterations",
                   "vue_relative_residual", "converged"], rows)


def _probes(cfg: RunConfig):
    return np.array(cfg.probe_points(), dtype=float)


def _error_table(cfg: RunConfig, out: OutputDir, man: RunManifest, jobs: int):
    problem = build_problem(cfg.problem)
    o = cfg.outputs
    levels = cfg.levels()
    ref_levels = levels if o.J_ref < 0 else (o.J_ref,) * problem.dim
    opts = stepping_options(cfg.numerics)
    dts = tuple(sorted(o.dts, reverse=True))
    ref = reference_run(problem, ref_levels, o.dt_ref, dts, **opts)
    runs = _parallel(lambda dt: run(problem, levels, SteppingConfig(dt=dt, **opts)), dts, jobs)
    rep = error_table(runs, ref, _probes(cfg), dts)
    coords = _coord_names(problem.dim)
    cols = [f"dt={_fmt(dt)}" for dt in dts]
    for name, tab in (("table_v.csv", rep.abs_errors), ("table_ue.csv", rep.abs_errors_ue)):
        out.csv(name, coords + cols,
                [list(rep.mapped_points[k]) + list(tab[k]) for k in range(len(tab))])
    out.csv("table_norms.csv", ["dt", "linf_v", "linf_ue", "x_norm"],
            [[dt, rep.linf_v[k], rep.linf_ue[k], rep.x_norm[k]] for k, dt in enumerate(dts)])
    man.gmres.extend([r.gmres_summary() for r in runs] + [ref.gmres_summary()])
    ok = bool(np.all(np.diff(rep.linf_v) < 0))
    man.checks["linf_v_decreasing"] = ok
    return ok


def _grid_validation(cfg: RunConfig, out: OutputDir, man: RunManifest, jobs: int):
    problem = build_problem(cfg.problem)
    rep = grid_validation(problem, cfg.outputs.Js, cfg.numerics.dt, jobs=jobs,
                          **stepping_options(cfg.numerics))
    ratios = [""] + [_fmt(r) for r in rep.ratios] + [""]
    out.csv("grid_validation.csv", ["J", "x_norm_error", "linf_v", "ratio"],
            [[J, rep.errors[k], rep.extra["linf_v"][k], ratios[k]]
             for k, J in enumerate(rep.values)])
    man.gmres.extend(rep.extra["gmres"])
    man.checks.update(monotone=rep.monotone, good_enough_J=rep.good_enough,
                      fitted_order=rep.fitted_order)
    return rep.monotone


def _temporal_order(cfg: RunConfig, out: OutputDir, man: RunManifest, jobs: int):
    problem = build_problem(cfg.problem)
    o = cfg.outputs
    rep = temporal_order(problem, cfg.levels(), o.dts, dt_ref=o.dt_ref, jobs=jobs,
                         **stepping_options(cfg.numerics))
    ratios = [""] + [_fmt(r) for r in rep.ratios]
    out.csv("temporal_order.csv", ["dt", "linf_v", "ratio"],
            [[dt, rep.errors[k], ratios[k]] for k, dt in enumerate(rep.values)])
    man.gmres.extend(rep.extra["gmres"])
    man.checks.update(monotone=rep.monotone, fitted_order=rep.fitted_order)
    return rep.monotone


_DECAY = {
    "abs-diff": (lambda x, y: np.abs(x - y), lambda x, y: -np.abs(x - y) ** 3 / 6),
    "sum": (lambda x, y: x + y, lambda x, y: (x * x * y + x * y * y) / 2),
    "constant": (lambda x, y: np.ones(np.broadcast(x, y).shape), lambda x, y: x * y),
}


def _coeff_decay(cfg: RunConfig, out: OutputDir, man: RunManifest, jobs: int):
    f, G = _DECAY[cfg.outputs.coeff_function]
    rep = coefficient_decay_check(f, cfg.outputs.coeff_J_max, antiderivative=G)
    out.csv("coeff_decay.csv", ["j", "m", "max_abs_coefficient"],
            [[j, 2**j, rep.errors[k]] for k, j in enumerate(rep.values)])
    slope = rep.fitted_order
    man.checks.update(slope=slope if np.isfinite(slope) else str(slope),
                      passed=bool(rep.good_enough))
    return bool(rep.good_enough)


MODE_RUNNERS = {
    "simulate": _simulate,
    "error-table": _error_table,
    "grid-validation": _grid_validation,
    "temporal-order": _temporal_order,
    "coeff-decay": _coeff_decay,
}


def _parallel(fn, items, jobs):
    if jobs <= 1:
        return [fn(x) for x in items]
    from concurrent.futures import ThreadPoolExecutor
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def execute(cfg: RunConfig, out_dir, jobs: int = 1, force: bool = False) -> RunManifest:
    """Run the configured mode, write its outputs and the manifest."""
    path = Path(out_dir)
    prepare_output_dir(path, force)
    out = OutputDir(path)
    man = RunManifest(config=emit(cfg), mode=cfg.mode)
    t0 = time.perf_counter()
    try:
        ok = MODE_RUNNERS[cfg.mode](cfg, out, man, jobs)
        if ok is False:
            man.status, man.exit_code = "check-failed", EXIT_CHECK
    except StepError as exc:
        man.status, man.exit_code = "solver-failure", EXIT_SOLVER
        st = exc.stats
        man.failure = {
            "step": exc.step, "message": str(exc),
            "stats": None if st is None else {
                "iterations": st.iterations,
                "final_relative_residual": st.final_relative_residual,
                "converged": st.converged,
            },
        }
    man.wall_clock_seconds = time.perf_counter() - t0
    man.files = out.hashes()
    _atomic_write(path / MANIFEST, man.to_json().encode())
    return man


# --------------------------------------------------------------------------- entry point


class _Formatter(logging.Formatter):
    COLORS = {"WARNING": "\033[33m", "ERROR": "\033[31m"}

    def __init__(self, color: bool):
        super().__init__("%(levelname)s %(message)s")
        self.color = color

    def format(self, record):
        s = super().format(record)
        c = self.COLORS.get(record.levelname) if self.color else None
        return f"{c}{s}\033[0m" if c else s


def _setup_logging(verbose: bool):
    handler = logging.StreamHandler(sys.stderr)
    color = sys.stderr.isatty() and "NO_COLOR" not in os.environ
    handler.setFormatter(_Formatter(color))
    log.handlers[:] = [handler]
    log.setLevel(logging.INFO if verbose else logging.WARNING)


def parse_probe_list(text: str, dim: int) -> tuple[tuple[float, ...], str]:
    """``"0.1,0.5"`` (diagonal points) or ``"0.1:0.2,0.3:0.4"`` (explicit points)."""
    items = [s.strip() for s in text.split(",") if s.strip()]
    if not items:
        raise ConfigError("empty probe list", key="--seed-probes")
    try:
        if any(":" in s for s in items):
            pts = [tuple(float(c) for c in s.split(":")) for s in items]
            if any(len(p) != dim for p in pts):
                raise ConfigError(f"probe points need {dim} coordinates", key="--seed-probes")
            return tuple(c for p in pts for c in p), "points"
        return tuple(float(s) for s in items), "diagonal"
    except ValueError as exc:
        raise ConfigError(str(exc), key="--seed-probes") from None


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="haar-bidomain", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="mode", required=True)
    sub.add_parser("presets", help="list conductivity, ionic, stimulus and anchor presets")
    for m in MODES:
        sp = sub.add_parser(m, help=f"run the {m} mode")
        sp.add_argument("--config", required=True, help="path to the run configuration")
        sp.add_argument("--out", help="output directory (default: out_dir from the config)")
        sp.add_argument("--jobs", type=int, default=1, help="parallel simulations in sweeps")
        sp.add_argument("--seed-probes", help="probe points overriding the config")
        sp.add_argument("--allow-large", action="store_true",
                        help="lift the resolution guard rails")
        sp.add_argument("--force", action="store_true",
                        help="replace the files of a previous run in the output directory")
        sp.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.mode == "presets":
        sys.stdout.write(describe_presets())
        return EXIT_OK
    _setup_logging(args.verbose)
    try:
        text = Path(args.config).read_text(encoding="utf-8")
        if args.allow_large:
            log.warning("resolution guard rails disabled")
            text = _with_key(text, "numerics", "allow_large", "true")
        cfg = parse_config(text)
        cfg = RunConfig(cfg.problem, cfg.numerics, replace(cfg.outputs, mode=args.mode))
        if args.seed_probes:
            probes, layout = parse_probe_list(args.seed_probes, cfg.problem.dim)
            cfg = RunConfig(cfg.problem, cfg.numerics,
                            replace(cfg.outputs, probes=probes, probe_layout=layout))
        out_dir = args.out or cfg.outputs.out_dir
        if not out_dir:
            raise ConfigError("no output directory (pass --out or set out_dir)", key="out_dir")
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1", key="--jobs")
        log.info("running %s into %s", args.mode, out_dir)
        man = execute(cfg, out_dir, jobs=args.jobs, force=args.force)
    except (ConfigError, DomainError, OSError) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    if man.status == "solver-failure":
        log.error("solver failure: %s", man.failure["message"])
    elif args.mode != "simulate":
        verdict = "PASS" if man.exit_code == EXIT_OK else "FAIL"
        checks = ", ".join(f"{k}={v}" for k, v in man.checks.items())
        print(f"{args.mode}: {verdict} ({checks})")
    return man.exit_code


def _with_key(text: str, section: str, key: str, value: str) -> str:
    """Set ``key`` inside ``[section]``, replacing an existing assignment."""
    lines = text.splitlines()
    out, cur, done = [], None, False
    for line in lines:
        s = line.split("#", 1)[0].strip()
        if s.startswith("[") and s.endswith("]"):
            if cur == section and not done:
                out.append(f"{key} = {value}")
                done = True
            cur = s[1:-1].strip()
        elif cur == section and "=" in s and s.split("=", 1)[0].strip() == key:
            out.append(f"{key} = {value}")
            done = True
            continue
        out.append(line)
    if not done:
        if cur != section:
            out.append(f"[{section}]")
        out.append(f"{key} = {value}")
    return "\n".join(out) + "\n"


if __name__ == "__main__":
    sys.exit(main())

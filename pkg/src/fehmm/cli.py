"""Command line: ``fehmm {micro,run,converge,verify,cache} --config scenario.ini``.

Exit codes: 0 ok, 2 configuration error, 3 numerical failure, 4 invariant violation.
"""

import argparse
import csv
import json
import logging
import subprocess
import sys
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import ScenarioConfig, load_config
from .errors import ConfigError, DegenerateFitError, InvariantViolation, NumericalError

log = logging.getLogger("fehmm")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_INVARIANT = 0, 2, 3, 4
CONVERGE_CHOICES = ("micro-M", "micro-R", "micro-G", "micro-J", "sobolev", "macro", "time")
DEFAULT_LEVELS = {"micro": (8, 16, 32), "sobolev": (4, 8, 16), "macro": (4, 8, 16)}
STABILITY_COLUMNS = ["t", "norm", "bound", "margin", "ok"]
CORRECTOR_COLUMNS = ["quantity", "value", "bound", "ok"]


def artifact_version():
    """Package version, suffixed with the git revision when run from a checkout."""
    try:
        rev = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True, text=True,
                             cwd=Path(__file__).parent, timeout=5)
        if rev.returncode == 0 and rev.stdout.strip():
            return f"{__version__}+{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


@dataclass
class RunManifest:
    command: str
    config_hash: str
    version: str
    timings: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    status: str = "ok"

    @contextmanager
    def phase(self, name):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.timings[name] = round(time.perf_counter() - t0, 6)

    def add(self, *paths):
        self.outputs.extend(str(p) for p in paths)

    def write(self, directory):
        missing = [p for p in self.outputs if not Path(p).exists()]
        if missing:
            raise NumericalError(f"declared outputs missing: {missing}")
        path = Path(directory) / "manifest.json"
        path.write_text(json.dumps(asdict(self), indent=2) + "\n")
        return path


def _levels(text, default):
    if text is None:
        return tuple(default)
    try:
        levels = tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise ConfigError(f"--levels: expected comma separated integers, got {text!r}") from exc
    if len(levels) < 3:
        raise ConfigError("--levels: a rate fit needs at least three levels")
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ConfigError("--levels: levels must be strictly increasing")
    return levels


def _load(args):
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out is not None:
        changes["out_dir"] = args.out
    if getattr(args, "cache_dir", None):
        changes["cache_dir"] = args.cache_dir
    return cfg.replace(**changes) if changes else cfg


def _outdir(cfg):
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def _fmt(v):
    return repr(float(v))


# -- subcommands --------------------------------------------------------------------

def cmd_micro(args):
    from .studies import micro_rates
    from .tensors import export_csv, micro_bounds, table_bound_checks
    from .macro import QuadratureRule
    from .mesh import build_macro_mesh
    from .pipeline import tensor_table

    cfg = _load(args)
    out = _outdir(cfg)
    man = RunManifest("micro", cfg.config_hash(), artifact_version())
    with man.phase("tensors"):
        rule = QuadratureRule(build_macro_mesh(cfg.macro_cells))
        table, hit = tensor_table(cfg, rule, args.jobs, not args.no_cache)
    print(f"tensor table {table.key[:12]} ({'cache hit' if hit else 'computed'}), "
          f"{table.n_unique} micro problem(s), {table.n_times} time nodes")
    man.add(export_csv(table, out / "tensors.csv"))
    m = table.meta
    b = micro_bounds(m["alpha"], m["C_M"], m["C_R"])
    rows = [["alpha", _fmt(m["alpha"]), "", 1], ["C_M", _fmt(m["C_M"]), "", 1], ["C_R", _fmt(m["C_R"]), "", 1]]
    for q, key in (("norm_w_M", "norms_M_max"), ("norm_w_G0", "norms_G0_max"), ("norm_w_N0", "norms_N0_max")):
        bound = b[q.replace("norm_", "")]
        rows.append([q, _fmt(m[key]), _fmt(bound), int(m[key] <= bound + 1e-9)])
    rows.append(["N0_plus_M_gap", _fmt(m["n_minus_m_gap"]), _fmt(1e-10), int(m["n_minus_m_gap"] <= 1e-10)])
    checks = table_bound_checks(table)
    for name, (ok, val, bound) in checks.items():
        rows.append([name, _fmt(val), _fmt(bound), int(ok)])
    man.add(_write_rows(out / "correctors.csv", CORRECTOR_COLUMNS, rows))
    status = EXIT_OK if all(int(r[3]) for r in rows) else EXIT_INVARIANT
    if args.levels:
        with man.phase("rates"):
            res = micro_rates(_levels(args.levels, DEFAULT_LEVELS["micro"]), cfg.build_model(),
                              families=("M", "R"), order=cfg.micro_order)
        man.add(res.write_csv(out / "micro_rates.csv"))
        print(res.summary())
        status = status if res.passed else EXIT_INVARIANT
    man.status = "ok" if status == EXIT_OK else "invariant-violation"
    print(f"wrote {len(man.outputs)} files to {out}")
    man.write(out)
    return status


def cmd_run(args):
    from .pipeline import build_scenario, initial_field, source_functions
    from .timeloop import run

    cfg = _load(args)
    out = _outdir(cfg)
    man = RunManifest("run", cfg.config_hash(), artifact_version())
    with man.phase("setup"):
        sc = build_scenario(cfg, args.jobs, not args.no_cache)
        u0 = initial_field(cfg, sc.space, sc.forms)
        source, values = source_functions(cfg, sc.forms)
    snapshots = []

    def callback(state):
        if args.vtk_every and state.m % args.vtk_every == 0:
            centers = sc.mesh.cell_origins + 0.5 * sc.mesh.h
            v = sc.space.evaluate(state.u, centers)
            data = {"E": v[:, :3], "H": v[:, -3:]}
            snapshots.append(sc.mesh.write_vtk(out / f"snapshot_{state.m:06d}.vtk", cell_data=data))

    with man.phase("time-loop"):
        traj = run(sc.forms, u0, cfg.tau, cfg.n_steps, source=source, source_values=values, store=False,
                   callback=callback if args.vtk_every else None)
    man.add(traj.write_csv(out / "trajectory.csv"))
    rep = traj.report
    rows = [[_fmt(t), _fmt(nm), _fmt(bd), _fmt(bd - nm), int(nm <= bd * (1 + 1e-12))]
            for t, nm, bd in zip(rep.times, rep.norms, rep.bounds)]
    man.add(_write_rows(out / "stability.csv", STABILITY_COLUMNS, rows), *snapshots)
    problems = []
    if not rep.complete:
        problems.append("stability bound could not be evaluated")
    elif not rep.ok:
        problems.append(f"stability bound violated at {len(rep.violations)} steps")
    lossless = not np.any(sc.table.R) and sc.table.kernel_vanishes and sc.table.source_vanishes and source is None
    drift = float(np.abs(traj.energy_drift).max())
    if lossless and drift > cfg.energy_tol:
        problems.append(f"energy drift {drift:.2e} exceeds {cfg.energy_tol:g}")
    print(f"{cfg.n_steps} steps, final norm {traj.norms_m[-1]:.6g}, bound {rep.bounds[-1]:.6g}"
          + (f", energy drift {drift:.2e}" if lossless else ""))
    for p in problems:
        print(f"INVARIANT VIOLATION: {p}")
    man.status = "invariant-violation" if problems else "ok"
    man.write(out)
    return EXIT_INVARIANT if problems else EXIT_OK


def cmd_converge(args):
    from . import studies

    cfg = _load(args)
    out = _outdir(cfg)
    which = args.which
    man = RunManifest(f"converge {which}", cfg.config_hash(), artifact_version())
    with man.phase(which):
        if which.startswith("micro-"):
            fam = which[-1]
            t_eval = tuple(f * cfg.T for f in (0.25, 0.5, 1.0))
            res = studies.micro_rates(_levels(args.levels, DEFAULT_LEVELS["micro"]), cfg.build_model(),
                                      tau=cfg.tau, t_eval=t_eval, families=(fam,), order=cfg.micro_order)
        elif which == "sobolev":
            res = studies.sobolev_rate(_levels(args.levels, DEFAULT_LEVELS["sobolev"]), cfg.build_model(),
                                       tau=cfg.tau, T=cfg.T, order=cfg.micro_order)
        elif which == "macro":
            res = studies.macro_rate(_levels(args.levels, DEFAULT_LEVELS["macro"]), tau=cfg.tau, T=cfg.T)
        else:
            res = studies.time_convergence()
    man.add(res.write_csv(out / f"rates_{which}.csv"))
    for r in res.records:
        errs = ", ".join(f"{e:.3e}" for e in r.errors)
        slope = "exact" if r.exact else f"slope {r.slope:.3f} (expected {r.expected:g}, slack {r.slack:g})"
        print(f"{r.study} {r.label}: errors [{errs}] {slope} -> {r.status}")
    for name, (ok, detail) in res.checks.items():
        print(f"{name}: {'pass' if ok else 'FAIL'} ({detail})")
    man.status = "ok" if res.passed else "invariant-violation"
    man.write(out)
    return EXIT_OK if res.passed else EXIT_INVARIANT


def cmd_verify(args):
    from .verify import run_suite

    cfg = _load(args)
    out = _outdir(cfg)
    man = RunManifest("verify", cfg.config_hash(), artifact_version())
    with man.phase("suite"):
        suite = run_suite(cfg, args.jobs, not args.no_cache)
    man.add(*suite.write(out))
    for c in suite.checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.detail}")
    man.status = "ok" if suite.passed else "invariant-violation"
    man.write(out)
    return EXIT_OK if suite.passed else EXIT_INVARIANT


def cmd_cache(args):
    from .tensors import TensorCache

    cfg = _load(args)
    cache = TensorCache(cfg.cache_dir)
    if args.action == "ls":
        entries = cache.entries()
        for p in entries:
            st = p.stat()
            print(f"{p.stem}  {st.st_size:>10d} bytes  {time.strftime('%Y-%m-%d %H:%M', time.localtime(st.st_mtime))}")
        print(f"{len(entries)} entries in {cache.dir}")
    else:
        print(f"removed {cache.clear()} entries from {cache.dir}")
    return EXIT_OK


# -- parser ---------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="scenario INI file (defaults apply when omitted)")
    common.add_argument("--levels", metavar="L1,L2,..", help="mesh levels for rate studies")
    common.add_argument("--out", metavar="DIR", help="output directory (overrides the config)")
    common.add_argument("--jobs", type=int, default=1, metavar="N", help="worker processes for micro solves")
    common.add_argument("--seed", type=int, metavar="S", help="seed for random test vectors and data")
    common.add_argument("--cache-dir", metavar="DIR", help="tensor cache directory (overrides the config)")
    common.add_argument("--no-cache", action="store_true", help="always recompute the tensor table")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="fehmm", description="Finite element HMM for dispersive Maxwell media.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("micro", parents=[common], help="cell problems and effective tensors").set_defaults(fn=cmd_micro)
    run_p = sub.add_parser("run", parents=[common], help="macro time integration")
    run_p.add_argument("--vtk-every", type=int, default=0, metavar="S", help="VTK snapshot every S steps")
    run_p.set_defaults(fn=cmd_run)
    conv = sub.add_parser("converge", parents=[common], help="convergence rate study")
    conv.add_argument("--which", choices=CONVERGE_CHOICES, required=True)
    conv.set_defaults(fn=cmd_converge)
    sub.add_parser("verify", parents=[common], help="invariant suite").set_defaults(fn=cmd_verify)
    cache = sub.add_parser("cache", parents=[common], help="inspect or clear the tensor cache")
    cache.add_argument("action", choices=("ls", "clear"))
    cache.set_defaults(fn=cmd_cache)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.jobs < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (NumericalError, DegenerateFitError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())

"""The eleven acceptance criteria: study, runtime budget and the records/checks that decide each one."""

import glob
import tempfile
from dataclasses import dataclass
from pathlib import Path

from . import studies
from .config import load_config

CONFIG_DIR = Path(__file__).resolve().parents[2] / "configs"
if not CONFIG_DIR.is_dir():  # installed without the source tree
    CONFIG_DIR = Path.cwd() / "configs"


@dataclass(frozen=True)
class Criterion:
    number: int
    title: str
    budget: float  # seconds
    run: object  # () -> StudyResult
    select: object = None  # StudyResult -> (passed, detail); defaults to the whole study


@dataclass
class Outcome:
    criterion: Criterion
    passed: bool
    within_budget: bool
    elapsed: float
    detail: str

    @property
    def ok(self):
        return self.passed and self.within_budget

    def line(self):
        c = self.criterion
        budget = "" if self.within_budget else f" OVER BUDGET ({c.budget:g} s)"
        return (f"criterion {c.number}: {'PASS' if self.ok else 'FAIL'} {c.title} "
                f"[{self.elapsed:.1f} s]{budget} {self.detail}")


def shipped_configs():
    return sorted(glob.glob(str(CONFIG_DIR / "*.ini")))


def _checks(names):
    def pick(res):
        sel = {k: v for k, v in res.checks.items() if k in names}
        return all(ok for ok, _ in sel.values()), "; ".join(f"{k}: {d}" for k, (_, d) in sel.items())

    return pick


def _group(key):
    def pick(res):
        sel = res.data[key]
        bad = [k for k, (ok, _) in sel.items() if not ok]
        detail = f"{len(sel) - len(bad)}/{len(sel)} checks on {len(res.data['timings'])} scenarios"
        return not bad, detail + (f", failing: {', '.join(bad)}" if bad else "")

    return pick


def _bounds():
    return studies.scenario_bounds(shipped_configs(), use_cache=False, cache_dir=tempfile.mkdtemp())


def _debye():
    cfg = load_config(CONFIG_DIR / "debye.ini")
    return studies.stability_study(cfg.replace(cache_dir=tempfile.mkdtemp()), use_cache=False)


CRITERIA = [
    Criterion(1, "constant-coefficient exactness", 5, studies.constant_exactness),
    Criterion(2, "two-phase laminate homogenization", 120, studies.laminate_homogenization),
    Criterion(3, "R micro rate", 180, lambda: studies.micro_rates(families=("R",))),
    Criterion(4, "G/J micro rate and linear growth", 300, lambda: studies.micro_rates(families=("G", "J"))),
    Criterion(5, "Sobolev contraction and bounded error growth", 60, studies.sobolev_growth),
    Criterion(6, "corrector bounds on shipped scenarios", 60, _bounds, _group("corrector")),
    Criterion(7, "effective tensor bounds on shipped scenarios", 30, _bounds, _group("tensor")),
    Criterion(8, "macro energy conservation and dissipation", 120, studies.energy_study),
    Criterion(9, "macro stability bound (Debye)", 300, _debye),
    Criterion(10, "semi-discrete macro rate", 600, studies.macro_rate),
    Criterion(11, "time discretization order", 180, studies.time_convergence),
]


def evaluate(criterion):
    res = criterion.run()
    if criterion.select is None:
        passed = res.passed
        detail = res.summary() if passed else " | ".join(res.failures())
    else:
        passed, detail = criterion.select(res)
    elapsed = res.elapsed
    return Outcome(criterion, bool(passed), elapsed <= criterion.budget, elapsed, detail)

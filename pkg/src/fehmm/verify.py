"""Invariant suite for one scenario: coefficients, cell problems, tensors, macro operators, time loop."""

import csv
import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import FEHMMError, ScenarioError
from .macro import QuadratureRule
from .mesh import build_macro_mesh
from .micro import CONTRACTION_SLACK, assemble_micro_forms, build_space
from .coefficients import check_coefficients
from .tensors import bound_sample_points, micro_checks, micro_tensors, table_bound_checks
from .timeloop import run

MIN_SOBOLEV_STEPS = 200
N_RANDOM = 100


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""

    def __post_init__(self):
        self.passed = bool(self.passed)
        self.detail = str(self.detail)


@dataclass
class SuiteResult:
    scenario: str
    checks: list

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def failed(self):
        return [c for c in self.checks if not c.passed]

    def to_json(self):
        return json.dumps({"scenario": self.scenario, "passed": self.passed,
                           "checks": [asdict(c) for c in self.checks]}, indent=2)

    def write(self, directory):
        json_path = directory / "verify.json"
        json_path.write_text(self.to_json() + "\n")
        csv_path = directory / "verify.csv"
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["check", "passed", "detail"])
            for c in self.checks:
                w.writerow([c.name, int(c.passed), c.detail])
        return [json_path, csv_path]


def quadrature_exactness(cells=(2, 2, 2), degree=3):
    """Macro 2-point Gauss rule integrates every monomial of degree <= 3 per axis over the unit cube."""
    rule = QuadratureRule(build_macro_mesh(cells))
    p, w = rule.flat_points, rule.flat_weights
    worst = 0.0
    for a in range(degree + 1):
        for b in range(degree + 1):
            for c in range(degree + 1):
                got = float(np.sum(w * p[:, 0] ** a * p[:, 1] ** b * p[:, 2] ** c))
                worst = max(worst, abs(got - 1.0 / ((a + 1) * (b + 1) * (c + 1))))
    return worst


def _coefficient_check(model, cfg):
    space = build_space(cfg.micro_cells, cfg.micro_order, model.n_components)
    y = bound_sample_points(space)
    x = np.full(3, 0.5)
    try:
        check_coefficients(model.M(x, y), model.R(x, y))
    except ScenarioError as exc:
        return CheckResult("coefficients_spd", False, str(exc))
    return CheckResult("coefficients_spd", True, f"{len(y)} samples")


def _micro_suite(model, cfg):
    out = []
    n_steps = max(cfg.n_steps, MIN_SOBOLEV_STEPS)
    times = cfg.tau * np.arange(n_steps + 1)
    x = np.full(3, 0.5)
    res = micro_tensors(model, x, cfg.micro_cells, cfg.micro_order, times, solver=cfg.micro_solver, check=False,
                        keep_correctors=True)
    for name, (ok, detail) in micro_checks(res).items():
        if name.startswith("contraction"):
            detail = f"{n_steps} steps, {detail}"
        out.append(CheckResult(f"micro.{name}", ok, detail))
    forms = assemble_micro_forms(build_space(cfg.micro_cells, cfg.micro_order, model.n_components), model, x,
                                 solver=cfg.micro_solver)
    worst = 0.0
    for j, w in enumerate(res.correctors.w_M):
        b = forms.load_M(j)
        r = forms.K_m @ w - b
        scale = max(float(np.linalg.norm(b)), 1e-300)
        worst = max(worst, float(np.linalg.norm(r)) / scale if np.any(b) else float(np.linalg.norm(r)))
    out.append(CheckResult("micro.galerkin_orthogonality", worst <= 1e-10, f"relative residual {worst:.2e}"))
    return out


def _macro_suite(sc, cfg):
    from .pipeline import initial_field, source_functions

    out = []
    forms = sc.forms
    rng = np.random.default_rng(cfg.seed)
    for name, (ok, val, bound) in table_bound_checks(sc.table).items():
        rel = ">=" if name.startswith("M_H") else "<="
        out.append(CheckResult(f"tensor.{name}", bool(ok), f"{val:.6g} {rel} {bound:.6g}"))
    A = forms.A
    a_scale = max(float(abs(A).max()), 1e-300) if A.nnz else 1.0
    defect = forms.skew_defect()
    U = rng.standard_normal((forms.space.ndof, N_RANDOM))
    quad = np.abs(np.einsum("ik,ik->k", U, A @ U)) / np.einsum("ik,ik->k", U, U)
    out.append(CheckResult("macro.A_skew", defect <= 1e-12 * a_scale and quad.max() <= 1e-12 * a_scale,
                           f"|A + A^T| {defect:.2e}, max |u.Au|/|u|^2 {quad.max():.2e} on {N_RANDOM} vectors"))
    lo = min(float(np.linalg.eigvalsh(Mu).min()) for Mu in sc.table.M)
    hi = max(float(np.linalg.eigvalsh(Mu).max()) for Mu in sc.table.M)
    ray = np.einsum("ik,ik->k", U, forms.M @ U) / np.einsum("ik,ik->k", U, forms.gram @ U)
    ok = ray.min() >= lo * (1 - 1e-10) and ray.max() <= hi * (1 + 1e-10)
    out.append(CheckResult("macro.mass_definite", bool(ok),
                           f"Rayleigh quotients in [{ray.min():.4g}, {ray.max():.4g}] within [{lo:.4g}, {hi:.4g}]"))
    err = quadrature_exactness(cfg.macro_cells)
    out.append(CheckResult("macro.quadrature_exactness", err <= 1e-14, f"max monomial error {err:.2e}"))
    u0 = initial_field(cfg, sc.space, forms)
    source, values = source_functions(cfg, forms)
    traj = run(forms, u0, cfg.tau, cfg.n_steps, source=source, source_values=values, store=False)
    rep = traj.report
    out.append(CheckResult("run.stability_bound", rep.ok and rep.complete,
                           f"{len(rep.violations)} violations over {cfg.n_steps} steps"))
    lossless = (not np.any(sc.table.R)) and sc.table.kernel_vanishes and sc.table.source_vanishes \
        and cfg.source == "zero"
    if lossless:
        drift = float(np.abs(traj.energy_drift).max())
        out.append(CheckResult("run.energy_conservation", drift <= cfg.energy_tol,
                               f"max relative drift {drift:.2e} <= {cfg.energy_tol:g}"))
    else:
        e = traj.energy
        inc = float(np.max(np.diff(e) - CONTRACTION_SLACK * e[:-1])) if len(e) > 1 else 0.0
        if cfg.source == "zero" and sc.table.kernel_vanishes and sc.table.source_vanishes:
            out.append(CheckResult("run.energy_dissipation", inc <= 0.0, f"max increase {max(inc, 0.0):.2e}"))
    return out


def run_suite(cfg, jobs=1, use_cache=True):
    """All invariant checks for ``cfg``; a failing coefficient check skips the dependent ones."""
    from .pipeline import build_scenario

    model = cfg.build_model()
    checks = [_coefficient_check(model, cfg)]
    if not checks[0].passed:
        checks.append(CheckResult("remaining_checks", False, "not run: coefficients are invalid"))
        return SuiteResult(cfg.name, checks)
    try:
        checks += _micro_suite(model, cfg)
        checks += _macro_suite(build_scenario(cfg, jobs, use_cache), cfg)
    except FEHMMError as exc:
        checks.append(CheckResult("suite_completed", False, f"{type(exc).__name__}: {exc}"))
    return SuiteResult(cfg.name, checks)

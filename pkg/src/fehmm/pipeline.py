"""From a ScenarioConfig to assembled macro forms, initial data and sources."""

import logging
from dataclasses import dataclass

import numpy as np

from .macro import QuadratureRule, assemble_macro_forms, build_nedelec_space
from .mesh import build_macro_mesh
from .oracles import ManufacturedMaxwell
from .tensors import TensorCache, build_tensor_table

log = logging.getLogger(__name__)


@dataclass
class Scenario:
    config: object
    model: object
    mesh: object
    space: object
    rule: object
    table: object
    forms: object
    cache_hit: bool


def tensor_table(cfg, rule, jobs=1, use_cache=True):
    """Effective tensors at the macro quadrature points, served from the cache when possible."""
    model = cfg.build_model()
    key = cfg.tensor_key()

    def builder():
        return build_tensor_table(model, rule.flat_points, cfg.micro_cells, cfg.micro_order, cfg.times,
                                  key=key, jobs=jobs, solver=cfg.micro_solver)

    if not use_cache:
        return builder(), False
    return TensorCache(cfg.cache_dir).get_or_build(key, builder)


def build_scenario(cfg, jobs=1, use_cache=True):
    model = cfg.build_model()
    mesh = build_macro_mesh(cfg.macro_cells)
    space = build_nedelec_space(mesh, cfg.n_e, cfg.nedelec_order)
    rule = QuadratureRule(mesh)
    table, hit = tensor_table(cfg, rule, jobs, use_cache)
    forms = assemble_macro_forms(space, rule, table)
    return Scenario(cfg, model, mesh, space, rule, table, forms, hit)


def _mode_field(n_e):
    """Smooth PEC-compatible field: E and every P block share one shape, H another."""

    def fn(p):
        e = ManufacturedMaxwell._e(p)
        h = ManufacturedMaxwell._h(p)
        return np.hstack([e] + [0.5 * e] * n_e + [h])

    return fn


def initial_field(cfg, space, forms):
    if cfg.initial == "zero":
        return np.zeros(space.ndof)
    if cfg.initial == "mode":
        return space.interpolate(_mode_field(cfg.n_e))
    u = np.random.default_rng(cfg.seed).standard_normal(space.ndof)
    return u / forms.m_norm(u)


def source_functions(cfg, forms):
    """(source, source_values) for the time loop; both None for a zero source."""
    if cfg.source == "zero":
        return None, None
    pts = forms.rule.flat_points
    shape = ManufacturedMaxwell._e(pts)
    n = forms.space.n
    t0, width = 0.25 * cfg.T, 0.1 * cfg.T

    def values(t):
        out = np.zeros((len(pts), n))
        out[:, :3] = cfg.source_amplitude * np.exp(-(((t - t0) / width) ** 2)) * shape
        return out

    return (lambda t: forms.test_against(values(t))), values

"""Scenario configuration: INI files (configparser) mapped onto a validated dataclass."""

import configparser
import json
from io import StringIO
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .coefficients import (ConstantModel, DebyeModel, LaminateModel, SmoothPeriodicModel, isotropic_constant,
                           make_profile, system_size)
from .errors import ConfigError
from .tensors import stable_hash

MODELS = ("constant", "laminate", "smooth-periodic", "debye")
INITIAL = ("zero", "mode", "random")
SOURCES = ("zero", "pulse")


def _triple(text, name):
    try:
        vals = [int(v) for v in str(text).replace(" ", "").split(",") if v]
    except ValueError as exc:
        raise ConfigError(f"{name}: expected integers, got {text!r}") from exc
    if len(vals) == 1:
        vals = vals * 3
    if len(vals) != 3:
        raise ConfigError(f"{name}: expected one or three integers, got {text!r}")
    return tuple(vals)


def _json(text, name):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{name}: invalid JSON ({exc.msg})") from exc


@dataclass
class ScenarioConfig:
    name: str = "scenario"
    model: str = "constant"
    n_e: int = 0
    delta: float = 1e-3
    model_params: dict = field(default_factory=dict)
    macro_cells: tuple = (4, 4, 4)
    nedelec_order: int = 1
    micro_cells: tuple = (8, 8, 8)
    micro_order: int = 1
    micro_solver: str = "cg"
    T: float = 1.0
    tau: float = 0.01
    initial: str = "mode"
    source: str = "zero"
    source_amplitude: float = 1.0
    bound_tol: float = 1e-9
    energy_tol: float = 1e-10
    cache_dir: str = ".fehmm-cache"
    out_dir: str = "out"
    seed: int = 0

    def __post_init__(self):
        self.macro_cells = tuple(int(c) for c in np.broadcast_to(self.macro_cells, (3,)))
        self.micro_cells = tuple(int(c) for c in np.broadcast_to(self.micro_cells, (3,)))
        self.validate()

    @property
    def n(self):
        return system_size(self.n_e)

    @property
    def n_steps(self):
        return int(round(self.T / self.tau))

    @property
    def times(self):
        return self.tau * np.arange(self.n_steps + 1)

    def validate(self):
        if self.model not in MODELS:
            raise ConfigError(f"scenario.model: unknown model {self.model!r} (choose from {', '.join(MODELS)})")
        if self.n_e < 0:
            raise ConfigError("scenario.n_e: must be non-negative")
        if self.model == "debye" and self.n_e != 1:
            raise ConfigError("scenario.n_e: the Debye model has exactly one polarisation field (n_e = 1)")
        if self.model == "smooth-periodic" and self.n_e != 0:
            raise ConfigError("scenario.n_e: the smooth-periodic model has n_e = 0")
        if self.delta <= 0:
            raise ConfigError("scenario.delta: must be positive")
        if self.nedelec_order != 1:
            raise ConfigError("macro.order: only order 1 is implemented")
        if self.micro_order not in (1, 2):
            raise ConfigError("micro.order: must be 1 or 2")
        if min(self.macro_cells) < 1:
            raise ConfigError("macro.cells: need at least one cell per axis")
        if min(self.micro_cells) < 2:
            raise ConfigError("micro.cells: need at least two cells per axis")
        if self.micro_solver not in ("cg", "direct"):
            raise ConfigError("micro.solver: must be 'cg' or 'direct'")
        if self.T <= 0 or self.tau <= 0:
            raise ConfigError("time.T and time.tau: must be positive")
        if abs(self.T / self.tau - round(self.T / self.tau)) > 1e-9 * (self.T / self.tau):
            raise ConfigError(f"time.tau: {self.tau} does not divide T = {self.T}")
        if self.initial not in INITIAL:
            raise ConfigError(f"data.initial: choose from {', '.join(INITIAL)}")
        if self.source not in SOURCES:
            raise ConfigError(f"data.source: choose from {', '.join(SOURCES)}")
        if self.bound_tol <= 0 or self.energy_tol <= 0:
            raise ConfigError("tolerances: must be positive")

    # -- derived objects ------------------------------------------------------

    def build_model(self):
        p = dict(self.model_params)
        try:
            if self.model == "constant":
                if "M" in p:
                    return ConstantModel(np.array(p["M"], float), np.array(p.get("R", np.zeros_like(p["M"])), float))
                return isotropic_constant(self.n_e, float(p.get("eps", 1.0)), float(p.get("mu", 1.0)),
                                          float(p.get("sigma", 0.0)), float(p.get("m_p", 1.0)))
            if self.model == "laminate":
                m = make_profile(p.get("m_profile", {"kind": "two-phase", "values": [2, 4], "fraction": 0.5}))
                r = make_profile(p["r_profile"]) if "r_profile" in p else None
                return LaminateModel(m, r, int(p.get("axis", 0)), self.n_e)
            if self.model == "smooth-periodic":
                keys = ("eps0", "mu0", "sigma0", "amp", "x_mod")
                return SmoothPeriodicModel(**{k: float(p[k]) for k in keys if k in p})
            kw = {k: make_profile(p[k]) for k in ("eps_inf", "d_eps", "sigma") if k in p}
            kw.update({k: float(p[k]) for k in ("tau_d", "mu") if k in p})
            if "axis" in p:
                kw["axis"] = int(p["axis"])
            return DebyeModel(**kw)
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"model parameters: {exc}") from exc

    def tensor_key(self):
        """Hash of everything the tensor table depends on."""
        return stable_hash({
            "model": self.build_model().describe(), "delta": self.delta, "micro_cells": self.micro_cells,
            "micro_order": self.micro_order, "micro_solver": self.micro_solver, "tau": self.tau,
            "n_times": self.n_steps + 1, "macro_cells": self.macro_cells, "nedelec_order": self.nedelec_order,
            "format": 1,
        })

    def config_hash(self):
        return stable_hash(self.to_dict())

    def to_dict(self):
        d = asdict(self)
        d["macro_cells"] = list(self.macro_cells)
        d["micro_cells"] = list(self.micro_cells)
        return d

    def replace(self, **changes):
        d = self.to_dict()
        d.update(changes)
        return ScenarioConfig(**d)

    # -- INI round trip ---------------------------------------------------------

    def to_ini(self):
        cp = configparser.ConfigParser()
        cp.optionxform = str
        cp["scenario"] = {"name": self.name, "model": self.model, "n_e": str(self.n_e), "delta": repr(self.delta)}
        cp["model"] = {k: json.dumps(v) for k, v in self.model_params.items()}
        cp["macro"] = {"cells": ",".join(map(str, self.macro_cells)), "order": str(self.nedelec_order)}
        cp["micro"] = {"cells": ",".join(map(str, self.micro_cells)), "order": str(self.micro_order),
                       "solver": self.micro_solver}
        cp["time"] = {"T": repr(self.T), "tau": repr(self.tau)}
        cp["data"] = {"initial": self.initial, "source": self.source, "amplitude": repr(self.source_amplitude)}
        cp["tolerances"] = {"bound": repr(self.bound_tol), "energy": repr(self.energy_tol)}
        cp["output"] = {"cache_dir": self.cache_dir, "out_dir": self.out_dir, "seed": str(self.seed)}
        buf = StringIO()
        cp.write(buf)
        return buf.getvalue()


_SCHEMA = {
    ("scenario", "name"): ("name", str), ("scenario", "model"): ("model", str),
    ("scenario", "n_e"): ("n_e", int), ("scenario", "delta"): ("delta", float),
    ("macro", "cells"): ("macro_cells", "triple"), ("macro", "order"): ("nedelec_order", int),
    ("micro", "cells"): ("micro_cells", "triple"), ("micro", "order"): ("micro_order", int),
    ("micro", "solver"): ("micro_solver", str),
    ("time", "t"): ("T", float), ("time", "tau"): ("tau", float),
    ("data", "initial"): ("initial", str), ("data", "source"): ("source", str),
    ("data", "amplitude"): ("source_amplitude", float),
    ("tolerances", "bound"): ("bound_tol", float), ("tolerances", "energy"): ("energy_tol", float),
    ("output", "cache_dir"): ("cache_dir", str), ("output", "out_dir"): ("out_dir", str),
    ("output", "seed"): ("seed", int),
}


def parse_config(text, source="<string>"):
    cp = configparser.ConfigParser()
    cp.optionxform = str  # model keys such as M and R are case sensitive
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    kwargs = {}
    known_sections = {s for s, _ in _SCHEMA} | {"model"}
    for section in cp.sections():
        if section not in known_sections:
            raise ConfigError(f"{source}: unknown section [{section}]")
        if section == "model":
            kwargs["model_params"] = {k: _json(v, f"model.{k}") for k, v in cp[section].items()}
            continue
        for key, value in cp[section].items():
            key = key.lower()
            if (section, key) not in _SCHEMA:
                raise ConfigError(f"{source}: unknown key {section}.{key}")
            attr, kind = _SCHEMA[(section, key)]
            try:
                kwargs[attr] = _triple(value, f"{section}.{key}") if kind == "triple" else kind(value)
            except ConfigError:
                raise
            except ValueError as exc:
                raise ConfigError(f"{section}.{key}: cannot parse {value!r}") from exc
    return ScenarioConfig(**kwargs)


def load_config(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(), str(path))


CONFIG_FIELDS = [f.name for f in fields(ScenarioConfig)]

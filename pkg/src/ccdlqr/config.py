"""Run configuration: JSON schema, per-plant defaults, and resolution into solver objects."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass

import jsonschema
import numpy as np

from .dynsys import PLANTS, make_plant
from .equilibrium import EquilibriumPartition
from .errors import CCDError, ConfigError
from .pipeline import AnalysisSetup
from .riccati import CostWeights

_NUM_ARRAY = {"type": "array", "items": {"type": "number"}}
_IDX_ARRAY = {"type": "array", "items": {"type": "integer", "minimum": 0}}
_MATRIX = {
    "oneOf": [
        {"type": "array", "items": _NUM_ARRAY, "minItems": 1},
        {"type": "object", "properties": {"scaled_identity": {"type": "number"}},
         "required": ["scaled_identity"], "additionalProperties": False},
        {"type": "object", "properties": {"diag": _NUM_ARRAY},
         "required": ["diag"], "additionalProperties": False},
    ]
}
_POS = {"type": "number", "exclusiveMinimum": 0}

SCHEMA = {
    "type": "object",
    "required": ["plant"],
    "additionalProperties": False,
    "properties": {
        "plant": {
            "type": "object",
            "required": ["name"],
            "additionalProperties": False,
            "properties": {
                "name": {"enum": sorted(PLANTS)},
                "params": {"type": "object", "additionalProperties": {"type": "number"}},
            },
        },
        "design": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"d0": _NUM_ARRAY, "lower": _NUM_ARRAY, "upper": _NUM_ARRAY},
        },
        "equilibrium": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "x_hat": _NUM_ARRAY,
                "u_hat": _NUM_ARRAY,
                "known_state_idx": _IDX_ARRAY,
                "unknown_state_idx": _IDX_ARRAY,
                "known_control_idx": _IDX_ARRAY,
                "unknown_control_idx": _IDX_ARRAY,
                "residual_row_idx": _IDX_ARRAY,
                "tol": _POS,
                "max_iter": {"type": "integer", "minimum": 1},
            },
        },
        "weights": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"Q": _MATRIX, "S": _MATRIX},
        },
        "simulation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dt": _POS,
                "n_t": {"type": "integer", "minimum": 1},
                "dx0": _NUM_ARRAY,
                "x_init": _NUM_ARRAY,
            },
        },
        "riccati": {"type": "object", "additionalProperties": False,
                    "properties": {"tol": _POS}},
        "grad_check": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "threshold": _POS,
                "rel_step": _POS,
                "samples": {"type": "integer", "minimum": 0},
            },
        },
        "optimizer": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "tol_kkt": _POS,
                "max_iter": {"type": "integer", "minimum": 1},
                "ctol": _POS,
                "linear_constraints": {
                    "type": "object",
                    "required": ["A", "b"],
                    "additionalProperties": False,
                    "properties": {"A": {"type": "array", "items": _NUM_ARRAY}, "b": _NUM_ARRAY},
                },
                "power_eps": {"type": ["number", "null"], "minimum": 0},
            },
        },
        "pareto": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "eps_list": {"type": "array", "items": {"type": "number", "minimum": 0}},
                "P_min": {"type": ["number", "null"]},
                "d_min": {"oneOf": [_NUM_ARRAY, {"type": "null"}]},
            },
        },
        "output_dir": {"type": "string"},
    },
}

_COMMON = {
    "equilibrium": {"tol": 1e-12, "max_iter": 50},
    "simulation": {"dt": 0.01, "n_t": 1000},
    "riccati": {"tol": 1e-10},
    "grad_check": {"rel_step": 1e-5, "samples": 0},
    "optimizer": {"tol_kkt": 1e-6, "max_iter": 50, "ctol": 1e-8},
    "output_dir": "out",
}

DEFAULTS = {
    "cartpole": {
        "plant": {"name": "cartpole", "params": {}},
        "design": {"d0": [1.0, 5.0, 2.0], "lower": [0.5, 2.5, 1.0], "upper": [2.0, 7.5, 2.0]},
        "equilibrium": {
            "x_hat": [0.0, 0.0, math.pi, 0.0],
            "u_hat": [0.0],
            "known_state_idx": [0, 1, 2, 3],
            "unknown_state_idx": [],
            "known_control_idx": [0],
            "unknown_control_idx": [],
            "residual_row_idx": [],
        },
        "weights": {"Q": {"scaled_identity": 0.1}, "S": {"scaled_identity": 1.0}},
        "simulation": {"x_init": [-1.0, 0.0, 2.0, 0.0]},
        "grad_check": {"threshold": 1e-6},
        "optimizer": {"linear_constraints": {"A": [[1.0, 1.0, 0.0]], "b": [3.5]},
                      "power_eps": None},
        "pareto": {"eps_list": [], "P_min": None, "d_min": None},
    },
    "quadrotor": {
        "plant": {"name": "quadrotor", "params": {}},
        "design": {"d0": [0.0, 0.0], "lower": [-0.5, -0.5], "upper": [0.8, 0.8]},
        "equilibrium": {
            "x_hat": [0.0] * 6,
            "u_hat": [],
            "known_state_idx": [0, 1, 2, 3, 4, 5],
            "unknown_state_idx": [],
            "known_control_idx": [],
            "unknown_control_idx": [0, 1],
            "residual_row_idx": [4, 5],
        },
        "weights": {"Q": {"scaled_identity": 1.0}, "S": {"scaled_identity": 0.01}},
        "simulation": {"dx0": [1.0, 1.0, 0.1, 0.5, 0.3, 0.05]},
        "grad_check": {"threshold": 1e-5},
        "optimizer": {"linear_constraints": {"A": [], "b": []}, "power_eps": 0.03},
        "pareto": {"eps_list": [0.005, 0.01, 0.02, 0.03], "P_min": None, "d_min": None},
    },
}


def _merge(base, override):
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def default_config(plant_name):
    if plant_name not in DEFAULTS:
        raise ConfigError(f"no defaults for plant {plant_name!r}")
    return _merge(_COMMON, DEFAULTS[plant_name])


def matrix_from_config(entry, n, name):
    """Nested list, ``{"scaled_identity": s}`` or ``{"diag": [...]}`` to an ``n x n`` array."""
    if isinstance(entry, dict):
        if "scaled_identity" in entry:
            return float(entry["scaled_identity"]) * np.eye(n)
        diag = np.asarray(entry["diag"], dtype=float)
        if diag.shape != (n,):
            raise ConfigError(f"{name} diagonal must have length {n}")
        return np.diag(diag)
    try:
        A = np.asarray(entry, dtype=float)
    except ValueError:
        raise ConfigError(f"{name} rows have unequal lengths") from None
    if A.shape != (n, n):
        raise ConfigError(f"{name} must be {n}x{n}, got shape {A.shape}")
    return A


@dataclass
class RunConfig:
    """A validated configuration with every default filled in."""

    raw: dict
    plant: object
    setup: AnalysisSetup
    d0: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    @property
    def output_dir(self):
        return self.raw["output_dir"]

    def resolved(self):
        """JSON-ready echo of the effective configuration."""
        return copy.deepcopy(self.raw)


def _vec(values, n, what):
    v = np.asarray(values, dtype=float).reshape(-1)
    if v.shape != (n,):
        raise ConfigError(f"{what} must have length {n}, got {v.size}")
    if not np.all(np.isfinite(v)):
        raise ConfigError(f"{what} must be finite")
    return v


def resolve_config(data):
    """Validate a config mapping against the schema and build the analysis objects.

    Raises
    ------
    ConfigError
        Schema violation or inconsistent sizes/indices.
    """
    try:
        jsonschema.validate(data, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config schema error at {where}: {exc.message}") from None
    raw = _merge(default_config(data["plant"]["name"]), data)
    # a weight matrix is replaced as a whole, never merged key by key with the default
    for key, entry in data.get("weights", {}).items():
        raw["weights"][key] = copy.deepcopy(entry)
    # an explicit dx0 wins over x_init; keep only the one actually used
    sim = raw["simulation"]
    if "dx0" in data.get("simulation", {}):
        sim.pop("x_init", None)
    elif "x_init" in data.get("simulation", {}):
        sim.pop("dx0", None)
    try:
        plant = make_plant(raw["plant"]["name"], **raw["plant"]["params"])
    except TypeError as exc:
        raise ConfigError(f"bad plant parameter: {exc}") from None
    except CCDError as exc:
        raise ConfigError(str(exc)) from None
    n_x, n_u, n_d = plant.n_x, plant.n_u, plant.n_d

    eqc = raw["equilibrium"]
    part = EquilibriumPartition(
        known_state_idx=eqc["known_state_idx"], unknown_state_idx=eqc["unknown_state_idx"],
        known_control_idx=eqc["known_control_idx"],
        unknown_control_idx=eqc["unknown_control_idx"],
        residual_row_idx=eqc["residual_row_idx"])
    part.validate(n_x, n_u)
    x_hat = _vec(eqc["x_hat"], len(part.known_state_idx), "equilibrium.x_hat")
    u_hat = _vec(eqc["u_hat"], len(part.known_control_idx), "equilibrium.u_hat")

    Q = matrix_from_config(raw["weights"]["Q"], n_x, "Q")
    S = matrix_from_config(raw["weights"]["S"], n_u, "S")
    weights = CostWeights(Q, S)

    if "dx0" in sim:
        dx0 = _vec(sim["dx0"], n_x, "simulation.dx0")
    else:
        if part.unknown_state_idx:
            raise ConfigError("x_init needs a fully known target state; give dx0 instead")
        x_tgt, _ = part.assemble(np.zeros(part.n_theta), x_hat, u_hat, n_x, n_u)
        dx0 = _vec(sim["x_init"], n_x, "simulation.x_init") - x_tgt

    des = raw["design"]
    d0 = _vec(des["d0"], n_d, "design.d0")
    lower = _vec(des["lower"], n_d, "design.lower")
    upper = _vec(des["upper"], n_d, "design.upper")
    if np.any(lower > upper):
        raise ConfigError("design.lower exceeds design.upper")
    if np.any(d0 < lower) or np.any(d0 > upper):
        raise ConfigError("design.d0 lies outside the bounds")

    lin = raw["optimizer"]["linear_constraints"]
    A = np.asarray(lin["A"], dtype=float).reshape(-1, n_d) if lin["A"] else np.zeros((0, n_d))
    if A.shape[0] != len(lin["b"]):
        raise ConfigError("linear_constraints: A and b have different row counts")

    eps_list = raw["pareto"]["eps_list"]
    if eps_list != sorted(eps_list):
        raise ConfigError("pareto.eps_list must be sorted ascending")

    setup = AnalysisSetup(plant=plant, weights=weights, x_hat=x_hat, u_hat=u_hat,
                                dx0=dx0, dt=float(sim["dt"]), n_t=int(sim["n_t"]),
                                eq_tol=float(eqc["tol"]), eq_max_iter=int(eqc["max_iter"]),
                                are_tol=float(raw["riccati"]["tol"]), partition=part)
    return RunConfig(raw=raw, plant=plant, setup=setup, d0=d0, lower=lower, upper=upper)


def load_config(path):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    return resolve_config(data)

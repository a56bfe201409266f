"""Run configuration: a TOML document with the sections below.

::

    [model]        type = "two_level_decay" | "driven_two_level" | "dopo"
                   gamma, omega                       (two-level models)
                   kappa, lam | epsilon, gamma1, gamma2, n1_max, n2_max   (dopo)
    [engine]       kind = "optimized" | "gardiner_zoller" | "doubled_hilbert"
                          | "mcd_pair" | "specialized_a"
                   nu = [re, im]                      (mcd_pair, default [1, 0])
                   opA = <operator>                   (specialized_a, default observable.A)
    [run]          trajectories, t_max, sample_every, dt (optional), seed, workers
    [observable]   A = <operator>
    [initial]      psi0 = <state>, B = <operator>
    [output]       path, format = "csv" | "json", normalized = true | false

Operators are named presets (``sigma``, ``sigma_dagger``, ``a1``, ``a1_dagger``,
``a2``, ``a2_dagger``, ``n1``, ``identity``) or paths to ``.npy`` matrices.
States are presets (``ground``, ``excited``, ``vacuum``, ``steady_state``,
``steady_mcwf``) or ``.npy`` files holding a vector or a density matrix.

``TWOTIME_SEED`` and ``TWOTIME_WORKERS`` override ``run.seed`` and
``run.workers``; nothing else is read from the environment.
"""

from __future__ import annotations

import copy
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .hilbert import Operator, identity
from .model import (DopoParams, LindbladModel, default_dt, dopo, dopo_modes, driven_two_level,
                    two_level_decay)
from .skew import ENGINES, EngineKind, MCDPair, SpecializedA

DEFAULTS = {
    "model": {"type": "two_level_decay", "gamma": 1.0},
    "engine": {"kind": "optimized"},
    "run": {"trajectories": 1000, "t_max": 5.0, "sample_every": 0.1, "seed": 0, "workers": 1},
    "observable": {"A": "sigma_dagger"},
    "initial": {"psi0": "excited", "B": "sigma"},
    "output": {"path": "correlation.csv", "format": "csv", "normalized": True},
}

_SECTIONS = set(DEFAULTS)


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in extra.items():
        if key not in _SECTIONS:
            raise ConfigError(f"unknown section [{key}]")
        if not isinstance(val, dict):
            raise ConfigError(f"[{key}] must be a table")
        out[key].update(val)
    return out


def parse_override(text: str) -> tuple[list[str], object]:
    """``section.key=value`` with a TOML-typed value (bare words become strings)."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} lacks '='")
    path, raw = text.split("=", 1)
    keys = path.strip().split(".")
    if len(keys) != 2 or keys[0] not in _SECTIONS:
        raise ConfigError(f"override path {path!r} must be section.key")
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return keys, value


def load_document(path=None, overrides=(), env=None) -> dict:
    doc: dict = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                doc = tomllib.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
    cfg = _merge(DEFAULTS, doc)
    env = os.environ if env is None else env
    for var, key in (("TWOTIME_SEED", "seed"), ("TWOTIME_WORKERS", "workers")):
        if env.get(var, "").strip():
            try:
                cfg["run"][key] = int(env[var])
            except ValueError as exc:
                raise ConfigError(f"{var} must be an integer") from exc
    for item in overrides:
        (section, key), value = parse_override(item)
        cfg[section][key] = value
    return cfg


@dataclass
class RunConfig:
    model: dict
    engine: dict
    run: dict
    observable: dict
    initial: dict
    output: dict
    base_dir: Path = Path(".")

    @classmethod
    def load(cls, path=None, overrides=(), env=None) -> "RunConfig":
        doc = load_document(path, overrides, env)
        base = Path(path).parent if path is not None else Path(".")
        cfg = cls(**doc, base_dir=base)
        cfg.validate()
        return cfg

    # validation ---------------------------------------------------------------

    def validate(self):
        run = self.run
        k = run.get("trajectories")
        if not isinstance(k, int) or isinstance(k, bool) or k < 1:
            raise ConfigError("run.trajectories must be an integer >= 1")
        seed = run.get("seed")
        if not isinstance(seed, int) or not 0 <= seed < 2 ** 64:
            raise ConfigError("run.seed must be an unsigned 64-bit integer")
        workers = run.get("workers")
        if not isinstance(workers, int) or workers < 1:
            raise ConfigError("run.workers must be an integer >= 1")
        t_max = _number(run, "t_max")
        every = _number(run, "sample_every")
        if t_max < 0:
            raise ConfigError("run.t_max must be non-negative")
        if not every > 0:
            raise ConfigError("run.sample_every must be positive")
        if "dt" in run:
            dt = _number(run, "dt")
            if not dt > 0:
                raise ConfigError("run.dt must be positive")
            ratio = every / dt
            if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio) or round(ratio) < 1:
                raise ConfigError("run.sample_every must be a positive multiple of run.dt")
        if self.output.get("format") not in ("csv", "json"):
            raise ConfigError("output.format must be 'csv' or 'json'")
        if not isinstance(self.output.get("normalized"), bool):
            raise ConfigError("output.normalized must be true or false")
        if self.engine.get("kind") not in ENGINES:
            raise ConfigError(f"engine.kind must be one of {sorted(ENGINES)}")
        if self.model.get("type") not in ("two_level_decay", "driven_two_level", "dopo"):
            raise ConfigError(f"unknown model.type {self.model.get('type')!r}")

    # builders -----------------------------------------------------------------

    def build_model(self) -> LindbladModel:
        p = self.model
        kind = p["type"]
        try:
            if kind == "two_level_decay":
                return two_level_decay(float(p.get("gamma", 1.0)))
            if kind == "driven_two_level":
                return driven_two_level(float(p.get("gamma", 1.0)), float(p.get("omega", 0.0)))
            return dopo(self.dopo_params())
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid [model]: {exc}") from exc

    def dopo_params(self) -> DopoParams:
        p = self.model
        common = dict(kappa=float(p.get("kappa", 1.0)), gamma1=float(p.get("gamma1", 1.0)),
                      gamma2=float(p.get("gamma2", 4.0)), n1_max=int(p.get("n1_max", 48)),
                      n2_max=int(p.get("n2_max", 16)))
        if "lam" in p and "epsilon" in p:
            raise ConfigError("give either model.lam or model.epsilon, not both")
        if "epsilon" in p:
            return DopoParams(epsilon=float(p["epsilon"]), **common)
        return DopoParams.from_pump_ratio(float(p.get("lam", 2.0)), **common)

    def times(self) -> np.ndarray:
        every = float(self.run["sample_every"])
        n = int(math.floor(float(self.run["t_max"]) / every + 1e-9))
        return every * np.arange(n + 1)

    def step(self, model: LindbladModel) -> float:
        """``run.dt`` if given, else the largest divisor of ``sample_every`` below the default step."""
        if "dt" in self.run:
            return float(self.run["dt"])
        every = float(self.run["sample_every"])
        return every / math.ceil(every / default_dt(model) - 1e-9)

    def operator(self, spec, model: LindbladModel) -> Operator:
        return resolve_operator(spec, model, self.model, self.base_dir)

    def build_engine(self, model: LindbladModel) -> EngineKind:
        kind = self.engine["kind"]
        if kind == "mcd_pair":
            nu = self.engine.get("nu", [1.0, 0.0])
            try:
                value = complex(nu[0], nu[1]) if isinstance(nu, list) else complex(nu)
                return MCDPair(value)
            except (TypeError, ValueError, IndexError) as exc:
                raise ConfigError(f"engine.nu: {exc}") from exc
        if kind == "specialized_a":
            spec = self.engine.get("opA", self.observable["A"])
            return SpecializedA(self.operator(spec, model))
        return ENGINES[kind]()


def _number(section: dict, key: str) -> float:
    val = section.get(key)
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"run.{key} must be a number")
    return float(val)


def _load_npy(spec: str, base_dir: Path) -> np.ndarray:
    path = Path(spec)
    if not path.is_absolute():
        path = base_dir / path
    try:
        return np.load(path)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc


def resolve_operator(spec, model: LindbladModel, model_cfg: dict, base_dir=Path(".")) -> Operator:
    if not isinstance(spec, str):
        raise ConfigError("operators are given by preset name or .npy path")
    if spec.endswith(".npy"):
        op = Operator(_load_npy(spec, base_dir))
        if op.dim != model.dim:
            raise ConfigError(f"{spec}: dimension {op.dim} does not match the model ({model.dim})")
        return op
    if spec == "identity":
        return identity(model.dim)
    if model_cfg["type"] == "dopo":
        a1, a2 = dopo_modes(_dopo_params(model_cfg))
        table = {"a1": a1, "a1_dagger": a1.dag(), "a2": a2, "a2_dagger": a2.dag(),
                 "n1": a1.dag() @ a1}
    else:
        # the decay channel itself, rate included, so that tr(A B rho) = gamma <e|rho|e>
        lower = model.channels[0]
        table = {"sigma": lower, "sigma_dagger": lower.dag()}
    if spec not in table:
        raise ConfigError(f"unknown operator preset {spec!r} for model {model_cfg['type']}")
    return table[spec]


def _dopo_params(model_cfg: dict) -> DopoParams:
    cfg = RunConfig(**_merge(DEFAULTS, {"model": model_cfg}))
    return cfg.dopo_params()


def resolve_initial(cfg: RunConfig, model: LindbladModel):
    """Initial-state object for :func:`twotime.ensemble.simulate` (or a density matrix)."""
    from .ensemble import Mixture, PureState, SampledStates
    from .hilbert import basis
    from .oracle import mcwf_steady_ensemble, steady_state

    spec = cfg.initial["psi0"]
    if not isinstance(spec, str):
        raise ConfigError("initial.psi0 must be a preset name or .npy path")
    two_level = cfg.model["type"] != "dopo"
    if spec in ("ground", "vacuum"):
        return PureState(basis(model.dim, 0))
    if spec == "excited":
        if not two_level:
            raise ConfigError("'excited' is defined for the two-level models only")
        return PureState(basis(2, 1))
    if spec == "steady_state":
        return Mixture.from_density(steady_state(model, seed=cfg.run["seed"]))
    if spec == "steady_mcwf":
        states, _ = mcwf_steady_ensemble(model, cfg.run["trajectories"], seed=cfg.run["seed"])
        return SampledStates(states)
    if spec.endswith(".npy"):
        arr = np.asarray(_load_npy(spec, cfg.base_dir), dtype=complex)
        if arr.shape == (model.dim,):
            return PureState(arr / np.linalg.norm(arr))
        if arr.shape == (model.dim, model.dim):
            return Mixture.from_density(arr)
        raise ConfigError(f"{spec}: shape {arr.shape} fits neither a state nor a density matrix")
    raise ConfigError(f"unknown initial state preset {spec!r}")


def density_of(initial) -> np.ndarray:
    """Dense density matrix of any initial-state wrapper."""
    from .ensemble import Mixture, PureState

    if isinstance(initial, PureState):
        return np.outer(initial.vector, initial.vector.conj())
    if isinstance(initial, Mixture):
        return (initial.vectors.T * initial.probs) @ initial.vectors.conj()
    rows = np.asarray(initial.rows)
    return rows.T @ rows.conj() / rows.shape[0]

"""
Experiment Configuration
Reads flat KEY=value experiment files, applies command-line overrides and
validates the resolved parameters against a per-subcommand schema.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple
import json
import logging
import math
import os

from dotenv import dotenv_values

from config import config
from workbench.errors import ConfigError
from workbench.lhv import MODEL_REGISTRY
from workbench.wave_presets import PRESETS

logger = logging.getLogger(__name__)

SEED_LIMIT = 2**128
MAX_QUADRATURE_PARTICLES = 3


@dataclass(frozen=True)
class Param:
    kind: str  # int, float, bool, str, ints, floats
    default: Any = None
    choices: Optional[Tuple[str, ...]] = None
    help: str = ""


COMMON_PARAMS: Dict[str, Param] = {
    "seed": Param("int", config.seed, help="run seed (Philox key)"),
    "threads": Param("int", config.threads, help="worker threads for block-parallel sampling"),
    "block_size": Param("int", config.block_size, help="draws per random-stream block"),
    "plots": Param("bool", False, help="write plotly HTML figures"),
    "dat": Param("bool", False, help="write space-separated .dat mirrors"),
    "hbar": Param("float", config.hbar, help="reduced Planck constant in run units"),
    "mass": Param("float", config.mass, help="particle mass in run units"),
}

SCHEMAS: Dict[str, Dict[str, Param]] = {
    "chsh-scan": {
        "theta_steps": Param("int", 360, help="theta grid size over [0, 2 pi)"),
    },
    "trials": {
        "model": Param("str", "singlet", ("singlet", "mixture"), help="correlation model"),
        "n": Param("int", 10000, help="number of trials"),
        "theta_a": Param("float", 0.0, help="polar angle of meter a"),
        "phi_a": Param("float", 0.0, help="azimuth of meter a"),
        "theta_b": Param("float", math.pi / 3.0, help="polar angle of meter b"),
        "phi_b": Param("float", 0.0, help="azimuth of meter b"),
    },
    "lhv-sim": {
        "model": Param("str", "sign", tuple(MODEL_REGISTRY), help="registered hidden-variable model"),
        "n": Param("int", 100000, help="hidden-variable draws per estimate"),
        "theta_steps": Param("int", 13, help="points of the correlation curve over [0, pi]"),
        "settings": Param("int", 20, help="random settings for the CHSH bound check"),
        "sigmas": Param("float", 5.0, help="standard errors allowed above 2"),
    },
    "dispersion-check": {
        "d": Param("ints", [2, 3, 4], help="dimensions of the trace-arithmetic gap table"),
        "eps": Param("floats", [0.1, 0.05, 0.025], help="decreasing regularization widths"),
        "ensemble": Param("str", "harmonic", ("free", "harmonic"), help="trajectory family"),
        "particles": Param("int", 2, help="systems in the ensemble"),
        "t": Param("float", 0.5, help="evaluation time"),
    },
    "bohm-evolve": {
        "preset": Param("str", "free-gaussian", tuple(PRESETS), help="named initial state"),
        "points": Param("int", None, help="lattice points per axis (preset default when unset)"),
        "dt": Param("float", None, help="time step (preset default when unset)"),
        "t_end": Param("float", None, help="final time (preset default when unset)"),
        "save_every": Param("int", 10, help="steps between saved frames"),
        "particles": Param("int", 200, help="trajectories sampled from |Psi_0|^2"),
        "probes": Param("int", 500, help="probe pairs for the factorization test"),
    },
}

SUBCOMMANDS = tuple(SCHEMAS)

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def normalize_key(key: str) -> str:
    return key.strip().lower().replace("-", "_")


def coerce(key: str, raw: Any, param: Param) -> Any:
    """Type a raw value (string from a file or already typed from a flag)."""
    if raw is None:
        return None
    try:
        if param.kind == "int":
            value = raw if isinstance(raw, int) else int(str(raw).strip())
        elif param.kind == "float":
            value = float(raw)
        elif param.kind == "bool":
            if isinstance(raw, bool):
                value = raw
            else:
                text = str(raw).strip().lower()
                if text not in _TRUE | _FALSE:
                    raise ValueError(f"expected true/false, got '{raw}'")
                value = text in _TRUE
        elif param.kind in ("ints", "floats"):
            cast = int if param.kind == "ints" else float
            items = raw if isinstance(raw, (list, tuple)) else [s for s in str(raw).split(",") if s.strip()]
            value = [cast(str(item).strip()) if isinstance(item, str) else cast(item) for item in items]
        else:
            value = str(raw).strip()
    except ValueError as exc:
        raise ConfigError(f"Invalid value for '{key}': {exc}", key=key)
    if param.choices is not None and value not in param.choices:
        raise ConfigError(f"Invalid value '{value}' for '{key}'; choose from {', '.join(param.choices)}", key=key)
    return value


def schema_for(subcommand: str) -> Dict[str, Param]:
    if subcommand not in SCHEMAS:
        raise ConfigError(f"Unknown subcommand '{subcommand}'", key="subcommand")
    return {**COMMON_PARAMS, **SCHEMAS[subcommand]}


def read_experiment_file(path: str, subcommand: Optional[str] = None) -> Dict[str, Any]:
    """
    Read parameter values from an experiment file or a previous run's manifest

    Args:
        path: KEY=value experiment file, or a manifest.json written by a run
        subcommand: Subcommand about to run; a manifest must have been written by it

    Returns:
        Dictionary of normalized keys to raw (file) or typed (manifest) values
    """
    if not Path(path).is_file():
        raise ConfigError(f"Experiment file not found: {path}", key="config")
    if Path(path).suffix.lower() == ".json":
        return _read_manifest(path, subcommand)
    return {normalize_key(k): v for k, v in dotenv_values(path).items()}


def _read_manifest(path: str, subcommand: Optional[str]) -> Dict[str, Any]:
    try:
        manifest = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"Manifest {path} is not valid JSON: {exc}", key="config")
    if not isinstance(manifest, dict) or not isinstance(manifest.get("params"), dict):
        raise ConfigError(f"Manifest {path} has no 'params' section", key="params")
    recorded = manifest.get("subcommand")
    if subcommand is not None and recorded != subcommand:
        raise ConfigError(f"Manifest {path} was written by '{recorded}', not '{subcommand}'", key="subcommand")
    # units from manifests written before hbar and mass became parameters
    values = {normalize_key(k): v for k, v in (manifest.get("units") or {}).items()}
    values.update({normalize_key(k): v for k, v in manifest["params"].items()})
    logger.info(f"Replaying {recorded} run from {path}")
    return values


@dataclass
class ExperimentConfig:
    """A subcommand with its fully resolved parameter map."""

    subcommand: str
    params: Dict[str, Any] = field(default_factory=dict)
    out_dir: str = config.out_dir

    @classmethod
    def resolve(
        cls,
        subcommand: str,
        file_values: Optional[Dict[str, Any]] = None,
        overrides: Optional[Dict[str, Any]] = None,
        out_dir: Optional[str] = None,
    ) -> "ExperimentConfig":
        """
        Defaults, then file values, then overrides (flags win). Unknown keys
        in either source are rejected.
        """
        schema = schema_for(subcommand)
        params = {key: param.default for key, param in schema.items()}
        for source in (file_values or {}, overrides or {}):
            for raw_key, raw in source.items():
                key = normalize_key(raw_key)
                if key not in schema:
                    raise ConfigError(f"Unknown key '{raw_key}' for subcommand '{subcommand}'", key=raw_key)
                if raw is None:
                    continue
                params[key] = coerce(key, raw, schema[key])
        cfg = cls(subcommand=subcommand, params=params, out_dir=out_dir or config.out_dir)

        validator = ConfigValidator()
        is_valid, warnings = validator.validate(cfg)
        for warning in warnings:
            logger.warning(warning)
        if not is_valid:
            validator.raise_first()
        return cfg

    def __getitem__(self, key: str) -> Any:
        return self.params[key]

    def to_manifest(self) -> Dict[str, Any]:
        return {"subcommand": self.subcommand, "params": dict(self.params)}


class ConfigValidator:
    """Validates resolved experiment parameters"""

    def __init__(self):
        self.errors: List[Tuple[str, str]] = []

    def _require(self, condition: bool, key: str, message: str) -> None:
        if not condition:
            self.errors.append((key, f"Invalid '{key}': {message}"))

    def validate(self, cfg: ExperimentConfig) -> Tuple[bool, List[str]]:
        """
        Check ranges and cross-parameter constraints

        Returns:
            Tuple of (is_valid, list_of_warnings); hard failures are listed
            first and also kept in self.errors with their keys
        """
        self.errors = []
        warnings: List[str] = []
        p = cfg.params

        # 1. Common execution parameters
        self._require(0 <= p["seed"] < SEED_LIMIT, "seed", "must lie in [0, 2^128)")
        self._require(p["threads"] >= 1, "threads", "must be at least 1")
        self._require(p["block_size"] >= 1, "block_size", "must be at least 1")
        self._require(p["hbar"] > 0, "hbar", "must be positive")
        self._require(p["mass"] > 0, "mass", "must be positive")
        cpus = os.cpu_count() or 1
        if p["threads"] > cpus:
            warnings.append(f"threads={p['threads']} exceeds the {cpus} available CPUs")

        # 2. Subcommand-specific checks
        checks = {
            "chsh-scan": self._check_chsh_scan,
            "trials": self._check_trials,
            "lhv-sim": self._check_lhv,
            "dispersion-check": self._check_dispersion,
            "bohm-evolve": self._check_bohm,
        }
        checks[cfg.subcommand](p, warnings)

        is_valid = not self.errors
        return is_valid, [message for _, message in self.errors] + warnings

    def raise_first(self) -> None:
        if self.errors:
            key, message = self.errors[0]
            raise ConfigError(message, key=key)

    def _check_chsh_scan(self, p: Dict[str, Any], warnings: List[str]) -> None:
        self._require(p["theta_steps"] >= 1, "theta_steps", "must be at least 1")
        if p["theta_steps"] >= 1 and p["theta_steps"] % 6:
            warnings.append("theta_steps is not a multiple of 6; theta = pi/3 is not on the grid")

    def _check_trials(self, p: Dict[str, Any], warnings: List[str]) -> None:
        self._require(p["n"] >= 1, "n", "must be at least 1")
        if p["n"] == 1:
            warnings.append("n=1 gives no standard error")

    def _check_lhv(self, p: Dict[str, Any], warnings: List[str]) -> None:
        self._require(p["n"] >= 2, "n", "must be at least 2")
        self._require(p["theta_steps"] >= 2, "theta_steps", "must be at least 2")
        self._require(p["settings"] >= 1, "settings", "must be at least 1")
        self._require(p["sigmas"] > 0, "sigmas", "must be positive")
        if 2 <= p["n"] < 1000:
            warnings.append(f"n={p['n']} gives standard errors above 0.03")

    def _check_dispersion(self, p: Dict[str, Any], warnings: List[str]) -> None:
        self._require(len(p["d"]) >= 1 and all(d >= 1 for d in p["d"]), "d", "needs positive dimensions")
        eps = p["eps"]
        decreasing = len(eps) >= 2 and all(e > 0 for e in eps) and all(a > b for a, b in zip(eps, eps[1:]))
        self._require(decreasing, "eps", "must be a strictly decreasing list of at least two positive widths")
        self._require(1 <= p["particles"] <= MAX_QUADRATURE_PARTICLES, "particles",
                      f"must lie between 1 and {MAX_QUADRATURE_PARTICLES}")
        self._require(p["t"] >= 0, "t", "must be non-negative")
        if decreasing and eps[0] > 0.5:
            warnings.append("eps above 0.5 makes the extrapolation poorly conditioned")

    def _check_bohm(self, p: Dict[str, Any], warnings: List[str]) -> None:
        if p["points"] is not None:
            self._require(p["points"] >= 16, "points", "must be at least 16")
        if p["dt"] is not None:
            self._require(p["dt"] > 0, "dt", "must be positive")
        if p["t_end"] is not None:
            self._require(p["t_end"] > 0, "t_end", "must be positive")
        self._require(p["save_every"] >= 1, "save_every", "must be at least 1")
        self._require(p["particles"] >= 1, "particles", "must be at least 1")
        self._require(p["probes"] >= 1, "probes", "must be at least 1")
        if p["particles"] > 20000:
            warnings.append(f"particles={p['particles']} makes trajectory integration slow")

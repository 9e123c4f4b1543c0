"""Run configuration: a single JSON document with a schema version."""
from __future__ import annotations

import copy
import json
from pathlib import Path
from typing import Any, Optional

SCHEMA_VERSION = 1

DEFAULTS: dict[str, Any] = {
    "schema_version": SCHEMA_VERSION,
    "seed": 0,
    "doublet": {"epsilon_meV": 800.0, "s_ueV": 42.0, "p": 0.0},
    "channel": {"theta_deg": 57.3, "phi_deg": 40.0},
    "scan": {"kind": "QWP", "start_deg": 0.0, "stop_deg": 175.0, "step_deg": 5.0},
    "spectrometer": {
        "center_energy": 800.0,
        "n_pixels": 1024,
        "dispersion": 10.0,
        "instrument_fwhm": 30.0,
        "shape": "Lorentzian",
        "line_fwhm": 20.0,
    },
    "noise": {"kind": "Poisson", "peak_counts": 1e4, "sigma_counts": 10.0, "background": 0.0},
    "fit": {"fit_p": False, "fix_p": 0.0, "shape": "Lorentzian", "centroid_method": "doublet"},
    "population": None,
    "cohort": "custom",
}

POPULATION_DEFAULTS: dict[str, Any] = {
    "n_dots": 20,
    "s_min_ueV": 5.0,
    "s_max_ueV": 250.0,
    "p": 0.0,
    "epsilon_spread_meV": 1.0,
}


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"config key {key!r}: {message}")
        self.key = key


def _merge(base: dict, override: dict, prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        path = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(path, "unknown key")
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _merge(base[key], value, path + ".")
        elif key == "population" and value is not None:
            out[key] = _merge(POPULATION_DEFAULTS, value, path + ".")
        else:
            out[key] = value
    return out


def resolve(raw: Optional[dict] = None) -> dict:
    """Merge ``raw`` over the defaults and validate it."""
    raw = raw or {}
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError("schema_version", f"unsupported version {version!r}")
    cfg = _merge(DEFAULTS, raw)
    validate(cfg)
    return cfg


def load(path: str | Path) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON: {exc}") from exc
    return resolve(raw)


def set_path(cfg: dict, dotted: str, value) -> None:
    """Apply a ``section.key=value`` override from the command line."""
    node = cfg
    parts = dotted.split(".")
    if parts[0] == "population":
        if cfg.get("population") is None:
            cfg["population"] = copy.deepcopy(POPULATION_DEFAULTS)
        if len(parts) == 1:
            cfg["population"] = None if value is None else _merge(POPULATION_DEFAULTS, value, "population.")
            return
    for part in parts[:-1]:
        if not isinstance(node.get(part), dict):
            raise ConfigError(dotted, "unknown key")
        node = node[part]
    if parts[-1] not in node:
        raise ConfigError(dotted, "unknown key")
    node[parts[-1]] = value


def validate(cfg: dict) -> None:
    p = cfg["doublet"]["p"]
    if not isinstance(p, (int, float)) or not -1 <= p <= 1:
        raise ConfigError("doublet.p", f"p must lie in [-1, 1], got {p!r}")
    if cfg["scan"]["kind"] not in ("QWP", "HWP"):
        raise ConfigError("scan.kind", "must be QWP or HWP")
    if cfg["scan"]["step_deg"] <= 0:
        raise ConfigError("scan.step_deg", "must be > 0")
    sp = cfg["spectrometer"]
    if sp["n_pixels"] < 16:
        raise ConfigError("spectrometer.n_pixels", "must be >= 16")
    for key in ("dispersion", "line_fwhm"):
        if not sp[key] > 0:
            raise ConfigError(f"spectrometer.{key}", "must be > 0")
    if sp["instrument_fwhm"] < 0:
        raise ConfigError("spectrometer.instrument_fwhm", "must be >= 0")
    if sp["shape"] not in ("Lorentzian", "Gaussian", "Voigt"):
        raise ConfigError("spectrometer.shape", "must be Lorentzian, Gaussian or Voigt")
    if cfg["noise"]["kind"] not in ("None", "Poisson", "GaussianAdditive"):
        raise ConfigError("noise.kind", "must be None, Poisson or GaussianAdditive")
    if cfg["noise"]["kind"] != "None" and not cfg["noise"]["peak_counts"] > 0:
        raise ConfigError("noise.peak_counts", "must be > 0")
    if cfg["fit"]["centroid_method"] not in ("auto", "single", "doublet"):
        raise ConfigError("fit.centroid_method", "must be auto, single or doublet")
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError("seed", "must be a non-negative integer")
    pop = cfg["population"]
    if pop is not None:
        if not isinstance(pop["n_dots"], int) or pop["n_dots"] < 1:
            raise ConfigError("population.n_dots", "must be a positive integer")
        if not 0 <= pop["s_min_ueV"] <= pop["s_max_ueV"]:
            raise ConfigError("population.s_min_ueV", "need 0 <= s_min <= s_max")
        if not -1 <= pop["p"] <= 1:
            raise ConfigError("population.p", "p must lie in [-1, 1]")

"""Run configuration: presets, JSON loading, validation and per-command overrides."""

from __future__ import annotations

import copy
import json
from pathlib import Path

from .couette import CouetteParams


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


_SAE_KEYS = {"n_bottleneck", "hidden", "lr", "lambda_r", "epochs", "tol", "patience",
             "activity_threshold", "random_state"}
_SPNN_KEYS = {"dt", "hidden", "lr", "lambda_d", "lambda_r", "epochs", "tol", "patience",
              "random_state"}
_UC_KEYS = {"dt", "hidden", "lr", "lambda_r", "epochs", "tol", "patience", "residual",
            "random_state"}
_DATA_KEYS = {
    "couette": {"generator"} | set(CouetteParams.__dataclass_fields__),
    "blocks": {"generator", "n_nodes", "n_snapshots", "dt", "layout", "modes", "noise", "seed"},
    "file": {"generator", "path", "layout", "n_nodes", "dt", "normalize"},
}
_TOP_KEYS = {"preset", "seed", "data", "split", "sae", "pod", "spnn", "uc"}

PRESETS: dict[str, dict] = {
    "couette": {
        "seed": 1,
        "data": {"generator": "couette", "N": 100, "H": 1.0, "K": 10_000, "We": 1.0, "Re": 0.1,
                 "eps": 0.9, "V": 1.0, "T": 1.0, "dt": 0.0067},
        "split": {"fraction": 0.8},
        "sae": {"n_bottleneck": 10, "hidden": [160, 160], "lr": 1e-4, "lambda_r": 1e-4,
                "epochs": 50_000, "tol": 1e-9, "patience": 1000, "activity_threshold": 0.01},
        "pod": {"d": None},
        "spnn": {"hidden": [24] * 5, "lr": 1e-5, "lambda_d": 1e3, "lambda_r": 1e-5,
                 "epochs": 100_000, "tol": None, "patience": 1000},
        "uc": {"hidden": [25] * 5, "lr": 1e-5, "lambda_r": 1e-5, "epochs": 100_000,
               "tol": None, "patience": 1000, "residual": False},
    },
    # Desk-scale stand-in for a three-block (position, velocity, stress) solid
    # mechanics dataset; the network settings are the full-scale ones.
    "tire-like": {
        "seed": 1,
        "data": {"generator": "blocks", "n_nodes": 50, "n_snapshots": 200, "dt": 0.0025,
                 "layout": "q:3,v:3,sigma:6", "modes": {"q": 4, "v": 3, "sigma": 2},
                 "noise": 0.0},
        "split": {"fraction": 0.8},
        "sae": {"lr": 1e-4, "lambda_r": 1e-2, "epochs": 50_000, "tol": 1e-9, "patience": 1000,
                "activity_threshold": 0.01,
                "blocks": {"q": {"n_bottleneck": 10, "hidden": [40, 40]},
                           "v": {"n_bottleneck": 10, "hidden": [40, 40]},
                           "sigma": {"n_bottleneck": 20, "hidden": [80, 80]}}},
        "pod": {"d": None},
        "spnn": {"hidden": [198] * 5, "lr": 1e-5, "lambda_d": 1e3, "lambda_r": 1e-4,
                 "epochs": 100_000, "tol": None, "patience": 1000},
        "uc": {"hidden": [45] * 5, "lr": 1e-5, "lambda_r": 1e-4, "epochs": 100_000,
               "tol": None, "patience": 1000, "residual": False},
    },
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _reject_unknown(section: str, given, allowed: set) -> None:
    extra = sorted(set(given) - allowed)
    if extra:
        raise ConfigError(f"unknown key(s) in '{section}': {', '.join(extra)}; "
                          f"allowed: {', '.join(sorted(allowed))}")


def validate(cfg: dict) -> dict:
    """Check keys and basic ranges; returns ``cfg`` unchanged."""
    _reject_unknown("config", cfg, _TOP_KEYS)
    data = cfg.get("data", {})
    gen = data.get("generator")
    if gen not in _DATA_KEYS:
        raise ConfigError(f"data.generator must be one of {sorted(_DATA_KEYS)}, got {gen!r}")
    _reject_unknown("data", data, _DATA_KEYS[gen])
    _reject_unknown("split", cfg.get("split", {}), {"fraction", "seed"})
    _reject_unknown("pod", cfg.get("pod", {}), {"d"})
    sae = cfg.get("sae", {})
    _reject_unknown("sae", sae, _SAE_KEYS | {"blocks"})
    for name, block in (sae.get("blocks") or {}).items():
        _reject_unknown(f"sae.blocks.{name}", block, _SAE_KEYS)
    _reject_unknown("spnn", cfg.get("spnn", {}), _SPNN_KEYS)
    _reject_unknown("uc", cfg.get("uc", {}), _UC_KEYS)

    frac = cfg.get("split", {}).get("fraction", 0.8)
    if not 0.0 < frac < 1.0:
        raise ConfigError(f"split.fraction must lie in (0, 1), got {frac}")
    for section in ("sae", "spnn", "uc"):
        body = cfg.get(section, {})
        for key in ("lr", "lambda_r", "lambda_d"):
            if key in body and not body[key] >= 0:
                raise ConfigError(f"{section}.{key} must be non-negative, got {body[key]}")
        if "epochs" in body and not (isinstance(body["epochs"], int) and body["epochs"] >= 0):
            raise ConfigError(f"{section}.epochs must be a non-negative integer")
    if not isinstance(cfg.get("seed", 0), int):
        raise ConfigError("seed must be an integer")
    return cfg


def resolve(preset: str | None = None, path=None, overrides: dict | None = None) -> dict:
    """Build a fully resolved config: preset, then JSON file, then overrides.

    Seeds left unset in a section inherit the top-level ``seed``.
    """
    cfg: dict = {}
    if path is not None:
        try:
            loaded = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
        preset = preset or loaded.get("preset")
        cfg = loaded
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        cfg = _merge(PRESETS[preset], cfg)
        cfg["preset"] = preset
    if overrides:
        cfg = _merge(cfg, overrides)
    if "data" not in cfg:
        raise ConfigError("no data section; pass --preset or a config file")
    cfg.setdefault("seed", 0)
    for section in ("split", "pod", "sae", "spnn", "uc"):
        cfg.setdefault(section, {})
    validate(cfg)

    seed = cfg["seed"]
    data = cfg["data"]
    if data["generator"] != "file":
        data.setdefault("seed", seed)
    cfg["split"].setdefault("seed", seed)
    cfg["split"].setdefault("fraction", 0.8)
    cfg["pod"].setdefault("d", None)
    for section in ("sae", "spnn", "uc"):
        cfg[section].setdefault("random_state", seed)
    return cfg


def command_overrides(epochs=None, lr=None, lambda_r=None, lambda_d=None,
                      sections=("sae", "spnn", "uc")) -> dict:
    """Translate CLI override flags into a nested override dict for ``sections``."""
    flat = {k: v for k, v in {"epochs": epochs, "lr": lr, "lambda_r": lambda_r,
                              "lambda_d": lambda_d}.items() if v is not None}
    out = {}
    for s in sections:
        body = dict(flat)
        if s != "spnn":
            body.pop("lambda_d", None)
        if body:
            out[s] = body
    return out


def couette_params(cfg: dict) -> CouetteParams:
    data = {k: v for k, v in cfg["data"].items() if k != "generator"}
    params = CouetteParams(**data)
    params.validate()
    return params


def save_config(cfg: dict, path) -> None:
    Path(path).write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")

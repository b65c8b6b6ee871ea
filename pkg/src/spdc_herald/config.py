"""Run configuration: JSON loading, schema validation and object construction."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .coupling import FocusConfig
from .detection import DetectorSpec, OpticalPath
from .dispersion import CrystalSpec, WaveTriple, make_waves, phase_mismatch, ppktp_type2, resolve_model
from .montecarlo import ArmConfig

DEFAULT_MODELS = {"pump": "ktp-y", "a": "ktp-z", "b": "ktp-y"}


class ConfigError(ValueError):
    """Invalid or incomplete configuration."""


def load_schema() -> dict:
    text = resources.files("spdc_herald").joinpath("config_schema.json").read_text()
    return json.loads(text)


def validate(cfg: dict) -> None:
    try:
        jsonschema.validate(cfg, load_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from None


def load_config(path: str | Path | None) -> dict:
    if path is None:
        cfg = {}
    else:
        try:
            cfg = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    validate(cfg)
    return cfg


def with_overrides(cfg: dict, xi_p=None, seed=None, out=None, fmt=None) -> dict:
    """Apply command-line overrides, then re-validate."""
    cfg = copy.deepcopy(cfg)
    if xi_p is not None:
        cfg.setdefault("focus", {})["xi_p"] = xi_p[0]
        cfg.setdefault("sweep", {})["xi_p"] = list(xi_p)
    if seed is not None:
        cfg["seed"] = seed
    if out is not None:
        cfg.setdefault("output", {})["path"] = out
    if fmt is not None:
        cfg.setdefault("output", {})["format"] = fmt
    validate(cfg)
    return cfg


def require(cfg: dict, *keys: str) -> None:
    missing = [k for k in keys if k not in cfg]
    if missing:
        raise ConfigError(f"config is missing required block(s): {', '.join(missing)}")


def build_crystal(cfg: dict) -> CrystalSpec:
    block = cfg.get("crystal", {})
    base = ppktp_type2()
    models = {**DEFAULT_MODELS, **block.get("models", {})}
    try:
        resolved = {k: resolve_model(v) for k, v in models.items()}
    except KeyError as exc:
        raise ConfigError(str(exc.args[0])) from None
    return CrystalSpec(
        length=block.get("length", base.length),
        poling_period=block.get("poling_period", base.poling_period),
        d_eff=block.get("d_eff", base.d_eff),
        pump=resolved["pump"],
        a=resolved["a"],
        b=resolved["b"],
    )


def build_waves(cfg: dict, crystal: CrystalSpec) -> WaveTriple:
    w = cfg.get("waves", {"lam_p": 780e-9})
    return make_waves(crystal, w["lam_p"], w.get("lam_a"), w.get("lam_b"))


def resolve_delta_k(cfg: dict, crystal: CrystalSpec, waves: WaveTriple) -> float:
    choice = cfg.get("delta_k", "bare")
    if isinstance(choice, (int, float)):
        return float(choice)
    pm = phase_mismatch(crystal, waves)
    return pm.bare if choice == "bare" else pm.residual


def build_focus(cfg: dict, crystal: CrystalSpec, waves: WaveTriple) -> FocusConfig | None:
    """Fixed focus from focal parameters or waists; None while xi_a awaits a peak search."""
    f = cfg.get("focus", {})
    if "waists" in f:
        w = f["waists"]
        return FocusConfig.from_waists(crystal.length, waves, w["pump"], w["a"], w.get("b"))
    if "xi_p" not in f or "xi_a" not in f:
        raise ConfigError("focus needs xi_p and xi_a, or waists")
    if isinstance(f["xi_a"], str):
        return None
    if "xi_b" in f:
        return FocusConfig(f["xi_p"], f["xi_a"], f["xi_b"])
    return FocusConfig.tied(f["xi_p"], f["xi_a"], waves)


def xi_a_grid(cfg: dict) -> list[float]:
    g = cfg.get("sweep", {}).get("xi_a_grid", {"min": 0.01, "max": 10.0, "n": 61})
    if isinstance(g, list):
        return [float(x) for x in g]
    if g["min"] > g["max"]:
        raise ConfigError("xi_a_grid min exceeds max")
    if g.get("spacing", "log") == "log":
        return [float(x) for x in np.geomspace(g["min"], g["max"], g["n"])]
    return [float(x) for x in np.linspace(g["min"], g["max"], g["n"])]


@dataclass(frozen=True)
class Arm:
    path: OpticalPath
    detector: DetectorSpec
    sim: ArmConfig


def build_arm(block: dict, default_label: str) -> Arm:
    eta_s = block.get("eta_s", 1.0)
    eta_d = block.get("eta_d", 1.0)
    wires = block.get("wires", 4)
    dark = block.get("dark_rate", 0.0)
    label = block.get("label", default_label)
    wire_eff = block.get("wire_efficiencies")
    return Arm(
        OpticalPath(eta_s, label),
        DetectorSpec(eta_d, dark, wires, label),
        ArmConfig(eta_s, eta_d, wires, tuple(wire_eff) if wire_eff else None, dark),
    )


def build_detection(cfg: dict) -> tuple[str, float, Arm, Arm]:
    d = cfg.get("detection", {})
    setup = d.get("setup", "dual")
    arm_a = build_arm(d.get("arm_a", {}), "a")
    arm_b = build_arm(d.get("arm_b", d.get("arm_a", {})), "b")
    arms = [arm_a] if setup == "single" else [arm_a, arm_b]
    for arm in arms:
        if arm.path.transmission * arm.detector.efficiency <= 0:
            raise ConfigError(f"arm {arm.path.label!r} has zero system efficiency")
    return setup, d.get("window", 1e-9), arm_a, arm_b

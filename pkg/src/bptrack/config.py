"""Structured run configuration: YAML sections mapped onto the dataclasses.

Sections are ``scenario``, ``model``, ``filter``, ``metric``, and ``mc``.
Every model and tracker parameter has a named key carrying its default, so a
config file only states what it changes. Dotted overrides like
``model.gamma=5`` come from CLI flags and win over the file.
"""

from __future__ import annotations

import numpy as np
import yaml

from .bp import BpOptions
from .filters import VARIANTS, FilterOptions
from .metrics import MetricParams
from .models import ModelParams
from .scenario import ScenarioConfig

__all__ = [
    "default_config",
    "load_config",
    "apply_overrides",
    "apply_profile",
    "build_model",
    "build_scenario",
    "build_filter_options",
    "build_metric_params",
]


def default_config() -> dict:
    """The full key set with the defaults used in the simulation study."""
    model = ModelParams()
    return {
        "scenario": {
            "n_objects": 10,
            "circle_radius": 75.0,
            "initial_speed": 10.0,
            "appear_steps": [3, 6, 9, 12, 15],
            "disappear_steps": [83, 86, 89, 92, 95],
            "k_steps": 100,
            "noisy_truth": True,
        },
        "model": {
            "ts": model.ts,
            "sigma_q": model.sigma_q,
            "q": model.q,
            "rho": model.rho,
            "sigma_r": model.sigma_r,
            "gamma": model.gamma,
            "p_survival": model.p_survival,
            "birth_rate": model.birth_rate,
            "birth_velocity_cov": model.birth_velocity_cov,
            "birth_extent_mean": 9.0,
            "birth_extent_dof": model.birth_extent_dof,
            "clutter_rate": model.clutter_rate,
            "region": [[-150.0, 150.0], [-150.0, 150.0]],
        },
        "filter": {
            "variant": "tpmb-all",
            "prune_existence": 1e-3,
            "end_time_prune": 1e-4,
            "particle_cap": 2000,
            "ppp_particle_cap": 10000,
            "resample_ess_frac": 0.5,
            "birth_particles": 2000,
            "scalar_ppp": True,
            "skip_update_below": 0.0,
            "estimate_threshold": 0.5,
            "iterations": 3,
            "censor_threshold": 1e-9,
            "reorder": True,
            "meas_driven_birth": True,
            "proposal_particles": 2000,
        },
        "metric": {
            "cutoff": 20.0,
            "order": 1.0,
            "switch_cost": 2.0,
        },
        "mc": {
            "runs": 20,
            "seeds": [0],
            "gamma_grid": [3.0, 5.0, 7.0],
            "variants": ["tpmb-all", "pmb"],
            "workers": 1,
            "fixed_truth": False,
            "smooth_draws": 100,
        },
    }


def load_config(path=None) -> dict:
    """Defaults merged with the YAML file at ``path`` (file keys win)."""
    cfg = default_config()
    if path is None:
        return cfg
    with open(path) as fh:
        loaded = yaml.safe_load(fh) or {}
    if not isinstance(loaded, dict):
        raise ValueError(f"config root must be a mapping, got "
                         f"{type(loaded).__name__}")
    for section, values in loaded.items():
        if section not in cfg:
            raise ValueError(f"unknown config section {section!r}")
        if not isinstance(values, dict):
            raise ValueError(f"section {section!r} must be a mapping")
        for key, value in values.items():
            if key not in cfg[section]:
                raise ValueError(f"unknown key {section}.{key}")
            cfg[section][key] = value
    return cfg


def apply_overrides(cfg: dict, overrides) -> dict:
    """Apply ``section.key=value`` strings on top of a config dict."""
    for item in overrides or ():
        if "=" not in item:
            raise ValueError(f"override {item!r} is not of the form "
                             f"section.key=value")
        dotted, raw = item.split("=", 1)
        parts = dotted.split(".")
        if len(parts) != 2:
            raise ValueError(f"override key {dotted!r} must be section.key")
        section, key = parts
        if section not in cfg or key not in cfg[section]:
            raise ValueError(f"unknown config key {dotted}")
        cfg[section][key] = yaml.safe_load(raw)
    return cfg


def build_model(cfg: dict) -> ModelParams:
    vals = dict(cfg["model"])
    mean = vals["birth_extent_mean"]
    if np.isscalar(mean):
        vals["birth_extent_mean"] = float(mean) * np.eye(2)
    else:
        vals["birth_extent_mean"] = np.asarray(mean, dtype=float)
    vals["region"] = tuple(tuple(float(v) for v in side)
                           for side in vals["region"])
    return ModelParams(**vals)


def build_scenario(cfg: dict) -> ScenarioConfig:
    sc = cfg["scenario"]
    mc = cfg["mc"]
    return ScenarioConfig(
        n_objects=int(sc["n_objects"]),
        circle_radius=float(sc["circle_radius"]),
        initial_speed=float(sc["initial_speed"]),
        appear_steps=tuple(sc["appear_steps"]),
        disappear_steps=tuple(sc["disappear_steps"]),
        k_steps=int(sc["k_steps"]),
        model=build_model(cfg),
        gamma_grid=tuple(mc["gamma_grid"]),
        seeds=tuple(mc["seeds"]),
        runs=int(mc["runs"]),
        noisy_truth=bool(sc["noisy_truth"]),
    )


def build_filter_options(cfg: dict, variant: str | None = None) -> FilterOptions:
    fc = cfg["filter"]
    chosen = variant if variant is not None else fc["variant"]
    if chosen not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    bp = BpOptions(
        iterations=int(fc["iterations"]),
        censor_threshold=float(fc["censor_threshold"]),
        reorder=bool(fc["reorder"]),
        meas_driven_birth=bool(fc["meas_driven_birth"]),
        proposal_particles=int(fc["proposal_particles"]),
    )
    return FilterOptions(
        variant=chosen,
        prune_existence=float(fc["prune_existence"]),
        end_time_prune=float(fc["end_time_prune"]),
        particle_cap=int(fc["particle_cap"]),
        ppp_particle_cap=int(fc["ppp_particle_cap"]),
        resample_ess_frac=float(fc["resample_ess_frac"]),
        birth_particles=int(fc["birth_particles"]),
        scalar_ppp=bool(fc["scalar_ppp"]),
        skip_update_below=float(fc["skip_update_below"]),
        estimate_threshold=float(fc["estimate_threshold"]),
        bp=bp,
    )


def build_metric_params(cfg: dict) -> MetricParams:
    mt = cfg["metric"]
    return MetricParams(cutoff=float(mt["cutoff"]), order=float(mt["order"]),
                        switch_cost=float(mt["switch_cost"]))


def apply_profile(cfg: dict, profile: str | None) -> dict:
    """Preset scales: ``desk`` is the full study, ``smoke`` a CI-sized one."""
    if profile is None:
        return cfg
    if profile == "desk":
        cfg["mc"]["runs"] = 20
        return cfg
    if profile == "smoke":
        cfg["scenario"].update({
            "n_objects": 2,
            "appear_steps": [3],
            "disappear_steps": [25],
            "k_steps": 30,
        })
        cfg["mc"]["runs"] = 2
        return cfg
    raise ValueError(f"unknown profile {profile!r}")


def config_to_yaml(cfg: dict) -> str:
    return yaml.safe_dump(cfg, sort_keys=True)

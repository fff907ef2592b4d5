"""Run configuration: layered resolution (file < KFDIFF_* environment
overrides < command-line flags), one section per CLI command."""

from __future__ import annotations

import copy
import json
import os

from .motion_data import ConfigError

ENV_PREFIX = "KFDIFF_"

DEFAULTS: dict = {
    "corpus": {"size": 500, "n_max": 64, "seed": 0, "noise_scale": 0.01},
    "train": {"T": 100, "steps": 2000, "batch": 32, "lr": 1e-4, "d": 64,
              "layers": 4, "heads": 4, "ff_width": 128, "dma_blocks": 8,
              "keyframe_rate": 0.05, "dropout_rate": 0.1,
              "lambda_phy": 1.0, "lambda_vel": 1.0, "lambda_foot": 1.0,
              "seed": 0, "conditioning": "keyframe",
              "variance_mode": "posterior"},
    "sample": {"r": 100.0, "s": 2.5, "l": 4, "m": 3, "grad_scale": 1.0,
               "tg_step_window": None, "strategy": "diffkfc",
               "num_samples": 1, "seed": 0, "length": None},
    "eval": {"trials": 50, "pair_count": 20, "seed": 0, "rate": 0.05,
             "diversity_samples": 8},
}


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def load_config(path: str | None = None,
                environ: dict | None = None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            with open(path) as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        for section, values in loaded.items():
            if section not in cfg:
                raise ConfigError(f"unknown config section {section!r}")
            if not isinstance(values, dict):
                raise ConfigError(f"section {section!r} must be an object")
            for key, val in values.items():
                if key not in cfg[section]:
                    raise ConfigError(
                        f"unknown key {key!r} in section {section!r}")
                cfg[section][key] = val
    env = os.environ if environ is None else environ
    for name, raw in env.items():
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX):].lower()
        section, _, key = rest.partition("_")
        if section not in cfg:
            raise ConfigError(f"env override {name}: unknown section")
        # keys may themselves contain underscores; try longest match
        matched = None
        for cand in cfg[section]:
            if cand.lower() == key:
                matched = cand
                break
        if matched is None:
            # retry treating the whole rest as section_key split points
            for cand_section in cfg:
                prefix = cand_section + "_"
                if rest.startswith(prefix):
                    tail = rest[len(prefix):]
                    for cand in cfg[cand_section]:
                        if cand.lower() == tail:
                            section, matched = cand_section, cand
                            break
                if matched:
                    break
        if matched is None:
            raise ConfigError(f"env override {name}: unknown key")
        cfg[section][matched] = _parse_value(raw)
    return cfg

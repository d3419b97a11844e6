"""Experiment configuration: INI-style files, named presets, hashing.

The file format is flat ``key = value`` pairs under fixed sections.  Any
key or section outside the schema is rejected outright, so a misspelled
hyperparameter fails loudly instead of silently training with a default.
Floats are written with ``repr`` so a saved configuration reloads to
bit-identical values.
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, fields, replace

from .errors import ConfigError
from .networks import NetworkSpec
from .problems import MFGProblem, make_analytic_gaussian, make_traffic_lwr
from .training import OptimizerSettings, TrainConfig


@dataclass(frozen=True)
class ExperimentConfig:
    # [problem]
    problem_kind: str = "analytic"          # analytic | traffic
    d: int = 1
    nu: float = 1.0
    beta: float = 1.0
    gamma: float = 0.0
    rho0_amplitude: float = -0.6
    rho0_offset: float = 0.2
    # [networks]
    hidden_width: int = 100
    hidden_layers: int = 3
    phi_activation: str = "softplus"
    rho_activation: str = "tanh"
    skip_weight: float = 0.5
    # [train]
    mode: str = "mfdgm"                     # mfdgm | dgm_mfg
    iterations: int = 10000
    batch_interior: int = 256
    batch_condition: int = 256
    seed: int = 0
    record_every: int = 100
    optimizer: str = "adam"
    phi_lr: float = 1e-4
    rho_lr: float = 1e-4
    weight_decay: float = 1e-3
    # [evaluation]
    grid_nt: int = 100
    grid_nx: int = 100
    mc_points: int = 10000
    # [compare]
    compare_seeds: tuple = (0, 1, 2)
    baseline_lr: float = 1e-3
    baseline_weight_decay: float = 1e-3
    # [output]
    checkpoint_every: int = 0               # 0 = final checkpoint only
    preset: str = ""


def _parse_seeds(text: str) -> tuple:
    try:
        return tuple(int(part) for part in text.split(",") if part.strip() != "")
    except ValueError as err:
        raise ConfigError(f"cannot parse seed list {text!r}") from err


def _format_seeds(seeds) -> str:
    return ",".join(str(s) for s in seeds)


# (section, key) -> (field name, parse, format)
_str = (str, str)
_int = (int, str)
_float = (float, repr)
SCHEMA = {
    "problem": {
        "kind": ("problem_kind", *_str),
        "d": ("d", *_int),
        "nu": ("nu", *_float),
        "beta": ("beta", *_float),
        "gamma": ("gamma", *_float),
        "rho0_amplitude": ("rho0_amplitude", *_float),
        "rho0_offset": ("rho0_offset", *_float),
    },
    "networks": {
        "hidden_width": ("hidden_width", *_int),
        "hidden_layers": ("hidden_layers", *_int),
        "phi_activation": ("phi_activation", *_str),
        "rho_activation": ("rho_activation", *_str),
        "skip_weight": ("skip_weight", *_float),
    },
    "train": {
        "mode": ("mode", *_str),
        "iterations": ("iterations", *_int),
        "batch_interior": ("batch_interior", *_int),
        "batch_condition": ("batch_condition", *_int),
        "seed": ("seed", *_int),
        "record_every": ("record_every", *_int),
        "optimizer": ("optimizer", *_str),
        "phi_lr": ("phi_lr", *_float),
        "rho_lr": ("rho_lr", *_float),
        "weight_decay": ("weight_decay", *_float),
    },
    "evaluation": {
        "grid_nt": ("grid_nt", *_int),
        "grid_nx": ("grid_nx", *_int),
        "mc_points": ("mc_points", *_int),
    },
    "compare": {
        "seeds": ("compare_seeds", _parse_seeds, _format_seeds),
        "baseline_lr": ("baseline_lr", *_float),
        "baseline_weight_decay": ("baseline_weight_decay", *_float),
    },
    "output": {
        "checkpoint_every": ("checkpoint_every", *_int),
        "preset": ("preset", *_str),
    },
}


def load_config_text(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Parse INI text on top of ``base`` (or the defaults); unknown sections
    or keys raise ConfigError."""
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as err:
        raise ConfigError(f"malformed config: {err}") from err
    values = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown config key '{key}' in section [{section}]")
            field_name, parse, _fmt = SCHEMA[section][key]
            try:
                values[field_name] = parse(raw)
            except (TypeError, ValueError) as err:
                raise ConfigError(
                    f"bad value {raw!r} for {section}.{key}: {err}") from err
    base = base if base is not None else ExperimentConfig()
    return replace(base, **values)


def load_config(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as handle:
        return load_config_text(handle.read(), base)


def config_to_text(config: ExperimentConfig) -> str:
    out = io.StringIO()
    for section, keys in SCHEMA.items():
        out.write(f"[{section}]\n")
        for key, (field_name, _parse, fmt) in keys.items():
            out.write(f"{key} = {fmt(getattr(config, field_name))}\n")
        out.write("\n")
    return out.getvalue()


def save_config(config: ExperimentConfig, path):
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(config_to_text(config))


# excluded from the hash: bookkeeping fields, plus the iteration budget so
# a checkpoint taken at iteration k can legitimately resume a longer run
_HASH_EXCLUDED = ("preset", "checkpoint_every", "iterations")


def config_hash(config: ExperimentConfig) -> str:
    lines = []
    for section, keys in sorted(SCHEMA.items()):
        for key, (field_name, _parse, fmt) in sorted(keys.items()):
            if field_name in _HASH_EXCLUDED:
                continue
            lines.append(f"{section}.{key}={fmt(getattr(config, field_name))}")
    return hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()


def validate_config(config: ExperimentConfig):
    if config.problem_kind not in ("analytic", "traffic"):
        raise ConfigError(f"problem kind must be 'analytic' or 'traffic', got {config.problem_kind!r}")
    for name in ("iterations", "batch_interior", "batch_condition", "record_every",
                 "hidden_width", "hidden_layers", "grid_nt", "grid_nx", "mc_points"):
        if getattr(config, name) < 1:
            raise ConfigError(f"{name} must be >= 1")
    if config.mode not in ("mfdgm", "dgm_mfg"):
        raise ConfigError(f"mode must be 'mfdgm' or 'dgm_mfg', got {config.mode!r}")


def build_problem(config: ExperimentConfig) -> MFGProblem:
    validate_config(config)
    if config.problem_kind == "analytic":
        return make_analytic_gaussian(config.d, config.nu, config.beta, config.gamma)
    return make_traffic_lwr(config.nu, config.rho0_amplitude, config.rho0_offset)


def build_train_config(config: ExperimentConfig, problem: MFGProblem,
                       mode=None, optimizer=None, phi_lr=None, rho_lr=None,
                       weight_decay=None, seed=None) -> TrainConfig:
    """TrainConfig for this experiment; keyword overrides cover the
    comparison runs that flip mode and optimizer on one base config."""
    mode = mode if mode is not None else config.mode
    optimizer = optimizer if optimizer is not None else config.optimizer
    weight_decay = weight_decay if weight_decay is not None else config.weight_decay
    spec = lambda act: NetworkSpec(
        input_dim=1 + problem.d, hidden_width=config.hidden_width,
        hidden_layers=config.hidden_layers, activation=act,
        skip_weight=config.skip_weight)
    return TrainConfig(
        mode=mode, iterations=config.iterations,
        batch_interior=config.batch_interior,
        batch_condition=config.batch_condition,
        seed=seed if seed is not None else config.seed,
        phi_network=spec(config.phi_activation),
        rho_network=spec(config.rho_activation),
        phi_opt=OptimizerSettings(kind=optimizer,
                                  lr=phi_lr if phi_lr is not None else config.phi_lr,
                                  weight_decay=weight_decay),
        rho_opt=OptimizerSettings(kind=optimizer,
                                  lr=rho_lr if rho_lr is not None else config.rho_lr,
                                  weight_decay=weight_decay),
        record_every=config.record_every,
        eval_grid_nt=config.grid_nt, eval_grid_nx=config.grid_nx,
        eval_mc_points=config.mc_points)


# Named experiment presets.  test1/test2 are the one-dimensional baseline
# and its single-hidden-layer variant (sweep hidden_width over
# 2/5/10/20/50 for the width study); test3/test4 are the high-dimension
# loss and error studies; compare pits the alternating scheme against the
# summed-loss SGD baseline on a shared seed set; traffic0/traffic05 are
# the deterministic and viscous road-traffic runs.
PRESETS = {
    "test1": dict(preset="test1"),
    "test2": dict(preset="test2", hidden_layers=1, hidden_width=50),
    "test3": dict(preset="test3", d=50, batch_interior=512, batch_condition=512,
                  iterations=50000),
    "test4": dict(preset="test4", d=50, hidden_layers=1, hidden_width=256,
                  batch_interior=1024, batch_condition=1024, iterations=50000),
    "compare": dict(preset="compare", batch_interior=50, batch_condition=50,
                    iterations=5000),
    "traffic0": dict(preset="traffic0", problem_kind="traffic", nu=0.0,
                     hidden_layers=1, hidden_width=50,
                     phi_activation="softmax", rho_activation="relu",
                     phi_lr=4e-4, rho_lr=5e-4, weight_decay=1e-4,
                     batch_interior=100, batch_condition=100),
    "traffic05": dict(preset="traffic05", problem_kind="traffic", nu=0.5,
                      hidden_layers=1, hidden_width=50,
                      phi_activation="softmax", rho_activation="relu",
                      phi_lr=4e-4, rho_lr=5e-4, weight_decay=1e-4,
                      batch_interior=100, batch_condition=100),
}


def preset_config(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}")
    return replace(ExperimentConfig(), **PRESETS[name])

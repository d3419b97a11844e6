"""Checkpointing: everything needed to continue a run bit-exactly.

A checkpoint is one JSON file holding both network specs and parameter
vectors, both optimizer states, the sampler state, the iteration index,
the metrics recorded so far and a hash of the experiment configuration.
Floats are serialized as shortest round-trip decimals, which reload to
bit-identical doubles, so a resumed run is indistinguishable from an
uninterrupted one.
"""

from __future__ import annotations

import dataclasses
import json
import os
import tempfile

from .errors import CheckpointError
from .networks import NetworkParams, NetworkSpec
from .sampling import restore_rng
from .training import MetricsRecord, OptimizerSettings, OptimizerState, TrainerState

FORMAT_VERSION = 1


def _spec_to_dict(spec: NetworkSpec) -> dict:
    return dataclasses.asdict(spec)


def _opt_to_dict(state: OptimizerState) -> dict:
    return {
        "settings": dataclasses.asdict(state.settings),
        "m": state.m.tolist(),
        "v": state.v.tolist(),
        "step_count": state.step_count,
    }


def _opt_from_dict(data: dict) -> OptimizerState:
    import numpy as np
    return OptimizerState(
        settings=OptimizerSettings(**data["settings"]),
        m=np.asarray(data["m"], dtype=np.float64),
        v=np.asarray(data["v"], dtype=np.float64),
        step_count=int(data["step_count"]),
    )


def atomic_write_text(path, text: str):
    """Write via a sibling temp file and rename, so readers never see a
    half-written file."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp_path = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


def save_checkpoint(path, state: TrainerState, phi_spec: NetworkSpec,
                    rho_spec: NetworkSpec, config_hash: str):
    from .sampling import rng_state
    payload = {
        "format_version": FORMAT_VERSION,
        "config_hash": config_hash,
        "iteration": state.iteration,
        "phi_spec": _spec_to_dict(phi_spec),
        "rho_spec": _spec_to_dict(rho_spec),
        "phi_params": state.phi_params.flat.tolist(),
        "rho_params": state.rho_params.flat.tolist(),
        "phi_opt": _opt_to_dict(state.phi_opt),
        "rho_opt": _opt_to_dict(state.rho_opt),
        "rng": rng_state(state.rng),
        "metrics": [dataclasses.asdict(m) for m in state.metrics],
    }
    atomic_write_text(path, json.dumps(payload))


def load_checkpoint(path, expected_config_hash: str | None = None) -> dict:
    """Load and validate a checkpoint; returns the payload with specs and
    a reconstructed TrainerState under 'state'."""
    try:
        with open(path, "r", encoding="utf-8") as handle:
            payload = json.load(handle)
    except (OSError, json.JSONDecodeError) as err:
        raise CheckpointError(f"cannot read checkpoint {path}: {err}") from err
    version = payload.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format version {version!r} is not supported "
            f"(expected {FORMAT_VERSION})")
    if expected_config_hash is not None and payload["config_hash"] != expected_config_hash:
        raise CheckpointError(
            "checkpoint was produced by a different configuration "
            f"(hash {payload['config_hash'][:12]}.. != {expected_config_hash[:12]}..)")
    try:
        phi_spec = NetworkSpec(**payload["phi_spec"])
        rho_spec = NetworkSpec(**payload["rho_spec"])
        state = TrainerState(
            phi_params=NetworkParams.from_flat(payload["phi_params"]),
            rho_params=NetworkParams.from_flat(payload["rho_params"]),
            phi_opt=_opt_from_dict(payload["phi_opt"]),
            rho_opt=_opt_from_dict(payload["rho_opt"]),
            rng=restore_rng(payload["rng"]),
            iteration=int(payload["iteration"]),
            metrics=[MetricsRecord(**m) for m in payload["metrics"]],
        )
    except (KeyError, TypeError, ValueError) as err:
        raise CheckpointError(f"corrupt checkpoint {path}: {err}") from err
    payload["phi_spec_obj"] = phi_spec
    payload["rho_spec_obj"] = rho_spec
    payload["state"] = state
    return payload

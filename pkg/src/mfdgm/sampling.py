"""Seeded Monte-Carlo sampling of training points.

Interior batches are uniform on [0, T] x Omega, spatial batches uniform on
Omega.  The generator is counter-based (Philox) so streams are
reproducible across platforms and its state can be checkpointed exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UsageError


@dataclass(frozen=True)
class SampleBatch:
    """A batch of sampled points; ``times`` is None for spatial batches."""

    times: np.ndarray | None
    points: np.ndarray

    def __len__(self):
        return self.points.shape[0]


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def sample_interior(rng: np.random.Generator, problem, batch_size: int) -> SampleBatch:
    """Uniform draws on [0, T] x Omega; advances ``rng`` deterministically."""
    if batch_size < 1:
        raise UsageError(f"batch size must be >= 1, got {batch_size}")
    times = rng.uniform(0.0, problem.T, size=batch_size)
    points = rng.uniform(problem.omega_lo, problem.omega_hi, size=(batch_size, problem.d))
    return SampleBatch(times=times, points=points)


def sample_spatial(rng: np.random.Generator, problem, batch_size: int) -> SampleBatch:
    """Uniform draws on Omega only."""
    if batch_size < 1:
        raise UsageError(f"batch size must be >= 1, got {batch_size}")
    points = rng.uniform(problem.omega_lo, problem.omega_hi, size=(batch_size, problem.d))
    return SampleBatch(times=None, points=points)


def rng_state(rng: np.random.Generator) -> dict:
    """JSON-serializable snapshot of the generator state."""
    state = rng.bit_generator.state
    return {
        "bit_generator": state["bit_generator"],
        "counter": [int(v) for v in state["state"]["counter"]],
        "key": [int(v) for v in state["state"]["key"]],
        "buffer": [int(v) for v in state["buffer"]],
        "buffer_pos": int(state["buffer_pos"]),
        "has_uint32": int(state["has_uint32"]),
        "uinteger": int(state["uinteger"]),
    }


def restore_rng(snapshot: dict) -> np.random.Generator:
    if snapshot["bit_generator"] != "Philox":
        raise UsageError(f"unsupported generator {snapshot['bit_generator']!r}")
    bg = np.random.Philox()
    bg.state = {
        "bit_generator": "Philox",
        "state": {
            "counter": np.array(snapshot["counter"], dtype=np.uint64),
            "key": np.array(snapshot["key"], dtype=np.uint64),
        },
        "buffer": np.array(snapshot["buffer"], dtype=np.uint64),
        "buffer_pos": snapshot["buffer_pos"],
        "has_uint32": snapshot["has_uint32"],
        "uinteger": snapshot["uinteger"],
    }
    return np.random.Generator(bg)

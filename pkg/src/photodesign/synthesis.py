"""Synthetic observations and optional measurement noise."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .forward import SourceSpec, solve_state
from .geometry import DomainSpec, HybridMesh, TimePartition, build_hybrid_mesh, geometry_hash
from .objective import ObservedData


@dataclass(frozen=True)
class NoiseSpec:
    level: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.level < 1:
            raise ConfigurationError(f"noise level must lie in [0, 1), got {self.level!r}")


def observation_meta(mesh: HybridMesh, src: SourceSpec, tp: TimePartition, **extra):
    return {"omega": src.omega, "amplitude": src.amplitude, "T": tp.T, "tau": tp.tau,
            "N": tp.N, "h": mesh.h, "geometry_hash": geometry_hash(mesh.spec, mesh.h), **extra}


def generate_observed(target, src: SourceSpec, tp: TimePartition, h=None, obstacle=False):
    """Traces of the eps = 1 run; ``target`` is a HybridMesh or a DomainSpec plus ``h``.

    By default the core is treated as free space too; ``obstacle=True``
    keeps its zero-flux wall.
    """
    if isinstance(target, DomainSpec):
        if h is None:
            raise ConfigurationError("a cell width h is required to mesh a DomainSpec")
        mesh = build_hybrid_mesh(target, h)
    else:
        mesh = target
    eps = np.ones(mesh.tri.n_elements)
    _, traces = solve_state(mesh, eps, src, tp, obstacle=obstacle)
    return ObservedData.from_traces(traces, **observation_meta(mesh, src, tp, obstacle=obstacle))


def add_noise(obs: ObservedData, n: NoiseSpec) -> ObservedData:
    """Additive unit-variance uniform noise, scaled per node to ``level`` times
    the RMS of that node's trace."""
    if n.level == 0:
        return obs
    rng = np.random.default_rng(n.seed)
    rms = np.sqrt(np.mean(obs.values**2, axis=0))
    noise = np.sqrt(3.0) * rng.uniform(-1.0, 1.0, size=obs.values.shape)
    values = obs.values + n.level * rms[None, :] * noise
    meta = dict(obs.meta, noise_level=n.level, noise_seed=n.seed)
    return ObservedData(obs.times, values, obs.nodes, obs.side, obs.weights, meta)

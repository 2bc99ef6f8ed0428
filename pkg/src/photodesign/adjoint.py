"""Backward-in-time adjoint solve driven by the weighted boundary misfit.

The discrete adjoint of the explicit scheme ``M u'' + K u + S u' = b`` is the
same scheme run backward, with the absorbing term of the observation sides
flipped in sign relative to forward time (``d lam / dn = + d lam / dt``).
It is realized by feeding the time-reversed residual loads to the forward
marching kernel.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AlignmentError
from .forward import HybridSolver, absorbing_flags, observation_layout


@dataclass(frozen=True)
class ResidualWeight:
    """Temporal cutoff: 1 on [0, T - delta], cubic Hermite ramp down to 0 at T.

    ``delta = 0`` disables the cutoff (z = 1 everywhere); the adjoint then
    loses its exact zero terminal derivative, so it is meant for quadrature
    checks only.
    """

    T: float
    delta: float | None = None

    @property
    def width(self):
        return 0.1 * self.T if self.delta is None else self.delta

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        d = self.width
        if d <= 0:
            return np.ones_like(t)
        xi = np.clip((t - (self.T - d)) / d, 0.0, 1.0)
        return 1.0 - xi * xi * (3.0 - 2.0 * xi)


@dataclass(frozen=True, eq=False)
class ResidualTraces:
    """``(E - E_obs) * z`` per observation node; the adjoint applies the sign."""

    times: np.ndarray
    values: np.ndarray
    nodes: np.ndarray
    side: np.ndarray
    weights: np.ndarray


def check_aligned(a, b):
    if a.values.shape != b.values.shape or not np.array_equal(a.nodes, b.nodes):
        raise AlignmentError("traces and data are defined on different observation nodes")
    if a.times.shape != b.times.shape or not np.allclose(a.times, b.times, rtol=0, atol=1e-12):
        raise AlignmentError("traces and data use different time partitions")


def compute_residual(traces, observed, w: ResidualWeight) -> ResidualTraces:
    check_aligned(traces, observed)
    z = w(traces.times)
    return ResidualTraces(traces.times, (traces.values - observed.values) * z[:, None],
                          traces.nodes, traces.side, traces.weights)


def solve_adjoint(mesh, eps, r: ResidualTraces, tp, src, obstacle=True, solver=None):
    """Adjoint history ``lam`` at all levels 0..N, integrated backward from T.

    ``lam`` at level N is zero by construction; with a cutoff that vanishes at
    T, level N - 1 is zero as well.
    """
    nodes, side, weights = observation_layout(mesh)
    if r.values.shape != (tp.N + 1, nodes.size) or not np.array_equal(r.nodes, nodes):
        raise AlignmentError("residual does not match the mesh observation nodes")
    if not np.allclose(r.times, tp.times, rtol=0, atol=1e-12):
        raise AlignmentError("residual uses a different time partition")
    solver = solver or HybridSolver(mesh, eps, tp, obstacle=obstacle)
    N = tp.N
    nx = mesh.grid.nx

    # step s computes lam^{j-1} from lam^j, lam^{j+1} with j = N - s
    quad = np.ones(N + 1)
    quad[[0, -1]] = 0.5
    loads = -(quad[:, None] * weights[None, :]) * r.values
    bottom, top = loads[:, :nx], loads[:, nx:]
    j = N - np.arange(N)

    def load(s):
        jj = j[s]
        return bottom[jj], top[jj]

    absorb_new = absorbing_flags(tp, src, j - 1)
    absorb_old = absorbing_flags(tp, src, j + 1)
    rev, _, _ = solver.march(load, absorb_new, absorb_old)
    return solver.history(rev[::-1].copy())

"""Tikhonov functional, its cellwise gradient and a finite-difference oracle."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .adjoint import ResidualWeight, check_aligned, compute_residual, solve_adjoint
from .errors import AlignmentError, ConfigurationError
from .forward import BoundaryTraces, HybridSolver, SourceSpec, solve_state
from .geometry import DESIGN, HybridMesh, TimePartition, TriMesh


@dataclass(frozen=True, eq=False)
class ObservedData:
    """Observed traces on the bottom/top boundaries plus run metadata."""

    times: np.ndarray
    values: np.ndarray
    nodes: np.ndarray
    side: np.ndarray
    weights: np.ndarray
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_traces(cls, traces: BoundaryTraces, **meta):
        return cls(traces.times, traces.values.copy(), traces.nodes, traces.side,
                   traces.weights, dict(meta))

    def resampled(self, tp: TimePartition):
        """Cubic-spline resampling onto another partition of the same (0, T)."""
        if len(self.times) == tp.N + 1 and np.allclose(self.times, tp.times, rtol=0, atol=1e-12):
            return self
        if not np.isclose(self.times[-1], tp.T, rtol=1e-9):
            raise AlignmentError(f"data cover (0, {self.times[-1]}) but the run needs (0, {tp.T})")
        from scipy.interpolate import CubicSpline

        values = CubicSpline(self.times, self.values, axis=0)(tp.times)
        meta = dict(self.meta, tau=tp.tau, N=tp.N)
        return ObservedData(tp.times, values, self.nodes, self.side, self.weights, meta)


@dataclass(frozen=True, eq=False)
class GradientField:
    values: np.ndarray
    gamma: float
    iteration: int = 0

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)


def design_guess(tri: TriMesh, eps_design, background=1.0):
    """Cellwise permittivity equal to ``eps_design`` in D2 and ``background`` elsewhere."""
    eps = np.full(tri.n_elements, float(background))
    eps[tri.region == DESIGN] = eps_design
    return eps


def check_permittivity(eps, upper=np.inf):
    eps = np.asarray(eps, dtype=float)
    if not np.all(np.isfinite(eps)) or eps.min() <= 0 or eps.max() > upper:
        raise ConfigurationError(f"permittivity must lie in (0, {upper}]")
    return eps


def time_weights(tp_or_times):
    """Trapezoidal weights on a uniform time grid."""
    times = getattr(tp_or_times, "times", tp_or_times)
    tau = times[1] - times[0]
    w = np.full(len(times), tau)
    w[[0, -1]] = 0.5 * tau
    return w


def tikhonov_value(traces, observed, eps, eps_g, gamma, weight: ResidualWeight, areas):
    """Half the z-weighted boundary misfit plus half gamma times ||eps - eps_g||^2."""
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    check_aligned(traces, observed)
    diff = traces.values - observed.values
    wt = time_weights(traces.times) * weight(traces.times)
    misfit = 0.5 * float(wt @ (diff**2 @ traces.weights))
    d = np.asarray(eps, dtype=float) - np.asarray(eps_g, dtype=float)
    return misfit + 0.5 * gamma * float(np.sum(np.asarray(areas) * d * d))


def _increment_products(E, lam, chunk=512):
    """Per-vertex sum over steps of (lam^{k+1} - lam^k) (E^{k+1} - E^k)."""
    n_levels = E.shape[0]
    acc = np.zeros(E.shape[1])
    for start in range(0, n_levels - 1, chunk):
        stop = min(start + chunk, n_levels - 1)
        dE = E[start + 1:stop + 1] - E[start:stop]
        dl = lam[start + 1:stop + 1] - lam[start:stop]
        acc += np.einsum("kn,kn->n", dE, dl)
    return acc


def assemble_gradient(tri: TriMesh, E_hist, lam_hist, eps, eps_g, gamma, iteration=0):
    """Cellwise L2 gradient of the discrete functional with respect to eps.

    The time integral of ``dlam/dt * dE/dt`` is exact for fields linear on
    each step; the space average over a cell is the lumped vertex rule, i.e.
    the same quadrature that builds the lumped mass.
    """
    if E_hist.values.shape != lam_hist.values.shape:
        raise AlignmentError("state and adjoint histories have different shapes")
    if E_hist.tp != lam_hist.tp:
        raise AlignmentError("state and adjoint histories use different time partitions")
    if E_hist.values.shape[1] != tri.n_vertices:
        raise AlignmentError("histories do not match the mesh vertices")
    tau = E_hist.tp.tau
    acc = _increment_products(E_hist.values, lam_hist.values) * E_hist.updated
    data = -acc[tri.triangles].sum(axis=1) / (3.0 * tau)
    data[~E_hist.active_elements] = 0.0
    g = data + gamma * (np.asarray(eps, dtype=float) - np.asarray(eps_g, dtype=float))
    return GradientField(g, float(gamma), iteration)


def fd_gradient_oracle(eps, cells, s, pipeline, areas, bounds=(0.0, np.inf)):
    """Central differences ``(F(eps + s e_K) - F(eps - s e_K)) / (2 s |K|)``.

    Cells whose perturbation leaves ``bounds`` are skipped with a warning and
    reported as NaN.
    """
    if not s > 0:
        raise ValueError("step s must be positive")
    eps = np.asarray(eps, dtype=float)
    lo, hi = bounds
    out = np.full(len(cells), np.nan)
    for n, K in enumerate(cells):
        if eps[K] - s <= lo or eps[K] + s > hi:
            warnings.warn(f"cell {K}: eps +/- s leaves the admissible set, skipped", stacklevel=2)
            continue
        plus, minus = eps.copy(), eps.copy()
        plus[K] += s
        minus[K] -= s
        out[n] = (pipeline(plus) - pipeline(minus)) / (2 * s * areas[K])
    return out


@dataclass(eq=False)
class DesignProblem:
    """Everything needed to evaluate F(eps) and its gradient on one mesh."""

    mesh: HybridMesh
    src: SourceSpec
    tp: TimePartition
    observed: ObservedData
    eps_g: np.ndarray
    weight: ResidualWeight = None
    obstacle: bool = True

    def __post_init__(self):
        if self.weight is None:
            self.weight = ResidualWeight(self.tp.T)
        self.observed = self.observed.resampled(self.tp)
        self.eps_g = np.asarray(self.eps_g, dtype=float)

    @property
    def areas(self):
        return self.mesh.tri.areas

    def forward(self, eps):
        solver = HybridSolver(self.mesh, eps, self.tp, obstacle=self.obstacle)
        hist, traces = solve_state(self.mesh, eps, self.src, self.tp, solver=solver)
        return solver, hist, traces

    def value(self, eps, gamma, traces=None):
        if traces is None:
            _, _, traces = self.forward(eps)
        return tikhonov_value(traces, self.observed, eps, self.eps_g, gamma, self.weight,
                              self.areas)

    def gradient(self, eps, gamma, state=None, iteration=0):
        """Returns (GradientField, F, traces); ``state`` reuses a forward solve."""
        solver, hist, traces = state if state is not None else self.forward(eps)
        F = self.value(eps, gamma, traces=traces)
        r = compute_residual(traces, self.observed, self.weight)
        lam = solve_adjoint(self.mesh, eps, r, self.tp, self.src, solver=solver)
        g = assemble_gradient(self.mesh.tri, hist, lam, eps, self.eps_g, gamma, iteration)
        return g, F, traces

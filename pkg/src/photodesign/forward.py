"""Explicit hybrid FE/FD time stepping for ``eps E_tt - Laplace E = 0``.

Each step advances the FD grid (5-point stencil, eps = 1, boundary fluxes
on the bottom/top sides, homogeneous Neumann on the lateral sides) and the
lumped-mass P1 finite elements, then exchanges the overlap layers: FE
boundary vertices take the FD layer-I values and FD layer-II nodes take the
FE values.  On the structured overlap ring the P1 stiffness equals the
5-point stencil, so the coupled scheme is one symmetric explicit scheme
``M u'' + K u + S u' = b``; the adjoint solver relies on that.

Boundary terms use the node-centred half-cell form: the flux through a
boundary node's edge share ``sigma`` enters as ``sigma * dE/dn``.  The
absorbing condition ``dE/dn = -dE/dt`` uses a centred difference in time.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError, InstabilityError
from .geometry import CORE, HybridMesh, TimePartition

_FINITE_CHECK_STRIDE = 16


@dataclass(frozen=True)
class SourceSpec:
    """Single-period sine pulse ``amplitude * sin(omega t)`` on (0, 2 pi / omega)."""

    omega: float = 40.0
    amplitude: float = 1.0

    def __post_init__(self):
        if not self.omega > 0:
            raise ConfigurationError(f"omega must be positive, got {self.omega!r}")

    @property
    def t1(self):
        return 2.0 * math.pi / self.omega


def source_pulse(t, src: SourceSpec):
    t = np.asarray(t, dtype=float)
    on = (t > 0) & (t < src.t1)
    out = np.where(on, src.amplitude * np.sin(src.omega * t), 0.0)
    return out if out.ndim else float(out)


@dataclass(frozen=True, eq=False)
class WaveHistory:
    """FE nodal values at every time level (shape ``(N + 1, n_vertices)``).

    ``updated`` flags the vertices advanced by the FE scheme (interior and
    outside the impenetrable core); ``active_elements`` the elements that
    take part in the dynamics.
    """

    values: np.ndarray
    tp: TimePartition
    updated: np.ndarray
    active_elements: np.ndarray

    @property
    def n_levels(self):
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class BoundaryTraces:
    """Time series at the observation nodes of the bottom (side 1,
    backscattering) and top (side 2, transmission) boundaries."""

    times: np.ndarray
    values: np.ndarray
    nodes: np.ndarray
    side: np.ndarray
    weights: np.ndarray

    @property
    def back(self):
        return self.values[:, self.side == 1]

    @property
    def trans(self):
        return self.values[:, self.side == 2]

    def subset(self, side):
        keep = self.side == side
        return BoundaryTraces(self.times, self.values[:, keep], self.nodes[keep],
                              self.side[keep], self.weights[keep])


def observation_layout(mesh: HybridMesh):
    """FD node ids, side tags and edge weights of all observation nodes."""
    g = mesh.grid
    cols = np.arange(g.nx)
    nodes = np.concatenate([g.linear(g.back_row, cols), g.linear(g.trans_row, cols)])
    side = np.repeat([1, 2], g.nx)
    weights = np.concatenate([g.side_weights, g.side_weights])
    return nodes, side, weights


def p1_assembly(vertices, triangles, eps):
    """P1 stiffness (csr) and row-sum lumped mass weighted by cellwise eps."""
    p = vertices[triangles]
    bx = np.stack([p[:, 1, 1] - p[:, 2, 1], p[:, 2, 1] - p[:, 0, 1], p[:, 0, 1] - p[:, 1, 1]], 1)
    cy = np.stack([p[:, 2, 0] - p[:, 1, 0], p[:, 0, 0] - p[:, 2, 0], p[:, 1, 0] - p[:, 0, 0]], 1)
    area = 0.5 * (bx[:, 0] * cy[:, 1] - bx[:, 1] * cy[:, 0])
    local = (bx[:, :, None] * bx[:, None, :] + cy[:, :, None] * cy[:, None, :]) / (4 * area)[:, None, None]
    rows = np.repeat(triangles, 3, axis=1).ravel()
    cols = np.tile(triangles, (1, 3)).ravel()
    n = len(vertices)
    K = sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))
    K.sum_duplicates()
    mass = np.bincount(triangles.ravel(), weights=np.repeat(eps * area / 3.0, 3), minlength=n)
    return K, mass


class HybridSolver:
    """Precomputed operators of the coupled scheme for one (mesh, eps, tau)."""

    def __init__(self, mesh: HybridMesh, eps, tp: TimePartition, obstacle=True):
        eps = np.asarray(eps, dtype=float)
        tri = mesh.tri
        if eps.shape != (tri.n_elements,):
            raise ValueError(f"eps has shape {eps.shape}, expected ({tri.n_elements},)")
        if not np.all(np.isfinite(eps)) or eps.min() <= 0:
            raise ConfigurationError("permittivity must be positive and finite on every element")
        self.mesh, self.tp, self.eps = mesh, tp, eps
        g = mesh.grid
        h, tau = g.h, tp.tau

        # FE part
        self.active_elements = (tri.region != CORE) if obstacle else np.ones(tri.n_elements, bool)
        K, mass = p1_assembly(tri.vertices, tri.triangles[self.active_elements],
                              eps[self.active_elements])
        self.updated = (tri.layer != 1) & (mass > 0)
        upd = np.flatnonzero(self.updated)
        self._upd = upd
        self._K_upd = K[upd].tocsr()
        self._fe_coef = tau**2 / mass[upd]

        # FD part: half-cell masses and face weights (face length / h)
        ny, nx = g.shape
        fx = np.ones(nx)
        fx[[0, -1]] = 0.5
        fy = np.ones(ny)
        fy[[0, -1]] = 0.5
        m = h * h * np.outer(fy, fx)
        self._wx = np.repeat(fy[:, None], nx - 1, axis=1)
        self._wy = np.repeat(fx[None, :], ny - 1, axis=0)
        self._c2 = m / tau**2
        sig = g.side_weights
        self._sig = sig
        self._half_sig = sig / (2 * tau)
        self._inv_den_top = 1.0 / (self._c2[-1] + self._half_sig)
        self._inv_den_bot = {False: 1.0 / self._c2[0], True: 1.0 / (self._c2[0] + self._half_sig)}
        self._fd_mask = g.fd_active

        self.tau_max = self._stability_limit(K, mass, m)
        if tau > self.tau_max:
            raise ConfigurationError(
                f"time step {tau:.6g} violates the CFL bound {self.tau_max:.6g} for this mesh/eps")

    def _stability_limit(self, K, mass, m):
        """2 / sqrt(lambda_max) with lambda_max bounded by Gershgorin rows."""
        upd = self._upd
        absrow = np.asarray(abs(K[upd]).sum(axis=1)).ravel()
        lam_fe = float(np.max(absrow / mass[upd])) if upd.size else 0.0
        ny, nx = m.shape
        wsum = np.zeros((ny, nx))
        wsum[:, :-1] += self._wx
        wsum[:, 1:] += self._wx
        wsum[:-1] += self._wy
        wsum[1:] += self._wy
        lam_fd = float(np.max(2 * wsum / m))
        return 2.0 / math.sqrt(max(lam_fe, lam_fd))

    def march(self, load, absorb_new, absorb_old, snapshot=None, stride=0):
        """Run ``N`` explicit steps from zero levels -1 and 0.

        Step ``k`` produces level ``k + 1`` from levels ``k`` and ``k - 1``.
        ``load(k)`` returns the (bottom, top) boundary loads (sigma times the
        prescribed normal flux) or ``None``.  ``absorb_new[k]`` /
        ``absorb_old[k]`` switch the bottom absorbing term on the new and
        oldest level.  Returns the FE history and the bottom/top FD rows.
        """
        N = self.tp.N
        nx = self.mesh.grid.nx
        hist = np.zeros((N + 1, self.mesh.tri.n_vertices))
        bottom = np.zeros((N + 1, nx))
        top = np.zeros((N + 1, nx))
        # overflow is reported through InstabilityError, not numpy warnings
        with np.errstate(over="ignore", invalid="ignore"):
            self._steps(load, absorb_new, absorb_old, snapshot, stride, hist, bottom, top)
        return hist, bottom, top

    def _steps(self, load, absorb_new, absorb_old, snapshot, stride, hist, bottom, top):
        mesh, N = self.mesh, self.tp.N
        ny, nx = mesh.grid.shape
        n_fe = mesh.tri.n_vertices
        u_old = np.zeros((ny, nx))
        u = np.zeros((ny, nx))
        fe_old = np.zeros(n_fe)
        fe = np.zeros(n_fe)
        lap = np.empty((ny, nx))
        wx, wy, c2 = self._wx, self._wy, self._c2
        mask = self._fd_mask
        upd, K_upd, coef = self._upd, self._K_upd, self._fe_coef
        l1_fe, l1_fd = mesh.layer1_fe, mesh.layer1_fd
        l2_fe, l2_fd = mesh.layer2_fe, mesh.layer2_fd
        half_sig = self._half_sig

        for k in range(N):
            lap.fill(0.0)
            d = wx * (u[:, 1:] - u[:, :-1])
            lap[:, :-1] += d
            lap[:, 1:] -= d
            d = wy * (u[1:] - u[:-1])
            lap[:-1] += d
            lap[1:] -= d
            rhs = c2 * (2.0 * u - u_old) + lap
            rhs[-1] += half_sig * u_old[-1]
            if absorb_old[k]:
                rhs[0] += half_sig * u_old[0]
            f = load(k)
            if f is not None:
                rhs[0] += f[0]
                rhs[-1] += f[1]
            u_new = rhs * (1.0 / c2)
            u_new[0] = rhs[0] * self._inv_den_bot[bool(absorb_new[k])]
            u_new[-1] = rhs[-1] * self._inv_den_top
            u_new *= mask

            fe_new = np.zeros(n_fe)
            fe_new[upd] = 2.0 * fe[upd] - fe_old[upd] - coef * (K_upd @ fe)
            fe_new[l1_fe] = u_new.flat[l1_fd]
            u_new.flat[l2_fd] = fe_new[l2_fe]

            hist[k + 1] = fe_new
            bottom[k + 1] = u_new[0]
            top[k + 1] = u_new[-1]
            if k % _FINITE_CHECK_STRIDE == 0 or k == N - 1:
                if not (np.isfinite(fe_new).all() and np.isfinite(u_new).all()):
                    raise InstabilityError(f"non-finite field at time step {k + 1}", step=k + 1)
            if snapshot is not None and stride and (k + 1) % stride == 0:
                merged = u_new.copy()
                merged.flat[mesh.coincident_fd] = fe_new[mesh.coincident_fe]
                snapshot(k + 1, merged, fe_new)
            u_old, u = u, u_new
            fe_old, fe = fe, fe_new

    def history(self, values):
        return WaveHistory(values, self.tp, self.updated, self.active_elements)


def absorbing_flags(tp: TimePartition, src: SourceSpec, levels):
    """Bottom side absorbs once the incident pulse window has closed."""
    return np.asarray(levels) * tp.tau > src.t1


def solve_state(mesh: HybridMesh, eps, src: SourceSpec, tp: TimePartition,
                obstacle=True, snapshot=None, stride=0, solver=None):
    """Forward solve from zero initial data; returns (WaveHistory, BoundaryTraces)."""
    solver = solver or HybridSolver(mesh, eps, tp, obstacle=obstacle)
    sig = solver._sig
    pulse = source_pulse(tp.times, src)
    nx = mesh.grid.nx
    zero = np.zeros(nx)

    def load(k):
        if pulse[k] == 0.0:
            return None
        return sig * pulse[k], zero

    flags = absorbing_flags(tp, src, np.arange(tp.N))
    hist, bottom, top = solver.march(load, flags, flags, snapshot=snapshot, stride=stride)
    nodes, side, weights = observation_layout(mesh)
    traces = BoundaryTraces(tp.times, np.hstack([bottom, top]), nodes, side, weights)
    return solver.history(hist), traces


def grid_energy(mesh: HybridMesh, u_prev, u_cur, tau):
    """Kinetic plus potential energy of an eps = 1 field on the FD grid."""
    g = mesh.grid
    ny, nx = g.shape
    fx = np.ones(nx)
    fx[[0, -1]] = 0.5
    fy = np.ones(ny)
    fy[[0, -1]] = 0.5
    m = g.h**2 * np.outer(fy, fx)
    vel = (u_cur - u_prev) / tau
    ux = u_cur[:, 1:] - u_cur[:, :-1]
    uy = u_cur[1:] - u_cur[:-1]
    pot = np.sum(fy[:, None] * ux**2) + np.sum(fx[None, :] * uy**2)
    return 0.5 * np.sum(m * vel**2) + 0.5 * pot

"""Adaptive conjugate gradient method (ACGM).

Inner loop: Fletcher-Reeves CG on one mesh with a decreasing regularization
weight, box projection onto the admissible set and halving backtracking on
the trial step.  Outer loop: refine the design region where the gradient is
large, carry eps / eps_g to the new mesh, re-derive tau and restart CG.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DegenerateDirectionError, DomainError, InstabilityError
from .forward import HybridSolver
from .geometry import DESIGN, TimePartition, cfl_time_step, mark_for_refinement
from .objective import DesignProblem
from .refine import refine_conforming, transfer_piecewise_constant

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RegularizationSchedule:
    gamma0: float = 0.01
    p: float = 0.5

    def __post_init__(self):
        if not self.gamma0 > 0:
            raise ConfigurationError(f"gamma0 must be positive, got {self.gamma0!r}")
        if not 0 < self.p < 1:
            raise ConfigurationError(f"exponent p must lie in (0, 1), got {self.p!r}")


def regularization_at(s: RegularizationSchedule, m: int) -> float:
    if m < 0:
        raise DomainError("iteration index must be non-negative")
    return s.gamma0 / (m + 1) ** s.p


@dataclass(frozen=True)
class AdmissibleSet:
    lower: float
    upper: float

    def __post_init__(self):
        if not 0 < self.lower <= self.upper:
            raise ConfigurationError(f"empty admissible set [{self.lower}, {self.upper}]")

    @classmethod
    def from_guess(cls, eps_g, regions, mode="symmetric"):
        """Bounds from the initial guess on D2.

        ``max``: ``[1 / max eps_g, max eps_g]``, which is empty when
        ``max eps_g < 1``.  ``symmetric``: ``[1 / b, b]`` with
        ``b = max(max eps_g, 1 / min eps_g)``; identical to ``max`` for
        guesses >= 1 and non-empty for all positive guesses.
        """
        vals = np.asarray(eps_g)[np.asarray(regions) == DESIGN]
        if vals.size == 0:
            raise ConfigurationError("the mesh has no design (D2) elements")
        if mode == "max":
            b = float(vals.max())
            return cls(1.0 / b, b)
        if mode == "symmetric":
            b = max(float(vals.max()), 1.0 / float(vals.min()))
            return cls(1.0 / b, b)
        raise ConfigurationError(f"unknown admissible bounds mode {mode!r}")

    def contains(self, values, tol=1e-12):
        v = np.asarray(values)
        return bool(np.all(v >= self.lower - tol) and np.all(v <= self.upper + tol))


@dataclass(frozen=True)
class StoppingCfg:
    theta: float = 1e-8
    window: int = 3
    band: float = 0.01
    max_iter: int = 10
    max_levels: int = 4
    alpha_max: float = math.inf
    max_backtracks: int = 8
    gamma_reset_per_level: bool = False

    def __post_init__(self):
        if not self.theta > 0:
            raise ConfigurationError("theta must be positive")
        if self.window < 2:
            raise ConfigurationError("stabilization window must be at least 2")
        if not 0 <= self.band < 1:
            raise ConfigurationError("stabilization band must lie in [0, 1)")
        if self.max_iter < 0 or self.max_levels < 0 or self.max_backtracks < 0:
            raise ConfigurationError("iteration limits must be non-negative")
        if not self.alpha_max > 0:
            raise ConfigurationError("alpha_max must be positive")


@dataclass
class OptState:
    m: int = 0
    eps: np.ndarray | None = None
    g_prev: np.ndarray | None = None
    d_prev: np.ndarray | None = None
    gamma: float | None = None
    level: int = 0
    norms: list = field(default_factory=list)
    values: list = field(default_factory=list)
    records: list = field(default_factory=list)
    best_F: float = math.inf
    best_gradient: np.ndarray | None = None
    stop_reason: str = ""


def inner(a, b, areas):
    return float(np.sum(areas * a * b))


def l2_norm(a, areas):
    return math.sqrt(inner(a, a, areas))


def conjugate_direction(g_m, g_prev, d_prev, m, areas=None):
    """Fletcher-Reeves direction; restarts with ``-g_m`` at m = 0 or when
    there is no usable previous gradient."""
    g_m = np.asarray(g_m, dtype=float)
    w = np.ones_like(g_m) if areas is None else areas
    if m == 0 or g_prev is None or d_prev is None:
        return -g_m
    prev = inner(g_prev, g_prev, w)
    if prev == 0:
        return -g_m
    beta = inner(g_m, g_m, w) / prev
    return -g_m + beta * np.asarray(d_prev, dtype=float)


def step_length(g, d, gamma, areas, alpha_max=math.inf):
    if not gamma > 0:
        raise DomainError(f"gamma must be positive, got {gamma!r}")
    dd = inner(d, d, areas)
    if dd == 0:
        raise DegenerateDirectionError("search direction has zero norm")
    alpha = -inner(g, d, areas) / (gamma * dd)
    return float(min(max(alpha, 0.0), alpha_max))


def update_epsilon(eps, alpha, d, adm: AdmissibleSet, design=None):
    """``eps + alpha d`` projected onto the admissible box; cells outside
    ``design`` are left untouched."""
    eps = np.asarray(eps, dtype=float)
    out = eps.copy()
    mask = np.ones(eps.shape, bool) if design is None else np.asarray(design, bool)
    out[mask] = np.clip(eps[mask] + alpha * np.asarray(d)[mask], adm.lower, adm.upper)
    return out


def _stabilized(norms, window, band):
    if len(norms) < window:
        return False
    tail = norms[-window:]
    top = max(tail)
    return top == 0 or (top - min(tail)) / top <= band


def _increasing(norms, window):
    if len(norms) < window:
        return False
    tail = norms[-window:]
    return all(b > a for a, b in zip(tail, tail[1:]))


def optimize_on_mesh(problem: DesignProblem, eps_start, cfg: StoppingCfg,
                     sched: RegularizationSchedule, adm: AdmissibleSet, m_offset=0, level=0):
    """CG iterations on a fixed mesh; returns (best eps, OptState)."""
    tri = problem.mesh.tri
    design = tri.region == DESIGN
    areas = tri.areas
    eps = np.asarray(eps_start, dtype=float).copy()
    if not adm.contains(eps[design]):
        raise ConfigurationError("starting permittivity lies outside the admissible set")

    state = OptState(eps=eps, level=level)
    best_eps = eps
    fwd = problem.forward(eps)
    for m in range(cfg.max_iter + 1):
        gamma = regularization_at(sched, m_offset + m)
        state.m, state.gamma = m, gamma
        try:
            g, F, _ = problem.gradient(eps, gamma, state=fwd, iteration=m_offset + m)
        except InstabilityError as exc:
            raise InstabilityError(f"level {level}, iteration {m}: {exc}", step=exc.step) from exc
        gv = np.where(design, g.values, 0.0)
        norm = l2_norm(gv, areas)
        state.norms.append(norm)
        state.values.append(F)
        record = {"m": m_offset + m, "level": level, "gamma": gamma, "alpha": None,
                  "grad_norm": norm, "F": F,
                  "eps_range": [float(eps[design].min()), float(eps[design].max())]}
        state.records.append(record)
        if F <= state.best_F:
            state.best_F, best_eps, state.best_gradient = F, eps, gv
        log.info("level %d it %d: F=%.6e |g|=%.3e gamma=%.4g", level, m, F, norm, gamma)

        if norm <= cfg.theta:
            state.stop_reason = "gradient tolerance"
            break
        if m > 0 and _stabilized(state.norms, cfg.window, cfg.band):
            state.stop_reason = "gradient norms stabilized"
            break
        if m > 0 and _increasing(state.norms, cfg.window):
            state.stop_reason = "gradient norms increasing"
            break
        if m == cfg.max_iter:
            state.stop_reason = "max iterations"
            break

        d = conjugate_direction(gv, state.g_prev, state.d_prev, m, areas)
        if inner(gv, d, areas) >= 0:
            d = -gv
        alpha = step_length(gv, d, gamma, areas, cfg.alpha_max)
        accepted = None
        for _ in range(cfg.max_backtracks + 1):
            trial = update_epsilon(eps, alpha, d, adm, design)
            if np.array_equal(trial, eps):
                break
            trial_fwd = problem.forward(trial)
            F_trial = problem.value(trial, gamma, traces=trial_fwd[2])
            if F_trial < F:
                accepted = trial
                break
            alpha *= 0.5
        if accepted is None:
            state.stop_reason = "no descent along search direction"
            break
        record["alpha"] = alpha
        eps, fwd = accepted, trial_fwd
        state.eps = eps
        state.g_prev, state.d_prev = gv, d
    state.eps = best_eps
    return best_eps, state


@dataclass(eq=False)
class AdaptiveResult:
    eps: np.ndarray
    mesh: object
    tp: TimePartition
    meshes: list
    report: dict


def run_adaptive(mesh, eps_g, observed, src, tp, cfg: StoppingCfg, sched: RegularizationSchedule,
                 adm: AdmissibleSet, C=0.7, obstacle=True, design_only=True, weight=None):
    """Outer refinement loop over at most ``cfg.max_levels`` refinements.  ``weight`` is the
    residual cutoff (None: the default width).
    """
    eps_g = np.asarray(eps_g, dtype=float)
    eps = eps_g.copy()
    meshes, levels, iterations = [mesh], [], []
    m_offset = 0
    result = None
    prev_norm = None
    stop = "max refinement levels"
    for level in range(cfg.max_levels + 1):
        problem = DesignProblem(mesh, src, tp, observed, eps_g, weight, obstacle)
        try:
            eps_best, state = optimize_on_mesh(problem, eps, cfg, sched, adm, m_offset, level)
        except InstabilityError:
            if result is None:
                raise
            log.warning("level %d diverged; keeping level %d", level, level - 1)
            meshes.pop()
            stop = "solver instability"
            break
        iterations.extend(state.records)
        n_iter = len(state.records) - 1
        entry = {
            "level": level,
            "n_elements": int(mesh.tri.n_elements),
            "n_vertices": int(mesh.tri.n_vertices),
            "h_min": mesh.h_min,
            "tau": tp.tau,
            "N": tp.N,
            "tau_cfl": cfl_time_step(mesh, adm.lower),
            "tau_stable": HybridSolver(mesh, eps_best, tp, obstacle=obstacle).tau_max,
            "min_angle": mesh.tri.min_angle,
            "iterations": n_iter,
            "F_start": state.values[0],
            "F_best": state.best_F,
            "grad_norm": state.norms[-1],
            "stop_reason": state.stop_reason,
        }
        levels.append(entry)
        result = (eps_best, mesh, tp)
        m_offset = 1 if cfg.gamma_reset_per_level else m_offset + n_iter + 1

        norm = state.norms[-1]
        if prev_norm is not None and (norm > prev_norm or abs(norm - prev_norm) <= cfg.band * prev_norm):
            stop = "gradient norms increased or stabilized across meshes"
            break
        prev_norm = norm
        if level == cfg.max_levels:
            break
        marked = mark_for_refinement(state.best_gradient, C, mesh.tri.region, design_only,
                                     frozen=mesh.tri.frozen_elements)
        entry["n_marked"] = int(marked.size)
        entry["marked_regions"] = sorted({int(r) for r in mesh.tri.region[marked]})
        if marked.size == 0:
            stop = "no elements marked"
            break
        new_tri = refine_conforming(mesh.tri, marked)
        eps = transfer_piecewise_constant(eps_best, mesh.tri, new_tri)
        eps_g = transfer_piecewise_constant(eps_g, mesh.tri, new_tri)
        mesh = mesh.with_tri(new_tri)
        meshes.append(mesh)
        tp = TimePartition.fitting(tp.T, cfl_time_step(mesh, adm.lower))

    eps_final, final_mesh, final_tp = result
    report = {"levels": levels, "iterations": iterations, "stop_reason": stop,
              "admissible": [adm.lower, adm.upper]}
    return AdaptiveResult(eps_final, final_mesh, final_tp, meshes[:len(levels)], report)

"""High-level workflows shared by the CLI, the experiment scripts and the tests."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .adjoint import ResidualWeight
from .config import RunConfig
from .forward import BoundaryTraces, solve_state
from .geometry import DESIGN, Disk, DomainSpec, Rect, build_hybrid_mesh, geometry_hash
from .io import load_observed
from .objective import DesignProblem, ObservedData, design_guess, fd_gradient_oracle
from .optimizer import AdaptiveResult, AdmissibleSet, run_adaptive
from .spectral import reflection_metric
from .synthesis import NoiseSpec, add_noise, generate_observed


def build_mesh(cfg: RunConfig):
    return build_hybrid_mesh(cfg.geometry, cfg.discretization.h)


def residual_weight(cfg: RunConfig):
    return ResidualWeight(cfg.source.T, cfg.optimization.cutoff * cfg.source.T)


def observed_for(cfg: RunConfig, mesh, tp, seed=None) -> ObservedData:
    """Load the configured data file, or synthesize the eps = 1 target."""
    if cfg.data.path:
        return load_observed(cfg.data.path, expect_hash=geometry_hash(mesh.spec, mesh.h))
    obs = generate_observed(mesh, cfg.source.spec(), tp, obstacle=cfg.data.obstacle)
    seed = cfg.data.seed if seed is None else seed
    return add_noise(obs, NoiseSpec(cfg.data.noise, seed))


def admissible_for(cfg: RunConfig, tri, guess):
    eps_g = design_guess(tri, guess)
    return eps_g, AdmissibleSet.from_guess(eps_g, tri.region, cfg.optimization.bounds)


def forward_run(cfg: RunConfig, guess=1.0, mesh=None, snapshot=None, stride=0):
    mesh = mesh or build_mesh(cfg)
    eps = design_guess(mesh.tri, guess)
    tp = cfg.time_partition(mesh, eps_min=min(1.0, guess))
    hist, traces = solve_state(mesh, eps, cfg.source.spec(), tp, obstacle=cfg.optimization.obstacle,
                               snapshot=snapshot, stride=stride)
    return mesh, eps, tp, hist, traces


@dataclass(eq=False)
class GuessResult:
    guess: float
    eps_g: np.ndarray
    adaptive: AdaptiveResult
    traces_initial: BoundaryTraces
    traces_final: BoundaryTraces
    reflection_initial: float
    reflection_final: float
    seconds: float

    def summary(self):
        return {"guess": self.guess, "reflection_initial": self.reflection_initial,
                "reflection_final": self.reflection_final,
                "levels": len(self.adaptive.report["levels"]),
                "stop_reason": self.adaptive.report["stop_reason"]}


def optimize_guess(cfg: RunConfig, guess, mesh=None, observed=None, tp=None) -> GuessResult:
    """Full adaptive workflow for one initial guess of eps in D2."""
    t0 = time.perf_counter()
    mesh = mesh or build_mesh(cfg)
    src = cfg.source.spec()
    obstacle = cfg.optimization.obstacle
    eps_g, adm = admissible_for(cfg, mesh.tri, guess)
    tp = tp or cfg.time_partition(mesh, eps_min=adm.lower)
    if observed is None:
        observed = observed_for(cfg, mesh, tp)
    _, traces0 = solve_state(mesh, eps_g, src, tp, obstacle=obstacle)
    opt = cfg.optimization
    res = run_adaptive(mesh, eps_g, observed, src, tp, opt.stopping(), opt.schedule(), adm,
                       C=opt.C, obstacle=obstacle, design_only=opt.design_only,
                       weight=residual_weight(cfg))
    _, traces1 = solve_state(res.mesh, res.eps, src, res.tp, obstacle=obstacle)
    return GuessResult(float(guess), eps_g, res, traces0, traces1,
                       reflection_metric(traces0, src), reflection_metric(traces1, src),
                       time.perf_counter() - t0)


def gradcheck_config() -> RunConfig:
    """Coarse problem for gradient verification: h = 0.1, T = 1, omega = 20."""
    from .config import DiscretizationCfg, OptimizationCfg, RunCfg, SourceCfg

    spec = DomainSpec(Rect(-0.7, 0.7, -0.6, 0.6), Rect(-0.5, 0.5, -0.4, 0.4),
                      design=(Disk((0.0, 0.0), 0.15),))
    return RunConfig(geometry=spec, discretization=DiscretizationCfg(0.1, 0.01),
                     source=SourceCfg(20.0, 1.0, 1.0), optimization=OptimizationCfg(obstacle=False),
                     run=RunCfg((1.5,), "out/gradcheck"))


@dataclass(frozen=True)
class GradcheckResult:
    cells: np.ndarray
    adjoint: np.ndarray
    fd: np.ndarray
    rel_error: np.ndarray
    checked: np.ndarray
    tol: float

    @property
    def max_rel_error(self):
        return float(np.max(self.rel_error[self.checked])) if self.checked.any() else 0.0

    @property
    def passed(self):
        return bool(self.checked.any()) and self.max_rel_error <= self.tol


def gradcheck(cfg: RunConfig, guess=1.5, gamma=0.0, s=1e-4, tol=0.02, seed=0,
              floor=1e-3, scope="design") -> GradcheckResult:
    """Adjoint gradient against central differences on every D2 cell
    (``scope="all"``: every FE cell).

    The design is a seeded random perturbation of ``guess`` in D2 so that the
    misfit gradient is generic; cells below ``floor * max |g|`` are not scored.
    """
    if scope not in ("design", "all"):
        raise ValueError(f"scope must be 'design' or 'all', got {scope!r}")
    mesh = build_mesh(cfg)
    tri = mesh.tri
    src = cfg.source.spec()
    tp = cfg.time_partition(mesh, eps_min=1.0)
    observed = generate_observed(mesh, src, tp, obstacle=cfg.data.obstacle)
    design = np.flatnonzero(tri.region == DESIGN)
    rng = np.random.default_rng(seed)
    eps = design_guess(tri, guess)
    eps[design] += 0.2 * rng.uniform(-1.0, 1.0, design.size)
    cells = design if scope == "design" else np.arange(tri.n_elements)
    eps_g = design_guess(tri, guess)
    problem = DesignProblem(mesh, src, tp, observed, eps_g, residual_weight(cfg),
                            cfg.optimization.obstacle)
    g, _, _ = problem.gradient(eps, gamma)
    adj = g.values[cells]
    fd = fd_gradient_oracle(eps, cells, s, lambda e: problem.value(e, gamma), tri.areas)
    scale = np.max(np.abs(adj))
    checked = np.abs(adj) >= floor * scale
    rel = np.abs(adj - fd) / np.maximum(np.abs(fd), np.finfo(float).tiny)
    return GradcheckResult(cells, adj, fd, rel, checked, tol)


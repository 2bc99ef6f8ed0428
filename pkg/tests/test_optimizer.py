import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from photodesign.errors import ConfigurationError, DegenerateDirectionError, DomainError
from photodesign.forward import SourceSpec
from photodesign.geometry import BACKGROUND, DESIGN, TimePartition
from photodesign.objective import DesignProblem, design_guess
from photodesign.optimizer import (AdmissibleSet, RegularizationSchedule, StoppingCfg,
                                   conjugate_direction, optimize_on_mesh, regularization_at,
                                   run_adaptive, step_length, update_epsilon)
from photodesign.synthesis import generate_observed

SRC, TP = SourceSpec(20.0), TimePartition(1.0, 0.01)


@pytest.fixture(scope="module")
def observed(tiny_mesh):
    return generate_observed(tiny_mesh, SRC, TP)


def problem_for(mesh, observed, guess):
    return DesignProblem(mesh, SRC, TP, observed, design_guess(mesh.tri, guess))


def adm_for(mesh, guess):
    return AdmissibleSet.from_guess(design_guess(mesh.tri, guess), mesh.tri.region)


@pytest.mark.parametrize("m,gamma", [(0, 0.01), (3, 0.005)])
def test_schedule_examples(m, gamma):
    assert regularization_at(RegularizationSchedule(), m) == pytest.approx(gamma, rel=1e-15)


@given(st.floats(1e-4, 1.0), st.floats(0.05, 0.95), st.integers(0, 500))
def test_schedule_formula_and_monotone(g0, p, m):
    s = RegularizationSchedule(g0, p)
    assert regularization_at(s, m) == g0 / (m + 1) ** p
    assert regularization_at(s, m + 1) < regularization_at(s, m)


def test_schedule_validation():
    for kw in ({"gamma0": 0.0}, {"p": 1.0}, {"p": 0.0}):
        with pytest.raises(ConfigurationError):
            RegularizationSchedule(**kw)
    with pytest.raises(DomainError):
        regularization_at(RegularizationSchedule(), -1)


def test_conjugate_direction_examples():
    g = np.array([1.0, -2.0, 0.5])
    d_prev = np.array([0.3, 0.1, -1.0])
    np.testing.assert_array_equal(conjugate_direction(g, None, None, 0), -g)
    np.testing.assert_array_equal(conjugate_direction(g, g * 3, d_prev, 0), -g)
    np.testing.assert_allclose(conjugate_direction(g, g, d_prev, 4), -g + d_prev, rtol=1e-15)
    np.testing.assert_array_equal(conjugate_direction(np.zeros(3), g, d_prev, 2), 0.0)
    np.testing.assert_array_equal(conjugate_direction(g, np.zeros(3), d_prev, 2), -g)


@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.floats(0.1, 3))
def test_conjugate_direction_fr_ratio(gl, scale):
    g = np.array(gl)
    prev = np.array([1.0, 1.0, 1.0])
    d = conjugate_direction(g, prev * scale, prev, 1)
    beta = (g @ g) / (3 * scale**2)
    np.testing.assert_allclose(d, -g + beta * prev, rtol=1e-12, atol=1e-12)


def test_step_length_examples():
    g = np.array([3.0, -1.0])
    areas = np.array([0.5, 2.0])
    assert step_length(g, -g, 0.01, areas) == pytest.approx(100.0)
    assert step_length(g, -g, 0.01, areas, alpha_max=1.0) == 1.0
    assert step_length(np.array([1.0, 0.0]), np.array([0.0, 1.0]), 0.1, np.ones(2)) == 0.0
    assert step_length(np.array([1.0]), np.array([-2.0]), 0.5, np.ones(1)) == pytest.approx(1.0)


def test_step_length_errors():
    with pytest.raises(DegenerateDirectionError):
        step_length(np.ones(2), np.zeros(2), 0.1, np.ones(2))
    for gamma in (0.0, -1.0):
        with pytest.raises(DomainError):
            step_length(np.ones(2), -np.ones(2), gamma, np.ones(2))


def test_update_epsilon_examples():
    adm = AdmissibleSet(0.4, 2.5)
    assert update_epsilon([2.3], 1.0, [0.5], adm)[0] == 2.5
    assert update_epsilon([0.5], 1.0, [-0.2], adm)[0] == pytest.approx(0.4)
    np.testing.assert_array_equal(update_epsilon([1.2, 0.7], 0.0, [1.0, 1.0], adm), [1.2, 0.7])
    out = update_epsilon([1.0, 1.0], 1.0, [5.0, 5.0], adm, design=[False, True])
    np.testing.assert_array_equal(out, [1.0, 2.5])


@given(st.lists(st.floats(0.4, 2.5), min_size=1, max_size=8), st.floats(0, 100), st.floats(-1, 1))
def test_update_stays_admissible(eps, alpha, d):
    adm = AdmissibleSet(0.4, 2.5)
    assert adm.contains(update_epsilon(eps, alpha, np.full(len(eps), d), adm))


def test_admissible_modes():
    regions = np.array([DESIGN, DESIGN, BACKGROUND])
    sym = AdmissibleSet.from_guess([2.5, 2.5, 1.0], regions)
    assert (sym.lower, sym.upper) == (0.4, 2.5)
    assert AdmissibleSet.from_guess([2.5, 2.5, 1.0], regions, "max") == sym
    low = AdmissibleSet.from_guess([0.5, 0.5, 1.0], regions)
    assert (low.lower, low.upper) == (0.5, 2.0)
    with pytest.raises(ConfigurationError, match="empty"):
        AdmissibleSet.from_guess([0.5, 0.5, 1.0], regions, "max")
    with pytest.raises(ConfigurationError):
        AdmissibleSet.from_guess([0.5, 0.5, 1.0], regions, "wide")
    with pytest.raises(ConfigurationError):
        AdmissibleSet.from_guess([1.0], [BACKGROUND])


def test_stopping_validation():
    for kw in ({"theta": 0}, {"window": 1}, {"band": 1.0}, {"max_iter": -1}, {"alpha_max": 0}):
        with pytest.raises(ConfigurationError):
            StoppingCfg(**kw)


def test_fixed_point_stops_immediately(tiny_mesh, observed):
    problem = problem_for(tiny_mesh, observed, 1.0)
    eps0 = problem.eps_g.copy()
    eps, state = optimize_on_mesh(problem, eps0, StoppingCfg(), RegularizationSchedule(),
                                  AdmissibleSet(0.5, 2.0))
    assert state.m == 0 and state.norms[0] <= 1e-8
    assert state.stop_reason == "gradient tolerance"
    np.testing.assert_array_equal(eps, eps0)


def test_max_iter_zero_returns_start(tiny_mesh, observed):
    problem = problem_for(tiny_mesh, observed, 1.5)
    eps, state = optimize_on_mesh(problem, problem.eps_g, StoppingCfg(max_iter=0),
                                  RegularizationSchedule(), adm_for(tiny_mesh, 1.5))
    assert state.m == 0 and len(state.records) == 1
    np.testing.assert_array_equal(eps, problem.eps_g)


def test_start_outside_admissible_set(tiny_mesh, observed):
    problem = problem_for(tiny_mesh, observed, 2.5)
    with pytest.raises(ConfigurationError):
        optimize_on_mesh(problem, problem.eps_g, StoppingCfg(), RegularizationSchedule(),
                         AdmissibleSet(0.5, 2.0))


@pytest.mark.parametrize("guess", [0.5, 1.5, 2.5])
def test_inner_loop_decreases_objective(tiny_mesh, observed, guess):
    problem = problem_for(tiny_mesh, observed, guess)
    adm = adm_for(tiny_mesh, guess)
    cfg = StoppingCfg(max_iter=4)
    eps, state = optimize_on_mesh(problem, problem.eps_g, cfg, RegularizationSchedule(), adm)
    accepted = [r for r in state.records if r["alpha"] is not None]
    assert accepted, state.stop_reason
    assert state.best_F < state.values[0]
    assert adm.contains(eps)
    np.testing.assert_array_equal(eps[tiny_mesh.tri.region != DESIGN], 1.0)


def test_accepted_steps_strictly_decrease(tiny_mesh, observed):
    problem = problem_for(tiny_mesh, observed, 2.0)
    adm = adm_for(tiny_mesh, 2.0)
    eps = problem.eps_g
    sched = RegularizationSchedule()
    trail = []
    for m in range(3):
        nxt, state = optimize_on_mesh(problem, eps, StoppingCfg(max_iter=1), sched, adm, m_offset=m)
        if np.array_equal(nxt, eps):
            break
        gamma = regularization_at(sched, m)
        assert problem.value(nxt, gamma) < problem.value(eps, gamma)
        trail.append(nxt)
        eps = nxt
    assert trail


def test_max_levels_zero_equals_inner_loop(tiny_mesh, observed):
    adm = adm_for(tiny_mesh, 1.5)
    cfg = StoppingCfg(max_iter=2, max_levels=0)
    sched = RegularizationSchedule()
    res = run_adaptive(tiny_mesh, design_guess(tiny_mesh.tri, 1.5), observed, SRC, TP, cfg, sched, adm)
    eps, state = optimize_on_mesh(problem_for(tiny_mesh, observed, 1.5),
                                  design_guess(tiny_mesh.tri, 1.5), cfg, sched, adm)
    np.testing.assert_array_equal(res.eps, eps)
    assert len(res.meshes) == 1 and len(res.report["levels"]) == 1
    assert res.report["iterations"] == state.records


@pytest.fixture(scope="module")
def adaptive(small_mesh):
    src, tp = SourceSpec(20.0), TimePartition(1.0, 0.005)
    obs = generate_observed(small_mesh, src, tp, obstacle=True)
    eps_g = design_guess(small_mesh.tri, 1.5)
    adm = AdmissibleSet.from_guess(eps_g, small_mesh.tri.region)
    cfg = StoppingCfg(max_iter=2, max_levels=2, band=0.0)
    return run_adaptive(small_mesh, eps_g, obs, src, tp, cfg, RegularizationSchedule(), adm)


def test_adaptive_levels_grow_and_stay_in_design(adaptive):
    levels = adaptive.report["levels"]
    assert len(levels) >= 2
    counts = [lv["n_elements"] for lv in levels]
    assert all(b > a for a, b in zip(counts, counts[1:]))
    for lv in levels[:-1]:
        assert lv["n_marked"] > 0 and lv["marked_regions"] == [DESIGN]
    for lv in levels:
        assert lv["tau"] <= lv["tau_stable"]
    # refined levels re-derive tau from the conservative rule
    for lv in levels[1:]:
        assert lv["tau"] <= lv["tau_cfl"] * (1 + 1e-12)
        assert lv["min_angle"] >= 20.0


def test_adaptive_gamma_index_continues(adaptive):
    ms = [r["m"] for r in adaptive.report["iterations"]]
    assert ms == list(range(len(ms)))
    gammas = [r["gamma"] for r in adaptive.report["iterations"]]
    assert all(b < a for a, b in zip(gammas, gammas[1:]))


def test_adaptive_result_lives_on_final_mesh(adaptive):
    assert adaptive.eps.shape == (adaptive.mesh.tri.n_elements,)
    assert adaptive.mesh is adaptive.meshes[-1]
    lo, hi = adaptive.report["admissible"]
    assert np.all((adaptive.eps >= lo) & (adaptive.eps <= hi))

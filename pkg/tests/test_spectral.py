import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from photodesign.errors import ConfigurationError
from photodesign.forward import BoundaryTraces, SourceSpec, solve_state
from photodesign.geometry import TimePartition
from photodesign.objective import design_guess
from photodesign.spectral import (default_frequencies, dft_modulus, incident_energy,
                                  reflection_metric, spectrum_report, trace_energy)

TP = TimePartition(2.0, 0.002)


def test_constant_trace_at_zero_frequency():
    assert dft_modulus(np.full(TP.N + 1, 3.0), TP, [0.0])[0] == pytest.approx(6.0, rel=1e-12)


def test_carrier_peak():
    freqs = np.linspace(0, 40 / np.pi, 257)
    m = dft_modulus(np.sin(40 * TP.times), TP, freqs)
    assert abs(freqs[np.argmax(m)] - 40 / (2 * np.pi)) <= freqs[1] - freqs[0]


def test_quadrature_oracle():
    # cos(2 pi f0 t) e^{-2 pi i f0 t} = (1 + e^{-4 pi i f0 t}) / 2 integrates to T/2 when 2 f0 T is whole
    f0 = 5.0
    m = dft_modulus(np.cos(2 * np.pi * f0 * TP.times), TP, [f0])[0]
    assert m == pytest.approx(1.0, rel=1e-4)


@settings(max_examples=20)
@given(st.integers(0, 2**32 - 1), st.floats(-3, 3))
def test_linearity_before_modulus(seed, a):
    rng = np.random.default_rng(seed)
    u, v = rng.normal(size=(2, TP.N + 1))
    freqs = default_frequencies(40.0, 16)
    # the modulus of a sum is bounded by the sum of moduli
    assert np.all(dft_modulus(u + a * v, TP, freqs)
                  <= dft_modulus(u, TP, freqs) + abs(a) * dft_modulus(v, TP, freqs) + 1e-9)


def test_linear_complex_transform():
    freqs = default_frequencies(40.0, 8)
    u = np.sin(40 * TP.times)
    np.testing.assert_allclose(dft_modulus(2.5 * u, TP, freqs), 2.5 * dft_modulus(u, TP, freqs),
                               rtol=1e-12)
    np.testing.assert_allclose(dft_modulus(np.stack([u, 2 * u], 1), TP, freqs)[:, 1],
                               2 * dft_modulus(u, TP, freqs), rtol=1e-12)


def test_dft_shape_errors():
    with pytest.raises(ConfigurationError):
        dft_modulus(np.zeros(TP.N), TP, [1.0])
    with pytest.raises(ConfigurationError):
        dft_modulus(np.zeros(1), np.zeros(1), [1.0])


def test_default_frequencies():
    f = default_frequencies(40.0, 5)
    assert f[0] == 0.0 and f[-1] == pytest.approx(40 / np.pi)


def flat_traces(tp, back, top):
    vals = np.column_stack([np.full(tp.N + 1, back), np.full(tp.N + 1, top)])
    return BoundaryTraces(tp.times, vals, np.array([0, 1]), np.array([1, 2]), np.array([2.0, 1.0]))


def test_metric_examples():
    src = SourceSpec(40.0)
    assert reflection_metric(flat_traces(TP, 0.0, 5.0), src, TP) == 0.0
    r = reflection_metric(flat_traces(TP, 1.0, 0.0), src, TP)
    # edge weight 2, u = 1 on [t1, T]
    assert r == pytest.approx(2.0 * (2.0 - src.t1), abs=2 * TP.tau)
    assert trace_energy(TP.times, np.ones((TP.N + 1, 1)), [1.0]) == pytest.approx(2.0)
    with pytest.raises(ConfigurationError):
        reflection_metric(flat_traces(TP, 1.0, 0.0), src, TimePartition(2.0, 0.004))


def test_homogeneous_metric_is_small(small_mesh):
    src, tp = SourceSpec(20.0), TimePartition(1.5, 0.005)
    _, traces = solve_state(small_mesh, np.ones(small_mesh.tri.n_elements), src, tp, obstacle=False)
    assert reflection_metric(traces, src, tp) <= 0.02 * incident_energy(traces, src, tp)
    _, scat = solve_state(small_mesh, design_guess(small_mesh.tri, 2.5), src, tp, obstacle=True)
    assert reflection_metric(scat, src, tp) > reflection_metric(traces, src, tp)


def test_spectrum_report(small_mesh):
    src, tp = SourceSpec(20.0), TimePartition(1.0, 0.005)
    _, traces = solve_state(small_mesh, np.ones(small_mesh.tri.n_elements), src, tp)
    rep = spectrum_report(traces, 20.0, n=32)
    assert rep["freqs"].shape == rep["back"].shape == rep["trans"].shape == (32,)
    assert rep["back"].max() > 0

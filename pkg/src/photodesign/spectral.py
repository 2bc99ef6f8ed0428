"""Time-domain DFT of boundary traces and the backscattered-energy metric."""
from __future__ import annotations

import numpy as np

from .errors import ConfigurationError
from .objective import time_weights


def default_frequencies(omega, n=128):
    """Linear frequencies on [0, omega / pi], i.e. up to twice the carrier."""
    return np.linspace(0.0, omega / np.pi, n)


def dft_modulus(values, tp, freqs):
    """``|integral_0^T u(t) exp(-2 pi i f t) dt|`` by the trapezoidal rule.

    ``tp`` is a TimePartition or the array of sample times.

    ``values`` is (n_times,) or (n_times, n_nodes); the result is
    (n_freqs,) or (n_freqs, n_nodes).  A constant trace ``c`` gives ``c T`` at
    ``f = 0`` to rounding.
    """
    times = np.asarray(getattr(tp, "times", tp), dtype=float)
    values = np.asarray(values, dtype=float)
    freqs = np.atleast_1d(np.asarray(freqs, dtype=float))
    if values.shape[0] != times.size:
        raise ConfigurationError("trace length does not match the time grid")
    if times.size < 2:
        raise ConfigurationError("need at least two time levels")
    w = time_weights(times)
    kernel = np.exp(-2j * np.pi * np.outer(freqs, times)) * w[None, :]
    return np.abs(kernel @ values)


def trace_energy(times, values, weights, t_start=0.0):
    """``integral_{t >= t_start} sum_i sigma_i u_i(t)^2 dt`` (trapezoidal)."""
    times = np.asarray(times)
    w = time_weights(times) * (times >= t_start - 1e-12)
    return float(w @ (np.asarray(values) ** 2 @ np.asarray(weights)))


def _check_partition(traces, tp):
    if tp is not None and len(traces.times) != tp.N + 1:
        raise ConfigurationError("traces do not match the time partition")


def reflection_metric(traces, src, tp=None):
    """Backscattered energy: bottom-boundary trace energy after the source stops."""
    _check_partition(traces, tp)
    back = traces.subset(1)
    return trace_energy(back.times, back.values, back.weights, t_start=src.t1)


def incident_energy(traces, src, tp=None):
    """Bottom-boundary trace energy while the source is on."""
    _check_partition(traces, tp)
    back = traces.subset(1)
    mask = back.times <= src.t1 + 1e-12
    return trace_energy(back.times[mask], back.values[mask], back.weights)


def spectrum_report(traces, omega, n=128):
    """Node-summed DFT moduli of the bottom and top traces."""
    freqs = default_frequencies(omega, n)
    out = {"freqs": freqs}
    for side, name in ((1, "back"), (2, "trans")):
        sub = traces.subset(side)
        out[name] = dft_modulus(sub.values, sub.times, freqs) @ sub.weights
    return out

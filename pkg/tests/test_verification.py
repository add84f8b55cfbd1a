import numpy as np
import pytest

from snse.verification import (Study, benchmark_gradient, benchmark_laplacian, benchmark_pressure,
                               benchmark_pressure_gradient, benchmark_velocity, steady_forcing)

PTS = np.random.default_rng(0).uniform(0.05, 0.95, (2, 50))
EPS = 1e-5


def _fd(f, x, y):
    fx = (np.array(f(x + EPS, y)) - np.array(f(x - EPS, y))) / (2 * EPS)
    fy = (np.array(f(x, y + EPS)) - np.array(f(x, y - EPS))) / (2 * EPS)
    return fx, fy


def test_benchmark_velocity_divergence_free_and_traceless():
    g = benchmark_gradient(*PTS)
    assert np.abs(g[0][0] + g[1][1]).max() < 1e-12
    s = np.linspace(0, 1, 11)
    for x, y in [(s, 0 * s), (s, 1 + 0 * s), (0 * s, s), (1 + 0 * s, s)]:
        assert np.abs(np.array(benchmark_velocity(x, y))).max() < 1e-12


def test_benchmark_derivatives():
    x, y = PTS
    fx, fy = _fd(benchmark_velocity, x, y)
    g = benchmark_gradient(x, y)
    assert np.allclose(g[:, 0], fx, atol=1e-6) and np.allclose(g[:, 1], fy, atol=1e-6)
    gx, gy = _fd(lambda a, b: benchmark_gradient(a, b)[:, 0], x, y)
    hx, hy = _fd(lambda a, b: benchmark_gradient(a, b)[:, 1], x, y)
    lap = np.array(benchmark_laplacian(x, y))
    assert np.allclose(gx + hy, lap, atol=1e-4)
    px, py = _fd(benchmark_pressure, x, y)
    assert np.allclose(np.array([px, py]), np.array(benchmark_pressure_gradient(x, y)), atol=1e-8)


def test_forcing_components():
    x, y = PTS
    stokes = np.array(steady_forcing(2.0, convection=False)(x, y))
    full = np.array(steady_forcing(2.0)(x, y))
    u = np.array(benchmark_velocity(x, y))
    g = benchmark_gradient(x, y)
    conv = np.einsum("d...,cd...->c...", u, g)
    assert np.allclose(full - stokes, conv, atol=1e-12)
    assert np.allclose(stokes, -2.0 * np.array(benchmark_laplacian(x, y))
                       + np.array(benchmark_pressure_gradient(x, y)), atol=1e-12)


def test_study_rate():
    h = np.array([0.5, 0.25, 0.125])
    s = Study(h, {"e": 3 * h ** 2})
    assert s.rate("e") == pytest.approx(2.0, abs=1e-12)
    assert np.array_equal(s.e, 3 * h ** 2)
    with pytest.raises(AttributeError):
        s.missing

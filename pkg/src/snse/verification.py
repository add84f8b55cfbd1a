"""Deterministic verification studies: projection rates and a manufactured
steady solution reached by time stepping."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fem import (assemble_static, field_errors, pressure_l2_error, project_divfree,
                  project_pressure)
from .mesh import mesh_hierarchy
from .noise import NoiseModel
from .stepper import Scheme, SchemeConfig

PI = math.pi
_MODE = NoiseModel(J=1, kind="additive")
_SCALE = 1.0 / math.sqrt(_MODE.mode_norm_sq(0))


def benchmark_velocity(x, y):
    """curl(sin^2(pi x) sin^2(pi y)), unit L2 norm."""
    bx, by = _MODE.field(0, x, y)
    return _SCALE * bx, _SCALE * by


def benchmark_gradient(x, y):
    """grad[c][d] = d u_c / d x_d of the benchmark velocity."""
    jac = _MODE.jacobian(0, x, y)
    return np.array([[_SCALE * jac[0][0], _SCALE * jac[0][1]],
                     [_SCALE * jac[1][0], _SCALE * jac[1][1]]])


def benchmark_laplacian(x, y):
    s2x, s2y = np.sin(2 * PI * x), np.sin(2 * PI * y)
    c2x, c2y = np.cos(2 * PI * x), np.cos(2 * PI * y)
    k = 2 * _SCALE * PI ** 3
    return k * s2y * (2 * c2x - 1), k * s2x * (1 - 2 * c2y)


def benchmark_pressure(x, y):
    return np.cos(PI * x) * np.cos(PI * y)


def benchmark_pressure_gradient(x, y):
    return -PI * np.sin(PI * x) * np.cos(PI * y), -PI * np.cos(PI * x) * np.sin(PI * y)


def steady_forcing(mu: float = 1.0, convection: bool = True):
    """f = -mu Lap u + (u.grad) u + grad p for the benchmark pair."""

    def f(x, y):
        lx, ly = benchmark_laplacian(x, y)
        px, py = benchmark_pressure_gradient(x, y)
        fx, fy = -mu * lx + px, -mu * ly + py
        if convection:
            ux, uy = benchmark_velocity(x, y)
            g = benchmark_gradient(x, y)
            fx = fx + ux * g[0][0] + uy * g[0][1]
            fy = fy + ux * g[1][0] + uy * g[1][1]
        return fx, fy

    return f


@dataclass
class Study:
    h: np.ndarray
    errors: dict

    def rate(self, name: str) -> float:
        """Fitted order p in err ~ h^p (least squares over all levels)."""
        return float(np.polyfit(np.log(self.h), np.log(self.errors[name]), 1)[0])

    def __getattr__(self, name):
        try:
            return self.errors[name]
        except KeyError:
            raise AttributeError(name) from None


def projection_study(base_n: int = 4, levels: int = 4) -> Study:
    """Errors of the discrete solenoidal projection of the benchmark velocity
    (L2 and H1 seminorm) and of the P0 projection of the benchmark pressure."""
    h, l2, h1, pl2 = [], [], [], []
    for mesh in mesh_hierarchy(base_n, levels):
        ops = assemble_static(mesh)
        u = project_divfree(ops, benchmark_velocity)
        a, b = field_errors(ops, u, benchmark_velocity, benchmark_gradient)
        p = project_pressure(ops, benchmark_pressure)
        h.append(1.0 / round(1.0 / mesh.edge_lengths().min()))
        l2.append(a)
        h1.append(b)
        pl2.append(pressure_l2_error(ops, p, benchmark_pressure))
    return Study(np.array(h), {"l2": np.array(l2), "h1": np.array(h1), "p_l2": np.array(pl2)})


def manufactured_study(base_n: int = 4, levels: int = 4, mu: float = 1.0, T: float = 1.0,
                       M: int = 20, theta: float = 0.5) -> Study:
    """Noise-free scheme with the steady forcing, started from the projected
    benchmark field; errors of the velocity at T and the pressure at T."""
    forcing = steady_forcing(mu)
    h, l2, h1, pl2, drift = [], [], [], [], []
    for mesh in mesh_hierarchy(base_n, levels):
        ops = assemble_static(mesh)
        scheme = Scheme(ops, None, SchemeConfig(mu=mu, T=T, M=M, theta=theta, forcing=forcing))
        u0 = project_divfree(ops, benchmark_velocity)
        traj = scheme.run(u0, np.zeros((M, 1)), store_every=M - 1 if M > 1 else 1)
        u, p = traj.velocity(M), traj.pressures[-1]
        a, b = field_errors(ops, u, benchmark_velocity, benchmark_gradient)
        h.append(1.0 / round(1.0 / mesh.edge_lengths().min()))
        l2.append(a)
        h1.append(b)
        pl2.append(pressure_l2_error(ops, p, benchmark_pressure))
        du = u - traj.velocity(M - 1)
        drift.append(math.sqrt(ops.l2_norm_sq(du)))
    return Study(np.array(h), {"l2": np.array(l2), "h1": np.array(h1), "p_l2": np.array(pl2),
                               "drift": np.array(drift)})

"""Semi-implicit Euler / mixed FEM time stepping for stochastic Navier-Stokes.

One step solves, for the free velocity dofs,

    (M + tau*mu*A + tau*N_theta(u_{m-1})) u_m - tau*B^T p_m
        = M u_{m-1} + Phi(u_{m-1}) dW_m [+ tau*F],       B u_m = 0,

i.e. implicit viscosity, semi-implicit convection (transport by the previous
iterate) and explicit noise. The truncated variant scales tau and the noise
by tau_m^R / tau in {0, 1} according to a discrete stopping schedule.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .fem import AssembledOperators, load_vector
from .linsolve import KRYLOV_THRESHOLD, BlockDiagonal, SaddleSolver
from .noise import DiscreteNoise, WienerPath

log = logging.getLogger(__name__)

@dataclass(frozen=True)
class SchemeConfig:
    mu: float = 1.0
    T: float = 0.5
    M: int = 16
    theta: float = 0.5
    forcing: Callable | None = None
    R: float | None = None
    tol: float = 1e-10
    solver: str = "auto"

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if not self.T > 0 or int(self.M) != self.M or self.M < 1:
            raise ValueError("T must be positive and M a positive integer")
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta must lie in [0, 1], got {self.theta}")
        if self.R is not None and not self.R > 0:
            raise ValueError("R must be positive when set")
        if self.solver not in ("auto", "direct", "krylov"):
            raise ValueError(f"unknown solver {self.solver!r}")

    @property
    def tau(self) -> float:
        return self.T / self.M


@dataclass
class Trajectory:
    """Iterates of one run. Velocities are full coefficient vectors (boundary
    dofs zero) stored for the indices in ``stored``; diagnostics cover all
    indices 0..M."""

    tau: float
    stored: np.ndarray
    velocities: np.ndarray
    pressures: np.ndarray
    energy: np.ndarray
    gradnorm: np.ndarray
    div_residual: np.ndarray
    energy_residual: np.ndarray
    iterations: np.ndarray = field(repr=False)

    @property
    def M(self) -> int:
        return len(self.energy) - 1

    @property
    def times(self) -> np.ndarray:
        return self.tau * np.arange(self.M + 1)

    def velocity(self, m: int) -> np.ndarray:
        idx = np.searchsorted(self.stored, m)
        if idx >= len(self.stored) or self.stored[idx] != m:
            raise KeyError(f"step {m} was not stored")
        return self.velocities[idx]

    def stability_functional(self) -> float:
        """max_m ||u_m||^2 + tau * sum_m ||grad u_m||^2 over m = 1..M."""
        return float(self.energy[1:].max() + self.tau * np.sum(self.gradnorm[1:] ** 2))

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["m", "t", "energy", "gradnorm", "div_residual", "energy_identity_residual"])
            for m in range(self.M + 1):
                w.writerow([m, repr(float(m * self.tau)), repr(float(self.energy[m])),
                            repr(float(self.gradnorm[m])), repr(float(self.div_residual[m])),
                            repr(float(self.energy_residual[m]))])


@dataclass(frozen=True)
class StoppingSchedule:
    """Discrete stopping times t_m^R = t_min(m, n*) and step weights tau_m^R / tau."""

    R: float
    gradnorm_sequence: np.ndarray
    n_star: int
    active_steps: np.ndarray  # (M,) weights for steps m = 1..M
    stopping_times: np.ndarray  # (M + 1,) t_m^R for m = 0..M

    @property
    def stopped(self) -> bool:
        return self.n_star < len(self.active_steps)


def discrete_stopping(gradnorm_sequence, R: float, tau: float) -> StoppingSchedule:
    """Schedule from reference gradient norms at t_0..t_M.

    n* is the last grid index such that all norms up to it stay below R; the
    scheme advances on steps m <= n* and is frozen afterwards.
    """
    g = np.asarray(gradnorm_sequence, dtype=float)
    if g.ndim != 1 or len(g) < 2:
        raise ValueError("need gradient norms at t_0..t_M with M >= 1")
    M = len(g) - 1
    hits = np.flatnonzero(g >= R)
    n_star = M if len(hits) == 0 else max(int(hits[0]) - 1, 0)
    m = np.arange(1, M + 1)
    active = (m <= n_star).astype(float)
    times = tau * np.minimum(np.arange(M + 1), n_star)
    return StoppingSchedule(float(R), g, n_star, active, times)


class Scheme:
    """The fully discrete scheme on one finite element space."""

    def __init__(self, ops: AssembledOperators, noise: DiscreteNoise | None, config: SchemeConfig):
        self.ops = ops
        self.noise = noise
        self.config = config
        dm = ops.dofmap
        self.dofmap = dm
        self.nf = len(dm.free_nodes)
        tau, mu = config.tau, config.mu
        self._Ms = ops.Ms_free
        self._As = ops.As_free
        self._M = ops.M_free
        self._A = ops.A_free
        self._base = self._Ms.data + tau * mu * self._As.data
        self._B = ops.B_free
        self._Bfull = ops.B
        self._forcing = None
        if config.forcing is not None:
            self._forcing = tau * dm.restrict(load_vector(ops, config.forcing))
        strategy = config.solver
        if strategy == "auto":
            strategy = "krylov" if dm.free_count > KRYLOV_THRESHOLD else "direct"
        K_ref = None
        if strategy == "krylov":
            K_ref = BlockDiagonal(ops.pattern_free.matrix(self._base))
        self.solver = SaddleSolver(self._B, ops.pressure_mass, tau, config.tol,
                                   strategy=strategy, K_ref=K_ref)

    # -- pieces --------------------------------------------------------------
    def system_matrix(self, w_full: np.ndarray) -> BlockDiagonal:
        """Free-dof velocity block M + tau*mu*A + tau*N_theta(w)."""
        cfg = self.config
        data = self._base + cfg.tau * self.ops.convection.free_data(w_full, cfg.theta)
        return BlockDiagonal(self.ops.pattern_free.matrix(data))

    def noise_load(self, u_free: np.ndarray, increment: np.ndarray) -> np.ndarray:
        if self.noise is None or self.noise.model.kind == "none":
            return np.zeros(len(u_free))
        return self.noise.load(u_free, increment, free=True)

    def step(self, u_prev: np.ndarray, increment: np.ndarray, weight: float = 1.0,
             p_prev: np.ndarray | None = None):
        """Advance one step from full velocity ``u_prev``.

        Returns (u, p, load) with ``u`` the full velocity vector, ``p`` the
        zero-mean pressure and ``load`` the free-dof noise load. ``weight`` is
        tau_m^R / tau; zero freezes the state.
        """
        dm = self.dofmap
        uf = dm.restrict(u_prev)
        if weight == 0.0:
            p = np.zeros(self.ops.mesh.n_triangles) if p_prev is None else p_prev
            return u_prev.copy(), p, np.zeros(len(uf))
        if weight != 1.0:
            raise ValueError("step weights must be 0 or 1")
        K = self.system_matrix(u_prev)
        load = self.noise_load(uf, increment)
        rhs = self._M @ uf + load
        if self._forcing is not None:
            rhs = rhs + self._forcing
        x0 = None
        if p_prev is not None:
            x0 = (uf, p_prev)
        u, p = self.solver.solve(K, rhs, x0=x0)
        return dm.extend(u), p, load

    def energy_identity_residual(self, u_prev, u, load) -> float:
        """Relative residual of
        1/2|u|^2 - 1/2|u_prev|^2 + 1/2|u - u_prev|^2 + tau mu |grad u|^2 = <load + tau F, u>."""
        dm = self.dofmap
        a, b = dm.restrict(u), dm.restrict(u_prev)
        M, A, cfg = self._M, self._A, self.config
        d = a - b
        terms = [0.5 * a @ (M @ a), 0.5 * b @ (M @ b), 0.5 * d @ (M @ d),
                 cfg.tau * cfg.mu * a @ (A @ a), load @ a]
        if self._forcing is not None:
            terms[-1] += self._forcing @ a
        res = terms[0] - terms[1] + terms[2] + terms[3] - terms[4]
        scale = max(abs(t) for t in terms)
        return 0.0 if scale == 0.0 else float(abs(res) / scale)

    # -- runs ----------------------------------------------------------------
    def _increments(self, path) -> np.ndarray:
        inc = path.increments if isinstance(path, WienerPath) else np.asarray(path, dtype=float)
        if inc.shape[0] != self.config.M:
            raise ValueError(f"path has {inc.shape[0]} steps, scheme expects M={self.config.M}")
        if isinstance(path, WienerPath) and abs(path.tau - self.config.tau) > 1e-12 * self.config.tau:
            raise ValueError("path time step differs from the scheme time step")
        J = self.noise.J if self.noise is not None else inc.shape[1]
        if inc.shape[1] != J:
            raise ValueError("path and noise model have different numbers of modes")
        return inc

    def run(self, u0: np.ndarray, path, weights=None, store_every: int = 1) -> Trajectory:
        cfg = self.config
        inc = self._increments(path)
        Mn = cfg.M
        weights = np.ones(Mn) if weights is None else np.asarray(weights, dtype=float)
        stored = np.arange(0, Mn + 1, store_every)
        if stored[-1] != Mn:
            stored = np.append(stored, Mn)
        npr = self.ops.mesh.n_triangles
        vel = np.empty((len(stored), self.dofmap.velocity_dofs))
        pres = np.empty((len(stored), npr))
        energy = np.empty(Mn + 1)
        grad = np.empty(Mn + 1)
        divr = np.empty(Mn + 1)
        eres = np.zeros(Mn + 1)
        its = np.zeros(Mn + 1, dtype=np.int64)
        u = np.asarray(u0, dtype=float).copy()
        p = np.zeros(npr)
        slot = 0

        def record(m, u, p):
            nonlocal slot
            energy[m] = self.ops.l2_norm_sq(u)
            grad[m] = np.sqrt(self.ops.grad_norm_sq(u))
            divr[m] = np.linalg.norm(self._Bfull @ u)
            if slot < len(stored) and stored[slot] == m:
                vel[slot], pres[slot] = u, p
                slot += 1

        record(0, u, p)
        for m in range(1, Mn + 1):
            u_new, p, load = self.step(u, inc[m - 1], weights[m - 1], p_prev=p)
            its[m] = self.solver.last_iterations if weights[m - 1] else 0
            eres[m] = self.energy_identity_residual(u, u_new, load) if weights[m - 1] else 0.0
            u = u_new
            record(m, u, p)
        return Trajectory(cfg.tau, stored, vel, pres, energy, grad, divr, eres, its)


def run_path(scheme: Scheme, path, u0: np.ndarray, store_every: int = 1) -> Trajectory:
    """Plain scheme driven by ``path`` (already on the scheme's time grid)."""
    return scheme.run(u0, path, store_every=store_every)


def run_truncated(scheme: Scheme, path, u0: np.ndarray, schedule: StoppingSchedule,
                  store_every: int = 1) -> Trajectory:
    """Auxiliary scheme: plain steps while active, frozen state afterwards."""
    if len(schedule.active_steps) != scheme.config.M:
        raise ValueError("schedule length does not match the number of steps")
    return scheme.run(u0, path, weights=schedule.active_steps, store_every=store_every)

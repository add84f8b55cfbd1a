"""Diffusion operator built from solenoidal modes, and Wiener path sampling.

Mode ``k = (a, b)`` has stream function ``sin^2(a pi x) sin^2(b pi y)``; its
curl ``b_k`` is divergence free and vanishes on the boundary of the unit
square. The operator acts as

    Phi(u) e_k = gamma_k * g_k(u) * b_k,   gamma_k = amplitude * (a^2 + b^2)^(-s)

with ``g_k = 1`` (additive) or ``g_k(u) = sin(<u, w_k>)`` (multiplicative),
``w_k = probe_scale * b_k / ||b_k||``.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .fem import LOAD_RULE, AssembledOperators, load_vector

KINDS = ("additive", "multiplicative", "none")


def _axis_norm_sq(freq: int, order: int) -> float:
    """int_0^1 (d^order/dx^order sin^2(freq pi x))^2 dx."""
    if order == 0:
        return 3.0 / 8.0
    return (2.0 * freq * math.pi) ** (2 * order) / 8.0


@dataclass(frozen=True)
class NoiseModel:
    J: int = 16
    decay: float = 2.0
    kind: str = "multiplicative"
    amplitude: float = 1.0
    probe_scale: float = 1.0

    def __post_init__(self):
        if self.J < 1:
            raise ValueError("J must be >= 1")
        if self.kind not in KINDS:
            raise ValueError(f"noise kind must be one of {KINDS}, got {self.kind!r}")
        if self.decay <= 0:
            raise ValueError("decay exponent must be positive")

    @cached_property
    def modes(self) -> np.ndarray:
        """(J, 2) wave numbers ordered by |k|^2, then lexicographically."""
        side = int(math.ceil(math.sqrt(self.J))) + 2
        ks = [(a, b) for a in range(1, side + 1) for b in range(1, side + 1)]
        ks.sort(key=lambda k: (k[0] ** 2 + k[1] ** 2, k))
        return np.array(ks[:self.J])

    @cached_property
    def gains(self) -> np.ndarray:
        if self.kind == "none":
            return np.zeros(self.J)
        k2 = np.sum(self.modes ** 2, axis=1).astype(float)
        return self.amplitude * k2 ** (-self.decay)

    # -- analytic mode fields ------------------------------------------------
    def stream(self, j: int, x, y):
        a, b = self.modes[j]
        return np.sin(a * np.pi * x) ** 2 * np.sin(b * np.pi * y) ** 2

    def field(self, j: int, x, y):
        """b_j = (d psi/dy, -d psi/dx)."""
        a, b = self.modes[j]
        sx, sy = np.sin(a * np.pi * x), np.sin(b * np.pi * y)
        return (b * np.pi * sx ** 2 * np.sin(2 * b * np.pi * y),
                -a * np.pi * np.sin(2 * a * np.pi * x) * sy ** 2)

    def jacobian(self, j: int, x, y):
        """((d bx/dx, d bx/dy), (d by/dx, d by/dy))."""
        a, b = self.modes[j]
        pi2 = np.pi ** 2
        s2ax, s2by = np.sin(2 * a * np.pi * x), np.sin(2 * b * np.pi * y)
        mixed = a * b * pi2 * s2ax * s2by
        return ((mixed, 2 * b * b * pi2 * np.sin(a * np.pi * x) ** 2 * np.cos(2 * b * np.pi * y)),
                (-2 * a * a * pi2 * np.cos(2 * a * np.pi * x) * np.sin(b * np.pi * y) ** 2, -mixed))

    def divergence(self, j: int, x, y):
        (dxx, _), (_, dyy) = self.jacobian(j, x, y)
        return dxx + dyy

    def mode_norm_sq(self, j: int, order: int = 0) -> float:
        """Exact squared W^{order,2} norm of b_j (separable closed form)."""
        a, b = self.modes[j]
        total = 0.0
        for i in range(order + 1):
            for m in range(order + 1 - i):
                total += (_axis_norm_sq(a, i) * _axis_norm_sq(b, m + 1)
                          + _axis_norm_sq(a, i + 1) * _axis_norm_sq(b, m))
        return total

    def probe(self, j: int, x, y):
        scale = self.probe_scale / math.sqrt(self.mode_norm_sq(j))
        bx, by = self.field(j, x, y)
        return scale * bx, scale * by

    def hs_norm_sq(self, order: int = 0) -> float:
        """sum_k gamma_k^2 ||b_k||^2_{W^{order,2}} (additive Hilbert-Schmidt norm)."""
        return float(sum(self.gains[j] ** 2 * self.mode_norm_sq(j, order) for j in range(self.J)))

    @property
    def lipschitz_constant(self) -> float:
        """Analytic L_Phi; zero unless the model is multiplicative."""
        if self.kind != "multiplicative":
            return 0.0
        return math.sqrt(sum(self.gains[j] ** 2 * self.mode_norm_sq(j) * self.probe_scale ** 2
                             for j in range(self.J)))


class DiscreteNoise:
    """A noise model bound to one finite element space.

    Mode and probe integrals against the P2 basis are precomputed, so the
    load of one step is a dense (n_dofs x J) product.
    """

    def __init__(self, model: NoiseModel, ops: AssembledOperators):
        self.model = model
        self.ops = ops
        J = model.J
        self.mode_loads = np.column_stack([load_vector(ops, lambda x, y, j=j: model.field(j, x, y))
                                           for j in range(J)])
        self.probe_loads = np.column_stack([load_vector(ops, lambda x, y, j=j: model.probe(j, x, y))
                                            for j in range(J)])
        free = ops.dofmap.free_dofs
        self.mode_loads_free = np.ascontiguousarray(self.mode_loads[free])
        self.probe_loads_free = np.ascontiguousarray(self.probe_loads[free])
        rule = LOAD_RULE
        x, y = np.einsum("qi,tid->dtq", rule.points, ops.mesh.vertices[ops.mesh.triangles])
        weights = ops.mesh.areas[:, None] * rule.weights[None, :]

        def qnorm_sq(f):
            fx, fy = f(x, y)
            return float(np.sum(weights * (fx ** 2 + fy ** 2)))

        self.mode_norm_sq = np.array([qnorm_sq(lambda x, y, j=j: model.field(j, x, y)) for j in range(J)])
        self.probe_norm_sq = np.array([qnorm_sq(lambda x, y, j=j: model.probe(j, x, y)) for j in range(J)])

    @property
    def J(self) -> int:
        return self.model.J

    def _check(self, u, free):
        n = len(self.ops.dofmap.free_dofs) if free else self.ops.dofmap.velocity_dofs
        if np.shape(u) != (n,):
            raise ValueError(f"velocity vector has shape {np.shape(u)}, expected ({n},)")

    def modulation(self, u: np.ndarray, free: bool = False) -> np.ndarray:
        if self.model.kind != "multiplicative":
            return np.ones(self.J)
        self._check(u, free)
        probes = self.probe_loads_free if free else self.probe_loads
        return np.sin(probes.T @ u)

    def coefficients(self, u: np.ndarray, free: bool = False) -> np.ndarray:
        """gamma_k g_k(u) for every mode."""
        return self.model.gains * self.modulation(u, free)

    def load(self, u: np.ndarray, increment: np.ndarray, free: bool = False) -> np.ndarray:
        """int Phi(u) dW . phi_i = sum_k gamma_k g_k(u) dW_k int b_k . phi_i."""
        increment = np.asarray(increment, dtype=float)
        if increment.shape != (self.J,):
            raise ValueError(f"increment has {increment.shape} entries, model has J={self.J}")
        loads = self.mode_loads_free if free else self.mode_loads
        return loads @ (self.coefficients(u, free) * increment)

    @property
    def lipschitz_constant(self) -> float:
        """L_Phi with mode and probe norms evaluated by mesh quadrature."""
        if self.model.kind != "multiplicative":
            return 0.0
        return float(np.sqrt(np.sum(self.model.gains ** 2 * self.mode_norm_sq * self.probe_norm_sq)))

    def hs_distance(self, u: np.ndarray, v: np.ndarray) -> float:
        """||Phi(u) - Phi(v)||_{L2(U; L2)}."""
        dg = self.coefficients(u) - self.coefficients(v)
        return float(np.sqrt(np.sum(dg ** 2 * self.mode_norm_sq)))


def lipschitz_check(noise: DiscreteNoise, trials: int, rng: np.random.Generator | None = None,
                    scale: float = 1.0) -> float:
    """Largest observed ||Phi(u)-Phi(v)||_HS / ||u-v||_L2 over random pairs."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = rng if rng is not None else np.random.default_rng(0)
    dm = noise.ops.dofmap
    best = 0.0
    for _ in range(trials):
        u = dm.extend(scale * rng.standard_normal(dm.free_count))
        # mixing a near-copy probes the small-distance regime as well
        v = u + dm.extend(scale * 10.0 ** rng.uniform(-4, 0) * rng.standard_normal(dm.free_count))
        d = np.sqrt(noise.ops.l2_norm_sq(u - v))
        if d == 0.0:
            continue
        best = max(best, noise.hs_distance(u, v) / d)
    return best


# -- Wiener paths -------------------------------------------------------------

def sample_seed(master_seed: int, sample_index: int) -> int:
    """64-bit seed of one Monte-Carlo sample, independent of scheduling."""
    ss = np.random.SeedSequence(master_seed, spawn_key=(sample_index,))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _quantum(tau: float, M: int) -> float:
    # increments are multiples of this power of two and bounded by 16 sqrt(tau),
    # so every partial sum over <= M of them is exact in double precision
    e = math.ceil(math.log2(math.sqrt(tau)))
    bits = 48 - max(0, math.ceil(math.log2(M)))
    return math.ldexp(1.0, e - bits)


@dataclass(frozen=True, eq=False)
class WienerPath:
    """J independent Brownian increments on a grid, derived from a fine grid.

    ``fine`` holds the finest increments; ``factor`` fine steps make one step
    of this path. All coarse increments are exact block sums of ``fine``.
    """

    seed: int
    tau_fine: float
    fine: np.ndarray = field(repr=False)
    factor: int = 1

    @property
    def M_fine(self) -> int:
        return self.fine.shape[0]

    @property
    def J(self) -> int:
        return self.fine.shape[1]

    @property
    def M(self) -> int:
        return self.M_fine // self.factor

    @property
    def tau(self) -> float:
        return self.tau_fine * self.factor

    @cached_property
    def increments(self) -> np.ndarray:
        if self.factor == 1:
            return self.fine
        out = self.fine.reshape(self.M, self.factor, self.J).sum(axis=1)
        out.setflags(write=False)
        return out

    def total_displacement(self) -> np.ndarray:
        return self.increments.sum(axis=0)

    def with_increment(self, m: int, values: np.ndarray) -> WienerPath:
        """Copy with fine increment row ``m`` replaced (testing causality)."""
        fine = self.fine.copy()
        fine[m] = values
        fine.setflags(write=False)
        return WienerPath(self.seed, self.tau_fine, fine, self.factor)

    # -- binary exchange: u64 seed, u64 M, u64 J, f64 tau, then f64 rows ----
    def dump(self, path) -> None:
        inc = np.ascontiguousarray(self.increments, dtype="<f8")
        header = struct.pack("<QQQd", self.seed % 2 ** 64, self.M, self.J, self.tau)
        Path(path).write_bytes(header + inc.tobytes())

    @classmethod
    def load(cls, path) -> WienerPath:
        raw = Path(path).read_bytes()
        seed, M, J, tau = struct.unpack("<QQQd", raw[:32])
        inc = np.frombuffer(raw[32:], dtype="<f8").astype(float).reshape(M, J)
        inc.setflags(write=False)
        return cls(seed, tau, inc, 1)


def sample_path(seed: int, M_fine: int, J: int, tau_fine: float) -> WienerPath:
    """i.i.d. N(0, tau_fine) increments, reproducible from ``seed``."""
    if M_fine < 1 or J < 1:
        raise ValueError("M_fine and J must be >= 1")
    if tau_fine <= 0:
        raise ValueError("tau_fine must be positive")
    rng = np.random.default_rng(seed)
    z = np.clip(rng.standard_normal((M_fine, J)), -15.0, 15.0)
    q = _quantum(tau_fine, M_fine)
    inc = np.round(z * (math.sqrt(tau_fine) / q)) * q
    inc.setflags(write=False)
    return WienerPath(int(seed), float(tau_fine), inc, 1)


def coarsen(path: WienerPath, factor: int) -> WienerPath:
    """The same Brownian path observed on a grid ``factor`` times coarser."""
    if factor < 1 or path.M % factor != 0:
        raise ValueError(f"factor {factor} does not divide the {path.M} steps of the path")
    return WienerPath(path.seed, path.tau_fine, path.fine, path.factor * factor)

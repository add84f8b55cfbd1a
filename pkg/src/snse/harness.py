"""Monte-Carlo driver: coupled multi-level runs, error functional, rates.

Each sample draws one Wiener path on the reference grid. The reference
solution and every compared level are advanced together in time, each level
consuming block sums of the same fine increments, and the error functional

    E = max_m |u_ref(t_m) - u_m|^2 + sum_m tau |grad(u_ref(t_m) - u_m)|^2,   m = 1..M

is accumulated on the reference mesh after exact prolongation of the coarse
P2 iterate. Results are reduced in sample order, so the output does not depend
on the number of worker processes.
"""
from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .fem import AssembledOperators, assemble_static, project_divfree, prolongation, vector_prolongation
from .linsolve import SaddleSolveError
from .mesh import mesh_hierarchy
from .noise import DiscreteNoise, NoiseModel, WienerPath, coarsen, sample_path, sample_seed
from .stepper import Scheme, SchemeConfig, discrete_stopping

log = logging.getLogger(__name__)

MAX_FAILURE_FRACTION = 0.01


class ExperimentError(RuntimeError):
    """Too many failed samples, or inconsistent inputs to the rate fit."""


@dataclass(frozen=True)
class ExperimentPlan:
    """Levels l = 1..levels use an (base_n 2^(l-1))^2 square mesh and
    steps_base 4^(l-1) time steps, so tau_l / h_l^2 is the same on every level.
    The reference is one refinement and four times more steps beyond the
    finest level."""

    levels: int = 3
    base_n: int = 4
    steps_base: int = 4
    N: int = 64
    seed: int = 0
    mu: float = 1.0
    T: float = 0.5
    theta: float = 0.5
    noise: NoiseModel = field(default_factory=NoiseModel)
    u0_energy: float = 1.0
    alpha: float = 0.45
    beta: float = 0.9
    xi: tuple[float, ...] = (0.01, 0.1, 1.0, 10.0)
    R: float | None = None
    R_quantile: float = 0.99
    bootstrap: int = 1000
    solver: str = "auto"

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.base_n < 1 or self.steps_base < 1:
            raise ValueError("base_n and steps_base must be >= 1")
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if not 0 < self.alpha < 0.5 or not 0 < self.beta < 1:
            raise ValueError("rate targets need 0 < alpha < 1/2 and 0 < beta < 1")
        if not self.xi or any(x <= 0 for x in self.xi):
            raise ValueError("xi grid must be non-empty and positive")
        if self.R is not None and not self.R > 0:
            raise ValueError("R must be positive when set")
        if not 0 < self.R_quantile <= 1:
            raise ValueError("R_quantile must lie in (0, 1]")
        if self.u0_energy < 0:
            raise ValueError("u0_energy must be non-negative")
        # validates mu, T, theta and the solver name
        SchemeConfig(mu=self.mu, T=self.T, theta=self.theta, solver=self.solver)

    # -- level geometry ------------------------------------------------------
    def n(self, level: int) -> int:
        """Mesh divisions of level 1..levels; levels + 1 is the reference."""
        return self.base_n * 2 ** (level - 1)

    def steps(self, level: int) -> int:
        return self.steps_base * 4 ** (level - 1)

    def h(self, level: int) -> float:
        return 1.0 / self.n(level)

    def tau(self, level: int) -> float:
        return self.T / self.steps(level)

    @property
    def reference_level(self) -> int:
        return self.levels + 1

    @property
    def M_reference(self) -> int:
        return self.steps(self.reference_level)

    def scheme_config(self, level: int) -> SchemeConfig:
        return SchemeConfig(mu=self.mu, T=self.T, M=self.steps(level), theta=self.theta,
                            solver=self.solver)


@dataclass(frozen=True)
class ErrorRecord:
    sample: int
    level: int
    h: float
    tau: float
    E: float
    stopped: bool


@dataclass(frozen=True)
class SampleResult:
    index: int
    errors: tuple[float, ...] = ()
    ref_gradnorm: np.ndarray | None = None
    error: str | None = None


@dataclass
class ExperimentResult:
    plan: ExperimentPlan
    records: list[ErrorRecord]
    failures: list[tuple[int, str]]
    R: float

    @property
    def stopped_fraction(self) -> float:
        samples = {r.sample: r.stopped for r in self.records}
        return sum(samples.values()) / len(samples) if samples else 0.0


def initial_field(x, y):
    """curl(sin^2(pi x) sin^2(pi y)) with unit L2 norm."""
    model = NoiseModel(J=1, kind="additive")
    bx, by = model.field(0, x, y)
    s = 1.0 / math.sqrt(model.mode_norm_sq(0))
    return s * bx, s * by


# -- per-process setup --------------------------------------------------------

@dataclass
class _Level:
    ops: AssembledOperators
    scheme: Scheme
    u0: np.ndarray
    P: object  # vector prolongation to the reference space (None on the reference)


_CACHE: dict = {}


def _setup(plan: ExperimentPlan, with_reference: bool = True) -> list[_Level]:
    key = (plan.levels, plan.base_n, plan.steps_base, plan.mu, plan.T, plan.theta,
           plan.noise, plan.u0_energy, plan.solver, with_reference)
    if key in _CACHE:
        return _CACHE[key]
    _CACHE.clear()
    top = plan.reference_level if with_reference else plan.levels
    meshes = mesh_hierarchy(plan.base_n, top)
    amp = math.sqrt(plan.u0_energy)
    levels = []
    for lev, mesh in enumerate(meshes, start=1):
        ops = assemble_static(mesh)
        noise = DiscreteNoise(plan.noise, ops) if plan.noise.kind != "none" else None
        scheme = Scheme(ops, noise, plan.scheme_config(lev))
        u0 = amp * project_divfree(ops, initial_field) if amp > 0 else np.zeros(ops.dofmap.velocity_dofs)
        levels.append(_Level(ops, scheme, u0, None))
    if with_reference:
        P = None
        for lev in range(len(levels) - 2, -1, -1):
            step = prolongation(levels[lev].ops.dofmap, levels[lev + 1].ops.dofmap)
            P = step if P is None else (P @ step).tocsr()
            levels[lev].P = vector_prolongation(P)
    _CACHE[key] = levels
    return levels


def sample_fine_path(plan: ExperimentPlan, index: int) -> WienerPath:
    return sample_path(sample_seed(plan.seed, index), plan.M_reference, plan.noise.J,
                       plan.tau(plan.reference_level))


def check_coupling(paths: list[WienerPath]) -> None:
    """All levels must see the same total displacement per mode, bitwise."""
    ref = paths[-1].total_displacement()
    for p in paths[:-1]:
        if not np.array_equal(p.total_displacement(), ref):
            raise ExperimentError(f"path coupling checksum mismatch on a grid with {p.M} steps")


def error_functional(ops: AssembledOperators, u_ref: np.ndarray, u: np.ndarray, tau: float,
                     P=None) -> float:
    """E for iterate arrays of shape (M + 1, n) at the coarse grid times;
    ``u`` is mapped into the space of ``ops`` by ``P`` when given. Index 0
    (the initial datum) does not enter."""
    u_ref, u = np.atleast_2d(u_ref), np.atleast_2d(u)
    if len(u_ref) != len(u):
        raise ValueError("trajectories have different numbers of grid points")
    emax, gsum = 0.0, 0.0
    for m in range(1, len(u)):
        e = u_ref[m] - (u[m] if P is None else P @ u[m])
        emax = max(emax, float(e @ (ops.M @ e)))
        gsum += tau * float(e @ (ops.A @ e))
    return emax + gsum


# -- one sample ---------------------------------------------------------------

def _coupled_errors(plan: ExperimentPlan, levels: list[_Level], fine: WienerPath):
    """Advance all levels against the reference; returns (E per level, reference gradnorms)."""
    ref = levels[-1]
    Mr = plan.M_reference
    strides = [Mr // plan.steps(lev) for lev in range(1, plan.levels + 1)]
    paths = [coarsen(fine, s) for s in strides] + [fine]
    check_coupling(paths)
    incs = [p.increments for p in paths]
    M, A = ref.ops.M, ref.ops.A
    u_ref, p_ref = ref.u0.copy(), np.zeros(ref.ops.mesh.n_triangles)
    state = [(lv.u0.copy(), np.zeros(lv.ops.mesh.n_triangles)) for lv in levels[:-1]]
    emax = np.zeros(plan.levels)
    gsum = np.zeros(plan.levels)
    gradnorm = np.empty(Mr + 1)
    gradnorm[0] = math.sqrt(ref.ops.grad_norm_sq(u_ref))
    for r in range(1, Mr + 1):
        u_ref, p_ref, _ = ref.scheme.step(u_ref, incs[-1][r - 1], 1.0, p_ref)
        gradnorm[r] = math.sqrt(ref.ops.grad_norm_sq(u_ref))
        for i, lv in enumerate(levels[:-1]):
            if r % strides[i]:
                continue
            m = r // strides[i]
            u, p, _ = lv.scheme.step(state[i][0], incs[i][m - 1], 1.0, state[i][1])
            state[i] = (u, p)
            e = u_ref - lv.P @ u
            emax[i] = max(emax[i], float(e @ (M @ e)))
            gsum[i] += plan.tau(i + 1) * float(e @ (A @ e))
    return tuple(float(x) for x in emax + gsum), gradnorm


def run_sample(plan: ExperimentPlan, index: int) -> SampleResult:
    try:
        with threadpool_limits(limits=1):
            levels = _setup(plan)
            errors, gradnorm = _coupled_errors(plan, levels, sample_fine_path(plan, index))
    except (SaddleSolveError, FloatingPointError, np.linalg.LinAlgError) as exc:
        log.warning("sample %d failed: %s", index, exc)
        return SampleResult(index, error=f"{type(exc).__name__}: {exc}")
    return SampleResult(index, errors, gradnorm)


def _map_samples(fn, plan: ExperimentPlan, indices, workers: int) -> list:
    indices = list(indices)
    if workers <= 1 or len(indices) <= 1:
        return [fn(plan, i) for i in indices]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(fn, [plan] * len(indices), indices, chunksize=1))
    return sorted(results, key=lambda r: r.index)


def _check_failures(failures: list, total: int) -> None:
    if len(failures) > MAX_FAILURE_FRACTION * total:
        raise ExperimentError(f"{len(failures)} of {total} samples failed (limit "
                              f"{MAX_FAILURE_FRACTION:.0%}); first: {failures[0][1]}")


def truncation_radius(plan: ExperimentPlan, ref_gradnorms: list[np.ndarray]) -> float:
    """Explicit R, or the R_quantile of per-sample maximal reference gradient
    norms. Stopping triggers at norms >= R, so the quantile is nudged upward:
    samples whose maximum equals the quantile are not stopped."""
    if plan.R is not None:
        return float(plan.R)
    peaks = np.array([g.max() for g in ref_gradnorms])
    q = float(np.quantile(peaks, plan.R_quantile))
    return float(np.nextafter(q, np.inf)) if q > 0 else float(np.finfo(float).tiny)


def run_experiment(plan: ExperimentPlan, workers: int = 1) -> ExperimentResult:
    results = _map_samples(run_sample, plan, range(plan.N), workers)
    failures = [(r.index, r.error) for r in results if r.error is not None]
    _check_failures(failures, plan.N)
    good = [r for r in results if r.error is None]
    R = truncation_radius(plan, [r.ref_gradnorm for r in good])
    Mr = plan.M_reference
    records = []
    for r in good:
        for lev in range(1, plan.levels + 1):
            stride = Mr // plan.steps(lev)
            sched = discrete_stopping(r.ref_gradnorm[::stride], R, plan.tau(lev))
            records.append(ErrorRecord(r.index, lev, plan.h(lev), plan.tau(lev),
                                       r.errors[lev - 1], sched.stopped))
    return ExperimentResult(plan, records, failures, R)


# -- rates ----------------------------------------------------------------------

@dataclass
class RateReport:
    levels: list[int]
    h: np.ndarray
    tau: np.ndarray
    medians: np.ndarray
    counts: np.ndarray
    slope: float
    ci: tuple[float, float]
    xi: tuple[float, ...]
    exceedance: np.ndarray  # (len(xi), levels)

    def exceedance_nonincreasing(self, xi_index: int) -> bool:
        return bool(np.all(np.diff(self.exceedance[xi_index]) <= 0))


def _fit_slope(log_h, log_med):
    return float(np.polyfit(log_h, log_med, 1)[0])


def estimate_rates(records: list[ErrorRecord], alpha: float = 0.45, beta: float = 0.9,
                   xi=(0.01, 0.1, 1.0, 10.0), bootstrap: int = 1000, seed: int = 0,
                   min_samples: int = 32) -> RateReport:
    """Least-squares slope of log median(E) against log h, bootstrap CI over
    samples (levels resampled jointly) and exceedance frequencies
    P[E > xi (h^(2 beta) + tau^(2 alpha))]."""
    levels = sorted({r.level for r in records})
    if len(levels) < 3:
        raise ExperimentError(f"rate fit needs >= 3 levels, got {len(levels)}")
    samples = sorted({r.sample for r in records})
    if len(samples) < min_samples:
        raise ExperimentError(f"rate fit needs >= {min_samples} samples, got {len(samples)}")
    col = {s: i for i, s in enumerate(samples)}
    E = np.full((len(levels), len(samples)), np.nan)
    h = np.empty(len(levels))
    tau = np.empty(len(levels))
    for r in records:
        li = levels.index(r.level)
        E[li, col[r.sample]] = r.E
        h[li], tau[li] = r.h, r.tau
    counts = np.sum(~np.isnan(E), axis=1)
    med = np.nanmedian(E, axis=1)
    if np.any(med <= 0):
        raise ExperimentError("degenerate (zero) median error on some level")
    log_h = np.log(h)
    slope = _fit_slope(log_h, np.log(med))
    rng = np.random.default_rng(seed)
    boots = np.empty(bootstrap)
    for b in range(bootstrap):
        pick = rng.integers(0, len(samples), len(samples))
        mb = np.nanmedian(E[:, pick], axis=1)
        boots[b] = _fit_slope(log_h, np.log(mb)) if np.all(mb > 0) else np.nan
    ci = (float(np.nanpercentile(boots, 2.5)), float(np.nanpercentile(boots, 97.5))) if bootstrap else (slope, slope)
    scale = h ** (2 * beta) + tau ** (2 * alpha)
    exc = np.array([[np.nanmean(np.where(np.isnan(E[li]), np.nan, E[li] > x * scale[li]))
                     for li in range(len(levels))] for x in xi])
    return RateReport(levels, h, tau, med, counts, slope, ci, tuple(xi), exc)


# -- stability --------------------------------------------------------------------

@dataclass
class StabilityReport:
    levels: list[int]
    mean: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    values: np.ndarray  # (levels, samples)

    @property
    def growth_flag(self) -> bool:
        """Estimate grows from one level to the next by more than its CI width."""
        width = self.ci_high - self.ci_low
        return bool(np.any(np.diff(self.mean) > width[1:]))


@dataclass(frozen=True)
class _StabilitySample:
    index: int
    values: tuple[float, ...] = ()
    error: str | None = None


def _stability_sample(plan: ExperimentPlan, index: int) -> _StabilitySample:
    try:
        with threadpool_limits(limits=1):
            levels = _setup(plan, with_reference=False)
            fine = sample_path(sample_seed(plan.seed, index), plan.steps(plan.levels),
                               plan.noise.J, plan.tau(plan.levels))
            out = []
            for lev, lv in enumerate(levels, start=1):
                path = coarsen(fine, plan.steps(plan.levels) // plan.steps(lev))
                out.append(lv.scheme.run(lv.u0, path, store_every=plan.steps(lev)).stability_functional())
    except (SaddleSolveError, FloatingPointError, np.linalg.LinAlgError) as exc:
        return _StabilitySample(index, error=f"{type(exc).__name__}: {exc}")
    return _StabilitySample(index, tuple(out))


def stability_report(plan: ExperimentPlan, workers: int = 1, min_samples: int = 32) -> StabilityReport:
    """Monte-Carlo mean of max_m |u_m|^2 + tau sum_m |grad u_m|^2 per level,
    with a normal 95% confidence interval."""
    if plan.N < min_samples:
        raise ExperimentError(f"stability report needs N >= {min_samples}")
    results = _map_samples(_stability_sample, plan, range(plan.N), workers)
    failures = [(r.index, r.error) for r in results if r.error is not None]
    _check_failures(failures, plan.N)
    vals = np.array([r.values for r in results if r.error is None]).T
    mean = vals.mean(axis=1)
    half = 1.96 * vals.std(axis=1, ddof=1) / math.sqrt(vals.shape[1])
    return StabilityReport(list(range(1, plan.levels + 1)), mean, mean - half, mean + half, vals)


# -- output -------------------------------------------------------------------------

def write_records(records: list[ErrorRecord], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample", "level", "h", "tau", "E", "stopped"])
        for r in sorted(records, key=lambda r: (r.sample, r.level)):
            w.writerow([r.sample, r.level, repr(r.h), repr(r.tau), repr(r.E), int(r.stopped)])


def read_records(path) -> list[ErrorRecord]:
    with Path(path).open(newline="") as fh:
        return [ErrorRecord(int(row["sample"]), int(row["level"]), float(row["h"]),
                            float(row["tau"]), float(row["E"]), bool(int(row["stopped"])))
                for row in csv.DictReader(fh)]


def write_rates(report: RateReport, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["level", "h", "tau", "median_E", "samples", "slope", "slope_ci_low", "slope_ci_high"])
        for i, lev in enumerate(report.levels):
            w.writerow([lev, repr(float(report.h[i])), repr(float(report.tau[i])),
                        repr(float(report.medians[i])), int(report.counts[i]),
                        repr(report.slope), repr(report.ci[0]), repr(report.ci[1])])


def write_exceedance(report: RateReport, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["xi", "level", "frequency"])
        for k, x in enumerate(report.xi):
            for i, lev in enumerate(report.levels):
                w.writerow([repr(float(x)), lev, repr(float(report.exceedance[k, i]))])


def write_stability(report: StabilityReport, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["level", "mean", "ci_low", "ci_high", "samples"])
        for i, lev in enumerate(report.levels):
            w.writerow([lev, repr(float(report.mean[i])), repr(float(report.ci_low[i])),
                        repr(float(report.ci_high[i])), report.values.shape[1]])


def plot_rates(report: RateReport, path) -> bool:
    """Log-log plot of the level medians; returns False when matplotlib is missing."""
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        return False
    matplotlib.rcParams["svg.hashsalt"] = "snse"
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.loglog(report.h, report.medians, "o-", label=f"median E (slope {report.slope:.2f})")
    ref = report.medians[-1] * (report.h / report.h[-1]) ** 2
    ax.loglog(report.h, ref, "k--", label="h^2")
    ax.set_xlabel("h")
    ax.set_ylabel("median E")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return True


def plan_dict(plan: ExperimentPlan) -> dict:
    d = asdict(plan)
    d["xi"] = list(plan.xi)
    return d


def default_workers() -> int:
    return max(1, os.cpu_count() or 1)

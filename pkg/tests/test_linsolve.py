import numpy as np
import pytest
import scipy.sparse as sp

from conftest import operators, random_zero_trace
from oracles import infsup_svd
from snse.fem import assemble_convection, project_divfree
from snse.linsolve import (BlockDiagonal, SaddleSolveError, SaddleSolver, SaddleSystem,
                           infsup_constant, infsup_dense, right_gmres, saddle_matrix, solve_saddle)


def _stokes_block(ops, tau=0.1):
    return (ops.M_free + tau * ops.A_free).tocsr()


def _dense_bordered(K, B, a, c, f, g):
    nu, npr = B.shape[1], B.shape[0]
    S = np.zeros((nu + npr + 1, nu + npr + 1))
    S[:nu, :nu] = K.toarray()
    S[:nu, nu:nu + npr] = -c * B.toarray().T
    S[nu:nu + npr, :nu] = B.toarray()
    S[nu:nu + npr, -1] = a
    S[-1, nu:nu + npr] = a
    x = np.linalg.solve(S, np.concatenate([f, g, [0.0]]))
    return x[:nu], x[nu:nu + npr]


def test_zero_rhs_gives_zero(ops4):
    solver = SaddleSolver(ops4.B_free, ops4.pressure_mass, 0.1)
    u, p = solver.solve(_stokes_block(ops4), np.zeros(ops4.dofmap.free_count))
    assert not u.any() and not p.any()


def test_tiny_mesh_matches_dense_oracle(rng):
    ops = operators(1)
    K = _stokes_block(ops, 0.3)
    f = rng.standard_normal(ops.dofmap.free_count)
    u, p = solve_saddle(SaddleSystem(K, ops.B_free, ops.pressure_mass, f, coupling=0.3))
    ue, pe = _dense_bordered(K, ops.B_free, ops.pressure_mass, 0.3, f, np.zeros(2))
    assert np.abs(u - ue).max() <= 1e-10 * np.abs(ue).max()
    assert np.abs(p - pe).max() <= 1e-10 * max(np.abs(pe).max(), 1.0)


@pytest.mark.parametrize("n", [2, 4])
def test_dense_oracle_with_convection_and_divergence_data(n, rng):
    ops = operators(n)
    w = random_zero_trace(ops, rng)
    tau = 0.05
    K = (_stokes_block(ops, tau) + tau * _free_block(ops, assemble_convection(ops, w, 0.5))).tocsr()
    f = rng.standard_normal(ops.dofmap.free_count)
    g = ops.B_free @ rng.standard_normal(ops.dofmap.free_count)
    solver = SaddleSolver(ops.B_free, ops.pressure_mass, tau)
    u, p = solver.solve(K, f, g)
    ue, pe = _dense_bordered(K, ops.B_free, ops.pressure_mass, tau, f, g)
    assert np.allclose(u, ue, rtol=0, atol=1e-10 * np.abs(ue).max())
    assert np.allclose(p, pe, rtol=0, atol=1e-10 * np.abs(pe).max())


def _free_block(ops, N):
    free = ops.dofmap.free_dofs
    return N[free][:, free]


@pytest.mark.parametrize("strategy", ["direct", "krylov"])
def test_recovers_known_solution(strategy, rng):
    ops = operators(8)
    tau = 1 / 64
    u_true = ops.dofmap.restrict(project_divfree(ops, random_zero_trace(ops, rng)))
    p_true = rng.standard_normal(ops.mesh.n_triangles)
    p_true -= np.dot(ops.pressure_mass, p_true) / ops.pressure_mass.sum()
    K = BlockDiagonal(ops.Ms_free + tau * ops.As_free)
    f = K @ u_true - tau * (ops.B_free.T @ p_true)
    solver = SaddleSolver(ops.B_free, ops.pressure_mass, tau, 1e-12, strategy=strategy,
                          K_ref=K if strategy == "krylov" else None)
    u, p = solver.solve(K, f)
    assert np.linalg.norm(u - u_true) <= 1e-9 * np.linalg.norm(u_true)
    assert np.linalg.norm(p - p_true) <= 1e-7 * np.linalg.norm(p_true)


def test_krylov_matches_direct_with_perturbed_block(rng):
    ops = operators(8)
    tau = 1 / 64
    base = BlockDiagonal(ops.Ms_free + tau * ops.As_free)
    w = project_divfree(ops, random_zero_trace(ops, rng))
    K = (base.tocsr() + tau * _free_block(ops, assemble_convection(ops, w, 0.5))).tocsr()
    f = rng.standard_normal(ops.dofmap.free_count)
    kry = SaddleSolver(ops.B_free, ops.pressure_mass, tau, strategy="krylov", K_ref=base)
    direct = SaddleSolver(ops.B_free, ops.pressure_mass, tau)
    u1, p1 = kry.solve(K, f)
    u2, p2 = direct.solve(K, f)
    assert kry.last_iterations > 0
    assert np.linalg.norm(u1 - u2) <= 1e-8 * np.linalg.norm(u2)
    assert np.linalg.norm(p1 - p2) <= 1e-6 * np.linalg.norm(p2)
    r1, r2 = kry.residuals(K, u1, p1, f)
    assert max(r1, r2) <= 1e-10 * np.linalg.norm(f)
    assert abs(np.dot(ops.pressure_mass, p1)) < 1e-12 * np.linalg.norm(p1)


def test_residual_contract_violation_is_reported(ops4, rng):
    base = BlockDiagonal(ops4.Ms_free)
    solver = SaddleSolver(ops4.B_free, ops4.pressure_mass, 1.0, 1e-14, strategy="krylov",
                          K_ref=base, max_restarts=1, maxiter=1)
    # a preconditioner for a very different block cannot converge in one iteration
    K = (ops4.Ms_free + 50.0 * ops4.As_free)
    with pytest.raises(SaddleSolveError, match="residual"):
        solver.solve(BlockDiagonal(K), rng.standard_normal(ops4.dofmap.free_count))


def test_singular_system_raises(ops4):
    solver = SaddleSolver(ops4.B_free, ops4.pressure_mass, 1.0)
    K = sp.csr_matrix((ops4.dofmap.free_count,) * 2)
    with pytest.raises(SaddleSolveError):
        solver.solve(K, np.ones(ops4.dofmap.free_count))


def test_dimension_mismatch(ops4):
    solver = SaddleSolver(ops4.B_free, ops4.pressure_mass)
    with pytest.raises(ValueError):
        solver.solve(_stokes_block(ops4), np.ones(3))


def test_saddle_matrix_symmetric_for_symmetric_block(ops4):
    S = saddle_matrix(_stokes_block(ops4), ops4.B_free, ops4.pressure_mass, 0.2)
    assert abs(S - S.T).max() < 1e-15


def test_right_gmres_dense_system(rng):
    A = np.eye(30) + 0.1 * rng.standard_normal((30, 30))
    b = rng.standard_normal(30)
    x, its = right_gmres(lambda v: A @ v, lambda v: v, b, np.zeros(30), 1e-12, restart=10)
    assert np.linalg.norm(A @ x - b) <= 1e-12
    assert its > 0


def test_block_diagonal_apply(rng):
    S = sp.random(5, 5, density=0.6, random_state=1) + sp.eye(5)
    D = BlockDiagonal(S)
    x = rng.standard_normal(10)
    assert np.allclose(D @ x, D.toarray() @ x)
    assert D.shape == (10, 10)


# -- inf-sup ------------------------------------------------------------------

def test_infsup_matches_independent_svd_oracle():
    ops = operators(2)
    ref = infsup_svd(ops.A_free.toarray(), ops.B_free.toarray(), ops.pressure_mass)
    assert infsup_constant(ops) == pytest.approx(ref, abs=1e-8)
    assert infsup_dense(ops) == pytest.approx(ref, abs=1e-10)


def test_infsup_positive_and_bounded():
    betas = [infsup_constant(operators(n)) for n in (2, 4)]
    assert all(0 < b < 1 for b in betas)

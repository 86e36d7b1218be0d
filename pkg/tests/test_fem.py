from itertools import product
from math import factorial, pi

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fmgeig.errors import AssemblyError
from fmgeig.fem import (
    FeFunction,
    ProblemSpec,
    a_norm,
    apply_nonlinear_residual,
    assemble_load,
    assemble_mass,
    assemble_stiffness,
    assemble_weighted_mass,
    dump_matrix,
    full_values,
    harmonic_potential,
    integrate_power,
    l2_norm,
    quadrature_rule,
)
from fmgeig.mesh import MeshLevel, build_hierarchy, build_initial_mesh


LAPLACE_2D = ProblemSpec(dim=2, potential=None, zeta=0.0)


def test_problem_spec_validation():
    with pytest.raises(ValueError):
        ProblemSpec(dim=2, zeta=-1.0)
    with pytest.raises(ValueError):
        ProblemSpec(dim=2, sigma=0)
    with pytest.raises(ValueError):
        ProblemSpec(dim=2, diffusion=np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        ProblemSpec(dim=2, diffusion=np.array([[1.0, 0.0], [0.0, -1.0]]))
    spec = ProblemSpec(dim=2, diffusion=np.diag([2.0, 3.0]))
    assert np.allclose(spec.diffusion_matrix, np.diag([2.0, 3.0]))


def test_quadrature_exact_to_degree_four():
    # Oracle: int over the reference simplex of a barycentric monomial is
    # d! * prod(e_i!) / (sum(e) + d)!  in volume-1 normalization.
    for dim in (2, 3):
        rule = quadrature_rule(dim, 4)
        assert rule.weights.sum() == pytest.approx(1.0, abs=1e-14)
        for exps in product(range(5), repeat=dim + 1):
            if sum(exps) > 4:
                continue
            quad = float(np.sum(rule.weights * np.prod(rule.points ** np.array(exps), axis=1)))
            exact = factorial(dim) * np.prod([factorial(e) for e in exps]) / factorial(sum(exps) + dim)
            assert quad == pytest.approx(exact, abs=1e-14)


def test_quadrature_degree_limit():
    with pytest.raises(AssemblyError):
        quadrature_rule(2, 6)


def test_stiffness_no_interior_dofs():
    m = build_initial_mesh(2, 1)
    A = assemble_stiffness(m, LAPLACE_2D)
    assert A.shape == (0, 0)


def test_stiffness_five_point_stencil():
    # Oracle: on the uniform right-triangle pair the assembled P1 Laplacian
    # is the classical 5-point stencil, built here from grid adjacency alone.
    m = build_initial_mesh(2, 4)
    A = assemble_stiffness(m, LAPLACE_2D).toarray()
    idx = {tuple(np.round(m.vertices[v] * 4).astype(int)): j
           for j, v in enumerate(m.interior_indices)}
    expected = np.zeros((9, 9))
    for (ix, iy), j in idx.items():
        expected[j, j] = 4.0
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            k = idx.get((ix + dx, iy + dy))
            if k is not None:
                expected[j, k] = -1.0
    assert np.array_equal(A, expected)


def test_stiffness_spd():
    m = build_initial_mesh(2, 4)
    A = assemble_stiffness(m, LAPLACE_2D)
    rng = np.random.default_rng(0)
    for _ in range(10):
        v = rng.standard_normal(A.shape[0])
        assert v @ (A @ v) > 0


def test_mass_partition_of_unity():
    for dim in (2, 3):
        m = build_initial_mesh(dim, 2)
        M = assemble_mass(m, interior_only=False)
        assert M.sum() == pytest.approx(1.0, abs=1e-12)


def test_mass_element_matrix_hand_values():
    # Exact barycentric integrals give (area/12) * [[2,1,1],[1,2,1],[1,1,2]]
    # per triangle; assembling the 2-cell unit square mesh yields these sums.
    m = build_initial_mesh(2, 1)
    M = assemble_mass(m, interior_only=False).toarray()
    hand = np.array([
        [4, 1, 1, 2],
        [1, 2, 0, 1],
        [1, 0, 2, 1],
        [2, 1, 1, 4],
    ]) / 24.0
    assert np.allclose(M, hand, atol=1e-15)


def test_mass_positive_definite():
    m = build_initial_mesh(3, 2)
    M = assemble_mass(m)
    rng = np.random.default_rng(1)
    for _ in range(10):
        v = rng.standard_normal(M.shape[0])
        assert v @ (M @ v) > 0


def test_weighted_mass_zero_weight():
    m = build_initial_mesh(2, 2)
    Z = assemble_weighted_mass(m, np.zeros(m.n_vertices), 1, interior_only=False)
    assert Z.nnz == 0 or np.abs(Z.data).max() == 0.0


def test_weighted_mass_unit_weight_equals_mass():
    m = build_initial_mesh(2, 3)
    M = assemble_mass(m, interior_only=False).toarray()
    W1 = assemble_weighted_mass(m, np.ones(m.n_vertices), 1, interior_only=False).toarray()
    assert np.allclose(W1, M, rtol=1e-13)


def test_weighted_mass_harmonic_total():
    # int over the unit square of x^2 + y^2 = 2/3
    m = build_initial_mesh(2, 1)
    MW = assemble_weighted_mass(m, harmonic_potential, 1, interior_only=False)
    assert MW.sum() == pytest.approx(2.0 / 3.0, rel=1e-13)


def test_weighted_mass_wrong_level_rejected():
    h = build_hierarchy(2, 2, 2)
    w = FeFunction(0, np.ones(h.levels[0].n_interior))
    with pytest.raises(ValueError):
        assemble_weighted_mass(h.levels[1], w, 2)


def test_weighted_mass_degree_limit():
    m = build_initial_mesh(2, 2)
    w = FeFunction(0, np.ones(m.n_interior))
    with pytest.raises(AssemblyError):
        assemble_weighted_mass(m, w, 4)  # sigma = 2 nonlinearity


def test_assembled_matrices_exactly_symmetric():
    m = build_initial_mesh(2, 5)
    spec = ProblemSpec(dim=2, diffusion=np.array([[2.0, 0.5], [0.5, 1.0]]), zeta=1.0)
    A = assemble_stiffness(m, spec)
    rng = np.random.default_rng(3)
    w = FeFunction(0, rng.standard_normal(m.n_interior))
    K = assemble_weighted_mass(m, w, 2)
    for mat in (A, assemble_mass(m), K):
        diff = (mat - mat.T).tocsr()
        assert diff.nnz == 0 or np.abs(diff.data).max() == 0.0


def test_degenerate_cell_reported():
    m = build_initial_mesh(2, 1)
    bad_cells = m.cells.copy()
    bad_cells[1, 1] = bad_cells[1, 0]  # collapse an edge
    broken = MeshLevel(dim=2, vertices=m.vertices, cells=bad_cells,
                       boundary_vertex=m.boundary_vertex, level_index=0,
                       mesh_size=m.mesh_size, box=m.box)
    with pytest.raises(AssemblyError, match="cell 1"):
        assemble_stiffness(broken, LAPLACE_2D)


def test_galerkin_coarsening_exact():
    h = build_hierarchy(2, 4, 2)
    spec = ProblemSpec(dim=2)
    P = h.interior_prolongation(0)
    for assemble in (lambda lv: assemble_stiffness(lv, spec), assemble_mass):
        coarse = assemble(h.levels[0]).toarray()
        fine = assemble(h.levels[1])
        galerkin = (P.T @ fine @ P).toarray()
        scale = np.abs(coarse).max()
        assert np.abs(galerkin - coarse).max() <= 1e-12 * scale


def test_residual_zero_function():
    m = build_initial_mesh(2, 4)
    spec = ProblemSpec(dim=2, zeta=1.0)
    r = apply_nonlinear_residual(m, spec, np.zeros(m.n_interior), 3.7)
    assert np.all(r == 0.0)


def test_residual_linear_case_exact():
    m = build_initial_mesh(2, 4)
    spec = ProblemSpec(dim=2, zeta=0.0)
    rng = np.random.default_rng(5)
    u = rng.standard_normal(m.n_interior)
    lam = 11.0
    A = assemble_stiffness(m, spec)
    MW = assemble_weighted_mass(m, harmonic_potential, 1)
    M = assemble_mass(m)
    expected = (A + MW) @ u - lam * (M @ u)
    r = apply_nonlinear_residual(m, spec, u, lam)
    assert np.array_equal(r, expected)


def test_a_norm_zero_and_mismatch():
    m = build_initial_mesh(2, 4)
    A = assemble_stiffness(m, LAPLACE_2D)
    assert a_norm(np.zeros(m.n_interior), A) == 0.0
    with pytest.raises(ValueError):
        a_norm(np.zeros(3), A)
    with pytest.raises(ValueError):
        l2_norm(np.zeros(3), assemble_mass(m))


def test_a_norm_dirichlet_energy_of_sine_interpolant():
    # Oracle: the Dirichlet energy of sin(pi x) sin(pi y) on the unit square
    # is pi^2 / 2; the P1 interpolant energy converges to it at O(h^2).
    target = pi ** 2 / 2
    errs = []
    for n in (16, 32, 64):
        m = build_initial_mesh(2, n)
        A = assemble_stiffness(m, LAPLACE_2D)
        vals = np.sin(pi * m.vertices[:, 0]) * np.sin(pi * m.vertices[:, 1])
        errs.append(abs(a_norm(vals[m.interior_indices], A) ** 2 - target))
    assert errs[-1] / target < 1e-3
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)
    assert errs[1] / errs[2] == pytest.approx(4.0, rel=0.05)


@settings(max_examples=15, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=9, max_size=9))
def test_a_norm_sign_flip_invariant(vals):
    m = build_initial_mesh(2, 4)
    A = assemble_stiffness(m, LAPLACE_2D)
    u = np.array(vals)
    assert a_norm(u, A) == a_norm(-u, A)


def test_assumption_a_witness_bounded():
    # Empirical form of the Lipschitz-type bound for f(u) = W u + zeta u^3:
    # over a seeded set of unit-energy w, v, psi the ratio
    # |(f(w) - f(v), psi)| / ||w - v||_0 stays below a fixed constant.
    spec = ProblemSpec(dim=2)
    m = build_initial_mesh(2, 16)
    A = assemble_stiffness(m, spec)
    M = assemble_mass(m)
    MW = assemble_weighted_mass(m, harmonic_potential, 1)
    rng = np.random.default_rng(42)
    worst = 0.0
    for _ in range(30):
        w, v, psi = (rng.standard_normal(m.n_interior) for _ in range(3))
        w /= a_norm(w, A)
        v /= a_norm(v, A)
        psi /= a_norm(psi, A)
        Mw2 = assemble_weighted_mass(m, FeFunction(0, w), 2)
        Mv2 = assemble_weighted_mass(m, FeFunction(0, v), 2)
        val = psi @ (MW @ (w - v)) + spec.zeta * (psi @ (Mw2 @ w - Mv2 @ v))
        worst = max(worst, abs(val) / l2_norm(w - v, M))
    assert worst <= 0.01


def test_integrate_power_against_analytic():
    # u = x on [0,1]^2: int x^2 = 1/3, int x^4 = 1/5, both exact for P1.
    m = build_initial_mesh(2, 3)
    vals = m.vertices[:, 0]
    assert integrate_power(m, vals, 2) == pytest.approx(1.0 / 3.0, rel=1e-13)
    assert integrate_power(m, vals, 4) == pytest.approx(1.0 / 5.0, rel=1e-13)


def test_integrate_power_matches_weighted_mass_quadratic_form():
    m = build_initial_mesh(2, 4)
    rng = np.random.default_rng(7)
    u = rng.standard_normal(m.n_interior)
    Mu2 = assemble_weighted_mass(m, FeFunction(0, u), 2)
    assert u @ (Mu2 @ u) == pytest.approx(integrate_power(m, full_values(m, u), 4), rel=1e-12)


def test_assemble_load_constant():
    m = build_initial_mesh(2, 2)
    f = assemble_load(m, lambda x: np.ones(len(x)), interior_only=False)
    assert f.sum() == pytest.approx(1.0, rel=1e-13)


def test_dump_matrix_roundtrip(tmp_path):
    m = build_initial_mesh(2, 3)
    A = assemble_stiffness(m, LAPLACE_2D)
    path = tmp_path / "mat.txt"
    dump_matrix(A, path)
    rows, cols, vals = [], [], []
    for line in path.read_text().splitlines():
        r, c, v = line.split()
        rows.append(int(r))
        cols.append(int(c))
        vals.append(float(v))
    import scipy.sparse as sp
    B = sp.coo_matrix((vals, (rows, cols)), shape=A.shape).toarray()
    assert np.array_equal(B, A.toarray())

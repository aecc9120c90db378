"""Discrete action, dual-to-primal map, derivatives, and ellipticity."""
import numpy as np
import pytest

from dualchain import (
    BaseState,
    BlockTridiagonal,
    ChainParams,
    DualField,
    ForcingSpec,
    ProblemSpec,
    QuadraticForce,
    ScaleParams,
    SingularStiffnessError,
    Sinusoid,
    TimeGrid,
    action,
    base_from_primal,
    constant_base,
    dtp_map,
    ellipticity_check,
    fput_alpha,
    gradient,
    hessian,
    pack_free,
    perturb_base,
    unpack_free,
    zero_base,
)
from oracles import fine_quadrature_action, predual_action


def _scalar_spec(m=1.0, d=1.0, k=1.0, c_x=1.0, c_v=1.0, T=1.0, M=1,
                 x0=0.0, v0=0.0, B111=0.0):
    B = None
    if B111 != 0.0:
        B = np.zeros((1, 1, 1))
        B[0, 0, 0] = B111
    force = QuadraticForce(n=1, A=[[k]], B=B)
    params = ChainParams(m=m, d=d, force=force, forcing=ForcingSpec.zero(1))
    grid = TimeGrid(T=T, M=M)
    return ProblemSpec(params=params, scales=ScaleParams(c_x, c_v),
                       base=zero_base(grid, 1), grid=grid,
                       x0=np.array([x0]), v0=np.array([v0]))


def _random_spec(rng, n=None, M=None, with_B=True, freeze_A=False,
                 base_kind="table"):
    n = n or int(rng.integers(1, 5))
    M = M or int(rng.integers(2, 17))
    C = rng.normal(size=n) * 0.3
    A = rng.normal(size=(n, n))
    A = A + A.T + 2.0 * n * np.eye(n)
    B = rng.normal(size=(n, n, n)) * 0.4 if with_B else None
    force = QuadraticForce(n=n, C=C, A=A, B=B)
    forcing = ForcingSpec(
        n=n,
        constant=rng.normal(size=n) * 0.2,
        sinusoids=[(int(rng.integers(0, n)), Sinusoid(0.5, 2.0, 0.3))],
    )
    params = ChainParams(m=float(rng.uniform(0.5, 2.0)),
                         d=float(rng.uniform(0.0, 1.0)),
                         force=force, forcing=forcing)
    grid = TimeGrid(T=float(rng.uniform(0.5, 2.0)), M=M)
    x0 = rng.normal(size=n) * 0.3
    v0 = rng.normal(size=n) * 0.3
    if base_kind == "primal":
        base = base_from_primal(params, x0, v0, grid, refine=10)
    else:
        t = grid.nodes()[:, None]
        base = BaseState(grid,
                         0.3 * np.sin(t + rng.normal(size=n)),
                         0.3 * np.cos(t + rng.normal(size=n)))
    scales = ScaleParams(float(rng.uniform(0.5, 2.0)), float(rng.uniform(0.5, 2.0)))
    return ProblemSpec(params=params, scales=scales, base=base, grid=grid,
                       x0=x0, v0=v0, freeze_A=freeze_A)


def _small_dual(rng, spec, scale=0.05):
    g = rng.normal(size=(spec.grid.M + 1, spec.n)) * scale
    l = rng.normal(size=(spec.grid.M + 1, spec.n)) * scale
    g[-1] = 0.0
    l[-1] = 0.0
    return DualField(spec.grid, g, l)


# ---------------------------------------------------------------------------
# dual-to-primal map


def test_dtp_zero_duals_return_base_exactly():
    rng = np.random.default_rng(0)
    spec = _random_spec(rng)
    z = np.zeros(spec.n)
    for k in (0, spec.grid.M // 2):
        x, v = dtp_map(z, z, z, z, spec.base.xbar[k], spec.base.vbar[k], spec)
        np.testing.assert_array_equal(x, spec.base.xbar[k])
        np.testing.assert_array_equal(v, spec.base.vbar[k])


def test_dtp_linear_scalar_closed_form():
    k = 1.7
    spec = _scalar_spec(m=1.0, d=0.0, k=k)
    a, b, c, e = 0.3, -0.2, 0.5, 0.9
    x, v = dtp_map(np.array([a]), np.array([b]), np.array([c]), np.array([e]),
                   np.zeros(1), np.zeros(1), spec)
    assert x[0] == pytest.approx(e - k * a, rel=1e-15)
    assert v[0] == pytest.approx(c + b, rel=1e-15)


def test_dtp_quadratic_scalar_worked_example():
    # weighted stiffness 1 + 0.3*2 = 1.6; displacement 0.8 / 1.6 = 0.5
    spec = _scalar_spec(k=0.0, B111=2.0)
    x, v = dtp_map(np.array([0.3]), np.zeros(1), np.zeros(1), np.array([0.8]),
                   np.zeros(1), np.zeros(1), spec)
    assert x[0] == pytest.approx(0.5, rel=1e-15)


def test_dtp_singular_stiffness_raises():
    spec = _scalar_spec(B111=2.0)
    lam = np.array([-0.5])  # 1 + (-0.5)*2 = 0 exactly
    with pytest.raises(SingularStiffnessError):
        dtp_map(lam, np.zeros(1), np.zeros(1), np.ones(1), np.zeros(1),
                np.zeros(1), spec)


def test_dtp_batched_rows_match_single_calls():
    rng = np.random.default_rng(1)
    spec = _random_spec(rng, n=3, M=4)
    lam = rng.normal(size=(5, 3)) * 0.05
    ld = rng.normal(size=(5, 3))
    gam = rng.normal(size=(5, 3))
    gd = rng.normal(size=(5, 3))
    xb = rng.normal(size=(5, 3))
    vb = rng.normal(size=(5, 3))
    X, V = dtp_map(lam, ld, gam, gd, xb, vb, spec)
    for i in range(5):
        x, v = dtp_map(lam[i], ld[i], gam[i], gd[i], xb[i], vb[i], spec)
        np.testing.assert_allclose(X[i], x, rtol=1e-14, atol=1e-16)
        np.testing.assert_allclose(V[i], v, rtol=1e-14, atol=1e-16)


# ---------------------------------------------------------------------------
# action values


def test_action_zero_field_is_zero():
    rng = np.random.default_rng(2)
    spec = _random_spec(rng)
    assert action(DualField.zeros(spec.grid, spec.n), spec) == 0.0


def test_action_single_element_hand_value():
    # one element, T=1, every parameter 1, base zero, no forcing, zero ICs,
    # lambda falling linearly from l to 0, gamma identically zero:
    # midpoint rule gives S = -(5/4) l^2
    ell = 0.7
    spec = _scalar_spec()
    D = DualField(spec.grid, np.zeros((2, 1)), np.array([[ell], [0.0]]))
    assert action(D, spec) == pytest.approx(-1.25 * ell * ell, rel=1e-14)


def test_action_single_element_refines_to_continuum_value():
    # same continuous dual field (piecewise linear in t) on finer and finer
    # grids: the discrete action converges to the exact integral -(4/3) l^2
    # at second order, cross-checked against a fine-quadrature oracle
    ell = 0.7
    exact = -4.0 * ell * ell / 3.0
    quad = fine_quadrature_action(
        lam_fun=lambda t: ell * (1.0 - t),
        lamdot_fun=lambda t: -ell * np.ones_like(t),
        gam_fun=lambda t: np.zeros_like(t),
        gamdot_fun=lambda t: np.zeros_like(t),
        T=1.0, m=1.0, d=1.0, k_lin=1.0, c_x=1.0, c_v=1.0)
    assert quad == pytest.approx(exact, rel=1e-9)
    errs = []
    for M in (1, 2, 4, 8, 16):
        spec = _scalar_spec(M=M)
        t = spec.grid.nodes()
        D = DualField(spec.grid, np.zeros((M + 1, 1)), (ell * (1.0 - t))[:, None])
        errs.append(abs(action(D, spec) - exact))
    for e0, e1 in zip(errs, errs[1:]):
        assert 3.0 < e0 / e1 < 5.0


def test_action_matches_predual_at_mapped_point():
    # the reduction to the closed form is an algebraic identity at the mapped
    # primal point; verified on 20 random problems through an independent
    # evaluation of the unreduced integrand
    rng = np.random.default_rng(3)
    for trial in range(20):
        base_kind = "primal" if trial % 3 == 0 else "table"
        spec = _random_spec(rng, base_kind=base_kind)
        D = _small_dual(rng, spec)
        S = action(D, spec)
        S_oracle = predual_action(D, spec)
        assert abs(S - S_oracle) <= 1e-10 * (1.0 + abs(S_oracle))


def test_action_matches_predual_without_quadratic_term():
    rng = np.random.default_rng(4)
    for _ in range(5):
        spec = _random_spec(rng, with_B=False)
        D = _small_dual(rng, spec, scale=0.5)
        S = action(D, spec)
        S_oracle = predual_action(D, spec)
        assert abs(S - S_oracle) <= 1e-10 * (1.0 + abs(S_oracle))


def test_action_requires_final_zero():
    spec = _scalar_spec(M=3)
    g = np.zeros((4, 1))
    l = np.zeros((4, 1))
    l[-1] = 1e-14
    D = DualField(spec.grid, g, l)
    with pytest.raises(ValueError):
        action(D, spec)
    with pytest.raises(ValueError):
        gradient(D, spec)
    with pytest.raises(ValueError):
        hessian(D, spec)


def test_action_dimension_mismatch():
    spec = _scalar_spec(M=2)
    other = TimeGrid(T=1.0, M=3)
    with pytest.raises(ValueError):
        action(DualField.zeros(other, 1), spec)


# ---------------------------------------------------------------------------
# derivatives


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    spec = _random_spec(rng, n=2, M=8)
    D = _small_dual(rng, spec)
    u0 = pack_free(D)
    g = gradient(D, spec)
    step = 1e-6
    fd = np.empty_like(u0)
    for i in range(u0.size):
        up, dn = u0.copy(), u0.copy()
        up[i] += step
        dn[i] -= step
        fd[i] = (action(unpack_free(spec.grid, spec.n, up), spec)
                 - action(unpack_free(spec.grid, spec.n, dn), spec)) / (2 * step)
    assert np.linalg.norm(g - fd) < 1e-6 * np.linalg.norm(fd)


def test_gradient_matches_finite_differences_frozen_linear_coefficient():
    rng = np.random.default_rng(6)
    spec = _random_spec(rng, n=3, M=5, freeze_A=True, base_kind="primal")
    D = _small_dual(rng, spec)
    u0 = pack_free(D)
    g = gradient(D, spec)
    step = 1e-6
    fd = np.empty_like(u0)
    for i in range(u0.size):
        up, dn = u0.copy(), u0.copy()
        up[i] += step
        dn[i] -= step
        fd[i] = (action(unpack_free(spec.grid, spec.n, up), spec)
                 - action(unpack_free(spec.grid, spec.n, dn), spec)) / (2 * step)
    assert np.linalg.norm(g - fd) < 1e-6 * np.linalg.norm(fd)


def test_gradient_zero_dual_refinement_with_solution_base():
    # base from a fine direct solve: zero duals are the discrete extremal up
    # to the quadrature error, which shrinks at second order
    force = QuadraticForce(n=1, A=[[1.0]])
    params = ChainParams(m=1.0, d=0.0, force=force, forcing=ForcingSpec.zero(1))
    x0, v0 = np.array([1.0]), np.array([0.0])
    norms = []
    for M in (100, 200, 400):
        grid = TimeGrid(T=2 * np.pi, M=M)
        base = base_from_primal(params, x0, v0, grid, refine=10)
        spec = ProblemSpec(params=params, scales=ScaleParams(1.0, 1.0),
                           base=base, grid=grid, x0=x0, v0=v0)
        norms.append(np.max(np.abs(gradient(DualField.zeros(grid, 1), spec))))
    for e0, e1 in zip(norms, norms[1:]):
        assert 3.0 < e0 / e1 < 5.0


def test_gradient_affine_when_linear():
    rng = np.random.default_rng(7)
    spec = _random_spec(rng, n=2, M=6, with_B=False)
    D1 = _small_dual(rng, spec, scale=0.7)
    D2 = _small_dual(rng, spec, scale=0.7)
    D12 = DualField(spec.grid, D1.gamma + D2.gamma, D1.lam + D2.lam)
    resid = (gradient(D12, spec) - gradient(D1, spec) - gradient(D2, spec)
             + gradient(DualField.zeros(spec.grid, spec.n), spec))
    scale = np.max(np.abs(gradient(D1, spec))) + 1.0
    assert np.max(np.abs(resid)) < 1e-12 * scale


def test_hessian_matches_finite_differences_of_gradient():
    rng = np.random.default_rng(8)
    spec = _random_spec(rng, n=2, M=6)
    D = _small_dual(rng, spec)
    u0 = pack_free(D)
    H = hessian(D, spec).to_dense()
    step = 1e-6
    fd = np.empty_like(H)
    for i in range(u0.size):
        up, dn = u0.copy(), u0.copy()
        up[i] += step
        dn[i] -= step
        fd[:, i] = (gradient(unpack_free(spec.grid, spec.n, up), spec)
                    - gradient(unpack_free(spec.grid, spec.n, dn), spec)) / (2 * step)
    assert np.linalg.norm(H - fd) < 1e-5 * np.linalg.norm(fd)


def test_hessian_symmetric():
    rng = np.random.default_rng(9)
    spec = _random_spec(rng, n=3, M=7)
    H = hessian(_small_dual(rng, spec), spec).to_dense()
    assert np.max(np.abs(H - H.T)) < 1e-14 * (1.0 + np.max(np.abs(H)))


def test_hessian_constant_when_linear():
    rng = np.random.default_rng(10)
    spec = _random_spec(rng, n=2, M=5, with_B=False)
    H1 = hessian(_small_dual(rng, spec, scale=1.0), spec)
    H2 = hessian(_small_dual(rng, spec, scale=0.1), spec)
    np.testing.assert_array_equal(H1.diag, H2.diag)
    np.testing.assert_array_equal(H1.off, H2.off)


def test_hessian_negative_semidefinite_when_linear():
    rng = np.random.default_rng(11)
    for _ in range(3):
        spec = _random_spec(rng, with_B=False)
        H = hessian(DualField.zeros(spec.grid, spec.n), spec)
        eigs = H.eigenvalues()
        scale = np.max(np.abs(eigs))
        assert np.max(eigs) <= 1e-10 * scale


def test_quadratic_identity_when_linear():
    rng = np.random.default_rng(12)
    spec = _random_spec(rng, n=2, M=6, with_B=False)
    D0 = DualField.zeros(spec.grid, spec.n)
    S0 = action(D0, spec)
    g0 = gradient(D0, spec)
    H = hessian(D0, spec)
    for _ in range(5):
        D = _small_dual(rng, spec, scale=0.8)
        u = pack_free(D)
        S_quad = S0 + g0 @ u + 0.5 * (u @ H.matvec(u))
        S = action(D, spec)
        assert abs(S - S_quad) < 1e-12 * (1.0 + abs(S))


def test_gradient_boundary_terms_enter_node_zero():
    # initial conditions appear only through the first node of the gradient
    rng = np.random.default_rng(13)
    spec_a = _random_spec(rng, n=2, M=4)
    spec_b = ProblemSpec(params=spec_a.params, scales=spec_a.scales,
                         base=spec_a.base, grid=spec_a.grid,
                         x0=spec_a.x0 + 1.0, v0=spec_a.v0 - 2.0)
    D = _small_dual(rng, spec_a)
    ga = gradient(D, spec_a).reshape(spec_a.grid.M, 2 * spec_a.n)
    gb = gradient(D, spec_b).reshape(spec_a.grid.M, 2 * spec_a.n)
    n = spec_a.n
    np.testing.assert_array_equal(ga[1:], gb[1:])
    np.testing.assert_allclose(gb[0, :n] - ga[0, :n], -np.ones(n), rtol=1e-12)
    np.testing.assert_allclose(gb[0, n:] - ga[0, n:],
                               2.0 * spec_a.params.m * np.ones(n), rtol=1e-12)


# ---------------------------------------------------------------------------
# ellipticity


def test_ellipticity_zero_duals_exact_value():
    rng = np.random.default_rng(14)
    for _ in range(3):
        spec = _random_spec(rng)
        out = ellipticity_check(DualField.zeros(spec.grid, spec.n), spec)
        expected = min(spec.params.m ** 2 / spec.scales.c_v, 1.0 / spec.scales.c_x)
        np.testing.assert_array_equal(out, np.full(spec.grid.M + 1, expected))


def test_ellipticity_constant_when_linear():
    rng = np.random.default_rng(15)
    spec = _random_spec(rng, with_B=False)
    D = _small_dual(rng, spec, scale=2.0)
    out = ellipticity_check(D, spec)
    expected = min(spec.params.m ** 2 / spec.scales.c_v, 1.0 / spec.scales.c_x)
    np.testing.assert_array_equal(out, np.full(spec.grid.M + 1, expected))


def test_ellipticity_flags_indefinite_stiffness():
    spec = _scalar_spec(M=4, B111=2.0)
    lam = np.zeros((5, 1))
    lam[2, 0] = -0.6  # weighted stiffness 1 - 1.2 = -0.2 at that node
    lam[-1] = 0.0
    out = ellipticity_check(DualField(spec.grid, np.zeros((5, 1)), lam), spec)
    assert out[2] < 0.0
    floor = min(1.0, 1.0)
    assert out[0] == pytest.approx(floor, rel=1e-12)


def test_ellipticity_zero_at_exact_singularity():
    spec = _scalar_spec(M=2, B111=2.0)
    lam = np.zeros((3, 1))
    lam[1, 0] = -0.5  # weighted stiffness exactly 0
    out = ellipticity_check(DualField(spec.grid, np.zeros((3, 1)), lam), spec)
    assert out[1] == 0.0


# ---------------------------------------------------------------------------
# packing and the block-tridiagonal container


def test_pack_unpack_round_trip():
    rng = np.random.default_rng(16)
    spec = _random_spec(rng, n=3, M=5)
    D = _small_dual(rng, spec)
    u = pack_free(D)
    assert u.shape == (2 * 3 * 5,)
    D2 = unpack_free(spec.grid, 3, u)
    np.testing.assert_array_equal(D.gamma, D2.gamma)
    np.testing.assert_array_equal(D.lam, D2.lam)
    np.testing.assert_array_equal(D2.gamma[-1], np.zeros(3))


def _random_block_tridiagonal(rng, M, b, definite=None):
    diag = rng.normal(size=(M, b, b))
    diag = 0.5 * (diag + np.swapaxes(diag, 1, 2))
    off = rng.normal(size=(M - 1, b, b))
    if definite == "negative":
        for k in range(M):
            diag[k] -= (b + 2.0) * np.eye(b) * (2.0 + abs(rng.normal()))
    return BlockTridiagonal(diag.copy(), off.copy())


def test_block_tridiagonal_dense_and_matvec_agree():
    rng = np.random.default_rng(17)
    H = _random_block_tridiagonal(rng, M=6, b=4)
    dense = H.to_dense()
    np.testing.assert_allclose(dense, dense.T, atol=1e-15)
    for _ in range(3):
        u = rng.normal(size=H.size)
        np.testing.assert_allclose(H.matvec(u), dense @ u, rtol=1e-13, atol=1e-13)


def test_block_tridiagonal_solve_matches_dense():
    rng = np.random.default_rng(18)
    H = _random_block_tridiagonal(rng, M=5, b=4, definite="negative")
    rhs = rng.normal(size=H.size)
    np.testing.assert_allclose(H.solve(rhs), np.linalg.solve(H.to_dense(), rhs),
                               rtol=1e-9, atol=1e-12)


def test_block_tridiagonal_eigenvalues_match_dense():
    rng = np.random.default_rng(19)
    H = _random_block_tridiagonal(rng, M=5, b=4)
    np.testing.assert_allclose(np.sort(H.eigenvalues()),
                               np.linalg.eigvalsh(H.to_dense()), rtol=1e-8,
                               atol=1e-10)


def test_block_tridiagonal_inertia_matches_dense_signs():
    rng = np.random.default_rng(20)
    for definite in (None, "negative"):
        H = _random_block_tridiagonal(rng, M=6, b=3, definite=definite)
        eigs = np.linalg.eigvalsh(H.to_dense())
        tol = 1e-11 * np.max(np.abs(eigs))
        expected = (int(np.sum(eigs < -tol)), int(np.sum(np.abs(eigs) <= tol)),
                    int(np.sum(eigs > tol)))
        assert H.inertia() == expected


def test_block_tridiagonal_negative_cholesky():
    rng = np.random.default_rng(21)
    H = _random_block_tridiagonal(rng, M=5, b=3, definite="negative")
    chol = H.neg_cholesky()
    assert chol is not None
    indefinite = _random_block_tridiagonal(rng, M=5, b=3)
    assert indefinite.neg_cholesky() is None


# ---------------------------------------------------------------------------
# base states


def test_zero_and_constant_base():
    grid = TimeGrid(T=1.0, M=4)
    zb = zero_base(grid, 2)
    np.testing.assert_array_equal(zb.xbar, np.zeros((5, 2)))
    np.testing.assert_array_equal(zb.xbar_mid, np.zeros((4, 2)))
    cb = constant_base(grid, [1.0, -2.0], [0.5, 0.0])
    np.testing.assert_array_equal(cb.xbar, np.tile([1.0, -2.0], (5, 1)))
    np.testing.assert_array_equal(cb.vbar_mid, np.tile([0.5, 0.0], (4, 1)))


def test_base_from_primal_midpoints_are_fine_samples():
    force = QuadraticForce(n=1, A=[[1.0]])
    params = ChainParams(m=1.0, d=0.0, force=force, forcing=ForcingSpec.zero(1))
    grid = TimeGrid(T=2 * np.pi, M=50)
    base = base_from_primal(params, [1.0], [0.0], grid, refine=10)
    # midpoint samples are much closer to the solution than nodal averages
    mid_exact = np.cos(grid.midpoints())
    averaged = 0.5 * (base.xbar[:-1] + base.xbar[1:])
    assert np.max(np.abs(base.xbar_mid[:, 0] - mid_exact)) < 1e-8
    assert np.max(np.abs(averaged[:, 0] - mid_exact)) > 1e-4


def test_base_from_primal_odd_refine():
    force = QuadraticForce(n=1, A=[[1.0]])
    params = ChainParams(m=1.0, d=0.0, force=force, forcing=ForcingSpec.zero(1))
    grid = TimeGrid(T=1.0, M=8)
    base = base_from_primal(params, [1.0], [0.0], grid, refine=5)
    assert base.xbar_mid.shape == (8, 1)
    assert np.max(np.abs(base.xbar_mid[:, 0] - np.cos(grid.midpoints()))) < 1e-3


def test_table_base_interpolates_midpoints():
    grid = TimeGrid(T=1.0, M=3)
    x = np.arange(8.0).reshape(4, 2)
    v = -x
    base = BaseState(grid, x, v)
    np.testing.assert_array_equal(base.xbar_mid, 0.5 * (x[:-1] + x[1:]))
    assert base.provenance == "user-table"


def test_perturb_base_bounded_and_reproducible():
    grid = TimeGrid(T=2.0, M=64)
    base = constant_base(grid, [0.3], [0.0])
    p1 = perturb_base(base, 0.05, seed=7)
    p2 = perturb_base(base, 0.05, seed=7)
    np.testing.assert_array_equal(p1.xbar, p2.xbar)
    np.testing.assert_array_equal(p1.xbar_mid, p2.xbar_mid)
    assert np.max(np.abs(p1.xbar - base.xbar)) <= 0.05 + 1e-15
    assert np.max(np.abs(p1.vbar - base.vbar)) <= 0.05 + 1e-15
    assert np.max(np.abs(p1.xbar - base.xbar)) > 0.0
    p3 = perturb_base(base, 0.05, seed=8)
    assert np.max(np.abs(p3.xbar - p1.xbar)) > 0.0


def test_perturb_base_midpoints_follow_same_series():
    # node and midpoint samples of the same smooth series: second differences
    # along interleaved samples stay O((T/M)^2), so the perturbation is smooth
    grid = TimeGrid(T=1.0, M=256)
    base = zero_base(grid, 1)
    p = perturb_base(base, 0.05, seed=3)
    interleaved = np.empty(2 * grid.M + 1)
    interleaved[0::2] = p.xbar[:, 0]
    interleaved[1::2] = p.xbar_mid[:, 0]
    second_diff = np.abs(np.diff(interleaved, n=2))
    assert np.max(second_diff) < 0.05 * (np.pi * 3 / (2 * grid.M)) ** 2 * 1.1


def test_determinism_of_assembly():
    rng = np.random.default_rng(22)
    spec = _random_spec(rng, n=3, M=9)
    D = _small_dual(rng, spec)
    assert action(D, spec) == action(D, spec)
    np.testing.assert_array_equal(gradient(D, spec), gradient(D, spec))
    H1, H2 = hessian(D, spec), hessian(D, spec)
    np.testing.assert_array_equal(H1.diag, H2.diag)
    np.testing.assert_array_equal(H1.off, H2.off)

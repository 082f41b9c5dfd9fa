"""Energy, variations, symbols, spectrum, contraction identities."""

import numpy as np
import numpy.testing as npt
import pytest

from g2flow import algebra as al
from g2flow import analysis as an
from g2flow import families as fam
from g2flow import flow as fl
from g2flow import grid as gr
from g2flow import structures as st

TWO_PI = 2.0 * np.pi


def _grid(n, ndim=1):
    return gr.GridShape.make([n] * ndim + [1] * (7 - ndim),
                             [TWO_PI] * ndim + [1.0] * (7 - ndim))


def _twist_bg(n=24, rate=1):
    grid = _grid(n)
    W, w = fam.circle_twist(grid, rate=rate, axis=0, component=3)
    return grid, fl.Background.twisted(grid, W, w)


# ---------------------------------------------------------------------------
# energy


def test_energy_zero_state_constant_background():
    grid = _grid(16)
    bg = fl.Background.constant(grid)
    assert an.energy(grid, grid.zeros(7), bg) == 0.0


def test_energy_zero_state_twisted_background():
    # E(0) = (1/2)||Tbar||^2; the twist torsion is (sin kh / h) delta exactly
    grid, bg = _twist_bg(n=32)
    e = an.energy(grid, grid.zeros(7), bg)
    expect = 0.5 * gr.inner_l2(grid, bg.torsion, bg.torsion)
    npt.assert_allclose(e, expect, rtol=1e-13)
    h = grid.spacings[0]
    analytic = 0.5 * (np.sin(h) / h) ** 2 * grid.volume
    npt.assert_allclose(e, analytic, rtol=1e-12)
    assert e > 0


def test_energy_antipode_invariance(rng):
    grid = _grid(24)
    U, u = fam.random_unit_pair(grid, rng, amplitude=0.5)
    T = st.torsion_from_pair_on_grid(grid, U, u)
    T_anti = st.torsion_from_pair_on_grid(grid, -U, -u)
    npt.assert_allclose(gr.inner_l2(grid, T, T), gr.inner_l2(grid, T_anti, T_anti),
                        rtol=1e-13)


# ---------------------------------------------------------------------------
# first variation


def test_first_variation_zero_direction(rng):
    grid = _grid(24)
    bg = fl.Background.constant(grid)
    U = fam.band_limited(grid, 0.3, 1, rng)
    assert an.first_variation(grid, U, grid.zeros(7), bg) == 0.0


def test_first_variation_vanishes_at_critical_state(rng):
    # at U = 0 on the constant background div T = 0, so DE = 0 for every V
    grid = _grid(24)
    bg = fl.Background.constant(grid)
    V = fam.band_limited(grid, 1.0, 2, rng)
    assert an.first_variation(grid, grid.zeros(7), V, bg) == 0.0


def test_first_variation_constant_directions_annihilated(rng):
    # the divergence of a periodic field has exactly zero mean, so constant
    # directions pair to zero at machine precision; the energy difference
    # quotient confirms the flatness of E along them
    grid = _grid(32)
    bg = fl.Background.constant(grid)
    U = fam.band_limited(grid, 0.3, 2, rng)
    V = fam.constant_field(grid, [0.4, -0.1, 0.2, 0.0, 0.7, 0.0, -0.3])
    fv = an.first_variation(grid, U, V, bg)
    assert abs(fv) < 1e-13 * grid.volume
    fd = an.fd_first_variation(grid, U, V, bg, 1e-3)
    assert abs(fd) < 1e-8


@pytest.mark.parametrize("ndim,n", [(1, 128), (2, 48)])
def test_gradient_check_order4(ndim, n, rng):
    grid = _grid(n, ndim)
    bg = fl.Background.constant(grid)
    pairs = [(fam.band_limited(grid, 0.25, 2, rng), fam.band_limited(grid, 1.0, 2, rng))
             for _ in range(3)]
    eps_list = [1e-1, 1e-2, 1e-4]
    rows = an.gradient_check(grid, bg, pairs, eps_list, order=4)
    for row in rows:
        assert row["rel_err"][-1] < 1e-4
        # quadratic improvement over the first decade, above the stencil floor
        assert row["rel_err"][0] / row["rel_err"][1] > 20.0


def test_gradient_check_improves_quadratically_to_floor(rng):
    grid = _grid(128)
    bg = fl.Background.constant(grid)
    U = fam.band_limited(grid, 0.25, 2, rng)
    V = fam.band_limited(grid, 1.0, 2, rng)
    fv = an.first_variation(grid, U, V, bg, order=4)
    errs = [abs(an.fd_first_variation(grid, U, V, bg, e, order=4) - fv) / abs(fv)
            for e in (1e-1, 1e-2, 1e-3)]
    slopes = [np.log2(errs[i] / errs[i + 1]) / np.log2(10) for i in range(2)]
    assert slopes[0] > 1.8  # pure quadratic regime
    assert errs[2] < 1e-4


def test_delta_torsion_matches_finite_difference(rng):
    # the continuum delta-T formula and the true derivative of the discrete
    # torsion map differ by a product-rule defect of the stencil; the
    # difference must shrink at the stencil order
    seed = rng.integers(1 << 31)
    errs, scales = [], []
    for n in (64, 128):
        grid = _grid(n)
        r = np.random.default_rng(seed)
        bg = fl.Background.constant(grid)
        U = fam.band_limited(grid, 0.3, 1, r)
        V = fam.band_limited(grid, 1.0, 1, r)
        psi = an.state_spinor(grid, U, bg)
        dT = an.delta_torsion(grid, U, V, bg)

        def torsion_of(p):
            Ug, ug = st.spinor_to_pair(p)
            return st.torsion_from_pair_on_grid(grid, Ug, ug)

        eps = 1e-4
        fd = (torsion_of(an.perturb_state(psi, V, eps))
              - torsion_of(an.perturb_state(psi, V, -eps))) / (2 * eps)
        errs.append(np.max(np.abs(fd - dT)))
        scales.append(np.max(np.abs(dT)))
    assert errs[0] / scales[0] < 5e-3
    assert np.log2(errs[0] / errs[1]) > 1.8


def test_flow_is_gradient_descent_rate():
    # one RK4 step decreases E by dt ||div T||^2 (1 + O(dt))
    grid = _grid(48)
    bg = fl.Background.constant(grid)
    U0 = fam.single_mode(grid, 0.1, 1, [1, 0, 0, 0, 0, 0, 0])
    data = fl.vector_rhs_full(grid, U0, bg)
    dt = fl.max_stable_dt(grid)
    U1 = fl.rk4_step(grid, U0, bg, dt)
    dE = fl.vector_rhs_full(grid, U1, bg).energy - data.energy
    predicted = -dt * data.div_l2 ** 2
    assert abs(dE / predicted - 1.0) < 0.01


# ---------------------------------------------------------------------------
# symbols


def test_symbol_at_zero_state():
    rep = an.symbol_check(np.zeros(7), np.eye(7)[0], np.eye(7)[1])
    npt.assert_array_equal(rep.symbol_div, np.eye(7)[1])
    assert rep.coercivity_div == 1.0
    npt.assert_array_equal(rep.symbol_flow, rep.symbol_flow_printed)


def test_symbol_requires_interior_states():
    with pytest.raises(ValueError, match="<"):
        an.symbol_check(np.eye(7)[0], np.eye(7)[1], np.eye(7)[2])


def test_symbol_coercivity_closed_forms(rng):
    n = 5000
    U = rng.standard_normal((n, 7))
    U *= (rng.uniform(0.0, 0.9, n) / np.linalg.norm(U, axis=1))[:, None]
    xi = rng.standard_normal((n, 7))
    V = rng.standard_normal((n, 7))
    rep = an.symbol_check(U, xi, V)
    u = np.sqrt(1.0 - np.sum(U * U, axis=1))
    xi2 = np.sum(xi * xi, axis=1)
    uv = np.sum(U * V, axis=1)
    VxU = al.cross(V, U)
    # div-operator pairing: u |xi|^2 |V|^2 + u^{-1} |xi|^2 <U,V>^2
    expect_div = u * xi2 * np.sum(V * V, axis=1) + xi2 * uv ** 2 / u
    npt.assert_allclose(rep.coercivity_div, expect_div, rtol=1e-10)
    # flow pairing, cross-corrected: adds |xi|^2 |V x U|^2
    expect_printed = expect_div + xi2 * np.sum(VxU * VxU, axis=1)
    npt.assert_allclose(rep.coercivity_flow_printed, expect_printed, rtol=1e-10)
    # the actual flow symbol pairs to exactly |xi|^2 |V|^2
    npt.assert_allclose(rep.coercivity_flow, xi2 * np.sum(V * V, axis=1), rtol=1e-10)
    # both dominate the (1-|U|^2)^(1/2) |xi|^2 |V|^2 floor
    assert np.all(rep.coercivity_flow_printed >= rep.floor - 1e-12)
    assert np.all(rep.coercivity_flow >= rep.floor - 1e-12)


def test_discrete_symbol_matches_corrected_flow_symbol(rng):
    U0 = rng.standard_normal(7)
    U0 *= 0.5 / np.linalg.norm(U0)
    Vhat = rng.standard_normal(7)
    wave = [1, 0, 0, 0, 0, 0, 0]
    errs_flow, errs_printed = [], []
    for n in (16, 32, 64):
        grid = _grid(n)
        m = an.measure_flow_symbol(grid, U0, wave, Vhat, order=2)
        xi = np.zeros(7)
        xi[0] = 1.0
        rep = an.symbol_check(U0, xi, Vhat)
        errs_flow.append(np.max(np.abs(m + rep.symbol_flow)))
        errs_printed.append(np.max(np.abs(m + rep.symbol_flow_printed)))
    slope = np.log2(errs_flow[-2] / errs_flow[-1])
    assert slope > 1.9
    # the as-printed combination differs at O(1): it is NOT the symbol of the
    # linearized right-hand side, only its cross-term correction is
    assert errs_printed[-1] > 0.05


def test_discrete_symbol_matches_composed_stencil_multiplier(rng):
    # at finite h the measured multiplier is exactly (sin(kh)/h)^2 sigma
    grid = _grid(32)
    U0 = rng.standard_normal(7)
    U0 *= 0.4 / np.linalg.norm(U0)
    Vhat = rng.standard_normal(7)
    m = an.measure_flow_symbol(grid, U0, [1, 0, 0, 0, 0, 0, 0], Vhat, order=2)
    xi = np.zeros(7)
    xi[0] = 1.0
    rep = an.symbol_check(U0, xi, Vhat)
    h = grid.spacings[0]
    mult = (np.sin(h) / h) ** 2
    npt.assert_allclose(m, -mult * rep.symbol_flow, atol=1e-8)


# ---------------------------------------------------------------------------
# second variation and spectrum


def test_second_variation_refuses_non_critical_background():
    grid = _grid(32)
    W, w = fam.chart_pair(fam.single_mode(grid, 0.4, 3, [1, 0, 0, 0, 0, 0, 0]))
    bg = fl.Background.twisted(grid, W, w)
    with pytest.raises(an.CriticalityError, match="residual"):
        an.second_variation_operator(grid, bg)


def test_second_variation_accepts_critical_backgrounds():
    grid = _grid(16)
    assert an.second_variation_operator(grid, fl.Background.constant(grid)) is not None
    grid, bg = _twist_bg(16)
    op = an.second_variation_operator(grid, bg)
    assert op.criticality_residual < 1e-10


def test_operator_self_adjointness_random_pairs(rng):
    for make in (lambda: (_grid(24), fl.Background.constant(_grid(24))),
                 lambda: _twist_bg(24)):
        grid, bg = make()
        op = an.second_variation_operator(grid, bg)
        for _ in range(5):
            A = fam.band_limited(grid, 1.0, 2, rng)
            B = fam.band_limited(grid, 1.0, 2, rng)
            lhs = gr.inner_l2(grid, A, op.apply(B))
            rhs = gr.inner_l2(grid, op.apply(A), B)
            assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs), abs(rhs))


def test_operator_dense_assembly_matches_and_is_gated():
    grid = _grid(12)
    bg = fl.Background.constant(grid)
    op = an.second_variation_operator(grid, bg)
    dense = op.assemble_dense()
    npt.assert_allclose(dense, dense.T, atol=1e-13)
    big = an.second_variation_operator(_grid(1024), fl.Background.constant(_grid(1024)))
    with pytest.raises(ValueError, match="refused"):
        big.assemble_dense()


def test_eigensolver_against_dense_reference():
    grid = gr.GridShape.make([8, 8, 1, 1, 1, 1, 1],
                             [TWO_PI, TWO_PI] + [1.0] * 5)
    bg = fl.Background.constant(grid)
    op = an.second_variation_operator(grid, bg)
    vals, vecs, scale = an.smallest_eigenpairs(op, 10, seed=0)
    ref = np.sort(np.linalg.eigvalsh(op.assemble_dense()))[:10]
    npt.assert_allclose(vals, ref, atol=1e-10)
    # eigenvectors satisfy the eigen equation
    for i in range(10):
        v = vecs[:, i]
        npt.assert_allclose(op.matvec(v), vals[i] * v, atol=1e-8)


def test_kernel_of_bochner_is_constants():
    grid = _grid(12)
    bg = fl.Background.constant(grid)
    op = an.second_variation_operator(grid, bg)
    vals, _, scale = an.smallest_eigenpairs(op, 9, seed=0)
    assert an.kernel_dimension(vals, scale) == 7
    lam1 = gr.second_partial_eigenvalue(grid, 0, 1)
    npt.assert_allclose(vals[7], lam1, atol=1e-8)
    npt.assert_allclose(vals[8], lam1, atol=1e-8)


def test_quadratic_form_matches_fd_hessian(rng):
    grid = _grid(64)
    bg = fl.Background.constant(grid)
    op = an.second_variation_operator(grid, bg, order=4)
    U = fam.band_limited(grid, 1.0, 2, rng)
    V = fam.band_limited(grid, 1.0, 2, rng)
    quad = gr.inner_l2(grid, U, op.apply(V))
    for eps in (1e-2, 3e-3):
        fd = an.fd_second_variation(grid, bg, U, V, eps, order=4)
        assert abs(fd - quad) / abs(quad) < max(1e-5, 100.0 * eps * eps)


def test_kernel_inclusion_constants_under_full_operator():
    # Ker(Delta') is contained in Ker(Delta' + R): constants are annihilated
    # exactly by both, for any divergence-free background
    grid, bg = _twist_bg(24)
    op = an.second_variation_operator(grid, bg)
    C = fam.constant_field(grid, [0.2, -0.4, 0.1, 0.3, 0.0, 0.5, -0.2])
    npt.assert_array_equal(op.apply(C), np.zeros_like(C))


def test_deformation_report_constant_background():
    grid = _grid(12)
    bg = fl.Background.constant(grid)
    rep = an.deformation_report(grid, bg, k=9)
    assert rep["kernel_dim_bochner"] == 7
    assert rep["kernel_dim_full"] == 7
    assert rep["obstruction_dim"] == 0
    assert rep["negative_directions"] == 0


def test_deformation_report_twisted_critical_background():
    grid, bg = _twist_bg(24)
    rep = an.deformation_report(grid, bg, k=16, seed=1)
    assert rep["criticality_residual"] < 1e-10
    # constants survive in the kernel of the full operator
    assert rep["kernel_dim_full"] >= 7
    # this critical point has unstable directions: not a local minimum
    assert rep["negative_directions"] > 0


# ---------------------------------------------------------------------------
# contraction identities


def test_contraction_identities_random_tensors(rng):
    T = rng.standard_normal((200, 7, 7))
    ids = an.torsion_contraction_identities(T)
    assert ids["max_phi_contraction"] / ids["scale"] < 1e-12
    assert ids["max_asymmetry"] == 0.0


def test_contraction_identities_identity_tensor():
    ids = an.torsion_contraction_identities(np.eye(7))
    assert ids["max_phi_contraction"] == 0.0


def test_contraction_identities_at_flow_states(rng):
    grid = _grid(24)
    U, u = fam.random_unit_pair(grid, rng, amplitude=0.6)
    T = st.torsion_from_pair_on_grid(grid, U, u)
    phi = al.dense3(st.threeform_from_pair(U, u))
    ids = an.torsion_contraction_identities(T, phi)
    assert ids["max_phi_contraction"] <= 1e-12 * max(1.0, ids["scale"])

    grid2, bg = _twist_bg(24)
    ids2 = an.torsion_contraction_identities(bg.torsion, al.dense3(bg.phibar))
    assert ids2["max_phi_contraction"] <= 1e-12

import numpy as np
import pytest
import scipy.linalg

from dense_oracle import assemble
from mfgsplit.errors import ConfigurationError
from mfgsplit.grid import (
    CouplingSide,
    DensitySide,
    SpaceTimeGrid,
    backward_diff,
    backward_diff_t,
    density_at,
    forward_diff,
    forward_diff_t,
    sealed_flux_mask,
    time_avg,
    time_avg_t,
    time_diff,
    time_diff_t,
    upwind_gradient,
    upwind_gradient_t,
)
from mfgsplit.operators import LinearMaps, estimate_operator_norm

from conftest import make_maps


# --- grid -------------------------------------------------------------------

def test_grid_geometry():
    g = SpaceTimeGrid(64, 32)
    assert g.hx[0] == pytest.approx(2 / 64) and g.ht == pytest.approx(1 / 32)
    c = g.centers(0)
    assert c[0] == pytest.approx(-1 + 1 / 64) and c[-1] == pytest.approx(1 - 1 / 64)
    assert np.allclose(g.time_nodes, np.arange(33) / 32)
    assert g.node_weights.sum() == pytest.approx(1.0)
    assert g.domain_volume == pytest.approx(4.0)


@pytest.mark.parametrize("kw", [dict(nx=1, nt=4), dict(nx=8, nt=0), dict(nx=8, nt=4, bounds=((0, 0), (0, 1)))])
def test_grid_rejects_bad_shapes(kw):
    with pytest.raises(ConfigurationError):
        SpaceTimeGrid(**kw)


@pytest.mark.parametrize("pair", [
    (lambda u: forward_diff(u, 1, 0.3), lambda v: forward_diff_t(v, 1, 0.3)),
    (lambda u: backward_diff(u, 2, 0.3), lambda v: backward_diff_t(v, 2, 0.3)),
    (lambda u: time_diff(u, 0.25), lambda v: time_diff_t(v, 0.25)),
    (time_avg, time_avg_t),
])
def test_stencil_transposes(pair, rng):
    fwd, adj = pair
    u = rng.standard_normal((5, 6, 6))
    v = rng.standard_normal(fwd(u).shape)
    assert np.sum(fwd(u) * v) == pytest.approx(np.sum(u * adj(v)), rel=1e-13)


def test_upwind_gradient_transpose(rng):
    g = SpaceTimeGrid(6, 3)
    u = rng.standard_normal((3, 6, 6))
    v = rng.standard_normal((4, 3, 6, 6))
    assert np.sum(upwind_gradient(u, g) * v) == pytest.approx(np.sum(u * upwind_gradient_t(v, g)), rel=1e-13)


def test_sealed_mask_blocks_every_face_of_a_sealed_cell():
    g = SpaceTimeGrid(6, 2)
    sealed = np.zeros((2, 6, 6), dtype=bool)
    sealed[:, 2, 3] = True
    mask = sealed_flux_mask(g, sealed)
    q = DensitySide.zeros(g)
    q.m[:] = mask
    flux = q.physical_flux()
    # the four faces around cell (2, 3) carry nothing
    assert flux[0, :, 1, 3].max() == 0 and flux[0, :, 2, 3].max() == 0
    assert flux[1, :, 2, 2].max() == 0 and flux[1, :, 2, 3].max() == 0
    # neighbouring interior faces stay open
    assert flux[0, :, 3, 3].min() > 0


def test_density_at_picks_nearest_slice():
    g = SpaceTimeGrid(4, 4)
    q = DensitySide.zeros(g)
    q.rho[:] = np.arange(4)[:, None, None]
    q.rho0[:] = -1
    q.rho1[:] = 9
    assert density_at(q, g, 0.0)[1] == 0.0 and density_at(q, g, 0.0)[0][0, 0] == -1
    sl, t = density_at(q, g, 0.3)
    assert t == pytest.approx(0.375) and sl[0, 0] == 1
    assert density_at(q, g, 1.0)[1] == 1.0 and density_at(q, g, 1.0)[0][0, 0] == 9


def test_field_tuple_arithmetic(rng):
    g = SpaceTimeGrid(4, 2)
    q = DensitySide.zeros(g).unflat(rng.standard_normal(DensitySide.zeros(g).size))
    assert np.allclose((q + q - 2.0 * q).flat(), 0)
    assert np.array_equal((-q).flat(), -q.flat())
    c = q.copy()
    c.rho[0, 0, 0] += 1
    assert c.rho[0, 0, 0] != q.rho[0, 0, 0]


# --- C and C* ---------------------------------------------------------------

def test_apply_C_constant_phi():
    maps = make_maps(n_local=1)
    s = maps.zeros_s()
    s.phi[:] = 3.0
    q = maps.apply_C(s)
    assert np.abs(q.rho).max() == 0 and np.abs(q.m).max() == 0
    assert np.allclose(q.rho0, -3.0) and np.allclose(q.rho1, 3.0)


def test_apply_C_single_alpha():
    maps = make_maps(n_local=1)
    s = maps.zeros_s()
    s.alphas[0] = 1.0
    q = maps.apply_C(s)
    assert np.allclose(q.rho, -1.0)
    assert np.abs(q.m).max() == 0 and np.abs(q.rho0).max() == 0 and np.abs(q.rho1).max() == 0


def test_apply_C_dc_mode():
    maps = make_maps()
    s = maps.zeros_s()
    s.a[:, 0] = 1.0
    assert np.allclose(maps.apply_C(s).rho, -0.5, atol=1e-14)


def test_apply_C_star_constant_density():
    maps = make_maps()
    q = maps.zeros_q()
    q.rho[:] = 1.0
    a = maps.apply_C_star(q).a
    assert np.allclose(a[:, 0], -2.0, atol=1e-12)
    assert np.abs(a[:, 1:]).max() < 1e-12


def test_apply_C_star_zero_functional():
    maps = make_maps()
    q = maps.zeros_q()
    # stationary density with matching slices has a zero continuity functional
    q.rho[:] = 0.7
    q.rho0[:] = 0.7
    q.rho1[:] = 0.7
    assert np.abs(maps.apply_C_star(q).phi).max() < 1e-13


def test_shape_mismatch_is_configuration_error():
    maps = make_maps()
    s = maps.zeros_s()
    s.phi = np.zeros((3, 8, 8))
    with pytest.raises(ConfigurationError):
        maps.apply_C(s)


def test_apply_C_linear(small_maps, rng):
    s1, s2 = small_maps.random_s(rng), small_maps.random_s(rng)
    lhs = small_maps.apply_C(s1 + 0.7 * s2).flat()
    rhs = (small_maps.apply_C(s1) + 0.7 * small_maps.apply_C(s2)).flat()
    assert np.allclose(lhs, rhs, rtol=1e-13, atol=1e-12)


@pytest.mark.parametrize("use_a,use_b,n_local", [(True, True, 2), (True, False, 1), (False, False, 0)])
def test_C_matches_dense_assembly(use_a, use_b, n_local, rng):
    maps = make_maps(nx=4, nt=3, r=5, n_local=n_local, use_a=use_a, use_b=use_b)
    C, Gs, Gq, _, _ = assemble(maps.grid, maps.basis, n_local, use_a, use_b)
    s = maps.random_s(rng)
    assert np.allclose(maps.apply_C(s).flat(), C @ s.flat(), rtol=1e-13, atol=1e-12)
    # C* = Gs^{-1} C^T Gq on the active coordinates
    q = maps.random_q(rng)
    active = np.abs(Gs).sum(axis=1) > 0
    if not use_a:
        active[: maps.grid.nt * maps.r] = False
    if not use_b:
        active[maps.grid.nt * maps.r: maps.grid.nt * maps.r + maps.r] = False
    Gsa = Gs[np.ix_(active, active)]
    dense = np.zeros(Gs.shape[0])
    dense[active] = np.linalg.solve(Gsa, (C.T @ Gq @ q.flat())[active])
    assert np.allclose(maps.apply_C_star(q).flat(), dense, rtol=1e-10, atol=1e-11)


def test_inner_products_match_dense(rng):
    maps = make_maps(nx=4, nt=3, r=5)
    _, Gs, Gq, _, _ = assemble(maps.grid, maps.basis, 2, True, True)
    s1, s2 = maps.random_s(rng), maps.random_s(rng)
    q1, q2 = maps.random_q(rng), maps.random_q(rng)
    assert maps.inner_s(s1, s2) == pytest.approx(s1.flat() @ Gs @ s2.flat(), rel=1e-12)
    assert maps.inner_q(q1, q2) == pytest.approx(q1.flat() @ Gq @ q2.flat(), rel=1e-12)


def test_inner_q_positive(small_maps, rng):
    assert small_maps.inner_q(small_maps.zeros_q(), small_maps.zeros_q()) == 0
    q = small_maps.random_q(rng)
    assert small_maps.inner_q(q, q) > 0


def test_h1_product_of_constants():
    maps = make_maps()
    s = maps.zeros_s()
    s.phi[:] = 1.0
    assert maps.inner_s(s, s) == pytest.approx(8.0, rel=1e-14)


def test_adjoint_identity_8x8x4(small_maps, rng):
    for _ in range(20):
        s, q = small_maps.random_s(rng), small_maps.random_q(rng)
        lhs = small_maps.inner_q(small_maps.apply_C(s), q)
        rhs = small_maps.inner_s(s, small_maps.apply_C_star(q))
        assert abs(lhs - rhs) <= 1e-12 * small_maps.norm_s(s) * small_maps.norm_q(q)


# --- norm estimate ------------------------------------------------------------

def test_operator_norm_matches_dense():
    maps = make_maps(nx=8, nt=4, r=9, n_local=2, use_a=True, use_b=False)
    C, Gs, Gq, sizes, _ = assemble(maps.grid, maps.basis, 2, True, False)
    keep = np.ones(Gs.shape[0], dtype=bool)
    keep[sizes[0]: sizes[0] + sizes[1]] = False  # b block disabled
    A = C[:, keep].T @ Gq @ C[:, keep]
    lam = scipy.linalg.eigh(A, Gs[np.ix_(keep, keep)], eigvals_only=True)[-1]
    est = maps.operator_norm(iters=5000, tol=1e-9)
    assert est.value == pytest.approx(np.sqrt(lam), rel=1e-4)
    hist = np.array(est.history)
    assert np.all(np.diff(hist) >= -1e-12 * hist[1:])


def test_zero_operator_norm():
    maps = make_maps()
    est = estimate_operator_norm(lambda s: maps.zeros_q(), lambda q: maps.zeros_s(),
                                 maps.random_s(np.random.default_rng(0)), maps.inner_s)
    assert est.value == 0.0 and est.converged


def test_norm_cap_flags_nonconvergence():
    maps = make_maps()
    est = maps.operator_norm(iters=3, tol=0.0)
    assert not est.converged and est.iterations == 3


def test_norm_deterministic():
    maps = make_maps()
    assert maps.operator_norm(200, 1e-8, seed=3).value == maps.operator_norm(200, 1e-8, seed=3).value

"""The tension tower, higher tension fields and the fourth-order curvature
corrections, with every specialization cross-checked against an independent
assembly route."""
import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from polyharm import fields as fl
from polyharm import geometry as geo
from polyharm import polytension as pt
from polyharm.errors import CapabilityError, ConfigurationError

from conftest import observed_order


# -- the A functional ----------------------------------------------------------


def test_a_term_flat_target_zero(map_flat_flat):
    tau = fl.tension(map_flat_flat)
    assert pt.a_term(tau, map_flat_flat).max_norm() == 0.0


def test_a_term_constant_map_zero(harmonic_maps):
    gm = harmonic_maps["constant"]
    sigma = fl.BundleSection(gm, np.ones_like(gm.values), exprs=[sp.S.One, sp.S.One])
    assert pt.a_term(sigma, gm).max_norm() == 0.0


def test_a_term_latitude_matches_section_laplacian(map_latitude):
    # u_1 = lap u_0 + A_1 = A_1 on the latitude inclusion (u_0 constant)
    tau = fl.tension(map_latitude)
    a1 = pt.a_term(tau, map_latitude)
    rl = fl.rough_laplacian(tau)
    assert np.max(np.abs(a1.values - rl.values)) <= 1e-8


@given(a=st.floats(-2, 2), b=st.floats(-2, 2))
@settings(max_examples=15, deadline=None)
def test_a_term_linearity(a, b):
    dom = geo.flat_torus(1)
    tgt = geo.round_sphere_polar(2)
    x = np.linspace(0, 2 * np.pi, 32, endpoint=False)
    gm = fl.GridMap.from_values(dom, tgt, np.stack([0.2 * np.cos(x), np.pi / 2 + 0.3 * np.sin(x)]))
    s1 = fl.BundleSection(gm, np.stack([np.sin(x), np.cos(x)]))
    s2 = fl.BundleSection(gm, np.stack([np.cos(2 * x), np.sin(2 * x)]))
    combo = fl.BundleSection(gm, a * s1.values + b * s2.values)
    lhs = pt.a_term(combo, gm).values
    rhs = a * pt.a_term(s1, gm).values + b * pt.a_term(s2, gm).values
    assert np.max(np.abs(lhs - rhs)) <= 1e-11 * max(1.0, abs(a) + abs(b))


def test_a_term_c_tensor_form(map_circle_sphere):
    # A written through C: A = -2<du, dphi> Gamma - u u_0 Gamma + u <dphi,dphi> C
    gm = map_circle_sphere
    u0 = fl.tension(gm)
    a_direct = pt.a_term(u0, gm).values
    d1 = fl.dphi_values(gm)
    du = gm.eval_exprs(gm.engine.grad(u0.exprs))
    ginv = gm.dom.metric_inv(*gm.mesh)
    gam = gm.tgt.christoffel(*gm.values)
    c_t = gm.tgt.c_tensor(*gm.values)
    alt = -2 * np.einsum("ij...,ni...,bj...,abn...->a...", ginv, du, d1, gam)
    alt -= np.einsum("n...,b...,abn...->a...", u0.values, u0.values, gam)
    alt += np.einsum("n...,ij...,ti...,sj...,atsn...->a...", u0.values, ginv, d1, d1, c_t)
    assert np.max(np.abs(a_direct - alt)) <= 1e-10


# -- the tower -----------------------------------------------------------------


def test_tower_harmonic_all_zero(harmonic_maps):
    for name, gm in harmonic_maps.items():
        tower = pt.build_tower(gm, 4)
        for sec in tower.u:
            assert sec.max_norm() == 0.0, name


def test_tower_flat_target_iterated_laplacians(map_flat_flat):
    gm = map_flat_flat
    tower = pt.build_tower(gm, 3)
    eng = gm.engine
    expected = eng.tension
    for i in (1, 2):
        expected = [eng.lap(e) for e in expected]
        assert np.max(np.abs(tower.u[i].values - gm.eval_exprs(expected))) <= 1e-11


def test_tower_first_level_is_section_laplacian(map_flat_sphere, map_circle_sphere):
    for gm in (map_flat_sphere, map_circle_sphere):
        tower = pt.build_tower(gm, 2)
        rl = fl.rough_laplacian(tower.u[0])
        assert np.max(np.abs(tower.u[1].values - rl.values)) <= 1e-9


def test_tower_first_level_fd(dom_t1, tgt_s2):
    x = dom_t1.coords[0]
    gm = fl.GridMap.from_exprs(dom_t1, tgt_s2, (64,),
                               (x, sp.pi / 2 + sp.sin(x) / 3), eval_mode="grid_fd")
    tower = pt.build_tower(gm, 2)
    rl = fl.rough_laplacian(tower.u[0])
    assert np.max(np.abs(tower.u[1].values - rl.values)) <= 1e-12


def test_tower_resolution_policy(dom_t1, tgt_s2):
    x = dom_t1.coords[0]
    gm = fl.GridMap.from_exprs(dom_t1, tgt_s2, (16,),
                               (x, sp.pi / 2 + sp.sin(x) / 3), eval_mode="grid_fd")
    with pytest.raises(ConfigurationError, match="16"):
        pt.build_tower(gm, 4)


def test_tower_richardson_estimate(dom_t1, tgt_s2):
    x = dom_t1.coords[0]
    gm = fl.GridMap.from_exprs(dom_t1, tgt_s2, (128,),
                               (x, sp.pi / 2 + sp.sin(x) / 3), eval_mode="grid_fd")
    tower = pt.build_tower(gm, 2, richardson=True)
    assert tower.richardson_error is not None and 0 < tower.richardson_error < 1e-2


def test_latitude_tower_matches_point_evaluator(map_latitude):
    from polyharm.variational import latitude_reduction

    for k in (2, 3):
        grid_val = pt.tau_k(map_latitude, k).values
        point_val = latitude_reduction(2, k, np.pi / 3)
        assert np.max(np.abs(grid_val[2] - point_val)) <= 1e-9
        assert np.max(np.abs(grid_val[:2])) <= 1e-9


# -- specializations -----------------------------------------------------------


def test_bitension_specialization(map_flat_flat, map_flat_sphere, map_circle_sphere, map_latitude):
    for gm in (map_flat_flat, map_flat_sphere, map_circle_sphere, map_latitude):
        direct = pt.tau_even(gm, 1)
        ref = pt.bitension_reference(gm)
        assert np.max(np.abs(direct.values - ref.values)) <= 1e-9


def test_tau3_matches_literal_route(map_circle_sphere):
    gm = map_circle_sphere
    generic = pt.tau_odd(gm, 1)
    literal = fl.BundleSection(gm, gm.eval_exprs(gm.engine.tau_k_literal(3)))
    assert np.max(np.abs(generic.values - literal.values)) <= 1e-9


def test_tau4_explicit_matches_generic(map_circle_sphere):
    gm = map_circle_sphere
    generic = pt.tau_even(gm, 2)
    literal = pt.tau4_explicit(gm)
    assert np.max(np.abs(generic.values - literal.values)) <= 1e-9


@pytest.mark.parametrize("k,min_order", [(3, 3.5), (4, 3.0)])
def test_tau_k_fd_converges_to_analytic(dom_t1, tgt_s2, k, min_order):
    # agreement improves at the stencil order while truncation dominates;
    # past that the 1/h^{2k} roundoff amplification takes over, which is why
    # the exact route is authoritative for acceptance numbers
    x = dom_t1.coords[0]
    exprs = (x, sp.pi / 2 + sp.sin(x) * sp.Rational(1, 4))
    reference = fl.GridMap.from_exprs(dom_t1, tgt_s2, (64,), exprs)
    tau_exprs = reference.engine.tau_k(k)
    sups = []
    for n in (48, 96):
        fd = fl.GridMap.from_exprs(dom_t1, tgt_s2, (n,), exprs, eval_mode="grid_fd")
        exact = reference.engine.eval_on(tau_exprs, fd.mesh)
        sups.append(np.max(np.abs(pt.tau_k(fd, k).values - exact)))
    assert min(observed_order(sups)) >= min_order


def test_tau4_explicit_fd_route(dom_t1, tgt_s2):
    x = dom_t1.coords[0]
    exprs = (x, sp.pi / 2 + sp.sin(x) * sp.Rational(1, 4))
    fd = fl.GridMap.from_exprs(dom_t1, tgt_s2, (256,), exprs, eval_mode="grid_fd")
    gap = np.max(np.abs(pt.tau_k(fd, 4).values - pt.tau4_explicit(fd).values))
    assert gap <= 1e-9 * max(1.0, pt.tau_k(fd, 4).max_norm())


def test_harmonic_kill_switch(harmonic_maps):
    for name, gm in harmonic_maps.items():
        for k in (2, 3, 4, 5, 6):
            assert pt.tau_k(gm, k).max_norm() <= 1e-9, (name, k)


def test_near_harmonic_amplification_bounded(dom_t1, tgt_s2):
    # max|tau_k| <= K max|tau| on a weakly perturbed equator map; K stays
    # modest because every tower level is linear in the perturbation
    x = dom_t1.coords[0]
    eps = sp.Rational(1, 10**6)
    gm = fl.GridMap.from_exprs(dom_t1, tgt_s2, (24,), (x, sp.pi / 2 + eps * sp.sin(x)))
    tau_norm = fl.tension(gm).max_norm()
    assert tau_norm <= 3e-6
    for k in (2, 3, 4):
        ratio = pt.tau_k(gm, k).max_norm() / tau_norm
        assert ratio <= 1e3, (k, ratio)


def test_flat_target_collapse(map_flat_flat):
    gm = map_flat_flat
    tau4 = pt.tau_k(gm, 4)
    eng = gm.engine
    expected = eng.tension
    for _ in range(3):
        expected = [eng.lap(e) for e in expected]
    assert np.max(np.abs(tau4.values - gm.eval_exprs(expected))) <= 1e-10


def test_order_validation(map_flat_flat):
    with pytest.raises(ConfigurationError):
        pt.tau_even(map_flat_flat, 0)
    with pytest.raises(ConfigurationError):
        pt.tau_odd(map_flat_flat, 0)
    with pytest.raises(ConfigurationError):
        pt.build_tower(map_flat_flat, 1)


# -- ES-4 ----------------------------------------------------------------------


def test_es4_flat_target(map_flat_flat):
    terms = pt.es4_terms(map_flat_flat)
    assert terms.omega0.max_norm() == 0.0
    assert np.max(np.abs(terms.omega1)) == 0.0
    assert terms.xi1.max_norm() == 0.0
    assert terms.hat_tau4.max_norm() == 0.0
    # flat-target collapse: tau4_es == tau4 exactly
    t4es = pt.tau4_es(map_flat_flat)
    t4 = pt.tau_k(map_flat_flat, 4)
    assert np.max(np.abs(t4es.values - t4.values)) == 0.0


def test_es4_sphere_xi1_vanishes(map_flat_sphere):
    terms = pt.es4_terms(map_flat_sphere)
    assert terms.xi1.max_norm() == 0.0
    assert terms.omega0.max_norm() > 0.0


def test_es4_harmonic_map_vanishes(harmonic_maps):
    gm = harmonic_maps["equator"]
    terms = pt.es4_terms(gm)
    assert terms.omega0.max_norm() == 0.0
    assert terms.hat_tau4.max_norm() == 0.0
    assert pt.tau4_es(gm).max_norm() <= 1e-9


def test_lapbar_omega0_two_paths(map_flat_sphere):
    eng = map_flat_sphere.engine
    a = map_flat_sphere.eval_exprs(eng.lapbar_omega0_rough())
    b = map_flat_sphere.eval_exprs(eng.lapbar_omega0_expanded())
    scale = max(1.0, float(np.max(np.abs(a))))
    assert np.max(np.abs(a - b)) <= 1e-7 * scale


def test_codifferential_expansion_vs_direct(map_flat_sphere):
    # the six-term expansion against one covariant divergence of Omega_1
    eng = map_flat_sphere.engine
    lhs = map_flat_sphere.eval_exprs(eng.two_xi1_plus_two_dstar_omega1)
    rhs = 2 * map_flat_sphere.eval_exprs(eng.xi1) \
        + 2 * map_flat_sphere.eval_exprs(eng.dstar_omega1_direct())
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * max(1.0, float(np.max(np.abs(rhs))))


def test_es4_needs_analytic_mode_on_curved_targets(dom_t1, tgt_s2):
    x = dom_t1.coords[0]
    gm = fl.GridMap.from_exprs(dom_t1, tgt_s2, (64,),
                               (x, sp.pi / 2 + sp.sin(x) / 3), eval_mode="grid_fd")
    with pytest.raises(CapabilityError):
        pt.hat_tau4(gm)


def test_latitude_hat_tau4_cancels():
    # individually nonzero codifferential terms must cancel on latitude spheres
    from polyharm.variational import _latitude_hat_tau4, _latitude_state

    st_ = _latitude_state(2, 0.8)
    assert np.max(np.abs(_latitude_hat_tau4(st_))) <= 1e-12

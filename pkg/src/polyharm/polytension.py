"""The tension tower and the higher-order tension fields.

The tower realizes the recursion ``u_{i+1} = lap u_i + A_{i+1}`` with
``A_{i+1} = A(u_i, du_i)``; ``u_i`` holds the components of the i-th iterated
section Laplacian of the tension field.  On top of the tower the order-k
tension fields are assembled twice: once from the abstract recursion with
covariant derivatives (``tau_even`` / ``tau_odd``) and once from the literal
coordinate expansions with the v-variables and the E-tensor
(``tau4_explicit`` and the reduced right-hand sides).  The two routes agree
node-wise and serve as each other's oracle.

Fourth-order curvature corrections: ``Omega_0``, ``Omega_1``, ``xi_1``, the
codifferential expansion of ``Omega_1`` and the two evaluation paths for
``lapbar Omega_0`` (section-Laplacian formula versus the tensorial Leibniz
expansion) together build ``hat tau_4`` and the ES-4 tension field.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import stencils
from .errors import CapabilityError, ConfigurationError, NumericalContractError
from .fields import (
    BundleSection,
    GridMap,
    VGrid,
    dphi_values,
    grid_partial,
    map_laplacian,
    map_partials,
    rough_laplacian,
    scalar_laplacian,
    tension,
)

__all__ = [
    "TensionTower",
    "ES4Terms",
    "a_term",
    "build_tower",
    "tau_even",
    "tau_odd",
    "tau_k",
    "tau4_explicit",
    "bitension_reference",
    "es4_terms",
    "hat_tau4",
    "tau4_es",
    "MIN_NODES_PER_LEVEL",
]

MIN_NODES_PER_LEVEL = 16


@dataclass
class TensionTower:
    """u_0 .. u_{k-1}, their partials v_0 .. v_{k-2} and the A-terms A_1 .. A_{k-1}."""

    k: int
    u: list[BundleSection]
    v: list[VGrid]
    a: list[BundleSection]
    richardson_error: float | None = None

    @property
    def base(self) -> GridMap:
        return self.u[0].base


# ---------------------------------------------------------------------------
# numeric curvature contractions (shared with the equivariant point evaluator)
# ---------------------------------------------------------------------------


def curv_apply_num(riem: np.ndarray, X: np.ndarray, Y: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """[R(X, Y) Z]^a = X^b Y^c Z^d R^a_{dbc} on arrays with trailing node axes."""
    return np.einsum("adbc...,b...,c...,d...->a...", riem, X, Y, Z)


def trace_R_sec_dphi(ginv, riem, d1, sec) -> np.ndarray:
    """Sum_j R(sec, dphi_j) dphi_j, both frame slots g-traced."""
    return np.einsum("ij...,adbc...,b...,ci...,dj...->a...", ginv, riem, sec, d1, d1)


def trace_R_frame_sec(ginv, riem, d1, x_frame, y_sec) -> np.ndarray:
    """Sum_j R(X_j, Y) dphi_j for a frame-indexed first slot X (shape (n, m) + node)."""
    return np.einsum("ij...,adbc...,bi...,c...,dj...->a...", ginv, riem, x_frame, y_sec, d1)


def trace_R_sec_frame(ginv, riem, d1, x_sec, y_frame) -> np.ndarray:
    """Sum_j R(X, Y_j) dphi_j for a frame-indexed second slot."""
    return np.einsum("ij...,adbc...,b...,ci...,dj...->a...", ginv, riem, x_sec, y_frame, d1)


def covd_values(v_vals, gam, d1, u_vals) -> np.ndarray:
    """(covd_i u)^a = v^a_i + Gamma^a_{bg} dphi^b_i u^g."""
    return v_vals + np.einsum("abg...,bi...,g...->ai...", gam, d1, u_vals)


def a_term_values(eta, xi, ginv, d1, lap_phi, gam, s_t) -> np.ndarray:
    """Numeric A^a(eta, xi):  -2 g^{ij} xi^t_i dphi^b_j Gamma^a_{bt}
    + eta^t [ lap(phi^b) Gamma^a_{bt} - g^{ij} dphi^b_j dphi^w_i S^a_{bwt} ]."""
    out = -2.0 * np.einsum("ij...,ti...,bj...,abt...->a...", ginv, xi, d1, gam)
    out += np.einsum("t...,b...,abt...->a...", eta, lap_phi, gam)
    out -= np.einsum("t...,ij...,bj...,wi...,abwt...->a...", eta, ginv, d1, d1, s_t)
    return out


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def a_term(u_prev: BundleSection, gmap: GridMap) -> BundleSection:
    """The A-functional applied to (u_prev, du_prev); linear in both slots."""
    if gmap.eval_mode == "analytic_jet" and u_prev.exprs is not None:
        eng = gmap.engine
        exprs = eng.a_term(u_prev.exprs, eng.grad(u_prev.exprs))
        return BundleSection(gmap, gmap.eval_exprs(exprs), exprs=exprs)
    n, m = gmap.tgt.dim, gmap.dom.dim
    xi = np.stack([np.stack([grid_partial(gmap, u_prev.values[a], i) for i in range(m)]) for a in range(n)])
    vals = a_term_values(
        u_prev.values, xi,
        gmap.dom.metric_inv(*gmap.mesh), map_partials(gmap), map_laplacian(gmap),
        gmap.tgt.christoffel(*gmap.values), gmap.tgt.s_tensor(*gmap.values),
    )
    return BundleSection(gmap, vals)


def check_tower_resolution(gmap: GridMap, k: int) -> None:
    depth = k - 1
    if gmap.eval_mode == "grid_fd" and min(gmap.grid_shape) < MIN_NODES_PER_LEVEL * max(depth, 1):
        raise ConfigurationError(
            f"grid_fd tower of depth {depth} needs >= {MIN_NODES_PER_LEVEL * depth} nodes per axis, "
            f"got {min(gmap.grid_shape)}"
        )


def build_tower(gmap: GridMap, k: int, richardson: bool = False) -> TensionTower:
    """Tower u_0 .. u_{k-1} for the order-k tension field.

    In grid_fd mode the resolution policy (>= 16 nodes per axis and tower
    level) is enforced and an a-posteriori Richardson estimate of the top
    level can be attached.
    """
    if k < 2:
        raise ConfigurationError("tower order must be >= 2")
    check_tower_resolution(gmap, k)
    if gmap.eval_mode == "analytic_jet":
        eng = gmap.engine
        u_exprs, a_exprs = eng.tower(k - 1)
        u = [BundleSection(gmap, gmap.eval_exprs(e), exprs=e) for e in u_exprs]
        v_exprs = [eng.grad(u_exprs[i]) for i in range(k - 1)]
        v = [VGrid(gmap, gmap.eval_exprs(e), exprs=e) for e in v_exprs]
        a = [BundleSection(gmap, gmap.eval_exprs(e), exprs=e) for e in a_exprs]
        return TensionTower(k, u, v, a)
    tower = _build_tower_fd(gmap, k)
    if richardson:
        tower.richardson_error = _richardson_estimate(gmap, k)
    return tower


def _build_tower_fd(gmap: GridMap, k: int) -> TensionTower:
    n, m = gmap.tgt.dim, gmap.dom.dim
    ginv = gmap.dom.metric_inv(*gmap.mesh)
    d1 = map_partials(gmap)
    lap_phi = map_laplacian(gmap)
    gam = gmap.tgt.christoffel(*gmap.values)
    s_t = gmap.tgt.s_tensor(*gmap.values)
    u = [tension(gmap)]
    v: list[VGrid] = []
    a: list[BundleSection] = []
    for _ in range(k - 1):
        prev = u[-1].values
        xi = np.stack([np.stack([grid_partial(gmap, prev[al], i) for i in range(m)]) for al in range(n)])
        v.append(VGrid(gmap, xi))
        a_vals = a_term_values(prev, xi, ginv, d1, lap_phi, gam, s_t)
        a.append(BundleSection(gmap, a_vals))
        lap_u = np.stack([scalar_laplacian(gmap, prev[al]) for al in range(n)])
        u.append(BundleSection(gmap, lap_u + a_vals))
    return TensionTower(k, u, v, a)


def _richardson_estimate(gmap: GridMap, k: int) -> float:
    if any(s % 2 or s < 2 * stencils.stencil_width(gmap.fd_order) for s in gmap.grid_shape):
        return float("nan")
    slicer = tuple([slice(None)] + [slice(None, None, 2)] * gmap.dom.dim)
    coarse = gmap.replace_values(gmap.values[slicer])
    try:
        check_tower_resolution(coarse, k)
    except ConfigurationError:
        return float("nan")
    top_f = _build_tower_fd(gmap, k).u[-1].values[slicer]
    top_c = _build_tower_fd(coarse, k).u[-1].values
    return float(np.max(np.abs(top_f - top_c)) / (2 ** gmap.fd_order - 1))


def tau_k(gmap: GridMap, k: int, tower: TensionTower | None = None) -> BundleSection:
    """Order-k tension field from the abstract recursion; k >= 1."""
    if k == 1:
        return tension(gmap)
    if gmap.eval_mode == "analytic_jet":
        eng = gmap.engine
        exprs = eng.tau_k(k)
        return BundleSection(gmap, gmap.eval_exprs(exprs), exprs=exprs)
    tower = tower if tower is not None else build_tower(gmap, k)
    return _tau_k_fd(gmap, k, tower)


def tau_k_from_tower(k: int, ginv, d1, riem, gam, u: list, v: list) -> np.ndarray:
    """Assemble tau_k from tower value arrays (any trailing node shape)."""
    out = u[k - 1] - trace_R_sec_dphi(ginv, riem, d1, u[k - 2])
    s = k // 2
    pairs = [(s + l - 2, s - l - 1) for l in range(1, s)] if k % 2 == 0 else \
        [(s + l - 1, s - l - 1) for l in range(1, s)]
    for p, q in pairs:
        cd_p = covd_values(v[p], gam, d1, u[p])
        cd_q = covd_values(v[q], gam, d1, u[q])
        out = out - trace_R_frame_sec(ginv, riem, d1, cd_p, u[q])
        out = out + trace_R_sec_frame(ginv, riem, d1, u[p], cd_q)
    if k % 2 == 1:
        cd = covd_values(v[s - 1], gam, d1, u[s - 1])
        out = out - trace_R_frame_sec(ginv, riem, d1, cd, u[s - 1])
    return out


def _tau_k_fd(gmap: GridMap, k: int, tower: TensionTower) -> BundleSection:
    vals = tau_k_from_tower(
        k,
        gmap.dom.metric_inv(*gmap.mesh),
        map_partials(gmap),
        gmap.tgt.riemann(*gmap.values),
        gmap.tgt.christoffel(*gmap.values),
        [sec.values for sec in tower.u],
        [vg.values for vg in tower.v],
    )
    return BundleSection(gmap, vals)


def tau_even(gmap: GridMap, s: int, tower: TensionTower | None = None) -> BundleSection:
    """tau_{2s}; s = 1 is the classical bitension field."""
    if s < 1:
        raise ConfigurationError("tau_even needs s >= 1")
    return tau_k(gmap, 2 * s, tower)


def tau_odd(gmap: GridMap, s: int, tower: TensionTower | None = None) -> BundleSection:
    """tau_{2s+1}; s = 1 is the third-order tension field."""
    if s < 1:
        raise ConfigurationError("tau_odd needs s >= 1")
    return tau_k(gmap, 2 * s + 1, tower)


def tau4_explicit(gmap: GridMap, tower: TensionTower | None = None) -> BundleSection:
    """tau_4 through the literal coordinate expansion lap u_2 - F^4
    (v-variables and the E-tensor); agrees with tau_even(., 2) node-wise."""
    if gmap.eval_mode == "analytic_jet":
        exprs = gmap.engine.tau_k_literal(4)
        return BundleSection(gmap, gmap.eval_exprs(exprs), exprs=exprs)
    check_tower_resolution(gmap, 4)
    tower = tower if tower is not None else build_tower(gmap, 3)
    a_top = a_term(tower.u[2], gmap)
    fk = fk_literal_values(gmap, 4, [s.values for s in tower.u],
                           [vg.values for vg in tower.v], a_top.values)
    lap_u2 = np.stack([scalar_laplacian(gmap, tower.u[2].values[a]) for a in range(gmap.tgt.dim)])
    return BundleSection(gmap, lap_u2 - fk)


def fk_literal_values(gmap: GridMap, k: int, u: list[np.ndarray], v: list[np.ndarray],
                      a_top: np.ndarray) -> np.ndarray:
    """Numeric top block F^k in the literal coordinate form; ``u`` holds
    levels 0..k-2, ``v`` their partials, ``a_top`` the A-term of order k-1."""
    ginv = gmap.dom.metric_inv(*gmap.mesh)
    d1 = dphi_values(gmap)
    riem = gmap.tgt.riemann(*gmap.values)
    gam = gmap.tgt.christoffel(*gmap.values)
    e_t = gmap.tgt.e_tensor(*gmap.values)

    def term_R_uv(u_sec, v_tab):
        return np.einsum("ij...,abgd...,d...,gi...,bj...->a...", ginv, riem, u_sec, v_tab, d1)

    out = -a_top.copy()
    out -= np.einsum("ij...,abgd...,d...,gi...,bj...->a...", ginv, riem, u[k - 2], d1, d1)
    s = k // 2
    pairs = [(s + l - 2, s - l - 1) for l in range(1, s)] if k % 2 == 0 else \
        [(s + l - 1, s - l - 1) for l in range(1, s)]
    for p, q in pairs:
        out += term_R_uv(u[q], v[p]) + term_R_uv(u[p], v[q])
        out += np.einsum("ij...,abdth...,t...,d...,hi...,bj...->a...", ginv, e_t, u[p], u[q], d1, d1)
    if k % 2 == 1:
        out += term_R_uv(u[s - 1], v[s - 1])
        out += np.einsum("ij...,abgd...,gth...,t...,d...,hi...,bj...->a...",
                         ginv, riem, gam, u[s - 1], u[s - 1], d1, d1)
    return out


def bitension_reference(gmap: GridMap) -> BundleSection:
    """Independent classical bitension: lapbar tau + Sum_j R(dphi_j, tau) dphi_j,
    with the curvature term contracted directly on evaluated arrays."""
    tau = tension(gmap)
    lb = rough_laplacian(tau)
    ginv = gmap.dom.metric_inv(*gmap.mesh)
    d1 = dphi_values(gmap)
    riem = gmap.tgt.riemann(*gmap.values)
    curv = np.einsum("ij...,adbc...,bi...,c...,dj...->a...", ginv, riem, d1, tau.values, d1)
    return BundleSection(gmap, lb.values + curv)


# ---------------------------------------------------------------------------
# ES-4
# ---------------------------------------------------------------------------


@dataclass
class ES4Terms:
    """The fourth-order curvature corrections:

    * ``omega0 = R(dphi_i, dphi_j)(R(dphi_i, dphi_j) tau)``
    * ``omega1(X) = R(R(dphi(X), dphi_j) tau, tau) dphi_j`` (values per axis)
    * ``xi1 = -(nabla R)(dphi_j, R(dphi_i, dphi_j) tau, tau, dphi_i)``
    * ``hat_tau4 = -1/2 (2 xi1 + 2 d* omega1 + lapbar omega0 + Tr R(dphi, omega0) dphi)``
    """

    omega0: BundleSection
    omega1: np.ndarray
    xi1: BundleSection
    hat_tau4: BundleSection


def _require_es4_mode(gmap: GridMap, what: str) -> None:
    if gmap.tgt.is_curvature_free:
        return
    if gmap.eval_mode != "analytic_jet":
        raise CapabilityError(f"{what} needs analytic_jet mode on curved targets")
    gmap.tgt.require_jets(2, what)


def es4_terms(gmap: GridMap) -> ES4Terms:
    """Omega_0, Omega_1, xi_1 and hat tau_4 (with the two-path cross-check)."""
    ht = hat_tau4(gmap)
    if gmap.tgt.is_curvature_free:
        zero = np.zeros_like(gmap.values)
        return ES4Terms(BundleSection(gmap, zero), np.zeros((gmap.dom.dim,) + zero.shape),
                        BundleSection(gmap, zero.copy()), ht)
    eng = gmap.engine
    omega0 = BundleSection(gmap, gmap.eval_exprs(eng.omega0), exprs=eng.omega0)
    omega1 = gmap.eval_exprs(eng.omega1)
    xi1 = BundleSection(gmap, gmap.eval_exprs(eng.xi1), exprs=eng.xi1)
    return ES4Terms(omega0, omega1, xi1, ht)


def hat_tau4(gmap: GridMap, cross_check_tol: float = 1e-7) -> BundleSection:
    """hat tau_4; on curved targets ``lapbar Omega_0`` is evaluated through the
    section-Laplacian formula and through the tensorial Leibniz expansion, and
    the two must agree within ``cross_check_tol`` (sup-norm, relative to scale).
    """
    if gmap.tgt.is_curvature_free:
        return BundleSection(gmap, np.zeros_like(gmap.values))
    _require_es4_mode(gmap, "hat_tau4")
    eng = gmap.engine
    lo_rough = eng.lapbar_omega0_rough()
    lo_path_a = gmap.eval_exprs(lo_rough)
    lo_path_b = gmap.eval_exprs(eng.lapbar_omega0_expanded())
    scale = max(1.0, float(np.max(np.abs(lo_path_a))))
    gap = float(np.max(np.abs(lo_path_a - lo_path_b)))
    if gap > cross_check_tol * scale:
        raise NumericalContractError(
            f"two lapbar Omega_0 evaluation paths disagree: sup gap {gap:.3e} (scale {scale:.3e})"
        )
    exprs = eng.hat_tau4(lapbar_omega0=lo_rough)
    return BundleSection(gmap, gmap.eval_exprs(exprs), exprs=exprs)


def tau4_es(gmap: GridMap) -> BundleSection:
    """ES-4 tension field tau_4 + hat tau_4."""
    t4 = tau_k(gmap, 4)
    ht = hat_tau4(gmap)
    exprs = None
    if t4.exprs is not None and ht.exprs is not None:
        exprs = [t4.exprs[a] + ht.exprs[a] for a in range(gmap.tgt.dim)]
    return BundleSection(gmap, t4.values + ht.values, exprs=exprs)

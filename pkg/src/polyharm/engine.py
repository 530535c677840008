"""Exact symbolic pipeline for closed-form maps (the ``analytic_jet`` mode).

Every field the engine produces (differential, second fundamental form,
tension, the recursive tower, the higher tension fields, the fourth-order
curvature corrections, reduced-system blocks) is a sympy expression in the
domain coordinates.  Derivatives are symbolic, hence exact; grids only enter
at evaluation time through cached, vectorized ``lambdify`` calls.

Target-model tensors are computed once per model in target coordinates and
composed with the map expression here.  On purely rational data (e.g. the
latitude inclusion in stereographic charts) every tower level is normalized
with ``sympy.cancel``, which collapses equivariant maps to their exact
constants.
"""
from __future__ import annotations

import functools

import numpy as np
import sympy as sp

from .errors import CapabilityError
from .geometry import DomainModel, TargetModel

__all__ = ["MapEngine"]


def _nested(shape, fill=None):
    if not shape:
        return sp.S.Zero if fill is None else fill
    return [_nested(shape[1:], fill) for _ in range(shape[0])]


def _flatten(obj, out):
    if isinstance(obj, (list, tuple)):
        for o in obj:
            _flatten(o, out)
    else:
        out.append(obj)


class MapEngine:
    """Symbolic calculus of one closed-form map between two chart models."""

    def __init__(self, dom: DomainModel, tgt: TargetModel, phi_exprs):
        self.dom = dom
        self.tgt = tgt
        self.m = dom.dim
        self.n = tgt.dim
        self.xs = dom.coords
        self.phi = [sp.sympify(e) for e in phi_exprs]
        if len(self.phi) != self.n:
            raise CapabilityError(f"map has {len(self.phi)} components, target needs {self.n}")
        self._sub = list(zip(tgt.coords, self.phi))
        self._lam_cache: dict = {}
        self._use_cancel: bool | None = None
        self._tower_u: list[list[sp.Expr]] = []
        self._tower_a: list[list[sp.Expr]] = []
        self._a_extra: dict[int, list[sp.Expr]] = {}

    # -- normalization -------------------------------------------------------

    def _norm(self, e: sp.Expr) -> sp.Expr:
        if self._use_cancel is None:
            probe = list(self.phi) + [g for row in self.ginv for g in row]
            probe += [c for mat in self.gamma_c for row in mat for c in row]
            self._use_cancel = all(sp.sympify(p).is_rational_function(*self.xs) for p in probe)
        return sp.cancel(e) if self._use_cancel else e

    # -- composed model data ---------------------------------------------------

    def _compose(self, expr):
        return expr.subs(self._sub) if expr != 0 else sp.S.Zero

    def _compose_nested(self, obj):
        if isinstance(obj, list):
            return [self._compose_nested(o) for o in obj]
        return self._compose(obj)

    @functools.cached_property
    def g(self):
        return self.dom.metric_exprs

    @functools.cached_property
    def ginv(self):
        return self.dom.metric_inv_exprs

    @functools.cached_property
    def gam_dom(self):
        return self.dom.christoffel_exprs

    @functools.cached_property
    def gamma_c(self):
        return self._compose_nested(self.tgt.christoffel_exprs)

    @functools.cached_property
    def s_tensor_c(self):
        return self._compose_nested(self.tgt.s_tensor_exprs)

    @functools.cached_property
    def c_tensor_c(self):
        return self._compose_nested(self.tgt.c_tensor_exprs)

    @functools.cached_property
    def e_tensor_c(self):
        return self._compose_nested(self.tgt.e_tensor_exprs)

    @functools.cached_property
    def riemann_c(self):
        return self._compose_nested(self.tgt.riemann_exprs)

    @functools.cached_property
    def nabla_riemann_c(self):
        return self._compose_nested(self.tgt.nabla_riemann_exprs)

    @functools.cached_property
    def h_c(self):
        return self._compose_nested(self.tgt.metric_exprs)

    # -- first order calculus --------------------------------------------------

    @functools.cached_property
    def dphi(self):
        return [[sp.diff(self.phi[a], x) for x in self.xs] for a in range(self.n)]

    @functools.cached_property
    def d2phi(self):
        return [[[sp.diff(self.dphi[a][i], self.xs[j]) for j in range(self.m)] for i in range(self.m)]
                for a in range(self.n)]

    def lap(self, f: sp.Expr) -> sp.Expr:
        """Domain Laplace-Beltrami, geometer's sign."""
        e = sp.S.Zero
        for i in range(self.m):
            for j in range(self.m):
                gij = self.ginv[i][j]
                if gij == 0:
                    continue
                e -= gij * sp.diff(f, self.xs[i], self.xs[j])
                for k in range(self.m):
                    if self.gam_dom[k][i][j] != 0:
                        e += gij * self.gam_dom[k][i][j] * sp.diff(f, self.xs[k])
        return e

    @functools.cached_property
    def lap_phi(self):
        return [self._norm(self.lap(self.phi[a])) for a in range(self.n)]

    def trace_pairs(self):
        """Nonzero (i, j, g^{ij}) triples of the inverse domain metric."""
        out = []
        for i in range(self.m):
            for j in range(self.m):
                if self.ginv[i][j] != 0:
                    out.append((i, j, self.ginv[i][j]))
        return out

    @functools.cached_property
    def second_ff(self):
        """nabla dphi^a_{ij} = d2 phi - Gam_dom^k_{ij} dphi^a_k + Gamma^a_{bc} dphi^b_i dphi^c_j."""
        out = _nested((self.n, self.m, self.m))
        for a in range(self.n):
            for i in range(self.m):
                for j in range(i, self.m):
                    e = self.d2phi[a][i][j]
                    for k in range(self.m):
                        if self.gam_dom[k][i][j] != 0:
                            e -= self.gam_dom[k][i][j] * self.dphi[a][k]
                    for b in range(self.n):
                        for c in range(self.n):
                            if self.gamma_c[a][b][c] != 0:
                                e += self.gamma_c[a][b][c] * self.dphi[b][i] * self.dphi[c][j]
                    e = self._norm(e)
                    out[a][i][j] = e
                    out[a][j][i] = e
        return out

    @functools.cached_property
    def tension(self):
        """tau^a = -lap phi^a + g^{ij} Gamma^a_{tb} dphi^t_i dphi^b_j."""
        out = []
        for a in range(self.n):
            e = -self.lap_phi[a]
            for i, j, gij in self.trace_pairs():
                for t in range(self.n):
                    for b in range(self.n):
                        if self.gamma_c[a][t][b] != 0:
                            e += gij * self.gamma_c[a][t][b] * self.dphi[t][i] * self.dphi[b][j]
            out.append(self._norm(e))
        return out

    def grad(self, sec):
        """Plain coordinate partials of an n-vector of expressions: [a][i]."""
        return [[sp.diff(sec[a], x) for x in self.xs] for a in range(self.n)]

    def covd(self, sec):
        """Pullback covariant derivative (covd_i sec)^a = d_i sec^a + Gamma^a_{bg} dphi^b_i sec^g."""
        out = self.grad(sec)
        for a in range(self.n):
            for i in range(self.m):
                for b in range(self.n):
                    for gm in range(self.n):
                        if self.gamma_c[a][b][gm] != 0:
                            out[a][i] += self.gamma_c[a][b][gm] * self.dphi[b][i] * sec[gm]
        return out

    def rough_lap(self, sec):
        """Section Laplacian, written out literally:

        (lapbar sigma)^a = lap(sigma^a) - 2 g^{ij} d_j sigma^t dphi^b_i Gamma^a_{bt}
            + sigma^t [ lap(phi^b) Gamma^a_{bt} - g^{ij} dphi^b_j dphi^w_i S^a_{bwt} ].
        """
        dsec = self.grad(sec)
        out = []
        for a in range(self.n):
            e = self.lap(sec[a])
            for i, j, gij in self.trace_pairs():
                for t in range(self.n):
                    for b in range(self.n):
                        if self.gamma_c[a][b][t] != 0:
                            e -= 2 * gij * dsec[t][j] * self.dphi[b][i] * self.gamma_c[a][b][t]
            for t in range(self.n):
                coef = sp.S.Zero
                for b in range(self.n):
                    if self.gamma_c[a][b][t] != 0:
                        coef += self.lap_phi[b] * self.gamma_c[a][b][t]
                    for w in range(self.n):
                        if self.s_tensor_c[a][b][w][t] != 0:
                            for i, j, gij in self.trace_pairs():
                                coef -= gij * self.dphi[b][j] * self.dphi[w][i] * self.s_tensor_c[a][b][w][t]
                e += sec[t] * coef
            out.append(self._norm(e))
        return out

    # -- the A functional and the tower -----------------------------------------

    def a_term(self, eta, xi):
        """A^a(eta, xi), linear in both slots; xi[t][i] holds the partials slot."""
        out = []
        for a in range(self.n):
            e = sp.S.Zero
            for t in range(self.n):
                for i, j, gij in self.trace_pairs():
                    for b in range(self.n):
                        if self.gamma_c[a][b][t] != 0:
                            e -= 2 * gij * xi[t][i] * self.dphi[b][j] * self.gamma_c[a][b][t]
                coef = sp.S.Zero
                for b in range(self.n):
                    if self.gamma_c[a][b][t] != 0:
                        coef += self.lap_phi[b] * self.gamma_c[a][b][t]
                    for w in range(self.n):
                        if self.s_tensor_c[a][b][w][t] != 0:
                            for i, j, gij in self.trace_pairs():
                                coef -= gij * self.dphi[b][j] * self.dphi[w][i] * self.s_tensor_c[a][b][w][t]
                e += eta[t] * coef
            out.append(e)
        return out

    def tower(self, depth: int):
        """u_0 .. u_depth with u_{i+1} = lap(u_i) + A(u_i, grad u_i); returns (u, A)."""
        if not self._tower_u:
            self._tower_u.append(self.tension)
        while len(self._tower_u) <= depth:
            prev = self._tower_u[-1]
            a_next = self.a_term(prev, self.grad(prev))
            nxt = [self._norm(self.lap(prev[al]) + a_next[al]) for al in range(self.n)]
            self._tower_a.append(a_next)
            self._tower_u.append(nxt)
        return self._tower_u[: depth + 1], self._tower_a[:depth]

    def u_level(self, i: int):
        u, _ = self.tower(i)
        return u[i]

    def a_level(self, i: int):
        """A_i for i >= 1, built together with tower level i."""
        _, a = self.tower(i)
        return a[i - 1]

    def a_of_level(self, i: int):
        """A_i = A(u_{i-1}, grad u_{i-1}) without forcing tower level i."""
        if len(self._tower_a) >= i:
            return self._tower_a[i - 1]
        if i not in self._a_extra:
            u, _ = self.tower(i - 1)
            self._a_extra[i] = self.a_term(u[i - 1], self.grad(u[i - 1]))
        return self._a_extra[i]

    # -- curvature contractions ---------------------------------------------------

    def curv_apply(self, X, Y, Z, riem=None):
        """[R(X, Y) Z]^a = X^b Y^c Z^d R^a_{dbc} for plain n-vectors."""
        riem = riem if riem is not None else self.riemann_c
        out = []
        for a in range(self.n):
            e = sp.S.Zero
            for b in range(self.n):
                for c in range(self.n):
                    for d in range(self.n):
                        if riem[a][d][b][c] != 0:
                            e += X[b] * Y[c] * Z[d] * riem[a][d][b][c]
            out.append(e)
        return out

    def trace_R(self, X=None, Y=None, X_frame=None, Y_frame=None):
        """g-traced curvature term Sum_j R(X, Y) dphi(e_j) where exactly one of
        the slots carries the traced frame index (X_frame / Y_frame are
        [comp][frame] tables) and the other is a plain section."""
        out = [sp.S.Zero] * self.n
        for i, j, gij in self.trace_pairs():
            Xi = [X_frame[b][i] for b in range(self.n)] if X_frame is not None else X
            Yi = [Y_frame[b][i] for b in range(self.n)] if Y_frame is not None else Y
            Zj = [self.dphi[d][j] for d in range(self.n)]
            term = self.curv_apply(Xi, Yi, Zj)
            for a in range(self.n):
                out[a] += gij * term[a]
        return out

    def trace_R_dphi(self, sec):
        """Sum_j R(sec, dphi(e_j)) dphi(e_j) with both frame slots g-traced."""
        out = [sp.S.Zero] * self.n
        for i, j, gij in self.trace_pairs():
            Xi = sec
            Yi = [self.dphi[c][i] for c in range(self.n)]
            Zj = [self.dphi[d][j] for d in range(self.n)]
            term = self.curv_apply(Xi, Yi, Zj)
            for a in range(self.n):
                out[a] += gij * term[a]
        return out

    # -- higher tension fields: covariant assembly ---------------------------------

    def tau_k(self, k: int):
        """The order-k tension field assembled from the abstract recursion.

        Even k = 2s:
            lapbar^{2s-1} tau - R(lapbar^{2s-2} tau, dphi_j) dphi_j
            - sum_{l=1}^{s-1} [ R(covd_j lapbar^{s+l-2} tau, lapbar^{s-l-1} tau) dphi_j
                                - R(lapbar^{s+l-2} tau, covd_j lapbar^{s-l-1} tau) dphi_j ]
        Odd k = 2s+1 adds one more Laplacian everywhere plus the final term
            - R(covd_j lapbar^{s-1} tau, lapbar^{s-1} tau) dphi_j.
        """
        if k < 1:
            raise ValueError("order must be >= 1")
        if k == 1:
            return self.tension
        u, _ = self.tower(k - 1)
        out = list(u[k - 1])
        top_minus = self.trace_R_dphi(u[k - 2])
        for a in range(self.n):
            out[a] -= top_minus[a]
        s = k // 2
        if k % 2 == 0:
            pairs = [(s + l - 2, s - l - 1) for l in range(1, s)]
        else:
            pairs = [(s + l - 1, s - l - 1) for l in range(1, s)]
        for p, q in pairs:
            cd_up = self.covd(u[p])
            cd_uq = self.covd(u[q])
            t1 = self.trace_R(Y=u[q], X_frame=cd_up)
            t2 = self.trace_R(X=u[p], Y_frame=cd_uq)
            for a in range(self.n):
                out[a] += -t1[a] + t2[a]
        if k % 2 == 1:
            cd = self.covd(u[s - 1])
            t = self.trace_R(Y=u[s - 1], X_frame=cd)
            for a in range(self.n):
                out[a] -= t[a]
        return [self._norm(e) for e in out]

    # -- literal coordinate right-hand sides ----------------------------------------

    def _term_R_uv(self, u_sec, v_tab):
        """u^d <v^g, dphi^b> R^a_{bgd}."""
        out = []
        for a in range(self.n):
            e = sp.S.Zero
            for i, j, gij in self.trace_pairs():
                for b in range(self.n):
                    for g_ in range(self.n):
                        for d in range(self.n):
                            if self.riemann_c[a][b][g_][d] != 0:
                                e += gij * u_sec[d] * v_tab[g_][i] * self.dphi[b][j] * self.riemann_c[a][b][g_][d]
            out.append(e)
        return out

    def _term_R_top(self, u_sec):
        """-u^d <dphi^g, dphi^b> R^a_{bgd}."""
        out = []
        for a in range(self.n):
            e = sp.S.Zero
            for i, j, gij in self.trace_pairs():
                for b in range(self.n):
                    for g_ in range(self.n):
                        for d in range(self.n):
                            if self.riemann_c[a][b][g_][d] != 0:
                                e -= gij * u_sec[d] * self.dphi[g_][i] * self.dphi[b][j] * self.riemann_c[a][b][g_][d]
            out.append(e)
        return out

    def _term_E(self, u_p, u_q):
        """u_p^t u_q^d <dphi^h, dphi^b> E^a_{bdth}."""
        out = []
        for a in range(self.n):
            e = sp.S.Zero
            for i, j, gij in self.trace_pairs():
                for b in range(self.n):
                    for d in range(self.n):
                        for t in range(self.n):
                            for h in range(self.n):
                                if self.e_tensor_c[a][b][d][t][h] != 0:
                                    e += gij * u_p[t] * u_q[d] * self.dphi[h][i] * self.dphi[b][j] \
                                        * self.e_tensor_c[a][b][d][t][h]
            out.append(e)
        return out

    def _term_half_E(self, u_p, u_q):
        """u_p^t u_q^d <dphi^h, dphi^b> R^a_{bgd} Gamma^g_{th}  (no (d,t) symmetrization)."""
        out = []
        for a in range(self.n):
            e = sp.S.Zero
            for i, j, gij in self.trace_pairs():
                for b in range(self.n):
                    for g_ in range(self.n):
                        for d in range(self.n):
                            if self.riemann_c[a][b][g_][d] == 0:
                                continue
                            for t in range(self.n):
                                for h in range(self.n):
                                    if self.gamma_c[g_][t][h] != 0:
                                        e += gij * u_p[t] * u_q[d] * self.dphi[h][i] * self.dphi[b][j] \
                                            * self.riemann_c[a][b][g_][d] * self.gamma_c[g_][t][h]
            out.append(e)
        return out

    def fk_literal(self, k: int):
        """Top reduced right-hand-side block in explicit coordinates:
        F^k = -A_{k-1} + curvature groups written with the v-variables and the
        E-tensor (even order) or their odd-order analogue."""
        u, _ = self.tower(k - 2)
        a_top = self.a_of_level(k - 1)
        v = {i: self.grad(u[i]) for i in range(max(k - 2, 1))}
        out = [-a_top[al] for al in range(self.n)]
        top = self._term_R_top(u[k - 2])
        for al in range(self.n):
            out[al] += top[al]
        s = k // 2
        if k % 2 == 0:
            for l in range(1, s):
                p, q = s + l - 2, s - l - 1
                for term in (self._term_R_uv(u[q], v[p]), self._term_E(u[p], u[q]), self._term_R_uv(u[p], v[q])):
                    for al in range(self.n):
                        out[al] += term[al]
        else:
            for l in range(1, s):
                p, q = s + l - 1, s - l - 1
                for term in (self._term_R_uv(u[q], v[p]), self._term_E(u[p], u[q]), self._term_R_uv(u[p], v[q])):
                    for al in range(self.n):
                        out[al] += term[al]
            final1 = self._term_R_uv(u[s - 1], v[s - 1])
            final2 = self._term_half_E(u[s - 1], u[s - 1])
            for al in range(self.n):
                out[al] += final1[al] + final2[al]
        return [self._norm(e) for e in out]

    def tau_k_literal(self, k: int):
        """tau_k = lap u_{k-2} - F^k with the literal coordinate F^k."""
        u, _ = self.tower(k - 2)
        fk = self.fk_literal(k)
        return [self._norm(self.lap(u[k - 2][al]) - fk[al]) for al in range(self.n)]

    def bitension_reference(self):
        """Independent bitension: lapbar tau + Sum_j R(dphi_j, tau) dphi_j."""
        lb = self.rough_lap(self.tension)
        out = [sp.S.Zero] * self.n
        for i, j, gij in self.trace_pairs():
            Xi = [self.dphi[b][i] for b in range(self.n)]
            term = self.curv_apply(Xi, self.tension, [self.dphi[d][j] for d in range(self.n)])
            for a in range(self.n):
                out[a] += gij * term[a]
        return [self._norm(lb[a] + out[a]) for a in range(self.n)]

    # -- fourth-order curvature corrections (ES-4) -----------------------------------

    def _require_es4(self):
        self.tgt.require_jets(2, "fourth-order curvature correction")
        _ = self.tgt.nabla_riemann_exprs

    @functools.cached_property
    def curv_2form(self):
        """T_{ij} = R(dphi_i, dphi_j) tau: components [i][j][a]."""
        u0 = self.tension
        out = _nested((self.m, self.m, self.n))
        for i in range(self.m):
            for j in range(self.m):
                Xi = [self.dphi[b][i] for b in range(self.n)]
                Yj = [self.dphi[c][j] for c in range(self.n)]
                out[i][j] = self.curv_apply(Xi, Yj, u0)
        return out

    @functools.cached_property
    def omega0(self):
        """Omega_0 = R(dphi_i, dphi_j)(R(dphi_i, dphi_j) tau), frames g-traced."""
        T = self.curv_2form
        out = [sp.S.Zero] * self.n
        for i, ip, gii in self.trace_pairs():
            for j, jp, gjj in self.trace_pairs():
                Xi = [self.dphi[b][i] for b in range(self.n)]
                Yj = [self.dphi[c][j] for c in range(self.n)]
                term = self.curv_apply(Xi, Yj, T[ip][jp])
                for a in range(self.n):
                    out[a] += gii * gjj * term[a]
        return [self._norm(e) for e in out]

    @functools.cached_property
    def omega1(self):
        """Omega_1(d/dx^i) = R(R(dphi_i, dphi_j) tau, tau) dphi_j: [i][a]."""
        T = self.curv_2form
        u0 = self.tension
        out = _nested((self.m, self.n))
        for i in range(self.m):
            acc = [sp.S.Zero] * self.n
            for j, jp, gjj in self.trace_pairs():
                term = self.curv_apply(T[i][j], u0, [self.dphi[d][jp] for d in range(self.n)])
                for a in range(self.n):
                    acc[a] += gjj * term[a]
            out[i] = acc
        return out

    def nabla_r_apply(self, W, X, Y, Z):
        """[(nabla_W R)(X, Y) Z]^a = W^e X^b Y^c Z^d R^a_{dbc;e}."""
        nr = self.nabla_riemann_c
        out = []
        for a in range(self.n):
            e = sp.S.Zero
            for b in range(self.n):
                for c in range(self.n):
                    for d in range(self.n):
                        for ee in range(self.n):
                            if nr[a][d][b][c][ee] != 0:
                                e += W[ee] * X[b] * Y[c] * Z[d] * nr[a][d][b][c][ee]
            out.append(e)
        return out

    @functools.cached_property
    def xi1(self):
        """xi_1 = -(nabla_{dphi_j} R)(R(dphi_i, dphi_j) tau, tau, dphi_i)."""
        self._require_es4()
        T = self.curv_2form
        u0 = self.tension
        out = [sp.S.Zero] * self.n
        for i, ip, gii in self.trace_pairs():
            for j, jp, gjj in self.trace_pairs():
                W = [self.dphi[e][jp] for e in range(self.n)]
                Z = [self.dphi[d][ip] for d in range(self.n)]
                term = self.nabla_r_apply(W, T[i][j], u0, Z)
                for a in range(self.n):
                    out[a] -= gii * gjj * term[a]
        return [self._norm(e) for e in out]

    @functools.cached_property
    def codifferential_terms(self):
        """The five tensorial terms whose sum is -(xi_1 + d* Omega_1):
        expanding the codifferential of Omega_1 in a geodesic frame yields
        xi_1 plus these, so 2 xi_1 + 2 d* Omega_1 = -2 (L2+L3+L4+L5+L6)."""
        self._require_es4()
        u0 = self.tension
        cd_u0 = self.covd(u0)
        T = self.curv_2form
        P = self.second_ff
        L = []

        # L2 = R((nabla_{dphi_i} R)(dphi_i, dphi_j, tau), tau) dphi_j
        acc = [sp.S.Zero] * self.n
        for i, ip, gii in self.trace_pairs():
            for j, jp, gjj in self.trace_pairs():
                inner = self.nabla_r_apply(
                    [self.dphi[e][i] for e in range(self.n)],
                    [self.dphi[b][ip] for b in range(self.n)],
                    [self.dphi[c][j] for c in range(self.n)],
                    u0,
                )
                term = self.curv_apply(inner, u0, [self.dphi[d][jp] for d in range(self.n)])
                for a in range(self.n):
                    acc[a] += gii * gjj * term[a]
        L.append(acc)

        # L3 = R(R(tau, dphi_j) tau, tau) dphi_j
        acc = [sp.S.Zero] * self.n
        for j, jp, gjj in self.trace_pairs():
            inner = self.curv_apply(u0, [self.dphi[c][j] for c in range(self.n)], u0)
            term = self.curv_apply(inner, u0, [self.dphi[d][jp] for d in range(self.n)])
            for a in range(self.n):
                acc[a] += gjj * term[a]
        L.append(acc)

        # L4 = R(R(dphi_i, nabla dphi(e_i, e_j)) tau, tau) dphi_j
        acc = [sp.S.Zero] * self.n
        for i, ip, gii in self.trace_pairs():
            for j, jp, gjj in self.trace_pairs():
                inner = self.curv_apply(
                    [self.dphi[b][i] for b in range(self.n)],
                    [P[c][ip][j] for c in range(self.n)],
                    u0,
                )
                term = self.curv_apply(inner, u0, [self.dphi[d][jp] for d in range(self.n)])
                for a in range(self.n):
                    acc[a] += gii * gjj * term[a]
        L.append(acc)

        # L5 = R(R(dphi_i, dphi_j) covd_i tau, tau) dphi_j
        acc = [sp.S.Zero] * self.n
        for i, ip, gii in self.trace_pairs():
            for j, jp, gjj in self.trace_pairs():
                inner = self.curv_apply(
                    [self.dphi[b][i] for b in range(self.n)],
                    [self.dphi[c][j] for c in range(self.n)],
                    [cd_u0[d][ip] for d in range(self.n)],
                )
                term = self.curv_apply(inner, u0, [self.dphi[d][jp] for d in range(self.n)])
                for a in range(self.n):
                    acc[a] += gii * gjj * term[a]
        L.append(acc)

        # L6 = R(R(dphi_i, dphi_j) tau, covd_i tau) dphi_j
        acc = [sp.S.Zero] * self.n
        for i, ip, gii in self.trace_pairs():
            for j, jp, gjj in self.trace_pairs():
                term = self.curv_apply(
                    T[i][j],
                    [cd_u0[d][ip] for d in range(self.n)],
                    [self.dphi[d][jp] for d in range(self.n)],
                )
                for a in range(self.n):
                    acc[a] += gii * gjj * term[a]
        L.append(acc)
        return L

    @functools.cached_property
    def two_xi1_plus_two_dstar_omega1(self):
        L = self.codifferential_terms
        return [self._norm(-2 * sp.Add(*[Lt[a] for Lt in L])) for a in range(self.n)]

    def dstar_omega1_direct(self):
        """Independent codifferential: d* w = -g^{kl} [ d_k w_l^a
        + Gamma^a_{bc} dphi^b_k w_l^c - Gamma^p_{kl} w_p^a ]."""
        w = self.omega1
        out = []
        for a in range(self.n):
            e = sp.S.Zero
            for k, l, gkl in self.trace_pairs():
                inner = sp.diff(w[l][a], self.xs[k])
                for b in range(self.n):
                    for c in range(self.n):
                        if self.gamma_c[a][b][c] != 0:
                            inner += self.gamma_c[a][b][c] * self.dphi[b][k] * w[l][c]
                for p in range(self.m):
                    if self.gam_dom[p][k][l] != 0:
                        inner -= self.gam_dom[p][k][l] * w[p][a]
                e -= gkl * inner
            out.append(e)
        return out

    @functools.cached_property
    def nabla_omega0_tensorial(self):
        """(covd_l Omega_0) through the Leibniz expansion of the double
        curvature composite; [l][a].  Uses nabla R, the second fundamental
        form and covd tau instead of differentiating Omega_0's components."""
        self._require_es4()
        u0 = self.tension
        cd_u0 = self.covd(u0)
        T = self.curv_2form
        P = self.second_ff
        out = _nested((self.m, self.n))
        for l in range(self.m):
            acc = [sp.S.Zero] * self.n
            dphil = [self.dphi[e][l] for e in range(self.n)]
            for i, ip, gii in self.trace_pairs():
                for j, jp, gjj in self.trace_pairs():
                    Xi = [self.dphi[b][i] for b in range(self.n)]
                    Yj = [self.dphi[c][j] for c in range(self.n)]
                    Pli = [P[b][l][i] for b in range(self.n)]
                    t1 = self.nabla_r_apply(dphil, Xi, Yj, T[ip][jp])
                    t2 = self.curv_apply(Pli, Yj, T[ip][jp])
                    inner = self.nabla_r_apply(dphil, [self.dphi[b][ip] for b in range(self.n)],
                                               [self.dphi[c][jp] for c in range(self.n)], u0)
                    inner2 = self.curv_apply([P[b][l][ip] for b in range(self.n)],
                                             [self.dphi[c][jp] for c in range(self.n)], u0)
                    inner3 = self.curv_apply([self.dphi[b][ip] for b in range(self.n)],
                                             [self.dphi[c][jp] for c in range(self.n)],
                                             [cd_u0[d][l] for d in range(self.n)])
                    w = [inner[d] + 2 * inner2[d] + inner3[d] for d in range(self.n)]
                    t3 = self.curv_apply(Xi, Yj, w)
                    for a in range(self.n):
                        acc[a] += gii * gjj * (t1[a] + 2 * t2[a] + t3[a])
            out[l] = acc
        return out

    def lapbar_omega0_expanded(self):
        """lapbar Omega_0 via one covariant derivative of the tensorial
        first-derivative expansion (the 'path (b)' evaluation)."""
        V = self.nabla_omega0_tensorial
        out = []
        for a in range(self.n):
            e = sp.S.Zero
            for k, l, gkl in self.trace_pairs():
                inner = sp.diff(V[l][a], self.xs[k])
                for b in range(self.n):
                    for c in range(self.n):
                        if self.gamma_c[a][b][c] != 0:
                            inner += self.gamma_c[a][b][c] * self.dphi[b][k] * V[l][c]
                for p in range(self.m):
                    if self.gam_dom[p][k][l] != 0:
                        inner -= self.gam_dom[p][k][l] * V[p][a]
                e -= gkl * inner
            out.append(self._norm(e))
        return out

    def lapbar_omega0_rough(self):
        """lapbar Omega_0 via the section-Laplacian formula applied to the
        Omega_0 components (the 'path (a)' evaluation)."""
        return self.rough_lap(self.omega0)

    def hat_tau4(self, lapbar_omega0=None):
        """hat tau_4 = -1/2 (2 xi_1 + 2 d* Omega_1 + lapbar Omega_0 + Tr R(dphi, Omega_0) dphi)."""
        self._require_es4()
        lo = lapbar_omega0 if lapbar_omega0 is not None else self.lapbar_omega0_rough()
        tr = self.trace_R_dphi_on(self.omega0)
        core = self.two_xi1_plus_two_dstar_omega1
        return [self._norm(-(core[a] + lo[a] + tr[a]) / 2) for a in range(self.n)]

    def trace_R_dphi_on(self, sec):
        """Sum_i R(dphi_i, sec) dphi_i, g-traced."""
        out = [sp.S.Zero] * self.n
        for i, j, gij in self.trace_pairs():
            Xi = [self.dphi[b][i] for b in range(self.n)]
            term = self.curv_apply(Xi, sec, [self.dphi[d][j] for d in range(self.n)])
            for a in range(self.n):
                out[a] += gij * term[a]
        return out

    # -- Weitzenboeck residual --------------------------------------------------------

    def weitzenbock_defect(self):
        """Per-index defect of the commutation identity

        Sum_k covd_k covd_k dphi(e_i) - R(dphi_k, dphi_i) dphi_k
            - dphi(Ric^M(e_i)) - covd_i tau   -> [i][a]
        """
        P = self.second_ff
        ric = self.dom.ricci_exprs
        cd_tau = self.covd(self.tension)
        out = _nested((self.m, self.n))
        for i_free in range(self.m):
            # trace of the second covariant derivative of dphi, slot i free
            acc = [sp.S.Zero] * self.n
            for k, l, gkl in self.trace_pairs():
                for a in range(self.n):
                    e = sp.diff(P[a][l][i_free], self.xs[k])
                    for b in range(self.n):
                        for c in range(self.n):
                            if self.gamma_c[a][b][c] != 0:
                                e += self.gamma_c[a][b][c] * self.dphi[b][k] * P[c][l][i_free]
                    for p in range(self.m):
                        if self.gam_dom[p][k][l] != 0:
                            e -= self.gam_dom[p][k][l] * P[a][p][i_free]
                        if self.gam_dom[p][k][i_free] != 0:
                            e -= self.gam_dom[p][k][i_free] * P[a][l][p]
                    acc[a] += gkl * e
            # curvature term R(dphi_k, dphi_i) dphi_k, k g-traced
            for k, l, gkl in self.trace_pairs():
                term = self.curv_apply(
                    [self.dphi[b][k] for b in range(self.n)],
                    [self.dphi[c][i_free] for c in range(self.n)],
                    [self.dphi[d][l] for d in range(self.n)],
                )
                for a in range(self.n):
                    acc[a] -= gkl * term[a]
            # dphi(Ric(e_i)) with the mixed Ricci tensor
            for a in range(self.n):
                for jj in range(self.m):
                    coef = sp.S.Zero
                    for kk in range(self.m):
                        if ric[kk][i_free] != 0 and self.ginv[jj][kk] != 0:
                            coef += self.ginv[jj][kk] * ric[kk][i_free]
                    if coef != 0:
                        acc[a] -= coef * self.dphi[a][jj]
                acc[a] -= cd_tau[a][i_free]
            out[i_free] = [self._norm(e) for e in acc]
        return out

    # -- commutator of the Laplacian with coordinate partials ---------------------------

    def lap_partial_commutator(self, w_tab):
        """C_i(w) for a table w[comp][k] of first partials:

        lap(d_i f) = d_i(lap f) + C_i(df) with
        C_i(w)^comp = dg^{kj}/dx^i d_j w^comp_k
                      - (dg^{lj}/dx^i Gam^k_{lj} + g^{lj} dGam^k_{lj}/dx^i) w^comp_k.
        Vanishes identically on flat domain charts.
        """
        ncomp = len(w_tab)
        out = _nested((ncomp, self.m))
        for i in range(self.m):
            for comp in range(ncomp):
                e = sp.S.Zero
                for k in range(self.m):
                    for j in range(self.m):
                        dg = sp.diff(self.ginv[k][j], self.xs[i])
                        if dg != 0:
                            e += dg * sp.diff(w_tab[comp][k], self.xs[j])
                    coef = sp.S.Zero
                    for l in range(self.m):
                        for j in range(self.m):
                            dg = sp.diff(self.ginv[l][j], self.xs[i])
                            if dg != 0 and self.gam_dom[k][l][j] != 0:
                                coef += dg * self.gam_dom[k][l][j]
                            if self.ginv[l][j] != 0:
                                dgam = sp.diff(self.gam_dom[k][l][j], self.xs[i])
                                if dgam != 0:
                                    coef += self.ginv[l][j] * dgam
                    if coef != 0:
                        e -= coef * w_tab[comp][k]
                out[comp][i] = e
        return out

    # -- evaluation ---------------------------------------------------------------------

    def eval_on(self, exprs, mesh):
        """Evaluate a nested list of expressions on mesh coordinate arrays.

        Returns an ndarray shaped like the nesting followed by the node shape.
        Lambdified callables are cached per expression tuple.
        """
        flat: list[sp.Expr] = []
        _flatten(exprs, flat)
        shape = _nesting_shape(exprs)
        key = tuple(flat)
        fn = self._lam_cache.get(key)
        if fn is None:
            fn = sp.lambdify(list(self.xs), flat, modules="numpy", cse=True)
            self._lam_cache[key] = fn
        pts = [np.asarray(p, dtype=float) for p in mesh]
        node_shape = np.broadcast_shapes(*(p.shape for p in pts)) if pts else ()
        with np.errstate(all="ignore"):
            vals = fn(*pts)
        arrs = [np.broadcast_to(np.asarray(v, dtype=float), node_shape) for v in vals]
        stacked = np.stack(arrs) if arrs else np.zeros((0,) + node_shape)
        return stacked.reshape(shape + node_shape) if shape else stacked[0]


def _nesting_shape(obj) -> tuple[int, ...]:
    if isinstance(obj, (list, tuple)):
        inner = _nesting_shape(obj[0]) if obj else ()
        return (len(obj),) + inner
    return ()

"""Analytic chart models of the domain and target manifolds.

Both sides live in a single coordinate chart.  All model data (metric,
Christoffel symbols and their coordinate jets, curvature and its covariant
derivatives, the derived tensors S, C, E) is obtained by symbolic
differentiation of closed-form metric expressions and is therefore exact;
model data is never finite-differenced.

Conventions
-----------
* Laplacian with the geometer's sign: ``lap f = -f''`` on the real line.
* Curvature: ``R(d/dy^b, d/dy^c) d/dy^d = R^a_{dbc} d/dy^a``; the last two
  lower indices form the antisymmetric pair.
* Unit round sphere S^n in geodesic polar coordinates ``(w, s)`` around a
  pole: ``h = sin^2(s) * gt(w) + ds^2`` where ``gt`` is the round metric of
  the equator factor S^{n-1}.  The equator factor chart is the angle chart
  for n = 2 (gt = 1) and the stereographic chart for n >= 3
  (gt_ab = 4 delta_ab / (1+|w|^2)^2).  The chart excludes collars
  [0, eps) and (pi - eps, pi] around the poles.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import sympy as sp

from . import stencils
from .errors import CapabilityError, ChartDomainError, ConfigurationError

__all__ = [
    "ChartBox",
    "DomainModel",
    "TargetModel",
    "DerivedTensors",
    "flat_torus",
    "domain_from_metric",
    "sphere_cap_domain",
    "euclidean",
    "round_sphere_polar",
    "space_form",
    "target_from_metric",
    "sphere_christoffels",
    "riemann_at",
    "nabla_riemann_at",
    "nabla2_riemann_at",
    "derived_tensors_at",
    "domain_laplacian",
    "stereographic_factor_metric",
]

_DEFAULT_COLLAR = 1e-3


def _sym_zeros(shape):
    if not shape:
        return sp.S.Zero
    return [_sym_zeros(shape[1:]) for _ in range(shape[0])]


def _map_nested(f, obj):
    if isinstance(obj, list):
        return [_map_nested(f, o) for o in obj]
    return f(obj)


def _flatten(obj, out):
    if isinstance(obj, list):
        for o in obj:
            _flatten(o, out)
    else:
        out.append(obj)


def lambdify_tensor(coords: Sequence[sp.Symbol], tensor, shape: tuple[int, ...]) -> Callable:
    """Lambdify a nested list of sympy expressions into a vectorized callable.

    The callable takes ``len(coords)`` broadcastable arrays and returns an
    ndarray of shape ``shape + node_shape``.
    """
    flat: list[sp.Expr] = []
    _flatten(tensor, flat)
    fn = sp.lambdify(list(coords), flat, modules="numpy", cse=True)

    def call(*points: np.ndarray) -> np.ndarray:
        pts = [np.asarray(p, dtype=float) for p in points]
        node_shape = np.broadcast_shapes(*(p.shape for p in pts)) if pts else ()
        with np.errstate(all="ignore"):
            vals = fn(*pts)
        arrs = [np.broadcast_to(np.asarray(v, dtype=float), node_shape) for v in vals]
        return np.stack(arrs).reshape(shape + node_shape) if shape else arrs[0]

    return call


def christoffel_from_metric(g, ginv, coords):
    """Gamma^k_{ij} = 1/2 g^{kl} (g_{li,j} + g_{lj,i} - g_{ij,l})."""
    d = len(coords)
    out = _sym_zeros((d, d, d))
    for k in range(d):
        for i in range(d):
            for j in range(i, d):
                e = sp.S.Zero
                for l in range(d):
                    if ginv[k][l] == 0:
                        continue
                    e += ginv[k][l] * (sp.diff(g[l][i], coords[j]) + sp.diff(g[l][j], coords[i]) - sp.diff(g[i][j], coords[l]))
                e = sp.cancel(e / 2) if e.is_rational_function(*coords) else e / 2
                out[k][i][j] = e
                out[k][j][i] = e
    return out


def riemann_from_christoffel(gamma, coords):
    """R^a_{dbc} = d_b Gamma^a_{cd} - d_c Gamma^a_{bd} + Gamma^m_{cd} Gamma^a_{bm} - Gamma^m_{bd} Gamma^a_{cm}."""
    d = len(coords)
    out = _sym_zeros((d, d, d, d))
    for a in range(d):
        for dd in range(d):
            for b in range(d):
                for c in range(d):
                    e = sp.diff(gamma[a][c][dd], coords[b]) - sp.diff(gamma[a][b][dd], coords[c])
                    for mu in range(d):
                        e += gamma[mu][c][dd] * gamma[a][b][mu] - gamma[mu][b][dd] * gamma[a][c][mu]
                    out[a][dd][b][c] = e
    return out


def covariant_derivative_of_riemann(riem, gamma, coords):
    """R^a_{dbc;e}: one covariant derivative of a (1,3) curvature-type tensor."""
    d = len(coords)
    out = _sym_zeros((d, d, d, d, d))
    for a in range(d):
        for dd in range(d):
            for b in range(d):
                for c in range(d):
                    for e_ in range(d):
                        expr = sp.diff(riem[a][dd][b][c], coords[e_])
                        for mu in range(d):
                            expr += gamma[a][e_][mu] * riem[mu][dd][b][c]
                            expr -= gamma[mu][e_][dd] * riem[a][mu][b][c]
                            expr -= gamma[mu][e_][b] * riem[a][dd][mu][c]
                            expr -= gamma[mu][e_][c] * riem[a][dd][b][mu]
                        out[a][dd][b][c][e_] = expr
    return out


@dataclass(frozen=True)
class ChartBox:
    """Rectangular chart descriptor: per-axis bounds, periodic or not."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]
    periodic: bool = True

    @property
    def lengths(self) -> tuple[float, ...]:
        return tuple(h - l for l, h in zip(self.lo, self.hi))


class _SymbolicChart:
    """Shared lazy machinery for one-chart models built on a metric expression."""

    def __init__(self, dim: int, coords, metric_exprs):
        self.dim = dim
        self.coords = tuple(coords)
        self.metric_exprs = metric_exprs

    @functools.cached_property
    def metric_inv_exprs(self):
        mat = sp.Matrix(self.metric_exprs)
        inv = mat.inv()
        d = self.dim
        return [[sp.cancel(inv[i, j]) if inv[i, j].is_rational_function(*self.coords) else sp.simplify(inv[i, j])
                 for j in range(d)] for i in range(d)]

    @functools.cached_property
    def christoffel_exprs(self):
        return christoffel_from_metric(self.metric_exprs, self.metric_inv_exprs, self.coords)

    @functools.cached_property
    def christoffel_jet_exprs(self):
        c = self.coords
        g = self.christoffel_exprs
        d = self.dim
        return [[[[sp.diff(g[a][b][cc], c[e]) for e in range(d)] for cc in range(d)] for b in range(d)] for a in range(d)]

    @functools.cached_property
    def riemann_exprs(self):
        return riemann_from_christoffel(self.christoffel_exprs, self.coords)

    @functools.cached_property
    def ricci_exprs(self):
        d = self.dim
        riem = self.riemann_exprs
        out = _sym_zeros((d, d))
        for i in range(d):
            for j in range(d):
                e = sp.Add(*[riem[k][j][k][i] for k in range(d)])
                out[i][j] = sp.cancel(e) if e.is_rational_function(*self.coords) else sp.simplify(e)
        return out

    @functools.cached_property
    def metric_inv_jet_exprs(self):
        d = self.dim
        gi = self.metric_inv_exprs
        return [[[sp.diff(gi[k][j], self.coords[i]) for i in range(d)] for j in range(d)] for k in range(d)]


@dataclass(frozen=True)
class DomainModel:
    """The (M, g) side: metric, Christoffels and their jets, Ricci tensor.

    Numeric evaluators are vectorized over trailing node axes; symbolic
    expressions are exposed for the analytic-jet pipeline.
    """

    dim: int
    coords: tuple[sp.Symbol, ...]
    chart: ChartBox
    name: str
    _sym: _SymbolicChart = field(repr=False)

    @property
    def metric_exprs(self):
        return self._sym.metric_exprs

    @property
    def metric_inv_exprs(self):
        return self._sym.metric_inv_exprs

    @property
    def christoffel_exprs(self):
        return self._sym.christoffel_exprs

    @property
    def christoffel_jet_exprs(self):
        return self._sym.christoffel_jet_exprs

    @property
    def ricci_exprs(self):
        return self._sym.ricci_exprs

    @property
    def is_flat_euclidean(self) -> bool:
        d = self.dim
        ident = all(self.metric_exprs[i][j] == (1 if i == j else 0) for i in range(d) for j in range(d))
        return ident

    @functools.cached_property
    def metric(self) -> Callable:
        return lambdify_tensor(self.coords, self.metric_exprs, (self.dim, self.dim))

    @functools.cached_property
    def metric_inv(self) -> Callable:
        return lambdify_tensor(self.coords, self.metric_inv_exprs, (self.dim, self.dim))

    @functools.cached_property
    def christoffel(self) -> Callable:
        return lambdify_tensor(self.coords, self.christoffel_exprs, (self.dim,) * 3)

    @functools.cached_property
    def christoffel_jet(self) -> Callable:
        return lambdify_tensor(self.coords, self.christoffel_jet_exprs, (self.dim,) * 4)

    @functools.cached_property
    def ricci(self) -> Callable:
        return lambdify_tensor(self.coords, self.ricci_exprs, (self.dim, self.dim))

    @functools.cached_property
    def metric_inv_jet(self) -> Callable:
        return lambdify_tensor(self.coords, self._sym.metric_inv_jet_exprs, (self.dim,) * 3)


def flat_torus(dim: int, period: float | Sequence[float] = 2 * np.pi) -> DomainModel:
    """Flat torus T^dim with the euclidean metric and the given periods."""
    periods = [float(period)] * dim if np.isscalar(period) else [float(p) for p in period]
    coords = tuple(sp.symbols(f"x1:{dim + 1}", real=True))
    g = [[sp.S.One if i == j else sp.S.Zero for j in range(dim)] for i in range(dim)]
    chart = ChartBox(lo=(0.0,) * dim, hi=tuple(periods), periodic=True)
    return DomainModel(dim, coords, chart, f"flat_torus_{dim}d", _SymbolicChart(dim, coords, g))


def domain_from_metric(metric_exprs, coords, box: ChartBox, name: str = "user_domain") -> DomainModel:
    """Domain chart from explicit metric expressions in the given symbols."""
    dim = len(coords)
    return DomainModel(dim, tuple(coords), box, name, _SymbolicChart(dim, tuple(coords), metric_exprs))


def stereographic_factor_metric(dim: int, coords) -> list[list[sp.Expr]]:
    """Round metric of the unit S^dim in the stereographic chart (dim >= 1),
    or the flat angle-chart metric for dim = 1."""
    if dim == 1:
        return [[sp.S.One]]
    w2 = sp.Add(*[c**2 for c in coords])
    conf = 4 / (1 + w2) ** 2
    return [[conf if i == j else sp.S.Zero for j in range(dim)] for i in range(dim)]


def sphere_cap_domain(dim: int, scale_angle: float | sp.Expr, half_width: float = 1.0) -> DomainModel:
    """The latitude sphere S^dim(sin alpha) as a domain chart.

    Metric: sin^2(alpha) times the round unit-S^dim metric in the factor chart
    (angle chart for dim = 1, stereographic for dim >= 2).  The chart is a
    non-periodic box; it supports pointwise analytic evaluation only.
    """
    coords = tuple(sp.symbols(f"x1:{dim + 1}", real=True)) if dim > 1 else (sp.Symbol("x1", real=True),)
    gt = stereographic_factor_metric(dim, coords)
    sa2 = sp.sin(scale_angle) ** 2
    g = [[sa2 * gt[i][j] for j in range(dim)] for i in range(dim)]
    periodic = dim == 1
    chart = ChartBox(lo=(-half_width,) * dim, hi=(half_width,) * dim, periodic=periodic)
    if dim == 1:
        chart = ChartBox(lo=(0.0,), hi=(2 * np.pi,), periodic=True)
    return DomainModel(dim, coords, chart, f"sphere_cap_{dim}d", _SymbolicChart(dim, coords, g))


# ---------------------------------------------------------------------------
# target models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DerivedTensors:
    """The derived target tensors entering the section Laplacian and the
    reduced right-hand sides:

    * ``2 S^a_{bwt} = dGamma^a_{bt}/dy^w + Gamma^g_{bt} Gamma^a_{wg}
      + dGamma^a_{wt}/dy^b + Gamma^g_{wt} Gamma^a_{bg}``
    * ``C^a_{tsn} = Gamma^m_{ts} Gamma^a_{mn} - S^a_{tsn}``
    * ``E^a_{bdth} = R^a_{bgd} Gamma^g_{th} + R^a_{bgt} Gamma^g_{dh}``
    """

    S: np.ndarray
    C: np.ndarray
    E: np.ndarray


class TargetModel:
    """The (N, h) side: Christoffel jets, curvature and its covariant
    derivatives, plus the derived tensors, all from closed forms.

    ``kind`` is one of ``euclidean``, ``round_sphere_polar``, ``space_form``
    or ``user_metric``.  ``jet_order`` caps how deep a Christoffel jet the
    model claims to provide; operations requiring deeper jets raise
    :class:`CapabilityError`.  Space forms (including the round sphere) use
    the constant-curvature closed form for R and have ``nabla R = 0`` and
    ``nabla^2 R = 0`` identically.
    """

    def __init__(self, dim, coords, metric_exprs, kind, name, curvature_const=None,
                 collar=_DEFAULT_COLLAR, jet_order=6):
        self.dim = dim
        self.coords = tuple(coords)
        self.kind = kind
        self.name = name
        self.curvature_const = curvature_const
        self.collar = collar
        self.jet_order = jet_order
        self._sym = _SymbolicChart(dim, self.coords, metric_exprs)

    # -- symbolic data ------------------------------------------------------

    @property
    def metric_exprs(self):
        return self._sym.metric_exprs

    @property
    def christoffel_exprs(self):
        return self._sym.christoffel_exprs

    def require_jets(self, order: int, what: str = "operation") -> None:
        if order > self.jet_order:
            raise CapabilityError(
                f"{what} needs Christoffel jets of order {order} but target "
                f"'{self.name}' provides order {self.jet_order}"
            )

    @functools.cached_property
    def christoffel_jet_exprs(self):
        self.require_jets(1, "Christoffel jet")
        return self._sym.christoffel_jet_exprs

    @functools.cached_property
    def christoffel_jet2_exprs(self):
        self.require_jets(2, "second Christoffel jet")
        c, d = self.coords, self.dim
        j1 = self.christoffel_jet_exprs
        return [[[[[sp.diff(j1[a][b][cc][e], c[f]) for f in range(d)] for e in range(d)]
                  for cc in range(d)] for b in range(d)] for a in range(d)]

    @property
    def is_space_form(self) -> bool:
        return self.curvature_const is not None

    @functools.cached_property
    def riemann_exprs(self):
        if self.is_space_form:
            c = sp.nsimplify(self.curvature_const)
            h = self.metric_exprs
            d = self.dim
            return [[[[c * (-h[b][dd] * (1 if a == g else 0) + h[g][dd] * (1 if a == b else 0))
                       for g in range(d)] for b in range(d)] for dd in range(d)] for a in range(d)]
        self.require_jets(1, "curvature tensor")
        return self._sym.riemann_exprs

    @functools.cached_property
    def nabla_riemann_exprs(self):
        d = self.dim
        if self.is_space_form:
            return _sym_zeros((d, d, d, d, d))
        self.require_jets(2, "covariant derivative of curvature")
        return covariant_derivative_of_riemann(self.riemann_exprs, self.christoffel_exprs, self.coords)

    @functools.cached_property
    def nabla2_riemann_exprs(self):
        d = self.dim
        if self.is_space_form:
            return _sym_zeros((d, d, d, d, d, d))
        self.require_jets(3, "second covariant derivative of curvature")
        nr = self.nabla_riemann_exprs
        gam = self.christoffel_exprs
        c = self.coords
        out = _sym_zeros((d,) * 6)
        for a in range(d):
            for dd in range(d):
                for b in range(d):
                    for cc in range(d):
                        for e in range(d):
                            for f in range(d):
                                expr = sp.diff(nr[a][dd][b][cc][e], c[f])
                                for mu in range(d):
                                    expr += gam[a][f][mu] * nr[mu][dd][b][cc][e]
                                    expr -= gam[mu][f][dd] * nr[a][mu][b][cc][e]
                                    expr -= gam[mu][f][b] * nr[a][dd][mu][cc][e]
                                    expr -= gam[mu][f][cc] * nr[a][dd][b][mu][e]
                                    expr -= gam[mu][f][e] * nr[a][dd][b][cc][mu]
                                out[a][dd][b][cc][e][f] = expr
        return out

    @functools.cached_property
    def s_tensor_exprs(self):
        self.require_jets(1, "S tensor")
        d = self.dim
        gam = self.christoffel_exprs
        dgam = self.christoffel_jet_exprs
        out = _sym_zeros((d, d, d, d))
        for a in range(d):
            for b in range(d):
                for w in range(b, d):
                    for t in range(d):
                        e = dgam[a][b][t][w] + dgam[a][w][t][b]
                        for g in range(d):
                            e += gam[g][b][t] * gam[a][w][g] + gam[g][w][t] * gam[a][b][g]
                        e = e / 2
                        out[a][b][w][t] = e
                        out[a][w][b][t] = e
        return out

    @functools.cached_property
    def c_tensor_exprs(self):
        d = self.dim
        gam = self.christoffel_exprs
        s = self.s_tensor_exprs
        out = _sym_zeros((d, d, d, d))
        for a in range(d):
            for t in range(d):
                for sg in range(d):
                    for nu in range(d):
                        e = -s[a][t][sg][nu]
                        for mu in range(d):
                            e += gam[mu][t][sg] * gam[a][mu][nu]
                        out[a][t][sg][nu] = e
        return out

    @functools.cached_property
    def e_tensor_exprs(self):
        d = self.dim
        gam = self.christoffel_exprs
        r = self.riemann_exprs
        out = _sym_zeros((d, d, d, d, d))
        for a in range(d):
            for b in range(d):
                for dd in range(d):
                    for t in range(d):
                        for h in range(d):
                            e = sp.S.Zero
                            for g in range(d):
                                e += r[a][b][g][dd] * gam[g][t][h] + r[a][b][g][t] * gam[g][dd][h]
                            out[a][b][dd][t][h] = e
        return out

    # -- numeric evaluators --------------------------------------------------

    @functools.cached_property
    def metric(self):
        return lambdify_tensor(self.coords, self.metric_exprs, (self.dim, self.dim))

    @functools.cached_property
    def christoffel(self):
        return lambdify_tensor(self.coords, self.christoffel_exprs, (self.dim,) * 3)

    @functools.cached_property
    def christoffel_jet(self):
        return lambdify_tensor(self.coords, self.christoffel_jet_exprs, (self.dim,) * 4)

    @functools.cached_property
    def riemann(self):
        return lambdify_tensor(self.coords, self.riemann_exprs, (self.dim,) * 4)

    @functools.cached_property
    def nabla_riemann(self):
        return lambdify_tensor(self.coords, self.nabla_riemann_exprs, (self.dim,) * 5)

    @functools.cached_property
    def nabla2_riemann(self):
        return lambdify_tensor(self.coords, self.nabla2_riemann_exprs, (self.dim,) * 6)

    @functools.cached_property
    def s_tensor(self):
        return lambdify_tensor(self.coords, self.s_tensor_exprs, (self.dim,) * 4)

    @functools.cached_property
    def c_tensor(self):
        return lambdify_tensor(self.coords, self.c_tensor_exprs, (self.dim,) * 4)

    @functools.cached_property
    def e_tensor(self):
        return lambdify_tensor(self.coords, self.e_tensor_exprs, (self.dim,) * 5)

    @property
    def is_curvature_free(self) -> bool:
        return self.curvature_const == 0

    # -- chart domain --------------------------------------------------------

    def chart_violations(self, values: np.ndarray) -> np.ndarray:
        """Boolean mask of points outside the chart domain.

        ``values`` has shape (dim, ...).  For polar sphere charts the last
        coordinate must stay inside (collar, pi - collar); euclidean and user
        charts are unbounded.
        """
        if self.kind in ("round_sphere_polar", "space_form") and self.curvature_const not in (0, None):
            s = values[-1]
            smax = np.pi / np.sqrt(self.curvature_const) if self.curvature_const > 0 else np.inf
            return (s <= self.collar) | (s >= smax - self.collar)
        return np.zeros(np.shape(values)[1:], dtype=bool)

    def check_chart(self, values: np.ndarray, what: str = "map") -> None:
        bad = self.chart_violations(np.asarray(values, dtype=float))
        if np.any(bad):
            raise ChartDomainError(
                f"{what} leaves the chart of target '{self.name}' at {int(np.sum(bad))} node(s)"
            )


def euclidean(dim: int) -> TargetModel:
    coords = tuple(sp.symbols(f"y1:{dim + 1}", real=True))
    g = [[sp.S.One if i == j else sp.S.Zero for j in range(dim)] for i in range(dim)]
    return TargetModel(dim, coords, g, "euclidean", f"euclidean_{dim}d", curvature_const=0)


def round_sphere_polar(dim: int, collar: float = _DEFAULT_COLLAR) -> TargetModel:
    """Unit S^dim in geodesic polar coordinates (w, s), s in (collar, pi-collar)."""
    if dim < 2:
        raise ConfigurationError("polar sphere chart needs dim >= 2")
    coords = tuple(sp.symbols(f"y1:{dim + 1}", real=True))
    factor = stereographic_factor_metric(dim - 1, coords[:-1])
    s = coords[-1]
    g = [[sp.sin(s) ** 2 * factor[i][j] if i < dim - 1 and j < dim - 1 else sp.S.Zero
          for j in range(dim)] for i in range(dim)]
    g[dim - 1][dim - 1] = sp.S.One
    return TargetModel(dim, coords, g, "round_sphere_polar", f"sphere_{dim}d", curvature_const=1, collar=collar)


def space_form(dim: int, curvature: float, collar: float = _DEFAULT_COLLAR) -> TargetModel:
    """Simply connected space form of constant curvature ``curvature`` in a
    warped polar chart; curvature 0 degrades to the euclidean chart."""
    if curvature == 0:
        return euclidean(dim)
    coords = tuple(sp.symbols(f"y1:{dim + 1}", real=True))
    factor = stereographic_factor_metric(dim - 1, coords[:-1])
    s = coords[-1]
    c = sp.nsimplify(curvature)
    if curvature > 0:
        warp = sp.sin(sp.sqrt(c) * s) / sp.sqrt(c)
    else:
        warp = sp.sinh(sp.sqrt(-c) * s) / sp.sqrt(-c)
    g = [[warp**2 * factor[i][j] if i < dim - 1 and j < dim - 1 else sp.S.Zero for j in range(dim)] for i in range(dim)]
    g[dim - 1][dim - 1] = sp.S.One
    return TargetModel(dim, coords, g, "space_form", f"space_form_{dim}d_c{curvature}",
                       curvature_const=curvature, collar=collar)


def target_from_metric(metric_exprs, coords, name: str = "user_target", jet_order: int = 6) -> TargetModel:
    dim = len(coords)
    return TargetModel(dim, tuple(coords), metric_exprs, "user_metric", name, jet_order=jet_order)


# ---------------------------------------------------------------------------
# pointwise operations
# ---------------------------------------------------------------------------


def sphere_christoffels(model: TargetModel, point: np.ndarray) -> np.ndarray:
    """All Christoffel components of the polar sphere chart at (w, s).

    The five families: the pure factor symbols, ``G^n_{bc} = -sin(s)cos(s)
    gt_{bc}``, the vanishing families, and ``G^a_{bn} = cot(s) delta^a_b``.
    The factor symbols delegate to the chosen equator chart.
    """
    if model.kind != "round_sphere_polar":
        raise ConfigurationError("sphere_christoffels needs a round_sphere_polar target")
    point = np.asarray(point, dtype=float)
    model.check_chart(point.reshape(model.dim, *point.shape[1:]), what="point")
    return model.christoffel(*point)


def riemann_at(model: TargetModel, point: np.ndarray) -> np.ndarray:
    """Full curvature component array R^a_{dbc} at a chart point."""
    point = np.asarray(point, dtype=float)
    model.check_chart(point.reshape(model.dim, *point.shape[1:]), what="point")
    return model.riemann(*point)


def nabla_riemann_at(model: TargetModel, point: np.ndarray) -> np.ndarray:
    """R^a_{dbc;e} at a chart point; identically zero for space forms."""
    point = np.asarray(point, dtype=float)
    model.check_chart(point.reshape(model.dim, *point.shape[1:]), what="point")
    return model.nabla_riemann(*point)


def nabla2_riemann_at(model: TargetModel, point: np.ndarray) -> np.ndarray:
    """Second covariant derivative of R; identically zero for space forms."""
    point = np.asarray(point, dtype=float)
    model.check_chart(point.reshape(model.dim, *point.shape[1:]), what="point")
    return model.nabla2_riemann(*point)


def derived_tensors_at(model: TargetModel, point: np.ndarray) -> DerivedTensors:
    point = np.asarray(point, dtype=float)
    model.check_chart(point.reshape(model.dim, *point.shape[1:]), what="point")
    return DerivedTensors(S=model.s_tensor(*point), C=model.c_tensor(*point), E=model.e_tensor(*point))


# ---------------------------------------------------------------------------
# grid Laplace-Beltrami
# ---------------------------------------------------------------------------


def grid_axes(dom: DomainModel, shape: tuple[int, ...]):
    """Node coordinates per axis of the periodic grid (no endpoint duplication)."""
    if not dom.chart.periodic:
        raise ConfigurationError(f"domain '{dom.name}' is not periodic; grid operations need a torus chart")
    return [np.linspace(lo, hi, n, endpoint=False) for lo, hi, n in zip(dom.chart.lo, dom.chart.hi, shape)]


def grid_mesh(dom: DomainModel, shape: tuple[int, ...]):
    return np.meshgrid(*grid_axes(dom, shape), indexing="ij")


def domain_laplacian(f: np.ndarray, dom: DomainModel, order: int = 4) -> np.ndarray:
    """Laplace-Beltrami with the geometer's sign on a periodic grid:

    ``lap f = -g^{ij} d2f/dx^i dx^j + g^{ij} Gamma^k_{ij} df/dx^k``
    """
    f = np.asarray(f, dtype=float)
    shape = f.shape
    stencils.check_resolution(shape, order)
    mesh = grid_mesh(dom, shape)
    hs = [(hi - lo) / n for lo, hi, n in zip(dom.chart.lo, dom.chart.hi, shape)]
    ginv = dom.metric_inv(*mesh)
    gam = dom.christoffel(*mesh)
    m = dom.dim
    out = np.zeros_like(f)
    for i in range(m):
        for j in range(m):
            gij = ginv[i, j]
            if np.all(gij == 0):
                continue
            out -= gij * stencils.partial2(f, i, j, hs[i], hs[j], order)
    gradients = [stencils.diff1(f, k, hs[k], order) for k in range(m)]
    for k in range(m):
        coef = np.einsum("ij...,ij...->...", ginv, gam[k])
        out += coef * gradients[k]
    return out

"""Shared models and maps for the test suite.

GridMap fixtures are session-scoped on purpose: the symbolic engine caches
towers and lambdified evaluators per map instance, so expensive fourth-order
assemblies are built once and reused across test modules.
"""
import math

import numpy as np
import pytest
import sympy as sp

from polyharm import geometry as geo
from polyharm.fields import GridMap


def observed_order(sups):
    """Convergence order from a sequence of sup-errors at doubling resolutions."""
    return [math.log2(sups[i] / sups[i + 1]) for i in range(len(sups) - 1)]


@pytest.fixture(scope="session")
def dom_t1():
    return geo.flat_torus(1)


@pytest.fixture(scope="session")
def dom_t2():
    return geo.flat_torus(2)


@pytest.fixture(scope="session")
def dom_bumpy():
    """Non-flat periodic metric on the circle: g11 = (1 + sin(x)/3)^2."""
    x = sp.Symbol("x1", real=True)
    g = [[(1 + sp.sin(x) / 3) ** 2]]
    box = geo.ChartBox(lo=(0.0,), hi=(2 * np.pi,), periodic=True)
    return geo.domain_from_metric(g, (x,), box, name="bumpy_circle")


@pytest.fixture(scope="session")
def dom_box1():
    """Non-periodic interval chart with the euclidean metric."""
    x = sp.Symbol("x1", real=True)
    box = geo.ChartBox(lo=(0.0,), hi=(1.0,), periodic=False)
    return geo.domain_from_metric([[sp.S.One]], (x,), box, name="unit_interval")


@pytest.fixture(scope="session")
def dom_lat2():
    return geo.sphere_cap_domain(2, sp.pi / 3)


@pytest.fixture(scope="session")
def tgt_e1():
    return geo.euclidean(1)


@pytest.fixture(scope="session")
def tgt_e2():
    return geo.euclidean(2)


@pytest.fixture(scope="session")
def tgt_s2():
    return geo.round_sphere_polar(2)


@pytest.fixture(scope="session")
def tgt_s3():
    return geo.round_sphere_polar(3)


# -- the analytic test maps ---------------------------------------------------


@pytest.fixture(scope="session")
def map_flat_flat(dom_t2, tgt_e2):
    x1, x2 = dom_t2.coords
    return GridMap.from_exprs(dom_t2, tgt_e2, (12, 12),
                              (sp.sin(x1 + x2) / 2, sp.cos(x2) * sp.Rational(3, 10)))


@pytest.fixture(scope="session")
def map_flat_sphere(dom_t2, tgt_s2):
    x1, x2 = dom_t2.coords
    return GridMap.from_exprs(dom_t2, tgt_s2, (12, 12),
                              (x1 + sp.sin(x2) / 5, sp.pi / 2 + sp.cos(x1) / 4))


@pytest.fixture(scope="session")
def map_circle_sphere(dom_t1, tgt_s2):
    x = dom_t1.coords[0]
    return GridMap.from_exprs(dom_t1, tgt_s2, (24,),
                              (x, sp.pi / 2 + sp.Rational(2, 5) * sp.sin(x) + sp.cos(2 * x) / 10))


@pytest.fixture(scope="session")
def map_torus_sphere(dom_t2, tgt_s2):
    x1, x2 = dom_t2.coords
    return GridMap.from_exprs(dom_t2, tgt_s2, (12, 12),
                              (2 * x1 + sp.cos(x2) / 5, sp.pi / 2 + sp.sin(x1 + x2) / 4))


@pytest.fixture(scope="session")
def map_latitude(dom_lat2, tgt_s3):
    x1, x2 = dom_lat2.coords
    return GridMap.from_exprs(dom_lat2, tgt_s3, (4, 4), (x1, x2, sp.pi / 3))


# -- harmonic maps ------------------------------------------------------------


@pytest.fixture(scope="session")
def harmonic_maps(dom_t1, dom_t2, dom_box1, tgt_e2, tgt_s2):
    x = dom_t1.coords[0]
    x1, x2 = dom_t2.coords
    xb = dom_box1.coords[0]
    return {
        "constant": GridMap.from_exprs(dom_t2, tgt_s2, (6, 6), (sp.Rational(3, 10), sp.Rational(11, 10))),
        "identity": GridMap.from_exprs(dom_t2, tgt_e2, (6, 6), (x1, x2)),
        "meridian": GridMap.from_exprs(dom_box1, tgt_s2, (8,), (sp.Rational(2, 5), 1 + xb / 2)),
        "equator": GridMap.from_exprs(dom_t1, tgt_s2, (8,), (x, sp.pi / 2)),
        "equator_wrap2": GridMap.from_exprs(dom_t1, tgt_s2, (8,), (2 * x, sp.pi / 2)),
    }


@pytest.fixture(scope="session")
def map_window_equatorial(dom_t1, tgt_s2):
    """Equatorial exactly outside a smooth bump supported on (5/2, 9/2)."""
    x = dom_t1.coords[0]
    a, b = sp.Rational(5, 2), sp.Rational(9, 2)
    q = (x - a) * (b - x)
    bump = sp.Piecewise((sp.exp(-1 / q), sp.And(x > a, x < b)), (sp.S.Zero, True))
    return GridMap.from_exprs(dom_t1, tgt_s2, (128,), (x, sp.pi / 2 + bump / 10))


@pytest.fixture(scope="session")
def pair_maps(dom_t1, tgt_s2):
    x = dom_t1.coords[0]
    p1 = GridMap.from_exprs(dom_t1, tgt_s2, (128,),
                            (x, sp.pi / 2 + sp.Rational(2, 5) * sp.sin(x)))
    p2 = GridMap.from_exprs(dom_t1, tgt_s2, (128,),
                            (x + sp.sin(2 * x) / 10, sp.pi / 2 + sp.Rational(3, 10) * sp.cos(x)))
    return p1, p2

"""Centered finite-difference stencils on periodic grids.

All derivatives are taken with ``np.roll``, so every axis is treated as a
torus.  Coefficients are the classical central-difference weights; the
truncation error of the order-``p`` stencil is O(h^p) for smooth data.
"""
from __future__ import annotations

import numpy as np

from .errors import ConfigurationError

# weights[p] = (offsets, first-derivative weights, second-derivative weights)
_FIRST = {
    2: ((-1, 1), (-0.5, 0.5)),
    4: ((-2, -1, 1, 2), (1 / 12, -2 / 3, 2 / 3, -1 / 12)),
    6: ((-3, -2, -1, 1, 2, 3), (-1 / 60, 3 / 20, -3 / 4, 3 / 4, -3 / 20, 1 / 60)),
}
_SECOND = {
    2: ((-1, 0, 1), (1.0, -2.0, 1.0)),
    4: ((-2, -1, 0, 1, 2), (-1 / 12, 4 / 3, -5 / 2, 4 / 3, -1 / 12)),
    6: ((-3, -2, -1, 0, 1, 2, 3), (1 / 90, -3 / 20, 3 / 2, -49 / 18, 3 / 2, -3 / 20, 1 / 90)),
}

SUPPORTED_ORDERS = tuple(sorted(_FIRST))


def stencil_width(order: int) -> int:
    """Number of nodes the order-``order`` stencil touches along one axis."""
    if order not in _FIRST:
        raise ConfigurationError(f"unsupported stencil order {order}; choose from {SUPPORTED_ORDERS}")
    return len(_SECOND[order][0])


def check_resolution(shape: tuple[int, ...], order: int) -> None:
    w = stencil_width(order)
    if min(shape) < w:
        raise ConfigurationError(
            f"grid shape {shape} too coarse for order-{order} stencil (needs >= {w} nodes per axis)"
        )


def diff1(values: np.ndarray, axis: int, h: float, order: int = 4) -> np.ndarray:
    """First partial derivative along ``axis`` (periodic)."""
    offsets, weights = _FIRST[order]
    out = np.zeros_like(values, dtype=float)
    for off, w in zip(offsets, weights):
        out += w * np.roll(values, -off, axis=axis)
    return out / h


def diff2(values: np.ndarray, axis: int, h: float, order: int = 4) -> np.ndarray:
    """Second partial derivative along ``axis`` (periodic)."""
    offsets, weights = _SECOND[order]
    out = np.zeros_like(values, dtype=float)
    for off, w in zip(offsets, weights):
        out += w * np.roll(values, -off, axis=axis)
    return out / h**2


def partial2(values: np.ndarray, ax1: int, ax2: int, h1: float, h2: float, order: int = 4) -> np.ndarray:
    """Mixed second partial; composes two first-derivative stencils for ax1 != ax2."""
    if ax1 == ax2:
        return diff2(values, ax1, h1, order)
    return diff1(diff1(values, ax2, h2, order), ax1, h1, order)

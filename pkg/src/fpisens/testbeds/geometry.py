"""Hicks-Henne bump parameterization of a face-area distribution."""

from __future__ import annotations

import numpy as np


def hicks_henne_bump(x, peak: float, width: float = 3.0) -> np.ndarray:
    """``sin(pi * x**(log 0.5 / log peak))**width`` on ``x`` in [0, 1]; maximum 1 at ``x = peak``."""
    if not 0.0 < peak < 1.0:
        raise ValueError(f"bump peak must lie in (0, 1), got {peak}")
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    e = np.log(0.5) / np.log(peak)
    return np.sin(np.pi * x**e) ** width


def bump_matrix(x, peaks) -> np.ndarray:
    """Rows are the bump shapes sampled at ``x``; shape ``(len(peaks), len(x))``."""
    return np.array([hicks_henne_bump(x, t) for t in peaks])


def parabolic_nozzle(x, inlet: float, throat: float, exit_: float) -> np.ndarray:
    """Converging-diverging area with throat at x = 0.5, piecewise quadratic."""
    x = np.asarray(x, dtype=float)
    conv = throat + (inlet - throat) * (1.0 - 2.0 * x) ** 2
    div = throat + (exit_ - throat) * (2.0 * x - 1.0) ** 2
    return np.where(x < 0.5, conv, div)

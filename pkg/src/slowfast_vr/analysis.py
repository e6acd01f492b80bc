"""Closed-form predictors for the linear system and ensemble post-processing.

The predictors describe the variance-reduced estimator on the linear model,
where each coupled chain is an affine function of the frozen slow state and
the noise cancels exactly in the control-variate difference.  Everything
here is a pure function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .models import LinearParams, Model, ModelError

__all__ = [
    "TildeConstants",
    "tilde_constants",
    "nobias_micro_step",
    "linear_growth_factor",
    "vr_variance_prediction",
    "vr_estimator_path_linear",
    "asymptotic_bias_linear",
    "fe_exact_path_linear",
    "EnsembleStats",
    "ensemble_stats",
    "exact_mean_reference",
    "silverman_bandwidth",
    "KernelDensity",
    "kernel_density",
]


@dataclass(frozen=True)
class TildeConstants:
    """``A_tilde = A*dt/eps`` and ``B_tilde = (1 - (1 - A_tilde)**M) / (M*A_tilde)``."""

    A_tilde: float
    B_tilde: float
    M: int


def tilde_constants(A: float, delta_t_micro: float, epsilon: float, M: int) -> TildeConstants:
    if not (A > 0 and delta_t_micro > 0 and epsilon > 0):
        raise ModelError("A, delta_t_micro and epsilon must be positive")
    if M < 1:
        raise ModelError(f"M must be >= 1, got {M}")
    a = A * delta_t_micro / epsilon
    contraction = 1.0 - a
    # (1 - a)^M == 1 exactly when a == 2 and M is even; avoid rounding in pow
    if a == 2.0 and M % 2 == 0:
        power = 1.0
    elif a == 2.0:
        power = -1.0
    else:
        power = contraction**M
    return TildeConstants(A_tilde=a, B_tilde=(1.0 - power) / (M * a), M=M)


def nobias_micro_step(A: float, epsilon: float) -> float:
    """Micro step that makes ``B_tilde`` vanish for even ``M``."""
    if not (A > 0 and epsilon > 0):
        raise ModelError("A and epsilon must be positive")
    return 2.0 * epsilon / A


def linear_growth_factor(params: LinearParams, delta_t: float, tc: TildeConstants) -> float:
    """Per-macro-step multiplier ``r`` of the variance-reduced estimate."""
    return 1.0 + delta_t * (params.lam + params.p * params.q / params.A * (1.0 - tc.B_tilde))


def vr_variance_prediction(
    params: LinearParams, delta_t: float, tc: TildeConstants, N: int, var0: float
) -> float:
    if N < 0 or var0 < 0:
        raise ValueError("need N >= 0 and var0 >= 0")
    return linear_growth_factor(params, delta_t, tc) ** (2 * N) * var0


def vr_estimator_path_linear(
    params: LinearParams, delta_t: float, tc: TildeConstants, N: int, F_bar_0: float
) -> float:
    if N < 0:
        raise ValueError("N must be >= 0")
    return linear_growth_factor(params, delta_t, tc) ** N * F_bar_0


def asymptotic_bias_linear(params: LinearParams, tc: TildeConstants, X0: float, F_bar_0: float) -> float:
    """Limit of the macro state as the step count grows."""
    rate = params.lam + params.p * params.q / params.A * (1.0 - tc.B_tilde)
    return X0 - F_bar_0 / rate


def fe_exact_path_linear(params: LinearParams, delta_t: float, x0: float, N: int) -> np.ndarray:
    """Forward Euler iterates ``X^0 .. X^N`` of the averaged linear equation with exact drift."""
    rate = params.averaged_rate
    xs = [float(x0)]
    for _ in range(N):
        xs.append(xs[-1] + delta_t * (rate * xs[-1]))
    return np.array(xs)


@dataclass(frozen=True)
class EnsembleStats:
    mean: np.ndarray
    variance: np.ndarray
    count: int


def _as_matrix(values, field):
    rows = []
    for v in values:
        if field is not None and hasattr(v, field):
            v = getattr(v, field)
        rows.append(np.atleast_1d(np.asarray(v, dtype=float)))
    if not rows:
        raise ValueError("no realizations")
    lengths = {len(r) for r in rows}
    if len(lengths) != 1:
        raise ValueError(f"realizations have different lengths: {sorted(lengths)}")
    return np.vstack(rows)


def ensemble_stats(values: Sequence, field: str = "x_values") -> EnsembleStats:
    """Pointwise mean and unbiased variance across realizations.

    ``values`` holds scalars, equal-length sequences, or trajectories (read
    through ``field``).
    """
    data = _as_matrix(values, field)
    J = data.shape[0]
    if J < 2:
        raise ValueError(f"variance needs at least 2 realizations, got {J}")
    # shift by one realization: identical inputs then give exactly zero variance
    ref = data[0]
    d = data - ref
    return EnsembleStats(mean=ref + d.mean(axis=0), variance=d.var(axis=0, ddof=1), count=J)


def exact_mean_reference(model: Model, x_values_per_realization: Sequence[float]) -> float:
    """Average of the exact drift over the realizations' slow states."""
    F = model.require_f_bar()
    xs = [float(x) for x in x_values_per_realization]
    if not xs:
        raise ValueError("no realizations")
    return math.fsum(F(x) for x in xs) / len(xs)


def silverman_bandwidth(samples: Sequence[float]) -> float:
    s = np.asarray(samples, dtype=float)
    if s.size < 2:
        raise ValueError("bandwidth needs at least 2 samples")
    return 1.06 * float(np.std(s, ddof=1)) * s.size ** (-0.2)


@dataclass(frozen=True)
class KernelDensity:
    """Densities on a grid.  ``point_mass`` is set when the samples had no spread."""

    grid: np.ndarray
    density: np.ndarray
    bandwidth: float
    point_mass: float | None = None


# relative spread below which samples are treated as one point
_DEGENERATE_SPREAD = 1e-12


def kernel_density(samples: Sequence[float], grid: Sequence[float] | None = None, points: int = 256) -> KernelDensity:
    """Gaussian KDE with Silverman bandwidth.

    Without a grid, one spanning the data plus four bandwidths is used.
    Zero-spread samples give a point mass: the whole weight sits on the grid
    node nearest the common value (scaled so the trapezoid integral is 1).
    """
    s = np.asarray(samples, dtype=float)
    if s.size < 1:
        raise ValueError("no samples")
    centre = float(np.mean(s))
    spread = float(np.ptp(s))
    if s.size < 2 or spread <= _DEGENERATE_SPREAD * max(1.0, abs(centre)):
        g = np.linspace(centre - 1.0, centre + 1.0, points) if grid is None else np.asarray(grid, dtype=float)
        dens = np.zeros_like(g)
        if g.size:
            i = int(np.argmin(np.abs(g - centre)))
            left = g[i] - g[i - 1] if i > 0 else 0.0
            right = g[i + 1] - g[i] if i + 1 < g.size else 0.0
            width = 0.5 * (left + right)
            dens[i] = 1.0 / width if width > 0 else math.inf
        return KernelDensity(grid=g, density=dens, bandwidth=0.0, point_mass=centre)
    h = silverman_bandwidth(s)
    if grid is None:
        g = np.linspace(s.min() - 4 * h, s.max() + 4 * h, points)
    else:
        g = np.asarray(grid, dtype=float)
    z = (g[:, None] - s[None, :]) / h
    dens = np.exp(-0.5 * z * z).sum(axis=1) / (s.size * h * math.sqrt(2 * math.pi))
    return KernelDensity(grid=g, density=dens, bandwidth=h)

"""Scalar slow-fast SDE models and their analytic reference solutions.

A model couples a deterministic slow variable ``x`` with a stiff stochastic
fast variable ``y``::

    dx = f(x, y) dt
    dy = (1/eps) g(x, y) dt + (1/sqrt(eps)) beta(x, y) dW

Two built-in systems are provided (a linear Ornstein-Uhlenbeck coupling and
a quadratic slow drift driven by an OU fast process); both come with the
averaged drift ``F(X)``, the exact averaged solution and the log-density of
the fast invariant measure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

__all__ = [
    "ModelError",
    "UnsupportedModelError",
    "Model",
    "LinearParams",
    "make_linear_model",
    "make_nonlinear_model",
    "invariant_moments_linear",
]

Drift = Callable[[float, float], float]


class ModelError(ValueError):
    """Invalid model or parameter set."""


class UnsupportedModelError(RuntimeError):
    """The model lacks an oracle required by the requested operation."""


@dataclass(frozen=True)
class Model:
    """A scalar slow-fast system.

    Attributes:
        slow_drift: ``f(x, y)``.
        fast_drift: ``g(x, y)``.
        diffusion: ``beta(x, y)``.
        epsilon: time-scale separation, strictly positive.
        exact_f_bar: optional averaged drift ``F(X)``.
        exact_macro_solution: optional ``(x0, t) -> X(t)`` solving ``dX/dt = F(X)``.
        invariant_log_density: optional ``(X, y) -> log rho_X(y)`` up to a constant.
        max_micro_step: optional largest stable Euler-Maruyama step for the fast equation.
        name: label used in logs and result metadata.
    """

    slow_drift: Drift
    fast_drift: Drift
    diffusion: Drift
    epsilon: float
    exact_f_bar: Optional[Callable[[float], float]] = None
    exact_macro_solution: Optional[Callable[[float, float], float]] = None
    invariant_log_density: Optional[Drift] = None
    max_micro_step: Optional[float] = None
    name: str = "custom"

    def __post_init__(self):
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise ModelError(f"epsilon must be positive and finite, got {self.epsilon!r}")

    def require_f_bar(self) -> Callable[[float], float]:
        if self.exact_f_bar is None:
            raise UnsupportedModelError(f"model {self.name!r} has no exact averaged drift")
        return self.exact_f_bar

    def check_micro_step(self, delta_t: float) -> None:
        # relative slack so that the bound itself (e.g. 2*eps/A) is accepted
        if self.max_micro_step is not None and delta_t > self.max_micro_step * (1 + 1e-12):
            raise ModelError(
                f"micro step {delta_t} exceeds the Euler-Maruyama stability bound "
                f"{self.max_micro_step} of model {self.name!r}"
            )

    def require_log_density(self) -> Drift:
        if self.invariant_log_density is None:
            raise UnsupportedModelError(
                f"model {self.name!r} has no invariant log-density; Metropolis correction unavailable"
            )
        return self.invariant_log_density


@dataclass(frozen=True)
class LinearParams:
    """Parameters of the linear test system ``f = lam*x + p*y``, ``g = q*x - A*y``.

    Solutions decay when ``lam < 0`` and ``p*q/(-lam) < A <= 2``.
    """

    lam: float
    p: float
    q: float
    A: float

    def __post_init__(self):
        if not self.lam < 0:
            raise ModelError(f"lambda must be negative, got {self.lam}")
        lower = self.p * self.q / (-self.lam)
        if not (lower < self.A <= 2):
            raise ModelError(f"A must lie in ({lower:g}, 2], got {self.A}")

    @property
    def averaged_rate(self) -> float:
        """Slope of the averaged drift, ``lam + p*q/A``."""
        return self.lam + self.p * self.q / self.A


def invariant_moments_linear(params: LinearParams, X: float) -> tuple[float, float]:
    """Mean and variance of the fast OU invariant measure at frozen ``X``."""
    return params.q * X / params.A, 1.0 / (2.0 * params.A)


def make_linear_model(params: LinearParams, epsilon: float) -> Model:
    lam, p, q, A = params.lam, params.p, params.q, params.A
    rate = params.averaged_rate

    def slow_drift(x, y):
        return lam * x + p * y

    def fast_drift(x, y):
        return q * x - A * y

    def exact_f_bar(X):
        return rate * X

    def exact_macro_solution(x0, t):
        return x0 * math.exp(rate * t)

    def invariant_log_density(X, y):
        d = y - q * X / A
        return -A * d * d

    return Model(
        slow_drift=slow_drift,
        fast_drift=fast_drift,
        diffusion=_unit_diffusion,
        epsilon=epsilon,
        exact_f_bar=exact_f_bar,
        exact_macro_solution=exact_macro_solution,
        invariant_log_density=invariant_log_density,
        max_micro_step=2.0 * epsilon / A,
        name="linear",
    )


# Exact nonlinear solutions within this distance of a tan() pole are refused.
POLE_GUARD = 1e-8


def _nonlinear_solution(x0, t):
    arg = 0.5 * t - math.atan(2.0 * x0 + 1.0)
    # distance to the nearest pole pi/2 + k*pi
    offset = (arg - 0.5 * math.pi) / math.pi
    if abs(offset - round(offset)) * math.pi < POLE_GUARD:
        raise ModelError(f"exact solution undefined at t={t} (tangent pole) for x0={x0}")
    return -0.5 - 0.5 * math.tan(arg)


def make_nonlinear_model(epsilon: float) -> Model:
    """Quadratic slow drift ``f = -(y + y^2)`` over the OU fast process ``g = -(y - x)``.

    The invariant measure at frozen ``X`` is ``N(X, 1/2)`` so ``F(X) = -(X + X^2 + 1/2)``.
    """

    def slow_drift(x, y):
        return -(y + y * y)

    def fast_drift(x, y):
        return -(y - x)

    def exact_f_bar(X):
        return -(X + X * X + 0.5)

    def invariant_log_density(X, y):
        d = y - X
        return -d * d

    return Model(
        slow_drift=slow_drift,
        fast_drift=fast_drift,
        diffusion=_unit_diffusion,
        epsilon=epsilon,
        exact_f_bar=exact_f_bar,
        exact_macro_solution=_nonlinear_solution,
        invariant_log_density=invariant_log_density,
        name="nonlinear",
    )


def _unit_diffusion(x, y):
    return 1.0

"""Forward Euler macro time stepping of the averaged equation."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .estimators import EstimateRecord, InitSpec, hmm_estimate, initialize, vr_estimate
from .micro import MicroConfig, NumericalBlowupError, SeedSchedule
from .models import Model, ModelError

__all__ = [
    "MacroConfig",
    "ReinitPolicy",
    "Trajectory",
    "MacroInstabilityWarning",
    "fe_step",
    "run_hmm_trajectory",
    "run_vr_trajectory",
]


class MacroInstabilityWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class MacroConfig:
    delta_t: float
    t_end: float
    x0: float
    y0: float

    def __post_init__(self):
        if not (self.delta_t > 0 and math.isfinite(self.delta_t)):
            raise ModelError(f"macro delta_t must be positive, got {self.delta_t!r}")
        if self.n_steps < 1:
            raise ModelError(f"t_end={self.t_end} gives no macro step with delta_t={self.delta_t}")

    @property
    def n_steps(self) -> int:
        # no fractional final step
        return int(math.floor(self.t_end / self.delta_t + 0.5))

    @classmethod
    def from_steps(cls, delta_t: float, n_steps: int, x0: float, y0: float) -> "MacroConfig":
        return cls(delta_t, n_steps * delta_t, x0, y0)


@dataclass(frozen=True)
class ReinitPolicy:
    """Replace the variance-reduced estimate every ``period`` macro steps.

    Steps ``0, R, 2R, ...`` use ``spec``; ``period=None`` disables it.
    """

    period: Optional[int] = None
    spec: Optional[InitSpec] = None

    def __post_init__(self):
        if self.period is not None:
            if self.period < 1:
                raise ModelError(f"reinitialization period must be >= 1, got {self.period}")
            if self.spec is None:
                raise ModelError("reinitialization period given without a reinit spec")

    def due(self, n: int) -> bool:
        return self.period is not None and n > 0 and n % self.period == 0


NO_REINIT = ReinitPolicy()


@dataclass
class Trajectory:
    times: np.ndarray
    x_values: np.ndarray
    f_values: np.ndarray
    micro_step_count: int
    records: list = field(default_factory=list, repr=False)

    @property
    def n_steps(self) -> int:
        return len(self.f_values)


def fe_step(X: float, F: float, delta_t: float) -> float:
    return X + delta_t * F


class _StabilityMonitor:
    """Warns once when secant estimates of ``|1 + dt F'|`` exceed 1 for many steps in a row."""

    patience = 10

    def __init__(self, delta_t):
        self.delta_t = delta_t
        self.run = 0
        self.warned = False

    def update(self, x_prev, x, f_prev, f):
        if self.warned or x == x_prev:
            return
        slope = (f - f_prev) / (x - x_prev)
        self.run = self.run + 1 if abs(1 + self.delta_t * slope) > 1 else 0
        if self.run >= self.patience:
            warnings.warn(
                f"forward Euler amplification |1 + dt*F'| > 1 for {self.run} consecutive "
                f"macro steps (dt={self.delta_t}); the macro step is likely unstable",
                MacroInstabilityWarning,
                stacklevel=3,
            )
            self.warned = True


def _drive(macro: MacroConfig, estimate) -> Trajectory:
    N = macro.n_steps
    dt = macro.delta_t
    xs = [float(macro.x0)]
    fs = []
    records = []
    y = float(macro.y0)
    cost = 0
    monitor = _StabilityMonitor(dt)
    for n in range(N):
        rec = estimate(n, xs, fs, y)
        records.append(rec)
        cost += rec.micro_steps
        y = rec.y_final
        fs.append(rec.value)
        x_next = fe_step(xs[-1], rec.value, dt)
        if not math.isfinite(x_next):
            raise NumericalBlowupError(f"macro state diverged at step {n + 1}", step=n + 1)
        if n > 0:
            monitor.update(xs[-2], xs[-1], fs[-2], fs[-1])
        xs.append(x_next)
    return Trajectory(
        times=np.arange(N + 1) * dt,
        x_values=np.array(xs),
        f_values=np.array(fs),
        micro_step_count=cost,
        records=records,
    )


def run_hmm_trajectory(
    model: Model, macro: MacroConfig, micro: MicroConfig, seeds: SeedSchedule
) -> Trajectory:
    """Forward Euler with an independent plain HMM estimate at every macro step."""

    def estimate(n, xs, fs, y):
        return hmm_estimate(model, xs[-1], y, micro, seeds.derive(n))

    return _drive(macro, estimate)


def run_vr_trajectory(
    model: Model,
    macro: MacroConfig,
    micro: MicroConfig,
    init: InitSpec,
    reinit: ReinitPolicy = NO_REINIT,
    seeds: SeedSchedule = SeedSchedule(0),
) -> Trajectory:
    """Forward Euler driven by the variance-reduced estimator.

    Step 0 comes from ``init``; steps at multiples of ``reinit.period`` are
    produced by ``reinit.spec`` instead of the control-variate update.
    """

    def estimate(n, xs, fs, y):
        if n == 0:
            return initialize(model, xs[0], y, init, micro, seeds, step=0)
        if reinit.due(n):
            return initialize(model, xs[-1], y, reinit.spec, micro, seeds, step=n)
        return vr_estimate(model, xs[-2], xs[-1], fs[-1], y, micro, seeds.derive(n))

    return _drive(macro, estimate)

"""Estimators of the averaged drift ``F(X)``.

``hmm_estimate`` is the plain Markov-chain time average.  ``vr_estimate`` is
the control-variate version: two chains share a seed and a start state, one at
the current slow state and one at the previous, and only their difference is
added to the previous (already variance-reduced) estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .micro import GaussianStream, MicroConfig, NumericalBlowupError, SeedSchedule, em_chain, mala_chain
from .models import Model, ModelError, UnsupportedModelError

__all__ = [
    "EstimateRecord",
    "InitSpec",
    "hmm_estimate",
    "cpi_estimate",
    "vr_estimate",
    "initialize",
]


@dataclass(frozen=True)
class EstimateRecord:
    """One estimate of ``F`` and what produced it.

    ``micro_steps`` is the number of Euler-Maruyama steps spent (the cost
    meter).  For variance-reduced estimates ``hmm_current``/``hmm_previous``
    hold the two coupled plain estimates.
    """

    value: float
    seed: Optional[int]
    M: int
    y_final: float
    used_mh: bool
    micro_steps: int = 0
    hmm_current: Optional[float] = None
    hmm_previous: Optional[float] = None

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise NumericalBlowupError(f"estimate is not finite: {self.value!r}")


EXACT = "exact"
ESTIMATED = "estimated"
AVERAGED = "averaged"


@dataclass(frozen=True)
class InitSpec:
    """How the first (or a re-)initial estimate is produced.

    ``exact`` uses the model's analytic ``F``; ``estimated`` one long chain of
    ``M_star`` samples; ``averaged`` the mean of ``S`` chains of ``M`` samples.
    """

    kind: str
    M_star: Optional[int] = None
    S: Optional[int] = None
    M: Optional[int] = None
    use_mh: bool = False

    def __post_init__(self):
        if self.kind == ESTIMATED:
            if self.M_star is None or self.M_star < 1:
                raise ModelError("estimated initialization needs M_star >= 1")
        elif self.kind == AVERAGED:
            if self.S is None or self.S < 1 or self.M is None or self.M < 1:
                raise ModelError("averaged initialization needs S >= 1 and M >= 1")
        elif self.kind != EXACT:
            raise ModelError(f"unknown initialization kind {self.kind!r}")

    @classmethod
    def exact(cls):
        return cls(EXACT)

    @classmethod
    def estimated(cls, M_star: int, use_mh: bool = False):
        return cls(ESTIMATED, M_star=M_star, use_mh=use_mh)

    @classmethod
    def averaged(cls, S: int, M: int, use_mh: bool = False):
        return cls(AVERAGED, S=S, M=M, use_mh=use_mh)

    @property
    def micro_steps(self) -> int:
        return {EXACT: 0, ESTIMATED: self.M_star, AVERAGED: (self.S or 0) * (self.M or 0)}[self.kind]


def _chain(model, X, y0, cfg, seed):
    runner = mala_chain if cfg.use_mh else em_chain
    return runner(model, X, y0, cfg, GaussianStream(seed))


def _mean_slow_drift(model, X, samples):
    f = model.slow_drift
    if samples.dtype == np.longdouble:
        X = np.longdouble(X)
        return float(np.sum(np.array([f(X, y) for y in samples], dtype=np.longdouble)) / len(samples))
    return math.fsum(f(X, y) for y in samples.tolist()) / len(samples)


def hmm_estimate(model: Model, X: float, y0: float, cfg: MicroConfig, seed: int) -> EstimateRecord:
    """Time average of ``f(X, y)`` along one micro chain started at ``y0``."""
    samples, y_final = _chain(model, X, y0, cfg, seed)
    return EstimateRecord(
        value=_mean_slow_drift(model, X, samples),
        seed=seed,
        M=cfg.M,
        y_final=y_final,
        used_mh=cfg.use_mh,
        micro_steps=cfg.M,
    )


def cpi_estimate(
    model: Model,
    X: float,
    ensemble_y: Sequence[float],
    K: int,
    delta_t_micro: float,
    seed: int,
) -> float:
    """Coarse projective integration slope from an ensemble of fast states.

    Every member ``(X, y_m)`` is advanced ``K`` Euler-Maruyama steps of the
    full coupled system; the result is the ensemble-mean slope of ``x``.
    Member ``m`` uses normals ``m*K .. m*K + K - 1`` of the stream.
    """
    ys = np.asarray(ensemble_y, dtype=float)
    if ys.size == 0:
        raise ValueError("ensemble must not be empty")
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    h = delta_t_micro / model.epsilon
    sq = math.sqrt(h)
    f, g, beta = model.slow_drift, model.fast_drift, model.diffusion
    xi = GaussianStream(seed).normals(ys.size * K).tolist()
    slopes = []
    for m, y in enumerate(ys.tolist()):
        x = X
        for k in range(K):
            e = xi[m * K + k]
            x, y = x + delta_t_micro * f(x, y), y + h * g(x, y) + sq * beta(x, y) * e
        if not (math.isfinite(x) and math.isfinite(y)):
            raise NumericalBlowupError(f"CPI member {m} diverged", step=m)
        slopes.append((x - X) / (K * delta_t_micro))
    return math.fsum(slopes) / len(slopes)


def vr_estimate(
    model: Model,
    X_prev: float,
    X_cur: float,
    F_bar_prev: float,
    y0: float,
    cfg: MicroConfig,
    seed: int,
) -> EstimateRecord:
    """Control-variate estimate at ``X_cur`` given the previous estimate ``F_bar_prev``.

    Both chains start at ``y0`` and read identical normals.  Metropolis
    correction is refused here: independent rejections would decouple the
    two chains.  The warm start handed on is the ``X_cur`` chain's.
    """
    if cfg.use_mh:
        raise UnsupportedModelError(
            "variance-reduced estimates use plain Euler-Maruyama chains; "
            "Metropolis correction is only available for (re)initialization"
        )
    samples_cur, y_final = em_chain(model, X_cur, y0, cfg, GaussianStream(seed), extended=True)
    samples_prev, _ = em_chain(model, X_prev, y0, cfg, GaussianStream(seed), extended=True)
    f = model.slow_drift
    xc, xp = np.longdouble(X_cur), np.longdouble(X_prev)
    # per-sample differences at extended precision: exact cancellation when X_prev == X_cur,
    # and no float64 rounding at the scale of the (possibly large) fast states
    diffs = [f(xc, a) - f(xp, b) for a, b in zip(samples_cur, samples_prev)]
    diff = float(np.sum(np.array(diffs, dtype=np.longdouble)) / cfg.M)
    return EstimateRecord(
        value=F_bar_prev + diff,
        seed=seed,
        M=cfg.M,
        y_final=y_final,
        used_mh=False,
        micro_steps=2 * cfg.M,
        hmm_current=_mean_slow_drift(model, X_cur, samples_cur),
        hmm_previous=_mean_slow_drift(model, X_prev, samples_prev),
    )


def initialize(
    model: Model,
    X0: float,
    y0: float,
    spec: InitSpec,
    cfg: MicroConfig,
    seeds: SeedSchedule,
    step: int = 0,
) -> EstimateRecord:
    """Initial (or re-initial) estimate at macro step ``step``.

    ``estimated`` uses the step seed; ``averaged`` chains its ``S`` replicas
    sequentially, each warm-started from the previous replica's final state.
    """
    if spec.kind == EXACT:
        F = model.require_f_bar()
        return EstimateRecord(value=F(X0), seed=None, M=0, y_final=float(y0), used_mh=False)
    if spec.kind == ESTIMATED:
        sub = MicroConfig(cfg.delta_t, spec.M_star, spec.use_mh)
        return hmm_estimate(model, X0, y0, sub, seeds.derive(step))
    sub = MicroConfig(cfg.delta_t, spec.M, spec.use_mh)
    values = []
    y = y0
    for s in range(1, spec.S + 1):
        rec = hmm_estimate(model, X0, y, sub, seeds.replica(s, step))
        values.append(rec.value)
        y = rec.y_final
    return EstimateRecord(
        value=math.fsum(values) / spec.S,
        seed=seeds.replica(1, step),
        M=spec.M,
        y_final=y,
        used_mh=spec.use_mh,
        micro_steps=spec.S * spec.M,
    )

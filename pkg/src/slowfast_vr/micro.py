"""Seeded micro-solver for the fast equation at frozen slow state.

Coupling two estimators through a shared seed only works if the Gaussian
increments are a pure function of the seed.  :class:`GaussianStream` keeps
normals and Metropolis uniforms on two disjoint Philox sub-streams and turns
each raw 64-bit draw into exactly one variate by inverse CDF, so the ``k``-th
normal never depends on the model, the state, or on how many uniforms were
used.
"""

from __future__ import annotations

import copy
import hashlib
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .models import Model, ModelError

__all__ = [
    "NumericalBlowupError",
    "mix",
    "SeedSchedule",
    "GaussianStream",
    "MicroConfig",
    "em_step",
    "em_chain",
    "mala_chain",
    "mh_log_ratio",
    "mh_acceptance",
]

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


class NumericalBlowupError(ArithmeticError):
    """A micro or macro update produced a non-finite value."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step

    def __reduce__(self):
        # keep ``step`` across process-pool boundaries
        return (type(self), (str(self), self.step))


def _splitmix64(z: int) -> int:
    z = (z + _GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def _part_to_int(part) -> int:
    if isinstance(part, str):
        return int.from_bytes(hashlib.blake2b(part.encode(), digest_size=8).digest(), "little")
    if isinstance(part, (bool, float)) or not isinstance(part, (int, np.integer)):
        raise TypeError(f"cannot mix {type(part).__name__} into a seed")
    return int(part) & MASK64


def mix(*parts) -> int:
    """Hash integers and strings into one 64-bit seed (splitmix64 chaining)."""
    h = _splitmix64(len(parts))
    for part in parts:
        h = _splitmix64(h ^ _splitmix64(_part_to_int(part)))
    return h


@dataclass(frozen=True)
class SeedSchedule:
    """Deterministic per-macro-step seeds derived from one master seed."""

    master_seed: int

    def derive(self, n: int) -> int:
        """Seed for the micro chains of macro step ``n``."""
        return mix(self.master_seed, n)

    def replica(self, s: int, step: int = 0) -> int:
        """Seed of replica ``s`` in an averaged (re)initialization at macro step ``step``."""
        if step == 0:
            return mix(self.master_seed, -1, s)
        return mix(self.master_seed, -1, s, step)

    def realization(self, j: int) -> "SeedSchedule":
        return SeedSchedule(mix(self.master_seed, "realization", j))


_NORMAL_LANE = 0
_UNIFORM_LANE = 1


class GaussianStream:
    """Single-owner source of standard normals and uniforms for one seed.

    Normals and uniforms come from two Philox generators keyed by
    ``(seed, lane)``.  Each variate consumes exactly one raw draw, so block
    and one-at-a-time reads give identical sequences.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & MASK64
        self._normal_gen = np.random.Philox(key=self.seed | (_NORMAL_LANE << 64))
        self._uniform_gen = np.random.Philox(key=self.seed | (_UNIFORM_LANE << 64))
        self.normals_used = 0
        self.uniforms_used = 0

    @staticmethod
    def _open_unit(raw):
        # midpoint of the 53-bit cell: never exactly 0 or 1
        return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53

    def normals(self, n: int) -> np.ndarray:
        raw = self._normal_gen.random_raw(n)
        self.normals_used += n
        return ndtri(self._open_unit(np.atleast_1d(raw)))

    def uniforms(self, n: int) -> np.ndarray:
        raw = self._uniform_gen.random_raw(n)
        self.uniforms_used += n
        return self._open_unit(np.atleast_1d(raw))

    def next_normal(self) -> float:
        return float(self.normals(1)[0])

    def next_uniform(self) -> float:
        return float(self.uniforms(1)[0])

    def copy(self) -> "GaussianStream":
        """Independent stream at the same position."""
        return copy.deepcopy(self)

    def __repr__(self):
        return (
            f"GaussianStream(seed={self.seed:#x}, normals_used={self.normals_used}, "
            f"uniforms_used={self.uniforms_used})"
        )


@dataclass(frozen=True)
class MicroConfig:
    """Euler-Maruyama discretization of the fast equation.

    Attributes:
        delta_t: micro time step.
        M: number of samples per chain.
        use_mh: add a Metropolis accept/reject step (MALA).
    """

    delta_t: float
    M: int
    use_mh: bool = False

    def __post_init__(self):
        if not (self.delta_t > 0 and math.isfinite(self.delta_t)):
            raise ModelError(f"micro delta_t must be positive, got {self.delta_t!r}")
        if int(self.M) != self.M or self.M < 1:
            raise ModelError(f"M must be a positive integer, got {self.M!r}")

    def with_samples(self, M: int) -> "MicroConfig":
        return MicroConfig(self.delta_t, M, self.use_mh)


def em_step(model: Model, X: float, y: float, xi: float, delta_t: float) -> float:
    h = delta_t / model.epsilon
    y_new = y + h * model.fast_drift(X, y) + math.sqrt(h) * model.diffusion(X, y) * xi
    if not math.isfinite(y_new):
        raise NumericalBlowupError(f"Euler-Maruyama step from y={y!r} at X={X!r} gave {y_new!r}")
    return y_new


def em_chain(
    model: Model,
    X: float,
    y0: float,
    cfg: MicroConfig,
    stream: GaussianStream,
    extended: bool = False,
):
    """Run ``cfg.M`` Euler-Maruyama steps of the fast equation at frozen ``X``.

    Returns ``(samples, y_final)``: ``samples[m]`` is the state after ``m``
    steps for ``m = 0 .. M-1`` (the chain starts with its warm-start state)
    and ``y_final`` is the state after ``M`` steps, which seeds the next chain.
    Consumes exactly ``M`` normals.

    With ``extended=True`` the recursion runs in ``np.longdouble`` and the
    samples are returned at that precision (``y_final`` is still a float).
    Coupled chains need this: their difference is tiny next to the states.
    """
    model.check_micro_step(cfg.delta_t)
    M = cfg.M
    xi = stream.normals(M)
    if extended:
        ld = np.longdouble
        h = ld(cfg.delta_t) / ld(model.epsilon)
        sq = np.sqrt(h)
        X = ld(X)
        y = ld(y0)
        xi = list(xi.astype(ld))
    else:
        h = cfg.delta_t / model.epsilon
        sq = math.sqrt(h)
        y = float(y0)
        xi = xi.tolist()
    g, beta = model.fast_drift, model.diffusion
    out = [y] * (M + 1)
    for m in range(M):
        y = y + h * g(X, y) + sq * beta(X, y) * xi[m]
        out[m + 1] = y
    if not math.isfinite(y):
        bad = next(i for i, v in enumerate(out) if not math.isfinite(v))
        raise NumericalBlowupError(
            f"Euler-Maruyama chain at X={X!r} diverged at micro step {bad} (delta_t={cfg.delta_t})",
            step=bad,
        )
    samples = np.array(out[:M], dtype=np.longdouble if extended else float)
    return samples, float(y)


def _log_proposal(model, X, y_from, y_to, h):
    mean = y_from + h * model.fast_drift(X, y_from)
    var = h * model.diffusion(X, y_from) ** 2
    d = y_to - mean
    return -0.5 * d * d / var - 0.5 * math.log(var)


def mh_log_ratio(model: Model, X: float, y: float, y_prop: float, delta_t: float) -> float:
    """Log Metropolis-Hastings ratio for moving ``y -> y_prop`` with the EM proposal."""
    log_rho = model.require_log_density()
    h = delta_t / model.epsilon
    return (
        log_rho(X, y_prop)
        - log_rho(X, y)
        + _log_proposal(model, X, y_prop, y, h)
        - _log_proposal(model, X, y, y_prop, h)
    )


def mh_acceptance(model: Model, X: float, y: float, y_prop: float, delta_t: float) -> float:
    """Acceptance probability ``min(1, exp(log ratio))``."""
    lr = mh_log_ratio(model, X, y, y_prop, delta_t)
    return 1.0 if lr >= 0 else math.exp(lr)


def mala_chain(model: Model, X: float, y0: float, cfg: MicroConfig, stream: GaussianStream):
    """Metropolis-adjusted version of :func:`em_chain`.

    Every step draws one normal (proposal) and one uniform (accept/reject)
    whether or not the move is accepted, so the normal sequence stays aligned
    with an unadjusted chain on the same seed.
    """
    log_rho = model.require_log_density()
    model.check_micro_step(cfg.delta_t)
    M = cfg.M
    h = cfg.delta_t / model.epsilon
    sq = math.sqrt(h)
    g, beta = model.fast_drift, model.diffusion
    xi = stream.normals(M).tolist()
    log_u = np.log(stream.uniforms(M)).tolist()
    out = [0.0] * (M + 1)
    y = float(y0)
    out[0] = y
    lp_y = log_rho(X, y)
    for m in range(M):
        mean_fwd = y + h * g(X, y)
        b = beta(X, y)
        y_prop = mean_fwd + sq * b * xi[m]
        if not math.isfinite(y_prop):
            raise NumericalBlowupError(
                f"MALA proposal at X={X!r} diverged at micro step {m + 1}", step=m + 1
            )
        lp_prop = log_rho(X, y_prop)
        mean_bwd = y_prop + h * g(X, y_prop)
        b_prop = beta(X, y_prop)
        var_fwd = h * b * b
        var_bwd = h * b_prop * b_prop
        log_q_fwd = -0.5 * (y_prop - mean_fwd) ** 2 / var_fwd - 0.5 * math.log(var_fwd)
        log_q_bwd = -0.5 * (y - mean_bwd) ** 2 / var_bwd - 0.5 * math.log(var_bwd)
        log_ratio = lp_prop - lp_y + log_q_bwd - log_q_fwd
        if log_u[m] < log_ratio:
            y, lp_y = y_prop, lp_prop
        out[m + 1] = y
    return np.array(out[:M]), y

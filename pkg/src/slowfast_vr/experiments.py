"""Config-driven ensemble experiments and their CSV/JSON output.

A config is a JSON document (``schema_version`` 1) describing one run, or a
``{"runs": [...], "defaults": {...}}`` bundle of runs that share defaults.
Three kinds are supported:

``single_step_distribution``
    one row per realization with the estimate at ``t^1`` and a KDE companion
    table.
``local_variance``
    mean and variance of the step-``N`` estimate for each macro step in a
    list.
``trajectory``
    per-time ensemble mean and variance of ``X`` and ``F``.
"""

from __future__ import annotations

import copy
import csv
import datetime as _dt
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from . import __version__
from .analysis import (
    ensemble_stats,
    exact_mean_reference,
    kernel_density,
    nobias_micro_step,
    tilde_constants,
    vr_variance_prediction,
)
from .estimators import InitSpec
from .macrosolver import MacroConfig, ReinitPolicy, run_hmm_trajectory, run_vr_trajectory
from .micro import MicroConfig, NumericalBlowupError, SeedSchedule
from .models import LinearParams, Model, ModelError, make_linear_model, make_nonlinear_model

__all__ = [
    "SCHEMA_VERSION",
    "ConfigError",
    "OutputError",
    "ExperimentConfig",
    "ResultTable",
    "load_configs",
    "run_experiment",
    "emit_csv",
    "read_csv",
    "iter_bundled",
    "default_jobs",
]

SCHEMA_VERSION = 1

SINGLE_STEP = "single_step_distribution"
LOCAL_VARIANCE = "local_variance"
TRAJECTORY = "trajectory"
KINDS = (SINGLE_STEP, LOCAL_VARIANCE, TRAJECTORY)


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


class OutputError(OSError):
    """Writing or reading a result file failed."""


def _require(cond, msg):
    if not cond:
        raise ConfigError(msg)


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    """One validated experiment.  ``raw`` is the resolved JSON form and round-trips."""

    raw: dict

    def __post_init__(self):
        _validate(self.raw)
        try:
            if self.is_linear:
                self.linear_params()
            self.micro_config()
            self.build_model().check_micro_step(self.micro_delta_t())
            if self.estimator == "vr":
                _require(
                    not self.raw["micro"].get("use_mh", False),
                    "vr estimator cannot use Metropolis correction in the coupled chains; "
                    "set use_mh on init/reinit instead",
                )
                if self.init_spec().kind == "exact":
                    self.build_model().require_f_bar()
                self.reinit_policy()
            else:
                _require("init" not in self.raw and "reinit" not in self.raw, "init/reinit apply to the vr estimator only")
        except (ModelError, TypeError, KeyError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        _require(isinstance(d, dict), "config must be a JSON object")
        return cls(copy.deepcopy(d))

    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return ExperimentConfig(_deep_merge(self.raw, {"master_seed": int(seed)}))

    @property
    def name(self) -> str:
        return self.raw.get("name", self.kind)

    @property
    def kind(self) -> str:
        return self.raw["kind"]

    @property
    def realizations(self) -> int:
        return self.raw["realizations"]

    @property
    def master_seed(self) -> int:
        return self.raw["master_seed"]

    @property
    def estimator(self) -> str:
        return self.raw["estimator"]

    @property
    def is_linear(self) -> bool:
        return self.raw["model"]["kind"] == "linear"

    @property
    def macro_steps(self) -> list:
        dt = self.raw["macro"]["delta_t"]
        return list(dt) if isinstance(dt, list) else [dt]

    def linear_params(self) -> LinearParams:
        m = self.raw["model"]
        return LinearParams(m["lambda"], m["p"], m["q"], m["A"])

    def build_model(self) -> Model:
        eps = self.raw["epsilon"]
        if self.is_linear:
            return make_linear_model(self.linear_params(), eps)
        return make_nonlinear_model(eps)

    def micro_delta_t(self) -> float:
        dt = self.raw["micro"]["delta_t"]
        if dt == "nobias":
            return nobias_micro_step(self.raw["model"]["A"], self.raw["epsilon"])
        return float(dt)

    def micro_config(self) -> MicroConfig:
        mc = self.raw["micro"]
        return MicroConfig(self.micro_delta_t(), mc["M"], bool(mc.get("use_mh", False)))

    def init_spec(self) -> InitSpec:
        return _init_spec(self.raw.get("init", {"kind": "exact"}))

    def reinit_policy(self) -> ReinitPolicy:
        r = self.raw.get("reinit")
        if not r:
            return ReinitPolicy()
        return ReinitPolicy(r["R"], _init_spec(r["spec"]))


def _init_spec(d: dict) -> InitSpec:
    _require(isinstance(d, dict) and "kind" in d, f"init spec needs a 'kind': {d!r}")
    kind = d["kind"]
    use_mh = bool(d.get("use_mh", False))
    if kind == "exact":
        return InitSpec.exact()
    if kind == "estimated":
        _require("M_star" in d, "estimated init needs M_star")
        return InitSpec.estimated(d["M_star"], use_mh)
    if kind == "averaged":
        _require("S" in d and "M" in d, "averaged init needs S and M")
        return InitSpec.averaged(d["S"], d["M"], use_mh)
    raise ConfigError(f"unknown init kind {kind!r}")


def _is_num(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _validate(d: dict) -> None:
    _require(d.get("schema_version") == SCHEMA_VERSION, f"schema_version must be {SCHEMA_VERSION}")
    _require(d.get("kind") in KINDS, f"kind must be one of {KINDS}, got {d.get('kind')!r}")
    model = d.get("model")
    _require(isinstance(model, dict) and model.get("kind") in ("linear", "nonlinear"), "model.kind must be linear or nonlinear")
    _require(_is_num(d.get("epsilon")), "epsilon must be a number")
    micro = d.get("micro")
    _require(isinstance(micro, dict), "micro section missing")
    _require(micro.get("delta_t") == "nobias" or _is_num(micro.get("delta_t")), "micro.delta_t must be a number or 'nobias'")
    if micro.get("delta_t") == "nobias":
        _require(model["kind"] == "linear", "micro.delta_t 'nobias' is defined for the linear model only")
    _require(isinstance(micro.get("M"), int) and not isinstance(micro.get("M"), bool), "micro.M must be an integer")
    macro = d.get("macro")
    _require(isinstance(macro, dict), "macro section missing")
    _require(_is_num(macro.get("x0")) and _is_num(macro.get("y0")), "macro.x0 and macro.y0 are required")
    dt = macro.get("delta_t")
    if d["kind"] == LOCAL_VARIANCE:
        _require(isinstance(dt, list) and len(dt) > 0 and all(_is_num(v) and v > 0 for v in dt), "local_variance needs a non-empty macro.delta_t list")
        Ns = macro.get("N")
        _require(isinstance(Ns, list) and len(Ns) > 0 and all(isinstance(n, int) and n >= 0 for n in Ns), "local_variance needs a non-empty macro.N list")
    else:
        _require(_is_num(dt) and dt > 0, "macro.delta_t must be a positive number")
    if d["kind"] == TRAJECTORY:
        _require(_is_num(macro.get("t_end")) and macro["t_end"] > 0, "trajectory needs macro.t_end")
    _require(d.get("estimator") in ("hmm", "vr"), "estimator must be 'hmm' or 'vr'")
    j = d.get("realizations")
    _require(isinstance(j, int) and j >= 2, "realizations must be an integer >= 2")
    seed = d.get("master_seed")
    _require(isinstance(seed, int) and 0 <= seed < 2**64, "master_seed must be an unsigned 64-bit integer")


def load_configs(source) -> list[ExperimentConfig]:
    """Parse a config file path or an already-decoded JSON object.

    A ``.meta.json`` sidecar yields the exact config it recorded.
    """
    if isinstance(source, (str, os.PathLike)):
        try:
            text = Path(source).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {source}: {exc}") from exc
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{source}: invalid JSON ({exc})") from exc
    else:
        doc = source
    _require(isinstance(doc, dict), "config must be a JSON object")
    if "config" in doc and doc.get("tool") == "slowfast-vr":
        doc = doc["config"]
    if "runs" in doc:
        runs = doc["runs"]
        _require(isinstance(runs, list) and runs, "'runs' must be a non-empty list")
        defaults = doc.get("defaults", {})
        base = {k: v for k, v in doc.items() if k not in ("runs", "defaults", "description")}
        out = []
        for i, run in enumerate(runs):
            _require(isinstance(run, dict), f"run {i} is not an object")
            merged = _deep_merge(_deep_merge(base, defaults), run)
            merged.setdefault("name", f"run{i}")
            out.append(ExperimentConfig.from_dict(merged))
        names = [c.name for c in out]
        _require(len(set(names)) == len(names), f"run names must be unique: {names}")
        return out
    return [ExperimentConfig.from_dict(doc)]


@dataclass
class ResultTable:
    columns: list
    rows: list
    metadata: dict = field(default_factory=dict)
    companions: dict = field(default_factory=dict)

    def __post_init__(self):
        width = len(self.columns)
        for i, row in enumerate(self.rows):
            if len(row) != width:
                raise ValueError(f"row {i} has {len(row)} values, expected {width}")

    def column(self, name: str) -> np.ndarray:
        i = self.columns.index(name)
        return np.array([row[i] for row in self.rows], dtype=float)


# --- realization workers (module level so they pickle) ---------------------


def _run_realization(raw: dict, delta_t: float, n_steps: int, j: int):
    cfg = ExperimentConfig(raw)
    model = cfg.build_model()
    macro = MacroConfig.from_steps(delta_t, n_steps, raw["macro"]["x0"], raw["macro"]["y0"])
    seeds = SeedSchedule(cfg.master_seed).realization(j)
    try:
        if cfg.estimator == "hmm":
            traj = run_hmm_trajectory(model, macro, cfg.micro_config(), seeds)
        else:
            traj = run_vr_trajectory(model, macro, cfg.micro_config(), cfg.init_spec(), cfg.reinit_policy(), seeds)
    except NumericalBlowupError as exc:
        raise NumericalBlowupError(f"realization {j} (delta_t={delta_t}): {exc}", step=exc.step) from None
    return traj.x_values, traj.f_values, traj.micro_step_count


def _star_run(args):
    return _run_realization(*args)


def _ensemble(cfg: ExperimentConfig, delta_t: float, n_steps: int, jobs: int):
    tasks = [(cfg.raw, delta_t, n_steps, j) for j in range(cfg.realizations)]
    if jobs <= 1:
        return [_star_run(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        # map preserves realization order
        return list(pool.map(_star_run, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))


def _cost_block(results) -> dict:
    costs = [int(c) for _, _, c in results]
    return {"total_micro_steps": sum(costs), "micro_steps_per_realization": costs[0] if len(set(costs)) == 1 else costs}


def default_jobs() -> int:
    env = os.environ.get("SLOWFAST_VR_JOBS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"SLOWFAST_VR_JOBS must be an integer, got {env!r}") from exc
    return 1


def run_experiment(config: ExperimentConfig, jobs: int | None = None) -> ResultTable:
    """Run every realization of ``config`` and reduce to a table."""
    jobs = default_jobs() if jobs is None else max(1, int(jobs))
    runner = {SINGLE_STEP: _single_step, LOCAL_VARIANCE: _local_variance, TRAJECTORY: _trajectory}[config.kind]
    table = runner(config, jobs)
    table.metadata = {
        "tool": "slowfast-vr",
        "version": __version__,
        "schema_version": SCHEMA_VERSION,
        "config": config.to_dict(),
        "resolved_micro_delta_t": config.micro_delta_t(),
        "columns": list(table.columns),
        **table.metadata,
    }
    return table


def _single_step(cfg: ExperimentConfig, jobs: int) -> ResultTable:
    model = cfg.build_model()
    results = _ensemble(cfg, cfg.macro_steps[0], 2, jobs)
    F = model.exact_f_bar
    rows = []
    for j, (xs, fs, _) in enumerate(results):
        x1, f1 = float(xs[1]), float(fs[1])
        rows.append((j, x1, f1, F(x1) if F else math.nan))
    f1 = np.array([r[2] for r in rows])
    meta = {"cost": _cost_block(results), "sample_mean_F1": float(f1.mean()), "sample_var_F1": float(f1.var(ddof=1))}
    if F is not None:
        meta["exact_mean_reference"] = exact_mean_reference(model, [r[1] for r in rows])
    kde = kernel_density(f1)
    meta["kde_bandwidth"] = kde.bandwidth
    meta["kde_point_mass"] = kde.point_mass
    companions = {"kde": ResultTable(["F", "density"], [(float(g), float(d)) for g, d in zip(kde.grid, kde.density)])}
    return ResultTable(["realization", "X1", "F1", "exact_F_at_X1"], rows, meta, companions)


def _local_variance(cfg: ExperimentConfig, jobs: int) -> ResultTable:
    Ns = sorted(set(cfg.raw["macro"]["N"]))
    n_steps = max(Ns) + 1
    predict = cfg.is_linear and cfg.estimator == "vr"
    columns = ["delta_t", "N", "mean_F", "var_F"] + (["var_F0", "predicted_var_F"] if predict else [])
    rows = []
    cost = {}
    if predict:
        params = cfg.linear_params()
        micro = cfg.micro_config()
        tc = tilde_constants(params.A, micro.delta_t, cfg.raw["epsilon"], micro.M)
    for dt in cfg.macro_steps:
        results = _ensemble(cfg, dt, n_steps, jobs)
        stats = ensemble_stats([fs for _, fs, _ in results])
        cost[repr(dt)] = _cost_block(results)
        for N in Ns:
            row = [dt, N, float(stats.mean[N]), float(stats.variance[N])]
            if predict:
                var0 = float(stats.variance[0])
                row += [var0, vr_variance_prediction(params, dt, tc, N, var0)]
            rows.append(tuple(row))
    return ResultTable(columns, rows, {"cost": cost})


def _trajectory(cfg: ExperimentConfig, jobs: int) -> ResultTable:
    model = cfg.build_model()
    dt = cfg.macro_steps[0]
    macro = MacroConfig(dt, cfg.raw["macro"]["t_end"], cfg.raw["macro"]["x0"], cfg.raw["macro"]["y0"])
    results = _ensemble(cfg, dt, macro.n_steps, jobs)
    xs = ensemble_stats([x for x, _, _ in results])
    fs = ensemble_stats([f for _, f, _ in results])
    exact = model.exact_macro_solution
    columns = ["t", "mean_X", "var_X", "mean_F", "var_F"] + (["exact_X"] if exact else [])
    rows = []
    N = macro.n_steps
    for n in range(N + 1):
        t = n * dt
        # no estimate is taken at the final time
        mf, vf = (float(fs.mean[n]), float(fs.variance[n])) if n < N else (math.nan, math.nan)
        row = [t, float(xs.mean[n]), float(xs.variance[n]), mf, vf]
        if exact:
            try:
                row.append(exact(macro.x0, t))
            except ModelError:
                row.append(math.nan)
        rows.append(tuple(row))
    return ResultTable(columns, rows, {"cost": _cost_block(results)})


# --- serialization ----------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return "%.17g" % float(v)


def _write_table(table: ResultTable, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(table.columns)
        for row in table.rows:
            w.writerow([_fmt(v) for v in row])


def meta_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.stem + ".meta.json")


def companion_path(path, name: str) -> Path:
    p = Path(path)
    return p.with_name(f"{p.stem}.{name}{p.suffix or '.csv'}")


def emit_csv(table: ResultTable, path, timestamp: bool = True) -> list[Path]:
    """Write the table, its companions and the ``.meta.json`` sidecar.  Returns the paths written."""
    path = Path(path)
    written = []
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        _write_table(table, path)
        written.append(path)
        for name, comp in table.companions.items():
            cp = companion_path(path, name)
            _write_table(comp, cp)
            written.append(cp)
        meta = dict(table.metadata)
        meta["companions"] = {name: companion_path(path, name).name for name in table.companions}
        if timestamp:
            meta["created"] = _dt.datetime.now(_dt.timezone.utc).isoformat()
        mp = meta_path(path)
        mp.write_text(json.dumps(meta, indent=2, sort_keys=True, default=_json_default) + "\n")
        written.append(mp)
    except OSError as exc:
        raise OutputError(f"cannot write results to {path}: {exc}") from exc
    return written


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"{type(o).__name__} is not JSON serializable")


def read_csv(path) -> ResultTable:
    try:
        with open(path, newline="") as fh:
            r = csv.reader(fh)
            columns = next(r)
            rows = [tuple(float(v) for v in row) for row in r]
    except (OSError, StopIteration) as exc:
        raise OutputError(f"cannot read {path}: {exc}") from exc
    return ResultTable(columns, rows)


def iter_bundled() -> Iterable[tuple[str, Path]]:
    from importlib.resources import files

    root = files("slowfast_vr") / "configs"
    for entry in sorted(root.iterdir(), key=lambda e: e.name):
        if entry.name.endswith(".json"):
            yield entry.name[:-5], Path(str(entry))

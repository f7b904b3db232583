"""Seeded parameter sweeps that regenerate the tabular data behind the
evaluation figures.

Every experiment is a list of independent *cells*. Cells are executed in a
fixed order (optionally on a process pool) and their records are emitted in
that order, so an output table depends only on the spec, the configuration
and the seeds.

Random streams are derived from ``(seed, cell index, stream id)`` through a
:class:`numpy.random.SeedSequence` feeding a counter-based Philox generator.
"""

from __future__ import annotations

import csv
import dataclasses
import enum
import hashlib
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .baselines import BaselineLayout, evaluate_baseline_ee
from .config import (ConfigError, GridConfig, OptimizerConfig, SystemConfig, dbw_to_w,
                     random_users, table_users)
from .model import monte_carlo_ee, uniform_state
from .optimizer import TRACE_FIELDS, run_algorithm2
from .protocols import Protocol

log = logging.getLogger(__name__)

# stream ids inside a cell
_USERS_STREAM = 0
_NLOS_STREAM = 1


class ExperimentKind(str, enum.Enum):
    THEORY_VALIDATION = "theory-validation"
    CONVERGENCE = "convergence"
    ARCHITECTURE_COMPARE = "architecture-compare"
    MN_SWEEP = "mn-sweep"
    RESOLUTION_SWEEP = "resolution-sweep"
    PROTOCOL_COMPARE = "protocol-compare"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-")
        aliases = {"theoryvalidation": "theory-validation",
                   "architecturecompare": "architecture-compare",
                   "mnsweep": "mn-sweep", "resolutionsweep": "resolution-sweep",
                   "protocolcompare": "protocol-compare"}
        key = aliases.get(key.replace("-", ""), key)
        try:
            return cls(key)
        except ValueError:
            raise ConfigError(f"unknown experiment kind {value!r}; expected one of "
                              + ", ".join(k.value for k in cls)) from None


# (varrho_0, c_varrho) used for each figure's optimization runs
PENALTY_DEFAULTS = {
    ExperimentKind.THEORY_VALIDATION: (230.0, 1 / 0.9),
    ExperimentKind.CONVERGENCE: (230.0, 1 / 0.9),
    ExperimentKind.ARCHITECTURE_COMPARE: (230.0, 1 / 0.9),
    ExperimentKind.MN_SWEEP: (200.0, 1 / 0.5),
    ExperimentKind.RESOLUTION_SWEEP: (90.0, 1 / 0.6),
    ExperimentKind.PROTOCOL_COMPARE: (450.0, 1 / 0.6),
}

_SWEEP_DEFAULTS = {
    ExperimentKind.THEORY_VALIDATION: dict(
        p_max_dbw=(-5.0, 0.0, 5.0), mn_pairs=((2, 4), (3, 4), (3, 6), (4, 4)), n_seeds=1),
    ExperimentKind.CONVERGENCE: dict(p_max_dbw=(5.0,), n_seeds=1),
    ExperimentKind.ARCHITECTURE_COMPARE: dict(
        p_max_dbw=(-5.0, 0.0, 5.0, 10.0), architectures=("pass", "mimo", "cellfree"),
        n_seeds=20),
    ExperimentKind.MN_SWEEP: dict(
        p_max_dbw=(-2.0,), mn_pairs=((2, 3), (3, 3), (3, 6), (3, 9)), n_seeds=10),
    ExperimentKind.RESOLUTION_SWEEP: dict(
        p_max_dbw=(5.0,), coarse_res_m=(1.0, 10.0), fine_res_m=(1e-4, 1e-2), n_values=(1, 6),
        n_seeds=1),
    ExperimentKind.PROTOCOL_COMPARE: dict(
        p_max_dbw=(5.0,), protocols=("stt", "sta", "sat", "saa"), n_seeds=20),
}


@dataclass(frozen=True)
class ExperimentSpec:
    """One sweep. Empty sweep fields take the kind's defaults on
    :meth:`resolved`; ``seeds`` are explicit integers."""

    kind: ExperimentKind
    seeds: tuple = (0,)
    p_max_dbw: tuple = ()
    mn_pairs: tuple = ()
    n_values: tuple = ()
    coarse_res_m: tuple = ()
    fine_res_m: tuple = ()
    protocols: tuple = ()
    architectures: tuple = ()
    penalty0: float | None = None
    penalty_growth: float | None = None
    n_draws: int = 10_000
    users: str = "table"
    sat_n_c: int = 2
    workers: int = 1

    @classmethod
    def default(cls, kind, seed=0, n_seeds=None, **kw):
        """Spec with the kind's defaults and seeds ``seed, seed+1, ...``."""
        kind = ExperimentKind.parse(kind)
        n = _SWEEP_DEFAULTS[kind]["n_seeds"] if n_seeds is None else int(n_seeds)
        seeds = tuple(int(seed) + i for i in range(n))
        return cls(kind=kind, seeds=seeds, **kw).resolved()

    def resolved(self):
        kind = ExperimentKind.parse(self.kind)
        d = _SWEEP_DEFAULTS[kind]
        rho0, growth = PENALTY_DEFAULTS[kind]
        ch = {"kind": kind}
        for name, value in d.items():
            if name != "n_seeds" and not getattr(self, name):
                ch[name] = tuple(value)
        if self.penalty0 is None:
            ch["penalty0"] = rho0
        if self.penalty_growth is None:
            ch["penalty_growth"] = growth
        spec = dataclasses.replace(self, **ch)
        spec = dataclasses.replace(
            spec,
            seeds=tuple(int(s) for s in spec.seeds),
            p_max_dbw=tuple(float(p) for p in spec.p_max_dbw),
            mn_pairs=tuple((int(m), int(n)) for m, n in spec.mn_pairs),
            n_values=tuple(int(n) for n in spec.n_values),
            coarse_res_m=tuple(float(v) for v in spec.coarse_res_m),
            fine_res_m=tuple(float(v) for v in spec.fine_res_m),
            protocols=tuple(Protocol.parse(p).value for p in spec.protocols),
            architectures=tuple(_parse_arch(a) for a in spec.architectures),
        )
        spec.validate()
        return spec

    def problems(self):
        out = []
        if not self.seeds:
            out.append("experiment.seeds: at least one seed is required")
        if len(set(self.seeds)) != len(self.seeds):
            out.append("experiment.seeds: seeds must be distinct")
        if any(s < 0 for s in self.seeds):
            out.append("experiment.seeds: seeds must be >= 0")
        if self.n_draws < 2 * 50:
            out.append("experiment.n_draws: at least 100 draws are needed for batch errors")
        if self.users not in ("table", "random"):
            out.append("experiment.users: must be 'table' or 'random'")
        if self.workers < 1:
            out.append("experiment.workers: must be >= 1")
        if self.sat_n_c < 1:
            out.append("experiment.sat_n_c: must be >= 1")
        if self.penalty0 is not None and self.penalty0 <= 0:
            out.append("experiment.penalty0: must be > 0")
        if self.penalty_growth is not None and self.penalty_growth <= 1:
            out.append("experiment.penalty_growth: must be > 1")
        return out

    def validate(self):
        probs = self.problems()
        if probs:
            raise ConfigError(probs)
        return self

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["kind"] = self.kind.value if isinstance(self.kind, ExperimentKind) else self.kind
        return _jsonable(d)


def _parse_arch(a):
    a = str(a).strip().lower().replace("-", "").replace("_", "")
    if a not in ("pass", "mimo", "cellfree"):
        raise ConfigError(f"unknown architecture {a!r}; expected pass, mimo or cellfree")
    return a


# ---------------------------------------------------------------------------
# cells
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Cell:
    index: int
    seed: int
    params: tuple          # sorted (name, value) pairs

    def get(self, name, default=None):
        return dict(self.params).get(name, default)


def _cell_params(spec: ExperimentSpec):
    k = spec.kind
    if k is ExperimentKind.THEORY_VALIDATION:
        return [dict(p_max_dbw=p, M=m, N=n) for (m, n) in spec.mn_pairs for p in spec.p_max_dbw]
    if k is ExperimentKind.CONVERGENCE:
        return [dict(p_max_dbw=p) for p in spec.p_max_dbw]
    if k is ExperimentKind.ARCHITECTURE_COMPARE:
        return [dict(p_max_dbw=p, arch=a) for p in spec.p_max_dbw for a in spec.architectures]
    if k is ExperimentKind.MN_SWEEP:
        return [dict(M=m, N=n, p_max_dbw=p) for (m, n) in spec.mn_pairs for p in spec.p_max_dbw]
    if k is ExperimentKind.RESOLUTION_SWEEP:
        return [dict(N=n, delta_C=dc, delta_F=df, p_max_dbw=p)
                for n in spec.n_values for dc in spec.coarse_res_m for df in spec.fine_res_m
                for p in spec.p_max_dbw]
    if k is ExperimentKind.PROTOCOL_COMPARE:
        return [dict(protocol=pr, p_max_dbw=p) for pr in spec.protocols for p in spec.p_max_dbw]
    raise ConfigError(f"unsupported kind {k}")


def build_cells(spec: ExperimentSpec):
    """Cells in output order: parameter-major, seed-minor."""
    cells = []
    for params in _cell_params(spec):
        for seed in spec.seeds:
            cells.append(Cell(len(cells), seed, tuple(sorted(params.items()))))
    return cells


def cell_rng(seed, cell_index, stream):
    ss = np.random.SeedSequence([int(seed), int(cell_index), int(stream)])
    return np.random.Generator(np.random.Philox(ss))


def _users(spec, config: SystemConfig, seed):
    if spec.users == "table":
        return table_users(config.K)
    # user drops depend on the seed only, so every cell of one seed sees the same users
    return random_users(config.K, cell_rng(seed, 0, _USERS_STREAM))


def _cell_config(config: SystemConfig, cell: Cell):
    changes = {}
    if cell.get("p_max_dbw") is not None:
        changes["P_max"] = dbw_to_w(cell.get("p_max_dbw"))
    for name in ("M", "N"):
        if cell.get(name) is not None:
            changes[name] = int(cell.get(name))
    if "M" in changes:
        changes["Y_bar"] = None
    return config.replace(**changes) if changes else config


def _opt(spec, opt: OptimizerConfig):
    return dataclasses.replace(opt, penalty0=spec.penalty0, penalty_growth=spec.penalty_growth)


def _seed_invariant(spec: ExperimentSpec):
    """Optimization cells are deterministic once the users are fixed."""
    return spec.users == "table" and spec.kind is not ExperimentKind.THEORY_VALIDATION


def run_cell(spec: ExperimentSpec, cell: Cell, config: SystemConfig, grid: GridConfig,
             opt: OptimizerConfig, protocol="stt"):
    """Records (list of dicts) produced by one cell."""
    cfg = _cell_config(config, cell)
    users = _users(spec, cfg, cell.seed)
    base = dict(cell.params)
    base["seed"] = cell.seed
    k = spec.kind
    if k is ExperimentKind.THEORY_VALIDATION:
        W, s, X, ch, ee = uniform_state(cfg, users, protocol)
        ee_mc, se = monte_carlo_ee(W, s, X, users, cfg, protocol,
                                   cell_rng(cell.seed, cell.index, _NLOS_STREAM),
                                   n_draws=spec.n_draws)
        return [dict(base, ee_closed_form=ee, ee_monte_carlo=ee_mc, stderr=se)]
    o = _opt(spec, opt)
    if k is ExperimentKind.CONVERGENCE:
        sol = run_algorithm2(cfg, protocol, grid, users, o, seed=cell.seed)
        return [dict(base, **{f: row[f] for f in TRACE_FIELDS}) for row in sol.trace]
    if k is ExperimentKind.ARCHITECTURE_COMPARE:
        arch = cell.get("arch")
        if arch == "pass":
            ee = run_algorithm2(cfg, protocol, grid, users, o, seed=cell.seed).ee
        else:
            layout = BaselineLayout.for_config(arch, cfg)
            ee = evaluate_baseline_ee(layout, users, cfg, o, seed=cell.seed)
        return [dict(base, ee=ee)]
    if k is ExperimentKind.MN_SWEEP:
        sol = run_algorithm2(cfg, protocol, grid, users, o, seed=cell.seed)
        return [dict(base, ee_baseline=sol.ee_initial, ee_optimized=sol.ee)]
    if k is ExperimentKind.RESOLUTION_SWEEP:
        g = dataclasses.replace(grid, delta_C=cell.get("delta_C"), delta_F=cell.get("delta_F"))
        ee = run_algorithm2(cfg, protocol, g, users, o, seed=cell.seed).ee
        return [dict(base, ee=ee)]
    if k is ExperimentKind.PROTOCOL_COMPARE:
        pr = Protocol.parse(cell.get("protocol"))
        g = dataclasses.replace(grid, N_C=spec.sat_n_c) if pr is Protocol.SAT else grid
        ee = run_algorithm2(cfg, pr, g, users, o, seed=cell.seed).ee
        return [dict(base, ee=ee)]
    raise ConfigError(f"unsupported kind {k}")


def _run_cell_job(args):
    return run_cell(*args)


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

COLUMNS = {
    ExperimentKind.THEORY_VALIDATION: ("p_max_dbw", "M", "N", "seed", "ee_closed_form",
                                       "ee_monte_carlo", "stderr"),
    ExperimentKind.CONVERGENCE: ("p_max_dbw", "seed") + TRACE_FIELDS,
    ExperimentKind.ARCHITECTURE_COMPARE: ("p_max_dbw", "arch", "seed", "ee"),
    ExperimentKind.MN_SWEEP: ("M", "N", "p_max_dbw", "seed", "ee_baseline", "ee_optimized"),
    ExperimentKind.RESOLUTION_SWEEP: ("delta_C", "delta_F", "N", "p_max_dbw", "seed", "ee"),
    ExperimentKind.PROTOCOL_COMPARE: ("protocol", "p_max_dbw", "seed", "ee"),
}


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    records: list = field(default_factory=list)
    complete: bool = True

    @property
    def columns(self):
        return COLUMNS[self.spec.kind]


def run_experiment(spec: ExperimentSpec, config: SystemConfig, grid: GridConfig = GridConfig(),
                   opt: OptimizerConfig = OptimizerConfig(), protocol="stt", sink=None):
    """Execute every cell of ``spec`` and return an :class:`ExperimentResult`.

    ``sink`` (optional callable) receives each cell's records in output
    order as soon as they are available, so partial tables survive a
    failure further down the sweep.
    """
    spec = spec.resolved()
    config.validate()
    grid.validate()
    opt.validate()
    protocol = Protocol.parse(protocol).value
    cells = build_cells(spec)
    result = ExperimentResult(spec=spec)

    # table users make optimization cells seed-invariant; compute each once
    plan, memo_key = [], {}
    for cell in cells:
        key = cell.params if _seed_invariant(spec) else (cell.params, cell.seed)
        if key not in memo_key:
            memo_key[key] = len(plan)
            plan.append(cell)
    jobs = [(spec, c, config, grid, opt, protocol) for c in plan]

    def emit(records):
        result.records.extend(records)
        if sink is not None:
            sink(records)

    computed = {}
    try:
        if spec.workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=spec.workers) as pool:
                outputs = pool.map(_run_cell_job, jobs)
                _emit_in_order(cells, plan, memo_key, spec, outputs, computed, emit)
        else:
            outputs = (run_cell(*j) for j in jobs)
            _emit_in_order(cells, plan, memo_key, spec, outputs, computed, emit)
    except Exception:
        result.complete = False
        raise
    return result


def _emit_in_order(cells, plan, memo_key, spec, outputs, computed, emit):
    it = iter(outputs)
    for cell in cells:
        key = cell.params if _seed_invariant(spec) else (cell.params, cell.seed)
        j = memo_key[key]
        while j not in computed:
            computed[len(computed)] = next(it)
        emit([dict(r, seed=cell.seed) for r in computed[j]])


def summarize(result: ExperimentResult):
    """Seed-averaged value columns per parameter cell, in cell order."""
    value_cols = [c for c in result.columns if c.startswith("ee") or c == "stderr"]
    if result.spec.kind is ExperimentKind.CONVERGENCE:
        return []
    param_cols = [c for c in result.columns if c not in value_cols and c != "seed"]
    groups = {}
    for r in result.records:
        key = tuple(r[c] for c in param_cols)
        groups.setdefault(key, []).append(r)
    out = []
    for key, rows in groups.items():
        row = dict(zip(param_cols, key))
        row["n_seeds"] = len(rows)
        for c in value_cols:
            row[c] = float(np.mean([r[c] for r in rows]))
        out.append(row)
    return out


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def canonical_json(obj):
    return json.dumps(_jsonable(obj), sort_keys=True, separators=(",", ":"))


def config_hash(obj):
    """Git-style blob hash (sha1 over ``"blob <len>\\0" + payload``) of the
    canonical JSON encoding of ``obj``."""
    payload = canonical_json(obj).encode()
    return hashlib.sha1(b"blob %d\0" % len(payload) + payload).hexdigest()


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else str(v)


def records_to_csv(records, columns):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(columns)
    for r in records:
        w.writerow([_fmt(r.get(c)) for c in columns])
    return buf.getvalue()


class CsvSink:
    """Appends records to an RFC-4180 CSV file as they arrive."""

    def __init__(self, path, columns):
        self.path = path
        self.columns = columns
        with open(path, "w", newline="", encoding="utf-8") as fh:
            csv.writer(fh, lineterminator="\r\n").writerow(columns)

    def __call__(self, records):
        with open(self.path, "a", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\r\n")
            for r in records:
                w.writerow([_fmt(r.get(c)) for c in self.columns])


def summary_document(result: ExperimentResult, inputs: dict):
    return _jsonable({
        "spec": result.spec.to_dict(),
        "config_hash": config_hash(inputs),
        "complete": result.complete,
        "columns": list(result.columns),
        "cells": summarize(result),
        "records": result.records,
    })

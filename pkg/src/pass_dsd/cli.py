"""Command-line entry point.

    pass-dsd SUBCOMMAND [--config PATH] [--set KEY=VALUE ...] [--seed N]
                        [--out DIR] [--kind NAME] [--protocol NAME]

Subcommands: ``evaluate``, ``optimize``, ``experiment``, ``baseline``,
``grids``. Exit status is 0 on success, 1 for configuration errors and 2
for failures during computation.

Configuration files are JSON or YAML key-value trees with the sections
``system``, ``grid``, ``motion``, ``optimizer`` and ``experiment`` (see
:data:`pass_dsd.config.DEFAULT_RAW`). Units are part of the key names.
A ``manifest.json`` written by a previous run is accepted as well and
reproduces that run.
"""

from __future__ import annotations

import argparse
import copy
import dataclasses
import datetime as _dt
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .baselines import Architecture, BaselineLayout, baseline_ee, synth_baseline_channels
from .config import (DEFAULT_RAW, SECTION_KEYS, ConfigError, GeometryError, GridConfig,
                     MotionSpeeds, OptimizerConfig, SystemConfig, grid_from_dict,
                     optimizer_from_dict, system_from_dict, users_from_raw)
from .experiments import (COLUMNS, CsvSink, ExperimentKind, ExperimentSpec, _jsonable,
                          config_hash, records_to_csv, run_experiment,
                          summary_document)
from .model import (check_amplitudes, check_placement, energy_efficiency, monte_carlo_ee,
                    mrt_precoder, sinr_closed_form, sum_rate, synth_channels, total_power,
                    uniform_state)
from .optimizer import TRACE_FIELDS, optimize_precoding_only, run_algorithm2
from .protocols import Protocol, grid_sets, pa_power

log = logging.getLogger("pass_dsd")

SUBCOMMANDS = ("evaluate", "optimize", "experiment", "baseline", "grids")
MANIFEST_VERSION = 1

EXPERIMENT_DEFAULTS = {
    "kind": "protocol-compare",
    "n_seeds": None,
    "p_max_dbw": None,
    "mn_pairs": None,
    "n_values": None,
    "coarse_res_m": None,
    "fine_res_m": None,
    "protocols": None,
    "architectures": None,
    "penalty0": None,
    "penalty_growth": None,
    "n_draws": 10_000,
    "users": "table",
    "sat_n_c": 2,
    "workers": 1,
}
BASELINE_DEFAULTS = {"kind": "cellfree", "optimize_precoding": True}
EVALUATE_DEFAULTS = {"mc_draws": 0}

ALL_DEFAULTS = copy.deepcopy(DEFAULT_RAW)
ALL_DEFAULTS["experiment"] = dict(EXPERIMENT_DEFAULTS)
ALL_DEFAULTS["baseline"] = dict(BASELINE_DEFAULTS)
ALL_DEFAULTS["evaluate"] = dict(EVALUATE_DEFAULTS)

ALL_SECTION_KEYS = dict(SECTION_KEYS)
ALL_SECTION_KEYS["experiment"] = set(EXPERIMENT_DEFAULTS)
ALL_SECTION_KEYS["baseline"] = set(BASELINE_DEFAULTS)
ALL_SECTION_KEYS["evaluate"] = set(EVALUATE_DEFAULTS)
# system keys that are valid in files but absent from the default tree
_OPTIONAL_SYSTEM = {"p_max_w", "min_spacing_m", "waveguide_y_m", "c0_db"}


@dataclass
class RunManifest:
    """Everything needed to reproduce a run. ``raw`` is the merged key-value
    tree; the dataclasses are its resolved SI form."""

    raw: dict
    system: SystemConfig
    grid: GridConfig
    optimizer: OptimizerConfig
    motion: MotionSpeeds
    protocol: Protocol
    seed: int | None = None
    command: str | None = None
    experiment: ExperimentSpec | None = None
    timestamp: str | None = None
    version: str = __version__
    extra: dict = field(default_factory=dict)

    def inputs(self):
        """The reproducibility-relevant part (no timestamp, no version)."""
        return {"command": self.command, "seed": self.seed, "config": self.raw}

    def to_dict(self):
        return _jsonable({
            "manifest_version": MANIFEST_VERSION,
            "tool": "pass-dsd",
            "version": self.version,
            "timestamp": self.timestamp,
            "command": self.command,
            "seed": self.seed,
            "config_hash": config_hash(self.inputs()),
            "config": self.raw,
            "resolved": {
                "system": dataclasses.asdict(self.system),
                "grid": dataclasses.asdict(self.grid),
                "optimizer": dataclasses.asdict(self.optimizer),
                "motion": dataclasses.asdict(self.motion),
                "protocol": self.protocol.value,
                "experiment": None if self.experiment is None else self.experiment.to_dict(),
            },
        })


# ---------------------------------------------------------------------------
# configuration loading
# ---------------------------------------------------------------------------

def _read_tree(path):
    if path is None or str(path) == "default":
        return {}, None
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = p.read_text(encoding="utf-8")
    try:
        if p.suffix.lower() == ".json":
            tree = json.loads(text) if text.strip() else {}
        else:
            tree = yaml.safe_load(text) or {}
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"{path}: cannot parse ({exc})") from None
    if not isinstance(tree, dict):
        raise ConfigError(f"{path}: top level must be a key-value mapping")
    if "manifest_version" in tree:
        return dict(tree.get("config") or {}), tree
    return tree, None


def _parse_value(text):
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError:
        return text


def _resolve_key(key, problems):
    """'section.key' or a bare key that names exactly one section's key."""
    if "." in key:
        sec, name = key.split(".", 1)
        return sec, name
    hits = [s for s, keys in ALL_SECTION_KEYS.items()
            if key in keys or (s == "system" and key in _OPTIONAL_SYSTEM)]
    if len(hits) == 1:
        return hits[0], key
    if not hits:
        problems.append(f"--set {key}: unknown key")
    else:
        problems.append(f"--set {key}: ambiguous, qualify with one of "
                        + ", ".join(f"{h}.{key}" for h in hits))
    return None, None


def merge_tree(tree, overrides=(), problems=None):
    """Defaults <- file tree <- overrides, with strict key checking."""
    problems = [] if problems is None else problems
    merged = copy.deepcopy(ALL_DEFAULTS)
    for sec, body in tree.items():
        if sec not in ALL_SECTION_KEYS:
            problems.append(f"{sec}: unknown section")
            continue
        if not isinstance(body, dict):
            problems.append(f"{sec}: expected a mapping")
            continue
        for k, v in body.items():
            allowed = ALL_SECTION_KEYS[sec] | (_OPTIONAL_SYSTEM if sec == "system" else set())
            if k not in allowed:
                problems.append(f"{sec}.{k}: unknown key")
            else:
                merged[sec][k] = v
    for item in overrides:
        if "=" not in item:
            problems.append(f"--set {item!r}: expected KEY=VALUE")
            continue
        key, text = item.split("=", 1)
        sec, name = _resolve_key(key.strip(), problems)
        if sec is None:
            continue
        allowed = ALL_SECTION_KEYS.get(sec, set()) | (_OPTIONAL_SYSTEM if sec == "system" else set())
        if sec not in ALL_SECTION_KEYS or name not in allowed:
            problems.append(f"--set {key}: unknown key")
            continue
        merged[sec][name] = _parse_value(text.strip())
    return merged


def experiment_spec_from_raw(raw, seed, problems):
    e = raw["experiment"]
    try:
        kind = ExperimentKind.parse(e["kind"])
    except ConfigError as exc:
        problems.extend(f"experiment.kind: {p}" for p in exc.problems)
        return None
    base = 0 if seed is None else int(seed)
    kw = {}
    for name in ("p_max_dbw", "mn_pairs", "n_values", "coarse_res_m", "fine_res_m",
                 "protocols", "architectures"):
        if e.get(name) is not None:
            v = e[name]
            kw[name] = tuple(tuple(x) if isinstance(x, list) else x for x in
                             (v if isinstance(v, (list, tuple)) else [v]))
    for name in ("penalty0", "penalty_growth"):
        if e.get(name) is not None:
            kw[name] = float(e[name])
    try:
        spec = ExperimentSpec.default(kind, seed=base, n_seeds=e.get("n_seeds"),
                                      n_draws=int(e["n_draws"]), users=str(e["users"]),
                                      sat_n_c=int(e["sat_n_c"]), workers=int(e["workers"]),
                                      **kw)
    except ConfigError as exc:
        problems.extend(exc.problems)
        return None
    except (TypeError, ValueError) as exc:
        problems.append(f"experiment: {exc}")
        return None
    return spec


def load_config(path=None, overrides=(), seed=None, command=None):
    """Build a fully resolved :class:`RunManifest`.

    Raises :class:`ConfigError` listing every problem found.
    """
    problems = []
    tree, manifest = _read_tree(path)
    if manifest is not None:
        if seed is None:
            seed = manifest.get("seed")
        command = command or manifest.get("command")
    raw = merge_tree(tree, overrides, problems)
    if raw["system"].get("users") == "random":
        raw["system"].setdefault("num_users", 4)
    system = system_from_dict(raw["system"], problems)
    grid = grid_from_dict(raw["grid"], problems)
    opt = optimizer_from_dict(raw["optimizer"], problems)
    motion = None
    try:
        motion = MotionSpeeds(float(raw["motion"]["v_mo"]), float(raw["motion"]["v_pi"]))
    except (ConfigError, TypeError, ValueError) as exc:
        problems.append(f"motion: {exc}")
    protocol = None
    try:
        protocol = Protocol.parse(raw["grid"]["protocol"])
    except ConfigError as exc:
        problems.extend(f"grid.protocol: {p}" for p in exc.problems)
    if seed is not None:
        try:
            seed = int(seed)
            if seed < 0 or seed >= 2 ** 64:
                raise ValueError
        except (TypeError, ValueError):
            problems.append(f"--seed {seed!r}: expected an unsigned 64-bit integer")
    spec = experiment_spec_from_raw(raw, seed, problems) if command == "experiment" else None
    if command == "baseline":
        try:
            Architecture.parse(raw["baseline"]["kind"])
        except ConfigError as exc:
            problems.extend(f"baseline.kind: {p}" for p in exc.problems)
    if problems:
        raise ConfigError(problems)
    return RunManifest(raw=raw, system=system, grid=grid, optimizer=opt, motion=motion,
                       protocol=protocol, seed=seed, command=command, experiment=spec)


def _needs_seed(man: RunManifest):
    if man.raw["system"].get("users") == "random":
        return True
    if man.command == "experiment":
        return True
    return man.command == "evaluate" and int(man.raw["evaluate"]["mc_draws"]) > 0


def _users(man: RunManifest):
    return users_from_raw(man.raw["system"], man.system.K, man.seed)


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

class Output:
    def __init__(self, out):
        self.dir = Path(out) if out else None
        if self.dir is not None:
            self.dir.mkdir(parents=True, exist_ok=True)

    def path(self, name):
        return None if self.dir is None else self.dir / name

    def write_text(self, name, text):
        if self.dir is not None:
            with open(self.dir / name, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)

    def write_json(self, name, obj):
        self.write_text(name, json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")

    def write_manifest(self, man: RunManifest):
        man.timestamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
        self.write_json("manifest.json", man.to_dict())


def _complex_to_json(a):
    a = np.asarray(a)
    return {"real": a.real.tolist(), "imag": a.imag.tolist()}


def _complex_from_json(d):
    return np.asarray(d["real"], dtype=float) + 1j * np.asarray(d["imag"], dtype=float)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_grids(man: RunManifest, out: Output, args):
    g = grid_sets(man.protocol, man.system, man.grid)
    print(f"coarse: {len(g.coarse)} points, fine: {len(g.fine)} points")
    rows = [dict(stage="coarse", index=i, x_m=float(x)) for i, x in enumerate(g.coarse)]
    rows += [dict(stage="fine", index=i, x_m=float(x)) for i, x in enumerate(g.fine)]
    out.write_text("grids.csv", records_to_csv(rows, ("stage", "index", "x_m")))
    out.write_json("summary.json", {"protocol": man.protocol.value,
                                    "coarse_points": len(g.coarse),
                                    "fine_points": len(g.fine),
                                    "config_hash": config_hash(man.inputs())})
    return 0


def _load_state(path, cfg):
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    W = _complex_from_json(d["W"])
    s = np.asarray(d["s"], dtype=float)
    X = np.asarray(d["X"], dtype=float)
    if W.shape != (cfg.M, cfg.K) or s.shape != (cfg.M * cfg.N,) or X.shape != (cfg.N, cfg.M):
        raise ConfigError(f"{path}: state shapes do not match M={cfg.M}, N={cfg.N}, K={cfg.K}")
    check_amplitudes(s, cfg.M, cfg.N)
    check_placement(X, cfg)
    return W, s, X


def cmd_evaluate(man: RunManifest, out: Output, args):
    cfg, users = man.system, _users(man)
    if args.state:
        W, s, X = _load_state(args.state, cfg)
        ch = synth_channels(X, users, cfg)
    else:
        W, s, X, ch, _ = uniform_state(cfg, users, man.protocol)
    gamma = sinr_closed_form(W, s, ch, cfg)
    rates, tot = sum_rate(W, s, ch, cfg)
    p_all = total_power(W, cfg, pa_power(man.protocol, cfg))
    ee = energy_efficiency(W, s, ch, cfg, man.protocol)
    summary = {"ee": ee, "sum_rate": tot, "total_power_w": p_all,
               "tx_power_w": float(np.sum(np.abs(W) ** 2)),
               "config_hash": config_hash(man.inputs())}
    n_mc = int(man.raw["evaluate"]["mc_draws"])
    if n_mc > 0:
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([man.seed, 0, 1])))
        summary["ee_monte_carlo"], summary["stderr"] = monte_carlo_ee(
            W, s, X, users, cfg, man.protocol, rng, n_draws=n_mc)
    rows = [dict(user=k, sinr=float(gamma[k]), rate=float(rates[k])) for k in range(len(rates))]
    out.write_text("users.csv", records_to_csv(rows, ("user", "sinr", "rate")))
    out.write_json("summary.json", summary)
    print(f"energy efficiency: {ee:.6g} bit/J")
    return 0


def cmd_optimize(man: RunManifest, out: Output, args):
    cfg, users = man.system, _users(man)
    sol = run_algorithm2(cfg, man.protocol, man.grid, users, man.optimizer, seed=man.seed)
    out.write_text("trace.csv", records_to_csv(sol.trace, TRACE_FIELDS))
    out.write_json("state.json", {"W": _complex_to_json(sol.W), "s": sol.s.tolist(),
                                  "X": sol.X.tolist(), "rho": sol.rho})
    out.write_json("summary.json", {"ee": sol.ee, "ee_initial": sol.ee_initial,
                                    "gain": sol.ee / sol.ee_initial if sol.ee_initial else None,
                                    "converged": sol.converged, "iterations": len(sol.trace) - 1,
                                    "config_hash": config_hash(man.inputs())})
    print(f"energy efficiency: {sol.ee_initial:.6g} -> {sol.ee:.6g} bit/J")
    return 0


def cmd_baseline(man: RunManifest, out: Output, args):
    cfg, users = man.system, _users(man)
    kind = Architecture.parse(man.raw["baseline"]["kind"])
    layout = BaselineLayout.for_config(kind, cfg)
    link = synth_baseline_channels(layout, users, cfg).link(cfg)
    if man.raw["baseline"]["optimize_precoding"]:
        W, ee, hist = optimize_precoding_only(link, cfg, cfg.P_bs_sta, man.optimizer)
    else:
        W = mrt_precoder(link, cfg.P_max)
        ee, hist = baseline_ee(W, link, cfg), []
    rows = [dict(iteration=i, ee=v) for i, v in enumerate(hist)]
    out.write_text("trace.csv", records_to_csv(rows, ("iteration", "ee")))
    out.write_json("summary.json", {"architecture": kind.value, "ee": ee,
                                    "tx_power_w": float(np.sum(np.abs(W) ** 2)),
                                    "config_hash": config_hash(man.inputs())})
    print(f"{kind.value} energy efficiency: {ee:.6g} bit/J")
    return 0


def cmd_experiment(man: RunManifest, out: Output, args):
    spec = man.experiment
    sink = None
    if out.dir is not None:
        sink = CsvSink(out.path("results.csv"), COLUMNS[spec.kind])
    # rows reach results.csv cell by cell, so a failure leaves a partial table
    result = run_experiment(spec, man.system, man.grid, man.optimizer, man.protocol, sink=sink)
    out.write_json("summary.json", summary_document(result, man.inputs()))
    print(f"{spec.kind.value}: {len(result.records)} records")
    return 0


HANDLERS = {"evaluate": cmd_evaluate, "optimize": cmd_optimize, "experiment": cmd_experiment,
            "baseline": cmd_baseline, "grids": cmd_grids}


def build_parser():
    p = argparse.ArgumentParser(prog="pass-dsd", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", default="default",
                        help="JSON/YAML config or manifest path, or 'default'")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        dest="overrides", help="override one key (repeatable)")
        sp.add_argument("--seed", default=None, help="unsigned 64-bit seed")
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--kind", default=None, help="experiment or baseline kind")
        sp.add_argument("--protocol", default=None, help="stt | sta | sat | saa")
        sp.add_argument("-v", "--verbose", action="store_true")
        if name == "evaluate":
            sp.add_argument("--state", default=None, help="state.json written by optimize")
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code else 0
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    overrides = list(args.overrides)
    if args.protocol is not None:
        overrides.append(f"grid.protocol={args.protocol}")
    if args.kind is not None:
        sec = "baseline" if args.command == "baseline" else "experiment"
        overrides.append(f"{sec}.kind={args.kind}")
    try:
        man = load_config(args.config, overrides, seed=args.seed, command=args.command)
        if man.seed is None and _needs_seed(man):
            raise ConfigError(f"{args.command}: --seed is required for stochastic runs")
        out = Output(args.out)
        out.write_manifest(man)
    except ConfigError as exc:
        for p in exc.problems:
            print(f"config error: {p}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        return HANDLERS[args.command](man, out, args)
    except (ConfigError, GeometryError) as exc:
        for p in getattr(exc, "problems", [str(exc)]):
            print(f"config error: {p}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        log.debug("runtime failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Parameter containers and unit handling.

All quantities stored on the dataclasses below are SI linear units (W, m,
Hz, nepers/m). Conversions from dB-style inputs happen once, in
:func:`system_from_dict` and friends.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0

# Default user drop of the 100 m x 100 m reference scenario.
TABLE_USERS = ((15.9, 54.3), (98.6, 85.4), (74.5, 24.1), (37.4, 23.9))


class ConfigError(ValueError):
    """Invalid configuration. ``problems`` lists every violation found."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class GeometryError(ValueError):
    """A user coincides with a radiating element (zero link distance)."""


def dbm_to_w(x):
    return 10.0 ** ((x - 30.0) / 10.0)


def dbw_to_w(x):
    return 10.0 ** (x / 10.0)


def db_to_lin(x):
    return 10.0 ** (x / 10.0)


def w_to_dbm(p):
    return 10.0 * math.log10(p) + 30.0


def db_per_length_to_nepers(attenuation_db, ref_length_m):
    """Convert a power attenuation of ``attenuation_db`` over ``ref_length_m``
    into an amplitude attenuation constant in nepers per meter."""
    return abs(attenuation_db) * math.log(10.0) / (20.0 * ref_length_m)


@dataclass(frozen=True)
class SystemConfig:
    """Physical parameters of a PASS deployment, SI units throughout."""

    M: int = 3
    N: int = 4
    K: int = 4
    B: float = 180e6
    f_c: float = 28e9
    n_eff: float = 1.4
    alpha_g: float = db_per_length_to_nepers(18.0, 100.0)
    C_0: float | None = None
    beta_u: float = 2.2
    K_r: float = 0.5
    nu: float = 0.9
    P_max: float = dbw_to_w(5.0)
    N_0: float = dbm_to_w(-80.0)
    delta_x: float | None = None
    x_min: float = 0.0
    x_max: float = 100.0
    Y_bar: tuple | None = None
    P_bs_sta: float = dbw_to_w(9.0)
    P_act: float = dbm_to_w(5.0)
    P_mot: float = dbm_to_w(20.0)
    P_pie: float = dbm_to_w(8.0)

    def __post_init__(self):
        # derived defaults; frozen dataclass so go through object.__setattr__
        if self.C_0 is None:
            object.__setattr__(self, "C_0", (self.wavelength / (4 * math.pi)) ** 2)
        if self.delta_x is None:
            object.__setattr__(self, "delta_x", self.wavelength / 2)
        if self.Y_bar is None:
            ys = tuple(100.0 * m / (self.M + 1) for m in range(1, self.M + 1))
            object.__setattr__(self, "Y_bar", ys)
        else:
            object.__setattr__(self, "Y_bar", tuple(float(y) for y in self.Y_bar))

    @property
    def wavelength(self):
        return SPEED_OF_LIGHT / self.f_c

    @property
    def wavelength_g(self):
        return self.wavelength / self.n_eff

    @property
    def k0(self):
        """Free-space wavenumber 2*pi/lambda."""
        return 2 * math.pi / self.wavelength

    @property
    def kg(self):
        """Guided wavenumber 2*pi/lambda_g."""
        return 2 * math.pi / self.wavelength_g

    @property
    def los_scale(self):
        return math.sqrt(self.K_r / (self.K_r + 1.0))

    @property
    def nlos_scale(self):
        """C_0 / (K_r + 1), the NLoS variance prefactor."""
        return self.C_0 / (self.K_r + 1.0)

    def problems(self):
        out = []
        if self.M < 1 or self.N < 1 or self.K < 1:
            out.append("M, N, K must be >= 1")
        if self.alpha_g < 0:
            out.append("alpha_g must be >= 0")
        if self.K_r < 0:
            out.append("K_r must be >= 0")
        if not 0 < self.nu <= 1:
            out.append("nu must lie in (0, 1]")
        if self.P_max <= 0:
            out.append("P_max must be > 0")
        if self.N_0 <= 0:
            out.append("N_0 must be > 0")
        if self.B <= 0:
            out.append("B must be > 0")
        if self.x_max - self.x_min < (self.N - 1) * self.delta_x:
            out.append("x_max - x_min must be >= (N-1)*delta_x")
        if len(self.Y_bar) != self.M:
            out.append("Y_bar must have M entries")
        for name in ("P_bs_sta", "P_act", "P_mot", "P_pie"):
            if getattr(self, name) < 0:
                out.append(f"{name} must be >= 0")
        return out

    def validate(self):
        probs = self.problems()
        if probs:
            raise ConfigError(probs)
        return self

    def replace(self, **changes):
        if "M" in changes and "Y_bar" not in changes:
            changes["Y_bar"] = None
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class GridConfig:
    """Resolutions of the two deployment stages."""

    delta_C: float = 1.0
    delta_F: float = 1e-4
    L_F: float = 0.2
    N_C: int = 1
    N_F: int = 1

    def problems(self):
        out = []
        if self.delta_C <= 0:
            out.append("delta_C must be > 0")
        if self.delta_F <= 0:
            out.append("delta_F must be > 0")
        if self.L_F <= 0:
            out.append("L_F must be > 0")
        if self.N_C < 1 or self.N_F < 1:
            out.append("N_C and N_F must be >= 1")
        if self.delta_F > self.L_F:
            out.append("delta_F must be <= L_F")
        return out

    def validate(self):
        probs = self.problems()
        if probs:
            raise ConfigError(probs)
        return self


@dataclass(frozen=True)
class MotionSpeeds:
    v_MO: float = 10.0
    v_PI: float = 1e-2

    def __post_init__(self):
        if self.v_MO <= 0 or self.v_PI <= 0:
            raise ConfigError("motion speeds must be > 0")


@dataclass(frozen=True)
class OptimizerConfig:
    eps_xi: float = 1e-4
    eps_in: float = 1e-8
    eps_out: float = 1e-8
    step0: float = 1e2
    armijo_beta: float = 0.5
    armijo_sigma: float = 1e-4
    max_halvings: int = 50
    max_xi_iter: int = 200
    max_inner: int = 15
    max_outer: int = 6
    penalty0: float = 230.0
    penalty_growth: float = 1 / 0.9
    bisect_tol: float = 1e-8
    position_sweeps: int = 1

    def problems(self):
        out = []
        for name in ("eps_xi", "eps_in", "eps_out", "step0", "armijo_sigma",
                     "penalty0", "bisect_tol"):
            if getattr(self, name) <= 0:
                out.append(f"{name} must be > 0")
        if not 0 < self.armijo_beta < 1:
            out.append("armijo_beta must lie in (0, 1)")
        for name in ("max_halvings", "max_xi_iter", "max_inner", "max_outer", "position_sweeps"):
            if getattr(self, name) < 1:
                out.append(f"{name} must be >= 1")
        if self.penalty_growth <= 1:
            out.append("penalty_growth must be > 1")
        return out

    def validate(self):
        probs = self.problems()
        if probs:
            raise ConfigError(probs)
        return self


def table_users(K=None):
    users = np.array(TABLE_USERS, dtype=float)
    if K is not None:
        if K > len(users):
            raise ConfigError(f"only {len(users)} reference users exist, K={K} requested")
        users = users[:K]
    return users


def random_users(K, rng, area=100.0):
    """Users dropped uniformly in the square [0, area]^2."""
    return rng.uniform(0.0, area, size=(K, 2))


# ---------------------------------------------------------------------------
# key-value ingestion
# ---------------------------------------------------------------------------

# key -> (section, converter applied to the raw value)
_SYSTEM_KEYS = {
    "M": ("M", int),
    "N": ("N", int),
    "bandwidth_hz": ("B", float),
    "carrier_hz": ("f_c", float),
    "n_eff": ("n_eff", float),
    "pathloss_exponent": ("beta_u", float),
    "rician_factor": ("K_r", float),
    "amp_efficiency": ("nu", float),
    "p_max_dbw": ("P_max", lambda v: dbw_to_w(float(v))),
    "p_max_w": ("P_max", float),
    "noise_dbm": ("N_0", lambda v: dbm_to_w(float(v))),
    "min_spacing_m": ("delta_x", float),
    "x_min_m": ("x_min", float),
    "x_max_m": ("x_max", float),
    "waveguide_y_m": ("Y_bar", lambda v: tuple(float(y) for y in v)),
    "p_bs_static_dbw": ("P_bs_sta", lambda v: dbw_to_w(float(v))),
    "pa_act_dbm": ("P_act", lambda v: dbm_to_w(float(v))),
    "pa_mot_dbm": ("P_mot", lambda v: dbm_to_w(float(v))),
    "pa_pie_dbm": ("P_pie", lambda v: dbm_to_w(float(v))),
    "c0_db": ("C_0", lambda v: db_to_lin(float(v))),
}

_GRID_KEYS = {
    "coarse_res_m": ("delta_C", float),
    "fine_res_m": ("delta_F", float),
    "fine_range_m": ("L_F", float),
    "n_c": ("N_C", int),
    "n_f": ("N_F", int),
}

_OPT_KEYS = {f.name: (f.name, type(f.default)) for f in dataclasses.fields(OptimizerConfig)}

DEFAULT_RAW = {
    "system": {
        "M": 3,
        "N": 4,
        "bandwidth_hz": 180e6,
        "carrier_hz": 28e9,
        "n_eff": 1.4,
        "attenuation_db": 18.0,
        "attenuation_ref_length_m": 100.0,
        "pathloss_exponent": 2.2,
        "rician_factor": 0.5,
        "amp_efficiency": 0.9,
        "p_max_dbw": 5.0,
        "noise_dbm": -80.0,
        "x_min_m": 0.0,
        "x_max_m": 100.0,
        "p_bs_static_dbw": 9.0,
        "pa_act_dbm": 5.0,
        "pa_mot_dbm": 20.0,
        "pa_pie_dbm": 8.0,
        "users": "table",
        "num_users": 4,
    },
    "grid": {
        "protocol": "stt",
        "coarse_res_m": 1.0,
        "fine_res_m": 1e-4,
        "fine_range_m": 0.2,
        "n_c": 1,
        "n_f": 1,
    },
    "motion": {"v_mo": 10.0, "v_pi": 1e-2},
    "optimizer": {f.name: f.default for f in dataclasses.fields(OptimizerConfig)},
}

SECTION_KEYS = {
    "system": set(_SYSTEM_KEYS) | {"attenuation_db", "attenuation_ref_length_m",
                                  "users", "num_users"},
    "grid": set(_GRID_KEYS) | {"protocol"},
    "motion": {"v_mo", "v_pi"},
    "optimizer": set(_OPT_KEYS),
}


def _apply(table, raw, section, problems):
    kwargs = {}
    for key, value in raw.items():
        if key not in table:
            continue
        attr, conv = table[key]
        try:
            kwargs[attr] = conv(value)
        except (TypeError, ValueError) as exc:
            problems.append(f"{section}.{key}: cannot convert {value!r} ({exc})")
    return kwargs


def system_from_dict(raw: Mapping[str, Any], problems=None):
    """Build a :class:`SystemConfig` from unit-suffixed keys."""
    own = problems is None
    problems = [] if own else problems
    kwargs = _apply(_SYSTEM_KEYS, raw, "system", problems)
    att_db = raw.get("attenuation_db", 18.0)
    att_len = raw.get("attenuation_ref_length_m", 100.0)
    try:
        if float(att_len) <= 0:
            problems.append("system.attenuation_ref_length_m: must be > 0")
        else:
            kwargs["alpha_g"] = db_per_length_to_nepers(float(att_db), float(att_len))
    except (TypeError, ValueError) as exc:
        problems.append(f"system.attenuation_db: {exc}")
    users = raw.get("users", "table")
    K = None
    if isinstance(users, str):
        if users not in ("table", "random"):
            problems.append("system.users: must be 'table', 'random' or a list of [x, y]")
        K = int(raw.get("num_users", 4))
        if users == "table" and K > len(TABLE_USERS):
            problems.append(f"system.num_users: at most {len(TABLE_USERS)} reference users")
    else:
        K = len(users)
    kwargs["K"] = K
    cfg = None
    try:
        cfg = SystemConfig(**kwargs)
        problems.extend(f"system: {p}" for p in cfg.problems())
    except TypeError as exc:
        problems.append(f"system: {exc}")
    if own and problems:
        raise ConfigError(problems)
    return cfg


def grid_from_dict(raw, problems=None):
    own = problems is None
    problems = [] if own else problems
    kwargs = _apply(_GRID_KEYS, raw, "grid", problems)
    grid = GridConfig(**kwargs)
    problems.extend(f"grid: {p}" for p in grid.problems())
    if own and problems:
        raise ConfigError(problems)
    return grid


def optimizer_from_dict(raw, problems=None):
    own = problems is None
    problems = [] if own else problems
    kwargs = _apply(_OPT_KEYS, raw, "optimizer", problems)
    opt = OptimizerConfig(**kwargs)
    problems.extend(f"optimizer: {p}" for p in opt.problems())
    if own and problems:
        raise ConfigError(problems)
    return opt


def users_from_raw(raw, K, seed=None):
    users = raw.get("users", "table")
    if isinstance(users, str):
        if users == "table":
            return table_users(K)
        if seed is None:
            raise ConfigError("system.users = 'random' requires a seed")
        return random_users(K, np.random.Generator(np.random.Philox(seed)))
    arr = np.asarray(users, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or not np.all(np.isfinite(arr)):
        raise ConfigError("system.users: expected a list of finite [x, y] pairs")
    return arr


@dataclass
class Scenario:
    """Fully resolved run inputs."""

    system: SystemConfig
    grid: GridConfig
    optimizer: OptimizerConfig
    motion: MotionSpeeds
    protocol: str
    users: np.ndarray
    raw: dict = field(default_factory=dict)

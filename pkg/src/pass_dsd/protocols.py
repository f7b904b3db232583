"""Search grids, PA power draw and actuation latency of the four dual-scale
deployment protocols.

======  ==========================  ============================
name    coarse stage                fine stage
======  ==========================  ============================
STT     base slides (step delta_C)  PA tuned (step delta_F)
STA     base slides (step delta_C)  one of N*N_F PAs activated
SAT     one of N*N_C bases chosen   PA tuned (step delta_F)
SAA     one of N*N_C bases chosen   one of N*N_F PAs activated
======  ==========================  ============================
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .config import ConfigError, GridConfig, MotionSpeeds, SystemConfig


class Protocol(str, enum.Enum):
    STT = "stt"
    STA = "sta"
    SAT = "sat"
    SAA = "saa"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ConfigError(f"unknown protocol {value!r}; expected one of "
                              + ", ".join(p.value for p in cls)) from None

    @property
    def slides(self):
        """Coarse stage uses a sliding base."""
        return self in (Protocol.STT, Protocol.STA)

    @property
    def tunes(self):
        """Fine stage uses a piezo-tuned PA."""
        return self in (Protocol.STT, Protocol.SAT)


@dataclass(frozen=True)
class GridSets:
    """Coarse absolute coordinates and fine signed offsets for one waveguide."""

    coarse: np.ndarray
    fine: np.ndarray

    def __len__(self):
        return len(self.coarse) * len(self.fine)


# guards floor() against representation error, e.g. 0.2/1e-4 = 1999.9999
_FLOOR_EPS = 1e-9


def _count(span, step):
    return int(math.floor(span / step + _FLOOR_EPS)) + 1


def coarse_grid(protocol, config: SystemConfig, grid: GridConfig):
    protocol = Protocol.parse(protocol)
    span = config.x_max - config.x_min
    if span <= 0:
        raise ConfigError("empty deployment range: x_max must exceed x_min")
    if protocol.slides:
        g = np.arange(_count(span, grid.delta_C))
        pts = config.x_min + g * grid.delta_C
    else:
        n = config.N * grid.N_C
        pts = config.x_min + np.arange(n) * (span / n)
    return pts


def fine_grid(protocol, config: SystemConfig, grid: GridConfig):
    protocol = Protocol.parse(protocol)
    if protocol.tunes:
        g = np.arange(_count(grid.L_F, grid.delta_F))
        return -grid.L_F / 2 + g * grid.delta_F
    n = config.N * grid.N_F
    return -grid.L_F / 2 + np.arange(n) * (grid.L_F / n)


def grid_sets(protocol, config, grid):
    return GridSets(coarse_grid(protocol, config, grid), fine_grid(protocol, config, grid))


def pa_power(protocol, config_or_act, mot=None, pie=None):
    """Per-PA power draw in watts.

    Accepts either a :class:`SystemConfig` (its ``P_act``/``P_mot``/``P_pie``
    are used) or the three component powers directly.
    """
    protocol = Protocol.parse(protocol)
    if isinstance(config_or_act, SystemConfig):
        act, mot, pie = config_or_act.P_act, config_or_act.P_mot, config_or_act.P_pie
    else:
        act = config_or_act
    if min(act, mot, pie) < 0:
        raise ConfigError("PA power components must be >= 0")
    p = act
    if protocol.slides:
        p += mot
    if protocol.tunes:
        p += pie
    return p


def deployment_latency(coarse_travel, fine_travel, speeds=MotionSpeeds()):
    """Seconds needed to slide ``coarse_travel`` meters and tune ``fine_travel``."""
    if coarse_travel < 0 or fine_travel < 0:
        raise ValueError("travel distances must be >= 0")
    return coarse_travel / speeds.v_MO + fine_travel / speeds.v_PI

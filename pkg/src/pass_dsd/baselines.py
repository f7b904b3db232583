"""Conventional benchmarks: a co-located MIMO base station and a cell-free
deployment of several multi-antenna base stations.

Both use half-wavelength uniform linear arrays along the x-axis and the
same Rician path-loss model as the pinching-antenna system, so their links
are expressed as :class:`~pass_dsd.model.LinkModel` and go through the
same SINR and precoding code.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .config import ConfigError, GeometryError, OptimizerConfig, SystemConfig
from .model import LinkModel, draw_nlos, link_sinr, mrt_precoder
from .optimizer import optimize_precoding_only


class Architecture(str, enum.Enum):
    MIMO = "mimo"
    CELLFREE = "cellfree"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "").replace("_", "")
        try:
            return cls(key)
        except ValueError:
            raise ConfigError(f"unknown baseline {value!r}; expected 'mimo' or 'cellfree'") from None


@dataclass(frozen=True)
class BaselineLayout:
    kind: Architecture
    bs_positions: np.ndarray       # (n_bs, 2)
    antennas_per_bs: int

    @classmethod
    def for_config(cls, kind, config: SystemConfig):
        kind = Architecture.parse(kind)
        if kind is Architecture.MIMO:
            return cls(kind, np.array([[0.0, 0.0]]), config.M)
        ys = 100.0 * np.arange(1, config.M + 1) / (config.M + 1)
        return cls(kind, np.column_stack([np.full(config.M, 50.0), ys]), config.N)

    def element_positions(self, wavelength):
        """(n_bs * antennas, 2) coordinates, BS-major."""
        n = self.antennas_per_bs
        offs = (np.arange(n) - (n - 1) / 2) * wavelength / 2
        pts = [np.column_stack([p[0] + offs, np.full(n, p[1])]) for p in self.bs_positions]
        return np.vstack(pts)


@dataclass
class BaselineChannels:
    hbar: np.ndarray      # (K, D) LoS part
    R: np.ndarray         # (K, D) r^-beta
    r: np.ndarray
    h_tilde: np.ndarray | None = None

    def link(self, config: SystemConfig):
        D = self.hbar.shape[1]
        cov = np.zeros((len(self.hbar), D, D))
        cov[:, np.arange(D), np.arange(D)] = config.nlos_scale * self.R
        return LinkModel(mean=self.hbar.copy(), cov=cov, N_0=config.N_0)

    def realizations(self, config: SystemConfig):
        """Full Rician channels for every drawn NLoS sample, (S, K, D)."""
        if self.h_tilde is None:
            raise ValueError("no NLoS samples drawn")
        amp = np.sqrt(config.nlos_scale * self.R)
        return self.hbar[None] + amp[None] * self.h_tilde


def synth_baseline_channels(layout: BaselineLayout, users, config: SystemConfig, rng=None,
                            n_draws=0):
    pts = layout.element_positions(config.wavelength)
    users = np.asarray(users, dtype=float)
    r = np.hypot(users[:, :1] - pts[None, :, 0], users[:, 1:] - pts[None, :, 1])
    if np.any(r <= 0):
        raise GeometryError("a user coincides with a base-station antenna")
    R = r ** (-config.beta_u)
    hbar = np.sqrt(config.C_0 * R) * config.los_scale * np.exp(-1j * config.k0 * r)
    h_tilde = draw_nlos(rng, (n_draws,) + r.shape) if rng is not None and n_draws else None
    return BaselineChannels(hbar=hbar, R=R, r=r, h_tilde=h_tilde)


def baseline_ee(W, link: LinkModel, config: SystemConfig):
    """Closed-form EE with power = amplifier + static (no PA overhead)."""
    gamma = link_sinr(link, W)
    p = float(np.sum(np.abs(W) ** 2)) / config.nu + config.P_bs_sta
    return config.B * float(np.log2(1 + gamma).sum()) / p


def evaluate_baseline_ee(layout: BaselineLayout, users, config: SystemConfig,
                         opt: OptimizerConfig = OptimizerConfig(), seed=None, optimize=True):
    """Energy efficiency of a benchmark architecture.

    With ``optimize`` the precoder comes from the same Dinkelbach/MMSE loop
    as the PASS design; otherwise MRT at full power is used.
    """
    ch = synth_baseline_channels(layout, users, config)
    link = ch.link(config)
    if not optimize:
        return baseline_ee(mrt_precoder(link, config.P_max), link, config)
    W, ee, _ = optimize_precoding_only(link, config, config.P_bs_sta, opt)
    return ee

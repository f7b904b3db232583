"""Signal model of a pinching-antenna system and its closed-form performance.

Index convention: PA ``n`` on waveguide ``m`` sits at flat index
``m * N + n`` (waveguide-major). Positions are stored as an ``(N, M)``
array ``X`` so ``X.T.ravel()`` yields the flat order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import GeometryError, SystemConfig
from .protocols import pa_power


# ---------------------------------------------------------------------------
# single-waveguide cascade
# ---------------------------------------------------------------------------

def _check_delta(delta):
    delta = np.asarray(delta, dtype=float)
    if np.any(delta < 0) or np.any(delta > 1) or not np.all(np.isfinite(delta)):
        raise ValueError("radiation split coefficients must lie in [0, 1]")
    return delta


def cascade_propagate(delta, lengths, s0, config: SystemConfig):
    """Propagate a feed signal along one waveguide through N PAs.

    Returns an ``(N, 3)`` complex array with columns (radiated, through,
    incident) at each PA.
    """
    delta = _check_delta(delta)
    lengths = np.asarray(lengths, dtype=float)
    if lengths.shape != delta.shape:
        raise ValueError("delta and lengths must have the same length")
    if np.any(lengths < 0):
        raise ValueError("segment lengths must be >= 0")
    gamma = config.alpha_g + 1j * config.kg
    out = np.empty((len(delta), 3), dtype=complex)
    through = complex(s0)
    for n, (d, L) in enumerate(zip(delta, lengths)):
        incident = np.exp(-gamma * L) * through
        radiated = np.sqrt(d) * incident
        through = np.sqrt(1.0 - d) * incident
        out[n] = radiated, through, incident
    return out


def effective_radiation_coeffs(delta):
    """Fraction of the fed power radiated by each PA of a cascade."""
    delta = _check_delta(delta)
    survive = np.concatenate(([1.0], np.cumprod(1.0 - delta)[:-1]))
    return delta * survive


def desired_signal_power(x, user, xi, config: SystemConfig, y_wave=0.0):
    """Received power at ``user`` from one waveguide with PAs at ``x``.

    Free-space LoS link (amplitude ``sqrt(C_0)/r``) fed from ``x = 0``; the
    in-waveguide distance of PA ``n`` is ``x[n]``.
    """
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    r = np.hypot(user[0] - x, user[1] - y_wave)
    if np.any(r == 0):
        raise GeometryError("user coincides with a PA")
    terms = (np.sqrt(config.C_0 * xi) / r
             * np.exp(-config.alpha_g * x - 1j * (config.k0 * r + config.kg * x)))
    return float(abs(terms.sum()) ** 2)


# ---------------------------------------------------------------------------
# multi-waveguide channels
# ---------------------------------------------------------------------------

@dataclass
class ChannelState:
    """Channels for a fixed PA placement.

    ``g`` holds the MN non-zero entries of the block-diagonal in-waveguide
    channel; ``hbar`` the deterministic LoS part per user (K, MN); ``R``
    the path-loss diagonals r^-beta (K, MN).
    """

    g: np.ndarray
    hbar: np.ndarray
    R: np.ndarray
    r: np.ndarray
    M: int
    N: int
    h_tilde: np.ndarray | None = None

    @property
    def G(self):
        """Dense (MN, M) block-diagonal in-waveguide channel matrix."""
        G = np.zeros((self.M * self.N, self.M), dtype=complex)
        idx = np.arange(self.M * self.N)
        G[idx, idx // self.N] = self.g
        return G


def distances(X, users, config: SystemConfig):
    """PA-user distances, shape (K, MN)."""
    X = np.asarray(X, dtype=float)
    xf = X.T.ravel()
    yf = np.repeat(np.asarray(config.Y_bar, dtype=float), X.shape[0])
    users = np.asarray(users, dtype=float)
    return np.hypot(users[:, :1] - xf[None, :], users[:, 1:] - yf[None, :])


def synth_channels(X, users, config: SystemConfig, rng=None, n_draws=0):
    """Build the channel state for placement ``X`` (N, M).

    With ``rng`` and ``n_draws > 0`` also draws ``h_tilde`` of shape
    (n_draws, K, MN), i.i.d. CN(0, 1) per entry.
    """
    X = np.asarray(X, dtype=float)
    N, M = X.shape
    r = distances(X, users, config)
    if np.any(r <= 0):
        raise GeometryError("a user coincides with a PA position")
    xf = X.T.ravel()
    g = np.exp(-(config.alpha_g + 1j * config.kg) * xf)
    R = r ** (-config.beta_u)
    hbar = np.sqrt(config.C_0 * R) * config.los_scale * np.exp(-1j * config.k0 * r)
    h_tilde = None
    if rng is not None and n_draws:
        h_tilde = draw_nlos(rng, (n_draws,) + r.shape)
    return ChannelState(g=g, hbar=hbar, R=R, r=r, M=M, N=N, h_tilde=h_tilde)


def draw_nlos(rng, shape):
    """Circularly-symmetric unit-variance complex Gaussian samples."""
    z = rng.standard_normal(shape + (2,) if isinstance(shape, tuple) else (shape, 2))
    return (z[..., 0] + 1j * z[..., 1]) / np.sqrt(2.0)


# ---------------------------------------------------------------------------
# generic linear-precoded downlink: mean channel + NLoS covariance per user
# ---------------------------------------------------------------------------

@dataclass
class LinkModel:
    """Effective per-user channel seen by the precoder.

    ``mean[k]`` is the deterministic effective channel (the received sample
    for precoder ``w`` is ``mean[k] @ w``) and ``cov[k]`` is
    E[e e^H] of the random part ``e`` so that E|e^T w|^2 = w^T cov w^*.
    """

    mean: np.ndarray
    cov: np.ndarray
    N_0: float


def pass_link(ch: ChannelState, s, config: SystemConfig):
    """Effective link of a PASS with radiation amplitudes ``s`` (MN,)."""
    s = np.asarray(s, dtype=float)
    M, N = ch.M, ch.N
    hs = ch.hbar * (s * ch.g)[None, :]
    mean = hs.reshape(-1, M, N).sum(axis=2)
    # G^T Xi R_k Xi G^* is diagonal because G is block diagonal
    d = config.nlos_scale * (ch.R * (s * s * np.abs(ch.g) ** 2)[None, :])
    d = d.reshape(-1, M, N).sum(axis=2)
    cov = np.zeros((len(d), M, M))
    cov[:, np.arange(M), np.arange(M)] = d
    return LinkModel(mean=mean, cov=cov, N_0=config.N_0)


def link_terms(link: LinkModel, W):
    """Return (S, Q): S[k, i] = |mean_k^T w_i|^2, Q[k, i] = w_i^T cov_k w_i^*."""
    W = np.asarray(W, dtype=complex)
    S = np.abs(link.mean @ W) ** 2
    Q = np.einsum("di,kde,ei->ki", W, link.cov, W.conj()).real
    return S, Q


def link_sinr(link: LinkModel, W):
    S, Q = link_terms(link, W)
    desired = np.diag(S).copy()
    denom = Q.sum(axis=1) + S.sum(axis=1) - desired + link.N_0
    return desired / denom


def sinr_closed_form(W, s, ch: ChannelState, config: SystemConfig):
    """Effective SINR of every user under statistical CSI at the users."""
    return link_sinr(pass_link(ch, s, config), W)


def rates_from_sinr(gamma):
    gamma = np.asarray(gamma, dtype=float)
    R = np.log2(1.0 + gamma)
    return R, float(R.sum())


def sum_rate(W, s, ch, config):
    """Per-user rates (bits/s/Hz) and their sum."""
    return rates_from_sinr(sinr_closed_form(W, s, ch, config))


def total_power(W, config: SystemConfig, pa_power_per_element, n_pas=None):
    """Total consumed power: amplifier + static + per-PA overhead."""
    W = np.asarray(W)
    if n_pas is None:
        n_pas = config.M * config.N
    tx = float(np.sum(np.abs(W) ** 2))
    return tx / config.nu + config.P_bs_sta + n_pas * pa_power_per_element


def energy_efficiency(W, s, ch, config: SystemConfig, protocol):
    """Bits per joule of a PASS operated under ``protocol``."""
    _, total = sum_rate(W, s, ch, config)
    return config.B * total / total_power(W, config, pa_power(protocol, config))


def mrt_precoder(link: LinkModel, P_max):
    """Maximum-ratio transmission with equal power per user."""
    H = link.mean
    K = H.shape[0]
    norms = np.linalg.norm(H, axis=1)
    norms[norms == 0] = 1.0
    return (H.conj() / norms[:, None]).T * np.sqrt(P_max / K)


# ---------------------------------------------------------------------------
# placements and amplitudes
# ---------------------------------------------------------------------------

def equal_interval_positions(config: SystemConfig):
    """x_mn = x_min + (x_max - x_min) * n / (N + 1), n = 1..N."""
    n = np.arange(1, config.N + 1)
    col = config.x_min + (config.x_max - config.x_min) * n / (config.N + 1)
    return np.tile(col[:, None], (1, config.M))


def uniform_amplitudes(config: SystemConfig):
    return np.full(config.M * config.N, 1.0 / np.sqrt(config.N))


def check_amplitudes(s, M, N, tol=1e-10):
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise ValueError("radiation amplitudes must be >= 0")
    norms = np.sum(s.reshape(M, N) ** 2, axis=1)
    if np.any(np.abs(norms - 1) > tol):
        raise ValueError("per-waveguide radiation amplitudes must have unit norm")
    return s


def check_placement(X, config: SystemConfig, tol=1e-9):
    X = np.asarray(X, dtype=float)
    problems = []
    if np.any(X < config.x_min - tol) or np.any(X > config.x_max + tol):
        problems.append("PA outside [x_min, x_max]")
    for m in range(X.shape[1]):
        xs = np.sort(X[:, m])
        if len(xs) > 1 and np.min(np.diff(xs)) < config.delta_x - tol:
            problems.append(f"PAs on waveguide {m} closer than delta_x")
    if problems:
        raise ValueError("; ".join(problems))
    return X


def uniform_state(config: SystemConfig, users, protocol):
    """MRT precoding, equal radiation, equal-interval positions.

    Returns (W, s, X, ch, ee); the reference against which optimized designs
    are compared.
    """
    X = equal_interval_positions(config)
    s = uniform_amplitudes(config)
    ch = synth_channels(X, users, config)
    W = mrt_precoder(pass_link(ch, s, config), config.P_max)
    return W, s, X, ch, energy_efficiency(W, s, ch, config, protocol)


# ---------------------------------------------------------------------------
# Monte-Carlo counterpart of the closed-form expectations
# ---------------------------------------------------------------------------

def monte_carlo_ee(W, s, X, users, config, protocol, rng, n_draws=10_000,
                   n_batches=50):
    """Energy efficiency with the SINR expectations replaced by sample means.

    Returns (ee, stderr) where stderr comes from batch means.
    """
    ch = synth_channels(X, users, config)
    s = np.asarray(s, dtype=float)
    W = np.asarray(W, dtype=complex)
    K = ch.hbar.shape[0]
    sg = s * ch.g
    # received-signal coefficient of stream i at user k: sum_j h_kj s_j g_j w_{m(j) i}
    Wbar = np.repeat(W, ch.N, axis=0) * sg[:, None]
    los = ch.hbar @ Wbar
    amp = np.sqrt(config.nlos_scale * ch.R)
    p_tot = total_power(W, config, pa_power(protocol, config))

    def ee_of(samples):
        e = los[None] + np.einsum("bkj,ji->bki", amp[None] * samples, Wbar)
        ds = e.mean(axis=0)
        cu = np.mean(np.abs(e - ds[None]) ** 2, axis=0)
        desired = np.abs(np.diag(ds)) ** 2
        var_self = np.diag(cu)
        inter = np.mean(np.abs(e) ** 2, axis=0)
        inter = inter.sum(axis=1) - np.diag(inter)
        gamma = desired / (var_self + inter + config.N_0)
        return config.B * np.log2(1 + gamma).sum() / p_tot

    per = n_draws // n_batches
    batch_vals = []
    all_samples = []
    for _ in range(n_batches):
        smp = draw_nlos(rng, (per, K, ch.M * ch.N))
        all_samples.append(smp)
        batch_vals.append(ee_of(smp))
    ee = ee_of(np.concatenate(all_samples))
    stderr = float(np.std(batch_vals, ddof=1) / np.sqrt(n_batches))
    return float(ee), stderr

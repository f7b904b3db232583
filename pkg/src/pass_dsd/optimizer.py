"""Energy-efficiency maximization by penalty-based alternating optimization.

The ratio objective is handled by a Dinkelbach parameter ``q`` and the
rates by the MMSE reformulation (auxiliary receive gains ``t`` and weights
``kappa``). Each inner iteration then updates

1. the precoder ``W`` in closed form, with the power multiplier found by
   bisection,
2. the radiation amplitudes ``s`` by block-coordinate Riemannian descent on
   a product of unit spheres (one sphere per waveguide),
3. the PA positions through amplitude/phase surrogates ``b``/``c`` coupled
   by a quadratic penalty to their grid-feasible counterparts ``u``/``z``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .config import ConfigError, GridConfig, OptimizerConfig, SystemConfig
from .model import (
    LinkModel,
    energy_efficiency,
    equal_interval_positions,
    link_terms,
    mrt_precoder,
    pass_link,
    sum_rate,
    synth_channels,
    total_power,
    uniform_amplitudes,
)
from .protocols import GridSets, Protocol, grid_sets, pa_power

log = logging.getLogger(__name__)

LN2 = math.log(2.0)


class SingularSystemError(np.linalg.LinAlgError):
    """The regularized precoding system could not be solved."""


def rel_change(new, old):
    return abs(new - old) / max(abs(old), 1e-30)


# ---------------------------------------------------------------------------
# auxiliary variables
# ---------------------------------------------------------------------------

@dataclass
class AuxState:
    t: np.ndarray
    kappa: np.ndarray
    q: float
    epsilon: np.ndarray
    rates: np.ndarray


def aux_from_link(link: LinkModel, W, bandwidth, p_all):
    """MMSE receive gains, weights and Dinkelbach ratio for fixed ``W``."""
    S, Q = link_terms(link, W)
    x = np.einsum("kd,dk->k", link.mean, W)
    D = S.sum(axis=1) + Q.sum(axis=1) + link.N_0
    t = x / D
    eps = np.abs(t) ** 2 * D - 2 * np.real(t.conj() * x) + 1.0
    desired = np.abs(x) ** 2
    gamma = desired / (D - desired)
    rates = np.log2(1.0 + gamma)
    q = bandwidth * rates.sum() / p_all
    return AuxState(t=t, kappa=1.0 / eps, q=float(q), epsilon=eps, rates=rates)


def update_aux(W, s, ch, config: SystemConfig, protocol):
    link = pass_link(ch, s, config)
    p_all = total_power(W, config, pa_power(protocol, config))
    return aux_from_link(link, W, config.B, p_all)


# ---------------------------------------------------------------------------
# precoding
# ---------------------------------------------------------------------------

def rate_weight(config: SystemConfig):
    """Weight of the MSE terms that makes the Dinkelbach step consistent with
    log2 rates: B * sum(kappa*eps - ln kappa) / ln 2 matches B * sum(R_k)."""
    return config.B / LN2


def precoding_quadratic(aux: AuxState, link: LinkModel):
    """Hermitian matrix H and right-hand sides Z of the per-user systems
    ``(H + mu I) w_k = Z[:, k]``, scaled by 1/rate_weight."""
    wk = aux.kappa * np.abs(aux.t) ** 2
    a = link.mean
    H = np.einsum("k,kd,ke->de", wk, a.conj(), a) + np.einsum("k,kde->de", wk, link.cov.conj())
    H = 0.5 * (H + H.conj().T)
    Z = (aux.kappa * aux.t)[None, :] * a.conj().T
    return H, Z


def precoding_objective(W, aux: AuxState, link: LinkModel, config: SystemConfig, rho=0.0):
    """rate_weight * sum_k kappa_k eps_k(W) + (q/nu + rho) ||W||^2, with the
    ``t`` held fixed at ``aux.t``."""
    S, Q = link_terms(link, W)
    x = np.einsum("kd,dk->k", link.mean, W)
    D = S.sum(axis=1) + Q.sum(axis=1) + link.N_0
    t = aux.t
    eps = np.abs(t) ** 2 * D - 2 * np.real(t.conj() * x) + 1.0
    power = float(np.sum(np.abs(W) ** 2))
    return rate_weight(config) * float(aux.kappa @ eps) + (aux.q / config.nu + rho) * power


@dataclass
class PrecodingResult:
    W: np.ndarray
    rho: float
    power: float


def solve_precoding(aux: AuxState, link: LinkModel, config: SystemConfig, tol=1e-8,
                    max_doublings=2000):
    """Minimize the weighted-MSE precoding objective under the power budget.

    ``rho`` is the smallest nonnegative multiplier giving a feasible
    precoder, located by bracket doubling then bisection.
    """
    beta = rate_weight(config)
    H, Z = precoding_quadratic(aux, link)
    if not (np.all(np.isfinite(H)) and np.all(np.isfinite(Z))):
        raise SingularSystemError("non-finite precoding system")
    lam, V = np.linalg.eigh(H)
    Y = V.conj().T @ Z
    energy = np.sum(np.abs(Y) ** 2, axis=1)
    mu0 = aux.q / config.nu / beta
    scale = max(float(np.max(np.abs(lam))), 1e-300)
    P = config.P_max

    def power(rho_n):
        den = lam + mu0 + rho_n
        live = energy > 0
        if np.any(den[live] <= 1e-14 * scale):
            return math.inf
        return float(np.sum(energy[live] / den[live] ** 2))

    def build(rho_n):
        den = lam + mu0 + rho_n
        inv = np.where(energy > 0, 1.0 / np.where(den > 0, den, 1.0), 0.0)
        return V @ (inv[:, None] * Y)

    if power(0.0) <= P:
        W = build(0.0)
        return PrecodingResult(W=W, rho=0.0, power=float(np.sum(np.abs(W) ** 2)))
    lo, hi = 0.0, 1.0
    for _ in range(max_doublings):
        if power(hi) <= P:
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise SingularSystemError("could not bracket the power multiplier")
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if not lo < mid < hi:
            break
        if power(mid) <= P:
            hi = mid
        else:
            lo = mid
    W = build(hi)
    return PrecodingResult(W=W, rho=hi * beta, power=float(np.sum(np.abs(W) ** 2)))


# ---------------------------------------------------------------------------
# radiation amplitudes (product of spheres)
# ---------------------------------------------------------------------------

@dataclass
class RadiationProblem:
    """f2(s) = s^T A s - 2 ell^T s, with A real symmetric."""

    A: np.ndarray
    ell: np.ndarray

    def value(self, s):
        return float(s @ self.A @ s - 2.0 * self.ell @ s)

    def grad(self, s):
        return euclidean_grad_f2(s, self)


def expand_precoder(W, N):
    """Per-PA feed weights: row m*N+n equals row m of W."""
    return np.repeat(np.asarray(W, dtype=complex), N, axis=0)


def radiation_problem(aux: AuxState, W, ch, config: SystemConfig):
    """Quadratic model of sum_k kappa_k eps_k as a function of ``s``."""
    Wbar = expand_precoder(W, ch.N)                         # (MN, K)
    gW = ch.g[:, None] * Wbar                               # diag(G w_i) entries
    wk = aux.kappa * np.abs(aux.t) ** 2                     # (K,)
    # p[k, i, j] = hbar_kj * (G w_i)_j
    p = ch.hbar[:, None, :] * gW.T[None, :, :]
    A = np.einsum("k,kij,kil->jl", wk, p, p.conj()).real
    nl = config.nlos_scale * np.einsum("k,kj,ij->j", wk, ch.R, np.abs(gW.T) ** 2)
    A = 0.5 * (A + A.T) + np.diag(nl)
    K = ch.hbar.shape[0]
    diag_p = p[np.arange(K), np.arange(K), :]               # (K, MN)
    ell = np.real((aux.kappa * aux.t.conj())[:, None] * diag_p).sum(axis=0)
    return RadiationProblem(A=A, ell=ell)


def euclidean_grad_f2(s, problem: RadiationProblem):
    s = np.asarray(s, dtype=float)
    return (problem.A + problem.A.T) @ s - 2.0 * problem.ell


def riemannian_grad(s_m, g_m):
    """Project ``g_m`` onto the tangent space of the unit sphere at ``s_m``."""
    s_m = np.asarray(s_m, dtype=float)
    g_m = np.asarray(g_m, dtype=float)
    return g_m - (s_m @ g_m) * s_m


def retract(v):
    """Fold to the nonnegative orthant and normalize."""
    v = np.abs(v)
    return v / np.linalg.norm(v)


def face_direction(s, rg, tol=1e-9):
    """Drop components that would push a zero coordinate out of the orthant.

    Without this the fold retraction stalls next to the boundary: the
    outward component dominates the step and every trial bounces back.
    """
    d = np.array(rg, dtype=float)
    blocked = (s <= tol) & (d > 0)
    if not blocked.any():
        return d
    d[blocked] = 0.0
    return d - (d @ s) * s


@dataclass
class RadiationResult:
    s: np.ndarray
    f_trace: list
    iterations: int
    skipped_blocks: int


def optimize_radiation(s_init, problem: RadiationProblem, M, N, opt: OptimizerConfig):
    """Block-coordinate Riemannian descent with Armijo backtracking."""
    s = np.array(s_init, dtype=float)
    blocks = [slice(m * N, (m + 1) * N) for m in range(M)]
    f = problem.value(s)
    trace = [f]
    skipped = 0
    it = 0
    for it in range(1, opt.max_xi_iter + 1):
        f_start = f
        for blk in blocks:
            g = problem.grad(s)
            rg = face_direction(s[blk], riemannian_grad(s[blk], g[blk]))
            slope = float(rg @ rg)
            if slope <= 1e-30 * max(1.0, float(g[blk] @ g[blk])):
                continue
            step = opt.step0
            for _ in range(opt.max_halvings):
                cand = s.copy()
                cand[blk] = retract(s[blk] - step * rg)
                f_c = problem.value(cand)
                if f_c <= f - opt.armijo_sigma * step * slope:
                    s, f = cand, f_c
                    trace.append(f)
                    break
                step *= opt.armijo_beta
            else:
                skipped += 1
        if rel_change(f, f_start) < opt.eps_xi:
            break
    return RadiationResult(s=s, f_trace=trace, iterations=it, skipped_blocks=skipped)


# ---------------------------------------------------------------------------
# positions: amplitude / phase surrogates
# ---------------------------------------------------------------------------

def amplitude_table(xs, users, y, config: SystemConfig):
    """exp(-alpha_g x) * r^(-beta_u/2) for candidate ``xs`` (any shape) against
    every user; returns shape xs.shape + (K,)."""
    xs = np.asarray(xs, dtype=float)[..., None]
    r2 = (users[:, 0] - xs) ** 2 + (users[:, 1] - y) ** 2
    return np.exp(-config.alpha_g * xs) * r2 ** (-config.beta_u / 4)


def phase_table(xs, users, y, config: SystemConfig):
    """exp(-j (kg x + k0 r)) for candidate ``xs``; shape xs.shape + (K,)."""
    xs = np.asarray(xs, dtype=float)[..., None]
    r = np.hypot(users[:, 0] - xs, users[:, 1] - y)
    return np.exp(-1j * (config.kg * xs + config.k0 * r))


def _flat_table(X, users, config, fn):
    """Evaluate ``fn`` at placement X (N, M); returns (K, MN)."""
    N, M = X.shape
    out = np.empty((len(users), M * N), dtype=complex if fn is phase_table else float)
    for m in range(M):
        out[:, m * N:(m + 1) * N] = fn(X[:, m], users, config.Y_bar[m], config).T
    return out


@dataclass
class PositionAux:
    b: np.ndarray          # (K, MN) real
    u: np.ndarray          # (K, MN) real
    c: np.ndarray          # (K, MN) complex
    z: np.ndarray          # (K, MN) complex, unit modulus
    varrho: float
    growth: float
    x_coarse: np.ndarray   # (N, M)
    dx_fine: np.ndarray    # (N, M)

    def positions(self, config: SystemConfig):
        return np.clip(self.x_coarse + self.dx_fine, config.x_min, config.x_max)


@dataclass
class PositionModel:
    """Coefficients of f4 for fixed (W, s, t, kappa)."""

    s: np.ndarray          # (MN,)
    Wbar: np.ndarray       # (MN, K)
    wk: np.ndarray         # kappa_k |t_k|^2
    lin: np.ndarray        # kappa_k t_k^*
    a: float               # LoS amplitude factor sqrt(C_0 K_r/(K_r+1))
    c: float               # NLoS factor C_0/(K_r+1)


def position_model(aux: AuxState, W, s, N, config: SystemConfig):
    return PositionModel(
        s=np.asarray(s, dtype=float),
        Wbar=expand_precoder(W, N),
        wk=aux.kappa * np.abs(aux.t) ** 2,
        lin=aux.kappa * aux.t.conj(),
        a=math.sqrt(config.C_0) * config.los_scale,
        c=config.nlos_scale,
    )


def f4_value(pm: PositionModel, b, c):
    """sum_k kappa_k eps_k - const, with amplitude b and phase c (K, MN)."""
    sw = pm.s[:, None] * pm.Wbar                            # (MN, K): s_j wbar_ij
    los = (b * c) @ sw                                       # [k, i] = sum_j b c s w
    quad = pm.a ** 2 * np.abs(los) ** 2
    nlos = pm.c * (b ** 2) @ (np.abs(sw) ** 2)
    total = pm.wk @ (quad + nlos).sum(axis=1)
    K = b.shape[0]
    lin = np.real(pm.lin * pm.a * los[np.arange(K), np.arange(K)]).sum()
    return float(total - 2.0 * lin)


def surrogate_value(pm: PositionModel, pos: PositionAux):
    pen = np.sum((pos.u - pos.b) ** 2) + np.sum(np.abs(pos.z - pos.c) ** 2)
    return f4_value(pm, pos.b, pos.c) + pos.varrho * float(pen)


def solve_b(pm: PositionModel, c, u, varrho):
    K, MN = u.shape
    sw = pm.s[:, None] * pm.Wbar
    b = np.empty_like(u)
    nlos_diag = pm.c * (np.abs(sw) ** 2).sum(axis=1)         # sum_i s_j^2 |w_ij|^2
    for k in range(K):
        q = sw * c[k][:, None]                              # (MN, K): q_ik as columns
        A = pm.wk[k] * (pm.a ** 2 * np.real(q @ q.conj().T) + np.diag(nlos_diag))
        zeta = np.real(pm.lin[k] * pm.a * q[:, k])
        b[k] = np.linalg.solve(A + varrho * np.eye(MN), zeta + varrho * u[k])
    return b


def solve_c(pm: PositionModel, b, z, varrho):
    K, MN = z.shape
    sw = pm.s[:, None] * pm.Wbar
    c = np.empty_like(z)
    for k in range(K):
        p = sw * b[k][:, None]                              # (MN, K)
        H = pm.wk[k] * pm.a ** 2 * (p.conj() @ p.T)
        zeta = pm.lin[k] * pm.a * p[:, k]
        c[k] = np.linalg.solve(H + varrho * np.eye(MN), zeta.conj() + varrho * z[k])
    return c


def assign_coarse(cost, grid, exclusion):
    """Sequentially give each PA its cheapest grid point, skipping points
    within ``exclusion`` of those already taken. ``cost`` is (N, G).

    Returns grid indices; ties go to the smaller coordinate.
    """
    N, G = cost.shape
    if G < N:
        raise ConfigError(f"coarse grid has {G} points for {N} PAs")
    taken = np.zeros(G, dtype=bool)
    chosen = np.empty(N, dtype=int)
    for n in range(N):
        masked = np.where(taken, np.inf, cost[n])
        if not np.isfinite(masked).any():
            raise ConfigError("coarse grid too sparse for the PA spacing constraint")
        g = int(np.argmin(masked))
        chosen[n] = g
        taken |= np.abs(grid - grid[g]) < exclusion - 1e-12
    return chosen


def select_coarse(b, incumbent, grids: GridSets, users, config: SystemConfig, exclusion):
    """Coarse-grid search: per waveguide, assign grid points minimizing
    sum_k |b_mnk - u_mnk(x)|^2 (distinct points, sequential in n).

    ``b`` is (K, MN) and ``incumbent`` the current (N, M) coarse points; a
    waveguide keeps its incumbent points when they are at least as good.
    """
    N, M = incumbent.shape
    out = incumbent.copy()
    for m in range(M):
        table = amplitude_table(grids.coarse, users, config.Y_bar[m], config)   # (G, K)
        bm = b[:, m * N:(m + 1) * N]                                         # (K, N)
        cost = np.sum((bm.T[:, None, :] - table[None]) ** 2, axis=2)        # (N, G)
        idx = assign_coarse(cost, grids.coarse, exclusion)
        cand = grids.coarse[idx]
        inc_idx = np.searchsorted(grids.coarse, incumbent[:, m])
        inc_idx = np.minimum(inc_idx, len(grids.coarse) - 1)
        on_grid = np.allclose(grids.coarse[inc_idx], incumbent[:, m])
        if on_grid and cost[np.arange(N), inc_idx].sum() <= cost[np.arange(N), idx].sum():
            cand = incumbent[:, m]
        out[:, m] = cand
    return out


def select_fine(c, x_coarse, grids: GridSets, users, config: SystemConfig):
    """Fine-grid search: per PA, the offset minimizing
    sum_k |c_mnk - z_mnk(x^C + dx)|^2 over the fine grid."""
    N, M = x_coarse.shape
    dx = np.empty_like(x_coarse)
    for m in range(M):
        cm = c[:, m * N:(m + 1) * N]                                         # (K, N)
        comp = np.clip(x_coarse[:, m][:, None] + grids.fine[None, :],
                       config.x_min, config.x_max)                           # (N, F)
        ph = phase_table(comp, users, config.Y_bar[m], config)               # (N, F, K)
        cost = np.sum(np.abs(cm.T[:, None, :] - ph) ** 2, axis=2)
        dx[:, m] = grids.fine[np.argmin(cost, axis=1)]
    return dx


def update_amplitude_block(pm: PositionModel, pos: PositionAux, grids: GridSets, users,
                           config: SystemConfig, exclusion=None):
    """b-update in closed form, then the coarse search that defines u."""
    if exclusion is None:
        exclusion = coarse_exclusion(config, grids)
    b = solve_b(pm, pos.c, pos.u, pos.varrho)
    x_coarse = select_coarse(b, pos.x_coarse, grids, users, config, exclusion)
    pos.b, pos.x_coarse = b, x_coarse
    pos.u = _flat_table(x_coarse, users, config, amplitude_table)
    return pos


def update_phase_block(pm: PositionModel, pos: PositionAux, grids: GridSets, users,
                       config: SystemConfig):
    """c-update in closed form, then the fine search that defines z."""
    pos.c = solve_c(pm, pos.b, pos.z, pos.varrho)
    pos.dx_fine = select_fine(pos.c, pos.x_coarse, grids, users, config)
    pos.z = _flat_table(pos.positions(config), users, config, phase_table)
    return pos


def coarse_exclusion(config: SystemConfig, grids: GridSets):
    """Minimum separation of coarse points that keeps composite positions at
    least delta_x apart for any pair of fine offsets."""
    spread = float(grids.fine.max() - grids.fine.min()) if len(grids.fine) else 0.0
    return config.delta_x + spread


def init_position_aux(X0, grids: GridSets, users, config: SystemConfig, varrho, growth,
                      exclusion=None):
    """Snap a placement onto the grids and build consistent (b, u, c, z)."""
    N, M = X0.shape
    if exclusion is None:
        exclusion = coarse_exclusion(config, grids)
    x_coarse = np.empty_like(X0)
    for m in range(M):
        cost = np.abs(X0[:, m][:, None] - grids.coarse[None, :])
        x_coarse[:, m] = grids.coarse[assign_coarse(cost, grids.coarse, exclusion)]
    off = X0 - x_coarse
    dx = grids.fine[np.argmin(np.abs(off[..., None] - grids.fine), axis=-1)]
    pos = PositionAux(b=None, u=None, c=None, z=None, varrho=varrho, growth=growth,
                      x_coarse=x_coarse, dx_fine=dx)
    pos.u = _flat_table(x_coarse, users, config, amplitude_table)
    pos.z = _flat_table(pos.positions(config), users, config, phase_table)
    pos.b = pos.u.copy()
    pos.c = pos.z.copy()
    return pos


def position_sweep(pm: PositionModel, pos: PositionAux, grids: GridSets, users,
                   config: SystemConfig, exclusion=None):
    """One pass of the four block updates b -> u -> c -> z."""
    update_amplitude_block(pm, pos, grids, users, config, exclusion)
    update_phase_block(pm, pos, grids, users, config)
    return pos


def optimize_positions(pm: PositionModel, pos: PositionAux, grids: GridSets, users,
                       config: SystemConfig, sweeps=1):
    """Run ``sweeps`` rounds of the four-block update; returns the placement."""
    for _ in range(sweeps):
        position_sweep(pm, pos, grids, users, config)
    return pos.positions(config)


# ---------------------------------------------------------------------------
# single-link two-stage placement
# ---------------------------------------------------------------------------

@dataclass
class SingleLinkResult:
    x_coarse: float
    dx_fine: float
    power: float
    evaluations: int
    target_amplitude: float
    target_phase: float


def single_link_amplitude(x, user, y, config: SystemConfig):
    r2 = (user[0] - x) ** 2 + (user[1] - y) ** 2
    return np.exp(-config.alpha_g * x) * r2 ** (-config.beta_u / 4)


def single_link_phase(x, user, y, config: SystemConfig):
    r = np.hypot(user[0] - x, user[1] - y)
    return config.kg * x + config.k0 * r


def single_link_power(x, user, y, config: SystemConfig, xi=1.0):
    """Received LoS power from one PA at ``x`` radiating fraction ``xi``."""
    return config.C_0 * xi * single_link_amplitude(x, user, y, config) ** 2


def single_link_dsd(user, y, grids: GridSets, config: SystemConfig, target_phase=None):
    """Two sequential one-dimensional searches for one PA and one user.

    Targets come from the continuous single-link problem: the amplitude and
    phase at the unconstrained best position x*. A lone PA only has to
    match some reference phase, so ``target_phase`` may override it.
    """
    res = minimize_scalar(lambda x: -single_link_amplitude(x, user, y, config),
                          bounds=(config.x_min, config.x_max), method="bounded",
                          options={"xatol": 1e-10})
    ends = np.array([config.x_min, config.x_max])
    cands = np.append(ends, res.x)
    x_star = float(cands[int(np.argmax(single_link_amplitude(cands, user, y, config)))])
    a_opt = float(single_link_amplitude(x_star, user, y, config))
    if target_phase is None:
        target_phase = float(single_link_phase(x_star, user, y, config))
    evals = 0
    amp = single_link_amplitude(grids.coarse, user, y, config)
    evals += len(grids.coarse)
    x_c = float(grids.coarse[int(np.argmin((a_opt - amp) ** 2))])
    comp = np.clip(x_c + grids.fine, config.x_min, config.x_max)
    theta = single_link_phase(comp, user, y, config)
    evals += len(grids.fine)
    err = np.abs(np.exp(-1j * target_phase) - np.exp(-1j * theta)) ** 2
    g = int(np.argmin(err))
    x = float(comp[g])
    return SingleLinkResult(x_coarse=x_c, dx_fine=float(grids.fine[g]),
                            power=float(single_link_power(x, user, y, config)),
                            evaluations=evals, target_amplitude=float(a_opt),
                            target_phase=float(target_phase))


def joint_search_single_link(user, y, grids: GridSets, config: SystemConfig):
    """Exhaustive search over every coarse+fine composite (|C|*|F| evaluations)."""
    comp = np.clip(grids.coarse[:, None] + grids.fine[None, :], config.x_min, config.x_max)
    p = single_link_power(comp, user, y, config)
    i = np.unravel_index(int(np.argmax(p)), p.shape)
    return float(comp[i]), float(p[i]), p.size


# ---------------------------------------------------------------------------
# full alternating optimization
# ---------------------------------------------------------------------------

@dataclass
class SolutionState:
    W: np.ndarray
    s: np.ndarray
    X: np.ndarray
    rho: float
    aux: AuxState | None
    pos: PositionAux | None
    ee: float
    ee_initial: float
    trace: list = field(default_factory=list)
    converged: bool = False


TRACE_FIELDS = ("outer", "inner", "stage", "f2", "ee", "rho", "varrho", "tx_power")


def _check_grid_spacing(config, grids, protocol):
    if protocol.slides and len(grids.coarse) > 1:
        step = float(np.min(np.diff(grids.coarse)))
        if step < config.delta_x:
            raise ConfigError(f"coarse step {step} m is below the PA spacing {config.delta_x} m")


def run_algorithm2(config: SystemConfig, protocol, grid: GridConfig, users,
                   opt: OptimizerConfig = OptimizerConfig(), seed=None, grids=None):
    """Jointly optimize precoding, radiation amplitudes and PA positions.

    The procedure is deterministic; ``seed`` is accepted for interface
    symmetry with the stochastic routines and recorded by callers.
    """
    protocol = Protocol.parse(protocol)
    config.validate()
    grid.validate()
    opt.validate()
    users = np.asarray(users, dtype=float)
    if grids is None:
        grids = grid_sets(protocol, config, grid)
    _check_grid_spacing(config, grids, protocol)
    M, N = config.M, config.N
    p_pa = pa_power(protocol, config)

    X = equal_interval_positions(config)
    s = uniform_amplitudes(config)
    ch = synth_channels(X, users, config)
    W = mrt_precoder(pass_link(ch, s, config), config.P_max)
    rho = 0.0
    ee = energy_efficiency(W, s, ch, config, protocol)
    ee0 = ee
    pos = init_position_aux(X, grids, users, config, opt.penalty0, opt.penalty_growth)
    trace = [dict(outer=0, inner=0, stage="init", f2=float("nan"), ee=ee, rho=rho,
                  varrho=pos.varrho, tx_power=float(np.sum(np.abs(W) ** 2)))]
    best = (ee, W, s, X, rho)
    aux = None
    converged = False
    for outer in range(1, opt.max_outer + 1):
        ee_outer = ee
        inner_converged = False
        for inner in range(1, opt.max_inner + 1):
            aux = update_aux(W, s, ch, config, protocol)
            link = pass_link(ch, s, config)
            pre = solve_precoding(aux, link, config, tol=opt.bisect_tol)
            W, rho = pre.W, pre.rho
            prob = radiation_problem(aux, W, ch, config)
            rad = optimize_radiation(s, prob, M, N, opt)
            s = rad.s
            pm = position_model(aux, W, s, N, config)
            X = optimize_positions(pm, pos, grids, users, config, sweeps=opt.position_sweeps)
            ch = synth_channels(X, users, config)
            ee_new = _ee(W, s, ch, config, p_pa)
            trace.append(dict(outer=outer, inner=inner, stage="inner", f2=rad.f_trace[-1],
                              ee=ee_new, rho=rho, varrho=pos.varrho, tx_power=pre.power))
            if ee_new > best[0]:
                best = (ee_new, W, s, X, rho)
            change = rel_change(ee_new, ee)
            ee = ee_new
            if change < opt.eps_in:
                inner_converged = True
                break
        pos.varrho *= pos.growth
        if inner_converged and rel_change(ee, ee_outer) < opt.eps_out:
            converged = True
            break
    ee_b, W_b, s_b, X_b, rho_b = best
    log.debug("algorithm 2: ee %.4g -> %.4g (%d trace rows)", ee0, ee_b, len(trace))
    return SolutionState(W=W_b, s=s_b, X=X_b, rho=rho_b, aux=aux, pos=pos, ee=ee_b,
                         ee_initial=ee0, trace=trace, converged=converged)


def _ee(W, s, ch, config, p_pa):
    _, tot = sum_rate(W, s, ch, config)
    return config.B * tot / total_power(W, config, p_pa)


def optimize_precoding_only(link: LinkModel, config: SystemConfig, static_power,
                            opt: OptimizerConfig = OptimizerConfig(), W0=None, max_iter=200):
    """Dinkelbach/MMSE loop over the precoder alone. Returns (W, ee, history)."""
    W = mrt_precoder(link, config.P_max) if W0 is None else W0

    def ee_of(W):
        S, Q = link_terms(link, W)
        d = np.diag(S)
        gamma = d / (S.sum(axis=1) - d + Q.sum(axis=1) + link.N_0)
        p = float(np.sum(np.abs(W) ** 2)) / config.nu + static_power
        return config.B * np.log2(1 + gamma).sum() / p

    ee = ee_of(W)
    hist = [ee]
    best = (ee, W)
    for _ in range(max_iter):
        p_all = float(np.sum(np.abs(W) ** 2)) / config.nu + static_power
        aux = aux_from_link(link, W, config.B, p_all)
        W = solve_precoding(aux, link, config, tol=opt.bisect_tol).W
        new = ee_of(W)
        hist.append(new)
        if new > best[0]:
            best = (new, W)
        if rel_change(new, ee) < max(opt.eps_in, 1e-10):
            ee = new
            break
        ee = new
    return best[1], best[0], hist

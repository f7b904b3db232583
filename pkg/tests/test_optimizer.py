import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pass_dsd.config import ConfigError, GridConfig, OptimizerConfig, SystemConfig
from pass_dsd.model import (LinkModel, equal_interval_positions, mrt_precoder, pass_link,
                            sum_rate, synth_channels, uniform_amplitudes)
from pass_dsd.optimizer import (AuxState, PositionAux, RadiationProblem, amplitude_table,
                                assign_coarse, aux_from_link, euclidean_grad_f2, f4_value,
                                init_position_aux, joint_search_single_link, optimize_radiation,
                                phase_table, position_model, precoding_objective,
                                precoding_quadratic, radiation_problem, rate_weight,
                                riemannian_grad, run_algorithm2, select_coarse, select_fine,
                                single_link_dsd, solve_b, solve_c, solve_precoding,
                                surrogate_value, update_amplitude_block, update_aux,
                                update_phase_block)
from pass_dsd.protocols import GridSets, grid_sets

from conftest import philox, random_state


# --- auxiliary variables ------------------------------------------------------

def test_aux_zero_precoder(cfg, users):
    X, s = equal_interval_positions(cfg), uniform_amplitudes(cfg)
    ch = synth_channels(X, users, cfg)
    aux = update_aux(np.zeros((3, 4)), s, ch, cfg, "stt")
    np.testing.assert_array_equal(aux.t, 0)
    np.testing.assert_allclose(aux.epsilon, 1)
    np.testing.assert_allclose(aux.kappa, 1)
    assert aux.q == 0


def test_aux_scalar_mmse_identity():
    cfg = SystemConfig(M=1, N=1, K=1, Y_bar=(10.0,))
    ch = synth_channels(np.array([[40.0]]), [(45.0, 30.0)], cfg)
    W = np.array([[0.3 - 0.4j]])
    aux = update_aux(W, np.ones(1), ch, cfg, "saa")
    gamma = 2 ** aux.rates[0] - 1
    assert aux.epsilon[0] == pytest.approx(1 / (1 + gamma), rel=1e-12)
    assert aux.kappa[0] == pytest.approx(1 / aux.epsilon[0], rel=1e-12)


def test_rate_identity_mrt(cfg, users):
    X, s = equal_interval_positions(cfg), uniform_amplitudes(cfg)
    ch = synth_channels(X, users, cfg)
    W = mrt_precoder(pass_link(ch, s, cfg), cfg.P_max)
    aux = update_aux(W, s, ch, cfg, "stt")
    R, _ = sum_rate(W, s, ch, cfg)
    np.testing.assert_allclose(-np.log2(aux.epsilon), R, atol=1e-9)


# --- precoding ----------------------------------------------------------------

def _random_link(rng, M, K, scale=1e-3):
    mean = scale * (rng.standard_normal((K, M)) + 1j * rng.standard_normal((K, M)))
    cov = np.zeros((K, M, M), dtype=complex)
    for k in range(K):
        A = scale * (rng.standard_normal((M, M)) + 1j * rng.standard_normal((M, M)))
        cov[k] = 0.3 * A @ A.conj().T
    return LinkModel(mean=mean, cov=cov, N_0=1e-7)


def test_precoding_zero_linear_term(cfg):
    link = _random_link(philox(0), 2, 2)
    aux = AuxState(t=np.zeros(2, complex), kappa=np.ones(2), q=1e6, epsilon=np.ones(2),
                   rates=np.zeros(2))
    res = solve_precoding(aux, link, cfg)
    np.testing.assert_array_equal(res.W, 0)
    assert res.rho == 0


def test_precoding_inactive_constraint():
    rng = philox(1)
    link = _random_link(rng, 3, 2)
    cfg = SystemConfig(P_max=1e9)
    W0 = rng.standard_normal((3, 2)) * 1e-2 + 0j
    aux = aux_from_link(link, W0, cfg.B, 10.0)
    res = solve_precoding(aux, link, cfg)
    assert res.rho == 0 and res.power < cfg.P_max
    # unconstrained stationarity
    beta = rate_weight(cfg)
    H, Z = precoding_quadratic(aux, link)
    G = beta * (H @ res.W - Z) + aux.q / cfg.nu * res.W
    assert np.linalg.norm(G) < 1e-8 * np.linalg.norm(beta * Z)


def projected_gradient(aux, link, cfg, iters=20000):
    """Accelerated projected gradient on the same quadratic over the power ball."""
    beta = rate_weight(cfg)
    H, Z = precoding_quadratic(aux, link)
    mu = aux.q / cfg.nu
    Lc = 2 * (beta * np.linalg.eigvalsh(H).max() + mu)
    r = math.sqrt(cfg.P_max)

    def proj(W):
        n = np.linalg.norm(W)
        return W if n <= r else W * (r / n)

    W = proj(Z.copy())
    Y, tk = W.copy(), 1.0
    for _ in range(iters):
        grad = 2 * (beta * (H @ Y - Z) + mu * Y)
        Wn = proj(Y - grad / Lc)
        tn = (1 + math.sqrt(1 + 4 * tk * tk)) / 2
        Y = Wn + ((tk - 1) / tn) * (Wn - W)
        W, tk = Wn, tn
    return W


@pytest.mark.parametrize("seed", range(6))
def test_precoding_matches_projected_gradient(seed):
    rng = philox(100 + seed)
    M, K = 2, 2
    link = _random_link(rng, M, K)
    cfg = SystemConfig(M=M, K=K, P_max=0.5)
    W0 = (rng.standard_normal((M, K)) + 1j * rng.standard_normal((M, K))) * 0.3
    aux = aux_from_link(link, W0, cfg.B, 12.0)
    res = solve_precoding(aux, link, cfg, tol=1e-15)
    W_pg = projected_gradient(aux, link, cfg)
    f = precoding_objective(res.W, aux, link, cfg)
    f_pg = precoding_objective(W_pg, aux, link, cfg)
    assert f <= f_pg + 1e-6 * abs(f_pg)
    assert res.power <= cfg.P_max * (1 + 1e-9)
    assert res.rho * (res.power - cfg.P_max) == pytest.approx(0, abs=1e-6 * cfg.P_max)


def test_precoding_stationarity_with_multiplier(cfg, users):
    X, s = equal_interval_positions(cfg), uniform_amplitudes(cfg)
    ch = synth_channels(X, users, cfg)
    link = pass_link(ch, s, cfg)
    W = mrt_precoder(link, cfg.P_max)
    aux = aux_from_link(link, W, cfg.B, 10.0)
    res = solve_precoding(aux, link, cfg.replace(P_max=1e-3), tol=1e-15)
    beta = rate_weight(cfg)
    H, Z = precoding_quadratic(aux, link)
    G = beta * (H @ res.W - Z) + (aux.q / cfg.nu + res.rho) * res.W
    assert np.linalg.norm(G) < 1e-8 * np.linalg.norm(beta * Z)


# --- radiation amplitudes -----------------------------------------------------

def _rad_problem(rng, M, N, K=3):
    cfg = SystemConfig(M=M, N=N, K=K)
    users = rng.uniform(0, 100, (K, 2))
    W, s, X = random_state(rng, cfg)
    ch = synth_channels(X, users, cfg)
    aux = update_aux(W, s, ch, cfg, "stt")
    return radiation_problem(aux, W, ch, cfg), s, cfg, aux, W, ch


def test_gradient_at_zero_is_linear_term(rng):
    prob, *_ = _rad_problem(rng, 2, 3)
    np.testing.assert_allclose(euclidean_grad_f2(np.zeros(6), prob), -2 * prob.ell)


def test_gradient_matches_paper_form(rng):
    """(A + A^T) s - 2 sum_k Re{kappa_k t_k^* diag(G w_k) hbar_k}."""
    prob, s, cfg, aux, W, ch = _rad_problem(rng, 2, 3)
    lin = np.zeros(6)
    for k in range(cfg.K):
        Gw = ch.G @ W[:, k]
        lin += np.real(aux.kappa[k] * aux.t[k].conj() * Gw * ch.hbar[k])
    np.testing.assert_allclose(euclidean_grad_f2(s, prob), (prob.A + prob.A.T) @ s - 2 * lin,
                               rtol=1e-12, atol=1e-12 * np.abs(lin).max())


def test_gradient_without_linear_term(rng):
    prob, s, *_ = _rad_problem(rng, 1, 3, K=1)
    prob0 = RadiationProblem(A=prob.A, ell=np.zeros_like(prob.ell))
    np.testing.assert_allclose(euclidean_grad_f2(s, prob0), (prob.A + prob.A.T) @ s)


def test_f2_equals_weighted_mse(rng):
    prob, s, cfg, aux, W, ch = _rad_problem(rng, 2, 3)
    link = pass_link(ch, s, cfg)
    from pass_dsd.model import link_terms
    S, Q = link_terms(link, W)
    x = np.einsum("kd,dk->k", link.mean, W)
    D = S.sum(1) + Q.sum(1) + cfg.N_0
    eps = np.abs(aux.t) ** 2 * D - 2 * np.real(aux.t.conj() * x) + 1
    const = float(aux.kappa @ (np.abs(aux.t) ** 2 * cfg.N_0 + 1))
    assert prob.value(s) + const == pytest.approx(float(aux.kappa @ eps), rel=1e-10)


def test_riemannian_examples():
    s = np.array([0.6, 0.8])
    np.testing.assert_allclose(riemannian_grad(s, 3 * s), 0, atol=1e-15)
    np.testing.assert_allclose(riemannian_grad([1, 0, 0], [0, 1, 0]), [0, 1, 0])


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2 ** 32 - 1))
def test_riemannian_orthogonality(n, seed):
    rng = philox(seed)
    s = rng.standard_normal(n)
    s /= np.linalg.norm(s)
    g = rng.standard_normal(n) * 10
    assert abs(riemannian_grad(s, g) @ s) < 1e-12 * max(1, np.linalg.norm(g))


def test_radiation_single_pa_fixed(rng):
    prob, s, cfg, *_ = _rad_problem(rng, 3, 1)
    res = optimize_radiation(np.ones(3), prob, 3, 1, OptimizerConfig())
    np.testing.assert_allclose(res.s, 1)
    assert res.f_trace[-1] == pytest.approx(res.f_trace[0])


def test_radiation_isotropic():
    prob = RadiationProblem(A=np.eye(2), ell=np.zeros(2))
    res = optimize_radiation(np.array([0.6, 0.8]), prob, 1, 2, OptimizerConfig())
    assert np.linalg.norm(res.s) == pytest.approx(1)
    np.testing.assert_allclose(res.f_trace, 1.0)


def test_radiation_monotone_and_normalized(rng):
    for M, N in [(1, 2), (2, 4), (3, 6)]:
        prob, s, *_ = _rad_problem(rng, M, N)
        res = optimize_radiation(s, prob, M, N, OptimizerConfig())
        assert np.all(np.diff(res.f_trace) <= 1e-9 * max(1, abs(res.f_trace[0])))
        np.testing.assert_allclose(np.linalg.norm(res.s.reshape(M, N), axis=1), 1, atol=1e-12)
        assert np.all(res.s >= 0)


def sphere_grid_min(prob, step_deg=1.0):
    """Minimum of f2 over the nonnegative octant of the 2-sphere, sampled on a
    1-degree (theta, phi) grid."""
    ang = np.deg2rad(np.arange(0, 90 + 1e-9, step_deg))
    th, ph = np.meshgrid(ang, ang, indexing="ij")
    S = np.stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)], -1).reshape(-1, 3)
    vals = np.einsum("ij,jk,ik->i", S, prob.A, S) - 2 * S @ prob.ell
    return vals.min()


@pytest.mark.parametrize("seed", range(3))
def test_radiation_vs_sphere_grid(seed):
    prob, s, *_ = _rad_problem(philox(seed), 1, 3)
    res = optimize_radiation(s, prob, 1, 3, OptimizerConfig(eps_xi=1e-12, max_xi_iter=5000))
    f_grid = sphere_grid_min(prob)
    assert res.f_trace[-1] <= f_grid + 1e-6 * abs(f_grid)


# --- position blocks ----------------------------------------------------------

def _grids(coarse, fine):
    return GridSets(np.asarray(coarse, float), np.asarray(fine, float))


def test_coarse_forced_single_point():
    cfg = SystemConfig(M=1, N=1, K=2)
    users = np.array([[10.0, 40.0], [70.0, 60.0]])
    g = _grids([33.0], [0.0])
    b = np.array([[5.0], [0.1]])
    out = select_coarse(b, np.array([[33.0]]), g, users, cfg, cfg.delta_x)
    assert out[0, 0] == 33.0


def test_coarse_exact_match():
    cfg = SystemConfig(M=1, N=1, K=3)
    users = np.array([[10.0, 40.0], [70.0, 60.0], [45.0, 10.0]])
    g = _grids(np.arange(0, 101, 10.0), [0.0])
    b = amplitude_table(np.array([60.0]), users, cfg.Y_bar[0], cfg).T      # (K, 1)
    out = select_coarse(b, np.array([[0.0]]), g, users, cfg, cfg.delta_x)
    assert out[0, 0] == 60.0


def _coarse_oracle(b, grid, users, y, cfg, exclusion):
    N = b.shape[1]
    taken, chosen = [], []
    for n in range(N):
        best, best_x = math.inf, None
        for x in grid:
            if any(abs(x - t) < exclusion - 1e-12 for t in taken):
                continue
            cost = 0.0
            for k, (xu, yu) in enumerate(users):
                r2 = (xu - x) ** 2 + (yu - y) ** 2
                cost += (b[k, n] - math.exp(-cfg.alpha_g * x) * r2 ** (-cfg.beta_u / 4)) ** 2
            if cost < best:
                best, best_x = cost, x
        taken.append(best_x)
        chosen.append(best_x)
    return chosen


@pytest.mark.parametrize("seed", range(5))
def test_coarse_matches_exhaustive_scan(seed):
    rng = philox(seed)
    cfg = SystemConfig(M=1, N=3, K=4)
    users = rng.uniform(0, 100, (4, 2))
    grid = np.linspace(0, 100, 11)
    b = rng.uniform(0, 0.05, (4, 3))
    inc = np.array([[grid[0]], [grid[1]], [grid[2]]])
    # an incumbent that is certainly worse: far-away amplitudes
    out = select_coarse(b, inc, _grids(grid, [0.0]), users, cfg, cfg.delta_x)
    want = _coarse_oracle(b, grid, users, cfg.Y_bar[0], cfg, cfg.delta_x)
    inc_cost = sum(sum((b[k, n] - amplitude_table(np.array([inc[n, 0]]), users, cfg.Y_bar[0],
                                                    cfg)[0, k]) ** 2 for k in range(4))
                   for n in range(3))
    greedy_cost = sum(sum((b[k, n] - amplitude_table(np.array([want[n]]), users, cfg.Y_bar[0],
                                                       cfg)[0, k]) ** 2 for k in range(4))
                      for n in range(3))
    if greedy_cost < inc_cost:
        np.testing.assert_array_equal(out[:, 0], want)
    else:
        np.testing.assert_array_equal(out[:, 0], inc[:, 0])


def test_assign_coarse_distinct_and_ties():
    cost = np.array([[1.0, 1.0, 2.0], [0.0, 5.0, 5.0]])
    idx = assign_coarse(cost, np.array([0.0, 1.0, 2.0]), 0.5)
    assert list(idx) == [0, 1]
    with pytest.raises(ConfigError):
        assign_coarse(np.zeros((3, 2)), np.array([0.0, 1.0]), 0.5)


def test_fine_exact_match():
    cfg = SystemConfig(M=1, N=1, K=2)
    users = np.array([[10.0, 40.0], [70.0, 60.0]])
    fine = np.linspace(-0.1, 0.1, 21)
    xc = np.array([[50.0]])
    c = phase_table(np.array([50.0 + fine[13]]), users, cfg.Y_bar[0], cfg).T
    dx = select_fine(c, xc, _grids([50.0], fine), users, cfg)
    assert dx[0, 0] == fine[13]


def test_fine_forced_single_offset():
    cfg = SystemConfig(M=1, N=1, K=2)
    users = np.array([[10.0, 40.0], [70.0, 60.0]])
    dx = select_fine(np.ones((2, 1), complex), np.array([[50.0]]), _grids([50.0], [-0.1]),
                     users, cfg)
    assert dx[0, 0] == -0.1


@pytest.mark.parametrize("seed", range(5))
def test_fine_matches_exhaustive_scan(seed):
    rng = philox(seed)
    cfg = SystemConfig(M=1, N=2, K=3)
    users = rng.uniform(0, 100, (3, 2))
    fine = np.linspace(-0.1, 0.1, 21)
    xc = np.array([[30.0], [70.0]])
    c = rng.standard_normal((3, 2)) + 1j * rng.standard_normal((3, 2))
    dx = select_fine(c, xc, _grids([30.0, 70.0], fine), users, cfg)
    for n in range(2):
        best, best_o = math.inf, None
        for o in fine:
            x = xc[n, 0] + o
            cost = 0.0
            for k, (xu, yu) in enumerate(users):
                r = math.hypot(xu - x, yu - cfg.Y_bar[0])
                z = complex(math.cos(-(cfg.kg * x + cfg.k0 * r)), math.sin(-(cfg.kg * x + cfg.k0 * r)))
                cost += abs(c[k, n] - z) ** 2
            if cost < best:
                best, best_o = cost, o
        assert dx[n, 0] == best_o


def test_z_unit_modulus(cfg, users, rng):
    W, s, X = random_state(rng, cfg)
    grids = grid_sets("stt", cfg, GridConfig())
    pos = init_position_aux(X, grids, users, cfg, 230.0, 1 / 0.9)
    ch = synth_channels(pos.positions(cfg), users, cfg)
    aux = update_aux(W, s, ch, cfg, "stt")
    pm = position_model(aux, W, s, cfg.N, cfg)
    update_amplitude_block(pm, pos, grids, users, cfg)
    update_phase_block(pm, pos, grids, users, cfg)
    assert np.all(np.abs(np.abs(pos.z) - 1) == 0) or np.allclose(np.abs(pos.z), 1, atol=1e-15)


def test_f4_matches_weighted_mse(cfg, users, rng):
    W, s, X = random_state(rng, cfg)
    ch = synth_channels(X, users, cfg)
    aux = update_aux(W, s, ch, cfg, "stt")
    pm = position_model(aux, W, s, cfg.N, cfg)
    from pass_dsd.optimizer import _flat_table
    u = _flat_table(X, users, cfg, amplitude_table)
    z = _flat_table(X, users, cfg, phase_table)
    prob = radiation_problem(aux, W, ch, cfg)
    assert f4_value(pm, u, z) == pytest.approx(prob.value(s), rel=1e-10)


def test_b_and_c_updates_minimize_their_blocks(cfg, users, rng):
    W, s, X = random_state(rng, cfg)
    grids = grid_sets("stt", cfg, GridConfig())
    pos = init_position_aux(X, grids, users, cfg, 50.0, 1 / 0.9)
    ch = synth_channels(pos.positions(cfg), users, cfg)
    aux = update_aux(W, s, ch, cfg, "stt")
    pm = position_model(aux, W, s, cfg.N, cfg)
    b = solve_b(pm, pos.c, pos.u, pos.varrho)

    def L_b(bb):
        return f4_value(pm, bb, pos.c) + pos.varrho * np.sum((pos.u - bb) ** 2)

    base = L_b(b)
    for _ in range(20):
        assert L_b(b + 1e-4 * rng.standard_normal(b.shape)) >= base - 1e-12 * abs(base)
    c = solve_c(pm, b, pos.z, pos.varrho)

    def L_c(cc):
        return f4_value(pm, b, cc) + pos.varrho * np.sum(np.abs(pos.z - cc) ** 2)

    base = L_c(c)
    for _ in range(20):
        d = rng.standard_normal(c.shape) + 1j * rng.standard_normal(c.shape)
        assert L_c(c + 1e-4 * d) >= base - 1e-12 * abs(base)


def test_zero_penalty_projection(cfg, users, rng):
    """With b, c given, u and z are the grid-feasible projections of b, c."""
    c1 = SystemConfig(M=1, N=1, K=2)
    us = np.array([[20.0, 40.0], [60.0, 10.0]])
    g = _grids(np.arange(0, 101, 10.0), np.linspace(-0.1, 0.1, 5))
    b = amplitude_table(np.array([40.0]), us, c1.Y_bar[0], c1).T
    xc = select_coarse(b, np.array([[0.0]]), g, us, c1, c1.delta_x)
    c = phase_table(np.array([40.05]), us, c1.Y_bar[0], c1).T
    dx = select_fine(c, xc, g, us, c1)
    assert xc[0, 0] == 40.0 and dx[0, 0] == pytest.approx(0.05)


@pytest.mark.parametrize("seed", range(3))
def test_surrogate_nonincreasing_over_block_updates(cfg, users, seed):
    """Each of the four block updates (b, u, c, z) must not increase the
    penalized surrogate at fixed varrho."""
    rng = philox(seed)
    W, s, X = random_state(rng, cfg)
    grids = grid_sets("stt", cfg, GridConfig())
    pos = init_position_aux(X, grids, users, cfg, 230.0, 1 / 0.9)
    from pass_dsd.optimizer import _flat_table, coarse_exclusion
    for _ in range(5):
        ch = synth_channels(pos.positions(cfg), users, cfg)
        aux = update_aux(W, s, ch, cfg, "stt")
        pm = position_model(aux, W, s, cfg.N, cfg)
        vals = [surrogate_value(pm, pos)]
        pos.b = solve_b(pm, pos.c, pos.u, pos.varrho)
        vals.append(surrogate_value(pm, pos))
        pos.x_coarse = select_coarse(pos.b, pos.x_coarse, grids, users, cfg,
                                     coarse_exclusion(cfg, grids))
        pos.u = _flat_table(pos.x_coarse, users, cfg, amplitude_table)
        vals.append(surrogate_value(pm, pos))
        pos.c = solve_c(pm, pos.b, pos.z, pos.varrho)
        vals.append(surrogate_value(pm, pos))
        pos.dx_fine = select_fine(pos.c, pos.x_coarse, grids, users, cfg)
        pos.z = _flat_table(pos.positions(cfg), users, cfg, phase_table)
        vals.append(surrogate_value(pm, pos))
        d = np.diff(vals)
        assert np.all(d <= 1e-9 * abs(vals[0])), d


# --- single link ----------------------------------------------------------------

def test_single_link_user_above_grid_point():
    cfg = SystemConfig(M=1, N=1, K=1, alpha_g=0.0)
    g = _grids(np.arange(0, 101, 10.0), np.linspace(-0.1, 0.1, 21))
    res = single_link_dsd((40.0, 20.0), 0.0, g, cfg)
    assert res.x_coarse == 40.0
    assert res.evaluations == 11 + 21


def test_single_link_phase_coverage():
    cfg = SystemConfig(M=1, N=1, K=1)
    grid = GridConfig(delta_F=1e-4)
    g = grid_sets("stt", cfg, grid)
    assert g.fine[-1] - g.fine[0] >= cfg.wavelength_g
    for target in np.linspace(0, 2 * np.pi, 7):
        res = single_link_dsd((37.4, 23.9), 0.0, g, cfg, target_phase=target)
        x = res.x_coarse + res.dx_fine
        theta = cfg.kg * x + cfg.k0 * math.hypot(37.4 - x, 23.9)
        err = abs((theta - target + np.pi) % (2 * np.pi) - np.pi)
        bound = np.pi * grid.delta_F * (cfg.kg + cfg.k0) / (2 * np.pi)
        assert err <= bound + 1e-9


def test_joint_search_counts():
    cfg = SystemConfig(M=1, N=1, K=1)
    g = _grids(np.arange(0, 101, 10.0), np.linspace(-0.1, 0.1, 21))
    _, _, n = joint_search_single_link((40.0, 20.0), 0.0, g, cfg)
    assert n == 11 * 21


# --- algorithm 2 -----------------------------------------------------------------

def test_algorithm2_vanishing_budget(users):
    cfg = SystemConfig(P_max=1e-12)
    sol = run_algorithm2(cfg, "stt", GridConfig(), users, OptimizerConfig(max_outer=2, max_inner=3))
    assert np.sum(np.abs(sol.W) ** 2) <= 1e-12 * (1 + 1e-9)
    # EE scale at the nominal budget is ~1e7 bit/J; the vanishing budget is ~1e-12 W
    nominal = run_algorithm2(SystemConfig(), "stt", GridConfig(), users,
                             OptimizerConfig(max_outer=1, max_inner=1)).ee_initial
    assert sol.ee < 1e-9 * nominal


def test_algorithm2_improves_on_initialization(cfg, users):
    sol = run_algorithm2(cfg, "stt", GridConfig(), users, OptimizerConfig(), seed=0)
    assert sol.ee > sol.ee_initial
    np.testing.assert_allclose(np.linalg.norm(sol.s.reshape(3, 4), axis=1), 1, atol=1e-10)
    from pass_dsd.model import check_placement
    check_placement(sol.X, cfg)
    assert np.sum(np.abs(sol.W) ** 2) <= cfg.P_max * (1 + 1e-9)
    rows = sol.trace
    assert rows[0]["stage"] == "init"
    assert set(rows[1]) >= {"outer", "inner", "f2", "ee", "rho", "varrho", "tx_power"}
    # penalty weight strictly increases across outer iterations
    per_outer = {}
    for r in rows[1:]:
        per_outer.setdefault(r["outer"], r["varrho"])
    v = list(per_outer.values())
    assert all(b > a for a, b in zip(v, v[1:]))


def test_algorithm2_deterministic(cfg, users):
    a = run_algorithm2(cfg, "sat", GridConfig(N_C=2), users, OptimizerConfig(max_outer=2))
    b = run_algorithm2(cfg, "sat", GridConfig(N_C=2), users, OptimizerConfig(max_outer=2))
    assert a.ee == b.ee
    np.testing.assert_array_equal(a.X, b.X)


def test_algorithm2_tiny_instance_vs_joint_search():
    cfg = SystemConfig(M=1, N=1, K=1, Y_bar=(50.0,), alpha_g=1e-9)
    user = np.array([[50.3, 80.0]])
    g = _grids(np.linspace(0, 100, 11), np.linspace(-0.1, 0.1, 21))
    sol = run_algorithm2(cfg, "stt", GridConfig(delta_C=10, delta_F=0.01), user,
                         OptimizerConfig(), grids=g)
    p = cfg.C_0 * amplitude_table(sol.X[:, 0], user, 50.0, cfg)[0, 0] ** 2
    comp = np.clip(g.coarse[:, None] + g.fine[None, :], 0, 100).ravel()
    best = (cfg.C_0 * amplitude_table(comp, user, 50.0, cfg)[:, 0] ** 2).max()
    assert p >= 0.95 * best
    # the coarse point nearest the user's x is selected
    assert np.round(sol.X[0, 0], -1) == 50.0


def test_coarse_grid_spacing_check(users):
    cfg = SystemConfig()
    with pytest.raises(ConfigError):
        run_algorithm2(cfg, "stt", GridConfig(delta_C=1e-3, delta_F=1e-4, L_F=0.2), users)

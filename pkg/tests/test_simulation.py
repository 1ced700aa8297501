from __future__ import annotations

import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ymlab import checkpoint
from ymlab.discrete import discrete_Lb, make_radial_grid, potential_term, refine, sturm_count, weighted_grid
from ymlab.errors import DomainError, InsufficientDecay
from ymlab.weighted import total_mass
import ymlab.simulation as S

# m0 is recomputed in the eigen tests; a frozen value keeps these runs fast
M0 = -0.6570524346528422


@pytest.fixture(scope="module")
def grid():
    return make_radial_grid(1e-4, 12.0, 400)


@pytest.fixture(scope="module")
def setup1(gs11, grid):
    return S.make_setup(gs11, 1, grid=grid, m0=M0, shrink=S.ShrinkParams(delta=0.5))


@pytest.fixture(scope="module")
def state1(setup1):
    return S.build_initial_data(setup1, S.tau0_for_b0(setup1, 1e-2))


@pytest.fixture(scope="module")
def short_run(setup1, state1):
    st0, _ = state1
    return S.run(setup1, st0, st0.tau + 1.0)


# --- grid and discrete operator ---------------------------------------------


def test_radial_grid_layout(grid):
    y = grid.y
    assert y[0] == pytest.approx(1e-4) and y[-1] == pytest.approx(12.0)
    assert np.all(np.diff(y) > 0.0)
    fine = refine(grid)
    assert fine.n == 2 * grid.n - 1 or fine.n == 2 * grid.n
    with pytest.raises(DomainError):
        make_radial_grid(2.0, 12.0, 400)
    with pytest.raises(DomainError):
        make_radial_grid(1e-4, 12.0, 5)


@pytest.mark.parametrize("beta", [0.3, 0.5, 0.7])
def test_cell_masses(p11, grid, beta):
    wg = weighted_grid(grid, p11, beta)
    assert np.all(wg.V > 0.0)
    a = mp.mpf(p11.d + 2) / 2
    covered = mp.gammainc(a, 0, beta * grid.faces[-1] ** 2 / 2, regularized=True)
    assert wg.V.sum() == pytest.approx(total_mass(p11) * float(covered), rel=1e-12)


def test_diffusion_is_symmetric(p11, grid):
    wg = weighted_grid(grid, p11, 0.5)
    rng = np.random.default_rng(3)
    f, g = rng.normal(size=(2, grid.n))
    lhs = wg.dot(wg.apply_diffusion(f), g)
    assert lhs == pytest.approx(wg.dot(f, wg.apply_diffusion(g)), rel=1e-10)
    assert lhs == pytest.approx(-wg.dirichlet_form(f, g) - 2 * 0.5 * wg.dot(f, g), rel=1e-10)


def test_discrete_Lb_bands(gs11, p11, grid):
    wg = weighted_grid(grid, p11, 0.5)
    Lb = discrete_Lb(gs11, wg, 1e-2)
    w = np.random.default_rng(4).normal(size=grid.n)
    assert Lb.rayleigh(w) == pytest.approx(wg.dot(Lb.apply(w), w) / wg.norm_sq(w), rel=1e-9)
    diag, off = Lb.symmetric_bands()
    n_above = grid.n - sturm_count(diag, off, 0.0)
    # one unstable direction for the top mode
    assert n_above == 1


def test_potential_limit(gs11):
    y = np.array([1.0, 2.0, 5.0])
    pot = potential_term(gs11, y, 1e-6)
    assert pot == pytest.approx(3.0 * 9 / y**2, rel=1e-4)


# --- setup ---------------------------------------------------------------------


def test_shrink_params_validation():
    S.ShrinkParams()
    S.ShrinkParams(delta=1.0)
    for kw in ({"A": 0.0}, {"eta": 0.001}, {"delta": 1.5}, {"eta": 1.0, "eta_tilde": 0.5}):
        with pytest.raises(DomainError):
            S.ShrinkParams(**kw)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 3.0))
def test_chi0_range(x):
    v = float(S.chi0(np.array([x]))[0])
    assert 0.0 <= v <= 1.0
    if x <= 1.0:
        assert v == 1.0
    if x >= 2.0:
        assert v == 0.0
    lo = float(S.chi0(np.array([x + 1e-3]))[0])
    assert lo <= v


def test_setup_rejects(gs11, grid):
    with pytest.raises(DomainError):
        S.make_setup(gs11, 0, grid=grid, m0=M0)
    with pytest.raises(DomainError):
        S.make_setup(gs11, 1, grid=grid, m0=0.0)


def test_b_rate(setup1, p11):
    assert setup1.b_rate(0.5) == pytest.approx(1.0 - 2.0 / p11.alpha, rel=1e-15)
    assert setup1.I(S.tau0_for_b0(setup1, 1e-2)) == pytest.approx(1e-2, rel=1e-12)


# --- initial data ----------------------------------------------------------------


def test_initial_data_l1(setup1, state1, p11):
    st0, rep = state1
    assert np.max(np.abs(st0.residual)) < 1e-10
    K = -(2.0 / p11.alpha) * M0 * st0.b ** (0.5 * p11.alpha)
    assert st0.eps_modes[1] == pytest.approx(K, rel=1e-10)
    assert st0.beta == 0.5 and st0.b == pytest.approx(1e-2, rel=1e-12)
    assert abs(rep["psi_hat"]) + abs(rep["psi_tilde"]) <= st0.b**setup1.shrink.delta
    flags = S.ShrinkMonitor(setup1).flags(st0)
    assert all(flags.values())
    assert S.ShrinkMonitor(setup1).envelope(st0)


def test_correction_scalars_shrink_with_b0(gs11, grid):
    setup = S.make_setup(gs11, 1, grid=grid, m0=M0)
    ratios = []
    for b0 in (1e-2, 1e-3, 1e-4):
        _, rep = S.build_initial_data(setup, S.tau0_for_b0(setup, b0))
        ratios.append((abs(rep["psi_hat"]) + abs(rep["psi_tilde"])) / b0**setup.shrink.delta)
    assert ratios[0] > ratios[1] > ratios[2]


def test_initial_data_l2_modes(gs11, grid, p11):
    setup = S.make_setup(gs11, 2, grid=grid, m0=M0, shrink=S.ShrinkParams(delta=1.0))
    st0, _ = S.build_initial_data(setup, S.tau0_for_b0(setup, 1e-2))
    K = -(2.0 / p11.alpha) * M0 * st0.b ** (0.5 * p11.alpha)
    assert abs(st0.eps_modes[1]) < 1e-12 * abs(K)
    assert st0.eps_modes[2] == pytest.approx(K, rel=1e-8)
    # amplitude form: eps_modes[ell] = c_{ell,0} P_ell, so orthogonality reads eps_ell + eps_0 = 0
    assert abs(st0.eps_modes[2] + st0.eps_modes[0]) < 1e-10 * abs(K)
    assert np.max(np.abs(st0.residual)) < 1e-10


def test_initial_data_arguments(setup1, gs11, grid):
    with pytest.raises(DomainError):
        S.build_initial_data(setup1, 1.0)
    with pytest.raises(DomainError):
        S.build_initial_data(setup1, S.tau0_for_b0(setup1, 1e-2), dvec=[0.1])
    setup2 = S.make_setup(gs11, 2, grid=grid, m0=M0, shrink=S.ShrinkParams(delta=1.0))
    with pytest.raises(DomainError):
        S.build_initial_data(setup2, S.tau0_for_b0(setup2, 1e-2), dvec=[0.1, 0.2, 0.3])


# --- stepping ----------------------------------------------------------------------


def test_step_restores_constraints(setup1, state1):
    st0, _ = state1
    new = S.step(setup1, st0, 1e-3)
    assert np.max(np.abs(new.residual)) < 1e-10
    assert new.tau == pytest.approx(st0.tau + 1e-3)
    assert new.mu == pytest.approx(st0.mu * math.exp(-2 * st0.beta * 1e-3), rel=1e-14)
    with pytest.raises(DomainError):
        S.step(setup1, st0, 0.0)


def test_step_richardson_order(setup1, state1):
    st0, _ = state1
    gaps = []
    for dt in (1e-3, 5e-4, 2.5e-4):
        one = S.step(setup1, st0, dt)
        two = S.step(setup1, S.step(setup1, st0, 0.5 * dt), 0.5 * dt)
        gaps.append(abs(one.b - two.b))
    # one-step vs two-half-step gap is the local error, O(dt^{q+1})
    for g_big, g_small in zip(gaps, gaps[1:]):
        assert math.log2(g_big / g_small) >= 1.8


def test_short_run_consistency(setup1, short_run, p11):
    trace, end = short_run
    assert trace.status == S.TRAPPED
    assert S.compatibility_residuals(trace, setup1).max() < 1e-8
    tail = trace.rows[0]["tau"] + 0.5
    assert S.modulation_residual(trace, p11, tail) < 0.05 * abs(1.0 - 2.0 / p11.alpha)
    assert abs(end.beta - 0.5) < 1e-2
    assert S.b_from_origin(end.w) == pytest.approx(end.b, rel=0.1)
    assert all(all(r["flags"].values()) for r in trace.rows)
    cols, rows = trace.table()
    assert cols[:6] == list(S.TRACE_FIELDS)
    assert len(rows) == len(trace.rows)


def test_checkpoint_restart_bit_exact(setup1, state1, tmp_path):
    st0, _ = state1
    _, mid = S.run(setup1, st0, st0.tau + 0.1)
    path = tmp_path / "run.ckpt"
    checkpoint.write(str(path), mid, "abc")
    restored, digest = checkpoint.read(str(path))
    assert digest == "abc"
    _, a = S.run(setup1, mid, st0.tau + 0.2)
    _, b = S.run(setup1, restored, st0.tau + 0.2)
    assert a.steps == b.steps
    assert np.array_equal(a.w, b.w)
    assert (a.b, a.beta, a.mu, a.t) == (b.b, b.beta, b.mu, b.t)


def test_checkpoint_rejects_garbage(state1):
    st0, _ = state1
    blob = checkpoint.encode(st0, "x")
    with pytest.raises(DomainError):
        checkpoint.decode(b"NOTACKPT" + blob[8:])
    with pytest.raises(DomainError):
        checkpoint.decode(blob + b"\x00")


# --- rate fit ----------------------------------------------------------------------


@pytest.mark.parametrize("p_true", [1.1783946, 0.5, 2.0])
def test_fitter_synthetic(p_true):
    beta = 0.5
    tau = np.linspace(0.0, 12.0, 2000)
    mu = np.exp(-2 * beta * tau)
    t = (1.0 - mu) / (2 * beta)
    T = 1.0 / (2 * beta)
    lam = 3.0 * (T - t) ** p_true
    fit = S.fit_blowup_rate(tau, t, mu, lam, np.full_like(tau, beta))
    assert fit.exponent == pytest.approx(p_true, abs=1e-6)
    assert fit.C_est == pytest.approx(3.0, rel=1e-6)
    assert fit.T_est == pytest.approx(T, rel=1e-12)
    assert fit.r2 == pytest.approx(1.0, abs=1e-12)


def test_fitter_needs_decay():
    tau = np.linspace(0.0, 2.0, 50)
    mu = np.exp(-tau)
    with pytest.raises(InsufficientDecay):
        S.fit_blowup_rate(tau, 1.0 - mu, mu, mu, np.full_like(tau, 0.5))

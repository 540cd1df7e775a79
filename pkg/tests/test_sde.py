import numpy as np
import pytest

from oracles import central_fd
from sigflow.errors import NumericalError, ShapeError
from sigflow.neural import init_params
from sigflow.sde import (
    BrownianPath,
    LinearField,
    NeuralField,
    SolveMode,
    SolverState,
    backprop_solve,
    reversible_heun_forward_step,
    reversible_heun_reverse_step,
    sample_brownian,
    solve,
)

zero = lambda t, z: np.zeros_like(z)


def neural_field(d_z, d_w, diagonal, seed, hidden=8, final_tanh=True, time_input=True):
    n_in = d_z + int(time_input)
    g_out = d_z if diagonal else d_z * d_w
    drift = init_params((n_in, hidden, d_z), [seed, 0], final_tanh=final_tanh)
    diff = init_params((n_in, hidden, g_out), [seed, 1], final_tanh=final_tanh)
    return NeuralField(drift, diff, d_z, d_w, diagonal, time_input)


def batched_path(n, batch, d_w, seed, dt=None):
    dt = dt or 1.0 / n
    inc = np.random.default_rng(seed).standard_normal((n, batch, d_w)) * np.sqrt(dt)
    return BrownianPath(np.arange(n + 1) * dt, inc)


def test_brownian_determinism_and_moments():
    a = sample_brownian(100, 0.01, 3, 5)
    b = sample_brownian(100, 0.01, 3, 5)
    np.testing.assert_array_equal(a.increments, b.increments)
    with pytest.raises(ValueError):
        sample_brownian(10, 0.0, 1, 0)
    big = sample_brownian(100_000, 0.02, 2, 1)
    var = big.increments.var(axis=0)
    assert np.all(np.abs(var / 0.02 - 1.0) < 0.03)
    assert np.all(np.abs(big.increments.mean(axis=0)) < 4 * np.sqrt(0.02 / 100_000))


def test_zero_fields_leave_state_unchanged():
    s = SolverState(np.array([1.0, -2.0]), np.array([0.5, 3.0]))
    out = reversible_heun_forward_step(zero, zero, s, 0.0, 0.1, np.array([0.3, -0.1]))
    # zh' = 2z - zh, z' = z
    np.testing.assert_array_equal(out.z, s.z)
    back = reversible_heun_reverse_step(zero, zero, out, 0.1, 0.1, np.array([0.3, -0.1]))
    np.testing.assert_array_equal(back.z, s.z)
    np.testing.assert_array_equal(back.zh, s.zh)


def test_additive_constant_noise_is_exact():
    rng = np.random.default_rng(0)
    G = rng.standard_normal((3, 2))
    bm = sample_brownian(50, 0.02, 2, 3)
    z0 = rng.standard_normal(3)
    res = solve(zero, lambda t, z: G, z0, bm)
    np.testing.assert_allclose(res.final.z, z0 + G @ bm.increments.sum(axis=0), atol=1e-12)


def test_linear_ode_second_order_convergence():
    errs = []
    for n in (20, 40, 80, 160):
        bm = BrownianPath(np.linspace(0, 1, n + 1), np.zeros((n, 1)))
        res = solve(lambda t, z: -z, zero, np.array([1.0]), bm)
        errs.append(abs(res.final.z[0] - np.exp(-1.0)))
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all(np.abs(ratios - 4.0) < 0.3)


@pytest.mark.parametrize("diagonal", [True, False])
def test_single_step_round_trip(diagonal):
    vf = neural_field(4, 4 if diagonal else 3, diagonal, 1)
    rng = np.random.default_rng(1)
    s = SolverState(rng.standard_normal(4), rng.standard_normal(4))
    dW = rng.standard_normal(vf.d_w) * 0.1
    fwd = reversible_heun_forward_step(vf, None, s, 0.3, 0.01, dW)
    back = reversible_heun_reverse_step(vf, None, fwd, 0.31, 0.01, dW)
    assert np.max(np.abs(back.z - s.z)) <= 1e-10
    assert np.max(np.abs(back.zh - s.zh)) <= 1e-10


def test_trajectory_round_trip_200_steps():
    rng = np.random.default_rng(2)
    for trial in range(5):
        vf = neural_field(5, 5, True, trial)
        bm = sample_brownian(200, 1.0 / 200, 5, trial)
        z0 = rng.standard_normal(5)
        res = solve(vf, None, z0, bm)
        s = res.final
        for i in range(199, -1, -1):
            s = reversible_heun_reverse_step(vf, None, s, bm.times[i + 1], bm.dt, bm.increments[i])
        assert np.max(np.abs(s.z - z0)) <= 1e-8
        assert np.max(np.abs(s.zh - z0)) <= 1e-8


def test_modes_agree_and_ledger_scaling():
    vf = neural_field(3, 3, True, 4)
    z0 = np.random.default_rng(3).standard_normal((2, 3))
    peaks = {}
    for n in (8, 16, 32):
        bm = batched_path(n, 2, 3, n)
        rev = solve(vf, None, z0, bm, SolveMode.REVERSIBLE)
        sto = solve(vf, None, z0, bm, SolveMode.STORE_ALL)
        np.testing.assert_array_equal(rev.trajectory, sto.trajectory)
        assert rev.ledger.peak == 0
        assert sto.ledger.peak == n + 1
        cot = np.ones_like(rev.trajectory)
        backprop_solve(vf, rev, cot)
        peaks[n] = rev.ledger.peak
    assert len(set(peaks.values())) == 1 and peaks[8] <= 2


def test_zero_steps():
    bm = BrownianPath(np.array([0.0]), np.zeros((0, 2)))
    res = solve(zero, zero, np.array([1.0, 2.0]), bm)
    np.testing.assert_array_equal(res.trajectory, [[1.0, 2.0]])


def test_blow_up_reported():
    bm = sample_brownian(50, 0.1, 1, 0)
    with pytest.raises(NumericalError, match="non-finite"), np.errstate(over="ignore", invalid="ignore"):
        solve(lambda t, z: z ** 3 * 1e6, zero, np.array([10.0]), bm)


def test_zero_cotangent_gives_zero_gradient():
    vf = neural_field(3, 3, True, 5)
    res = solve(vf, None, np.ones(3), sample_brownian(10, 0.1, 3, 0))
    z0bar, g = backprop_solve(vf, res, np.zeros_like(res.trajectory))
    assert not z0bar.any() and not g.any()


def test_cotangent_shape_checked():
    vf = neural_field(3, 3, True, 5)
    res = solve(vf, None, np.ones(3), sample_brownian(10, 0.1, 3, 0))
    with pytest.raises(ShapeError):
        backprop_solve(vf, res, np.zeros((3, 3)))


def test_linear_field_gradient_matches_forward_recursion():
    rng = np.random.default_rng(6)
    d, n = 3, 12
    A = rng.standard_normal((d, d)) * 0.5
    B = rng.standard_normal((d, d)) * 0.3
    vf = LinearField(A, B)
    bm = sample_brownian(n, 1.0 / n, d, 2)
    c = rng.standard_normal(d)
    z0 = rng.standard_normal(d)
    cot = np.zeros((n + 1, d))
    cot[-1] = c
    for mode in SolveMode:
        res = solve(vf, None, z0, bm, mode)
        z0bar, g = backprop_solve(vf, res, cot)
        # linear scheme: propagate the identity basis forward to get dz_n/dz_0
        basis = solve(vf, None, np.eye(d), bm).final.z      # row k = z_n started at e_k
        np.testing.assert_allclose(z0bar, basis @ c, rtol=1e-12, atol=1e-13)

        def loss(theta):
            f = LinearField(theta[: d * d].reshape(d, d), theta[d * d :].reshape(d, d))
            return float(solve(f, None, z0, bm).final.z @ c)

        num = central_fd(loss, np.concatenate([A.ravel(), B.ravel()]), 1e-6)
        np.testing.assert_allclose(g, num, rtol=1e-6, atol=1e-8)


@pytest.mark.parametrize("diagonal", [True, False])
def test_neural_gradients_modes_and_finite_differences(diagonal):
    d_z, d_w, n = 4, 4 if diagonal else 2, 32
    vf = neural_field(d_z, d_w, diagonal, 7, hidden=6)
    rng = np.random.default_rng(7)
    z0 = rng.standard_normal((2, d_z))
    bm = batched_path(n, 2, d_w, 8)
    cot = rng.standard_normal((n + 1, 2, d_z))
    grads = {}
    for mode in SolveMode:
        res = solve(vf, None, z0, bm, mode)
        grads[mode] = backprop_solve(vf, res, cot)
    (za, ga), (zb, gb) = grads[SolveMode.REVERSIBLE], grads[SolveMode.STORE_ALL]
    assert np.linalg.norm(ga - gb) <= 1e-6 * np.linalg.norm(gb)
    assert np.linalg.norm(za - zb) <= 1e-6 * np.linalg.norm(zb)

    theta = np.concatenate([vf.drift.flatten(), vf.diffusion.flatten()])
    nd = vf.drift.n_params

    def loss(th):
        f = NeuralField(vf.drift.unflatten(th[:nd]), vf.diffusion.unflatten(th[nd:]),
                        d_z, d_w, diagonal)
        return float(np.sum(cot * solve(f, None, z0, bm).trajectory))

    num = central_fd(loss, theta, 1e-6)
    assert np.linalg.norm(ga - num) <= 1e-4 * np.linalg.norm(num)
    num_z = central_fd(lambda v: float(np.sum(cot * solve(vf, None, v.reshape(z0.shape), bm).trajectory)),
                       z0.reshape(-1), 1e-6)
    assert np.linalg.norm(za.reshape(-1) - num_z) <= 1e-4 * np.linalg.norm(num_z)


def test_deterministic_within_mode():
    vf = neural_field(3, 3, True, 9)
    bm = sample_brownian(20, 0.05, 3, 1)
    a = solve(vf, None, np.ones(3), bm)
    b = solve(vf, None, np.ones(3), bm)
    np.testing.assert_array_equal(a.trajectory, b.trajectory)
    cot = np.ones_like(a.trajectory)
    np.testing.assert_array_equal(backprop_solve(vf, a, cot)[1], backprop_solve(vf, b, cot)[1])

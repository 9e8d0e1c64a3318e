import csv
import math

import numpy as np
import pytest

from wonhamstab.chain import forward_flow
from wonhamstab.model import FiniteHmm, InitialPair, ObsKind
from wonhamstab.wonham import (
    JumpPath,
    SimConfig,
    checkpoint_steps,
    default_dt,
    filter_step,
    kappa_sweep,
    run_pair,
    simulate_observations,
    simulate_signal,
    states_on_grid,
    write_trajectory_csv,
)

FLIP = [[-1.0, 1.0], [1.0, -1.0]]


def test_simconfig_guards():
    with pytest.raises(ValueError):
        SimConfig(t_max=1.0, dt=2.0)
    with pytest.raises(ValueError):
        SimConfig(t_max=1e9, dt=1.0)
    with pytest.raises(ValueError):
        SimConfig(t_max=1.0, dt=0.0)
    assert SimConfig(t_max=10.0, dt=1e-3).n_steps == 10_000


def test_default_dt(presets):
    assert default_dt(presets["E1"][0]) == pytest.approx(1e-3)
    assert default_dt(presets["E1"][0].with_kappa(0.1)) == pytest.approx(1e-5)
    assert default_dt(presets["E1"][0].with_kappa(1e-4)) == 1e-6


def test_checkpoints_log_spaced():
    steps = checkpoint_steps(10_000, 1e-3)
    assert len(steps) == 16 and steps[0] == 100 and steps[-1] == 10_000
    assert np.all(np.diff(steps) > 0)


def test_signal_constant_without_rates(presets):
    path = simulate_signal(presets["E4"][0], 1, 100.0, np.random.default_rng(0))
    assert list(path.states) == [1] and list(path.times) == [0.0]


def test_holding_times_exponential(presets):
    m = presets["E1"][0]
    rng = np.random.default_rng(1)
    n = 10_000
    first = []
    for _ in range(n):
        p = simulate_signal(m, 0, 25.0, rng)
        first.append(p.times[1])
    assert abs(np.mean(first) - 1.0) < 4 / math.sqrt(n)


def test_absorption_split(presets):
    m = presets["E5"][0]
    rng = np.random.default_rng(2)
    n = 10_000
    ends = np.array([simulate_signal(m, 2, 1e3, rng).states[-1] for _ in range(n)])
    assert set(np.unique(ends)) <= {0, 1}
    assert abs(np.mean(ends == 0) - 0.5) < 4 * math.sqrt(0.25 / n)


def test_grid_states():
    path = JumpPath(np.array([0.0, 0.25, 0.3]), np.array([0, 1, 0]))
    assert list(states_on_grid(path, 4, 0.1)) == [0, 0, 0, 0, 0]
    assert list(states_on_grid(path, 3, 0.125)) == [0, 0, 1, 0]


def test_white_noise_variance():
    m = FiniteHmm(FLIP, [0.0, 0.0])
    dt, n = 1e-2, 100_000
    path = simulate_signal(m, 0, n * dt, np.random.default_rng(3))
    dY = simulate_observations(m, path, n, dt, np.random.default_rng(4))
    assert abs(np.var(dY, ddof=1) / dt - 1) < 5 * math.sqrt(2 / n)


def test_zero_noise_is_exact_drift():
    m = FiniteHmm(np.zeros((2, 2)), [0.0, 1.7], kappa=0.0)
    path = JumpPath(np.array([0.0]), np.array([1]))
    dY = simulate_observations(m, path, 50, 0.1, np.random.default_rng(5))
    assert np.array_equal(dY, np.full(50, 1.7 * 0.1))


def test_exact_integral_across_jump():
    m = FiniteHmm(np.zeros((2, 2)), [0.0, 1.0], kappa=0.0)
    path = JumpPath(np.array([0.0, 0.13]), np.array([0, 1]))
    dY = simulate_observations(m, path, 3, 0.1, np.random.default_rng(0))
    assert np.allclose(dY, [0.0, 0.07, 0.1], atol=1e-15)


def test_counting_mean():
    m = FiniteHmm(np.zeros((2, 2)), [2.0, 2.0], obs_kind=ObsKind.COUNTING)
    n, dt = 100_000, 0.1
    path = JumpPath(np.array([0.0]), np.array([0]))
    counts = simulate_observations(m, path, n, dt, np.random.default_rng(6))
    assert np.all(counts == np.round(counts)) and counts.min() >= 0
    assert abs(counts.mean() - 0.2) < 5 * math.sqrt(0.2 / n)


def test_filter_step_constant_h_identity():
    m = FiniteHmm(np.zeros((3, 3)), [0.4, 0.4, 0.4])
    pi = np.array([0.2, 0.3, 0.5])
    assert np.array_equal(filter_step(m, pi, 0.77, 0.01), pi)


def test_filter_step_correction_by_hand():
    m = FiniteHmm(np.zeros((2, 2)), [0.0, 1.0])
    out = filter_step(m, [0.5, 0.5], 0.5, 0.1)
    w = math.exp(0.45)
    assert np.allclose(out, [1 / (1 + w), w / (1 + w)], atol=1e-15)
    assert abs(out[0] - 0.3894) < 5e-5


def test_filter_step_prediction_only(presets):
    m = FiniteHmm(FLIP, [0.0, 0.0])
    pi = np.array([0.9, 0.1])
    assert np.allclose(filter_step(m, pi, 0.3, 0.05), forward_flow(m, pi, 0.05), atol=1e-12, rtol=0)


def test_filter_step_counting():
    m = FiniteHmm(np.zeros((2, 2)), [1.0, 3.0], obs_kind=ObsKind.COUNTING)
    out = filter_step(m, [0.5, 0.5], 2.0, 0.1)
    w = np.array([1.0 * math.exp(-0.1), 9.0 * math.exp(-0.3)])
    assert np.allclose(out, w / w.sum(), atol=1e-15)
    # a count rules out a zero-intensity state
    m0 = FiniteHmm(np.zeros((2, 2)), [0.0, 3.0], obs_kind=ObsKind.COUNTING)
    assert np.array_equal(filter_step(m0, [0.5, 0.5], 1.0, 0.1), [0.0, 1.0])


def test_filter_step_extreme_increment_stays_on_simplex():
    m = FiniteHmm(FLIP, [0.0, 50.0], kappa=1e-3)
    out = filter_step(m, [0.999, 0.001], -10.0, 0.01)
    assert out.min() >= 0 and abs(out.sum() - 1) < 1e-12


def test_equal_priors_give_zero_tv(presets):
    m, _ = presets["E1"]
    run = run_pair(m, InitialPair([0.7, 0.3], [0.7, 0.3]), SimConfig(2.0, 1e-3, n_paths=8, seed=1))
    assert max(np.max(np.abs(t.tv)) for t in run.trajectories) <= 1e-12
    assert max(run.summary.mean_tv) <= 1e-12


def test_e4_tv_constant(presets):
    m, init = presets["E4"]
    run = run_pair(m, init, SimConfig(5.0, 1e-3, n_paths=4, seed=2))
    for t in run.trajectories:
        assert np.max(np.abs(t.tv - 0.4)) <= 1e-12
    assert np.allclose(run.summary.mean_tv, 0.4, atol=1e-12, rtol=0)


def test_simplex_preserved(presets):
    for name in ("E1", "E5", "E6"):
        m, init = presets[name]
        run = run_pair(m, init, SimConfig(3.0, 1e-3, n_paths=5, seed=3))
        for t in run.trajectories:
            for P in (t.pi_mu, t.pi_nu):
                assert P.min() >= 0
                assert np.max(np.abs(P.sum(axis=1) - 1)) < 1e-12
            assert t.tv.min() >= 0 and t.tv.max() <= 1


def test_constant_h_filter_is_forward_flow():
    m = FiniteHmm([[-1.0, 0.6, 0.4], [0.2, -0.5, 0.3], [1.0, 1.0, -2.0]], [0.3, 0.3, 0.3])
    init = InitialPair([1.0, 0.0, 0.0], [0.2, 0.3, 0.5])
    cfg = SimConfig(10.0, 1e-3, n_paths=1, seed=4, record_stride=500)
    t = run_pair(m, init, cfg).trajectories[0]
    for k, time in enumerate(t.times):
        assert np.max(np.abs(t.pi_mu[k] - forward_flow(m, init.mu, time))) < 1e-10
        assert np.max(np.abs(t.pi_nu[k] - forward_flow(m, init.nu, time))) < 1e-10


def test_filter_mean_matches_forward_flow(presets):
    m = presets["E1"][0]
    init = InitialPair([1.0, 0.0], [0.5, 0.5])
    n = 500
    run = run_pair(m, init, SimConfig(1.0, 1e-3, n_paths=n, seed=5, record_paths=n, record_stride=1000))
    finals = np.array([t.pi_mu[-1] for t in run.trajectories])
    se = finals.std(axis=0, ddof=1) / math.sqrt(n)
    assert np.all(np.abs(finals.mean(axis=0) - forward_flow(m, init.mu, 1.0)) < 4 * se)


@pytest.mark.parametrize("name", ["E3", "E4"])
def test_support_containment(presets, name):
    m = presets[name][0]
    init = InitialPair([1.0, 0.0], [1.0, 0.0])
    run = run_pair(m, init, SimConfig(2.0, 1e-3, n_paths=3, seed=6))
    for t in run.trajectories:
        assert np.all(t.pi_nu[:, 1] == 0.0) and np.all(t.pi_mu[:, 1] == 0.0)


def test_observable_model_forgets_prior(presets):
    m, init = presets["E1"]
    rows = kappa_sweep(m, init, [0.5, 1.0, 2.0], SimConfig(10.0, 1e-3, n_paths=64, seed=8, record_paths=0))
    assert all(r.mean_terminal_tv < 0.05 for r in rows)


def _same_run(a, b):
    assert a.summary.to_dict() == b.summary.to_dict()
    assert len(a.trajectories) == len(b.trajectories)
    for x, y in zip(a.trajectories, b.trajectories):
        assert x.path_index == y.path_index
        for f in ("times", "signal_states", "obs_increments", "pi_mu", "pi_nu", "tv"):
            assert np.array_equal(getattr(x, f), getattr(y, f))


def test_worker_count_does_not_change_results(presets):
    m, init = presets["E6"]
    cfg = SimConfig(1.0, 1e-3, n_paths=150, seed=9, record_paths=150, record_stride=50)
    _same_run(run_pair(m, init, cfg, workers=1), run_pair(m, init, cfg, workers=8))


def test_single_kappa_sweep_reproduces_run_pair(presets):
    m, init = presets["E6"]
    cfg = SimConfig(1.0, 1e-3, n_paths=20, seed=10)
    row = kappa_sweep(m, init, [0.5], cfg)[0]
    direct = run_pair(m.with_kappa(0.5), init, cfg)
    assert row.summary.to_dict() == direct.summary.to_dict()
    assert row.mean_terminal_tv == direct.summary.mean_terminal_tv


def test_kappa_sweep_rejects_nonpositive(presets):
    m, init = presets["E6"]
    with pytest.raises(ValueError):
        kappa_sweep(m, init, [1.0, 0.0], SimConfig(1.0, 0.1))


def test_trajectory_csv(presets, tmp_path):
    m, init = presets["E5"]
    t = run_pair(m, init, SimConfig(0.01, 1e-3, seed=11)).trajectories[0]
    out = tmp_path / "p.csv"
    write_trajectory_csv(t, out)
    raw = out.read_bytes()
    assert raw.startswith(b"t,x,dY,pi_mu_1,pi_mu_2,pi_mu_3,pi_nu_1,pi_nu_2,pi_nu_3,tv\r\n")
    rows = list(csv.reader(raw.decode().splitlines()))
    assert len(rows) == 1 + len(t.times)
    assert int(rows[1][1]) == t.signal_states[0] + 1
    assert float(rows[-1][-1]) == t.tv[-1]

import math

import numpy as np
import pytest

from pidenet.errors import InvalidArgument, NumericFailure
from pidenet.model import DeclaredConstants, JumpDiffusionSpec, builtin_model
from pidenet.ratelab import loglog_fit
from pidenet.simulate import (Comparison, RandomnessRealization, StrongErrorParams, coupled_errors,
                              euler_path, moment_probe, sample_realization, step_update,
                              strong_error)

from oracles import euler_scalar


def zero_spec(d):
    return JumpDiffusionSpec(
        d=d, beta=lambda x: np.zeros_like(np.atleast_2d(x)),
        sigma=lambda x: np.zeros((np.atleast_2d(x).shape[0], d, d)),
        jumps=None, levy=None, constants=DeclaredConstants(L=1.0))


# Realizations

def test_single_step_without_jumps():
    spec, _ = builtin_model("heat", 2)
    real = sample_realization(spec, 1.0, 1, seed=0)
    assert real.brownian.shape == (1, 1, 2)
    assert real.n_events == 0


def test_realization_is_reproducible():
    spec, _ = builtin_model("merton", 2, {"intensity": 3.0})
    a = sample_realization(spec, 1.0, 32, seed=5, key=(1, 2), n_paths=7)
    b = sample_realization(spec, 1.0, 32, seed=5, key=(1, 2), n_paths=7)
    for name in ("brownian", "event_path", "event_time", "event_mark", "event_step"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
    c = sample_realization(spec, 1.0, 32, seed=6, key=(1, 2), n_paths=7)
    assert not np.array_equal(a.brownian, c.brownian)


def test_increment_variance():
    spec, _ = builtin_model("heat", 1)
    real = sample_realization(spec, 1.0, 8, seed=1, n_paths=100_000)
    var = real.brownian[:, 3, 0].var(ddof=1)
    assert var == pytest.approx(real.h, rel=0.02)


def test_event_invariants():
    spec, _ = builtin_model("stable_like", 2)
    real = sample_realization(spec, 2.0, 16, delta=0.1, M=4, seed=2, n_paths=50)
    assert real.n_events > 0
    assert np.all(np.linalg.norm(real.event_mark, axis=1) > 0.1)
    assert np.all(np.diff(real.event_path) >= 0)
    for p in range(50):
        t = real.event_time[real.event_path == p]
        assert np.all(np.diff(t) > 0)
    h = real.h
    assert np.all(real.event_step * h < real.event_time)
    assert np.all(real.event_time <= (real.event_step + 1) * h + 1e-15)
    assert real.compensator_samples.shape == (50, 16, 4, 2)
    assert np.all(np.linalg.norm(real.compensator_samples, axis=3) > 0.1)


def test_coarsen_sums_increments():
    spec, _ = builtin_model("merton", 1, {"intensity": 4.0})
    real = sample_realization(spec, 1.0, 16, seed=3, n_paths=4)
    coarse = real.coarsen(4)
    assert coarse.n_steps == 4
    np.testing.assert_allclose(coarse.brownian, real.brownian.reshape(4, 4, 4, 1).sum(axis=2), rtol=1e-14)
    np.testing.assert_array_equal(coarse.event_step, real.event_step // 4)
    with pytest.raises(InvalidArgument):
        real.coarsen(3)


def test_realization_round_trip():
    spec, _ = builtin_model("compound_poisson", 2)
    real = sample_realization(spec, 1.0, 8, M=3, seed=4, n_paths=3, monitor_times=[0.3, 1.0])
    back = RandomnessRealization.from_dict(real.to_dict())
    for name in ("brownian", "event_time", "event_mark", "compensator_samples", "monitor_brownian"):
        np.testing.assert_array_equal(getattr(back, name), getattr(real, name))
    x = np.array([0.2, -0.1])
    np.testing.assert_array_equal(euler_path(spec, x, back).values, euler_path(spec, x, real).values)


def test_infeasible_delta_rejected():
    spec, _ = builtin_model("stable_like", 1)
    with pytest.raises(InvalidArgument):
        sample_realization(spec, 1.0, 4, delta=0.0)


# Euler recursion

def test_zero_model_is_constant():
    real = sample_realization(zero_spec(3), 1.0, 8, seed=0)
    x = np.array([1.0, -2.0, 0.5])
    np.testing.assert_array_equal(euler_path(zero_spec(3), x, real).values[0], np.tile(x, (9, 1)))


def test_constant_drift_grid_values():
    spec, _ = builtin_model("pure_drift", 1, {"drift": 1.0})
    path = euler_path(spec, [0.0], sample_realization(spec, 1.0, 4, seed=0))
    np.testing.assert_allclose(path.values[0, :, 0], [0.0, 0.25, 0.5, 0.75, 1.0], rtol=0, atol=1e-15)


def test_linear_drift_compound_growth():
    spec, _ = builtin_model("pure_drift", 1, {"drift": 0.0, "drift_matrix": 1.0})
    path = euler_path(spec, [1.0], sample_realization(spec, 1.0, 10, seed=0))
    assert path.terminal[0, 0] == pytest.approx(2.5937424601, abs=1e-10)


def test_black_scholes_matches_scalar_loop():
    spec, _ = builtin_model("black_scholes", 1, {"vol": 0.3})
    real = sample_realization(spec, 1.0, 20, seed=7)
    want = euler_scalar(lambda x: 0.0, lambda x: 0.3 * x, 1.2, 1.0, 20, real.brownian[0, :, 0])
    np.testing.assert_allclose(euler_path(spec, [1.2], real).values[0, :, 0], want, rtol=1e-14)


def test_merton_step_matches_hand_recursion():
    spec, _ = builtin_model("merton", 1, {"intensity": 5.0})
    real = sample_realization(spec, 1.0, 8, seed=8)
    lam_g = float(spec.g_integral()[0])
    x = 1.0
    h = real.h
    for n in range(8):
        jumps = real.event_mark[real.event_step == n, 0]
        x = x + 0.2 * x * real.brownian[0, n, 0] + x * np.expm1(jumps).sum() - h * x * lam_g
    assert euler_path(spec, [1.0], real).terminal[0, 0] == pytest.approx(x, rel=1e-13)


def test_truncated_at_zero_equals_exact():
    spec, _ = builtin_model("merton", 2, {"intensity": 2.0})
    real = sample_realization(spec, 1.0, 16, seed=9, n_paths=20)
    x = np.array([1.0, 0.7])
    np.testing.assert_allclose(euler_path(spec, x, real, "truncated", delta=0.0).values,
                               euler_path(spec, x, real).values, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("name", ["pure_drift", "heat", "black_scholes", "merton", "compound_poisson"])
def test_net_variant_equals_exact(name):
    spec, nets = builtin_model(name, 3)
    real = sample_realization(spec, 1.0, 16, seed=10, n_paths=20)
    x = np.array([0.9, 1.1, 1.0])
    np.testing.assert_allclose(euler_path(spec, x, real, "net", nets).values,
                               euler_path(spec, x, real).values, rtol=1e-9, atol=1e-12)


def test_net_variant_needs_nets():
    spec, _ = builtin_model("heat", 1)
    with pytest.raises(InvalidArgument):
        euler_path(spec, [0.0], sample_realization(spec, 1.0, 4), "net")


def test_overflow_guard():
    spec, _ = builtin_model("pure_drift", 1, {"drift": 0.0, "drift_matrix": 1000.0})
    real = sample_realization(spec, 1.0, 10, seed=0, n_paths=2)
    with pytest.raises(NumericFailure) as info:
        euler_path(spec, [1.0], real)
    assert info.value.step is not None
    masked = euler_path(spec, [1.0], real, guard="mask")
    assert masked.failed.all() and np.isnan(masked.terminal).all()


def test_many_points_share_paths():
    spec, _ = builtin_model("black_scholes", 1)
    real = sample_realization(spec, 1.0, 8, seed=11, n_paths=5)
    xs = np.array([[0.5], [1.0], [2.0]])
    both = euler_path(spec, xs, real).terminal.reshape(5, 3)
    for j in range(3):
        np.testing.assert_array_equal(both[:, j], euler_path(spec, xs[j], real).terminal[:, 0])


def test_off_grid_monitoring_interpolates_drift():
    spec, _ = builtin_model("pure_drift", 1, {"drift": 2.0})
    real = sample_realization(spec, 1.0, 4, seed=0, monitor_times=[0.3, 0.5, 1.0])
    path = euler_path(spec, [0.0], real)
    np.testing.assert_allclose(path.monitor_values[0, :, 0], [0.6, 1.0, 2.0], rtol=1e-14)


def test_off_grid_monitoring_has_brownian_variance():
    spec, _ = builtin_model("heat", 1)
    real = sample_realization(spec, 1.0, 4, seed=12, n_paths=100_000, monitor_times=[0.3])
    mon = euler_path(spec, [0.0], real, store="terminal").monitor_values[:, 0, 0]
    assert mon.var(ddof=1) == pytest.approx(0.3, rel=0.02)
    # bridge covariance with the first grid value: Cov(W_0.3, W_0.25) = 0.25
    assert np.cov(mon, real.brownian[:, 0, 0])[0, 1] == pytest.approx(0.25, rel=0.03)


def test_step_update_matches_path():
    spec, nets = builtin_model("merton", 2, {"intensity": 3.0})
    real = sample_realization(spec, 1.0, 8, seed=13)
    path = euler_path(spec, [1.0, 1.0], real, "net", nets)
    for n in range(8):
        nxt = step_update(spec, path.values[0, n], real, n, (n + 1) * real.h, "net", nets)
        np.testing.assert_allclose(nxt[0], path.values[0, n + 1], rtol=1e-13)


# Strong errors

def test_identical_variants_have_zero_error():
    spec, _ = builtin_model("merton", 1)
    params = StrongErrorParams(1.0, 32, comparisons=(Comparison(32),))
    assert strong_error(spec, np.array([1.0]), params, 200, seed=0) == (0.0, 0.0)


def test_coarse_grid_must_nest():
    spec, _ = builtin_model("heat", 1)
    with pytest.raises(InvalidArgument):
        strong_error(spec, np.array([0.0]), StrongErrorParams(1.0, 32, comparisons=(Comparison(12),)), 10, 0)


def test_ode_euler_first_order():
    spec, _ = builtin_model("pure_drift", 1, {"drift": 0.0, "drift_matrix": 1.0})
    ks = list(range(3, 8))
    params = StrongErrorParams(1.0, 2 ** 10, comparisons=tuple(Comparison(2 ** k) for k in ks))
    errs = coupled_errors(spec, np.array([1.0]), params, 2, seed=0)
    sup = [math.sqrt(e) for e, _ in errs]
    slope = np.polyfit(np.log2([2.0 ** -k for k in ks]), np.log2(sup), 1)[0]
    assert slope == pytest.approx(1.0, abs=0.1)


def test_strong_errors_do_not_depend_on_threads():
    spec, _ = builtin_model("merton", 1)
    params = StrongErrorParams(1.0, 64, comparisons=(Comparison(8), Comparison(16)), chunk=50)
    a = coupled_errors(spec, np.array([1.0]), params, 300, seed=3, threads=1)
    b = coupled_errors(spec, np.array([1.0]), params, 300, seed=3, threads=3)
    assert a == b


def test_merton_strong_rate_short_ladder():
    spec, _ = builtin_model("merton", 1)
    ks = [3, 4, 5, 6, 7]
    params = StrongErrorParams(1.0, 2 ** 10, comparisons=tuple(Comparison(2 ** k) for k in ks))
    errs = coupled_errors(spec, np.array([1.0]), params, 2000, seed=4)
    fit = loglog_fit([2.0 ** -k for k in ks], [e for e, _ in errs], [s for _, s in errs])
    assert fit.slope == pytest.approx(1.0, abs=0.2)


def test_compensator_mc_converges_to_net():
    spec, nets = builtin_model("compound_poisson", 1)
    comps = tuple(Comparison(16, "net_mc", M=m) for m in (4, 64))
    params = StrongErrorParams(1.0, 16, ref_variant="net", comparisons=comps, M=64)
    (e4, _), (e64, _) = coupled_errors(spec, np.array([0.5]), params, 1000, seed=5, nets=nets)
    assert e64 < e4 / 4


def test_pure_jump_martingale():
    spec, _ = builtin_model("merton", 1, {"vol": 0.0, "intensity": 1.0})
    real = sample_realization(spec, 1.0, 8, seed=14, n_paths=100_000)
    xt = euler_path(spec, [1.0], real, store="terminal").terminal[:, 0]
    assert abs(xt.mean() - 1.0) <= 3 * xt.std(ddof=1) / math.sqrt(xt.size)


# Moments

def test_zero_model_moment_is_exact():
    est = moment_probe(zero_spec(2), np.array([3.0, 4.0]), 1.0, 100, seed=0, n_steps=4)
    assert est.mean_sq == 25.0 and est.std_error == 0.0


def test_heat_second_moment():
    d = 3
    spec, _ = builtin_model("heat", d)
    x = np.array([1.0, -1.0, 0.5])
    est = moment_probe(spec, x, 1.0, 50_000, seed=1, n_steps=8)
    assert abs(est.mean_sq - (x @ x + d * 1.0)) <= 3 * est.std_error


def test_black_scholes_moment_growth_in_d():
    dims = [1, 2, 4, 8, 16]
    moments = []
    for d in dims:
        spec, _ = builtin_model("black_scholes", d)
        moments.append(moment_probe(spec, np.ones(d), 1.0, 4000, seed=2, n_steps=16).mean_sq)
    slope = np.polyfit(np.log(dims), np.log(moments), 1)[0]
    assert slope <= 2.2

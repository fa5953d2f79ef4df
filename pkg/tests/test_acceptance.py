"""End-to-end acceptance criteria, each run at its stated tolerance.

Every criterion prints one PASS/FAIL line (also repeated in the pytest
summary under "acceptance criteria").
"""

import math
import time
from dataclasses import replace

import numpy as np
import pytest

from pidenet.builder import StepCompiler, chain_steps
from pidenet.model import builtin_model
from pidenet.pricing import (UniformCube, mc_price, payoff_network, reference_points,
                             schedule_from_epsilon, select_realization_set)
from pidenet.ratelab import BasketDemoConfig, StudyConfig, run_basket_demo, run_study
from pidenet.relu_net import (ReluNetwork, affine_combine, compose, lift_to_depth, parallelize)
from pidenet.simulate import euler_path, sample_realization

from builds import random_build
from conftest import ACCEPTANCE_LINES
from oracles import bs_call, dense_forward, random_dense_layers

BS_PRICE = 0.0796557


def report(number, title, passed, detail, seconds, budget):
    status = "PASS" if passed else "FAIL"
    line = (f"criterion {number} [{status}] {title}: {detail} "
            f"({seconds:.1f}s, budget {budget:.0f}s)")
    ACCEPTANCE_LINES.append(line)
    print(line)


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.start


# 1. compiled path networks reproduce the simulated terminal state

COMPILE_CASES = [("pure_drift", None), ("heat", None), ("black_scholes", None),
                 ("merton", None), ("stable_like", (0.3, 4))]


def test_criterion_1_compilation_exactness():
    worst = {}
    with Timer() as timer:
        for name, mc in COMPILE_CASES:
            for d in (1, 3):
                spec, nets = builtin_model(name, d)
                delta, M = mc if mc else (0.0, 0)
                real = sample_realization(spec, 1.0, 16, delta=delta, M=M, seed=2024)
                comp = StepCompiler(spec, nets, real, delta if mc else None, M if mc else None)
                psi = chain_steps([comp.step(n) for n in range(16)])
                x = np.random.default_rng(d).uniform(0.5, 1.5, size=(200, d))
                got = psi.eval(x)
                want = euler_path(spec, x, real, "net_mc" if mc else "net",
                                  nets, store="terminal").terminal
                rel = np.linalg.norm(got - want, axis=1) / np.linalg.norm(want, axis=1)
                worst[(name, d)] = float(rel.max())
    top = max(worst.values())
    passed = top <= 1e-9 and timer.seconds < 60
    report(1, "compilation exactness", passed,
           f"max relative difference {top:.2e} over {len(worst)} model/dimension cases (tol 1e-9)",
           timer.seconds, 60)
    assert passed, worst


# 2-4. strong convergence rates

def rate_line(fit, target, tol):
    lo, hi = fit["ci95"]
    return (f"slope {fit['slope']:.3f} (95% band [{lo:.3f}, {hi:.3f}]), "
            f"target {target} +- {tol}, R2 {fit['r2']:.3f}")


def test_criterion_2_euler_rate():
    cfg = StudyConfig("euler-rate", {"family": "merton", "d": 1}, seed=11, n_paths=10_000,
                      h_ladder=tuple(2.0 ** -k for k in range(4, 10)), ref_steps=2 ** 12)
    with Timer() as timer:
        res = run_study(cfg)
    fit = res.fit
    passed = abs(fit["slope"] - 1.0) <= 0.2 and timer.seconds < 300
    report(2, "Euler strong rate (merton, h = 2^-4..2^-9 vs 2^-12)", passed,
           rate_line(fit, 1.0, 0.2), timer.seconds, 300)
    assert passed


def test_criterion_3_truncation_rate():
    cfg = StudyConfig("trunc-rate", {"family": "stable_like", "d": 1, "params": {"rho": 0.5}},
                      seed=12, n_paths=4000, delta_ladder=(0.4, 0.2, 0.1, 0.05), n_steps=16)
    with Timer() as timer:
        res = run_study(cfg)
    fit = res.fit
    passed = abs(fit["slope"] - 0.5) <= 0.15 and timer.seconds < 300
    report(3, "small-jump truncation rate (stable_like, rho = 0.5)", passed,
           rate_line(fit, 0.5, 0.15), timer.seconds, 300)
    assert passed


def test_criterion_4_compensator_rate():
    cfg = StudyConfig("mc-rate", {"family": "compound_poisson", "d": 1}, seed=13, n_paths=2000,
                      m_ladder=(4, 16, 64, 256), n_steps=16)
    with Timer() as timer:
        res = run_study(cfg)
    fit = res.fit
    passed = abs(fit["slope"] + 1.0) <= 0.25 and timer.seconds < 300
    report(4, "compensator Monte Carlo rate (compound_poisson)", passed,
           rate_line(fit, -1.0, 0.25), timer.seconds, 300)
    assert passed


# 5. size ledger soundness

def test_criterion_5_size_ledger():
    rng = np.random.default_rng(14)
    checked = violations = premise_failures = 0
    modes = {False: 0, True: 0}
    with Timer() as timer:
        for i in range(50):
            mc_mode = bool(i % 2)
            *_, U = random_build(rng, mc_mode)
            modes[mc_mode] += 1
            for entry in U.ledger.entries.values():
                checked += entry.checked
                violations += entry.violations
            premise_failures += not U.ledger.premises_hold
    passed = violations == 0 and premise_failures == 0 and timer.seconds < 120
    report(5, "size-bound ledger", passed,
           f"{checked} bound checks over 50 builds ({modes[False]} multiplicative, "
           f"{modes[True]} compensator), {violations} violations, "
           f"{premise_failures} builds with failed premises", timer.seconds, 120)
    assert passed


# 6. polynomial size scaling

def test_criterion_6_size_scaling():
    cfg = StudyConfig("size-scaling", {"family": "black_scholes"}, seed=15,
                      eps_ladder=(1.0, 0.5, 0.25, 0.125), d_ladder=(1, 2, 4, 8), c_bar=0.03)
    with Timer() as timer:
        res = run_study(cfg)
    fit = res.fit
    sound = all(r["ledger_sound"] for r in res.rows)
    finite = math.isfinite(fit["eps_exponent"]) and math.isfinite(fit["d_exponent"])
    passed = (finite and sound and fit["eps_exponent"] <= fit["predicted_eps_exponent"]
              and fit["d_exponent"] <= fit["predicted_d_exponent"] and fit["r2"] >= 0.95
              and timer.seconds < 600)
    report(6, "polynomial size scaling", passed,
           f"eps exponent {fit['eps_exponent']:.2f} (predicted <= {fit['predicted_eps_exponent']:.0f}), "
           f"d exponent {fit['d_exponent']:.2f} (predicted <= {fit['predicted_d_exponent']:.0f}), "
           f"R2 {fit['r2']:.3f} (need >= 0.95), ledgers sound: {sound}", timer.seconds, 600)
    assert passed


# 7. pricing oracle and basket demo

def test_criterion_7_pricing():
    spec, _ = builtin_model("black_scholes", 1, {"vol": 0.2})
    call = payoff_network("basket_call", 1, {"weights": 1.0, "strike": 1.0})
    with Timer() as timer:
        est = mc_price(spec, call, [1.0], T=1.0, n_steps=256, n_paths=1_000_000, seed=16)
        demo = run_basket_demo(BasketDemoConfig({"family": "black_scholes", "d": 1},
                                                (0.8, 1.0, 1.2), seed=17, epsilon=0.1))
    closed = bs_call(1.0, 1.0, 0.2, 1.0)
    z = abs(est.price - closed) / est.std_error
    passed = (abs(closed - BS_PRICE) < 5e-8 and z <= 3 and demo.rms < demo.epsilon
              and timer.seconds < 300)
    report(7, "pricing oracle and basket demo", passed,
           f"MC {est.price:.6f} +- {est.std_error:.6f} vs closed form {closed:.7f} ({z:.2f} SE, "
           f"need <= 3); basket RMS strike error {demo.rms:.4f} (need < {demo.epsilon})",
           timer.seconds, 300)
    assert passed


# 8. realization selection

def test_criterion_8_selection():
    spec, nets = builtin_model("merton", 1)
    payoff = payoff_network("basket_call", 1)
    sched = schedule_from_epsilon(0.2, 1, spec.constants, spec.mode, c_bar=0.1)
    measure = UniformCube(1, 0.5, 1.5)
    with Timer() as timer:
        ref = reference_points(spec, payoff, measure, sched.T, 64 * sched.n_steps, 64, 18, 20_000)
        attempts = []
        for trial in range(100):
            sel = select_realization_set(spec, nets, payoff, sched, measure, max_attempts=3,
                                         seed=10_000 + trial, reference=ref)
            attempts.append(sel.attempts)
    accepted = len(attempts)
    passed = accepted >= 95 and timer.seconds < 300
    report(8, "realization selection (merton, eps = 0.2)", passed,
           f"{accepted}/100 trials accepted within 3 attempts (need >= 95), "
           f"mean attempts {np.mean(attempts):.2f}", timer.seconds, 300)
    assert passed


# 9. network calculus

def _random_net(rng, n_in, n_maps, n_out):
    widths = [int(w) for w in rng.integers(1, 6, size=n_maps - 1)] + [n_out]
    layers = random_dense_layers(rng, n_in, widths, density=float(rng.choice([0.3, 0.6, 1.0])))
    return layers, ReluNetwork.from_arrays(layers)


def _close(got, want):
    return np.all(np.abs(got - want) <= 1e-12 * np.maximum(1.0, np.abs(want)))


def test_criterion_9_network_calculus():
    rng = np.random.default_rng(19)
    failures = {"compose": 0, "parallelize": 0, "affine_combine": 0, "lift": 0}
    size_failures = 0
    with Timer() as timer:
        for case in range(1000):
            xs_dim = int(rng.integers(1, 5))
            # composition
            mid = int(rng.integers(1, 4))
            li, inner = _random_net(rng, xs_dim, int(rng.integers(1, 4)), mid)
            lo, outer = _random_net(rng, mid, int(rng.integers(1, 4)), int(rng.integers(1, 3)))
            net = compose(outer, inner)
            xs = rng.normal(scale=2.0, size=(8, xs_dim))
            want = np.array([dense_forward(lo, dense_forward(li, x)) for x in xs])
            failures["compose"] += not _close(net.eval(xs), want)
            size_failures += net.size > 2 * outer.size + inner.size_out + inner.size
            size_failures += outer.n_affine > 1 and net.size_out != outer.size_out
            # parallelization
            maps = int(rng.integers(1, 4))
            distinct = bool(rng.integers(0, 2))
            parts = [_random_net(rng, int(rng.integers(1, 4)) if distinct else xs_dim, maps,
                                 int(rng.integers(1, 3))) for _ in range(int(rng.integers(2, 4)))]
            net = parallelize([p[1] for p in parts], distinct_inputs=distinct)
            dims = [p[1].input_dim for p in parts]
            xs = rng.normal(scale=2.0, size=(8, sum(dims) if distinct else xs_dim))
            offs = np.cumsum([0] + dims)
            want = np.array([np.concatenate([
                dense_forward(p[0], x[offs[i]:offs[i + 1]] if distinct else x)
                for i, p in enumerate(parts)]) for x in xs])
            failures["parallelize"] += not _close(net.eval(xs), want)
            size_failures += net.size != sum(p[1].size for p in parts)
            # affine combination
            n_out = int(rng.integers(1, 3))
            parts = [_random_net(rng, xs_dim, maps, n_out) for _ in range(int(rng.integers(1, 4)))]
            w = rng.normal(size=len(parts))
            b = rng.normal(size=n_out) * (rng.random(n_out) < 0.5)
            net = affine_combine([p[1] for p in parts], w, b)
            xs = rng.normal(scale=2.0, size=(8, xs_dim))
            want = np.array([b + sum(wi * dense_forward(p[0], x) for wi, p in zip(w, parts))
                             for x in xs])
            failures["affine_combine"] += not _close(net.eval(xs), want)
            size_failures += net.size > sum(p[1].size for p in parts) + np.count_nonzero(b)
            # depth lifting
            layers, base = _random_net(rng, xs_dim, int(rng.integers(1, 4)), int(rng.integers(1, 3)))
            extra = int(rng.integers(0, 4))
            side = "input" if case % 2 else "output"
            lifted = lift_to_depth(base, base.depth + extra, side)
            want = np.array([dense_forward(layers, x) for x in xs])
            failures["lift"] += not (_close(lifted.eval(xs), want)
                                     and lifted.depth == base.depth + extra)
            if extra:
                dim = base.input_dim if side == "input" else base.output_dim
                bound = (2 * base.size + 2 * dim + 2 * dim * extra if side == "input"
                         else 4 * dim * extra + base.size_out + base.size)
                size_failures += lifted.size > bound
    total = sum(failures.values())
    passed = total == 0 and size_failures == 0 and timer.seconds < 60
    report(9, "network calculus property suite", passed,
           f"1000 randomized cases per operation, oracle mismatches {failures}, "
           f"size-inequality violations {size_failures}", timer.seconds, 60)
    assert passed

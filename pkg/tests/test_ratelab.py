import json
from dataclasses import replace

import numpy as np
import pytest

from pidenet.builder import Schedule, assemble_approximator, required_constant
from pidenet.errors import ConfigError, LoadError
from pidenet.model import builtin_model, model_to_dict
from pidenet.pricing import payoff_network
from pidenet.ratelab import (BasketDemoConfig, StudyConfig, load_config, load_realization,
                             load_result, loglog_fit, main, run_basket_demo, run_study,
                             save_realization, write_result)
from pidenet.relu_net import dumps_json, load_network
from pidenet.simulate import euler_path, sample_realization


def merton_file(tmp_path, d=1):
    spec, _ = builtin_model("merton", d)
    path = tmp_path / "merton.json"
    path.write_text(dumps_json(model_to_dict(spec)))
    return str(path)


# Fits

def test_exact_power_law_fit():
    x = np.array([1.0, 0.5, 0.25, 0.125, 0.0625])
    fit = loglog_fit(x, 3.0 * x ** 1.5, 0.01 * 3.0 * x ** 1.5)
    assert fit.slope == pytest.approx(1.5, abs=1e-12)
    assert fit.r2 == pytest.approx(1.0)
    assert fit.within(1.5, 0.0)


def test_noisy_smallest_point_is_dropped():
    x = np.array([1.0, 0.5, 0.25, 0.125, 0.0625])
    y = x.copy()
    y[-1] = 0.5 * y[-1]
    se = 0.05 * y
    se[-1] = 0.5 * y[-1]
    fit = loglog_fit(x, y, se)
    assert fit.dropped == (0.0625,) and fit.n_used == 4
    assert fit.slope == pytest.approx(1.0, abs=1e-12)


def test_fit_band_covers_truth():
    rng = np.random.default_rng(0)
    x = 2.0 ** -np.arange(4, 10)
    covered = 0
    for _ in range(200):
        rel = 0.05
        y = x * np.exp(rng.normal(scale=rel, size=x.size))
        fit = loglog_fit(x, y, rel * y, drop_noisy=False)
        covered += fit.ci95[0] <= 1.0 <= fit.ci95[1]
    assert covered >= 170


# Configuration

def test_config_errors_name_the_field(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"kind": "euler-rate", "model": "merton", "h_ladder": [0.5, 0.25]}))
    with pytest.raises(ConfigError) as info:
        load_config(path)
    assert info.value.field == "seed" and info.value.path == str(path)
    path.write_text(json.dumps({"kind": "euler-rate", "model": "merton", "seed": 1,
                                "h_ladder": [0.25, 0.5, 0.125]}))
    with pytest.raises(ConfigError) as info:
        load_config(path)
    assert info.value.field == "h_ladder"
    path.write_text(json.dumps({"kind": "euler-rate", "model": "merton", "seed": 1, "bogus": 2}))
    with pytest.raises(ConfigError) as info:
        load_config(path)
    assert info.value.field == "bogus"
    path.write_text("{oops")
    with pytest.raises(ConfigError):
        load_config(path)


def test_config_requires_ladders_and_nesting():
    with pytest.raises(ConfigError) as info:
        StudyConfig("trunc-rate", "stable_like", 1).validate()
    assert info.value.field == "delta_ladder"
    with pytest.raises(ConfigError) as info:
        StudyConfig("euler-rate", "merton", 1, h_ladder=(0.5, 0.3)).validate()
    assert info.value.field == "h_ladder"
    with pytest.raises(ConfigError):
        StudyConfig("nonsense", "merton", 1).validate()


def test_unloadable_model(tmp_path):
    cfg = StudyConfig("euler-rate", str(tmp_path / "missing.json"), 1, n_paths=10,
                      h_ladder=(0.5, 0.25))
    with pytest.raises(ConfigError) as info:
        run_study(cfg)
    assert info.value.field == "model"


# Studies

def small_euler(tmp_path, threads=1, out="a.csv"):
    return StudyConfig("euler-rate", merton_file(tmp_path), 7, n_paths=300,
                       h_ladder=(0.25, 0.125, 0.0625), ref_steps=64, chunk=70,
                       threads=threads, out=str(tmp_path / out))


def test_study_csv_is_byte_identical(tmp_path):
    run_study(small_euler(tmp_path, 1, "a.csv"))
    run_study(small_euler(tmp_path, 1, "b.csv"))
    run_study(small_euler(tmp_path, 3, "c.csv"))
    a = (tmp_path / "a.csv").read_bytes()
    assert a == (tmp_path / "b.csv").read_bytes() == (tmp_path / "c.csv").read_bytes()
    lines = a.decode().splitlines()
    assert lines[0] == "h,n_steps,estimate,std_error" and len(lines) == 4


def test_study_result_round_trip(tmp_path):
    res = run_study(small_euler(tmp_path))
    back = load_result(tmp_path / "a.json")
    assert back.rows == res.rows and back.fit == json.loads(json.dumps(res.fit))
    assert back.to_csv() == res.to_csv()
    text = (tmp_path / "a.json").read_text()
    (tmp_path / "a.json").write_text(text[:-1])
    with pytest.raises(LoadError) as info:
        load_result(tmp_path / "a.json")
    assert info.value.offset is not None


def test_result_version_mismatch(tmp_path):
    res = run_study(small_euler(tmp_path))
    obj = res.to_dict()
    obj["version"] = 99
    (tmp_path / "v.json").write_text(json.dumps(obj))
    with pytest.raises(LoadError):
        load_result(tmp_path / "v.json")


def test_every_row_has_a_standard_error(tmp_path):
    cfg = StudyConfig("mc-rate", "compound_poisson", 2, n_paths=200, m_ladder=(2, 8, 32),
                      n_steps=8)
    res = run_study(cfg)
    assert len(res.rows) == 3
    assert all(r["std_error"] > 0 for r in res.rows)
    assert len(res.fit["ci95"]) == 2


def test_size_scaling_rows_cover_grid():
    cfg = StudyConfig("size-scaling", "black_scholes", 3, eps_ladder=(1.0, 0.5),
                      d_ladder=(1, 2), c_bar=0.03)
    res = run_study(cfg)
    assert len(res.rows) == 4
    assert all(r["ledger_sound"] for r in res.rows)
    assert res.fit["predicted_eps_exponent"] == 4.0


# Persistence

def test_realization_round_trip_reproduces_paths(tmp_path):
    spec, nets = builtin_model("merton", 2, {"intensity": 2.0})
    real = sample_realization(spec, 1.0, 16, seed=1, n_paths=5, monitor_times=[0.37])
    save_realization(real, tmp_path / "r.json")
    back = load_realization(tmp_path / "r.json")
    x = np.array([1.0, 0.8])
    a, b = euler_path(spec, x, real, "net", nets), euler_path(spec, x, back, "net", nets)
    np.testing.assert_array_equal(a.values, b.values)
    np.testing.assert_array_equal(a.monitor_values, b.monitor_values)
    text = (tmp_path / "r.json").read_text()
    (tmp_path / "r.json").write_text(text[:-1])
    with pytest.raises(LoadError):
        load_realization(tmp_path / "r.json")


def test_approximator_round_trip(tmp_path):
    spec, nets = builtin_model("merton", 2)
    payoff = payoff_network("parametric_basket_call", 2)
    sched = Schedule(0.5, 0.05, 1.0, 4, 3)
    c = replace(spec.constants, C=required_constant(spec, nets, payoff, sched))
    U = assemble_approximator(spec, nets, payoff, sched, seed=2, constants=c)
    for enc in ("dense", "sparse"):
        U.save(tmp_path / f"u_{enc}.json", encoding=enc)
        net = load_network(tmp_path / f"u_{enc}.json")
        rng = np.random.default_rng(3)
        x, K = rng.uniform(0.5, 1.5, (100, 2)), rng.uniform(0.5, 1.5, (100, 2))
        np.testing.assert_array_equal(net.eval(np.hstack([x, K]))[:, 0], U.eval(x, K))


# Basket demo

def test_zero_weight_basket_prices_vanish():
    res = run_basket_demo(BasketDemoConfig("black_scholes", (0.0, 0.5, 1.0), seed=1,
                                           weights=[0.0], epsilon=0.5, n_paths=1000))
    assert all(r["mc_price"] == 0.0 and r["net_price"] == 0.0 for r in res.rows)


def test_zero_strike_is_martingale_price():
    res = run_basket_demo(BasketDemoConfig({"family": "merton", "d": 2}, (0.0,), seed=2,
                                           x0=[1.0, 1.4], weights=[0.5, 0.5], epsilon=0.5,
                                           n_paths=100_000))
    row = res.rows[0]
    assert abs(row["mc_price"] - 1.2) <= 3 * row["mc_std_error"]


def test_negative_strike_rejected():
    with pytest.raises(ConfigError):
        run_basket_demo(BasketDemoConfig("black_scholes", (-1.0,), seed=0))


# Command line

def test_cli_price(capsys):
    assert main(["price", "--model", "black_scholes", "--seed", "1", "--paths", "20000",
                 "--steps", "16"]) == 0
    assert capsys.readouterr().out.startswith("price ")


def test_cli_build_then_eval(tmp_path, capsys):
    out = tmp_path / "u.json"
    assert main(["build", "--model", "merton", "--dim", "1", "--seed", "3", "--eps", "1.0",
                 "--out", str(out)]) == 0
    capsys.readouterr()
    assert main(["eval", str(out), "--x", "1.0"]) == 0
    value = float(capsys.readouterr().out.strip())
    assert value == load_network(out).eval([1.0])[0]


def test_cli_study_and_simulate(tmp_path, capsys):
    csv_path = tmp_path / "s.csv"
    assert main(["study", "--kind", "euler-rate", "--model", "merton", "--seed", "4",
                 "--paths", "200", "--h-ladder", "0.25,0.125", "--out", str(csv_path)]) == 0
    assert csv_path.read_text().startswith("h,n_steps,estimate,std_error")
    real_path = tmp_path / "r.json"
    assert main(["simulate", "--model", "heat", "--dim", "2", "--seed", "5", "--paths", "10",
                 "--out", str(real_path)]) == 0
    assert load_realization(real_path).n_paths == 10


def test_cli_reports_errors(tmp_path, capsys):
    assert main(["price", "--model", str(tmp_path / "nope.json"), "--seed", "1"]) == 2
    assert "error" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["price", "--model", "heat"])  # seed is mandatory

"""Rate studies, the basket-pricing demo, persistence and the command line.

Four studies are available:

``euler-rate``
    squared sup error of the Euler scheme against a finer nested grid, per step size h.
``trunc-rate``
    squared sup error from dropping jumps of norm at most delta, per delta.
``mc-rate``
    squared sup error from replacing the compensator integral by an M-sample average.
``size-scaling``
    size of the assembled approximator over an (epsilon, d) grid.

Every run is a pure function of its configuration: random streams are keyed
by (seed, ladder cell, path chunk), so the CSV output is byte-identical for
a fixed seed regardless of thread count.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from scipy import stats

from .builder import assemble_approximator, predicted_exponents, required_constant
from .errors import ConfigError, InvalidArgument, LoadError
from .model import BUILTINS, COMPOUND_POISSON_MC, builtin_model, load_model_file
from .pricing import mc_prices, payoff_network, schedule_from_epsilon
from .relu_net import dumps_json, load_network, loads_json
from .simulate import (Comparison, RandomnessRealization, StrongErrorParams, coupled_errors,
                       euler_path, sample_realization)

STUDY_KINDS = ("euler-rate", "trunc-rate", "mc-rate", "size-scaling")
RESULT_FORMAT = "pidenet.study_result"
RESULT_VERSION = 1
NOISY_POINT_SE = 0.30

CSV_COLUMNS = {
    "euler-rate": ("h", "n_steps", "estimate", "std_error"),
    "trunc-rate": ("delta", "n_steps", "estimate", "std_error"),
    "mc-rate": ("M", "n_steps", "estimate", "std_error"),
    "size-scaling": ("epsilon", "d", "n_steps", "n_realizations", "size", "estimate",
                     "std_error", "ledger_sound"),
}
LADDER_OF = {"euler-rate": "h_ladder", "trunc-rate": "delta_ladder", "mc-rate": "m_ladder"}


# Configuration -------------------------------------------------------------------

@dataclass(frozen=True)
class StudyConfig:
    kind: str
    model: object                  # path to a model JSON file, or the parsed dict
    seed: int
    n_paths: int = 10_000
    T: float = 1.0
    x0: object = 1.0               # scalar (repeated over coordinates) or vector
    h_ladder: tuple = ()
    delta_ladder: tuple = ()
    m_ladder: tuple = ()
    n_ladder: tuple = ()
    d_ladder: tuple = ()
    eps_ladder: tuple = ()
    ref_steps: int | None = None
    ref_delta: float | None = None
    delta: float = 0.0
    n_steps: int = 16
    c_bar: float = 1.0
    r: float = 1.0
    payoff: str = "basket_call"
    out: str | None = None
    threads: int = 1
    chunk: int = 2048
    source: str | None = None      # file the config was read from, for error messages

    @staticmethod
    def from_dict(obj: dict, source: str | None = None) -> "StudyConfig":
        if not isinstance(obj, dict):
            raise ConfigError("study config must be a JSON object", path=source)
        names = {f.name for f in fields(StudyConfig)}
        for key in obj:
            if key not in names:
                raise ConfigError("unknown setting", path=source, field=key)
        for key in ("kind", "model", "seed"):
            if key not in obj:
                raise ConfigError("missing required setting", path=source, field=key)
        kw = dict(obj)
        for key in ("h_ladder", "delta_ladder", "m_ladder", "n_ladder", "d_ladder", "eps_ladder"):
            if key in kw:
                if not isinstance(kw[key], (list, tuple)):
                    raise ConfigError("ladder must be a list", path=source, field=key)
                kw[key] = tuple(kw[key])
        cfg = StudyConfig(**kw, **({} if "source" in kw else {"source": source}))
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        out = asdict(self)
        out.pop("source")
        for k, v in out.items():
            if isinstance(v, tuple):
                out[k] = list(v)
        return out

    def _fail(self, message, name):
        raise ConfigError(message, path=self.source, field=name)

    def validate(self) -> None:
        if self.kind not in STUDY_KINDS:
            self._fail(f"unknown study kind {self.kind!r}; choose from {STUDY_KINDS}", "kind")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            self._fail("seed must be a non-negative integer", "seed")
        if self.n_paths < 2:
            self._fail("need at least two paths", "n_paths")
        if self.T <= 0:
            self._fail("horizon must be positive", "T")
        if self.threads < 1:
            self._fail("thread count must be positive", "threads")
        for name in ("h_ladder", "delta_ladder", "m_ladder", "n_ladder", "d_ladder", "eps_ladder"):
            ladder = getattr(self, name)
            if ladder and not _strictly_monotone(ladder):
                self._fail("ladder must be strictly monotone", name)
            if any(not (isinstance(v, (int, float)) and v > 0) for v in ladder):
                self._fail("ladder entries must be positive numbers", name)
        required = {"size-scaling": ("eps_ladder", "d_ladder")}.get(
            self.kind, (LADDER_OF.get(self.kind),))
        for name in required:
            if not getattr(self, name):
                self._fail("ladder must be nonempty for this study", name)
        if self.kind == "euler-rate":
            ref = self.reference_steps()
            for h in self.h_ladder:
                n = _steps_for(self.T, h)
                if n is None or ref % n:
                    self._fail(f"step h={h} does not give a grid nested in {ref} steps", "h_ladder")
        if self.kind == "mc-rate" and any(int(m) != m for m in self.m_ladder):
            self._fail("sample counts must be integers", "m_ladder")
        if self.kind == "size-scaling" and any(int(d) != d for d in self.d_ladder):
            self._fail("dimensions must be integers", "d_ladder")

    def reference_steps(self) -> int:
        if self.ref_steps is not None:
            return int(self.ref_steps)
        finest = max(_steps_for(self.T, h) or 1 for h in self.h_ladder) if self.h_ladder else 1
        return 64 * finest

    def initial_state(self, d: int) -> np.ndarray:
        x = np.asarray(self.x0, dtype=np.float64)
        if x.ndim == 0:
            return np.full(d, float(x))
        if x.size != d:
            self._fail(f"initial state has {x.size} entries, model has d={d}", "x0")
        return x.reshape(d)


def _strictly_monotone(values) -> bool:
    diffs = np.diff(np.asarray(values, dtype=np.float64))
    return bool(np.all(diffs > 0) or np.all(diffs < 0))


def _steps_for(T, h):
    n = T / h
    k = int(round(n))
    return k if k >= 1 and abs(n - k) <= 1e-9 * n else None


def load_config(path) -> StudyConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", path=str(path)) from exc
    try:
        obj = loads_json(text)
    except LoadError as exc:
        raise ConfigError(str(exc), path=str(path)) from exc
    return StudyConfig.from_dict(obj, source=str(path))


def resolve_model(model, d: int | None = None, source: str | None = None):
    """(spec, nets) from a model file path, a model dict, or a builtin family name."""
    try:
        if isinstance(model, dict):
            obj = model
        elif isinstance(model, str) and model in BUILTINS:
            obj = {"family": model, "d": d or 1}
        else:
            if d is None:
                return load_model_file(model)
            obj = loads_json(Path(model).read_text(encoding="utf-8"))
        if "family" not in obj:
            raise ConfigError("model needs a 'family'", path=source, field="model")
        return builtin_model(obj["family"], int(d if d is not None else obj.get("d", 1)),
                             obj.get("params"), obj.get("declared_constants"))
    except (LoadError, InvalidArgument, OSError) as exc:
        raise ConfigError(f"cannot load model: {exc}", path=source, field="model") from exc


# Results -------------------------------------------------------------------------

@dataclass(frozen=True)
class RateFit:
    """Weighted least-squares fit of log(estimate) on log(parameter)."""

    slope: float
    intercept: float
    slope_se: float
    ci95: tuple
    r2: float
    n_used: int
    dropped: tuple = ()

    def within(self, target: float, tol: float) -> bool:
        """True when the 95% band overlaps [target - tol, target + tol]."""
        return self.ci95[0] <= target + tol and self.ci95[1] >= target - tol


def loglog_fit(x, y, se=None, drop_noisy: bool = True) -> RateFit:
    """Fit log y = a + b log x with weights from standard errors.

    The point with the smallest estimate is dropped when its standard error
    exceeds 30% of the estimate.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    se = np.zeros_like(y) if se is None else np.asarray(se, dtype=np.float64)
    keep = np.ones(x.size, dtype=bool)
    dropped = ()
    if drop_noisy and x.size > 2:
        j = int(np.argmin(y))
        if se[j] > NOISY_POINT_SE * y[j]:
            keep[j] = False
            dropped = (float(x[j]),)
    keep &= y > 0
    lx, ly = np.log(x[keep]), np.log(y[keep])
    rel = se[keep] / y[keep]
    # delta method: var(log y) ~ (se / y)^2; unweighted when any error is missing
    w = 1.0 / rel ** 2 if np.all(rel > 0) else np.ones(lx.size)
    n = lx.size
    if n < 2:
        raise InvalidArgument("need at least two usable points for a rate fit")
    X = np.column_stack([np.ones(n), lx])
    W = w / w.sum()
    xtwx = X.T @ (W[:, None] * X)
    beta = np.linalg.solve(xtwx, X.T @ (W * ly))
    resid = ly - X @ beta
    dof = n - 2
    if dof > 0:
        cov = float(W @ resid ** 2) / dof * np.linalg.inv(xtwx)
        slope_se = math.sqrt(max(cov[1, 1], 0.0))
        tq = float(stats.t.ppf(0.975, dof))
    else:
        slope_se, tq = math.inf, math.inf
    ss_tot = float(W @ (ly - W @ ly) ** 2)
    r2 = 1.0 - float(W @ resid ** 2) / ss_tot if ss_tot > 0 else 1.0
    slope = float(beta[1])
    return RateFit(slope, float(beta[0]), slope_se, (slope - tq * slope_se, slope + tq * slope_se),
                   r2, n, dropped)


@dataclass
class StudyResult:
    kind: str
    columns: tuple
    rows: list
    fit: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    timings: list = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        for row in self.rows:
            writer.writerow([_fmt(row[c]) for c in self.columns])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"format": RESULT_FORMAT, "version": RESULT_VERSION, "kind": self.kind,
                "columns": list(self.columns), "rows": _finite(self.rows),
                "fit": _finite(self.fit), "config": _finite(self.config)}

    def summary(self) -> str:
        lines = [self.to_csv().rstrip()]
        for name, value in self.fit.items():
            lines.append(f"{name}: {value}")
        return "\n".join(lines)


def _finite(obj):
    """Copy with non-finite floats replaced by None, since strict JSON has no inf or nan."""
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_result(result: StudyResult, path) -> None:
    """CSV at ``path``; the JSON form (with fit and config) next to it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(result.to_csv(), encoding="utf-8")
    path.with_suffix(".json").write_text(dumps_json(result.to_dict()), encoding="utf-8")


def load_result(path) -> StudyResult:
    try:
        obj = loads_json(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise LoadError(f"cannot read {path}: {exc}") from exc
    if not isinstance(obj, dict) or obj.get("format") != RESULT_FORMAT:
        raise LoadError("not a study result")
    if obj.get("version") != RESULT_VERSION:
        raise LoadError(f"unsupported study result version {obj.get('version')!r}")
    try:
        return StudyResult(obj["kind"], tuple(obj["columns"]), list(obj["rows"]),
                           dict(obj.get("fit", {})), dict(obj.get("config", {})))
    except (KeyError, TypeError) as exc:
        raise LoadError(f"malformed study result: {exc}") from exc


def save_realization(real: RandomnessRealization, path) -> None:
    Path(path).write_text(dumps_json(real.to_dict()), encoding="utf-8")


def load_realization(path) -> RandomnessRealization:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise LoadError(f"cannot read {path}: {exc}") from exc
    return RandomnessRealization.from_dict(loads_json(text))


# Studies -------------------------------------------------------------------------

def _rate_rows(param, values, n_steps, errors):
    return [{param: v, "n_steps": n, "estimate": e, "std_error": s}
            for v, n, (e, s) in zip(values, n_steps, errors)]


def _rate_fit(result_rows, param):
    fit = loglog_fit([r[param] for r in result_rows], [r["estimate"] for r in result_rows],
                     [r["std_error"] for r in result_rows])
    return {"slope": fit.slope, "slope_se": fit.slope_se, "ci95": list(fit.ci95),
            "r2": fit.r2, "n_used": fit.n_used, "dropped": list(fit.dropped)}


def _euler_rate(cfg, spec, nets):
    ref = cfg.reference_steps()
    steps = [_steps_for(cfg.T, h) for h in cfg.h_ladder]
    variant = "exact" if cfg.delta == 0.0 else "truncated"
    params = StrongErrorParams(cfg.T, ref, variant, cfg.delta,
                               tuple(Comparison(n, variant, cfg.delta) for n in steps),
                               cfg.delta, 0, cfg.chunk)
    errs = coupled_errors(spec, cfg.initial_state(spec.d), params, cfg.n_paths, cfg.seed,
                          nets, cfg.threads)
    rows = _rate_rows("h", [float(h) for h in cfg.h_ladder], steps, errs)
    return rows, {**_rate_fit(rows, "h"), "reference_steps": ref}


def _trunc_rate(cfg, spec, nets):
    if not spec.has_jumps:
        raise ConfigError("the truncation study needs a model with jumps", cfg.source, "model")
    ref_delta = cfg.ref_delta if cfg.ref_delta is not None else min(cfg.delta_ladder) / 32
    params = StrongErrorParams(cfg.T, cfg.n_steps, "truncated", ref_delta,
                               tuple(Comparison(cfg.n_steps, "truncated", float(dl))
                                     for dl in cfg.delta_ladder), ref_delta, 0, cfg.chunk)
    errs = coupled_errors(spec, cfg.initial_state(spec.d), params, cfg.n_paths, cfg.seed,
                          nets, cfg.threads)
    rows = _rate_rows("delta", [float(v) for v in cfg.delta_ladder],
                      [cfg.n_steps] * len(errs), errs)
    return rows, {**_rate_fit(rows, "delta"), "reference_delta": ref_delta,
                  "predicted_slope": spec.constants.p_bar}


def _mc_rate(cfg, spec, nets):
    if not (spec.has_jumps and spec.mode == COMPOUND_POISSON_MC):
        raise ConfigError("the compensator study needs a general jump coefficient",
                          cfg.source, "model")
    ms = [int(m) for m in cfg.m_ladder]
    params = StrongErrorParams(cfg.T, cfg.n_steps, "net", cfg.delta,
                               tuple(Comparison(cfg.n_steps, "net_mc", cfg.delta, m) for m in ms),
                               cfg.delta, max(ms), cfg.chunk)
    errs = coupled_errors(spec, cfg.initial_state(spec.d), params, cfg.n_paths, cfg.seed,
                          nets, cfg.threads)
    rows = _rate_rows("M", ms, [cfg.n_steps] * len(errs), errs)
    return rows, {**_rate_fit(rows, "M"), "predicted_slope": -1.0}


def size_fit(rows) -> dict:
    """OLS of log size on log(1/epsilon) and log d, with per-dimension epsilon slopes."""
    eps = np.array([r["epsilon"] for r in rows], dtype=np.float64)
    dims = np.array([r["d"] for r in rows], dtype=np.float64)
    size = np.array([r["size"] for r in rows], dtype=np.float64)
    ly = np.log(size)
    cols = [np.ones(size.size), np.log(1 / eps)]
    if np.unique(dims).size > 1:
        cols.append(np.log(dims))
    X = np.column_stack(cols)
    beta, *_ = np.linalg.lstsq(X, ly, rcond=None)
    resid = ly - X @ beta
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1 - float(resid @ resid) / ss_tot if ss_tot > 0 else 1.0
    per_d = {}
    for d in np.unique(dims):
        sel = dims == d
        if sel.sum() >= 2:
            f = loglog_fit(1 / eps[sel], size[sel], drop_noisy=False)
            per_d[str(int(d))] = {"eps_exponent": f.slope, "r2": f.r2}
    return {"eps_exponent": float(beta[1]),
            "d_exponent": float(beta[2]) if len(beta) > 2 else None,
            "r2": r2, "per_dimension": per_d}


def _size_scaling(cfg, family_obj):
    rows = []
    predicted = None
    for i, d in enumerate(int(v) for v in cfg.d_ladder):
        spec, nets = resolve_model(family_obj, d, cfg.source)
        payoff = payoff_network(cfg.payoff, d)
        for j, eps in enumerate(float(e) for e in cfg.eps_ladder):
            sched = schedule_from_epsilon(eps, d, spec.constants, spec.mode, cfg.T, cfg.c_bar, cfg.r)
            need = required_constant(spec, nets, payoff, sched)
            constants = replace(spec.constants, C=max(spec.constants.C, need))
            U = assemble_approximator(spec, nets, payoff, sched, seed=cfg.seed, key=(i, j),
                                      constants=constants)
            rows.append({"epsilon": eps, "d": d, "n_steps": sched.n_steps,
                         "n_realizations": sched.n_realizations, "size": U.size,
                         "estimate": float(U.size), "std_error": 0.0,
                         "ledger_sound": U.ledger.sound})
            predicted = predicted_exponents(constants, spec.mode, cfg.r)
            del U
    fit = size_fit(rows)
    fit["predicted_eps_exponent"] = predicted["eps_inv"]
    fit["predicted_d_exponent"] = predicted["d"]
    return rows, fit


def run_study(config: StudyConfig, log=None) -> StudyResult:
    """Run one study; writes the CSV (and JSON sidecar) when ``config.out`` is set."""
    config.validate()
    started = time.perf_counter()
    if config.kind == "size-scaling":
        model = config.model
        if isinstance(model, str) and model not in BUILTINS:
            try:
                model = loads_json(Path(model).read_text(encoding="utf-8"))
            except (OSError, LoadError) as exc:
                raise ConfigError(f"cannot load model: {exc}", config.source, "model") from exc
        rows, fit = _size_scaling(config, model)
    else:
        spec, nets = resolve_model(config.model, None, config.source)
        runner = {"euler-rate": _euler_rate, "trunc-rate": _trunc_rate, "mc-rate": _mc_rate}
        rows, fit = runner[config.kind](config, spec, nets)
    result = StudyResult(config.kind, CSV_COLUMNS[config.kind], rows, fit, config.to_dict(),
                         [time.perf_counter() - started])
    if config.out:
        write_result(result, config.out)
    if log:
        log(f"{config.kind}: {len(rows)} rows in {result.timings[0]:.2f}s")
    return result


# Basket demo ---------------------------------------------------------------------

@dataclass(frozen=True)
class BasketDemoConfig:
    model: object
    strikes: tuple
    seed: int
    x0: object = 1.0
    weights: object = None
    epsilon: float = 0.1
    c_bar: float = 0.3
    r: float = 1.0
    T: float = 1.0
    n_paths: int = 100_000
    ref_steps: int | None = None
    threads: int = 1

    def validate(self) -> None:
        if not self.strikes:
            raise ConfigError("need at least one strike", field="strikes")
        if any(k < 0 for k in self.strikes):
            raise ConfigError("strikes must be nonnegative", field="strikes")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive", field="epsilon")


@dataclass
class BasketDemoResult:
    rows: list
    rms: float
    epsilon: float
    size: int
    schedule: dict

    @property
    def passed(self) -> bool:
        return self.rms < self.epsilon

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        cols = ("strike", "mc_price", "mc_std_error", "net_price", "abs_diff")
        writer.writerow(cols)
        for row in self.rows:
            writer.writerow([_fmt(row[c]) for c in cols])
        return buf.getvalue()


def run_basket_demo(cfg: BasketDemoConfig) -> BasketDemoResult:
    """Build one strike-parametric approximator and compare it with MC at every strike."""
    cfg.validate()
    spec, nets = resolve_model(cfg.model)
    d = spec.d
    x0 = np.broadcast_to(np.asarray(cfg.x0, dtype=np.float64), (d,)).copy()
    params = {} if cfg.weights is None else {"weights": cfg.weights}
    payoff = payoff_network("parametric_basket_call", d, params)
    sched = schedule_from_epsilon(cfg.epsilon, d, spec.constants, spec.mode, cfg.T, cfg.c_bar, cfg.r)
    need = required_constant(spec, nets, payoff, sched)
    constants = replace(spec.constants, C=max(spec.constants.C, need))
    U = assemble_approximator(spec, nets, payoff, sched, seed=cfg.seed, key=(0,),
                              constants=constants)
    strikes = np.asarray(cfg.strikes, dtype=np.float64)
    K = np.zeros((strikes.size, d))
    K[:, 0] = strikes
    xs = np.tile(x0, (strikes.size, 1))
    net = U.eval(xs, K)
    ref_steps = cfg.ref_steps or 4 * sched.n_steps
    ref = mc_prices(spec, payoff, xs, K, cfg.T, ref_steps, 0.0, cfg.n_paths, cfg.seed, (1,),
                    threads=cfg.threads)
    rows = [{"strike": float(k), "mc_price": p.price, "mc_std_error": p.std_error,
             "net_price": float(v), "abs_diff": abs(float(v) - p.price)}
            for k, p, v in zip(strikes, ref, net)]
    rms = math.sqrt(sum(r["abs_diff"] ** 2 for r in rows) / len(rows))
    return BasketDemoResult(rows, rms, cfg.epsilon, U.size, sched.to_dict())


# Command line --------------------------------------------------------------------

def _floats(text):
    if text is None:
        return None
    return [float(v) for v in str(text).replace(";", ",").split(",") if v.strip()]


def _ladder(text, cast=float):
    vals = _floats(text)
    return tuple(cast(v) for v in vals) if vals else ()


def _model_arg(args):
    if args.model is None:
        raise ConfigError("--model is required", field="model")
    if args.model in BUILTINS:
        return {"family": args.model, "d": args.dim}
    return args.model


def _cmd_simulate(args):
    spec, nets = resolve_model(_model_arg(args))
    real = sample_realization(spec, args.T, args.steps, args.delta, args.M, args.seed, (),
                              args.paths)
    x = np.broadcast_to(np.asarray(_floats(args.x) or [1.0]), (spec.d,)).copy()
    variant = args.variant
    path = euler_path(spec, x, real, variant, nets if variant.startswith("net") else None,
                      guard="mask")
    terminal = path.terminal
    print(f"model {spec.name} d={spec.d}: {real.n_paths} paths, {real.n_steps} steps, "
          f"{real.n_events} jumps")
    print(f"mean terminal state: {np.nanmean(terminal, axis=0).tolist()}")
    if args.out:
        save_realization(real, args.out)
        print(f"realization written to {args.out}")
    return 0


def _cmd_build(args):
    spec, nets = resolve_model(_model_arg(args))
    payoff = payoff_network(args.payoff, spec.d, {"strike": args.strike})
    sched = schedule_from_epsilon(args.eps, spec.d, spec.constants, spec.mode, args.T,
                                  args.c_bar, args.r)
    need = required_constant(spec, nets, payoff, sched)
    constants = replace(spec.constants, C=max(spec.constants.C, need))
    U = assemble_approximator(spec, nets, payoff, sched, seed=args.seed, constants=constants)
    print(f"schedule: {sched.to_dict()}")
    print(f"size {U.size}, depth {U.network.depth}")
    print(U.ledger.summary())
    if args.out:
        U.save(args.out)
        print(f"network written to {args.out}")
    return 0


def _cmd_eval(args):
    net, meta = load_network(args.network, with_metadata=True)
    x = _floats(args.x) or []
    K = _floats(args.K) or []
    inp = np.asarray(x + K, dtype=np.float64)
    if inp.size != net.input_dim:
        raise InvalidArgument(f"network expects {net.input_dim} inputs, got {inp.size}")
    print(repr(float(net.eval(inp)[0])))
    return 0


def _cmd_price(args):
    spec, _ = resolve_model(_model_arg(args))
    payoff = payoff_network(args.payoff, spec.d, {"strike": args.strike})
    x = np.broadcast_to(np.asarray(_floats(args.x) or [1.0]), (spec.d,)).copy()
    K = None
    if payoff.param_dim:
        K = np.zeros(spec.d)
        K[0] = args.strike
    p = mc_prices(spec, payoff, x, K, args.T, args.steps, args.delta, args.paths, args.seed,
                  threads=args.threads)[0]
    print(f"price {p.price:.6f} +- {p.std_error:.6f} ({p.n_paths} paths, {p.n_excluded} excluded)")
    return 0


def _cmd_study(args):
    if args.config:
        cfg = load_config(args.config)
        overrides = {}
    else:
        if args.kind is None:
            raise ConfigError("--kind or --config is required", field="kind")
        cfg = StudyConfig(kind=args.kind, model=_model_arg(args), seed=args.seed,
                          n_paths=args.paths or 10_000)
        overrides = {}
    for flag, name, cast in (("h_ladder", "h_ladder", float), ("delta_ladder", "delta_ladder", float),
                             ("m_ladder", "m_ladder", int), ("eps_ladder", "eps_ladder", float),
                             ("d_ladder", "d_ladder", int)):
        val = getattr(args, flag)
        if val:
            overrides[name] = _ladder(val, cast)
    for flag in ("threads", "out", "seed"):
        val = getattr(args, flag)
        if val is not None:
            overrides[flag] = val
    if args.paths:
        overrides["n_paths"] = args.paths
    if args.c_bar is not None:
        overrides["c_bar"] = args.c_bar
    cfg = replace(cfg, **overrides)
    result = run_study(cfg)
    print(result.summary())
    print(f"wall time {result.timings[0]:.2f}s")
    return 0


def _cmd_basket(args):
    strikes = tuple(_floats(args.strikes) or [1.0])
    cfg = BasketDemoConfig(model=_model_arg(args), strikes=strikes, seed=args.seed,
                           x0=_floats(args.x) or 1.0, weights=_floats(args.weights),
                           epsilon=args.eps, c_bar=args.c_bar if args.c_bar is not None else 0.3,
                           n_paths=args.paths or 100_000, threads=args.threads or 1)
    res = run_basket_demo(cfg)
    out = res.to_csv()
    print(out.rstrip())
    print(f"rms strike error {res.rms:.5f} (target {res.epsilon}) size {res.size}")
    if args.out:
        Path(args.out).write_text(out, encoding="utf-8")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pidenet", description="Jump-diffusion simulation, network compilation and rate studies.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed_required=True):
        p.add_argument("--model", help="model JSON file or builtin family name")
        p.add_argument("--dim", type=int, default=1, help="dimension for builtin families")
        p.add_argument("--seed", type=int, required=seed_required)
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--out")
        p.add_argument("--paths", type=int)
        p.add_argument("--T", type=float, default=1.0)

    p = sub.add_parser("simulate", help="sample a realization and run the Euler scheme")
    common(p)
    p.add_argument("--steps", type=int, default=16)
    p.add_argument("--delta", type=float, default=0.0)
    p.add_argument("--M", type=int, default=0)
    p.add_argument("--x")
    p.add_argument("--variant", default="exact", choices=["exact", "truncated", "net", "net_mc"])
    p.set_defaults(func=_cmd_simulate, paths=1)

    p = sub.add_parser("build", help="assemble an approximator network")
    common(p)
    p.add_argument("--payoff", default="basket_call")
    p.add_argument("--strike", type=float, default=1.0)
    p.add_argument("--eps", type=float, default=0.5)
    p.add_argument("--c-bar", dest="c_bar", type=float, default=0.1)
    p.add_argument("--r", type=float, default=1.0)
    p.set_defaults(func=_cmd_build)

    p = sub.add_parser("eval", help="evaluate a saved network")
    p.add_argument("network")
    p.add_argument("--x", required=True)
    p.add_argument("--K")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("price", help="Monte Carlo price")
    common(p)
    p.add_argument("--payoff", default="basket_call")
    p.add_argument("--strike", type=float, default=1.0)
    p.add_argument("--x")
    p.add_argument("--steps", type=int, default=64)
    p.add_argument("--delta", type=float, default=0.0)
    p.set_defaults(func=_cmd_price)

    p = sub.add_parser("study", help="run a rate or size study")
    common(p, seed_required=False)
    p.add_argument("--config")
    p.add_argument("--kind", choices=STUDY_KINDS)
    p.add_argument("--h-ladder", dest="h_ladder")
    p.add_argument("--delta-ladder", dest="delta_ladder")
    p.add_argument("--m-ladder", dest="m_ladder")
    p.add_argument("--eps-ladder", dest="eps_ladder")
    p.add_argument("--d-ladder", dest="d_ladder")
    p.add_argument("--c-bar", dest="c_bar", type=float)
    p.set_defaults(func=_cmd_study)

    p = sub.add_parser("basket", help="strike-parametric basket demo")
    common(p)
    p.add_argument("--strikes", default="0.8,1.0,1.2")
    p.add_argument("--weights")
    p.add_argument("--x")
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("--c-bar", dest="c_bar", type=float)
    p.set_defaults(func=_cmd_basket)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InvalidArgument, LoadError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


__all__ = [
    "BasketDemoConfig", "BasketDemoResult", "RateFit", "StudyConfig", "StudyResult",
    "build_parser", "load_config", "load_realization", "load_result", "loglog_fit", "main",
    "resolve_model", "run_basket_demo", "run_study", "save_realization", "size_fit",
    "write_result",
]

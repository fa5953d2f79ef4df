"""Payoff networks, Monte Carlo prices, L2 errors and realization selection."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .builder import Schedule, jump_cap
from .errors import InvalidArgument, NumericFailure, SelectionFailure
from .model import COMPOUND_POISSON_MC, MULTIPLICATIVE, DeclaredConstants
from .relu_net import ReluNetwork, compose, relu_max_net
from .simulate import Variant, _run_chunks, euler_path, sample_realization
from .streams import PROBES, substream

MAX_EXCLUDED_FRACTION = 1e-3

PAYOFF_KINDS = ("basket_call", "basket_put", "call_on_max", "parametric_basket_call",
                "discrete_asian_call")


# Payoffs -------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PayoffSpec:
    """A piecewise-affine payoff and an exact network for it.

    The network reads the monitored states (Z_{t_1}, ..., Z_{t_D}) followed
    by the parameter block K (``param_dim`` entries, empty for fixed strikes).
    """

    kind: str
    d: int
    weights: np.ndarray
    strike: float
    fractions: tuple               # monitoring times as fractions of the horizon
    network: ReluNetwork
    lipschitz: float
    param_dim: int = 0

    @property
    def n_monitor(self) -> int:
        return len(self.fractions)

    def monitor_times(self, T: float) -> np.ndarray:
        return T * np.asarray(self.fractions, dtype=np.float64)

    def direct(self, values, K=None) -> np.ndarray:
        """Payoff from monitored states ``values`` of shape (B, D, d)."""
        v = np.asarray(values, dtype=np.float64)
        if v.ndim == 2:
            v = v[:, None, :]
        if self.kind == "basket_call":
            return np.maximum(v[:, -1] @ self.weights - self.strike, 0.0)
        if self.kind == "basket_put":
            return np.maximum(self.strike - v[:, -1] @ self.weights, 0.0)
        if self.kind == "call_on_max":
            return np.maximum(v[:, -1].max(axis=1) - self.strike, 0.0)
        if self.kind == "discrete_asian_call":
            return np.maximum(v.mean(axis=1) @ self.weights - self.strike, 0.0)
        K = np.atleast_2d(np.asarray(K, dtype=np.float64))
        return np.maximum(v[:, -1] @ self.weights - K[:, 0], 0.0)

    def eval_network(self, values, K=None) -> np.ndarray:
        v = np.asarray(values, dtype=np.float64)
        if v.ndim == 2:
            v = v[:, None, :]
        flat = v.reshape(v.shape[0], -1)
        if self.param_dim:
            K = np.atleast_2d(np.asarray(K, dtype=np.float64))
            K = np.broadcast_to(K, (flat.shape[0], self.param_dim))
            flat = np.hstack([flat, K])
        return self.network.eval(flat)[:, 0]


def _hinge(row, bias) -> ReluNetwork:
    row = np.atleast_2d(np.asarray(row, dtype=np.float64))
    return ReluNetwork.from_arrays([(row, np.array([bias], dtype=np.float64)),
                                    (np.ones((1, 1)), np.zeros(1))])


def payoff_network(kind: str, d: int, params: dict | None = None) -> PayoffSpec:
    """Exact network payoff of ``kind`` on R^d.

    ``params``: ``weights`` (scalar or d-vector, default 1/d each), ``strike``
    (default 1), ``n_monitor`` (Asian only, default 2).
    """
    params = dict(params or {})
    if kind not in PAYOFF_KINDS:
        raise InvalidArgument(f"unsupported payoff {kind!r}; choose from {PAYOFF_KINDS}")
    if d < 1:
        raise InvalidArgument("dimension must be positive")
    w = np.broadcast_to(np.asarray(params.get("weights", 1.0 / d), dtype=np.float64),
                        (d,)).copy()
    strike = float(params.get("strike", 1.0))
    wn = float(np.linalg.norm(w))
    if kind == "basket_call":
        return PayoffSpec(kind, d, w, strike, (1.0,), _hinge(w, -strike), wn)
    if kind == "basket_put":
        return PayoffSpec(kind, d, w, strike, (1.0,), _hinge(-w, strike), wn)
    if kind == "call_on_max":
        net = compose(_hinge([1.0], -strike), relu_max_net(d))
        return PayoffSpec(kind, d, w, strike, (1.0,), net, 1.0)
    if kind == "parametric_basket_call":
        row = np.concatenate([w, [-1.0], np.zeros(d - 1)])
        return PayoffSpec(kind, d, w, math.nan, (1.0,), _hinge(row, 0.0),
                          math.sqrt(wn * wn + 1.0), param_dim=d)
    n_mon = int(params.get("n_monitor", 2))
    if n_mon < 1:
        raise InvalidArgument("an Asian payoff needs at least one monitoring date")
    row = np.tile(w / n_mon, n_mon)
    fractions = tuple((j + 1) / n_mon for j in range(n_mon))
    return PayoffSpec(kind, d, w, strike, fractions, _hinge(row, -strike), wn / math.sqrt(n_mon))


# Measures ------------------------------------------------------------------------

@dataclass(frozen=True)
class UniformCube:
    """Uniform law of x on [low, high]^d, with K uniform on [k_low, k_high]^k if k > 0."""

    d: int
    low: float = 0.0
    high: float = 1.0
    param_dim: int = 0
    k_low: float = 0.0
    k_high: float = 1.0

    def sample(self, rng, n):
        x = rng.uniform(self.low, self.high, (n, self.d))
        K = rng.uniform(self.k_low, self.k_high, (n, self.param_dim))
        return x, K

    def atoms(self):
        return None

    def second_moment(self) -> float:
        def mean_sq(a, b):
            return (b ** 3 - a ** 3) / (3 * (b - a)) if b != a else a * a
        return (1.0 + self.d * mean_sq(self.low, self.high)
                + self.param_dim * mean_sq(self.k_low, self.k_high))


@dataclass(frozen=True)
class PointMass:
    """Equal weights on (x0, K_i) for each listed parameter vector."""

    x0: np.ndarray
    params: tuple = ((),)

    @property
    def d(self):
        return np.asarray(self.x0).size

    @property
    def param_dim(self):
        return len(self.params[0])

    def atoms(self):
        x = np.tile(np.asarray(self.x0, dtype=np.float64), (len(self.params), 1))
        K = np.asarray(self.params, dtype=np.float64).reshape(len(self.params), -1)
        return x, K, np.full(len(self.params), 1.0 / len(self.params))

    def sample(self, rng, n):
        x, K, _ = self.atoms()
        idx = rng.integers(0, x.shape[0], n)
        return x[idx], K[idx]

    def second_moment(self) -> float:
        x, K, w = self.atoms()
        return float(w @ (1 + np.sum(x * x, axis=1) + np.sum(K * K, axis=1)))


@dataclass(frozen=True)
class ProductOfPointSets:
    """Equal weights on every pair (x_i, K_j)."""

    points: tuple
    params: tuple = ((),)

    @property
    def d(self):
        return len(self.points[0])

    @property
    def param_dim(self):
        return len(self.params[0])

    def atoms(self):
        pairs = list(itertools.product(self.points, self.params))
        x = np.asarray([p[0] for p in pairs], dtype=np.float64).reshape(len(pairs), -1)
        K = np.asarray([p[1] for p in pairs], dtype=np.float64).reshape(len(pairs), -1)
        return x, K, np.full(len(pairs), 1.0 / len(pairs))

    def sample(self, rng, n):
        x, K, _ = self.atoms()
        idx = rng.integers(0, x.shape[0], n)
        return x[idx], K[idx]

    def second_moment(self) -> float:
        x, K, w = self.atoms()
        return float(w @ (1 + np.sum(x * x, axis=1) + np.sum(K * K, axis=1)))


# Monte Carlo prices ------------------------------------------------------------

@dataclass(frozen=True)
class MCPrice:
    price: float
    std_error: float
    n_paths: int
    n_excluded: int = 0


def _price_stats(s1, s2, n):
    mean = s1 / n
    var = max(s2 / n - mean * mean, 0.0) * n / max(n - 1, 1)
    return mean, math.sqrt(var / n)


def mc_prices(spec, payoff: PayoffSpec, xs, Ks=None, T: float = 1.0, n_steps: int = 64,
              delta: float = 0.0, n_paths: int = 10_000, seed: int = 0, key: tuple = (),
              chunk: int = 4096, threads: int = 1) -> list:
    """Monte Carlo prices at several points (x_j, K_j) from the same Euler paths."""
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    r = xs.shape[0]
    if payoff.param_dim:
        Ks = np.broadcast_to(np.atleast_2d(np.asarray(Ks, dtype=np.float64)), (r, payoff.param_dim))
    if n_paths < 2:
        raise InvalidArgument("need at least two paths for a standard error")
    variant = Variant.EXACT if delta == 0.0 else Variant.TRUNCATED
    times = payoff.monitor_times(T)
    chunk = max(1, min(chunk, max(1, 400_000 // max(r, 1))))

    def work(index, start, stop):
        real = sample_realization(spec, T, n_steps, delta, 0, seed, tuple(key) + (index,),
                                  stop - start, times)
        path = euler_path(spec, xs, real, variant, store="terminal", guard="mask")
        kk = None if not payoff.param_dim else np.tile(Ks, (stop - start, 1))
        vals = payoff.direct(path.monitor_values, kk).reshape(stop - start, r)
        bad = np.isnan(vals)
        vals = np.where(bad, 0.0, vals)
        return vals.sum(axis=0), (vals * vals).sum(axis=0), bad.sum(axis=0)

    parts = _run_chunks(work, n_paths, chunk, threads)
    out = []
    for j in range(r):
        s1 = math.fsum(p[0][j] for p in parts)
        s2 = math.fsum(p[1][j] for p in parts)
        bad = int(sum(p[2][j] for p in parts))
        if bad > MAX_EXCLUDED_FRACTION * n_paths:
            raise NumericFailure(f"{bad} of {n_paths} paths left the finite range "
                                 f"(limit {MAX_EXCLUDED_FRACTION:.1%})")
        used = n_paths - bad
        mean, se = _price_stats(s1, s2, used)
        out.append(MCPrice(mean, se, used, bad))
    return out


def mc_price(spec, payoff: PayoffSpec, x, K=None, T: float = 1.0, n_steps: int = 64,
             delta: float = 0.0, n_paths: int = 10_000, seed: int = 0, key: tuple = (),
             chunk: int = 4096, threads: int = 1) -> MCPrice:
    """Plain Monte Carlo price of the Euler-discretized payoff at one point."""
    return mc_prices(spec, payoff, np.atleast_2d(x), None if K is None else np.atleast_2d(K),
                     T, n_steps, delta, n_paths, seed, key, chunk, threads)[0]


def black_scholes_call(spot: float, strike: float, vol: float, T: float, rate: float = 0.0) -> float:
    """Closed-form European call under geometric Brownian motion."""
    if strike <= 0:
        return spot - strike * math.exp(-rate * T)
    sd = vol * math.sqrt(T)
    d1 = (math.log(spot / strike) + (rate + 0.5 * vol * vol) * T) / sd
    return float(spot * ndtr(d1) - strike * math.exp(-rate * T) * ndtr(d1 - sd))


# L2 error -----------------------------------------------------------------------

@dataclass(frozen=True)
class L2Error:
    error: float
    std_error: float
    band: tuple
    n_points: int


def _reference_prices(spec, payoff, x, K, T, ref_steps, delta, ref_paths, seed):
    prices = mc_prices(spec, payoff, x, K if payoff.param_dim else None, T, ref_steps, delta,
                       ref_paths, seed, (PROBES, 1))
    return np.array([p.price for p in prices]), np.array([p.std_error for p in prices])


def l2_error(approximator, spec, payoff: PayoffSpec, measure, n_mu_samples: int = 256,
             seed: int = 0, ref_paths: int = 20_000, ref_steps: int | None = None,
             delta: float = 0.0, reference=None) -> L2Error:
    """Root-mean-square gap between the approximator and Monte Carlo prices under ``measure``.

    Discrete measures are integrated exactly over their atoms.  ``reference``
    may supply precomputed ``(x, K, weights, prices, std_errors)``.
    """
    if measure.d != approximator.state_dim or measure.param_dim != approximator.param_dim:
        raise InvalidArgument("measure and approximator dimensions differ")
    if reference is None:
        reference = reference_points(spec, payoff, measure, approximator.schedule.T,
                                     ref_steps or 64 * approximator.schedule.n_steps,
                                     n_mu_samples, seed, ref_paths, delta)
    x, K, w, ref, ref_se = reference
    approx = approximator.eval(x, K if approximator.param_dim else None)
    return weighted_rms(approx - ref, w, ref_se)


def reference_points(spec, payoff, measure, T, ref_steps, n_mu_samples, seed, ref_paths,
                     delta=0.0):
    atoms = measure.atoms()
    if atoms is None:
        x, K = measure.sample(substream(seed, PROBES, 0), n_mu_samples)
        w = np.full(n_mu_samples, 1.0 / n_mu_samples)
    else:
        x, K, w = atoms
    ref, ref_se = _reference_prices(spec, payoff, x, K, T, ref_steps, delta, ref_paths, seed)
    return x, K, w, ref, ref_se


def weighted_rms(diff, w, ref_se) -> L2Error:
    sq = diff * diff
    mean_sq = float(w @ sq)
    err = math.sqrt(mean_sq)
    n = diff.size
    sampled = np.allclose(w, w[0])
    var_mu = float(np.var(sq, ddof=1)) / n if n > 1 and sampled else 0.0
    se_mu = math.sqrt(var_mu) / (2 * err) if err > 0 else 0.0
    se_ref = math.sqrt(float(w @ (ref_se * ref_se)))
    se = math.hypot(se_mu, se_ref)
    return L2Error(err, se, (max(err - 1.96 * se, 0.0), err + 1.96 * se), n)


# Schedules -----------------------------------------------------------------------

def schedule_formulas(epsilon, d, constants: DeclaredConstants, mode=MULTIPLICATIVE,
                      c_bar: float = 1.0, r: float = 1.0, p_tilde=None, q_tilde=None) -> dict:
    """Unrounded accuracy, step, truncation and sample-count choices for target epsilon."""
    if not epsilon > 0:
        raise InvalidArgument("epsilon must be positive")
    q = constants.q
    if mode == MULTIPLICATIVE:
        eb = epsilon / (max(6 * c_bar, 1.0) * d ** r)
        h = epsilon ** 2 / (9 * c_bar * d ** r * eb ** (-3 * q))
        n_real = 3 * epsilon ** -2 * c_bar * d ** r * eb ** (-4 * q)
        return {"eps_bar": eb, "h": h, "n_realizations": n_real, "delta": 0.0, "M": 0.0}
    if mode != COMPOUND_POISSON_MC:
        raise InvalidArgument(f"unknown jump regime {mode!r}")
    c_t = constants.C * c_bar
    pt = r + constants.p if p_tilde is None else p_tilde
    qt = constants.q_bar if q_tilde is None else q_tilde
    eb = epsilon / (max(8 * math.sqrt(3) * c_t, 1.0) * d ** pt)
    h = epsilon ** 2 / (max(48 * c_t, 1.0) * d ** pt * eb ** (-3 * q))
    delta = h ** (1.0 / constants.p_bar)
    M = (epsilon ** -2 * delta ** -2 * eb ** (-6 * q) * d ** max(pt, qt)
         * max(12 * c_t, constants.L_tilde))
    n_real = 12 * epsilon ** -2 * c_t * d ** pt * eb ** (-4 * q)
    return {"eps_bar": eb, "h": h, "n_realizations": n_real, "delta": delta, "M": M}


def schedule_from_epsilon(epsilon, d, constants: DeclaredConstants, mode=MULTIPLICATIVE,
                          T: float = 1.0, c_bar: float = 1.0, r: float = 1.0,
                          p_tilde=None, q_tilde=None) -> Schedule:
    """Round the formula values onto a uniform grid of [0, T].

    The step count is ceil(T / h), so the grid step never exceeds the
    formula step; the truncation level is recomputed from the grid step.
    """
    f = schedule_formulas(epsilon, d, constants, mode, c_bar, r, p_tilde, q_tilde)
    n_steps = max(1, math.ceil(T / f["h"] - 1e-9))
    n_real = max(1, math.ceil(f["n_realizations"] - 1e-9))
    if mode == MULTIPLICATIVE:
        return Schedule(epsilon, f["eps_bar"], T, n_steps, n_real, mode)
    h = T / n_steps
    delta = h ** (1.0 / constants.p_bar)
    M = math.ceil(f["M"] * (f["delta"] / delta) ** 2 - 1e-9)
    return Schedule(epsilon, f["eps_bar"], T, n_steps, n_real, mode, delta, max(M, 1))


# Realization selection ------------------------------------------------------------

@dataclass
class Selection:
    realizations: list
    attempts: int
    R: float
    jump_counts: list
    history: list = field(default_factory=list)


def candidate_average(spec, nets, payoff, realizations, x, K, variant):
    """Mean over realizations of the network-coefficient payoff at points (x, K)."""
    total = np.zeros(x.shape[0])
    for real in realizations:
        path = euler_path(spec, x, real, variant, nets, store="terminal")
        total += payoff.direct(path.monitor_values, K if payoff.param_dim else None)
    return total / len(realizations)


def select_realization_set(spec, nets, payoff: PayoffSpec, schedule: Schedule, measure,
                           max_attempts: int = 10, seed: int = 0, n_mu_samples: int = 256,
                           ref_paths: int = 20_000, ref_steps: int | None = None,
                           reference=None, constants=None) -> Selection:
    """Draw candidate realization tuples until one has R < eps^2 and few enough jumps.

    R is evaluated by simulating the network-coefficient scheme on each
    candidate realization, which equals the compiled network's output.
    """
    if max_attempts < 1:
        raise InvalidArgument("max_attempts must be at least 1")
    constants = constants or spec.constants
    mc = spec.has_jumps and spec.mode == COMPOUND_POISSON_MC
    if reference is None:
        reference = reference_points(spec, payoff, measure, schedule.T,
                                     ref_steps or 64 * schedule.n_steps, n_mu_samples, seed,
                                     ref_paths, 0.0)
    x, K, w, ref, _ = reference
    cap = jump_cap(spec, constants, schedule) if mc else math.inf
    variant = Variant.NET_MC if mc else Variant.NET
    times = payoff.monitor_times(schedule.T)
    history, best = [], None
    delta = schedule.delta if spec.has_jumps else 0.0
    for attempt in range(max_attempts):
        reals = [sample_realization(spec, schedule.T, schedule.n_steps, delta, schedule.M,
                                    seed, (attempt, i), 1, times)
                 for i in range(schedule.n_realizations)]
        counts = [r.n_events for r in reals]
        approx = candidate_average(spec, nets, payoff, reals, x, K, variant)
        R = float(w @ (approx - ref) ** 2)
        ok_jumps = max(counts) <= cap
        history.append({"attempt": attempt + 1, "R": R, "max_jumps": max(counts),
                        "accepted": bool(R < schedule.epsilon ** 2 and ok_jumps)})
        cand = Selection(reals, attempt + 1, R, counts, history)
        if best is None or R < best.R:
            best = cand
        if history[-1]["accepted"]:
            return cand
    raise SelectionFailure(f"no candidate accepted in {max_attempts} attempts "
                           f"(best R = {best.R:.4g}, target {schedule.epsilon ** 2:.4g})", best=best)


__all__ = [
    "L2Error", "MCPrice", "PAYOFF_KINDS", "PayoffSpec", "PointMass", "ProductOfPointSets",
    "Selection", "UniformCube", "black_scholes_call", "candidate_average", "l2_error",
    "mc_price", "mc_prices", "payoff_network", "reference_points", "schedule_formulas",
    "schedule_from_epsilon", "select_realization_set", "weighted_rms",
]

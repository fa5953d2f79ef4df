"""Compile frozen randomness into ReLU networks.

For a fixed realization the Euler update from t_n to t is an x-independent
weighted sum of coefficient networks, so it is itself a network.  Chaining
those steps gives the path map x -> Z_t, composing with a payoff network
gives one sample of the discounted payoff, and averaging over realizations
gives the approximator U(x, K).

Every assembly records its actual size next to the a-priori size bounds in
a :class:`SizeLedger`.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InvalidArgument
from .model import COMPOUND_POISSON_MC, MULTIPLICATIVE, CoefficientNets, JumpDiffusionSpec
from .relu_net import (ReluNetwork, affine_combine, compose, freeze_inputs, identity_net,
                       lift_to_depth, parallelize, save_network)
from .simulate import RandomnessRealization, _Stepper, sample_realization

MIN_DEPTH = 3   # two affine maps, i.e. at least one hidden layer


@dataclass(frozen=True)
class Schedule:
    """Discretization parameters of one approximator build."""

    epsilon: float
    eps_bar: float
    T: float
    n_steps: int
    n_realizations: int
    mode: str = MULTIPLICATIVE
    delta: float = 0.0
    M: int = 0

    def __post_init__(self):
        if self.n_steps < 1 or self.n_realizations < 1:
            raise InvalidArgument("a schedule needs at least one step and one realization")
        if self.T <= 0:
            raise InvalidArgument("horizon must be positive")
        if self.mode == COMPOUND_POISSON_MC and self.M < 1:
            raise InvalidArgument("the Monte Carlo compensator needs M >= 1")

    @property
    def h(self) -> float:
        return self.T / self.n_steps

    def to_dict(self) -> dict:
        out = asdict(self)
        out["h"] = self.h
        return out


# Size ledger -----------------------------------------------------------------

@dataclass
class LedgerEntry:
    level: str
    bound: str
    checked: int = 0
    violations: int = 0
    max_ratio: float = 0.0
    worst_actual: float = 0.0
    worst_bound: float = math.inf

    def record(self, actual: float, bound: float) -> None:
        self.checked += 1
        ratio = actual / bound if bound > 0 else math.inf
        if actual > bound:
            self.violations += 1
        if ratio >= self.max_ratio:
            self.max_ratio, self.worst_actual, self.worst_bound = ratio, float(actual), float(bound)


@dataclass
class SizeLedger:
    """Actual-versus-bound size records, aggregated per (level, bound)."""

    entries: dict = field(default_factory=dict)
    premises: dict = field(default_factory=dict)

    def record(self, level: str, bound_name: str, actual: float, bound: float) -> None:
        key = (level, bound_name)
        if key not in self.entries:
            self.entries[key] = LedgerEntry(level, bound_name)
        self.entries[key].record(actual, bound)

    def premise(self, name: str, value: float, limit: float) -> None:
        ok = bool(value <= limit)
        prev = self.premises.get(name)
        if prev is None or (prev["holds"] and not ok) or value > prev["value"]:
            self.premises[name] = {"value": float(value), "limit": float(limit),
                                   "holds": ok and (prev is None or prev["holds"])}

    @property
    def premises_hold(self) -> bool:
        return all(p["holds"] for p in self.premises.values())

    @property
    def violations(self) -> list:
        return [e for e in self.entries.values() if e.violations]

    @property
    def sound(self) -> bool:
        return not self.violations

    def merge(self, other: "SizeLedger") -> None:
        for key, e in other.entries.items():
            mine = self.entries.setdefault(key, LedgerEntry(*key))
            mine.checked += e.checked
            mine.violations += e.violations
            if e.max_ratio >= mine.max_ratio:
                mine.max_ratio, mine.worst_actual, mine.worst_bound = \
                    e.max_ratio, e.worst_actual, e.worst_bound
        for name, p in other.premises.items():
            self.premise(name, p["value"], p["limit"])
            if not p["holds"]:
                self.premises[name]["holds"] = False

    def to_dict(self) -> dict:
        return {
            "entries": [{k: (None if isinstance(v, float) and not math.isfinite(v) else v)
                         for k, v in asdict(e).items()} for e in self.entries.values()],
            "premises": self.premises,
        }

    def summary(self) -> str:
        lines = [f"{'level':<10} {'bound':<22} {'checked':>7} {'viol':>5} {'max ratio':>10}"]
        for e in self.entries.values():
            lines.append(f"{e.level:<10} {e.bound:<22} {e.checked:>7} {e.violations:>5} "
                         f"{e.max_ratio:>10.3g}")
        for name, p in self.premises.items():
            flag = "ok" if p["holds"] else "VIOLATED"
            lines.append(f"premise {name}: {p['value']:.4g} <= {p['limit']:.4g} {flag}")
        return "\n".join(lines)


# Closed-form bounds ------------------------------------------------------------

def _budget(constants, d, eps_bar, exponent):
    return constants.C * d ** constants.p * eps_bar ** (-exponent)


def step_bound(spec, constants, eps_bar, schedule=None) -> float:
    """Closed bound on one step network for the model's jump regime."""
    d = spec.d
    if spec.mode == MULTIPLICATIVE:
        return (1 + 6 * d + 8 * d * d) * 2 * _budget(constants, d, eps_bar, constants.q_hat)
    c = constants
    return (12 * c.C * max(1.0, 2 * schedule.T * c.L_tilde) * d ** (c.p + c.q_bar + 2)
            * eps_bar ** (-c.q_hat) * (1 + 2 * schedule.delta ** -2 + schedule.M))


def step_bound_given_jumps(spec, constants, eps_bar, n_jumps, M) -> float:
    """Step bound for compensator mode before the jump count is capped."""
    d = spec.d
    return 2 * _budget(constants, d, eps_bar, constants.q_hat) * (
        1 + n_jumps + M + 3 * d + 2 * d * d + 2 * d * n_jumps + 2 * d * M)


def jump_cap(spec, constants, schedule) -> float:
    """Largest jump count a selected realization may carry."""
    return 3 * schedule.T * schedule.delta ** -2 * constants.L_tilde * spec.d ** constants.q_bar


def payoff_closed_bound(spec, constants, schedule, param_blocks: int) -> float:
    c, d, h = constants, spec.d, schedule.h
    k = max(param_blocks, 1)
    if spec.mode == MULTIPLICATIVE:
        c_tilde = 4200 * max(c.C, 1.0) * k * schedule.T * c.C
        return c_tilde / h * d ** (2 * c.p + 4) * schedule.eps_bar ** (-c.q - c.q_hat)
    c0 = 12 * c.C * max(1.0, 2 * schedule.T * c.L_tilde)
    c_tilde = 60 * c.C * max(1.0, 7 * k * c0) * max(schedule.T, 1.0)
    return (c_tilde / h * schedule.delta ** -2 * d ** (2 * c.p + c.q_bar + 3)
            * schedule.eps_bar ** (-c.q - c.q_hat) * (1 + schedule.M))


def payoff_bracket_bound(spec, constants, schedule, n_monitor, param_blocks, step_size_bound):
    """Middle form of the payoff-level bound: explicit in D, k, N and the step bound."""
    d = spec.d
    n = schedule.n_steps
    base = 2 * _budget(constants, d, schedule.eps_bar, constants.q_hat)
    spread = (4 * n_monitor + 2 * param_blocks * d + 8 * n_monitor * d) * (2 + 3 * n)
    if spec.mode == MULTIPLICATIVE:
        return (1 + spread * (1 + 6 * d + 8 * d * d)) * base
    return base + spread * step_size_bound


def predicted_exponents(constants, mode=MULTIPLICATIVE, r=1.0, p_tilde=None, q_tilde=None):
    """Exponents of d and 1/epsilon in the size bound of the assembled network."""
    p, q, qh = constants.p, constants.q, constants.q_hat
    if mode == MULTIPLICATIVE:
        return {"d": 2 * p + 4 + 2 * r + 8 * q * r + qh * r, "eps_inv": 4 + 8 * q + qh}
    pb, qb = constants.p_bar, constants.q_bar
    pt = r + p if p_tilde is None else p_tilde
    qt = qb if q_tilde is None else q_tilde
    return {
        "d": (3 * pt + 4 * pt / pb + qt + 2 * p + qb + 3 + 14 * q * pt + qh * pt
              + 12 * q * pt / pb),
        "eps_inv": 6 + 8 / pb + 14 * q + qh + 12 * q / pb,
    }


# Step networks -----------------------------------------------------------------

def _lift_all(nets, depth):
    return [lift_to_depth(n, depth, side="input") for n in nets]


class StepCompiler:
    """Builds the one-step networks of a single-path realization.

    The lifted drift, diffusion and (multiplicative) jump networks do not
    depend on the step, so they are prepared once and reused.
    """

    def __init__(self, spec: JumpDiffusionSpec, nets: CoefficientNets,
                 realization: RandomnessRealization, delta: float | None = None,
                 M: int | None = None):
        if realization.n_paths != 1:
            raise InvalidArgument("step networks are built from a single-path realization")
        self.spec, self.nets, self.real = spec, nets, realization
        self.d = spec.d
        self.mc = spec.has_jumps and spec.mode == COMPOUND_POISSON_MC
        variant = "net_mc" if self.mc else "net"
        self.stepper = _Stepper(spec, realization, variant, nets, delta, M)
        if spec.has_jumps:
            marks = realization.event_mark
            if marks.size and np.any(np.linalg.norm(marks, axis=1) <= realization.delta):
                raise InvalidArgument("realization holds a jump mark inside the truncation ball")
        parts = [nets.beta_net, *nets.sigma_nets]
        if spec.has_jumps:
            parts += list(nets.jump_nets)
        self.depth = max([MIN_DEPTH] + [n.depth for n in parts])
        self.identity = identity_net(self.d, self.depth - 1)
        self.beta = lift_to_depth(nets.beta_net, self.depth)
        self.sigma = _lift_all(nets.sigma_nets, self.depth)
        self.F = _lift_all(nets.jump_nets, self.depth) if spec.has_jumps and not self.mc else []
        self._frozen = {}

    def _frozen_gamma(self, z):
        key = tuple(np.asarray(z, dtype=np.float64).tolist())
        net = self._frozen.get(key)
        if net is None:
            raw = freeze_inputs(self.nets.jump_nets[0], range(self.d, 2 * self.d), z)
            net = lift_to_depth(raw, self.depth)
            self._frozen[key] = net
        return net

    def step(self, n: int, t: float | None = None) -> ReluNetwork:
        """Network for the update from t_n to t (default t_{n+1})."""
        real = self.real
        if not 0 <= n < real.n_steps:
            raise InvalidArgument(f"step {n} outside the grid of {real.n_steps} steps")
        t_left = n * real.h
        t = (n + 1) * real.h if t is None else float(t)
        if not t_left < t <= (n + 1) * real.h * (1 + 1e-12):
            raise InvalidArgument(f"time {t} is not in ({t_left}, {(n + 1) * real.h}]")
        dt = t - t_left
        db = real.brownian_increment(n, t)[0]
        terms = [self.identity, self.beta] + self.sigma
        weights = [1.0, dt] + list(db[:len(self.sigma)])
        if self.spec.has_jumps:
            if not self.mc:
                terms += self.F
                weights += list(self.stepper.levy_increment(n, t)[0])
            else:
                events = real.events_in(n, t)
                events = events[self.stepper.active[events]]
                for e in events:
                    terms.append(self._frozen_gamma(real.event_mark[e]))
                    weights.append(1.0)
                scale = dt * self.stepper.mass / self.stepper.M if self.stepper.mass > 0 else 0.0
                if scale != 0.0:
                    for m in range(self.stepper.M):
                        terms.append(self._frozen_gamma(real.compensator_samples[0, n, m]))
                        weights.append(-scale)
        net = affine_combine(terms, weights)
        if net.depth != self.depth:
            raise AssertionError(f"step network has depth {net.depth}, expected {self.depth}")
        return net

    def jump_count(self) -> int:
        if not self.spec.has_jumps:
            return 0
        return int(np.count_nonzero(self.stepper.active))


def build_step_net(spec, nets, realization, n, t=None, delta=None, M=None) -> ReluNetwork:
    """Network mapping the state at t_n to the state at t in (t_n, t_{n+1}]."""
    return StepCompiler(spec, nets, realization, delta, M).step(n, t)


def chain_steps(step_nets, d: int | None = None) -> ReluNetwork:
    """Compose step networks in time order; an empty chain is the identity."""
    step_nets = list(step_nets)
    if not step_nets:
        if d is None:
            raise InvalidArgument("an empty chain needs the dimension")
        return identity_net(d, MIN_DEPTH - 1)
    acc = step_nets[0]
    for net in step_nets[1:]:
        acc = compose(net, acc)
    return acc


def assemble_payoff_net(psi_nets, payoff_net: ReluNetwork, param_dim: int = 0,
                        times=None) -> ReluNetwork:
    """Payoff applied to the path maps at the monitoring times, with K passed through.

    The path maps share the input x; the parameter block K enters through a
    separate identity channel, so the result reads (x, K).
    """
    psi_nets = list(psi_nets)
    if not psi_nets:
        raise InvalidArgument("need at least one monitoring time")
    if times is not None and np.any(np.diff(np.asarray(times, dtype=np.float64)) <= 0):
        raise InvalidArgument("monitoring times must be strictly increasing")
    d = psi_nets[0].input_dim
    expected = d * len(psi_nets) + param_dim
    if payoff_net.input_dim != expected:
        raise InvalidArgument(f"payoff network expects {payoff_net.input_dim} inputs, "
                              f"monitoring block provides {expected}")
    depth = max(n.depth for n in psi_nets)
    lifted = [lift_to_depth(n, depth, side="output") for n in psi_nets]
    block = parallelize(lifted, distinct_inputs=False)
    if param_dim:
        block = parallelize([block, identity_net(param_dim, depth - 1)], distinct_inputs=True)
    return compose(payoff_net, block)


# Full assembly -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class AssembledApproximator:
    network: ReluNetwork
    schedule: Schedule
    monitor_times: tuple
    param_dim: int
    ledger: SizeLedger
    component_sizes: tuple = ()

    @property
    def size(self) -> int:
        return self.network.size

    @property
    def state_dim(self) -> int:
        return self.network.input_dim - self.param_dim

    def eval(self, x, K=None) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if self.param_dim:
            if K is None:
                raise InvalidArgument("this approximator takes a parameter input K")
            K = np.atleast_2d(np.asarray(K, dtype=np.float64))
            if K.shape[0] == 1 and x.shape[0] > 1:
                K = np.repeat(K, x.shape[0], axis=0)
            x = np.hstack([x, K])
        return self.network.eval(x)[:, 0]

    def metadata(self) -> dict:
        return {"schedule": self.schedule.to_dict(), "monitor_times": list(self.monitor_times),
                "param_dim": self.param_dim, "size": self.size,
                "size_ledger": self.ledger.to_dict()}

    def save(self, path, encoding: str = "sparse") -> None:
        save_network(self.network, path, metadata=self.metadata(), encoding=encoding)


def _monitor_times(payoff, T):
    return tuple(float(t) for t in payoff.monitor_times(T))


def check_premises(ledger, spec, nets, payoff, schedule, constants):
    d = spec.d
    eb = schedule.eps_bar
    size_budget = _budget(constants, d, eb, constants.q_hat)
    ledger.premise("coefficient_size", nets.coefficient_size, size_budget)
    if spec.has_jumps:
        ledger.premise("jump_net_size", nets.max_jump_size, size_budget)
    ledger.premise("payoff_size", payoff.network.size, size_budget)
    ledger.premise("monitor_count_plus_lipschitz",
                   len(payoff.monitor_times(schedule.T)) + payoff.lipschitz,
                   _budget(constants, d, eb, constants.q))


def required_constant(spec, nets, payoff, schedule, constants=None) -> float:
    """Smallest C for which the network-size premises of the ledger hold."""
    c = constants or spec.constants
    d, eb = spec.d, schedule.eps_bar
    sizes = [nets.coefficient_size, nets.max_jump_size, payoff.network.size, 1]
    need = max(sizes) / (d ** c.p * eb ** (-c.q_hat))
    lip = (len(payoff.monitor_times(schedule.T)) + payoff.lipschitz) / (d ** c.p * eb ** (-c.q))
    return max(1.0, need, lip)


def compile_realization(spec, nets, payoff, schedule, realization, constants, ledger):
    """The payoff-composed path network for one realization; records sizes in ``ledger``."""
    times = _monitor_times(payoff, schedule.T)
    comp = StepCompiler(spec, nets, realization, schedule.delta if spec.has_jumps else None,
                        schedule.M if (spec.has_jumps and spec.mode == COMPOUND_POISSON_MC) else None)
    mc = comp.mc
    s_bound = step_bound(spec, constants, schedule.eps_bar, schedule)
    n_jumps = comp.jump_count()
    if mc:
        cap = jump_cap(spec, constants, schedule)
        ledger.premise("jump_count", n_jumps, cap)
        omega_bound = step_bound_given_jumps(spec, constants, schedule.eps_bar, n_jumps, schedule.M)

    full = []
    for n in range(realization.n_steps):
        net = comp.step(n)
        full.append(net)
        ledger.record("step", "closed", net.size, s_bound)
        if mc:
            ledger.record("step", "given_jumps", net.size, omega_bound)

    psis = []
    for t in times:
        g = realization.grid_index(t)
        if g is not None:
            n_full, last = g, None
        else:
            n_full = realization.step_of(t)
            last = comp.step(n_full, t)
            ledger.record("step", "closed", last.size, s_bound)
        chain = full[:n_full] + ([last] if last is not None else [])
        psi = chain_steps(chain, spec.d)
        psis.append(psi)
        if chain:
            recursion = 2 * chain[-1].size + 3 * sum(c.size for c in chain[:-1])
            ledger.record("chain", "recursion", psi.size, recursion)
            ledger.record("chain", "closed", psi.size, (2 + 3 * (len(chain) - 1)) * s_bound)

    bar = assemble_payoff_net(psis, payoff.network, payoff.param_dim, times)
    depth = max(p.depth for p in psis)
    lifted_sizes = [lift_to_depth(p, depth, side="output").size for p in psis]
    k_identity = 2 * payoff.param_dim * (depth - 1) if payoff.param_dim else 0
    structural = 2 * payoff.network.size + 2 * (sum(lifted_sizes) + k_identity)
    ledger.record("payoff", "structural", bar.size, structural)
    k_blocks = payoff.param_dim // spec.d if payoff.param_dim else 0
    bracket = payoff_bracket_bound(spec, constants, schedule, len(times), k_blocks,
                                   s_bound)
    ledger.record("payoff", "bracket", bar.size, bracket)
    ledger.record("payoff", "closed", bar.size, payoff_closed_bound(spec, constants, schedule, k_blocks))
    if bar.size_out != payoff.network.size_out:
        ledger.record("payoff", "size_out", bar.size_out, payoff.network.size_out)
    return bar, n_jumps


def assemble_approximator(spec: JumpDiffusionSpec, nets: CoefficientNets, payoff,
                          schedule: Schedule, realizations=None, seed: int | None = None,
                          key: tuple = (), constants=None) -> AssembledApproximator:
    """Average of payoff-composed path networks over ``schedule.n_realizations`` realizations.

    Either pass the realizations or a seed; realization i is then drawn
    from stream ``(seed, *key, i)``.
    """
    constants = constants or spec.constants
    if spec.has_jumps and spec.mode != schedule.mode:
        raise InvalidArgument(f"schedule is for {schedule.mode} but the model is {spec.mode}")
    times = _monitor_times(payoff, schedule.T)
    if realizations is None:
        if seed is None:
            raise InvalidArgument("pass realizations or an explicit seed")
        realizations = [sample_realization(spec, schedule.T, schedule.n_steps,
                                           schedule.delta if spec.has_jumps else 0.0,
                                           schedule.M, seed, tuple(key) + (i,), 1, times)
                        for i in range(schedule.n_realizations)]
    realizations = list(realizations)
    if len(realizations) != schedule.n_realizations:
        raise InvalidArgument(f"schedule asks for {schedule.n_realizations} realizations, "
                              f"got {len(realizations)}")
    for real in realizations:
        if real.n_steps != schedule.n_steps or not math.isclose(real.T, schedule.T):
            raise InvalidArgument(
                f"realization grid (T={real.T}, N={real.n_steps}) does not match the schedule "
                f"(T={schedule.T}, N={schedule.n_steps})")

    ledger = SizeLedger()
    check_premises(ledger, spec, nets, payoff, schedule, constants)
    bars = []
    for real in realizations:
        bar, _ = compile_realization(spec, nets, payoff, schedule, real, constants, ledger)
        bars.append(bar)
    depth = max(b.depth for b in bars)
    bars = [lift_to_depth(b, depth, side="output") for b in bars]
    k = len(bars)
    network = bars[0] if k == 1 else affine_combine(bars, [1.0 / k] * k)
    ledger.record("average", "sum_of_parts", network.size, sum(b.size for b in bars))
    k_blocks = payoff.param_dim // spec.d if payoff.param_dim else 0
    ledger.record("average", "closed",
                  network.size, k * payoff_closed_bound(spec, constants, schedule, k_blocks))
    return AssembledApproximator(network, schedule, times, payoff.param_dim, ledger,
                                 tuple(b.size for b in bars))


__all__ = [
    "AssembledApproximator", "LedgerEntry", "Schedule", "SizeLedger", "StepCompiler",
    "assemble_approximator", "assemble_payoff_net", "build_step_net", "chain_steps",
    "check_premises", "compile_realization", "jump_cap", "payoff_closed_bound",
    "predicted_exponents", "required_constant", "step_bound",
]

"""Euler-Maruyama simulation of jump diffusions from frozen randomness.

A :class:`RandomnessRealization` holds every random input of one or more
sample paths: Brownian increments per step, jump events above the
truncation level, and the marks used for the Monte Carlo compensator.  It
does not depend on the initial condition, so the same realization can be
replayed from many starting points.  The builder relies on that when it
turns a path map into a network.

Four variants share the recursion and differ in the coefficients and the
compensator:

========== ================== ======================= ====================
variant    coefficients       jumps used              compensator
========== ================== ======================= ====================
exact      exact              all (needs delta = 0)   exact integral
truncated  exact              norm > delta            exact integral
net        networks           norm > delta            exact integral
net_mc     networks           norm > delta            M-sample average
========== ================== ======================= ====================
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import InvalidArgument, LoadError, NumericFailure
from .model import COMPOUND_POISSON_MC, JumpDiffusionSpec, Multiplicative
from .streams import BRIDGE, BROWNIAN, COMPENSATOR, JUMPS, chunks, substream

OVERFLOW_NORM = 1e12
REALIZATION_FORMAT = "pidenet.realization"
REALIZATION_VERSION = 1


class Variant(str, Enum):
    EXACT = "exact"
    TRUNCATED = "truncated"
    NET = "net"
    NET_MC = "net_mc"


@dataclass(frozen=True, eq=False)
class RandomnessRealization:
    """Frozen noise for ``n_paths`` paths on the grid ``t_n = n T / N``.

    Events are stored flat and sorted by (path, time); ``event_step[e]`` is
    the step n with ``t_n < time <= t_{n+1}``.
    """

    T: float
    n_steps: int
    delta: float
    brownian: np.ndarray                 # (P, N, d)
    event_path: np.ndarray               # (E,)
    event_time: np.ndarray               # (E,)
    event_mark: np.ndarray               # (E, d)
    event_step: np.ndarray               # (E,)
    compensator_samples: np.ndarray      # (P, N, M, d)
    monitor_times: np.ndarray = field(default_factory=lambda: np.empty(0))
    monitor_brownian: np.ndarray | None = None   # (P, J, d)
    seed: int | None = None
    key: tuple = ()

    @property
    def n_paths(self) -> int:
        return self.brownian.shape[0]

    @property
    def d(self) -> int:
        return self.brownian.shape[2]

    @property
    def h(self) -> float:
        return self.T / self.n_steps

    @property
    def M(self) -> int:
        return self.compensator_samples.shape[2]

    @property
    def grid(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.h

    @property
    def n_events(self) -> int:
        return self.event_time.size

    def jump_events(self, path: int = 0) -> list:
        sel = self.event_path == path
        return list(zip(self.event_time[sel].tolist(), self.event_mark[sel]))

    def jump_counts(self) -> np.ndarray:
        return np.bincount(self.event_path, minlength=self.n_paths)

    def grid_index(self, t: float) -> int | None:
        """Index n with t = t_n, or None when t is off the grid."""
        ratio = t / self.h
        n = int(round(ratio))
        return n if abs(ratio - n) <= 1e-9 * max(1.0, abs(ratio)) else None

    def step_of(self, t: float) -> int:
        """Step n with ``t_n < t <= t_{n+1}`` (t > 0)."""
        n = self.grid_index(t)
        if n is not None:
            return max(n - 1, 0)
        return min(int(math.floor(t / self.h)), self.n_steps - 1)

    def brownian_at_grid(self, n: int) -> np.ndarray:
        if n == 0:
            return np.zeros((self.n_paths, self.d))
        return np.sum(self.brownian[:, :n, :], axis=1)

    def brownian_increment(self, n: int, t: float) -> np.ndarray:
        """B_t - B_{t_n} for every path, t in (t_n, t_{n+1}]."""
        if self.grid_index(t) == n + 1:
            return self.brownian[:, n, :]
        hits = np.flatnonzero(np.isclose(self.monitor_times, t, rtol=1e-12, atol=1e-15))
        if hits.size == 0:
            raise InvalidArgument(
                f"time {t} is neither a grid point nor a sampled monitoring time")
        return self.monitor_brownian[:, hits[0], :] - self.brownian_at_grid(n)

    def events_in(self, n: int, t: float | None = None) -> np.ndarray:
        """Indices of events in step n, optionally only those with time <= t."""
        sel = self.event_step == n
        if t is not None and self.grid_index(t) != n + 1:
            sel &= self.event_time <= t
        return np.flatnonzero(sel)

    def path(self, i: int) -> "RandomnessRealization":
        sel = self.event_path == i
        mb = None if self.monitor_brownian is None else self.monitor_brownian[i:i + 1]
        return RandomnessRealization(
            self.T, self.n_steps, self.delta, self.brownian[i:i + 1],
            np.zeros(int(sel.sum()), dtype=np.int64), self.event_time[sel],
            self.event_mark[sel], self.event_step[sel], self.compensator_samples[i:i + 1],
            self.monitor_times, mb, self.seed, self.key + (i,))

    def coarsen(self, factor: int) -> "RandomnessRealization":
        """The same noise on the grid with ``n_steps / factor`` steps."""
        if factor < 1 or self.n_steps % factor:
            raise InvalidArgument(f"grid with {self.n_steps} steps is not divisible by {factor}")
        if factor == 1:
            return self
        p, n, d = self.brownian.shape
        coarse = self.brownian.reshape(p, n // factor, factor, d).sum(axis=2)
        return RandomnessRealization(
            self.T, n // factor, self.delta, coarse, self.event_path, self.event_time,
            self.event_mark, self.event_step // factor,
            self.compensator_samples[:, ::factor], self.monitor_times,
            self.monitor_brownian, self.seed, self.key)

    def to_dict(self) -> dict:
        return {
            "format": REALIZATION_FORMAT, "version": REALIZATION_VERSION,
            "T": self.T, "n_steps": self.n_steps, "delta": self.delta,
            "shape": list(self.brownian.shape), "M": self.M,
            "brownian": self.brownian.ravel().tolist(),
            "event_path": self.event_path.tolist(), "event_time": self.event_time.tolist(),
            "event_mark": self.event_mark.ravel().tolist(), "event_step": self.event_step.tolist(),
            "compensator_samples": self.compensator_samples.ravel().tolist(),
            "monitor_times": self.monitor_times.tolist(),
            "monitor_brownian": None if self.monitor_brownian is None
            else self.monitor_brownian.ravel().tolist(),
            "seed": self.seed, "key": list(self.key),
        }

    @staticmethod
    def from_dict(obj: dict) -> "RandomnessRealization":
        if not isinstance(obj, dict) or obj.get("format") != REALIZATION_FORMAT:
            raise LoadError("not a serialized realization")
        if obj.get("version") != REALIZATION_VERSION:
            raise LoadError(f"unsupported realization version {obj.get('version')!r}")
        try:
            p, n, d = obj["shape"]
            m = obj["M"]
            j = len(obj["monitor_times"])
            mb = obj["monitor_brownian"]
            return RandomnessRealization(
                float(obj["T"]), int(obj["n_steps"]), float(obj["delta"]),
                np.asarray(obj["brownian"], dtype=np.float64).reshape(p, n, d),
                np.asarray(obj["event_path"], dtype=np.int64),
                np.asarray(obj["event_time"], dtype=np.float64),
                np.asarray(obj["event_mark"], dtype=np.float64).reshape(-1, d),
                np.asarray(obj["event_step"], dtype=np.int64),
                np.asarray(obj["compensator_samples"], dtype=np.float64).reshape(p, n, m, d),
                np.asarray(obj["monitor_times"], dtype=np.float64),
                None if mb is None else np.asarray(mb, dtype=np.float64).reshape(p, j, d),
                obj.get("seed"), tuple(obj.get("key", ())))
        except (KeyError, TypeError, ValueError) as exc:
            raise LoadError(f"malformed realization record: {exc}") from exc


def sample_realization(spec: JumpDiffusionSpec, T: float, n_steps: int, delta: float = 0.0,
                       M: int = 0, seed: int = 0, key: tuple = (), n_paths: int = 1,
                       monitor_times=()) -> RandomnessRealization:
    """Draw the noise for ``n_paths`` paths; the three sources use disjoint streams."""
    if n_steps < 1:
        raise InvalidArgument("need at least one time step")
    if T <= 0:
        raise InvalidArgument("horizon must be positive")
    d = spec.d
    h = T / n_steps
    brownian = math.sqrt(h) * substream(seed, *key, BROWNIAN).standard_normal((n_paths, n_steps, d))

    empty = (np.empty(0, dtype=np.int64), np.empty(0), np.empty((0, d)), np.empty(0, dtype=np.int64))
    ev_path, ev_time, ev_mark, ev_step = empty
    comp = np.empty((n_paths, n_steps, 0, d))
    if spec.has_jumps:
        if delta == 0 and spec.levy.infinite_activity:
            raise InvalidArgument(
                "delta = 0 needs a finite-activity measure; truncate small jumps first")
        rate = spec.levy.mass_above(delta)
        rng = substream(seed, *key, JUMPS)
        counts = rng.poisson(rate * T, size=n_paths) if rate > 0 else np.zeros(n_paths, dtype=np.int64)
        total = int(counts.sum())
        ev_path = np.repeat(np.arange(n_paths, dtype=np.int64), counts)
        times = rng.uniform(0.0, T, total)
        times = np.where(times == 0.0, T, times)  # events live in (0, T]
        order = np.lexsort((times, ev_path))
        ev_path, ev_time = ev_path[order], times[order]
        ev_mark = spec.levy.sample_above(rng, total, delta) if total else np.empty((0, d))
        ev_step = np.clip(np.ceil(ev_time / h).astype(np.int64) - 1, 0, n_steps - 1)
        if spec.mode == COMPOUND_POISSON_MC and M > 0 and rate > 0:
            marks = spec.levy.sample_above(substream(seed, *key, COMPENSATOR),
                                           n_paths * n_steps * M, delta)
            comp = marks.reshape(n_paths, n_steps, M, d)

    mtimes = np.sort(np.asarray(list(monitor_times), dtype=np.float64))
    if mtimes.size and (mtimes[0] < 0 or mtimes[-1] > T * (1 + 1e-12)):
        raise InvalidArgument("monitoring times must lie in [0, T]")
    mb = _bridge_values(brownian, h, mtimes, substream(seed, *key, BRIDGE)) if mtimes.size else None
    return RandomnessRealization(T, n_steps, float(delta), brownian, ev_path, ev_time, ev_mark,
                                 ev_step, comp, mtimes, mb, seed, tuple(key))


def _bridge_values(brownian, h, times, rng):
    """Brownian values at ``times`` conditioned on the grid increments."""
    p, n, d = brownian.shape
    cum = np.concatenate([np.zeros((p, 1, d)), np.cumsum(brownian, axis=1)], axis=1)
    out = np.empty((p, times.size, d))
    last_step, left_t, left_b = -1, 0.0, None
    for j, t in enumerate(times):
        ratio = t / h
        k = int(round(ratio))
        if abs(ratio - k) <= 1e-9 * max(1.0, ratio):
            out[:, j] = cum[:, k]
            continue
        step = int(math.floor(ratio))
        if step != last_step:
            last_step, left_t, left_b = step, step * h, cum[:, step]
        right_t, right_b = (step + 1) * h, cum[:, step + 1]
        w = (t - left_t) / (right_t - left_t)
        sd = math.sqrt((t - left_t) * (right_t - t) / (right_t - left_t))
        val = left_b + w * (right_b - left_b) + sd * rng.standard_normal((p, d))
        out[:, j] = val
        left_t, left_b = t, val
    return out


@dataclass(frozen=True, eq=False)
class EulerPath:
    """Simulated states; ``values`` is (B, N+1, d) or (B, 1, d) when only the end is kept."""

    values: np.ndarray
    times: np.ndarray
    variant: Variant
    monitor_times: np.ndarray
    monitor_values: np.ndarray      # (B, J, d)
    failed: np.ndarray              # (B,) rows stopped by the overflow guard

    @property
    def terminal(self) -> np.ndarray:
        return self.values[:, -1, :]


class _Coefficients:
    def __init__(self, spec, nets, variant):
        self.spec = spec
        use_nets = variant in (Variant.NET, Variant.NET_MC)
        if use_nets and nets is None:
            raise InvalidArgument(f"variant {variant.value} needs coefficient networks")
        src = nets if use_nets else spec
        self.beta = src.beta
        self.sigma = src.sigma
        self.multiplicative = isinstance(spec.jumps, Multiplicative)
        if spec.has_jumps:
            if self.multiplicative:
                self.F = nets.F if use_nets else spec.jumps.F
                self.G = spec.jumps.G
            else:
                self.gamma = nets.gamma if use_nets else spec.jumps.gamma
        self.use_nets = use_nets


class _Stepper:
    """One Euler step of a chosen variant from the state at t_n to t in (t_n, t_{n+1}]."""

    def __init__(self, spec, realization, variant, nets=None, delta=None, M=None):
        variant = Variant(variant)
        self.spec, self.real, self.variant = spec, realization, variant
        self.coef = _Coefficients(spec, nets, variant)
        if delta is None:
            delta = realization.delta
        if variant == Variant.EXACT:
            if realization.delta != 0.0 or delta != 0.0:
                raise InvalidArgument("the exact variant needs an untruncated realization (delta = 0)")
        if delta < realization.delta:
            raise InvalidArgument(
                f"realization only holds jumps above {realization.delta}, cannot use delta={delta}")
        self.delta = float(delta)
        self.jumps = spec.has_jumps
        if variant == Variant.NET_MC and self.jumps:
            if spec.mode != COMPOUND_POISSON_MC:
                raise InvalidArgument("the Monte Carlo compensator applies to general jump coefficients")
            if delta != realization.delta:
                raise InvalidArgument("compensator samples were drawn on A_delta of the realization")
            self.M = realization.M if M is None else int(M)
            self.mass = spec.levy.mass_above(self.delta)
            # With no mass above delta the compensator vanishes and no samples are stored.
            if self.mass > 0.0 and not 1 <= self.M <= realization.M:
                raise InvalidArgument(f"need 1 <= M <= {realization.M}, got {M}")
        if self.jumps:
            norms = np.linalg.norm(realization.event_mark, axis=1)
            self.active = norms > self.delta
            if self.coef.multiplicative:
                self.g_int = spec.g_integral(self.delta)
                self.G_marks = self.coef.G(realization.event_mark) if realization.n_events else \
                    np.empty((0, spec.d))
            elif (spec.jumps.state_independent and not self.coef.use_nets):
                self.const_comp = spec.compensator(np.zeros((1, spec.d)), self.delta)[0]

    # Terms shared with the builder --------------------------------------------

    def levy_increment(self, n: int, t: float) -> np.ndarray:
        """L_t - L_{t_n} per path for multiplicative jumps: sum of G(z) minus (t - t_n) * int G."""
        real = self.real
        out = np.zeros((real.n_paths, self.spec.d))
        ev = real.events_in(n, t)
        ev = ev[self.active[ev]]
        if ev.size:
            np.add.at(out, real.event_path[ev], self.G_marks[ev])
        return out - (t - n * real.h) * self.g_int

    def jump_term(self, x, rows_path, n, t):
        """Sum over jumps in (t_n, t] of gamma(x, z), per row."""
        real = self.real
        out = np.zeros_like(x)
        ev = real.events_in(n, t)
        ev = ev[self.active[ev]]
        if ev.size == 0:
            return out
        r = x.shape[0] // real.n_paths
        rows = (real.event_path[ev][:, None] * r + np.arange(r)[None, :]).ravel()
        marks = np.repeat(real.event_mark[ev], r, axis=0)
        np.add.at(out, rows, self.coef.gamma(x[rows], marks))
        return out

    def compensator_term(self, x, n):
        if self.variant == Variant.NET_MC:
            real = self.real
            if self.mass == 0.0:
                return np.zeros_like(x)
            r = x.shape[0] // real.n_paths
            v = real.compensator_samples[:, n, :self.M, :]         # (P, M, d)
            v = np.repeat(v, r, axis=0).reshape(-1, self.spec.d)   # rows x M
            g = self.coef.gamma(np.repeat(x, self.M, axis=0), v).reshape(x.shape[0], self.M, -1)
            return (self.mass / self.M) * g.sum(axis=1)
        if hasattr(self, "const_comp"):
            return np.broadcast_to(self.const_comp, x.shape)
        gamma = self.coef.gamma if self.coef.use_nets else None
        return self.spec.compensator(x, self.delta, gamma=gamma)

    def advance(self, x, n: int, t: float):
        """State at t in (t_n, t_{n+1}] from state ``x`` (B, d) at t_n."""
        real = self.real
        p = real.n_paths
        r = x.shape[0] // p
        dt = t - n * real.h
        db = np.repeat(real.brownian_increment(n, t), r, axis=0)
        out = x + dt * self.coef.beta(x) + np.einsum("bij,bj->bi", self.coef.sigma(x), db)
        if not self.jumps:
            return out
        if self.coef.multiplicative:
            dl = np.repeat(self.levy_increment(n, t), r, axis=0)
            return out + np.einsum("bij,bj->bi", self.coef.F(x), dl)
        return out + self.jump_term(x, None, n, t) - dt * self.compensator_term(x, n)


def _initial_states(x, n_paths):
    x = np.asarray(x, dtype=np.float64)
    x = x.reshape(1, -1) if x.ndim == 1 else x
    return np.tile(x, (n_paths, 1))


def euler_path(spec: JumpDiffusionSpec, x, realization: RandomnessRealization,
               variant="exact", nets=None, delta=None, M=None, store: str = "grid",
               guard: str = "raise") -> EulerPath:
    """Run the Euler recursion of ``variant`` from ``x`` through ``realization``.

    ``x`` is one point (d,) or r points (r, d); every point is paired with
    every path, and row ``p * r + j`` holds point j on path p.
    ``guard="raise"`` aborts on a non-finite state or a state with norm above
    1e12; ``guard="mask"`` marks such rows as failed and fills them with NaN.
    """
    stepper = _Stepper(spec, realization, variant, nets, delta, M)
    state = _initial_states(x, realization.n_paths)
    if state.shape[1] != spec.d:
        raise InvalidArgument(f"initial state must have dimension {spec.d}")
    n_steps, h = realization.n_steps, realization.h
    keep_grid = store == "grid"
    values = np.empty((state.shape[0], n_steps + 1 if keep_grid else 1, spec.d))
    values[:, 0] = state
    mt = realization.monitor_times
    mvals = np.empty((state.shape[0], mt.size, spec.d))
    failed = np.zeros(state.shape[0], dtype=bool)
    for j, t in enumerate(mt):
        if t == 0.0:
            mvals[:, j] = state
    with np.errstate(over="ignore", invalid="ignore"):
        for n in range(n_steps):
            for j, t in enumerate(mt):
                if n * h < t and realization.step_of(t) == n and realization.grid_index(t) != n + 1:
                    mvals[:, j] = stepper.advance(state, n, t)
            state = stepper.advance(state, n, (n + 1) * h)
            bad = ~np.all(np.isfinite(state), axis=1)
            bad |= np.max(np.abs(state), axis=1, initial=0.0) > OVERFLOW_NORM
            bad &= ~failed
            if np.any(bad):
                row = int(np.flatnonzero(bad)[0])
                if guard == "raise":
                    raise NumericFailure(
                        f"state left the finite range at step {n + 1} (row {row})", step=n + 1, row=row)
                failed |= bad
            if np.any(failed):
                state[failed] = np.nan
            if keep_grid:
                values[:, n + 1] = state
            for j, t in enumerate(mt):
                if realization.grid_index(t) == n + 1:
                    mvals[:, j] = state
    if not keep_grid:
        values[:, 0] = state
    times = realization.grid if keep_grid else np.array([realization.T])
    return EulerPath(values, times, Variant(variant), mt, mvals, failed)


def step_update(spec, x, realization, n, t, variant="net", nets=None, path=0, delta=None, M=None):
    """One step from state(s) ``x`` at t_n to t on a single path of the realization."""
    single = realization.path(path) if realization.n_paths > 1 else realization
    stepper = _Stepper(spec, single, variant, nets, delta, M)
    return stepper.advance(np.atleast_2d(np.asarray(x, dtype=np.float64)), n, t)


# Strong errors and moments ----------------------------------------------------

@dataclass(frozen=True)
class Comparison:
    """A process compared against the reference on a coarser nested grid."""

    n_steps: int
    variant: str = "exact"
    delta: float | None = None
    M: int | None = None


@dataclass(frozen=True)
class StrongErrorParams:
    T: float
    ref_steps: int
    ref_variant: str = "exact"
    ref_delta: float = 0.0
    comparisons: tuple = ()
    realization_delta: float | None = None
    M: int = 0
    chunk: int = 2048


def _sum_stats(values):
    """Compensated sums of values and squares, combined across chunks in order."""
    return math.fsum(values[0]), math.fsum(values[1])


def _run_chunks(fn, n_total, chunk, threads):
    tasks = list(chunks(n_total, chunk))
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda t: fn(*t), tasks))
    return [fn(*t) for t in tasks]


def coupled_errors(spec, x, params: StrongErrorParams, n_paths: int, seed: int,
                   nets=None, threads: int = 1) -> list:
    """E[max over the comparison grid of |ref - cmp|^2] with standard errors.

    Every comparison is driven by the same noise as the reference: the
    Brownian increments are summed onto its grid and the jump events and
    compensator marks are shared.  Returns ``[(estimate, std_error), ...]``.
    """
    comps = params.comparisons
    for c in comps:
        if params.ref_steps % c.n_steps:
            raise InvalidArgument(f"grid with {c.n_steps} steps is not nested in {params.ref_steps}")
    real_delta = params.realization_delta
    if real_delta is None:
        deltas = [params.ref_delta] + [c.delta for c in comps if c.delta is not None]
        real_delta = min(deltas)

    def work(index, start, stop):
        real = sample_realization(spec, params.T, params.ref_steps, real_delta, params.M,
                                  seed, (index,), stop - start)
        ref = euler_path(spec, x, real, params.ref_variant, nets, params.ref_delta)
        out = []
        for c in comps:
            factor = params.ref_steps // c.n_steps
            coarse = real.coarsen(factor)
            cmp_path = euler_path(spec, x, coarse, c.variant, nets, c.delta, c.M)
            diff = ref.values[:, ::factor, :] - cmp_path.values
            sup = np.max(np.sum(diff * diff, axis=2), axis=1)
            out.append((float(np.sum(sup)), float(np.sum(sup * sup))))
        return out

    parts = _run_chunks(work, n_paths, params.chunk, threads)
    rows = x.shape[0] if np.ndim(x) == 2 else 1
    n = n_paths * rows
    results = []
    for k in range(len(comps)):
        s1 = math.fsum(p[k][0] for p in parts)
        s2 = math.fsum(p[k][1] for p in parts)
        mean = s1 / n
        var = max(s2 / n - mean * mean, 0.0) * n / max(n - 1, 1)
        results.append((mean, math.sqrt(var / n)))
    return results


def strong_error(spec, x, params: StrongErrorParams, n_paths: int, seed: int, nets=None,
                 threads: int = 1):
    """Single-comparison form of :func:`coupled_errors`."""
    if len(params.comparisons) != 1:
        raise InvalidArgument("strong_error takes exactly one comparison")
    return coupled_errors(spec, x, params, n_paths, seed, nets, threads)[0]


@dataclass(frozen=True)
class MomentEstimate:
    mean_sq: float
    std_error: float
    sup_mean_sq: float
    sup_std_error: float


def moment_probe(spec, x, t: float, n_paths: int, seed: int, n_steps: int = 64,
                 delta: float = 0.0, chunk: int = 4096, threads: int = 1) -> MomentEstimate:
    """Monte Carlo E|X_t|^2 and E max_n |X_{t_n}|^2 for the Euler scheme on [0, t]."""
    x = np.asarray(x, dtype=np.float64)
    if t == 0.0:
        v = float(x @ x)
        return MomentEstimate(v, 0.0, v, 0.0)
    variant = Variant.EXACT if delta == 0.0 else Variant.TRUNCATED

    def work(index, start, stop):
        real = sample_realization(spec, t, n_steps, delta, 0, seed, (index,), stop - start)
        path = euler_path(spec, x, real, variant)
        sq = np.sum(path.values ** 2, axis=2)
        end, sup = sq[:, -1], sq.max(axis=1)
        return [float(np.sum(end)), float(np.sum(end ** 2)), float(np.sum(sup)), float(np.sum(sup ** 2))]

    parts = _run_chunks(work, n_paths, chunk, threads)
    tot = [math.fsum(p[i] for p in parts) for i in range(4)]
    n = n_paths

    def ms(s1, s2):
        mean = s1 / n
        var = max(s2 / n - mean * mean, 0.0) * n / max(n - 1, 1)
        return mean, math.sqrt(var / n)

    m1, se1 = ms(tot[0], tot[1])
    m2, se2 = ms(tot[2], tot[3])
    return MomentEstimate(m1, se1, m2, se2)

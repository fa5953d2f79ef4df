"""Jump-diffusion models: coefficients, Levy measures and their network forms.

All coefficient callables are vectorized over a leading batch axis:

* ``beta(x)``   with ``x`` of shape (B, d) returns (B, d);
* ``sigma(x)``  returns (B, d, d), column j multiplies Brownian coordinate j;
* multiplicative jumps: ``F(x)`` returns (B, d, d) and ``G(z)`` maps (E, d) to (E, d);
* general jumps: ``gamma(x, z)`` maps two (B, d) arrays to (B, d).

The jump coefficient is always the one of the compensated form, so the
jump part of the dynamics is an integral against the compensated measure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Optional

import numpy as np
from scipy import special, stats

from .errors import InvalidArgument, LoadError, ModelError
from .relu_net import ReluNetwork, affine_net, loads_json
from .streams import PROBES, substream

# Levy measures ----------------------------------------------------------------

REGIONS = ("above", "at_or_above", "below")


def _region_mask(norms: np.ndarray, delta: float, region: str) -> np.ndarray:
    if region == "above":
        return norms > delta
    if region == "at_or_above":
        return norms >= delta
    if region == "below":
        return norms <= delta
    raise InvalidArgument(f"region must be one of {REGIONS}")


@dataclass(frozen=True)
class PointMasses:
    """Discrete mark law: ``atoms[k]`` with probability ``probs[k]``."""

    atoms: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        atoms = np.atleast_2d(np.asarray(self.atoms, dtype=np.float64))
        probs = np.asarray(self.probs, dtype=np.float64).reshape(-1)
        if probs.size != atoms.shape[0] or np.any(probs < 0) or not np.isclose(probs.sum(), 1.0):
            raise ModelError("point-mass probabilities must be nonnegative and sum to one")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "probs", probs)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        idx = rng.choice(len(self.probs), size=n, p=self.probs)
        return self.atoms[idx]

    def nodes(self):
        return self.atoms, self.probs


@dataclass(frozen=True)
class GaussianMarks:
    """Marks ``mean + scale * N(0, I)``."""

    mean: np.ndarray
    scale: float

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64).reshape(-1))
        if self.scale <= 0:
            raise ModelError("Gaussian mark scale must be positive")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.mean + self.scale * rng.standard_normal((n, self.mean.size))

    @cached_property
    def _rule(self):
        d = self.mean.size
        if d <= 3:
            n = {1: 48, 2: 24, 3: 14}[d]
            x, w = np.polynomial.hermite_e.hermegauss(n)
            w = w / w.sum()
            grids = np.meshgrid(*([x] * d), indexing="ij")
            weights = np.ones_like(grids[0])
            for g in np.meshgrid(*([w] * d), indexing="ij"):
                weights = weights * g
            pts = np.stack([g.ravel() for g in grids], axis=1)
            return pts, weights.ravel()
        # Beyond three coordinates the tensor rule is too large; a fixed antithetic
        # sample keeps the integral deterministic.
        half = substream(0x5EED, 7, d).standard_normal((1 << 15, d))
        pts = np.vstack([half, -half])
        return pts, np.full(pts.shape[0], 1.0 / pts.shape[0])

    def nodes(self):
        pts, w = self._rule
        return self.mean + self.scale * pts, w


class LevyMeasure:
    """Interface shared by the shipped measures."""

    d: int
    infinite_activity: bool = False

    def mass_above(self, delta: float) -> float:
        raise NotImplementedError

    def sample_above(self, rng: np.random.Generator, n: int, delta: float) -> np.ndarray:
        raise NotImplementedError

    def integrate(self, fn: Callable, delta: float = 0.0, region: str = "above"):
        """Integral of ``fn`` over the region against the measure.

        ``fn`` takes marks of shape (K, d) and returns an array with leading
        axis K; the result drops that axis.
        """
        raise NotImplementedError

    def node_count(self) -> int:
        """Number of quadrature nodes :meth:`integrate` evaluates."""
        return 1

    def truncated_second_moment(self) -> float:
        """The integral of min(1, |z|^2)."""
        return float(self.integrate(lambda z: np.minimum(1.0, np.sum(z * z, axis=1)), 0.0))


@dataclass(frozen=True)
class FiniteActivity(LevyMeasure):
    """Compound-Poisson measure ``rate * law(marks)``."""

    d: int
    rate: float
    marks: object

    def __post_init__(self):
        if self.rate < 0:
            raise ModelError("jump rate must be nonnegative")

    def mass_above(self, delta: float) -> float:
        if delta < 0:
            raise InvalidArgument("delta must be nonnegative")
        if self.rate == 0.0:
            return 0.0
        if isinstance(self.marks, PointMasses):
            norms = np.linalg.norm(self.marks.atoms, axis=1)
            return float(self.rate * self.marks.probs[norms > delta].sum())
        if isinstance(self.marks, GaussianMarks):
            if delta == 0.0:
                return float(self.rate)
            s = self.marks.scale
            nc = float(self.marks.mean @ self.marks.mean) / s ** 2
            x = (delta / s) ** 2
            tail = stats.chi2.sf(x, self.d) if nc == 0.0 else stats.ncx2.sf(x, self.d, nc)
            return float(self.rate * tail)
        raise ModelError(f"unsupported mark law {type(self.marks).__name__}")

    def sample_above(self, rng, n, delta):
        out = np.empty((0, self.d))
        while out.shape[0] < n:
            need = n - out.shape[0]
            draw = self.marks.sample(rng, max(need, 16) if delta > 0 else need)
            if delta > 0:
                draw = draw[np.linalg.norm(draw, axis=1) > delta]
            out = np.vstack([out, draw[:need]])
        return out

    def node_count(self) -> int:
        return len(self.marks.nodes()[1])

    def integrate(self, fn, delta=0.0, region="above"):
        pts, w = self.marks.nodes()
        mask = _region_mask(np.linalg.norm(pts, axis=1), delta, region)
        if not np.any(mask):
            probe = np.asarray(fn(pts[:1]))
            return np.zeros(probe.shape[1:])
        vals = np.asarray(fn(pts[mask]))
        return self.rate * np.tensordot(w[mask], vals, axes=(0, 0))


def _upper_gamma(a: float, x: float) -> float:
    """Upper incomplete gamma for any real order and x > 0."""
    if a > 0:
        return float(special.gammaincc(a, x) * special.gamma(a))
    if a == 0:
        return float(special.exp1(x))
    # Step down from a positive order with G(s, x) = (G(s+1, x) - x^s e^-x) / s.
    steps = int(math.ceil(-a))
    s = a + steps
    val = _upper_gamma(s, x)
    for _ in range(steps):
        s -= 1.0
        val = (val - x ** s * math.exp(-x)) / s
    return val


def _sphere_design(d: int) -> tuple:
    if d == 1:
        return np.array([[1.0], [-1.0]]), np.array([0.5, 0.5])
    half = substream(0x5EED, 8, d).standard_normal((64, d))
    half /= np.linalg.norm(half, axis=1, keepdims=True)
    dirs = np.vstack([half, -half])
    return dirs, np.full(dirs.shape[0], 1.0 / dirs.shape[0])


@dataclass(frozen=True)
class StableLike(LevyMeasure):
    """Radially symmetric measure ``c r^(rho-3) exp(-r/taper) dr x uniform direction``.

    ``rho`` is the decay exponent of the small jumps: the second moment of
    the jumps of size at most delta equals (up to the taper) c * delta^rho / rho.
    The radial index 2 - rho lies in (0, 2), so the activity is infinite.
    """

    d: int
    rho: float
    intensity: float = 1.0
    taper: float = 1.0
    infinite_activity = True

    def __post_init__(self):
        if not 0.0 < self.rho < 2.0:
            raise ModelError("rho must lie in (0, 2)")
        if self.intensity <= 0 or self.taper <= 0:
            raise ModelError("intensity and taper must be positive")

    @property
    def index(self) -> float:
        return 2.0 - self.rho

    def density(self, r):
        r = np.asarray(r, dtype=np.float64)
        return self.intensity * r ** (-1.0 - self.index) * np.exp(-r / self.taper)

    def mass_above(self, delta: float) -> float:
        if delta < 0:
            raise InvalidArgument("delta must be nonnegative")
        if delta == 0:
            return math.inf
        a = self.index
        return self.intensity * self.taper ** (-a) * _upper_gamma(-a, delta / self.taper)

    def _proposal(self, rng, n, delta):
        r = delta * rng.random(n) ** (-1.0 / self.index)
        keep = rng.random(n) < np.exp(-(r - delta) / self.taper)
        return r, keep

    def _directions(self, rng, n):
        if self.d == 1:
            return np.where(rng.random(n) < 0.5, -1.0, 1.0)[:, None]
        g = rng.standard_normal((n, self.d))
        return g / np.linalg.norm(g, axis=1, keepdims=True)

    def sample_above(self, rng, n, delta):
        if delta <= 0:
            raise InvalidArgument(
                "exact sampling needs delta > 0: the measure has infinitely many small jumps")
        radii = []
        got = 0
        while got < n:
            need = n - got
            r, keep = self._proposal(rng, int(need * 1.3) + 8, delta)
            r = r[keep][:need]
            radii.append(r)
            got += r.size
        r = np.concatenate(radii) if radii else np.empty(0)
        return r[:, None] * self._directions(rng, n)

    def estimate_mass_above(self, rng, n, delta) -> float:
        """Monte Carlo mass of A_delta from the acceptance rate of the Pareto proposal."""
        _, keep = self._proposal(rng, n, delta)
        # The accepted density is exp(delta/taper) times the target density.
        pareto_mass = self.intensity * delta ** (-self.index) / self.index
        return pareto_mass * keep.mean() * math.exp(-delta / self.taper)

    @cached_property
    def _panels(self):
        x, w = np.polynomial.legendre.leggauss(16)
        return (x + 1.0) / 2.0, w / 2.0

    def _radial_rule(self, lo: float, hi: float):
        # Gauss-Legendre in log r on unit-length panels.
        x, w = self._panels
        a, b = math.log(lo), math.log(hi)
        n_pan = max(1, int(math.ceil(b - a)))
        edges = np.linspace(a, b, n_pan + 1)
        u = (edges[:-1, None] + (edges[1:] - edges[:-1])[:, None] * x[None, :]).ravel()
        du = ((edges[1:] - edges[:-1])[:, None] * w[None, :]).ravel()
        r = np.exp(u)
        return r, du * r * self.density(r)

    def quadrature(self, delta: float, region: str = "above"):
        if region == "below":
            lo, hi = max(delta, 1e-300) * 1e-16, delta
        else:
            lo, hi = max(delta, 1e-12), max(delta, 1e-12) + 60.0 * self.taper
        r, wr = self._radial_rule(lo, hi)
        dirs, wd = _sphere_design(self.d)
        pts = (r[:, None, None] * dirs[None, :, :]).reshape(-1, self.d)
        weights = (wr[:, None] * wd[None, :]).ravel()
        return pts, weights

    def node_count(self) -> int:
        return len(self.quadrature(1.0)[1])

    def integrate(self, fn, delta=0.0, region="above"):
        if region != "below" and delta <= 0:
            # Whole space: split at |z| = 1 so both rules stay accurate.
            return self.integrate(fn, 1.0, "below") + self.integrate(fn, 1.0, "above")
        pts, w = self.quadrature(delta, region)
        return np.tensordot(w, np.asarray(fn(pts)), axes=(0, 0))

    def truncated_second_moment(self) -> float:
        a, tau, c = self.index, self.taper, self.intensity
        near = tau ** (2 - a) * special.gammainc(2 - a, 1 / tau) * special.gamma(2 - a)
        return float(c * (near + tau ** (-a) * _upper_gamma(-a, 1 / tau)))


def sample_jumps_above(levy: Optional[LevyMeasure], delta: float, horizon: float,
                       rng: np.random.Generator) -> list:
    """Jump times and marks of the compound Poisson process of jumps above delta."""
    if levy is None:
        return []
    if delta == 0 and levy.infinite_activity:
        raise InvalidArgument(
            "delta = 0 needs a finite-activity measure; truncate small jumps (delta > 0) "
            "for infinite-activity measures")
    rate = levy.mass_above(delta)
    count = rng.poisson(rate * horizon) if rate > 0 else 0
    times = np.sort(rng.uniform(0.0, horizon, count))
    marks = levy.sample_above(rng, count, delta) if count else np.empty((0, levy.d))
    return list(zip(times.tolist(), marks))


# Model specification ----------------------------------------------------------

@dataclass(frozen=True)
class Multiplicative:
    """Jump coefficient of product form F(x) G(z)."""

    F: Callable
    G: Callable
    g_integral: Optional[np.ndarray] = None  # integral of G over all jumps, if known

    def gamma(self, x, z):
        return np.einsum("bij,bj->bi", self.F(x), self.G(z))


@dataclass(frozen=True)
class General:
    """Jump coefficient gamma(x, z) without product structure."""

    gamma: Callable
    state_independent: bool = False


@dataclass(frozen=True)
class DeclaredConstants:
    """Constants a model declares for the growth, decay and approximation assumptions."""

    L: float
    L_tilde: Optional[float] = None
    p_bar: Optional[float] = None
    q_bar: Optional[float] = None
    C: float = 1.0
    p: float = 1.0
    q: float = 0.0
    q_hat: float = 0.0

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("L", "L_tilde", "p_bar", "q_bar", "C", "p", "q", "q_hat")}


MULTIPLICATIVE = "multiplicative"
COMPOUND_POISSON_MC = "compound_poisson_mc"


@dataclass(frozen=True, eq=False)
class JumpDiffusionSpec:
    d: int
    beta: Callable
    sigma: Callable
    jumps: object  # Multiplicative, General or None
    levy: Optional[LevyMeasure]
    constants: DeclaredConstants
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if isinstance(self.jumps, General):
            c = self.constants
            if None in (c.L_tilde, c.p_bar, c.q_bar):
                raise ModelError("a general jump coefficient needs L_tilde, p_bar and q_bar")
        if self.jumps is not None and self.levy is None:
            raise ModelError("a jump coefficient needs a Levy measure")

    @property
    def mode(self) -> str:
        return COMPOUND_POISSON_MC if isinstance(self.jumps, General) else MULTIPLICATIVE

    @property
    def has_jumps(self) -> bool:
        return self.jumps is not None and self.levy is not None

    def gamma(self, x, z):
        if isinstance(self.jumps, Multiplicative):
            return self.jumps.gamma(x, z)
        return self.jumps.gamma(x, z)

    def g_integral(self, delta: float = 0.0) -> np.ndarray:
        """Integral of G over A_delta (multiplicative jumps only)."""
        jumps = self.jumps
        if delta == 0.0 and jumps.g_integral is not None:
            return np.asarray(jumps.g_integral, dtype=np.float64)
        return np.asarray(self.levy.integrate(jumps.G, delta), dtype=np.float64)

    def compensator(self, x, delta: float = 0.0, gamma: Callable | None = None):
        """Integral of gamma(x, z) over ``|z| > delta`` for each row of ``x``."""
        x = np.atleast_2d(x)
        if not self.has_jumps:
            return np.zeros_like(x)
        if isinstance(self.jumps, Multiplicative) and gamma is None:
            return np.einsum("bij,j->bi", self.jumps.F(x), self.g_integral(delta))
        gamma = gamma or self.jumps.gamma
        b = x.shape[0]

        def integrand(z):
            k = z.shape[0]
            xs = np.repeat(x, k, axis=0)
            zs = np.tile(z, (b, 1))
            return gamma(xs, zs).reshape(b, k, -1).transpose(1, 0, 2)

        return self.levy.integrate(integrand, delta)


@dataclass(frozen=True, eq=False)
class CoefficientNets:
    """ReLU networks standing in for the coefficients.

    ``jump_nets`` holds d column networks of F for multiplicative jumps, or a
    single network on (x, z) in R^{2d} for general jumps.
    """

    beta_net: ReluNetwork
    sigma_nets: tuple
    jump_nets: tuple = ()
    epsilon: float = 1.0

    @property
    def d(self) -> int:
        return self.beta_net.input_dim

    def beta(self, x):
        return self.beta_net.eval(np.atleast_2d(x))

    def sigma(self, x):
        x = np.atleast_2d(x)
        if not self.sigma_nets:
            return np.zeros((x.shape[0], self.d, self.d))
        return np.stack([net.eval(x) for net in self.sigma_nets], axis=2)

    def F(self, x):
        x = np.atleast_2d(x)
        return np.stack([net.eval(x) for net in self.jump_nets], axis=2)

    def gamma(self, x, z):
        return self.jump_nets[0].eval(np.hstack([np.atleast_2d(x), np.atleast_2d(z)]))

    @property
    def coefficient_size(self) -> int:
        return self.beta_net.size + sum(n.size for n in self.sigma_nets)

    @property
    def max_jump_size(self) -> int:
        return max((n.size for n in self.jump_nets), default=0)


# Coefficient-form conversion -----------------------------------------------------

def to_compensated_form(b: Callable, f: Callable, g: Callable, levy: LevyMeasure):
    """Fold the large-jump part into the drift: returns (beta, gamma)."""

    def beta(x):
        x = np.atleast_2d(x)
        big = _integrate_state(levy, g, x, 1.0, "at_or_above")
        if not np.all(np.isfinite(big)):
            raise ModelError("the large-jump coefficient is not integrable under the measure")
        return b(x) + big

    def gamma(x, z):
        small = (np.linalg.norm(z, axis=1) < 1.0)[:, None]
        return np.where(small, f(x, z), g(x, z))

    return beta, gamma


def from_compensated_form(beta: Callable, gamma: Callable, levy: LevyMeasure):
    """Inverse of :func:`to_compensated_form`: returns (b, f, g)."""

    def b(x):
        x = np.atleast_2d(x)
        return beta(x) - _integrate_state(levy, gamma, x, 1.0, "at_or_above")

    def f(x, z):
        return np.where((np.linalg.norm(z, axis=1) < 1.0)[:, None], gamma(x, z), 0.0)

    def g(x, z):
        return np.where((np.linalg.norm(z, axis=1) >= 1.0)[:, None], gamma(x, z), 0.0)

    return b, f, g


def _integrate_state(levy, fn, x, delta, region):
    b = x.shape[0]

    def integrand(z):
        k = z.shape[0]
        vals = fn(np.repeat(x, k, axis=0), np.tile(z, (b, 1)))
        return vals.reshape(b, k, -1).transpose(1, 0, 2)

    return levy.integrate(integrand, delta, region)


# Assumption checks ---------------------------------------------------------------

@dataclass(frozen=True)
class Check:
    name: str
    observed: float
    declared: Optional[float]
    judged: bool = True

    @property
    def passed(self) -> bool:
        if not self.judged or self.declared is None:
            return True
        return self.observed <= self.declared * (1.0 + 1e-9) + 1e-300


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def violations(self) -> list:
        return [c for c in self.checks if not c.passed]

    def __getitem__(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def summary(self) -> str:
        lines = []
        for c in self.checks:
            status = "ok" if c.passed else "VIOLATED"
            if not c.judged:
                status = "info"
            lines.append(f"{c.name:<28} observed={c.observed:.6g} declared={c.declared} [{status}]")
        return "\n".join(lines)


def _jump_sq_integral(spec, x, y, delta=0.0, region="above"):
    """Integral of |gamma(x,z) - gamma(y,z)|^2 per probe pair (y=None: |gamma(x,z)|^2 per coordinate)."""
    b = x.shape[0]

    def integrand(z):
        k = z.shape[0]
        zs = np.tile(z, (b, 1))
        gx = spec.gamma(np.repeat(x, k, axis=0), zs)
        if y is not None:
            gx = gx - spec.gamma(np.repeat(y, k, axis=0), zs)
            return np.sum(gx * gx, axis=1).reshape(b, k).T
        return (gx * gx).reshape(b, k, -1).transpose(1, 0, 2)

    return spec.levy.integrate(integrand, delta, region)


def validate_assumptions(spec: JumpDiffusionSpec, nets: CoefficientNets | None = None,
                         n_probes: int = 1000, seed: int = 0, scale: float = 2.0,
                         batch: int = 500) -> ValidationReport:
    """Probe-based check of the declared constants; a sampling check, never a proof."""
    if n_probes < 1:
        raise InvalidArgument("n_probes must be at least 1")
    rng = substream(seed, PROBES)
    d, c = spec.d, spec.constants
    lip = growth = 0.0
    approx = net_growth = 0.0
    jumps = spec.has_jumps and not (isinstance(spec.levy, FiniteActivity) and spec.levy.rate == 0)
    if jumps:
        batch = max(1, min(batch, int(2e6 // spec.levy.node_count())))
    for start in range(0, n_probes, batch):
        m = min(batch, n_probes - start)
        x = scale * rng.standard_normal((m, d))
        y = x + scale * rng.standard_normal((m, d)) * rng.random((m, 1))
        dx2 = np.sum((x - y) ** 2, axis=1)
        num = np.sum((spec.beta(x) - spec.beta(y)) ** 2, axis=1)
        num += np.sum((spec.sigma(x) - spec.sigma(y)) ** 2, axis=(1, 2))
        if jumps:
            num += _jump_sq_integral(spec, x, y)
        lip = max(lip, float(np.max(num / np.maximum(dx2, 1e-300))))
        # Growth, per coordinate pair (i, j).
        bx2 = spec.beta(x) ** 2
        sx2 = spec.sigma(x) ** 2
        gx2 = _jump_sq_integral(spec, x, None) if jumps else np.zeros_like(bx2)
        per_ij = bx2[:, :, None] + sx2 + gx2[:, :, None]
        norm2 = 1.0 + np.sum(x * x, axis=1)
        growth = max(growth, float(np.max(per_ij.max(axis=(1, 2)) / norm2)))
        if nets is not None:
            err = np.sum((spec.beta(x) - nets.beta(x)) ** 2, axis=1)
            err += np.sum((spec.sigma(x) - nets.sigma(x)) ** 2, axis=(1, 2))
            size = np.sum(nets.beta(x) ** 2, axis=1) + np.sum(nets.sigma(x) ** 2, axis=(1, 2))
            if jumps and nets.jump_nets:
                if isinstance(spec.jumps, Multiplicative):
                    diff = spec.jumps.F(x) - nets.F(x)
                    err += np.sum(diff ** 2, axis=(1, 2))
                    size += np.sum(nets.F(x) ** 2, axis=(1, 2))
                else:
                    net_spec = replace(spec, jumps=General(lambda a, z: spec.gamma(a, z) - nets.gamma(a, z)))
                    err += np.sum(_jump_sq_integral(net_spec, x, None), axis=1)
            approx = max(approx, float(np.max(err / norm2)))
            net_growth = max(net_growth, float(np.max(
                size / (d ** c.p * nets.epsilon ** (-c.q) + np.sum(x * x, axis=1)))))
    checks = [Check("lipschitz", lip, c.L), Check("linear_growth", growth, c.L)]
    if isinstance(spec.jumps, General) and jumps:
        dq = d ** c.q_bar
        x = scale * rng.standard_normal((min(n_probes, 200), d))
        worst = 0.0
        for delta in (0.5, 0.1, 0.01):
            small = np.sum(_jump_sq_integral(spec, x, None, delta, "below"), axis=1)
            worst = max(worst, float(np.max(small / (delta ** c.p_bar * dq * (1 + np.sum(x * x, axis=1))))))
        checks.append(Check("small_jump_decay", worst, c.L_tilde))
        checks.append(Check("truncated_second_moment", spec.levy.truncated_second_moment() / dq,
                            c.L_tilde))
    if nets is not None:
        eps = nets.epsilon
        budget = c.C * d ** c.p * eps ** (-c.q_hat)
        checks.append(Check("net_approximation", approx, eps ** (4 * c.q + 1) * c.C * d ** c.p))
        checks.append(Check("net_growth", net_growth, c.C, judged=False))
        checks.append(Check("coefficient_net_size", float(nets.coefficient_size), budget))
        if nets.jump_nets:
            checks.append(Check("jump_net_size", float(nets.max_jump_size), budget))
    return ValidationReport(tuple(checks))


# Shipped models -----------------------------------------------------------------

def _vector(value, d, name):
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        return np.full(d, float(arr))
    arr = arr.reshape(-1)
    if arr.size != d:
        raise ModelError(f"parameter {name} must have length {d}")
    return arr


def _matrix(value, d, name):
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        return float(arr) * np.eye(d)
    if arr.shape != (d, d):
        raise ModelError(f"parameter {name} must be a {d}x{d} matrix")
    return arr


def _linear_coefficients(drift, drift_matrix):
    def beta(x):
        x = np.atleast_2d(x)
        return x @ drift_matrix.T + drift

    return beta


def _column_sigma(columns):
    """sigma(x) whose column j is ``mats[j] @ x + offs[j]``."""
    mats = np.stack([m for m, _ in columns])  # (d, d, d): column, row, input
    offs = np.stack([o for _, o in columns])

    def sigma(x):
        x = np.atleast_2d(x)
        cols = np.einsum("jik,bk->bij", mats, x) + offs.T[None, :, :]
        return cols

    return sigma


def _declared(d, L, nets, p=1.0, extra=None, **kw):
    need = max([nets.coefficient_size, nets.max_jump_size, 1] + list(extra or []))
    return DeclaredConstants(L=L, C=max(1.0, need / d ** p), p=p, **kw)


def general_jump_net(d: int, kappa: float) -> ReluNetwork:
    """Network for gamma(x, z) = z + kappa * (relu(x + z) - relu(x)) on R^{2d}."""
    eye = np.eye(d)
    zero = np.zeros((d, d))
    rows = [np.hstack([zero, eye]), np.hstack([zero, -eye])]
    outs = [eye, -eye]
    if kappa != 0.0:
        rows = [np.hstack([eye, eye]), np.hstack([eye, zero])] + rows
        outs = [kappa * eye, -kappa * eye] + outs
    first = np.vstack(rows)
    return ReluNetwork.from_arrays([(first, np.zeros(first.shape[0])),
                                    (np.hstack(outs), np.zeros(d))])


def _general_gamma(kappa):
    def gamma(x, z):
        if kappa == 0.0:
            return np.array(z, dtype=np.float64, copy=True)
        return z + kappa * (np.maximum(x + z, 0.0) - np.maximum(x, 0.0))

    return gamma


def _pure_drift(d, params):
    drift = _vector(params.get("drift", 1.0), d, "drift")
    a = _matrix(params.get("drift_matrix", 0.0), d, "drift_matrix")
    beta = _linear_coefficients(drift, a)
    nets = CoefficientNets(affine_net(a, drift), ())
    # (b_i + a_i.x)^2 <= 2 max(b_i^2, |a_i|^2) (1 + |x|^2)
    growth = 2.0 * max(float(np.max(drift ** 2)), float(np.max(np.sum(a * a, axis=1))))
    L = max(float(np.linalg.norm(a, 2) ** 2), growth)
    return dict(beta=beta, sigma=lambda x: np.zeros((np.atleast_2d(x).shape[0], d, d)),
                jumps=None, levy=None, nets=nets, L=max(L, 1e-12))


def _heat(d, params):
    vol = float(params.get("sigma", 1.0))
    drift = _vector(params.get("drift", 0.0), d, "drift")
    eye = np.eye(d)

    def sigma(x):
        return np.broadcast_to(vol * eye, (np.atleast_2d(x).shape[0], d, d)).copy()

    nets = CoefficientNets(affine_net(np.zeros((d, d)), drift),
                           tuple(affine_net(np.zeros((d, d)), vol * eye[:, j]) for j in range(d)))
    return dict(beta=_linear_coefficients(drift, np.zeros((d, d))), sigma=sigma, jumps=None,
                levy=None, nets=nets, L=max(vol ** 2 + 2 * float(np.max(drift ** 2)), 1e-12))


def _diag_vol_columns(d, vol, mix):
    return [(np.diag(vol * mix[:, j]), np.zeros(d)) for j in range(d)]


def _black_scholes(d, params):
    vol = _vector(params.get("vol", 0.2), d, "vol")
    rate = float(params.get("rate", 0.0))
    mix = _matrix(params.get("mixing", 1.0), d, "mixing")
    cols = _diag_vol_columns(d, vol, mix)
    nets = CoefficientNets(affine_net(rate * np.eye(d), np.zeros(d)),
                           tuple(affine_net(m, o) for m, o in cols))
    # sum_j |vol_i mix_ij (x_i - y_i)|^2 summed over i is at most max_i vol_i^2 |mix_i|^2 |x-y|^2
    row = np.max(vol ** 2 * np.sum(mix ** 2, axis=1))
    return dict(beta=_linear_coefficients(np.zeros(d), rate * np.eye(d)),
                sigma=_column_sigma(cols), jumps=None, levy=None, nets=nets,
                L=float(rate ** 2 + row))


def _merton(d, params):
    vol = _vector(params.get("vol", 0.2), d, "vol")
    rate = float(params.get("rate", 0.0))
    lam = float(params.get("intensity", 0.3))
    mu = float(params.get("jump_mean", -0.1))
    s = float(params.get("jump_std", 0.15))
    cols = _diag_vol_columns(d, vol, np.eye(d))
    levy = FiniteActivity(d, lam, GaussianMarks(np.full(d, mu), s))
    mean_g = math.expm1(mu + 0.5 * s * s)
    m2 = math.exp(2 * mu + 2 * s * s) - 2 * math.exp(mu + 0.5 * s * s) + 1.0

    def F(x):
        x = np.atleast_2d(x)
        out = np.zeros(x.shape + (d,))
        idx = np.arange(d)
        out[:, idx, idx] = x
        return out

    jumps = Multiplicative(F=F, G=np.expm1, g_integral=np.full(d, lam * mean_g))
    eye = np.eye(d)
    f_nets = tuple(affine_net(np.outer(eye[:, j], eye[j]), np.zeros(d)) for j in range(d))
    nets = CoefficientNets(affine_net(rate * eye, np.zeros(d)),
                           tuple(affine_net(m, o) for m, o in cols), f_nets)
    L = rate ** 2 + float(np.max(vol ** 2)) + lam * m2
    return dict(beta=_linear_coefficients(np.zeros(d), rate * eye), sigma=_column_sigma(cols),
                jumps=jumps, levy=levy, nets=nets, L=L)


def _reverting(d, theta, vol):
    eye = np.eye(d)

    def sigma(x):
        return np.broadcast_to(vol * eye, (np.atleast_2d(x).shape[0], d, d)).copy()

    beta = _linear_coefficients(np.zeros(d), -theta * eye)
    beta_net = affine_net(-theta * eye, np.zeros(d))
    sigma_nets = tuple(affine_net(np.zeros((d, d)), vol * eye[:, j]) for j in range(d))
    return beta, sigma, beta_net, sigma_nets


def _stable_like(d, params):
    rho = float(params.get("rho", 0.5))
    c = float(params.get("intensity", 0.1))
    tau = float(params.get("taper", 1.0))
    theta = float(params.get("mean_reversion", 0.5))
    vol = float(params.get("vol", 0.2))
    levy = StableLike(d, rho, c, tau)
    beta, sigma, beta_net, sigma_nets = _reverting(d, theta, vol)
    nets = CoefficientNets(beta_net, sigma_nets, (general_jump_net(d, 0.0),))
    # Jumps of size <= delta carry second moment at most c delta^rho / rho.
    L_tilde = c * max(1.0 / rho, 1.0 / rho + 1.0 / (2.0 - rho))
    second_moment = c * tau ** rho * math.gamma(rho)
    return dict(beta=beta, sigma=sigma, jumps=General(_general_gamma(0.0), state_independent=True),
                levy=levy, nets=nets, L=max(theta ** 2, vol ** 2 + second_moment),
                L_tilde=L_tilde, p_bar=rho, q_bar=1.0)


def _compound_poisson(d, params):
    lam = float(params.get("intensity", 2.0))
    size = float(params.get("jump_size", 0.5))
    kappa = float(params.get("kappa", 0.5))
    theta = float(params.get("mean_reversion", 0.5))
    vol = float(params.get("vol", 0.2))
    eye = np.eye(d)
    atoms = np.vstack([size * eye, -0.5 * size * eye])
    probs = np.concatenate([np.full(d, 0.5 / d), np.full(d, 0.5 / d)])
    levy = FiniteActivity(d, lam, PointMasses(atoms, probs))
    beta, sigma, beta_net, sigma_nets = _reverting(d, theta, vol)
    nets = CoefficientNets(beta_net, sigma_nets, (general_jump_net(d, kappa),))
    m2 = float(np.max(probs @ atoms ** 2))
    L = max(theta ** 2 + 4 * kappa ** 2 * lam, theta ** 2 + vol ** 2 + (1 + kappa) ** 2 * lam * m2)
    L_tilde = lam * max((1 + kappa) ** 2, 1.0)
    return dict(beta=beta, sigma=sigma, jumps=General(_general_gamma(kappa)), levy=levy,
                nets=nets, L=L, L_tilde=L_tilde, p_bar=2.0, q_bar=1.0)


BUILTINS = {
    "pure_drift": _pure_drift,
    "heat": _heat,
    "black_scholes": _black_scholes,
    "merton": _merton,
    "stable_like": _stable_like,
    "compound_poisson": _compound_poisson,
}


def builtin_model(name: str, d: int, params: dict | None = None,
                  constants: dict | None = None):
    """Return ``(spec, nets)`` for a shipped model family.

    Coefficients are affine (or built from affine pieces), so the networks
    represent them exactly and do not depend on epsilon.
    """
    if name not in BUILTINS:
        raise InvalidArgument(f"unknown model {name!r}; choose from {sorted(BUILTINS)}")
    if d < 1:
        raise InvalidArgument("dimension must be positive")
    params = dict(params or {})
    parts = BUILTINS[name](d, params)
    nets = parts["nets"]
    extra = {k: parts[k] for k in ("L_tilde", "p_bar", "q_bar") if k in parts}
    declared = _declared(d, parts["L"], nets, **extra)
    if constants:
        declared = replace(declared, **{k: v for k, v in constants.items() if v is not None})
    spec = JumpDiffusionSpec(d=d, beta=parts["beta"], sigma=parts["sigma"], jumps=parts["jumps"],
                             levy=parts["levy"], constants=declared, name=name, params=params)
    return spec, nets


def load_model_file(path):
    """Load ``{family, d, params, declared_constants}`` JSON into ``(spec, nets)``."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = loads_json(fh.read())
    except OSError as exc:
        raise LoadError(f"cannot read model file {path}: {exc}") from exc
    if not isinstance(obj, dict) or "family" not in obj or "d" not in obj:
        raise LoadError(f"model file {path} needs 'family' and 'd'")
    return builtin_model(obj["family"], int(obj["d"]), obj.get("params"),
                         obj.get("declared_constants"))


def model_to_dict(spec: JumpDiffusionSpec) -> dict:
    return {"family": spec.name, "d": spec.d, "params": _jsonable(spec.params),
            "declared_constants": spec.constants.to_dict()}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in np.asarray(obj).tolist()] if isinstance(obj, np.ndarray) else [_jsonable(v) for v in obj]
    return obj


__all__ = [
    "BUILTINS", "COMPOUND_POISSON_MC", "MULTIPLICATIVE", "Check", "CoefficientNets",
    "DeclaredConstants", "FiniteActivity", "GaussianMarks", "General", "JumpDiffusionSpec",
    "LevyMeasure", "Multiplicative", "PointMasses", "StableLike", "ValidationReport",
    "builtin_model", "from_compensated_form", "general_jump_net", "load_model_file",
    "model_to_dict", "sample_jumps_above", "to_compensated_form", "validate_assumptions",
]

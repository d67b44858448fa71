"""Fading sensors: gain statistics, noise, and equivalent linear models.

Each of R sensors observes a tessarine signal through a random part-wise
gain and additive white noise,

    y(t) = gamma(t) * x(t) + v(t)      (* = part-wise product),

with the gain parts independent in [0, 1], independent across time and
sensors, and independent of signal and noise.  Estimation never sees the
realized gains; it runs on an *equivalent* linear model

    z(t) = H x_k(t) + w(t),   Cov_w = R + Sigma (per sensor),

whose second-order statistics match those of the restricted observation
y_k exactly.  This module builds H, R and Sigma for the order-1, order-2
and full widely linear (k = 4) processing modes, checks the properness
conditions those modes require, and Monte Carlo verifies the match.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .algebra import TessArray, augmentation_matrix, augmented_from_real
from .models import AugmentedFactorization, RealCovariance, _Memo

__all__ = [
    "Uniform",
    "Discrete",
    "Bernoulli",
    "FadingLaw",
    "NoiseLaw",
    "EquivalentModel",
    "SensorNetwork",
    "PropernessReport",
    "PropernessError",
    "check_properness",
    "build_equivalent_model",
    "build_wl_equivalent_model",
    "verify_second_order_equivalence",
]

PART_NAMES = ("r", "i", "j", "k")


class PropernessError(ValueError):
    """A model construction requires properness the network does not satisfy."""


# -- gain distributions ---------------------------------------------------------


@dataclass(frozen=True)
class Uniform:
    low: float
    high: float

    def __post_init__(self):
        if not 0.0 <= self.low <= self.high <= 1.0:
            raise ValueError("uniform support must sit inside [0, 1]")

    @property
    def mean(self) -> float:
        return 0.5 * (self.low + self.high)

    @property
    def var(self) -> float:
        return (self.high - self.low) ** 2 / 12.0

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        return rng.uniform(self.low, self.high, size=size)


@dataclass(frozen=True)
class Discrete:
    values: tuple
    probs: tuple

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        p = np.asarray(self.probs, dtype=float)
        if v.shape != p.shape or v.ndim != 1:
            raise ValueError("values and probs must be equal-length vectors")
        if np.any(v < 0.0) or np.any(v > 1.0):
            raise ValueError("support must sit inside [0, 1]")
        if np.any(p < 0.0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("probs must be a distribution")
        object.__setattr__(self, "values", tuple(float(x) for x in v))
        object.__setattr__(self, "probs", tuple(float(x) for x in p))

    @property
    def mean(self) -> float:
        return float(np.dot(self.values, self.probs))

    @property
    def var(self) -> float:
        m = self.mean
        return float(np.dot((np.asarray(self.values) - m) ** 2, self.probs))

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        return rng.choice(np.asarray(self.values), p=np.asarray(self.probs), size=size)


@dataclass(frozen=True)
class Bernoulli:
    p: float

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must lie in [0, 1]")

    @property
    def mean(self) -> float:
        return self.p

    @property
    def var(self) -> float:
        return self.p * (1.0 - self.p)

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        return (rng.random(size=size) < self.p).astype(float)


@dataclass(frozen=True)
class FadingLaw:
    """Per-part, per-component gain distributions of one sensor.

    ``dists[nu][j]`` is the law of the nu-part gain of component j.  Parts
    are drawn independently; only first and second moments ever reach the
    estimator.
    """

    n: int
    dists: dict

    def __post_init__(self):
        for nu in PART_NAMES:
            if nu not in self.dists or len(self.dists[nu]) != self.n:
                raise ValueError(f"part {nu!r} needs {self.n} distributions")

    @classmethod
    def same(cls, dist, n: int = 1) -> "FadingLaw":
        """One law shared by all four parts of every component."""
        return cls(n=n, dists={nu: (dist,) * n for nu in PART_NAMES})

    @classmethod
    def paired(cls, r, i, n: int = 1) -> "FadingLaw":
        """Order-2 symmetric sensor: the j part follows r's law, k follows i's."""
        return cls(n=n, dists={"r": (r,) * n, "i": (i,) * n, "j": (r,) * n, "k": (i,) * n})

    @classmethod
    def per_part(cls, r, i, j, k, n: int = 1) -> "FadingLaw":
        return cls(n=n, dists={"r": (r,) * n, "i": (i,) * n, "j": (j,) * n, "k": (k,) * n})

    def mu(self, j: int, nu: str) -> float:
        return self.dists[nu][j].mean

    def var(self, j: int, nu: str) -> float:
        return self.dists[nu][j].var

    def mu_stack(self) -> np.ndarray:
        """Means as a real 4n vector ordered (r, i, j, k) blocks."""
        return np.array([self.dists[nu][j].mean
                         for nu in PART_NAMES for j in range(self.n)])

    def var_stack(self) -> np.ndarray:
        return np.array([self.dists[nu][j].var
                         for nu in PART_NAMES for j in range(self.n)])

    def sample_stack(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Independent part draws, shape (size, 4n), ordered like mu_stack."""
        cols = [self.dists[nu][j].sample(rng, size)
                for nu in PART_NAMES for j in range(self.n)]
        return np.stack(cols, axis=1)


# -- measurement noise ------------------------------------------------------------


class NoiseLaw:
    """White tessarine measurement noise with cross-sensor correlation.

    Parameterized by the real-part cross-covariances
    cross_real(alpha, beta, t) in R^{4n x 4n}; the tessarine pseudo
    cross-covariance follows by the augmentation map.  Whiteness in time is
    structural (distinct times never correlate).
    """

    def __init__(self, n: int, n_sensors: int,
                 cross_real: Callable[[int, int, int], np.ndarray],
                 sampler: Optional[Callable] = None):
        self.n = n
        self.n_sensors = n_sensors
        self._cross_real = cross_real
        self._sampler = sampler
        self._aug = _Memo(self._build_aug)

    @classmethod
    def scaled(cls, lambdas: Sequence[float], base_real_cov: np.ndarray,
               n: int = 1) -> "NoiseLaw":
        """v_alpha(t) = lambda_alpha u(t) for one shared white source u."""
        lambdas = tuple(float(v) for v in lambdas)
        if any(v <= 0 for v in lambdas):
            raise ValueError("noise scale factors must be positive")
        base = np.asarray(base_real_cov, dtype=float)
        if base.shape != (4 * n, 4 * n):
            raise ValueError(f"base covariance must be {4 * n} x {4 * n}")
        chol = _psd_root(base)

        def cross(a, b, t):
            return lambdas[a] * lambdas[b] * base

        def sampler(t, rng, size):
            u = rng.standard_normal((size, 4 * n)) @ chol.T
            return np.stack([lam * u for lam in lambdas], axis=1)

        law = cls(n=n, n_sensors=len(lambdas), cross_real=cross, sampler=sampler)
        law.lambdas = lambdas
        law.base_real_cov = base
        return law

    def cross_real(self, a: int, b: int, t: int) -> np.ndarray:
        return self._cross_real(a, b, t)

    def _build_aug(self, a, b, t):
        return augmented_from_real(self._cross_real(a, b, t))

    def augmented(self, a: int, b: int, t: int) -> TessArray:
        """Pseudo cross-covariance of the augmented noise vectors (4n x 4n)."""
        return self._aug(a, b, t)

    def restricted(self, a: int, b: int, t: int, k: int) -> TessArray:
        g = self.augmented(a, b, t)
        d = k * self.n
        return TessArray(g.parts[:, :d, :d])

    def sample_stack(self, t: int, rng: np.random.Generator, size: int) -> np.ndarray:
        """Joint noise draw, shape (size, R, 4n) of stacked real parts."""
        if self._sampler is not None:
            return self._sampler(t, rng, size)
        r, d = self.n_sensors, 4 * self.n
        big = np.empty((r * d, r * d))
        for a in range(r):
            for b in range(r):
                big[a * d:(a + 1) * d, b * d:(b + 1) * d] = self._cross_real(a, b, t)
        root = _psd_root(0.5 * (big + big.T))
        draws = rng.standard_normal((size, r * d)) @ root.T
        return draws.reshape(size, r, d)


def _psd_root(c: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(c)
    if w.min() < -1e-10 * max(1.0, abs(w).max()):
        raise ValueError("noise covariance is not positive semidefinite")
    return v * np.sqrt(np.clip(w, 0.0, None))


# -- network and equivalent models ----------------------------------------------


@dataclass(frozen=True)
class SensorNetwork:
    fact: AugmentedFactorization
    cov: RealCovariance
    fading: tuple
    noise: NoiseLaw

    def __post_init__(self):
        if self.fact.n != self.cov.n:
            raise ValueError("factorization and covariance dimensions differ")
        for law in self.fading:
            if law.n != self.fact.n:
                raise ValueError("fading law dimension mismatch")
        if self.noise.n != self.fact.n or self.noise.n_sensors != len(self.fading):
            raise ValueError("noise law inconsistent with network layout")

    @property
    def n(self) -> int:
        return self.fact.n

    @property
    def n_sensors(self) -> int:
        return len(self.fading)

    @property
    def horizon(self) -> int:
        return self.fact.horizon


@dataclass(frozen=True)
class EquivalentModel:
    """Per-sensor (H, Sigma) and per-pair noise covariance of the z model."""

    k: int
    n: int
    n_sensors: int
    horizon: int
    _h: Callable = field(repr=False)
    _sigma: Callable = field(repr=False)
    _rcov: Callable = field(repr=False)

    @property
    def dim(self) -> int:
        return self.k * self.n

    def h(self, alpha: int, t: int) -> TessArray:
        return self._h(alpha, t)

    def sigma(self, alpha: int, t: int) -> TessArray:
        return self._sigma(alpha, t)

    def rcov(self, alpha: int, beta: int, t: int) -> TessArray:
        return self._rcov(alpha, beta, t)

    def gamma_w(self, alpha: int, beta: int, t: int) -> TessArray:
        out = self.rcov(alpha, beta, t)
        if alpha == beta:
            out = out + self.sigma(alpha, t)
        return out


# -- properness -------------------------------------------------------------------


@dataclass(frozen=True)
class PropernessReport:
    k: int
    ok: bool
    violations: tuple

    def __bool__(self) -> bool:
        return self.ok

    def first(self) -> str:
        return self.violations[0] if self.violations else ""


def _offblock_violations(gamma_fn, times, k, n, label, tol=1e-10):
    """Off-diagonal block norms of augmented pseudo-covariances."""
    if k == 1:
        cuts = [(m * n, (m + 1) * n) for m in range(4)]
    else:
        cuts = [(0, 2 * n), (2 * n, 4 * n)]
    bad = []
    for t, s in times:
        g = gamma_fn(t, s)
        scale = max(g.max_abs(), 1.0)
        for ri, (r0, r1) in enumerate(cuts):
            for ci, (c0, c1) in enumerate(cuts):
                if ri == ci:
                    continue
                dev = g[r0:r1, c0:c1].max_abs()
                if dev > tol * scale:
                    bad.append(f"{label}: block ({ri},{ci}) of Gamma({t},{s}) "
                               f"is nonzero (max abs {dev:.3e})")
    return bad


def check_properness(net: SensorNetwork, k: int, grid: int = 4,
                     tol: float = 1e-10) -> PropernessReport:
    """Can this network be processed at order k without losing optimality?

    Order 1 requires part-blind gain moments and order-1 proper signal and
    noise; order 2 requires the r/j and i/k moment pairings and order-2
    proper signal and noise.  Diagnostics name the first violated equality.
    """
    if k not in (1, 2):
        raise ValueError("properness order k must be 1 or 2")
    n = net.n
    bad = []

    times = [(t, s) for t in range(min(grid, net.horizon) + 1)
             for s in range(min(grid, net.horizon) + 1)]
    bad += _offblock_violations(net.fact.gamma, times, k, n, "signal", tol)

    noise_times = [(1, 1)] if net.horizon >= 1 else [(0, 0)]
    for a in range(net.n_sensors):
        for b in range(net.n_sensors):
            bad += _offblock_violations(
                lambda t, s, a=a, b=b: net.noise.augmented(a, b, t),
                noise_times, k, n, f"noise pair ({a},{b})", tol)

    for a, law in enumerate(net.fading):
        pairs = ([("r", "i"), ("r", "j"), ("r", "k")] if k == 1
                 else [("r", "j"), ("i", "k")])
        for j in range(n):
            for nu1, nu2 in pairs:
                if abs(law.mu(j, nu1) - law.mu(j, nu2)) > 1e-12:
                    bad.append(f"sensor {a}: mean of part {nu2!r} differs from "
                               f"part {nu1!r} at component {j}")
                if abs(law.var(j, nu1) - law.var(j, nu2)) > 1e-12:
                    bad.append(f"sensor {a}: variance of part {nu2!r} differs "
                               f"from part {nu1!r} at component {j}")

    return PropernessReport(k=k, ok=not bad, violations=tuple(bad))


# -- equivalent model builders ------------------------------------------------------


def build_equivalent_model(net: SensorNetwork, k: int,
                           horizon: Optional[int] = None) -> EquivalentModel:
    """H, Sigma, R of the order-k equivalent observation model.

    Raises :class:`PropernessError` when the network fails the order-k
    properness conditions (the reduced model would not be second-order
    equivalent).
    """
    report = check_properness(net, k)
    if not report.ok:
        raise PropernessError(f"order-{k} properness violated: {report.first()}")
    horizon = net.horizon if horizon is None else horizon
    n = net.n

    if k == 1:
        def make_h(alpha, t):
            mus = [net.fading[alpha].mu(j, "r") for j in range(n)]
            return TessArray.from_real(np.diag(mus))

        def make_sigma(alpha, t):
            mom = net.cov.second_moment_diag(t)[:n]
            theta = [4.0 * net.fading[alpha].var(j, "r") * mom[j] for j in range(n)]
            return TessArray.from_real(np.diag(theta))
    else:
        def make_h(alpha, t):
            law = net.fading[alpha]
            h = np.zeros((2 * n, 2 * n))
            for j in range(n):
                mr, mi = law.mu(j, "r"), law.mu(j, "i")
                h[j, j] = h[j + n, j + n] = 0.5 * (mr + mi)
                h[j, j + n] = h[j + n, j] = 0.5 * (mr - mi)
            return TessArray.from_real(h)

        def make_sigma(alpha, t):
            law = net.fading[alpha]
            mom = net.cov.second_moment_diag(t)
            lam = np.zeros((2 * n, 2 * n))
            for j in range(n):
                phi_r = 2.0 * law.var(j, "r") * mom[j]
                phi_i = 2.0 * law.var(j, "i") * mom[n + j]
                lam[j, j] = lam[j + n, j + n] = phi_r + phi_i
                lam[j, j + n] = lam[j + n, j] = phi_r - phi_i
            return TessArray.from_real(lam)

    return EquivalentModel(
        k=k, n=n, n_sensors=net.n_sensors, horizon=horizon,
        _h=_Memo(make_h), _sigma=_Memo(make_sigma),
        _rcov=_Memo(lambda a, b, t: net.noise.restricted(a, b, t, k)),
    )


def build_wl_equivalent_model(net: SensorNetwork,
                              horizon: Optional[int] = None) -> EquivalentModel:
    """Full widely linear (k = 4) equivalent model; needs no properness.

    H is the mean of the part-wise gain operator; Sigma is the gain-jitter
    excess  Delta(t,t) - H Gamma(t,t) H^H  with Delta built from the
    part-product moments of the gains Hadamard the real signal covariance.
    """
    horizon = net.horizon if horizon is None else horizon
    n = net.n
    jmap = augmentation_matrix(n)

    def make_h(alpha, t):
        mu = net.fading[alpha].mu_stack()
        return jmap @ TessArray.from_real(np.diag(mu)) @ jmap.H

    def make_sigma(alpha, t):
        law = net.fading[alpha]
        mu = law.mu_stack()
        gamma_gr = np.outer(mu, mu) + np.diag(law.var_stack())
        delta = (jmap @ TessArray.from_real(gamma_gr * net.cov(t, t)) @ jmap.H) * 4.0
        pi = make_h(alpha, t)
        return delta - pi @ net.fact.gamma(t, t) @ pi.H

    return EquivalentModel(
        k=4, n=n, n_sensors=net.n_sensors, horizon=horizon,
        _h=_Memo(make_h), _sigma=_Memo(make_sigma),
        _rcov=_Memo(lambda a, b, t: net.noise.augmented(a, b, t)),
    )


# -- Monte Carlo equivalence verification --------------------------------------------


def _parts_conj(parts: np.ndarray, kind: str) -> np.ndarray:
    signs = {"star": (1, -1, 1, -1), "iota": (1, 1, -1, -1), "kappa": (1, -1, -1, 1)}[kind]
    return parts * np.asarray(signs, dtype=float)[None, :, None]


def restrict_parts(parts: np.ndarray, k: int) -> np.ndarray:
    """Vectorized k-restriction of (size, 4, n) part stacks along components."""
    if k == 1:
        return parts
    if k == 2:
        return np.concatenate([parts, _parts_conj(parts, "star")], axis=2)
    return np.concatenate([parts, _parts_conj(parts, "star"),
                           _parts_conj(parts, "iota"), _parts_conj(parts, "kappa")], axis=2)


def parts_pair(parts: np.ndarray):
    """(size, 4, n) part stacks -> complex pair arrays of shape (size, n)."""
    zp = (parts[:, 0] + parts[:, 2]) + 1j * (parts[:, 1] + parts[:, 3])
    zm = (parts[:, 0] - parts[:, 2]) + 1j * (parts[:, 1] - parts[:, 3])
    return zp, zm


def empirical_pseudo_cov(a_parts: np.ndarray, b_parts: np.ndarray):
    """Mean of a b^H over the leading axis, and a scalar standard-error bound."""
    ap, am = parts_pair(a_parts)
    bp, bm = parts_pair(b_parts)
    m = a_parts.shape[0]
    prod_p = ap[:, :, None] * bp.conj()[:, None, :]
    prod_m = am[:, :, None] * bm.conj()[:, None, :]
    est = TessArray.from_pair(prod_p.mean(axis=0), prod_m.mean(axis=0))
    se = max(
        float(np.max(prod_p.real.std(axis=0))), float(np.max(prod_p.imag.std(axis=0))),
        float(np.max(prod_m.real.std(axis=0))), float(np.max(prod_m.imag.std(axis=0))),
    ) / np.sqrt(m)
    return est, se


def _stack_to_parts(stack: np.ndarray, n: int) -> np.ndarray:
    """(size, 4n) real stacks -> (size, 4, n) part arrays."""
    return stack.reshape(stack.shape[0], 4, n)


@dataclass(frozen=True)
class EquivalenceRow:
    kind: str
    alpha: int
    beta: int
    t: int
    s: int
    deviation: float
    se: float


@dataclass(frozen=True)
class EquivalenceReport:
    rows: tuple
    draws: int

    @property
    def max_deviation(self) -> float:
        return max(r.deviation for r in self.rows)

    def max_se_multiple(self) -> float:
        return max(r.deviation / max(r.se, 1e-300) for r in self.rows)

    def within(self, multiple: float = 3.0) -> bool:
        return all(r.deviation <= multiple * r.se for r in self.rows)


def verify_second_order_equivalence(net: SensorNetwork, k: int,
                                    grid: Sequence[int], draws: int,
                                    rng: np.random.Generator) -> EquivalenceReport:
    """Compare Monte Carlo moments of y_k with the analytic z model.

    Checks Gamma_{y x}(t, s) per sensor and Gamma_y(t, s) per sensor pair
    on the grid; left sides from simulation of the physical observation
    equation, right sides from the equivalent model.
    """
    model = (build_wl_equivalent_model(net) if k == 4
             else build_equivalent_model(net, k))
    fact = net.fact if k == 4 else net.fact.restrict(k)
    n = net.n
    grid = [t for t in grid if t >= 1]

    x_real = net.cov.simulate(grid, rng, draws)  # (draws, len(grid), 4n)
    xs, ys = {}, {}
    for idx, t in enumerate(grid):
        xp = _stack_to_parts(x_real[:, idx], n)
        gains = [_stack_to_parts(net.fading[a].sample_stack(rng, draws), n)
                 for a in range(net.n_sensors)]
        vs = net.noise.sample_stack(t, rng, draws)  # (draws, R, 4n)
        xs[t] = restrict_parts(xp, k)
        ys[t] = [restrict_parts(gains[a] * xp + _stack_to_parts(vs[:, a], n), k)
                 for a in range(net.n_sensors)]

    rows = []
    for t in grid:
        for s in grid:
            for a in range(net.n_sensors):
                est, se = empirical_pseudo_cov(ys[t][a], xs[s])
                want = model.h(a, t) @ fact.gamma(t, s)
                rows.append(EquivalenceRow("obs-signal", a, -1, t, s,
                                           (est - want).max_abs(), se))
                for b in range(net.n_sensors):
                    est, se = empirical_pseudo_cov(ys[t][a], ys[s][b])
                    want = model.h(a, t) @ fact.gamma(t, s) @ model.h(b, s).H
                    if t == s:
                        want = want + model.gamma_w(a, b, t)
                    rows.append(EquivalenceRow("obs-obs", a, b, t, s,
                                               (est - want).max_abs(), se))
    return EquivalenceReport(rows=tuple(rows), draws=draws)

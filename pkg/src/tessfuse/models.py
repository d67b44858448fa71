"""Factorizable second-order models for tessarine signals.

A signal is *widely factorizable* when the pseudo-autocorrelation of its
augmented vector splits triangularly,

    Gamma(t, s) = Abar(t) @ Bbar(s).H   for t >= s,
                  Bbar(t) @ Abar(s).H   for t <  s,

with 4n x p factors.  Under properness of order k the same kernel restricts
to the leading k*n rows, which is what the estimation engine consumes.

Constructors cover the three standard sources of such kernels -- linear
state models, wide-sense Markov processes, ARMA systems -- plus the scalar
Wiener benchmark model used throughout the experiment suite.  Factors are
evaluated lazily over a finite integer horizon and memoized; everything is
immutable after construction.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .algebra import (
    TessArray,
    augmentation_matrix,
    augmented_from_real,
    block,
    solve,
)

__all__ = [
    "AugmentedFactorization",
    "RestrictedFactorization",
    "RealCovariance",
    "gamma_augmented",
    "restrict",
    "wl_block",
    "wl_to_real",
    "from_state_model",
    "from_markov",
    "from_arma",
    "wiener_model",
    "wiener_example",
    "WIENER_PARAMS",
]


class _Memo:
    """Thread-safe memoization of a pure integer-keyed function.

    Reentrant: memoized recursions (phi(t) calling phi(t-1)) re-enter the
    same memo on one thread.
    """

    def __init__(self, fn):
        self._fn = fn
        self._cache = {}
        self._lock = threading.RLock()

    def __call__(self, *key):
        with self._lock:
            if key not in self._cache:
                self._cache[key] = self._fn(*key)
            return self._cache[key]


class _Chain:
    """Lazily extended recursion v(t) = step(t, v(t-1)) from a fixed v(0)."""

    def __init__(self, first, step):
        self._vals = [first]
        self._step = step
        self._lock = threading.RLock()

    def __call__(self, t: int):
        with self._lock:
            while len(self._vals) <= t:
                s = len(self._vals)
                self._vals.append(self._step(s, self._vals[s - 1]))
            return self._vals[t]


def _check_time(t: int, horizon: int) -> int:
    t = int(t)
    if not 0 <= t <= horizon:
        raise IndexError(f"time {t} outside horizon [0, {horizon}]")
    return t


@dataclass(frozen=True)
class AugmentedFactorization:
    """Triangular factorization of the augmented pseudo-autocorrelation."""

    n: int
    p: int
    horizon: int
    _abar: Callable[[int], TessArray] = field(repr=False)
    _bbar: Callable[[int], TessArray] = field(repr=False)

    def abar(self, t: int) -> TessArray:
        return self._abar(_check_time(t, self.horizon))

    def bbar(self, t: int) -> TessArray:
        return self._bbar(_check_time(t, self.horizon))

    def gamma(self, t: int, s: int) -> TessArray:
        """Pseudo-autocorrelation of the augmented vector at (t, s)."""
        if t >= s:
            return self.abar(t) @ self.bbar(s).H
        return self.bbar(t) @ self.abar(s).H

    def restrict(self, k: int) -> "RestrictedFactorization":
        return restrict(self, k)


@dataclass(frozen=True)
class RestrictedFactorization:
    """Leading k*n rows of an augmented factorization (a proper signal's core)."""

    k: int
    n: int
    p: int
    horizon: int
    _a: Callable[[int], TessArray] = field(repr=False)
    _b: Callable[[int], TessArray] = field(repr=False)

    @property
    def dim(self) -> int:
        return self.k * self.n

    def a(self, t: int) -> TessArray:
        return self._a(_check_time(t, self.horizon))

    def b(self, t: int) -> TessArray:
        return self._b(_check_time(t, self.horizon))

    def gamma(self, t: int, s: int) -> TessArray:
        if t >= s:
            return self.a(t) @ self.b(s).H
        return self.b(t) @ self.a(s).H


def gamma_augmented(f: AugmentedFactorization, t: int, s: int) -> TessArray:
    return f.gamma(t, s)


def restrict(f: AugmentedFactorization, k: int,
             drop_zero_columns: bool = True) -> RestrictedFactorization:
    """Restrict to the leading k*n rows; caller asserts order-k properness.

    Factor columns whose restricted B column vanishes identically over the
    horizon contribute nothing to either kernel branch and are dropped, so
    e.g. the scalar Wiener model restricts to the familiar rank-k*n pair.
    """
    if k not in (1, 2, 4):
        raise ValueError("k must be 1, 2 or 4")
    d = k * f.n

    keep: Optional[np.ndarray] = None
    if drop_zero_columns:
        dead = np.ones(f.p, dtype=bool)
        for t in range(f.horizon + 1):
            bt = f.bbar(t).parts[:, :d, :]
            dead &= ~np.any(bt != 0.0, axis=(0, 1))
            if not dead.any():
                break
        if dead.any():
            keep = np.flatnonzero(~dead)

    def cut(m: TessArray) -> TessArray:
        sub = m.parts[:, :d, :]
        if keep is not None:
            sub = sub[:, :, keep]
        return TessArray(sub)

    p = f.p if keep is None else int(keep.size)
    return RestrictedFactorization(
        k=k, n=f.n, p=p, horizon=f.horizon,
        _a=_Memo(lambda t: cut(f.abar(t))),
        _b=_Memo(lambda t: cut(f.bbar(t))),
    )


@dataclass(frozen=True)
class RealCovariance:
    """Covariance of the stacked real parts, Gamma(t, s) in R^{4n x 4n}.

    Drives trajectory simulation and supplies the per-part second moments
    E[x_{j,nu}^2(t)] the equivalent sensor models need.
    """

    n: int
    horizon: int
    _fn: Callable[[int, int], np.ndarray] = field(repr=False)

    def __call__(self, t: int, s: int) -> np.ndarray:
        _check_time(t, self.horizon)
        _check_time(s, self.horizon)
        return self._fn(t, s)

    def second_moment_diag(self, t: int) -> np.ndarray:
        """diag of Gamma(t, t): E[x_{j,nu}^2(t)] ordered (r, i, j, k) blocks."""
        return np.diagonal(self(t, t)).copy()

    def augmented_gamma(self, t: int, s: int) -> TessArray:
        return augmented_from_real(self(t, s))

    def simulate(self, times: Sequence[int], rng: np.random.Generator,
                 size: int) -> np.ndarray:
        """Draw jointly Gaussian real-part paths on a time grid.

        Returns shape (size, len(times), 4n).  Uses an eigenvalue square
        root so singular grids (e.g. a Wiener process at t=0) sample fine.
        """
        times = list(times)
        m = len(times)
        d = 4 * self.n
        big = np.empty((m * d, m * d))
        for a, ta in enumerate(times):
            for b, tb in enumerate(times):
                big[a * d:(a + 1) * d, b * d:(b + 1) * d] = self(ta, tb)
        big = 0.5 * (big + big.T)
        w, v = np.linalg.eigh(big)
        root = v * np.sqrt(np.clip(w, 0.0, None))
        draws = rng.standard_normal((size, m * d)) @ root.T
        return draws.reshape(size, m, d)


# -- widely linear block structure ------------------------------------------


def wl_block(f1: TessArray, f2: Optional[TessArray] = None,
             f3: Optional[TessArray] = None,
             f4: Optional[TessArray] = None) -> TessArray:
    """Assemble the 4n x 4n operator acting on augmented vectors.

    The four n x n coefficients multiply (x, x*, x^iota, x^kappa)
    respectively; conjugated copies fill the remaining block rows so the
    output is again a valid augmented vector.
    """
    n = f1.shape[0]
    z = TessArray.zeros((n, n))
    f2 = z if f2 is None else f2
    f3 = z if f3 is None else f3
    f4 = z if f4 is None else f4
    return block([
        [f1, f2, f3, f4],
        [f2.conj("star"), f1.conj("star"), f4.conj("star"), f3.conj("star")],
        [f3.conj("iota"), f4.conj("iota"), f1.conj("iota"), f2.conj("iota")],
        [f4.conj("kappa"), f3.conj("kappa"), f2.conj("kappa"), f1.conj("kappa")],
    ])


def wl_to_real(fbar: TessArray, n: int) -> np.ndarray:
    """Real 4n x 4n representation J^H F J of a structured augmented operator."""
    jmap = augmentation_matrix(n)
    m = jmap.H @ fbar @ jmap
    if m.parts[1:].size and float(np.max(np.abs(m.parts[1:]))) > 1e-10 * max(m.max_abs(), 1.0):
        raise ValueError("operator does not preserve augmented structure")
    return m.r.copy()


# -- constructors -------------------------------------------------------------


def _as_time_fn(x, horizon):
    if callable(x):
        return x
    return lambda t: x


def from_state_model(f1, f2, f3, f4, noise_real_cov, n: int, horizon: int,
                     init_real_cov: Optional[np.ndarray] = None) -> AugmentedFactorization:
    """Factorization of x(t+1) = F1 x + F2 x* + F3 x^iota + F4 x^kappa + w(t).

    ``f1..f4`` are n x n tessarine coefficients (constants or callables of
    t); ``noise_real_cov`` is the 4n x 4n covariance of the stacked real
    parts of w(t).  The transition products must stay invertible; a rank
    drop raises :class:`~tessfuse.algebra.SingularMatrixError`.
    """
    fs = [_as_time_fn(f, horizon) for f in (f1, f2, f3, f4)]
    noise = _as_time_fn(noise_real_cov, horizon)
    if init_real_cov is None:
        init_real_cov = np.zeros((4 * n, 4 * n))

    fbar = _Memo(lambda t: wl_block(*(f(t) for f in fs)))

    phi = _Chain(TessArray.eye(4 * n), lambda t, prev: fbar(t - 1) @ prev)

    def _gam_step(t, prev):
        f = fbar(t - 1)
        return f @ prev @ f.H + augmented_from_real(np.asarray(noise(t - 1), dtype=float))

    gam = _Chain(augmented_from_real(np.asarray(init_real_cov, dtype=float)), _gam_step)

    # Bbar(t) = Gamma(t) Phi(t)^{-H} = (Phi(t)^{-1} Gamma(t)^H)^H
    bbar = _Memo(lambda t: solve(phi(t), gam(t).H).H)
    return AugmentedFactorization(n=n, p=4 * n, horizon=horizon, _abar=phi, _bbar=bbar)


def from_markov(gamma_zbar: Callable[[int, int], TessArray], n: int, order: int,
                horizon: int) -> AugmentedFactorization:
    """Factorization of a wide-sense Markov process of the given order.

    ``gamma_zbar(t, s)`` is the pseudo-autocorrelation of the stacked
    forward vector [xbar(t); ...; xbar(t-order+1)] (4n*order square).  Each
    Gamma(k, k) must be invertible.
    """
    big = 4 * n * order

    def _g_step(t, prev):
        # transition Gamma(t, t-1) Gamma(t-1)^{-1}, applied from the left
        gtm = gamma_zbar(t - 1, t - 1)
        step = solve(gtm.H, gamma_zbar(t, t - 1).H).H
        return step @ prev

    g = _Chain(TessArray.eye(big), _g_step)

    def _abar(t):
        return TessArray(g(t).parts[:, :4 * n, :])

    def _bbar(t):
        # V Gamma_z(t) G(t)^{-H} = V (G^{-1} Gamma_z^H)^H: rows after the
        # transpose are columns of the solve, so slice columns first
        x = solve(g(t), gamma_zbar(t, t).H)
        return TessArray(x.parts[:, :, :4 * n]).H

    return AugmentedFactorization(n=n, p=big, horizon=horizon,
                                  _abar=_Memo(_abar), _bbar=_Memo(_bbar))


def from_arma(f_blocks: Sequence[TessArray], g_blocks: Sequence[TessArray],
              noise_real_cov: np.ndarray, n: int, horizon: int) -> AugmentedFactorization:
    """Factorization of an augmented ARMA(p, q) system with zero history.

        xbar(t) = sum_k F_k xbar(t-k) + wbar(t) + sum_k G_k wbar(t-k)

    For q = 0 the usual invertible autoregressive companion drives the
    factors (rank 4n*p).  A moving-average part admits no invertible
    companion (its noise block is nilpotent), so for q >= 1 the exact
    kernel is factored directly over the finite horizon; the factor rank
    then grows with the horizon, which keeps this path for short-horizon
    use.
    """
    f_blocks = list(f_blocks)
    g_blocks = list(g_blocks)
    p_ar = len(f_blocks)
    q_ma = len(g_blocks)
    if p_ar == 0:
        raise ValueError("need at least one autoregressive block")
    d = 4 * n
    qn = augmented_from_real(np.asarray(noise_real_cov, dtype=float))

    if q_ma == 0:
        comp = _ar_companion(f_blocks, d)
        big = d * p_ar
        inj = TessArray.zeros((big, big))
        injp = inj.parts.copy()
        injp[:, :d, :d] = qn.parts
        inj = TessArray(injp)

        gz = _Chain(TessArray.zeros((big, big)),
                    lambda t, prev: comp @ prev @ comp.H + inj)
        hpow = _Chain(TessArray.eye(big), lambda t, prev: comp @ prev)

        def _abar(t):
            return TessArray(hpow(t).parts[:, :d, :])

        def _bbar(t):
            x = solve(hpow(t), gz(t).H)
            return TessArray(x.parts[:, :, :d]).H

        return AugmentedFactorization(n=n, p=big, horizon=horizon,
                                      _abar=_Memo(_abar), _bbar=_Memo(_bbar))

    # q >= 1: exact state propagation with the coupled (singular) companion,
    # then a direct finite-horizon factorization of the resulting kernel.
    gamma = _arma_kernel(f_blocks, g_blocks, qn, d, horizon)
    p_fact = d * (horizon + 1)

    def _abar(t):
        q = np.zeros((4, d, p_fact))
        q[0, :, t * d:(t + 1) * d] = np.eye(d)
        return TessArray(q)

    def _bbar(s):
        cols = [gamma[(tau, s)].H if tau >= s else gamma[(s, tau)]
                for tau in range(horizon + 1)]
        return TessArray(np.concatenate([c.parts for c in cols], axis=2))

    return AugmentedFactorization(n=n, p=p_fact, horizon=horizon,
                                  _abar=_Memo(_abar), _bbar=_Memo(_bbar))


def _ar_companion(f_blocks, d):
    p_ar = len(f_blocks)
    rows = [list(f_blocks)]
    for r in range(p_ar - 1):
        row = [TessArray.zeros((d, d)) for _ in range(p_ar)]
        row[r] = TessArray.eye(d)
        rows.append(row)
    return block(rows) if p_ar > 1 else f_blocks[0]


def _arma_kernel(f_blocks, g_blocks, qn, d, horizon):
    """Gamma_x(t, s) for t >= s of the zero-history ARMA system, exactly."""
    p_ar, q_ma = len(f_blocks), len(g_blocks)
    big = d * (p_ar + q_ma)
    top = list(f_blocks) + list(g_blocks)
    rows = [top]
    for r in range(p_ar - 1):
        row = [TessArray.zeros((d, d)) for _ in range(p_ar + q_ma)]
        row[r] = TessArray.eye(d)
        rows.append(row)
    rows.append([TessArray.zeros((d, d)) for _ in range(p_ar + q_ma)])  # new noise
    for r in range(q_ma - 1):
        row = [TessArray.zeros((d, d)) for _ in range(p_ar + q_ma)]
        row[p_ar + r] = TessArray.eye(d)
        rows.append(row)
    m = block(rows)

    # injection enters the x-row (through G_0 = I) and the first noise slot
    sel = np.zeros((4, big, d))
    sel[0, :d, :] = np.eye(d)
    sel[0, p_ar * d:(p_ar + 1) * d, :] = np.eye(d)
    sel = TessArray(sel)
    inj = sel @ qn @ sel.H

    gz = {0: TessArray.zeros((big, big))}
    for t in range(1, horizon + 1):
        gz[t] = m @ gz[t - 1] @ m.H + inj

    kernel = {}
    for s in range(horizon + 1):
        cur = gz[s]
        kernel[(s, s)] = TessArray(cur.parts[:, :d, :d])
        for t in range(s + 1, horizon + 1):
            cur = m @ cur
            kernel[(t, s)] = TessArray(cur.parts[:, :d, :d])
    return kernel


# -- benchmark Wiener model ----------------------------------------------------

WIENER_PARAMS = {
    "T1": (7.6, 7.6, -2.0, 0.0),
    "T2": (5.6, 2.0, 0.6, 1.2),
}


def wiener_pattern(a: Sequence[float]) -> np.ndarray:
    a1, a2, a3, a4 = (float(v) for v in a)
    return np.array([
        [a1, 0.0, a3, a4],
        [0.0, a2, a4, a3],
        [a3, a4, a1, 0.0],
        [a4, a3, 0.0, a2],
    ])


def wiener_model(a: Sequence[float], horizon: int, n: int = 1):
    """Tessarine Wiener process with per-part increment covariance pattern a.

    Real-part covariance Gamma(t, s) = W min(t, s); the augmented kernel
    factors with a constant left factor and Bbar(t) = t I.  Raises if the
    pattern is not positive semidefinite.
    """
    w4 = wiener_pattern(a)
    eig = np.linalg.eigvalsh(w4)
    if eig.min() < -1e-12 * max(1.0, abs(eig).max()):
        raise ValueError(f"increment covariance not PSD (min eigenvalue {eig.min():.3g})")
    w = np.kron(w4, np.eye(n))
    const = augmented_from_real(w)
    ident = TessArray.eye(4 * n)

    fact = AugmentedFactorization(
        n=n, p=4 * n, horizon=horizon,
        _abar=_Memo(lambda t: const),
        _bbar=_Memo(lambda t: ident * float(t)),
    )
    cov = RealCovariance(n=n, horizon=horizon,
                         _fn=lambda t, s: w * float(min(t, s)))
    return fact, cov


def wiener_example(scenario: str, horizon: int):
    """The two benchmark parameterizations, by label T1 or T2."""
    if scenario not in WIENER_PARAMS:
        raise ValueError(f"unknown scenario {scenario!r}")
    return wiener_model(WIENER_PARAMS[scenario], horizon)

"""Local linear MMSE estimation driven by second-order statistics only.

The engine is dimension-generic: the same recursions run the reduced
order-1 and order-2 processing modes and the full widely linear mode,
differing only in the :class:`ModelBundle` they are handed (processing
dimension d = k*n and factor rank p).

Per sensor, with factors A(t), B(t) and equivalent model (H, R, Sigma),
the innovation recursion is

    eps(t)   = y(t) - H(t) A(t) e(t-1)
    J(t)     = [B(t)^H - Q(t-1) A(t)^H] H(t)^H
    Omega(t) = R(t) + Sigma(t) + H(t) A(t) J(t)
    e(t)     = e(t-1) + J(t) Omega(t)^{-1} eps(t)
    Q(t)     = Q(t-1) + J(t) Omega(t)^{-1} J(t)^H

from e(0) = 0, Q(0) = 0, giving the filter A(t) e(t) with error
pseudo-variance A(t)[B(t)^H - Q(t) A(t)^H].  Prediction reuses (e, Q) at
the data horizon; smoothing runs the usual backward-free forward sweep in
the fixed time t with gain L(t, s) and memory M(t, s).

:func:`batch_linear_mmse` solves the same projection problem directly on
the stacked Gram system; it is deliberately independent of the recursion
path and serves as the correctness reference for every estimate kind.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .algebra import TessArray, block, hstack, solve, solve_right, vstack
from .models import RestrictedFactorization
from .sensing import EquivalentModel, SensorNetwork, build_equivalent_model, \
    build_wl_equivalent_model

__all__ = [
    "ModelBundle",
    "GainRecord",
    "FilterStep",
    "FilterState",
    "SmootherState",
    "EstimateResult",
    "filter_init",
    "filter_step",
    "run_filter",
    "state_at",
    "predict_at",
    "smoother_init",
    "smooth_step",
    "smooth_to",
    "batch_linear_mmse",
    "batch_coefficients",
    "batch_cross_moment",
    "batch_centralized",
]


@dataclass(frozen=True)
class ModelBundle:
    """Signal factors plus per-sensor equivalent observation model."""

    fact: RestrictedFactorization
    eq: EquivalentModel

    def __post_init__(self):
        if self.fact.k * self.fact.n != self.eq.dim:
            raise ValueError("factorization and equivalent model dimensions differ")

    @classmethod
    def from_network(cls, net: SensorNetwork, k: int) -> "ModelBundle":
        eq = build_wl_equivalent_model(net) if k == 4 else build_equivalent_model(net, k)
        return cls(fact=net.fact.restrict(k), eq=eq)

    @property
    def d(self) -> int:
        return self.eq.dim

    @property
    def p(self) -> int:
        return self.fact.p

    @property
    def n(self) -> int:
        return self.fact.n

    @property
    def n_sensors(self) -> int:
        return self.eq.n_sensors

    @property
    def horizon(self) -> int:
        return min(self.fact.horizon, self.eq.horizon)

    def a(self, t: int) -> TessArray:
        return self.fact.a(t)

    def b(self, t: int) -> TessArray:
        return self.fact.b(t)

    def gamma(self, t: int, s: int) -> TessArray:
        return self.fact.gamma(t, s)

    def h(self, alpha: int, t: int) -> TessArray:
        return self.eq.h(alpha, t)

    def sigma(self, alpha: int, t: int) -> TessArray:
        return self.eq.sigma(alpha, t)

    def rcov(self, alpha: int, beta: int, t: int) -> TessArray:
        return self.eq.rcov(alpha, beta, t)


@dataclass(frozen=True)
class EstimateResult:
    """An estimate of the signal core at time t given data through s."""

    xhat: TessArray
    p: TessArray
    kind: str
    t: int
    s: int

    @property
    def lag(self) -> int:
        return abs(self.t - self.s)

    def leading(self, n: int):
        """First n tessarine components and leading n x n error block."""
        return self.xhat[:n], self.p[:n, :n]

    def real_trace(self, n: Optional[int] = None) -> float:
        sub = self.p if n is None else self.p[:n, :n]
        return float(np.trace(sub.r))


def _kind(t: int, s: int) -> str:
    if t == s:
        return "filter"
    return "predictor" if t > s else "smoother"


@dataclass(frozen=True)
class GainRecord:
    """Data-free per-step quantities of one sensor's recursion."""

    t: int
    j: TessArray       # p x d gain core
    omega: TessArray   # d x d innovation pseudo-covariance
    k: TessArray       # J Omega^{-1}
    w: TessArray       # Omega^{-1} J^H
    q: TessArray       # p x p after the update


def local_gain_step(bundle: ModelBundle, alpha: int, t: int,
                    q_prev: TessArray) -> GainRecord:
    a = bundle.a(t)
    b = bundle.b(t)
    h = bundle.h(alpha, t)
    j = (b.H - q_prev @ a.H) @ h.H
    omega = bundle.rcov(alpha, alpha, t) + bundle.sigma(alpha, t) + h @ (a @ j)
    w = solve(omega, j.H)
    kmat = solve(omega.H, j.H).H
    q = q_prev + j @ w
    return GainRecord(t=t, j=j, omega=omega, k=kmat, w=w, q=q)


@dataclass(frozen=True)
class FilterStep:
    gain: GainRecord
    eps: TessArray
    winno: TessArray  # Omega^{-1} eps
    e: TessArray      # coefficient state after the update


@dataclass(frozen=True)
class FilterState:
    """Value-style filter state; each step returns a new one."""

    alpha: int
    t: int
    e: TessArray
    q: TessArray
    steps: tuple = ()

    def step(self, t: int) -> FilterStep:
        if not 1 <= t <= self.t:
            raise IndexError(f"no step {t} recorded (state at t={self.t})")
        return self.steps[t - 1]


def filter_init(bundle: ModelBundle, alpha: int) -> FilterState:
    return FilterState(alpha=alpha, t=0,
                       e=TessArray.zeros((bundle.p,)),
                       q=TessArray.zeros((bundle.p, bundle.p)))


def filter_step(state: FilterState, y_t: TessArray,
                bundle: ModelBundle) -> tuple:
    """Advance one observation; returns (new state, filter estimate).

    ``y_t`` is the order-restricted observation vector (length d).
    Raises :class:`~tessfuse.algebra.SingularMatrixError` if the innovation
    pseudo-covariance degenerates.
    """
    t = state.t + 1
    gain = local_gain_step(bundle, state.alpha, t, state.q)
    a = bundle.a(t)
    h = bundle.h(state.alpha, t)
    eps = y_t - h @ (a @ state.e)
    winno = solve(gain.omega, eps)
    e = state.e + gain.j @ winno
    new = FilterState(alpha=state.alpha, t=t, e=e, q=gain.q,
                      steps=state.steps + (FilterStep(gain, eps, winno, e),))
    xhat = a @ e
    p = (a @ (bundle.b(t).H - gain.q @ a.H)).symmetrized()
    return new, EstimateResult(xhat=xhat, p=p, kind="filter", t=t, s=t)


def run_filter(bundle: ModelBundle, alpha: int, ys: Sequence[TessArray]):
    """Filter a whole observation sequence; returns (final state, results)."""
    state = filter_init(bundle, alpha)
    results = []
    for y in ys:
        state, res = filter_step(state, y, bundle)
        results.append(res)
    return state, results


def predict_at(state: FilterState, t: int, bundle: ModelBundle) -> EstimateResult:
    """Estimate at a future time t > state.t from the current state."""
    if t <= state.t:
        raise ValueError(f"prediction needs t > {state.t}, got {t}")
    a = bundle.a(t)
    xhat = a @ state.e
    p = (a @ (bundle.b(t).H - state.q @ a.H)).symmetrized()
    return EstimateResult(xhat=xhat, p=p, kind="predictor", t=t, s=state.t)


@dataclass(frozen=True)
class SmootherState:
    """Fixed-time smoother advanced over growing data horizons."""

    alpha: int
    t: int
    s: int
    m: TessArray      # d x p memory E[xhat(t|s) e(s)^H]
    xhat: TessArray
    p: TessArray

    def result(self) -> EstimateResult:
        kind = "filter" if self.t == self.s else "smoother"
        return EstimateResult(xhat=self.xhat, p=self.p, kind=kind,
                              t=self.t, s=self.s)


def smoother_init(state: FilterState, t: int, bundle: ModelBundle) -> SmootherState:
    """Seed smoothing of time t from the filtered history at t."""
    if not 1 <= t <= state.t:
        raise ValueError(f"need filtered history at t={t}")
    step = state.step(t)
    a = bundle.a(t)
    e_t = _e_at(state, t)
    xhat = a @ e_t
    p = (a @ (bundle.b(t).H - step.gain.q @ a.H)).symmetrized()
    return SmootherState(alpha=state.alpha, t=t, s=t,
                         m=a @ step.gain.q, xhat=xhat, p=p)


def _e_at(state: FilterState, t: int) -> TessArray:
    return state.e if t == state.t else state.step(t).e


def state_at(state: FilterState, s: int) -> FilterState:
    """A past view of the recursion, as of data horizon s <= state.t."""
    if s == 0:
        return FilterState(alpha=state.alpha, t=0,
                           e=TessArray.zeros(state.e.shape),
                           q=TessArray.zeros(state.q.shape))
    step = state.step(s)
    return FilterState(alpha=state.alpha, t=s, e=step.e, q=step.gain.q,
                       steps=state.steps[:s])


def smooth_step(sm: SmootherState, state: FilterState,
                bundle: ModelBundle) -> SmootherState:
    """Absorb the innovation at s+1 into the fixed-time-t estimate."""
    s = sm.s + 1
    if s > state.t:
        raise ValueError(f"filter history ends at {state.t}, need step {s}")
    step = state.step(s)
    b_t = bundle.b(sm.t)
    z = (b_t - sm.m) @ (bundle.a(s).H @ bundle.h(state.alpha, s).H)
    lgain = solve_right(z, step.gain.omega)
    xhat = sm.xhat + lgain @ step.eps
    p = (sm.p - lgain @ step.gain.omega @ lgain.H).symmetrized()
    m = sm.m + lgain @ step.gain.j.H
    return SmootherState(alpha=sm.alpha, t=sm.t, s=s, m=m, xhat=xhat, p=p)


def smooth_to(state: FilterState, t: int, s: int, bundle: ModelBundle) -> EstimateResult:
    """Convenience: smoothed estimate of t given data through s >= t."""
    if s < t:
        raise ValueError("smoothing needs s >= t")
    sm = smoother_init(state, t, bundle)
    while sm.s < s:
        sm = smooth_step(sm, state, bundle)
    return sm.result()


# -- batch reference ------------------------------------------------------------


def _gram_blocks(bundle: ModelBundle, alpha: int, beta: int, s: int):
    """Observation Gram blocks Gamma_{y^alpha y^beta}(i, j) for i, j <= s."""
    rows = []
    for i in range(1, s + 1):
        hi = bundle.h(alpha, i)
        row = []
        for jj in range(1, s + 1):
            blk = hi @ bundle.gamma(i, jj) @ bundle.h(beta, jj).H
            if i == jj:
                blk = blk + bundle.rcov(alpha, beta, i)
                if alpha == beta:
                    blk = blk + bundle.sigma(alpha, i)
            row.append(blk)
        rows.append(row)
    return rows


def batch_coefficients(bundle: ModelBundle, alpha: int, t: int, s: int) -> TessArray:
    """Projection coefficients C with xhat(t|s) = C @ stack(y(1..s))."""
    gram = block(_gram_blocks(bundle, alpha, alpha, s))
    gxy = hstack([bundle.gamma(t, jj) @ bundle.h(alpha, jj).H
                  for jj in range(1, s + 1)])
    return solve_right(gxy, gram)


def batch_linear_mmse(bundle: ModelBundle, alpha: int, ys: Sequence[TessArray],
                      targets: Sequence[tuple]) -> list:
    """Direct Gram-solve estimates for a list of (t, s) targets.

    Stacks y(1..s), assembles the observation Gram matrix from the
    second-order model, and solves the normal equations; independent of the
    recursive path and intended for small data horizons.
    """
    out = []
    for t, s in targets:
        if s == 0:
            xhat = TessArray.zeros((bundle.d,))
            p = bundle.gamma(t, t)
        else:
            c = batch_coefficients(bundle, alpha, t, s)
            ystack = vstack([ys[i] for i in range(s)])
            gxy = hstack([bundle.gamma(t, jj) @ bundle.h(alpha, jj).H
                          for jj in range(1, s + 1)])
            xhat = c @ ystack
            p = bundle.gamma(t, t) - c @ gxy.H
        out.append(EstimateResult(xhat=xhat, p=p.symmetrized(),
                                  kind=_kind(t, s), t=t, s=s))
    return out


def batch_cross_moment(bundle: ModelBundle, alpha: int, beta: int,
                       t: int, s: int) -> TessArray:
    """E[xhat^alpha(t|s) xhat^beta(t|s)^H] via batch projections."""
    ca = batch_coefficients(bundle, alpha, t, s)
    cb = batch_coefficients(bundle, beta, t, s)
    cross = block(_gram_blocks(bundle, alpha, beta, s))
    return ca @ cross @ cb.H


def batch_centralized(bundle: ModelBundle, ys_list: Sequence[Sequence[TessArray]],
                      t: int, s: int) -> EstimateResult:
    """All-sensor joint batch MMSE (the centralized reference)."""
    n_sensors = bundle.n_sensors
    rows = []
    for a in range(n_sensors):
        rows.append([block(_gram_blocks(bundle, a, b, s)) for b in range(n_sensors)])
    gram = block(rows)
    gxy = hstack([hstack([bundle.gamma(t, jj) @ bundle.h(a, jj).H
                          for jj in range(1, s + 1)])
                  for a in range(n_sensors)])
    c = solve_right(gxy, gram)
    ystack = vstack([vstack([ys_list[a][i] for i in range(s)])
                     for a in range(n_sensors)])
    xhat = c @ ystack
    p = bundle.gamma(t, t) - c @ gxy.H
    return EstimateResult(xhat=xhat, p=p.symmetrized(), kind=_kind(t, s), t=t, s=s)

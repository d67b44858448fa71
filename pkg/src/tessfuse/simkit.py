"""Scenarios, trajectory simulation, Monte Carlo validation and timing.

A :class:`Scenario` bundles the benchmark signal (a tessarine Wiener
process with one of two increment patterns), three fading sensors, and a
shared-source correlated noise law.  From it one can build the physical
sensor network, the processing bundles at reduced order k or full widely
linear order, simulate trajectories reproducibly, and compare empirical
estimation errors against the theoretical error pseudo-variances.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .algebra import TessArray
from .models import RealCovariance, wiener_model
from .sensing import (
    Bernoulli,
    Discrete,
    FadingLaw,
    NoiseLaw,
    SensorNetwork,
    Uniform,
    check_properness,
    restrict_parts,
)

__all__ = [
    "Scenario",
    "Trajectory",
    "MCRow",
    "MCReport",
    "TimingRow",
    "t1_scenario",
    "t2_scenario",
    "build_network",
    "build_bundle",
    "simulate_trajectory",
    "run_monte_carlo",
    "timing_benchmark",
    "theil_sen_slope",
]

NOISE_BASE = np.array([
    [6.0, 0.0, 4.0, 0.0],
    [0.0, 6.0, 0.0, 4.0],
    [4.0, 0.0, 6.0, 0.0],
    [0.0, 4.0, 0.0, 6.0],
])


@dataclass(frozen=True)
class Scenario:
    """A complete experiment configuration (signal, sensors, run sizes)."""

    label: str
    k: int
    a: tuple
    lambdas: tuple
    noise_base: np.ndarray
    fading: tuple
    horizon: int
    replications: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if any(v <= 0 for v in self.lambdas):
            raise ValueError("noise scale factors must be positive")
        if self.k not in (1, 2):
            raise ValueError("declared properness order must be 1 or 2")

    @property
    def n_sensors(self) -> int:
        return len(self.lambdas)

    def with_horizon(self, horizon: int) -> "Scenario":
        return replace(self, horizon=horizon)


def t1_scenario(horizon: int = 100, replications: int = 10_000,
                seed: int = 20250810) -> Scenario:
    """Order-1 proper benchmark: one gain law shared by all four parts."""
    fading = (
        FadingLaw.same(Uniform(0.2, 0.8)),
        FadingLaw.same(Discrete((0.0, 0.5, 1.0), (0.3, 0.2, 0.5))),
        FadingLaw.same(Bernoulli(0.9)),
    )
    return Scenario(label="T1", k=1, a=(7.6, 7.6, -2.0, 0.0),
                    lambdas=(0.2, 0.5, 0.6), noise_base=NOISE_BASE,
                    fading=fading, horizon=horizon,
                    replications=replications, seed=seed)


def t2_scenario(horizon: int = 100, replications: int = 10_000,
                seed: int = 20250810) -> Scenario:
    """Order-2 proper benchmark: r/j share one law, i/k another."""
    fading = (
        FadingLaw.paired(Uniform(0.15, 0.45), Uniform(0.1, 0.7)),
        FadingLaw.paired(Discrete((0.0, 0.5, 1.0), (0.3, 0.2, 0.5)),
                         Discrete((0.0, 0.5, 1.0), (0.1, 0.6, 0.3))),
        FadingLaw.paired(Bernoulli(0.8), Bernoulli(0.7)),
    )
    return Scenario(label="T2", k=2, a=(5.6, 2.0, 0.6, 1.2),
                    lambdas=(0.2, 0.5, 0.6), noise_base=NOISE_BASE,
                    fading=fading, horizon=horizon,
                    replications=replications, seed=seed)


def build_network(sc: Scenario) -> SensorNetwork:
    fact, cov = wiener_model(sc.a, sc.horizon)
    noise = NoiseLaw.scaled(sc.lambdas, sc.noise_base)
    net = SensorNetwork(fact=fact, cov=cov, fading=sc.fading, noise=noise)
    report = check_properness(net, sc.k)
    if not report.ok:
        raise ValueError(f"scenario {sc.label} fails its declared order "
                         f"{sc.k}: {report.first()}")
    return net


def build_bundle(sc: Scenario, k: Optional[int] = None,
                 net: Optional[SensorNetwork] = None):
    """Processing bundle at order k (default: the scenario's declared order)."""
    from .estimator import ModelBundle

    net = build_network(sc) if net is None else net
    return ModelBundle.from_network(net, sc.k if k is None else k)


# -- trajectory simulation ------------------------------------------------------


@dataclass(frozen=True)
class Trajectory:
    """One sampled path of signal, gains, noises and observations.

    Part arrays are shaped (steps, 4, n); the signal includes t = 0 while
    per-sensor arrays start at t = 1.  The observation identity
    y = gamma * x + v holds exactly as generated.
    """

    n: int
    horizon: int
    x_parts: np.ndarray        # (horizon+1, 4, n)
    gain_parts: np.ndarray     # (R, horizon, 4, n)
    noise_parts: np.ndarray    # (R, horizon, 4, n)
    obs_parts: np.ndarray      # (R, horizon, 4, n)

    def x(self, t: int) -> TessArray:
        return TessArray(self.x_parts[t])

    def y(self, alpha: int, t: int) -> TessArray:
        return TessArray(self.obs_parts[alpha, t - 1])

    def y_restricted(self, alpha: int, t: int, k: int) -> TessArray:
        return TessArray(restrict_parts(self.obs_parts[alpha, t - 1][None], k)[0])

    def observations(self, alpha: int, k: int, upto: Optional[int] = None):
        upto = self.horizon if upto is None else upto
        return [self.y_restricted(alpha, t, k) for t in range(1, upto + 1)]


def _rng_for(sc: Scenario, replicate: int, source: int, sensor: int = 0):
    seq = np.random.SeedSequence(entropy=sc.seed,
                                 spawn_key=(replicate, source, sensor))
    return np.random.default_rng(seq)


def _psd_chol(c: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (c + c.T))
    return v * np.sqrt(np.clip(w, 0.0, None))


def simulate_trajectory(sc: Scenario, replicate: int,
                        net: Optional[SensorNetwork] = None) -> Trajectory:
    """Deterministic draw of one replicate (same seed + index => identical).

    Signal increments are Gaussian with the scenario's per-part pattern;
    noise comes from the shared scaled source; each of the four gain parts
    is drawn independently from its per-sensor law, so all first and second
    moments the estimator consumes hold exactly.
    """
    net = build_network(sc) if net is None else net
    n, horizon, n_sensors = net.n, sc.horizon, net.n_sensors

    rng_sig = _rng_for(sc, replicate, 0)
    rng_noise = _rng_for(sc, replicate, 1)
    rng_gain = [_rng_for(sc, replicate, 2, a) for a in range(n_sensors)]

    chol = _psd_chol(net.cov(1, 1))
    incs = rng_sig.standard_normal((horizon, 4 * n)) @ chol.T
    x_stack = np.vstack([np.zeros((1, 4 * n)), np.cumsum(incs, axis=0)])
    x_parts = x_stack.reshape(horizon + 1, 4, n)

    gain_parts = np.empty((n_sensors, horizon, 4, n))
    for a in range(n_sensors):
        draws = net.fading[a].sample_stack(rng_gain[a], horizon)
        gain_parts[a] = draws.reshape(horizon, 4, n)

    noise_parts = np.empty((n_sensors, horizon, 4, n))
    for t in range(1, horizon + 1):
        stack = net.noise.sample_stack(t, rng_noise, 1)[0]
        noise_parts[:, t - 1] = stack.reshape(n_sensors, 4, n)

    obs_parts = gain_parts * x_parts[None, 1:] + noise_parts
    for arr in (x_parts, gain_parts, noise_parts, obs_parts):
        arr.setflags(write=False)
    return Trajectory(n=n, horizon=horizon, x_parts=x_parts,
                      gain_parts=gain_parts, noise_parts=noise_parts,
                      obs_parts=obs_parts)


# -- Monte Carlo validation -------------------------------------------------------


@dataclass(frozen=True)
class MCRow:
    """Empirical vs theoretical error pseudo-variance of one fused target."""

    kind: str
    tau: int
    t: int
    s: int
    theory: float
    empirical: float
    se: float
    bias_se_multiple: float

    @property
    def rel_dev(self) -> float:
        return abs(self.empirical - self.theory) / max(abs(self.theory), 1e-300)

    @property
    def precise(self) -> bool:
        return 2.0 * self.se <= 0.1 * max(abs(self.theory), 1e-300)


@dataclass(frozen=True)
class TimingRow:
    variant: str
    n: int
    seconds: float


@dataclass(frozen=True)
class MCReport:
    label: str
    k: int
    replications: int
    seed: int
    rows: tuple
    timing: tuple = ()

    def row(self, kind: str, tau: int, t: int) -> MCRow:
        for r in self.rows:
            if (r.kind, r.tau, r.t) == (kind, tau, t):
                return r
        raise KeyError((kind, tau, t))

    @property
    def imprecise_rows(self) -> tuple:
        return tuple(r for r in self.rows if not r.precise)

    @property
    def warnings(self) -> tuple:
        out = []
        if self.imprecise_rows:
            out.append(f"{len(self.imprecise_rows)} rows with wide uncertainty "
                       f"bands (replications={self.replications})")
        return tuple(out)


def _pair_of_parts(parts: np.ndarray):
    """(m, 4, n) part stacks -> two (m, n) complex channel arrays."""
    zp = (parts[:, 0] + parts[:, 2]) + 1j * (parts[:, 1] + parts[:, 3])
    zm = (parts[:, 0] - parts[:, 2]) + 1j * (parts[:, 1] - parts[:, 3])
    return zp, zm


class _FusedTargets:
    """Deterministic weights and gains shared by every replicate block."""

    def __init__(self, bundle, pipeline, eval_times, kinds, taus, horizon):
        from .fusion import FusionPipeline

        self.bundle = bundle
        self.pipe = pipeline if pipeline is not None else FusionPipeline(bundle)
        self.eval_times = tuple(eval_times)
        self.kinds = tuple(kinds)
        self.taus = tuple(taus)
        self.horizon = horizon
        self.targets = []
        for t in self.eval_times:
            if "filter" in kinds:
                self.targets.append(("filter", 0, t, t))
            if "predictor" in kinds:
                for tau in taus:
                    if t - tau >= 1:
                        self.targets.append(("predictor", tau, t, t - tau))
            if "smoother" in kinds:
                for tau in taus:
                    if t + tau <= horizon:
                        self.targets.append(("smoother", tau, t, t + tau))
        self.max_s = max([tg[3] for tg in self.targets] + [0])
        self.max_time = max([max(tg[2], tg[3]) for tg in self.targets] + [0])
        # per-step complex gains, channel-major
        self.ha = {}
        self.kk = {}
        self.amat = {}
        for t in range(1, self.max_s + 1):
            a_p, a_m = self.bundle.a(t).pair
            self.amat[t] = (a_p, a_m)
            for alpha in range(bundle.n_sensors):
                rec = self.pipe.local_record(alpha, t)
                self.kk[(alpha, t)] = rec.k.pair
                self.ha[(alpha, t)] = (self.bundle.h(alpha, t) @ self.bundle.a(t)).pair
        self.weights = {}
        self.theory = {}
        for kind, tau, t, s in self.targets:
            w, p = self.pipe.fused_cov(t, s)
            self.weights[(t, s)] = w.pair
            self.theory[(kind, tau, t)] = float(np.trace(p.r[:bundle.n, :bundle.n]))
        self.smooth_gains = {}
        for kind, tau, t, s in self.targets:
            if kind != "smoother":
                continue
            for alpha in range(bundle.n_sensors):
                sm = self.pipe._local_smoother(alpha, t, s)
                for sig in range(t + 1, s + 1):
                    self.smooth_gains[(alpha, t, sig)] = sm.l[sig].pair


def _mc_block(sc: Scenario, net, tg: _FusedTargets, block_index: int,
              block_size: int):
    """Simulate one replicate block and accumulate fused squared errors."""
    bundle = tg.bundle
    r_sensors = bundle.n_sensors
    n, d, p = bundle.n, bundle.d, bundle.p
    m = block_size
    seq = np.random.SeedSequence(entropy=sc.seed, spawn_key=(90210, block_index))
    rng = np.random.default_rng(seq)
    chol = _psd_chol(net.cov(1, 1))

    k_order = {1: 1, 2: 2, 4: 4}[bundle.fact.k]
    xs = np.zeros((m, 4 * n))
    e_p = [np.zeros((m, p), dtype=complex) for _ in range(r_sensors)]
    e_m = [np.zeros((m, p), dtype=complex) for _ in range(r_sensors)]
    eps_hist = [dict() for _ in range(r_sensors)]
    x_at = {}
    xf = {}      # (alpha, t) -> local filtered estimates (pair)
    e_at = {}    # (alpha, s) -> coefficient state snapshots (pair)

    need_eat = {s for kind, tau, t, s in tg.targets if kind == "predictor"}
    need_xf = {t for kind, tau, t, s in tg.targets if kind != "predictor"}
    need_x = {t for kind, tau, t, s in tg.targets}
    need_eps = set()
    for kind, tau, t, s in tg.targets:
        if kind == "smoother":
            need_eps.update(range(t + 1, s + 1))

    for t in range(1, tg.max_time + 1):
        xs = xs + rng.standard_normal((m, 4 * n)) @ chol.T
        if t in need_x:
            x_at[t] = _pair_of_parts(xs.reshape(m, 4, n))
        if t > tg.max_s:
            continue  # beyond the data horizon only the signal is needed
        vs = net.noise.sample_stack(t, rng, m)
        for alpha in range(r_sensors):
            g = net.fading[alpha].sample_stack(rng, m)
            yparts = restrict_parts(
                (g * xs + vs[:, alpha]).reshape(m, 4, n), k_order)
            yp, ym = _pair_of_parts(yparts)
            hap, ham = tg.ha[(alpha, t)]
            ep = yp - e_p[alpha] @ hap.T
            em = ym - e_m[alpha] @ ham.T
            kp, km = tg.kk[(alpha, t)]
            e_p[alpha] = e_p[alpha] + ep @ kp.T
            e_m[alpha] = e_m[alpha] + em @ km.T
            if t in need_eps:
                eps_hist[alpha][t] = (ep, em)
            if t in need_eat:
                e_at[(alpha, t)] = (e_p[alpha], e_m[alpha])
            if t in need_xf:
                a_p, a_m = tg.amat[t]
                xf[(alpha, t)] = (e_p[alpha] @ a_p.T, e_m[alpha] @ a_m.T)

    sums = {}
    for kind, tau, t, s in tg.targets:
        locals_p, locals_m = [], []
        for alpha in range(r_sensors):
            if kind == "filter":
                lp, lm = xf[(alpha, t)]
            elif kind == "predictor":
                a_p, a_m = tg.amat[t] if t in tg.amat else tg.bundle.a(t).pair
                ep_s, em_s = e_at[(alpha, s)]
                lp, lm = ep_s @ a_p.T, em_s @ a_m.T
            else:
                lp, lm = xf[(alpha, t)]
                lp, lm = lp.copy(), lm.copy()
                for sig in range(t + 1, s + 1):
                    gp, gm = tg.smooth_gains[(alpha, t, sig)]
                    ep, em = eps_hist[alpha][sig]
                    lp += ep @ gp.T
                    lm += em @ gm.T
            locals_p.append(lp)
            locals_m.append(lm)
        wp, wm = tg.weights[(t, s)]
        fused_p = sum(locals_p[a] @ wp[:, a * d:(a + 1) * d].T
                      for a in range(r_sensors))
        fused_m = sum(locals_m[a] @ wm[:, a * d:(a + 1) * d].T
                      for a in range(r_sensors))
        xt_p, xt_m = x_at[t]
        err_p = xt_p - fused_p[:, :n]
        err_m = xt_m - fused_m[:, :n]
        sq = 0.5 * (np.abs(err_p) ** 2 + np.abs(err_m) ** 2).sum(axis=1)
        bias_vec = np.concatenate([
            0.5 * (err_p.sum(axis=0).real + err_m.sum(axis=0).real),
            0.5 * (err_p.sum(axis=0).imag + err_m.sum(axis=0).imag),
            0.5 * (err_p.sum(axis=0).real - err_m.sum(axis=0).real),
            0.5 * (err_p.sum(axis=0).imag - err_m.sum(axis=0).imag),
        ])
        bias_sq = np.concatenate([
            (0.5 * (err_p.real + err_m.real) ** 2).sum(axis=0),
            (0.5 * (err_p.imag + err_m.imag) ** 2).sum(axis=0),
            (0.5 * (err_p.real - err_m.real) ** 2).sum(axis=0),
            (0.5 * (err_p.imag - err_m.imag) ** 2).sum(axis=0),
        ])
        sums[(kind, tau, t)] = (float(sq.sum()), float((sq * sq).sum()),
                                bias_vec, bias_sq)
    return sums


def run_monte_carlo(sc: Scenario, kinds: Sequence[str] = ("filter",),
                    taus: Sequence[int] = (1, 3, 5),
                    eval_times: Optional[Sequence[int]] = None,
                    replications: Optional[int] = None,
                    jobs: int = 1,
                    net: Optional[SensorNetwork] = None,
                    k: Optional[int] = None) -> MCReport:
    """Empirical fused estimation errors against the theoretical values.

    Replicates are processed in fixed-size blocks with per-block random
    substreams and reduced in block order, so the report is bit-identical
    for a given scenario and seed regardless of the parallelism degree.
    """
    from .fusion import FusionPipeline

    net = build_network(sc) if net is None else net
    order = sc.k if k is None else k
    bundle = build_bundle(sc, order, net=net)
    m = sc.replications if replications is None else replications
    eval_times = ([max(1, sc.horizon // 10), max(1, sc.horizon // 2), sc.horizon]
                  if eval_times is None else list(eval_times))
    tg = _FusedTargets(bundle, None, eval_times, kinds, taus, sc.horizon)

    block = 4096
    n_blocks = (m + block - 1) // block
    sizes = [block] * (n_blocks - 1) + [m - block * (n_blocks - 1)]

    def work(i):
        return _mc_block(sc, net, tg, i, sizes[i])

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            partials = list(pool.map(work, range(n_blocks)))
    else:
        partials = [work(i) for i in range(n_blocks)]

    rows = []
    for kind, tau, t, s in tg.targets:
        tot = sum(p[(kind, tau, t)][0] for p in partials)
        tot2 = sum(p[(kind, tau, t)][1] for p in partials)
        bias = sum(p[(kind, tau, t)][2] for p in partials) / m
        bias2 = sum(p[(kind, tau, t)][3] for p in partials) / m
        mean = tot / m
        var = max(tot2 / m - mean * mean, 0.0)
        se = float(np.sqrt(var / m))
        bias_se = np.sqrt(np.clip(bias2 - bias * bias, 1e-300, None) / m)
        bias_mult = float(np.max(np.abs(bias) / bias_se))
        rows.append(MCRow(kind=kind, tau=tau, t=t, s=s,
                          theory=tg.theory[(kind, tau, t)],
                          empirical=mean, se=se, bias_se_multiple=bias_mult))
    return MCReport(label=sc.label, k=order, replications=m, seed=sc.seed,
                    rows=tuple(rows))


# -- timing ------------------------------------------------------------------------


def theil_sen_slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Median of pairwise slopes; robust against scheduler outliers."""
    slopes = [(ys[j] - ys[i]) / (xs[j] - xs[i])
              for i in range(len(xs)) for j in range(i + 1, len(xs))
              if xs[j] != xs[i]]
    return float(np.median(slopes))


def timing_benchmark(sc: Scenario, n_grid: Sequence[int],
                     variants: Sequence[str] = ("tk", "wl"),
                     repeats: int = 5) -> tuple:
    """Median wall-clock seconds of the full fused filtering pass.

    The timed region covers local recursions, cross-moment recursions and
    the per-step fusion solve; observation generation and model matrices
    are prepared outside the timer.  One warm-up run precedes the timed
    repeats at each (variant, N).
    """
    from .fusion import distributed_filter_pass

    rows = []
    for n_obs in n_grid:
        scn = sc.with_horizon(int(n_obs))
        net = build_network(scn)
        traj = simulate_trajectory(scn, 0, net=net)
        for variant in variants:
            order = scn.k if variant == "tk" else 4
            bundle = build_bundle(scn, order, net=net)
            ys_list = [traj.observations(a, order) for a in range(scn.n_sensors)]
            distributed_filter_pass(bundle, ys_list)  # warm model caches
            times = []
            for _ in range(repeats):
                start = time.perf_counter()
                distributed_filter_pass(bundle, ys_list)
                times.append(time.perf_counter() - start)
            rows.append(TimingRow(variant=variant, n=int(n_obs),
                                  seconds=float(np.median(times))))
    return tuple(rows)


def timing_ratios(rows: Sequence[TimingRow]) -> dict:
    """N -> (widely linear seconds) / (reduced-order seconds)."""
    by = {}
    for row in rows:
        by.setdefault(row.n, {})[row.variant] = row.seconds
    return {n: v["wl"] / v["tk"] for n, v in sorted(by.items())
            if "wl" in v and "tk" in v}

"""Cross-sensor moment recursions and matrix-weighted fusion."""

import numpy as np
import pytest

from tessfuse.algebra import SingularMatrixError, TessArray
from tessfuse.estimator import (
    ModelBundle,
    batch_centralized,
    batch_cross_moment,
    batch_linear_mmse,
    run_filter,
)
from tessfuse.fusion import (
    CrossState,
    FusionPipeline,
    cross_filter_step,
    cross_predict,
    distributed_filter_pass,
    fuse,
)
from tessfuse.sensing import FadingLaw, SensorNetwork, Uniform
from tessfuse.simkit import (
    build_bundle,
    build_network,
    simulate_trajectory,
    t1_scenario,
    t2_scenario,
)


def rel_err(a: TessArray, b: TessArray) -> float:
    return (a - b).norm() / max(b.norm(), 1e-30)


@pytest.fixture(scope="module")
def t1_setup():
    sc = t1_scenario(horizon=12)
    net = build_network(sc)
    return sc, net, build_bundle(sc, 1, net=net)


@pytest.fixture(scope="module")
def t2_setup():
    sc = t2_scenario(horizon=12)
    net = build_network(sc)
    return sc, net, build_bundle(sc, 2, net=net)


# -- cross filtering recursion ---------------------------------------------------

def test_cross_t1_closed_form(t1_setup):
    sc, net, bundle = t1_setup
    traj = simulate_trajectory(sc, 0, net=net)
    states = [run_filter(bundle, a, traj.observations(a, 1, upto=1))[0]
              for a in range(3)]
    cs = cross_filter_step(CrossState(a=0, b=1, t=0), states[0], states[1], bundle)
    step = cs.step(1)
    a1, b1 = bundle.a(1), bundle.b(1)
    want = bundle.rcov(0, 1, 1) + bundle.h(0, 1) @ a1 @ b1.H @ bundle.h(1, 1).H
    assert (step.omega_ab - want).max_abs() <= 1e-12
    assert step.j_ab_lag.max_abs() == 0.0


def test_diagonal_blocks_reduce_to_local(t1_setup):
    sc, net, bundle = t1_setup
    pipe = FusionPipeline(bundle)
    for t in (1, 4, 7):
        for alpha in range(3):
            rec = pipe.local_record(alpha, t)
            amat = bundle.a(t)
            want = amat @ rec.q @ amat.H
            got = pipe.v_block(alpha, alpha, t, t)
            assert (got - want).max_abs() <= 1e-10 * max(1.0, want.max_abs())


def test_theorem_and_expanded_q_forms_agree(t1_setup):
    _, _, bundle = t1_setup
    pipe = FusionPipeline(bundle)
    pipe.ensure(8)
    for t in range(1, 9):
        step = pipe.cross_step(0, 2, t)
        prev_q = (pipe.cross_step(0, 2, t - 1).q_ab if t > 1
                  else TessArray.zeros((bundle.p, bundle.p)))
        rec_a = pipe.local_record(0, t)
        rec_b = pipe.local_record(2, t)
        # the folded writing via the full cross gain J_ba(t)
        alt = prev_q + rec_a.k @ step.j_ba.H + step.j_ab_lag @ rec_b.w
        assert (alt - step.q_ab).max_abs() <= 1e-10 * max(1.0, step.q_ab.max_abs())


@pytest.mark.parametrize("which", ["T1", "T2"])
def test_hermitian_pair_consistency(which, t1_setup, t2_setup):
    _, _, bundle = t1_setup if which == "T1" else t2_setup
    pipe = FusionPipeline(bundle)
    for (t, s) in [(1, 1), (5, 5), (6, 3), (3, 6), (4, 9)]:
        for a in range(3):
            for b in range(3):
                vab = pipe.v_block(a, b, t, s)
                vba = pipe.v_block(b, a, t, s)
                assert (vab - vba.H).max_abs() <= 1e-10 * max(1.0, vab.max_abs())


@pytest.mark.parametrize("which", ["T1", "T2"])
def test_cross_moments_match_batch_oracle(which, t1_setup, t2_setup):
    _, _, bundle = t1_setup if which == "T1" else t2_setup
    pipe = FusionPipeline(bundle)
    cases = ([(t, t) for t in range(1, 7)]            # filtering
             + [(5, 2), (6, 1), (3, 0)]               # prediction
             + [(2, 3), (2, 5), (4, 6), (1, 6)])      # smoothing
    for (t, s) in cases:
        for a in range(3):
            for b in range(3):
                got = pipe.v_block(a, b, t, s)
                if s == 0:
                    assert got.max_abs() == 0.0
                    continue
                want = batch_cross_moment(bundle, a, b, t, s)
                assert rel_err(got, want) <= 1e-8


def test_cross_predict_matches_pipeline(t1_setup):
    sc, net, bundle = t1_setup
    traj = simulate_trajectory(sc, 1, net=net)
    states = [run_filter(bundle, a, traj.observations(a, 1, upto=4))[0]
              for a in range(3)]
    cs = CrossState(a=1, b=2, t=0)
    for _ in range(4):
        cs = cross_filter_step(cs, states[1], states[2], bundle)
    pipe = FusionPipeline(bundle)
    got = cross_predict(cs, 7, bundle)
    assert (got - pipe.v_block(1, 2, 7, 4)).max_abs() <= 1e-10
    with pytest.raises(ValueError):
        cross_predict(cs, 4, bundle)


def test_cross_filter_monte_carlo(t1_setup):
    sc, net, bundle = t1_setup
    horizon, m = 6, 100_000
    pipe = FusionPipeline(bundle)
    pipe.ensure(horizon)
    rng = np.random.default_rng(31)
    chol = np.linalg.cholesky(net.cov(1, 1))
    x = np.zeros((m, 4))
    e_p = [np.zeros((m, bundle.p), dtype=complex) for _ in range(2)]
    e_m = [np.zeros((m, bundle.p), dtype=complex) for _ in range(2)]
    for t in range(1, horizon + 1):
        x = x + rng.standard_normal((m, 4)) @ chol.T
        vs = net.noise.sample_stack(t, rng, m)
        for a in range(2):
            g = net.fading[a].sample_stack(rng, m)
            yparts = (g * x + vs[:, a]).reshape(m, 4, 1)
            yp = (yparts[:, 0] + yparts[:, 2])[:, 0] + 1j * (yparts[:, 1] + yparts[:, 3])[:, 0]
            ym = (yparts[:, 0] - yparts[:, 2])[:, 0] + 1j * (yparts[:, 1] - yparts[:, 3])[:, 0]
            rec = pipe.local_record(a, t)
            hap, ham = (bundle.h(a, t) @ bundle.a(t)).pair
            ep = yp - e_p[a] @ hap[0]
            em = ym - e_m[a] @ ham[0]
            kp, km = rec.k.pair
            e_p[a] = e_p[a] + ep[:, None] * kp[:, 0][None, :]
            e_m[a] = e_m[a] + em[:, None] * km[:, 0][None, :]
        if t >= 2:
            ap, am = bundle.a(t).pair
            x1p, x1m = e_p[0] @ ap[0], e_m[0] @ am[0]
            x2p, x2m = e_p[1] @ ap[0], e_m[1] @ am[0]
            prod_p = x1p * x2p.conj()
            prod_m = x1m * x2m.conj()
            est = TessArray.from_pair(
                np.array([[prod_p.mean()]]), np.array([[prod_m.mean()]]))
            se = max(prod_p.real.std(), prod_p.imag.std(),
                     prod_m.real.std(), prod_m.imag.std()) / np.sqrt(m)
            want = pipe.v_block(0, 1, t, t)
            assert (est - want).max_abs() <= 3.5 * se


# -- fusion ------------------------------------------------------------------------

def test_fuse_single_sensor_is_identity(t1_setup):
    sc, net, bundle = t1_setup
    traj = simulate_trajectory(sc, 2, net=net)
    ys = traj.observations(0, 1, upto=4)
    t = s = 4
    local = batch_linear_mmse(bundle, 0, ys, [(t, s)])[0]
    v = batch_cross_moment(bundle, 0, 0, t, s)
    fused = fuse([local], {(0, 0): v}, bundle)
    assert rel_err(fused.xhat, local.xhat) <= 1e-10
    assert rel_err(fused.p, local.p) <= 1e-10
    assert (fused.weights - TessArray.eye(bundle.d)).max_abs() <= 1e-8


@pytest.mark.parametrize("which", ["T1", "T2"])
def test_fused_estimates_match_batch_oracle(which, t1_setup, t2_setup):
    sc, net, bundle = t1_setup if which == "T1" else t2_setup
    k = 1 if which == "T1" else 2
    horizon = 6
    traj = simulate_trajectory(sc, 3, net=net)
    states = [run_filter(bundle, a, traj.observations(a, k, upto=horizon))[0]
              for a in range(3)]
    pipe = FusionPipeline(bundle)
    for (t, s) in [(1, 1), (4, 4), (6, 6), (6, 3), (2, 5), (3, 6)]:
        got = pipe.fused_estimate(states, t, s)
        vblocks = {(a, b): batch_cross_moment(bundle, a, b, t, s)
                   for a in range(3) for b in range(3)}
        locals_ = [batch_linear_mmse(bundle, a, traj.observations(a, k), [(t, s)])[0]
                   for a in range(3)]
        want = fuse(locals_, vblocks, bundle)
        assert rel_err(got.xhat, want.xhat) <= 1e-8
        assert rel_err(got.p, want.p) <= 1e-8


def test_fused_never_worse_than_best_local(t1_setup):
    _, _, bundle = t1_setup
    pipe = FusionPipeline(bundle)
    for t in range(1, 11):
        _, p = pipe.fused_cov(t, t)
        fused_tr = float(np.trace(p.r))
        locals_tr = [float(np.trace(pipe.local_cov(a, t, t).r)) for a in range(3)]
        assert fused_tr <= min(locals_tr) + 1e-10


def test_fused_weights_are_locally_optimal(t1_setup):
    _, _, bundle = t1_setup
    pipe = FusionPipeline(bundle)
    t = s = 5
    vblocks = pipe.v_blocks(t, s)
    from tessfuse.algebra import block, hstack
    omat = hstack([vblocks[(a, a)] for a in range(3)])
    vmat = block([[vblocks[(a, b)] for b in range(3)] for a in range(3)])
    weights, p = pipe.fused_cov(t, s)
    gamma = bundle.gamma(t, t)

    def mse_trace(w):
        err = (gamma - w @ omat.H - omat @ w.H + w @ vmat @ w.H)
        return float(np.trace(err.r))

    base = mse_trace(weights)
    assert abs(base - float(np.trace(p.r))) <= 1e-8
    rng = np.random.default_rng(7)
    for _ in range(100):
        delta = TessArray(1e-3 * rng.choice([-1.0, 1.0],
                                            size=(4,) + weights.shape))
        assert mse_trace(weights + delta) >= base - 1e-12


def test_fused_vs_centralized(t1_setup):
    sc, net, bundle = t1_setup
    traj = simulate_trajectory(sc, 4, net=net)
    pipe = FusionPipeline(bundle)
    for s in range(1, 7):
        t = s
        ys_all = [traj.observations(a, 1, upto=s) for a in range(2)]
        central = batch_centralized(_two_sensor(bundle), ys_all, t, s)
        _, p = _two_sensor_pipe(bundle).fused_cov(t, s)
        assert float(np.trace(p.r)) >= central.real_trace() - 1e-10


_two_cache = {}


def _two_sensor(bundle):
    key = id(bundle)
    if key not in _two_cache:
        from dataclasses import replace
        eq2 = replace(bundle.eq, n_sensors=2)
        _two_cache[key] = ModelBundle(fact=bundle.fact, eq=eq2)
    return _two_cache[key]


_two_pipe_cache = {}


def _two_sensor_pipe(bundle):
    key = id(bundle)
    if key not in _two_pipe_cache:
        _two_pipe_cache[key] = FusionPipeline(_two_sensor(bundle))
    return _two_pipe_cache[key]


def test_identical_sensors_make_fusion_singular(t1_setup):
    # deterministic equal gains + the shared noise source make the two
    # observation streams literally identical, so the local estimators are
    # linearly dependent and the weight system has no unique solution
    sc, net, _ = t1_setup
    from tessfuse.sensing import Discrete, NoiseLaw
    same = FadingLaw.same(Discrete((0.7,), (1.0,)))
    noise = NoiseLaw.scaled((0.3, 0.3), net.noise.base_real_cov)
    net2 = SensorNetwork(fact=net.fact, cov=net.cov, fading=(same, same), noise=noise)
    bundle = ModelBundle.from_network(net2, 1)
    pipe = FusionPipeline(bundle)
    with pytest.raises(SingularMatrixError) as err:
        pipe.fused_cov(3, 3)
    assert "fusion" in str(err.value)


def test_fused_ordering_spot(t1_setup):
    _, _, bundle = t1_setup
    pipe = FusionPipeline(bundle)
    for t in (2, 5):
        filt = float(np.trace(pipe.fused_cov(t, t)[1].r))
        sm1 = float(np.trace(pipe.fused_cov(t, t + 1)[1].r))
        assert sm1 <= filt + 1e-10
        pred = [float(np.trace(pipe.fused_cov(t + tau, t)[1].r))
                for tau in (1, 3, 5)]
        assert filt <= pred[0] + 1e-10
        assert all(a <= b + 1e-10 for a, b in zip(pred, pred[1:]))


def test_fused_smoothing_lag_gain_not_monotone(t1_setup):
    # unlike the local smoothers, the fused family is not nested across
    # lags: with strongly cross-correlated sensors the lag-5 fusion can be
    # slightly worse than lag-3 (checked against the batch oracle and
    # Monte Carlo); pin the verified behaviour so regressions surface
    _, _, bundle = t1_setup
    pipe = FusionPipeline(bundle)
    t = 5
    filt = float(np.trace(pipe.fused_cov(t, t)[1].r))
    sm3 = float(np.trace(pipe.fused_cov(t, t + 3)[1].r))
    sm5 = float(np.trace(pipe.fused_cov(t, t + 5)[1].r))
    assert sm5 > sm3          # the inversion
    assert sm5 < filt         # but smoothing still beats filtering
    want = batch_cross_moment(bundle, 0, 0, t, t + 5)  # oracle cross-check
    got = pipe.v_block(0, 0, t, t + 5)
    assert rel_err(got, want) <= 1e-8


def test_distributed_filter_pass_matches_fused_estimates(t1_setup):
    sc, net, bundle = t1_setup
    traj = simulate_trajectory(sc, 5, net=net)
    horizon = 5
    ys_list = [traj.observations(a, 1, upto=horizon) for a in range(3)]
    fused = distributed_filter_pass(bundle, ys_list)
    states = [run_filter(bundle, a, ys_list[a])[0] for a in range(3)]
    pipe = FusionPipeline(bundle)
    for t in range(1, horizon + 1):
        want = pipe.fused_estimate(states, t, t)
        assert rel_err(fused[t - 1].xhat, want.xhat) <= 1e-10
        assert rel_err(fused[t - 1].p, want.p) <= 1e-10

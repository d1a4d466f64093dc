"""End-to-end acceptance checks for the merge-planning stack.

Each test pins one externally meaningful contract: exactness of the
parameter filter against a one-shot Bayes computation, collapse of the
three planners under a point-mass belief, the probing incentive of the
predicted belief, causality of the closed loop, solver quality on a
task with a known optimum, rollout-budget accounting, planning rate,
and the paired Monte Carlo comparison of the three planners.
"""

import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import logsumexp
from scipy.stats import norm

from dualmppi.belief import (BeliefParticles, default_disturbance, downsample,
                             entropy, filter_update, init_particles,
                             predict_belief)
from dualmppi.controllers import (PlannerConfig, PlannerKind, objective_batch,
                                  objective_cemppi, objective_dmppi,
                                  objective_emppi, plan)
from dualmppi.costs import CostConfig
from dualmppi.harness import (FRIENDLY_BOX, Outcome, Scenario, ScenarioConfig,
                              TrialConfig, default_prior, make_scenario,
                              monte_carlo, run_trial)
from dualmppi.mppi import (ControlPlan, MppiConfig, compute_weights,
                           sample_controls, weighted_update, zero_plan)
from dualmppi.seeding import (STREAM_DOWNSAMPLE, STREAM_PARTICLES,
                              STREAM_SCENARIO, stream_rng)
from dualmppi.traffic import KinematicLimits, StackedState, VehicleState, step


def desk_planner_config(n_control_samples: int = 512,
                        n_control_particles: int = 10,
                        n_disturbance_samples: int = 3) -> PlannerConfig:
    """Desk-scale planning budget used throughout the acceptance checks."""
    return PlannerConfig(
        mppi=MppiConfig(lambda_=1e4, sigma_u=np.diag([10.0, 1.5]),
                        n_control_samples=n_control_samples, horizon=50),
        cost=CostConfig(),
        disturbance=default_disturbance(5, n_disturbance_samples=n_disturbance_samples),
        n_control_particles=n_control_particles,
    )


def desk_trial_config() -> TrialConfig:
    return TrialConfig(planner=desk_planner_config(), prior=default_prior(5),
                       n_filter_particles=10_000)


# --- filter exactness ----------------------------------------------------


def test_filter_matches_single_shot_bayes():
    """Recursive reweighting equals one-shot Bayes over the whole history."""
    rng = np.random.default_rng(1215)
    lim = KinematicLimits()
    t_start = time.perf_counter()
    for _episode in range(20):
        n_v = int(rng.integers(2, 5))
        n_p = int(rng.integers(40, 101))
        prior = default_prior(n_v)
        b = init_particles(prior, n_p, np.random.default_rng(int(rng.integers(2**32))))
        dist = default_disturbance(n_v)
        truth = init_particles(prior, 1,
                               np.random.default_rng(int(rng.integers(2**32)))).particles[0]
        spacing = float(rng.uniform(6.0, 12.0))
        speed = float(rng.uniform(8.0, 12.0))
        traffic = tuple(VehicleState(speed, 0.0, spacing * m, 0.0) for m in range(n_v))
        ego = VehicleState(10.0, 0.0, float(rng.uniform(0.0, spacing * (n_v - 1))), -3.5)
        x = StackedState(ego=ego, traffic=traffic)

        # Oracle: log posterior after t steps = log prior + sum of per-step
        # Gaussian transition log densities over the noisy channels,
        # normalized once per prefix.  The recursion must telescope to this.
        live = dist.sigma_w > 0.0
        scale = np.sqrt(dist.sigma_w[live])
        log_running = np.log(b.weights)
        for _t in range(10):
            u = np.array([rng.uniform(-2.0, 2.0), rng.uniform(-1.0, 1.0)])
            w_t = dist.sample((), np.random.default_rng(int(rng.integers(2**32))))
            x_next = StackedState.from_array(step(x.to_array(), u, truth, w_t, lim))
            pred = step(x.to_array(), u, b.particles, None, lim)
            log_running = log_running + norm.logpdf(
                x_next.to_array()[live], loc=pred[:, live], scale=scale).sum(axis=1)
            oracle = np.exp(log_running - logsumexp(log_running))
            b = filter_update(b, x, u, x_next, dist, lim)
            np.testing.assert_allclose(b.weights, oracle, rtol=0.0, atol=1e-10)
            x = x_next
    assert time.perf_counter() - t_start < 10.0


# --- point-mass collapse -------------------------------------------------


def test_point_mass_belief_collapses_the_three_planners():
    """With one particle there is nothing to learn or average over."""
    t_start = time.perf_counter()
    lo, hi = FRIENDLY_BOX.bounds()
    theta = np.tile(0.5 * (lo + hi), (5, 1))
    belief = BeliefParticles(particles=theta[None], weights=np.array([1.0]))
    cfg = desk_planner_config(n_control_samples=1000, n_control_particles=1)
    x0 = make_scenario(ScenarioConfig(), stream_rng(7, STREAM_SCENARIO)).initial

    batch = sample_controls(zero_plan(50), cfg.mppi, np.random.default_rng(11))
    w_seqs = cfg.disturbance.sample((3, 50), np.random.default_rng(12))
    obj = {
        kind: objective_batch(kind, x0.to_array(), batch.samples, belief,
                              w_seqs, cfg)[0]
        for kind in PlannerKind
    }
    assert np.max(np.abs(obj[PlannerKind.DMPPI] - obj[PlannerKind.EMPPI])) <= 1e-9
    assert np.max(np.abs(obj[PlannerKind.DMPPI] - obj[PlannerKind.CE_MPPI])) <= 1e-9
    # The single-sample wrappers sit on the same evaluation.
    assert objective_dmppi(x0, batch.samples[0], belief, w_seqs, cfg) == obj[PlannerKind.DMPPI][0]
    assert objective_emppi(x0, batch.samples[0], belief, w_seqs, cfg) == obj[PlannerKind.EMPPI][0]
    assert objective_cemppi(x0, batch.samples[0], belief, w_seqs, cfg) == obj[PlannerKind.CE_MPPI][0]

    results = {
        kind: plan(kind, x0, belief, zero_plan(50), cfg,
                   np.random.default_rng(21), np.random.default_rng(22))
        for kind in PlannerKind
    }
    for kind in (PlannerKind.EMPPI, PlannerKind.CE_MPPI):
        assert np.array_equal(results[kind].plan.mean,
                              results[PlannerKind.DMPPI].plan.mean)
        assert np.array_equal(results[kind].control,
                              results[PlannerKind.DMPPI].control)
    assert time.perf_counter() - t_start < 30.0


# --- probing incentive ---------------------------------------------------


def _probe_belief(kappa_hi: float, kappa_lo: float) -> BeliefParticles:
    # Identical car-following fields; only the yield response differs, so
    # nothing separates the hypotheses until the ego engages.
    def theta(kappa: float) -> np.ndarray:
        return np.array([[10.3, 0.07, 1.2, 2.0, 0.45, kappa]] * 2)

    return BeliefParticles(particles=np.stack([theta(kappa_hi), theta(kappa_lo)]),
                           weights=np.array([0.5, 0.5]))


@given(ego_s=st.floats(6.0, 10.0), kappa_hi=st.floats(0.85, 1.0),
       kappa_lo=st.floats(0.0, 0.15), lead_s=st.floats(13.0, 16.0))
@settings(max_examples=15, deadline=None)
def test_probing_sequences_separate_hypotheses(ego_s, kappa_hi, kappa_lo, lead_s):
    """Approaching the platoon sharpens the predicted belief; keeping away
    leaves it untouched."""
    lim = KinematicLimits()
    horizon = 30
    b = _probe_belief(kappa_hi, kappa_lo)
    x0 = StackedState(
        ego=VehicleState(10.0, 0.0, ego_s, -3.5),
        traffic=(VehicleState(10.0, 0.0, 0.0, 0.0),
                 VehicleState(10.0, 0.0, lead_s, 0.0)))
    dist = default_disturbance(2, n_disturbance_samples=3)
    w_seqs = dist.sample((3, horizon), np.random.default_rng(3))

    approach = np.zeros((horizon, 2))
    approach[:12, 1] = 1.0     # drift toward the lane edge
    approach[12:24, 1] = -1.0  # arrest the drift inside the engagement band
    approach[:20, 0] = -0.5    # nose in slower than the platoon
    keep_away = np.zeros((horizon, 2))
    keep_away[:10, 0] = 0.5    # pull ahead on the ramp instead

    pa = predict_belief(b, x0, approach, dist, lim, w_seqs=w_seqs)
    pk = predict_belief(b, x0, keep_away, dist, lim, w_seqs=w_seqs)

    assert np.abs(pk.weights[-1] - 0.5).max() < 1e-12
    assert np.abs(pa.weights[-1] - pk.weights[-1]).max() > 1e-3
    assert entropy(pa.weights[-1]) < entropy(pk.weights[-1])


# --- causality -----------------------------------------------------------


def _split_seed_noise(dist, switch_at: int, seed_past: int, seed_future: int):
    def fn(t: int) -> np.ndarray:
        seed = seed_past if t < switch_at else seed_future
        return dist.sample((), np.random.default_rng((seed, t)))

    return fn


def test_control_ignores_future_environment_noise():
    """The applied control never depends on noise that has not happened yet."""
    cfg = PlannerConfig(
        mppi=MppiConfig(lambda_=1e4, sigma_u=np.diag([10.0, 1.5]),
                        n_control_samples=16, horizon=6),
        cost=CostConfig(),
        disturbance=default_disturbance(5, n_disturbance_samples=2),
        n_control_particles=2,
    )
    tcfg = TrialConfig(planner=cfg, prior=default_prior(5),
                       n_filter_particles=50, time_budget=0.8)
    for case in range(50):
        key = (31, case)
        scenario = make_scenario(ScenarioConfig(), stream_rng(key, STREAM_SCENARIO))
        k_star = 1 + case % 6
        same = _split_seed_noise(cfg.disturbance, k_star, 100 + case, 100 + case)
        perturbed = _split_seed_noise(cfg.disturbance, k_star, 100 + case, 500 + case)
        ra = run_trial(scenario, PlannerKind.DMPPI, tcfg, key, env_noise_fn=same)
        rb = run_trial(scenario, PlannerKind.DMPPI, tcfg, key, env_noise_fn=perturbed)
        # Rows 0..k* hold the states and applied controls that precede the
        # first perturbed draw; they must agree bit for bit.
        assert np.array_equal(ra.trajectory[: k_star + 1], rb.trajectory[: k_star + 1])
        assert not np.array_equal(ra.trajectory, rb.trajectory)


# --- solver quality on a known optimum -----------------------------------


def test_sampling_update_matches_riccati_optimum():
    """Iterated importance weighting lands within 10% of the exact optimum
    on a 1-D double-integrator reach task."""
    dt, horizon = 0.1, 15
    A = np.array([[1.0, dt], [0.0, 1.0]])
    B = np.array([0.5 * dt * dt, dt])
    R = 0.2
    Qf = np.diag([50.0, 10.0])
    x0 = np.array([5.0, 0.0])

    def rollout_cost(U: np.ndarray) -> np.ndarray:
        m = U.shape[0]
        x = np.broadcast_to(x0, (m, 2)).copy()
        c = np.zeros(m)
        for k in range(horizon):
            c += R * U[:, k] ** 2
            x = x @ A.T + np.outer(U[:, k], B)
        return c + np.einsum("mi,ij,mj->m", x, Qf, x)

    # Oracle: finite-horizon Riccati recursion for the unconstrained
    # linear-quadratic problem; the optimal cost is x0' P0 x0.
    P = Qf.copy()
    gains = []
    for _ in range(horizon):
        S = B @ P @ B + R
        K = (B @ P @ A) / S
        P = A.T @ P @ A - np.outer(A.T @ P @ B, K)
        gains.append(K)
    gains = gains[::-1]
    x = x0.copy()
    u_opt = np.zeros(horizon)
    for k in range(horizon):
        u_opt[k] = -gains[k] @ x
        x = A @ x + B * u_opt[k]
    j_opt = rollout_cost(u_opt[None])[0]
    np.testing.assert_allclose(j_opt, x0 @ P @ x0, rtol=1e-9)

    cfg = MppiConfig(lambda_=0.2, sigma_u=np.diag([1.5 ** 2, 1.0]),
                     n_control_samples=1024, horizon=horizon)
    for seed in (0, 1, 2):
        rng = np.random.default_rng(seed)
        plan_iter = ControlPlan(np.zeros((horizon, 2)))
        for _ in range(50):
            batch = sample_controls(plan_iter, cfg, rng)
            costs = rollout_cost(batch.samples[:, :, 0])
            w = compute_weights(costs, batch, cfg)
            plan_iter = weighted_update(batch, w)
        realized = rollout_cost(plan_iter.mean[None, :, 0])[0]
        assert realized < 1.10 * j_opt


# --- budget accounting and planning rate ---------------------------------


@pytest.fixture(scope="module")
def desk_plan_result():
    cfg = desk_planner_config()
    scenario = make_scenario(ScenarioConfig(), stream_rng(2, STREAM_SCENARIO))
    b = init_particles(default_prior(5), 10_000, stream_rng(2, STREAM_PARTICLES))
    bc = downsample(b, 10, stream_rng(2, STREAM_DOWNSAMPLE))
    return plan(PlannerKind.DMPPI, scenario.initial.to_array(), bc, zero_plan(50),
                cfg, np.random.default_rng(5), np.random.default_rng(6))


def test_rollout_budget_accounting(desk_plan_result):
    assert desk_plan_result.n_rollouts == 512 * 10 * 3
    assert desk_plan_result.predicted_weights.shape == (512, 51, 10)


def test_plan_call_completes_within_a_second(desk_plan_result):
    assert desk_plan_result.elapsed < 1.0


# --- paired Monte Carlo comparison ---------------------------------------

KINDS = (PlannerKind.CE_MPPI, PlannerKind.EMPPI, PlannerKind.DMPPI)


@pytest.fixture(scope="session")
def merge_monte_carlo():
    return monte_carlo(ScenarioConfig(), desk_trial_config(), KINDS,
                       n_trials=100, master_seed=0)


def test_success_rates_favor_the_dual_planner(merge_monte_carlo):
    rates = {k: merge_monte_carlo.metrics[k.value]["success_rate"] for k in KINDS}
    assert rates[PlannerKind.DMPPI] >= rates[PlannerKind.EMPPI] + 0.10
    assert rates[PlannerKind.DMPPI] >= rates[PlannerKind.CE_MPPI] + 0.10


def test_no_planner_ever_collides(merge_monte_carlo):
    for kind in KINDS:
        assert merge_monte_carlo.metrics[kind.value]["collision_rate"] == 0.0
    for row in merge_monte_carlo.trials:
        for kind in KINDS:
            assert row[kind.value]["outcome"] != Outcome.COLLISION.value


def test_all_friendly_mid_platoon_merges_for_every_planner():
    """When every driver yields and the ego starts inside the platoon, all
    three planners close the merge."""
    lo, hi = FRIENDLY_BOX.bounds()
    params = np.tile(0.5 * (lo + hi), (5, 1))
    traffic = tuple(VehicleState(10.0, 0.0, 8.0 * m, 0.0) for m in range(5))
    scenario = Scenario(
        initial=StackedState(ego=VehicleState(10.0, 0.0, 14.0, -3.5),
                             traffic=traffic),
        true_params=params, friendly=(0, 1, 2, 3, 4))
    for idx, kind in enumerate(KINDS):
        r = run_trial(scenario, kind, desk_trial_config(), (77, idx),
                      keep_logs=False)
        assert r.outcome is Outcome.MERGED

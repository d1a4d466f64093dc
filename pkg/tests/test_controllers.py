"""Planner-variant tests: shared machinery, brute-force objective oracles."""

import numpy as np
import pytest

from dualmppi.belief import BeliefParticles, default_disturbance
from dualmppi.controllers import (
    PlanStepResult,
    PlannerConfig,
    PlannerKind,
    ce_belief,
    objective_cemppi,
    objective_dmppi,
    objective_emppi,
    plan,
)
from dualmppi.costs import CostConfig, stage_cost, terminal_cost
from dualmppi.mppi import MppiConfig, zero_plan
from dualmppi.traffic import (
    DriverParams,
    KinematicLimits,
    StackedState,
    VehicleState,
    stack_params,
    step,
)

LIM = KinematicLimits()


def params(v0=10.0, t=1.0, a=1.5, b=2.0, s0=2.0, kappa=0.5):
    return DriverParams(desired_speed=v0, time_headway=t, max_accel=a,
                        comfort_decel=b, min_gap=s0, yield_factor=kappa)


def make_cfg(n_samples=4, horizon=3, n_w=2):
    return PlannerConfig(
        mppi=MppiConfig(lambda_=1e4, sigma_u=np.diag([10.0, 1.5]),
                        n_control_samples=n_samples, horizon=horizon),
        cost=CostConfig(),
        disturbance=default_disturbance(2, n_disturbance_samples=n_w),
        limits=LIM,
    )


def make_state():
    return StackedState(ego=VehicleState(10.0, 0.0, -15.0, -3.5),
                        traffic=(VehicleState(8.0, 0.0, 0.0, 0.0),
                                 VehicleState(8.0, 0.0, 12.0, 0.0)))


def two_particle_belief(w=(0.6, 0.4)):
    theta_a = stack_params([params(v0=10.0, a=1.5, kappa=0.8)] * 2)
    theta_b = stack_params([params(v0=8.0, t=1.2, a=1.0, s0=2.5, kappa=0.1)] * 2)
    return BeliefParticles(particles=np.stack([theta_a, theta_b]),
                           weights=np.asarray(w, float))


def oracle_objective(kind, x_t, controls, b, w_seqs, cfg):
    """The belief-weighted rollout objective in plain Python loops."""
    from dualmppi.belief import traffic_longitudinal_indices

    if kind is PlannerKind.CE_MPPI:
        b = ce_belief(b)
    n_steps = controls.shape[0]
    n_p, n_w = b.n_particles, w_seqs.shape[0]
    like_idx = traffic_longitudinal_indices(b.n_vehicles)
    noise_var = cfg.disturbance.sigma_w[like_idx]

    states = [[x_t.to_array().copy() for _ in range(n_w)] for _ in range(n_p)]
    log_w = np.where(b.weights > 0.0, np.log(np.maximum(b.weights, 1e-320)), -np.inf)
    total = 0.0
    for k in range(n_steps):
        means, regs = [], []
        for p in range(n_p):
            for j in range(n_w):
                states[p][j] = step(states[p][j], controls[k], b.particles[p],
                                    w_seqs[j, k], cfg.limits)
            block = np.stack(states[p])
            means.append(block.mean(axis=0))
            regs.append(block[:, like_idx].var(axis=0) + noise_var * (k + 1))
        if kind is PlannerKind.DMPPI:
            mixture = sum(b.weights[p] * means[p] for p in range(n_p))
            for p in range(n_p):
                dev = mixture[like_idx] - means[p][like_idx]
                log_w[p] += -0.5 * np.sum(dev**2 / regs[p] + np.log(regs[p])
                                          + np.log(2 * np.pi))
            w_step = np.exp(log_w - log_w.max())
            w_step = w_step / w_step.sum()
        else:
            w_step = b.weights
        cost_fn = stage_cost if k < n_steps - 1 else terminal_cost
        for p in range(n_p):
            for j in range(n_w):
                total += w_step[p] * cost_fn(StackedState.from_array(states[p][j]),
                                             cfg.cost) / n_w
    return total


class TestCeBelief:
    def test_point_mass_at_weighted_mean(self):
        b = two_particle_belief((0.25, 0.75))
        ce = ce_belief(b)
        assert ce.n_particles == 1
        assert np.array_equal(ce.weights, [1.0])
        assert np.allclose(ce.particles[0], b.param_mean(), atol=1e-15)

    def test_yield_factor_clipped(self):
        theta = stack_params([params(kappa=1.0)])
        b = BeliefParticles(particles=theta[None], weights=np.array([1.0]))
        shifted = BeliefParticles(particles=b.particles + 0.5, weights=b.weights)
        ce = ce_belief(shifted)
        assert ce.particles[0, 0, 5] == 1.0


class TestObjectiveOracles:
    def test_loop_oracle_all_kinds(self):
        # Oracle: explicit per-particle per-disturbance rollout, scalar cost
        # calls, and (for the dual variant) the hand-rolled weight recursion.
        cfg = make_cfg()
        x_t = make_state()
        b = two_particle_belief()
        rng = np.random.default_rng(17)
        controls = rng.uniform([-1.0, -0.5], [1.0, 0.5], size=(3, 2))
        w_seqs = cfg.disturbance.sample((2, 3), rng)
        for kind, fn in [(PlannerKind.DMPPI, objective_dmppi),
                         (PlannerKind.EMPPI, objective_emppi),
                         (PlannerKind.CE_MPPI, objective_cemppi)]:
            want = oracle_objective(kind, x_t, controls, b, w_seqs, cfg)
            got = fn(x_t, controls, b, w_seqs, cfg)
            assert got == pytest.approx(want, rel=1e-10), kind

    def test_point_mass_equivalence(self):
        # With every particle identical the predicted weights cannot move,
        # so all three variants price a control sequence identically.
        cfg = make_cfg()
        x_t = make_state()
        theta = stack_params([params(kappa=0.7)] * 2)
        b = BeliefParticles(particles=np.stack([theta, theta]),
                            weights=np.array([0.3, 0.7]))
        rng = np.random.default_rng(3)
        w_seqs = cfg.disturbance.sample((2, 3), rng)
        for _ in range(5):
            u = rng.uniform([-2.0, -1.0], [2.0, 1.0], size=(3, 2))
            d = objective_dmppi(x_t, u, b, w_seqs, cfg)
            e = objective_emppi(x_t, u, b, w_seqs, cfg)
            c = objective_cemppi(x_t, u, b, w_seqs, cfg)
            assert d == pytest.approx(e, rel=1e-12)
            assert c == pytest.approx(e, rel=1e-12)

    def test_dual_and_ensemble_differ_for_separated_hypotheses(self):
        # The belief reaches the objective only through the indicator flags,
        # so the ego sits a hair outside the rear vehicle's collision radius:
        # the hypotheses brake at different rates and cross the threshold on
        # different steps.
        cfg = make_cfg(horizon=5)
        x_t = StackedState(ego=VehicleState(8.0, 0.0, -4.92, 0.0),
                           traffic=(VehicleState(8.0, 0.0, 0.0, 0.0),
                                    VehicleState(8.0, 0.0, 12.0, 0.0)))
        b = two_particle_belief((0.8, 0.2))
        rng = np.random.default_rng(5)
        w_seqs = cfg.disturbance.sample((2, 5), rng)
        u = np.zeros((5, 2))
        d = objective_dmppi(x_t, u, b, w_seqs, cfg)
        e = objective_emppi(x_t, u, b, w_seqs, cfg)
        assert d != e


class TestPlan:
    def test_control_is_first_plan_step(self):
        cfg = make_cfg(n_samples=8)
        res = plan(PlannerKind.EMPPI, make_state(), two_particle_belief(),
                   zero_plan(3), cfg, np.random.default_rng(0), np.random.default_rng(1))
        assert isinstance(res, PlanStepResult)
        assert np.array_equal(res.control, res.plan.mean[0])
        assert not res.degraded

    def test_single_sample_returns_that_sample(self):
        cfg = make_cfg(n_samples=1)
        from dualmppi.mppi import sample_controls

        batch = sample_controls(zero_plan(3), cfg.mppi, np.random.default_rng(42))
        res = plan(PlannerKind.CE_MPPI, make_state(), two_particle_belief(),
                   zero_plan(3), cfg, np.random.default_rng(42), np.random.default_rng(1))
        assert np.allclose(res.plan.mean, batch.samples[0], atol=1e-12)
        assert np.array_equal(res.weights.weights, [1.0])

    def test_rollout_accounting(self):
        cfg = make_cfg(n_samples=6, n_w=3)
        res = plan(PlannerKind.DMPPI, make_state(), two_particle_belief(),
                   zero_plan(3), cfg, np.random.default_rng(0), np.random.default_rng(1))
        assert res.n_rollouts == 6 * 2 * 3
        assert res.predicted_weights.shape == (6, 4, 2)

    def test_predicted_weights_only_for_dual(self):
        cfg = make_cfg()
        args = (make_state(), two_particle_belief(), zero_plan(3), cfg)
        for kind in (PlannerKind.EMPPI, PlannerKind.CE_MPPI):
            res = plan(kind, *args, np.random.default_rng(0), np.random.default_rng(1))
            assert res.predicted_weights is None

    def test_deterministic(self):
        cfg = make_cfg(n_samples=5)
        out = []
        for _ in range(2):
            res = plan(PlannerKind.DMPPI, make_state(), two_particle_belief(),
                       zero_plan(3), cfg, np.random.default_rng(7), np.random.default_rng(8))
            out.append(res)
        assert np.array_equal(out[0].plan.mean, out[1].plan.mean)
        assert np.array_equal(out[0].costs, out[1].costs)

    def test_degraded_when_every_sample_penalized(self):
        # Ego buried inside the platoon: no sample escapes the collision
        # penalty in one step, so the plan falls back to the best sample.
        cfg = make_cfg(n_samples=4)
        x_t = StackedState(ego=VehicleState(8.0, 0.0, 3.0, 0.0),
                           traffic=(VehicleState(8.0, 0.0, 0.0, 0.0),
                                    VehicleState(8.0, 0.0, 12.0, 0.0)))
        res = plan(PlannerKind.EMPPI, x_t, two_particle_belief(), zero_plan(3),
                   cfg, np.random.default_rng(0), np.random.default_rng(1))
        assert res.degraded
        assert res.costs.min() >= cfg.cost.q_penalty
        best = int(np.argmin(res.costs))
        assert res.weights.weights[best] == 1.0
        assert res.weights.weights.sum() == 1.0

    def test_config_validation(self):
        with pytest.raises(ValueError):
            PlannerConfig(
                mppi=MppiConfig(lambda_=1.0, sigma_u=np.eye(2),
                                n_control_samples=2, horizon=2),
                cost=CostConfig(),
                disturbance=default_disturbance(1),
                n_control_particles=0,
            )

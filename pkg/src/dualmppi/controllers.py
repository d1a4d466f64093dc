"""The three receding-horizon planners built on the shared rollout engine.

All variants sample the same control batch and roll out the same
particles under the same shared disturbances; they differ only in how
the per-particle trajectory costs are weighted:

- certainty-equivalent: a single rollout per sample using the posterior
  mean parameter;
- ensemble: expectation under the static filter weights;
- dual: expectation under the predicted future weights, so samples that
  would sharpen the belief see their costs redistributed accordingly.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from numpy.typing import NDArray

from .belief import BeliefParticles, DisturbanceModel, predicted_weight_rollout
from .costs import CostConfig, stage_cost_batch, terminal_cost_batch
from .mppi import (ControlPlan, MppiConfig, WeightVector, compute_weights,
                   sample_controls, weighted_update)
from .traffic import KinematicLimits, StackedState


class PlannerKind(Enum):
    DMPPI = "dmppi"
    EMPPI = "emppi"
    CE_MPPI = "cemppi"


@dataclass(frozen=True)
class PlannerConfig:
    mppi: MppiConfig
    cost: CostConfig
    disturbance: DisturbanceModel
    limits: KinematicLimits = field(default_factory=KinematicLimits)
    n_control_particles: int = 20

    def __post_init__(self) -> None:
        if self.n_control_particles < 1:
            raise ValueError("n_control_particles must be at least 1")


@dataclass(frozen=True)
class PlanStepResult:
    control: NDArray[np.float64]
    plan: ControlPlan
    costs: NDArray[np.float64]
    weights: WeightVector
    predicted_weights: NDArray[np.float64] | None
    degraded: bool
    n_rollouts: int
    elapsed: float


def ce_belief(b: BeliefParticles) -> BeliefParticles:
    """Point-mass belief at the weighted mean parameter.

    The mean is taken field-wise; the yield factor is clipped back into
    [0, 1] since a convex combination of box corners can sit anywhere but
    later arithmetic assumes the bounded range.
    """
    mean = b.param_mean()
    mean = mean.copy()
    mean[:, 5] = np.clip(mean[:, 5], 0.0, 1.0)
    return BeliefParticles(particles=mean[None], weights=np.array([1.0]))


def objective_batch(
    kind: PlannerKind,
    x0: NDArray[np.float64],
    controls: NDArray[np.float64],
    b: BeliefParticles,
    w_seqs: NDArray[np.float64],
    cfg: PlannerConfig,
) -> tuple[NDArray[np.float64], NDArray[np.float64] | None, int]:
    """Per-sample objectives (M,), predicted weight trajectories, rollout count."""
    if kind is PlannerKind.CE_MPPI:
        b = ce_belief(b)
    evolve = kind is PlannerKind.DMPPI
    stage_fn = lambda x: stage_cost_batch(x, cfg.cost)
    terminal_fn = lambda x: terminal_cost_batch(x, cfg.cost)
    weights_traj, objective, _ = predicted_weight_rollout(
        b, x0, controls, cfg.disturbance, cfg.limits, w_seqs,
        stage_fn=stage_fn, terminal_fn=terminal_fn, evolve_weights=evolve)
    n_rollouts = controls.shape[0] * b.n_particles * w_seqs.shape[0]
    return objective, weights_traj if evolve else None, n_rollouts


def _objective_single(kind: PlannerKind, x_t, control_sample, particles, w_seqs, cfg) -> float:
    x0 = x_t.to_array() if isinstance(x_t, StackedState) else np.asarray(x_t, dtype=np.float64)
    controls = np.asarray(control_sample, dtype=np.float64)[None]
    obj, _, _ = objective_batch(kind, x0, controls, particles,
                                 np.asarray(w_seqs, dtype=np.float64), cfg)
    return float(obj[0])


def objective_dmppi(x_t, control_sample, particles: BeliefParticles, w_seqs, cfg: PlannerConfig) -> float:
    """Cost expectation under the predicted future belief for one sample."""
    return _objective_single(PlannerKind.DMPPI, x_t, control_sample, particles, w_seqs, cfg)


def objective_emppi(x_t, control_sample, particles: BeliefParticles, w_seqs, cfg: PlannerConfig) -> float:
    """Cost expectation under the static current belief for one sample."""
    return _objective_single(PlannerKind.EMPPI, x_t, control_sample, particles, w_seqs, cfg)


def objective_cemppi(x_t, control_sample, particles: BeliefParticles, w_seqs, cfg: PlannerConfig) -> float:
    """Disturbance-averaged cost at the posterior-mean parameter for one sample."""
    return _objective_single(PlannerKind.CE_MPPI, x_t, control_sample, particles, w_seqs, cfg)


def plan(
    kind: PlannerKind,
    x_t: StackedState | NDArray[np.floating],
    belief: BeliefParticles,
    warm: ControlPlan,
    cfg: PlannerConfig,
    rng_control: np.random.Generator,
    rng_dist: np.random.Generator,
) -> PlanStepResult:
    """One receding-horizon planning step.

    Samples the control batch, draws the shared disturbance sequences,
    evaluates the kind-selected objective for every sample and reduces
    the batch to one plan via importance weighting.  If every sample's
    rollout incurs a violation penalty the importance average is not
    meaningful; the minimum-cost sample is returned with the degraded
    flag set.
    """
    t0 = time.perf_counter()
    x0 = x_t.to_array() if isinstance(x_t, StackedState) else np.asarray(x_t, dtype=np.float64)
    batch = sample_controls(warm, cfg.mppi, rng_control)
    w_seqs = cfg.disturbance.sample(
        (cfg.disturbance.n_disturbance_samples, cfg.mppi.horizon), rng_dist)
    costs, pred_weights, n_rollouts = objective_batch(
        kind, x0, batch.samples, belief, w_seqs, cfg)

    degraded = bool(costs.min() >= cfg.cost.q_penalty)
    if degraded:
        best = int(np.argmin(costs))
        optimal = ControlPlan(batch.samples[best].copy())
        w = np.zeros(costs.shape)
        w[best] = 1.0
        wv = WeightVector(w)
    else:
        wv = compute_weights(costs, batch, cfg.mppi)
        optimal = weighted_update(batch, wv)
    return PlanStepResult(
        control=optimal.mean[0].copy(),
        plan=optimal,
        costs=costs,
        weights=wv,
        predicted_weights=pred_weights,
        degraded=degraded,
        n_rollouts=n_rollouts,
        elapsed=time.perf_counter() - t0,
    )

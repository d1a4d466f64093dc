"""Sampling-based dual MPC for highway merging with learned driver behavior.

Modules:
- ``traffic``: Frenet-frame ego/traffic dynamics and the driver model.
- ``costs``: merge-task stage/terminal costs and violation indicators.
- ``mppi``: the generic path-integral sample/weight/average solver.
- ``belief``: particle filter over driver parameters and predicted
  future beliefs along candidate plans.
- ``controllers``: the three receding-horizon planner variants.
- ``harness``: scenarios, closed-loop trials, Monte Carlo comparison.
- ``cli``: the ``dualmppi`` command-line entry point.
"""

from .belief import (BeliefParticles, DisturbanceModel, ParamBox, PredictedBelief,
                     PriorSpec, default_disturbance, downsample, entropy,
                     filter_update, init_particles, predict_belief)
from .controllers import (PlannerConfig, PlannerKind, PlanStepResult,
                          objective_batch, objective_cemppi, objective_dmppi,
                          objective_emppi, plan)
from .costs import (CostConfig, RoadGeometry, indicator_flags, indicators,
                    stage_cost, terminal_cost, trajectory_cost)
from .harness import (Outcome, Scenario, ScenarioConfig, TrialConfig, TrialResult,
                      default_prior, make_scenario, monte_carlo, run_trial)
from .mppi import (ControlPlan, ControlSampleBatch, MppiConfig, WeightVector,
                   compute_weights, sample_controls, shift_plan, weighted_update,
                   zero_plan)
from .traffic import (DriverParams, KinematicLimits, StackedState, VehicleState,
                      clamp_ego, driver_accel, rollout, step)

__version__ = "0.1.0"

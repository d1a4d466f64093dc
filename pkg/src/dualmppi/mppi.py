"""Generic path-integral control: sample, weight by cost, average.

Candidate control sequences are drawn around a nominal plan, each
rollout's objective becomes an importance weight through a softmin at
temperature ``lambda_``, and the updated plan is the weighted average of
the candidates.  The weight exponent carries the standard control-prior
correction ``lambda * sum_k (u_k - ubar_k)^T Sigma_u^{-1} u_k`` in
addition to the rollout objective.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

logger = logging.getLogger(__name__)

# Normalized weights below this are snapped to exact zeros.
WEIGHT_FLOOR = 1e-300


@dataclass(frozen=True)
class MppiConfig:
    lambda_: float
    sigma_u: NDArray[np.float64]
    n_control_samples: int
    horizon: int
    seed: int = 0

    def __post_init__(self) -> None:
        if self.lambda_ <= 0.0:
            raise ValueError("lambda_ must be positive")
        if self.n_control_samples < 1:
            raise ValueError("n_control_samples must be at least 1")
        if self.horizon < 2:
            raise ValueError("horizon must be at least 2")
        sigma = np.asarray(self.sigma_u, dtype=np.float64)
        if sigma.shape != (2, 2) or not np.allclose(sigma, sigma.T):
            raise ValueError("sigma_u must be a symmetric 2x2 matrix")
        try:
            np.linalg.cholesky(sigma)
        except np.linalg.LinAlgError as exc:
            raise ValueError("sigma_u must be positive definite") from exc
        object.__setattr__(self, "sigma_u", sigma)


@dataclass(frozen=True)
class ControlPlan:
    """Nominal control sequence ubar_{t:t+N-1}, shape (N, 2)."""

    mean: NDArray[np.float64]

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=np.float64)
        if mean.ndim != 2 or mean.shape[1] != 2:
            raise ValueError("plan mean must have shape (N, 2)")
        object.__setattr__(self, "mean", mean)

    def __len__(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class ControlSampleBatch:
    """N_c sampled sequences, shape (N_c, N, 2), plus the plan they came from."""

    samples: NDArray[np.float64]
    plan: ControlPlan


@dataclass(frozen=True)
class WeightVector:
    weights: NDArray[np.float64]


def zero_plan(horizon: int) -> ControlPlan:
    return ControlPlan(np.zeros((horizon, 2)))


def sample_controls(plan: ControlPlan, cfg: MppiConfig, rng: np.random.Generator) -> ControlSampleBatch:
    """Draw N_c sequences, each step Gaussian around the plan with cov sigma_u."""
    if len(plan) != cfg.horizon:
        raise ValueError("plan length must equal the configured horizon")
    chol = np.linalg.cholesky(cfg.sigma_u)
    eps = rng.standard_normal((cfg.n_control_samples, cfg.horizon, 2))
    samples = plan.mean[None, :, :] + eps @ chol.T
    return ControlSampleBatch(samples=samples, plan=plan)


def control_prior_term(batch: ControlSampleBatch, cfg: MppiConfig) -> NDArray[np.float64]:
    """Per-sample sum_k (u_k - ubar_k)^T Sigma_u^{-1} u_k."""
    dev = batch.samples - batch.plan.mean[None, :, :]
    sig_inv_u = np.linalg.solve(cfg.sigma_u, batch.samples.reshape(-1, 2).T).T
    return np.einsum("nkc,nkc->n", dev, sig_inv_u.reshape(batch.samples.shape))


def compute_weights(costs: NDArray[np.floating], batch: ControlSampleBatch, cfg: MppiConfig) -> WeightVector:
    """Softmin weights over the combined cost-plus-prior exponent.

    The minimum exponent is subtracted before exponentiation, which leaves
    the normalized weights exactly unchanged but keeps exp() in range for
    penalty-scale costs.  If every weight still underflows, the minimum
    cost sample gets weight 1.
    """
    costs = np.asarray(costs, dtype=np.float64)
    if costs.shape != (cfg.n_control_samples,):
        raise ValueError("costs must have one entry per control sample")
    if np.all(np.isinf(costs)):
        raise ValueError("all rollouts have infinite cost; no feasible control sample")

    exponent = costs / cfg.lambda_ + control_prior_term(batch, cfg)
    exponent = exponent - exponent.min()
    raw = np.exp(-exponent)
    eta = raw.sum()
    if eta <= 0.0:
        logger.warning("all importance weights underflowed; falling back to the best sample")
        weights = np.zeros_like(costs)
        weights[int(np.argmin(costs))] = 1.0
        return WeightVector(weights)
    weights = raw / eta
    weights[weights < WEIGHT_FLOOR] = 0.0
    return WeightVector(weights)


def weighted_update(batch: ControlSampleBatch, w: WeightVector) -> ControlPlan:
    if w.weights.shape[0] != batch.samples.shape[0]:
        raise ValueError("weight count must match sample count")
    return ControlPlan(np.einsum("n,nkc->kc", w.weights, batch.samples))


def shift_plan(plan: ControlPlan) -> ControlPlan:
    """Receding-horizon warm start: drop the first step, repeat the last."""
    return ControlPlan(np.concatenate([plan.mean[1:], plan.mean[-1:]], axis=0))

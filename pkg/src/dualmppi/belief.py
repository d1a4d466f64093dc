"""Particle-filter learning of driver parameters and predicted future beliefs.

The filter keeps a fixed particle set over per-vehicle driver parameters
and reweights it each step by the Gaussian likelihood of the observed
transition.  For planning, a downsampled particle set is rolled forward
under each candidate control sequence: every particle predicts the next
state, the belief-weighted mixture of those predictions acts as a pseudo
observation, and reweighting against it yields predicted future weights.
Control sequences that separate the hypotheses change those weights,
which is what gives the planner its probing incentive.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .traffic import KinematicLimits, PARAM_FIELDS, StackedState, step

logger = logging.getLogger(__name__)

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class ParamBox:
    """Axis-aligned uniform range per driver-parameter field.

    Each field is a (low, high) pair; a zero-width pair pins the field to
    a point value.
    """

    desired_speed: tuple[float, float]
    time_headway: tuple[float, float]
    max_accel: tuple[float, float]
    comfort_decel: tuple[float, float]
    min_gap: tuple[float, float]
    yield_factor: tuple[float, float]

    def __post_init__(self) -> None:
        for name in PARAM_FIELDS:
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"ParamBox.{name}: low bound exceeds high bound")

    def bounds(self) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        lows = np.array([getattr(self, f)[0] for f in PARAM_FIELDS])
        highs = np.array([getattr(self, f)[1] for f in PARAM_FIELDS])
        return lows, highs


@dataclass(frozen=True)
class PriorSpec:
    """Mixture of uniform boxes, applied independently to each traffic vehicle."""

    components: tuple[tuple[float, ParamBox], ...]
    n_vehicles: int

    def __post_init__(self) -> None:
        if not self.components:
            raise ValueError("prior needs at least one mixture component")
        if self.n_vehicles < 1:
            raise ValueError("prior needs at least one vehicle")
        wts = np.array([w for w, _ in self.components], dtype=np.float64)
        if np.any(wts < 0.0) or abs(wts.sum() - 1.0) > 1e-9:
            raise ValueError("mixture weights must be nonnegative and sum to 1")


@dataclass(frozen=True)
class BeliefParticles:
    """Particles (N_p, n_v, 6) in PARAM_FIELDS order with normalized weights."""

    particles: NDArray[np.float64]
    weights: NDArray[np.float64]

    def __post_init__(self) -> None:
        p = np.asarray(self.particles, dtype=np.float64)
        w = np.asarray(self.weights, dtype=np.float64)
        if p.ndim != 3 or p.shape[2] != len(PARAM_FIELDS):
            raise ValueError("particles must have shape (N_p, n_vehicles, 6)")
        if w.shape != (p.shape[0],):
            raise ValueError("one weight per particle required")
        if np.any(w < 0.0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be nonnegative and sum to 1")
        object.__setattr__(self, "particles", p)
        object.__setattr__(self, "weights", w)

    @property
    def n_particles(self) -> int:
        return self.particles.shape[0]

    @property
    def n_vehicles(self) -> int:
        return self.particles.shape[1]

    def param_mean(self) -> NDArray[np.float64]:
        """Posterior mean parameters per vehicle, shape (n_vehicles, 6)."""
        return np.einsum("p,pvf->vf", self.weights, self.particles)


@dataclass(frozen=True)
class DisturbanceModel:
    """Diagonal additive process noise over the stacked state.

    Channels with zero variance are treated as exactly deterministic:
    nothing is sampled there and they are skipped in likelihoods.
    """

    sigma_w: NDArray[np.float64]
    n_disturbance_samples: int

    def __post_init__(self) -> None:
        sw = np.asarray(self.sigma_w, dtype=np.float64)
        if sw.ndim != 1 or sw.size % 4 != 0 or sw.size < 8:
            raise ValueError("sigma_w must be a flat per-channel variance vector")
        if np.any(sw < 0.0):
            raise ValueError("variances must be nonnegative")
        if sw[0] <= 0.0 or sw[1] <= 0.0 or np.any(sw[4::4] <= 0.0):
            raise ValueError("ego and traffic longitudinal velocity variances must be positive")
        if self.n_disturbance_samples < 1:
            raise ValueError("need at least one disturbance sample")
        object.__setattr__(self, "sigma_w", sw)

    @property
    def dim(self) -> int:
        return self.sigma_w.size

    def sample(self, shape: tuple[int, ...], rng: np.random.Generator) -> NDArray[np.float64]:
        return rng.standard_normal(shape + (self.dim,)) * np.sqrt(self.sigma_w)


def default_disturbance(n_vehicles: int, n_disturbance_samples: int = 5,
                        vel_std: float = 0.05, pos_std: float = 0.01) -> DisturbanceModel:
    """Small diagonal noise; traffic lateral channels are exactly zero."""
    sw = np.tile([vel_std**2, vel_std**2, pos_std**2, pos_std**2], n_vehicles + 1)
    for v in range(1, n_vehicles + 1):
        sw[4 * v + 1] = 0.0
        sw[4 * v + 3] = 0.0
    return DisturbanceModel(sigma_w=sw, n_disturbance_samples=n_disturbance_samples)


def traffic_longitudinal_indices(n_vehicles: int) -> NDArray[np.intp]:
    """Stacked-state indices of every traffic vehicle's v_s and s."""
    idx = [(4 * v, 4 * v + 2) for v in range(1, n_vehicles + 1)]
    return np.array([i for pair in idx for i in pair], dtype=np.intp)


def init_particles(prior: PriorSpec, n: int, rng: np.random.Generator) -> BeliefParticles:
    """Draw n particles from the mixture prior with uniform weights.

    The mixture component is drawn independently per particle and per
    vehicle, then the parameters are uniform within the chosen box.
    """
    if n < 1:
        raise ValueError("particle count must be at least 1")
    comp_w = np.array([w for w, _ in prior.components])
    lows = np.stack([box.bounds()[0] for _, box in prior.components])
    highs = np.stack([box.bounds()[1] for _, box in prior.components])
    comp = rng.choice(len(prior.components), size=(n, prior.n_vehicles), p=comp_w)
    u = rng.uniform(size=(n, prior.n_vehicles, len(PARAM_FIELDS)))
    particles = lows[comp] + u * (highs[comp] - lows[comp])
    return BeliefParticles(particles=particles, weights=np.full(n, 1.0 / n))


def _transition_loglik(pred: NDArray[np.float64], observed: NDArray[np.float64],
                       sigma_w: NDArray[np.float64]) -> NDArray[np.float64]:
    """Log Gaussian density of the observed state under each prediction.

    Zero-variance channels are deterministic bookkeeping and are skipped.
    ``pred`` is (P, D), ``observed`` (D,).
    """
    live = sigma_w > 0.0
    var = sigma_w[live]
    dev = observed[live] - pred[:, live]
    # Extreme deviations overflow to -inf log-likelihood, which is the
    # intended saturation; keep it quiet.
    with np.errstate(over="ignore"):
        return -0.5 * np.sum(dev * dev / var + np.log(var) + LOG_2PI, axis=1)


def filter_update(b: BeliefParticles, x_t: StackedState, u_t: NDArray[np.floating],
                  x_next: StackedState, dist: DisturbanceModel,
                  lim: KinematicLimits) -> BeliefParticles:
    """One Bayes reweighting step; the particle set itself never changes.

    Each particle's one-step prediction is scored against the observed
    next state.  If every likelihood underflows to zero the observation
    is inconsistent with all hypotheses; the previous weights are kept.
    """
    pred = step(x_t.to_array(), np.asarray(u_t, dtype=np.float64),
                b.particles, None, lim)
    loglik = _transition_loglik(pred, x_next.to_array(), dist.sigma_w)
    log_w = np.where(b.weights > 0.0, np.log(b.weights, where=b.weights > 0.0,
                                             out=np.full_like(b.weights, -np.inf)), -np.inf)
    log_post = log_w + loglik
    peak = log_post.max()
    if not np.isfinite(peak):
        logger.warning("belief update: observation inconsistent with every particle; keeping weights")
        return b
    raw = np.exp(log_post - peak)
    return BeliefParticles(particles=b.particles, weights=raw / raw.sum())


def downsample(b: BeliefParticles, m: int, rng: np.random.Generator) -> BeliefParticles:
    """Systematic resampling down to m uniformly weighted particles."""
    if m < 1:
        raise ValueError("downsample target must be at least 1")
    if m > b.n_particles:
        raise ValueError("downsample target exceeds the particle count")
    positions = (np.arange(m) + rng.uniform()) / m
    cumulative = np.cumsum(b.weights)
    cumulative[-1] = 1.0
    idx = np.minimum(np.searchsorted(cumulative, positions, side="right"), b.n_particles - 1)
    return BeliefParticles(particles=b.particles[idx], weights=np.full(m, 1.0 / m))


def entropy(weights: NDArray[np.floating]) -> float:
    w = np.asarray(weights, dtype=np.float64)
    pos = w[w > 0.0]
    return float(-(pos * np.log(pos)).sum())


@dataclass(frozen=True)
class PredictedBelief:
    """Weight trajectory and prediction statistics for one control sequence.

    ``weights[k]`` is the predicted belief after k steps (row 0 equals the
    filter weights); ``pseudo_obs[k]`` the mixture prediction used as the
    observation at step k+1; ``particle_means``/``cov_diag`` the per
    particle disturbance-averaged predictions and regularized variances
    on the likelihood channels.
    """

    weights: NDArray[np.float64]
    pseudo_obs: NDArray[np.float64]
    particle_means: NDArray[np.float64]
    cov_diag: NDArray[np.float64]

    def __post_init__(self) -> None:
        sums = self.weights.sum(axis=-1)
        if np.any(np.abs(sums - 1.0) > 1e-9):
            raise ValueError("every predicted weight slice must sum to 1")


def predicted_weight_rollout(
    b: BeliefParticles,
    x0: NDArray[np.floating],
    controls: NDArray[np.floating],
    dist: DisturbanceModel,
    lim: KinematicLimits,
    w_seqs: NDArray[np.floating],
    stage_fn=None,
    terminal_fn=None,
    evolve_weights: bool = True,
    pseudo_obs: NDArray[np.floating] | None = None,
    keep_details: bool = False,
):
    """Roll all particles forward under a batch of control sequences.

    For each of the M sequences and each particle, N_w disturbance
    rollouts are propagated jointly.  At every step the disturbance
    averaged per-particle predictions are mixed with the static filter
    weights into a pseudo observation, and the predicted weights are
    reweighted by each particle's Gaussian likelihood of it (variance =
    per-particle sample variance plus accumulated process noise, traffic
    longitudinal channels only).  With ``evolve_weights`` False the
    weights stay frozen at the filter weights, which removes the probing
    incentive while keeping costs and rollouts identical.

    ``controls`` is (M, N, 2), ``w_seqs`` (N_w, N, D) shared across
    sequences and particles.  ``stage_fn``/``terminal_fn`` map a state
    block (M, P, N_w, D) to costs (M, P, N_w); when given, the belief
    averaged objective (M,) is accumulated: stage costs at steps 1..N-1
    weighted by that step's predicted belief, the terminal cost at step N
    weighted by the final belief, averaged over disturbances.

    Returns (weight trajectory (M, N+1, P), objective (M,) or None,
    details dict or None).
    """
    controls = np.asarray(controls, dtype=np.float64)
    x0 = np.asarray(x0, dtype=np.float64)
    m_seq, n_horizon = controls.shape[0], controls.shape[1]
    n_p = b.n_particles
    n_w = w_seqs.shape[0]
    like_idx = traffic_longitudinal_indices(b.n_vehicles)
    noise_var = dist.sigma_w[like_idx]

    weights_traj = np.empty((m_seq, n_horizon + 1, n_p))
    weights_traj[:, 0, :] = b.weights
    log_w = np.broadcast_to(
        np.where(b.weights > 0.0,
                 np.log(b.weights, where=b.weights > 0.0, out=np.full_like(b.weights, -np.inf)),
                 -np.inf),
        (m_seq, n_p),
    ).copy()

    objective = np.zeros(m_seq) if stage_fn is not None else None
    details = {"pseudo_obs": [], "particle_means": [], "cov_diag": []} if keep_details else None

    # State block (M, P, N_w, D); theta broadcast (1, P, 1, n_v, 6).
    x = np.broadcast_to(x0, (m_seq, n_p, n_w, x0.shape[-1])).copy()
    theta = b.particles[None, :, None, :, :]
    for k in range(n_horizon):
        x = step(x, controls[:, k][:, None, None, :], theta, w_seqs[None, None, :, k, :], lim)

        mean_i = x.mean(axis=2)
        if pseudo_obs is not None:
            mixture = np.broadcast_to(pseudo_obs[k], (m_seq, x0.shape[-1]))
        else:
            mixture = np.einsum("p,mpd->md", b.weights, mean_i)
        var_i = x[..., like_idx].var(axis=2)
        reg = var_i + noise_var * (k + 1)
        if np.any(reg <= 0.0):
            raise RuntimeError("regularized prediction variance is not positive")
        dev = mixture[:, None, like_idx] - mean_i[..., like_idx]
        loglik = -0.5 * np.sum(dev * dev / reg + np.log(reg) + LOG_2PI, axis=-1)

        if evolve_weights:
            log_w = log_w + loglik
            log_w -= log_w.max(axis=1, keepdims=True)
            w_step = np.exp(log_w)
            w_step /= w_step.sum(axis=1, keepdims=True)
        else:
            w_step = weights_traj[:, 0, :]
        weights_traj[:, k + 1, :] = w_step

        if objective is not None:
            if k < n_horizon - 1:
                step_cost = stage_fn(x)
            else:
                step_cost = terminal_fn(x)
            objective += np.einsum("mpj,mp->m", step_cost, w_step) / n_w

        if details is not None:
            details["pseudo_obs"].append(mixture)
            details["particle_means"].append(mean_i)
            details["cov_diag"].append(reg)

    return weights_traj, objective, details


def predict_belief(b: BeliefParticles, x_t: StackedState, controls: NDArray[np.floating],
                   dist: DisturbanceModel, lim: KinematicLimits,
                   w_seqs: NDArray[np.floating] | None = None,
                   rng: np.random.Generator | None = None,
                   pseudo_obs: NDArray[np.floating] | None = None) -> PredictedBelief:
    """Predicted belief trajectory for a single control sequence.

    ``w_seqs`` are the shared disturbance sequences for this planning
    step; if omitted they are drawn here from ``rng``.  ``pseudo_obs``
    optionally overrides the mixture observation sequence for analysis.
    """
    controls = np.asarray(controls, dtype=np.float64)
    if controls.ndim != 2:
        raise ValueError("predict_belief takes a single (N, 2) control sequence")
    if w_seqs is None:
        if rng is None:
            raise ValueError("provide either shared disturbance sequences or an rng")
        w_seqs = dist.sample((dist.n_disturbance_samples, controls.shape[0]), rng)
    weights, _, details = predicted_weight_rollout(
        b, x_t.to_array(), controls[None], dist, lim, np.asarray(w_seqs, dtype=np.float64),
        pseudo_obs=pseudo_obs, keep_details=True)
    return PredictedBelief(
        weights=weights[0],
        pseudo_obs=np.stack([p[0] for p in details["pseudo_obs"]]),
        particle_means=np.stack([p[0] for p in details["particle_means"]]),
        cov_diag=np.stack([c[0] for c in details["cov_diag"]]),
    )

"""Control-as-inference layer: rollouts, Gibbs weighting, and the controllers.

Each controller follows the same receding-horizon cycle: sample candidate
control sequences, roll them out, score them with exponentiated costs, update
internal state, execute the first control of the incumbent, and shift the
incumbent one step forward (zero-order hold on the final step).

The transport-coupled controller keeps an ensemble of N candidate sequences
and refines them with Sinkhorn coordinate descent against fresh proposal
batches; MPPI keeps a single mean updated by the importance-weighted average;
CEM keeps a Gaussian updated from elite samples. All randomness is drawn in
fixed-shape blocks from a caller-supplied generator, so runs with equal seeds
and equal batch shapes consume identical random streams.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .envs import task_cost  # noqa: F401  (re-exported alongside rollout helpers)
from .errors import (
    ConfigError,
    DegenerateCouplingError,
    DomainError,
    EnvironmentFaultError,
    SolverFailureError,
)
from .scd import ParticleEnsemble, ProposalBatch, ScdConfig, scd_step
from .transport import SinkhornConfig, build_cost_matrix


# ---------------------------------------------------------------------------
# Rollouts
# ---------------------------------------------------------------------------

@dataclass
class RolloutResult:
    """States and costs of one deterministic forward simulation."""

    states: np.ndarray             # (t_f + 1, n)
    per_step_costs: np.ndarray     # (t_f + 1,)
    total_cost: float
    crashed: bool


@dataclass
class BatchRollout:
    states: np.ndarray             # (B, t_f + 1, n)
    per_step_costs: np.ndarray     # (B, t_f + 1)
    total_costs: np.ndarray        # (B,)
    crashed: np.ndarray            # (B,) bool


def rollout_batch(env, x0, controls) -> BatchRollout:
    """Roll out a batch of control sequences; costs include crash indicators.

    Per-step cost at t < t_f is the state cost plus the control cost; the
    final entry is the terminal state cost alone.
    """
    U = np.asarray(controls, dtype=float)
    if U.ndim != 3:
        raise DomainError(f"controls must be (B, t_f, m), got shape {U.shape}")
    B, T, m = U.shape
    x0 = np.asarray(x0, dtype=float)
    n = x0.shape[-1]
    states = np.empty((B, T + 1, n))
    per_step = np.empty((B, T + 1))
    x = np.broadcast_to(x0, (B, n)).copy()
    states[:, 0] = x
    crashed = env.collided(x).copy()
    for t in range(T):
        per_step[:, t] = env.state_cost(x) + env.control_cost(U[:, t])
        x = env.step(x, U[:, t])
        if not np.all(np.isfinite(x)):
            raise EnvironmentFaultError(t)
        states[:, t + 1] = x
        crashed |= env.collided(x)
    per_step[:, T] = env.state_cost(x)
    return BatchRollout(states, per_step, per_step.sum(axis=1), crashed)


def rollout(env, x0, controls) -> RolloutResult:
    """Single-sequence rollout; deterministic and bit-stable per input."""
    U = np.asarray(controls, dtype=float)
    if U.ndim != 2:
        raise DomainError(f"control sequence must be (t_f, m), got shape {U.shape}")
    b = rollout_batch(env, x0, U[None])
    return RolloutResult(states=b.states[0], per_step_costs=b.per_step_costs[0],
                         total_cost=float(b.total_costs[0]), crashed=bool(b.crashed[0]))


# ---------------------------------------------------------------------------
# Weighting and elementary updates
# ---------------------------------------------------------------------------

def gibbs_weights(costs, beta: float) -> np.ndarray:
    """Max-shifted softmax of -beta * costs; beta = 0 gives uniform weights."""
    c = np.asarray(costs, dtype=float)
    if not np.all(np.isfinite(c)):
        raise DomainError("costs must be finite")
    if beta < 0:
        raise DomainError(f"beta={beta} must be >= 0")
    w = np.exp(-beta * (c - c.min()))
    return w / w.sum()


def mppi_update(mean, perturbations, costs, beta: float, bounds=None) -> np.ndarray:
    """Importance-weighted perturbation average: mean + sum_j w_j du_j, clamped."""
    mean = np.asarray(mean, dtype=float)
    du = np.asarray(perturbations, dtype=float)
    w = gibbs_weights(costs, beta)
    out = mean + np.tensordot(w, du, axes=1)
    if bounds is not None:
        out = np.clip(out, bounds[0], bounds[1])
    return out


def cem_update(samples, costs, elite_fraction: float, alpha: float,
               prior_mean, prior_std, min_std: float = 1e-3) -> Tuple[np.ndarray, np.ndarray]:
    """Smoothed elite mean/std update; the std is floored elementwise."""
    samples = np.asarray(samples, dtype=float)
    costs = np.asarray(costs, dtype=float)
    M = samples.shape[0]
    if not (0 < elite_fraction <= 1):
        raise ConfigError(f"elite_fraction={elite_fraction} must lie in (0, 1]")
    n_elite = int(M * elite_fraction)
    if n_elite < 1:
        raise ConfigError(f"elite_fraction={elite_fraction} with {M} samples keeps no elites")
    elite = samples[np.argsort(costs, kind="stable")[:n_elite]]
    mean = alpha * elite.mean(axis=0) + (1.0 - alpha) * np.asarray(prior_mean, dtype=float)
    std = alpha * elite.std(axis=0) + (1.0 - alpha) * np.asarray(prior_std, dtype=float)
    return mean, np.maximum(std, min_std)


# ---------------------------------------------------------------------------
# Proposal sampling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProposalConfig:
    """Mixture of per-particle local Gaussians and a global exploration term.

    ``rho`` is the probability a proposal is drawn globally. Local
    perturbations follow a stationary AR(1) process across timesteps with
    per-step standard deviation ``local_sigma`` (scalar or per control
    dimension) and lag-1 correlation ``temporal_correlation``. The global
    component is uniform over the control bounds or a zero-centered Gaussian
    with standard deviation ``global_scale``.
    """

    rho: float = 0.05
    local_sigma: tuple = (0.5,)
    temporal_correlation: float = 0.8
    global_kind: str = "uniform"
    global_scale: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.rho <= 1.0):
            raise ConfigError(f"rho={self.rho} must lie in [0, 1]")
        sigma = np.atleast_1d(np.asarray(self.local_sigma, dtype=float))
        if np.any(sigma <= 0):
            raise ConfigError("local_sigma must be strictly positive")
        object.__setattr__(self, "local_sigma", tuple(float(s) for s in sigma))
        if not (0.0 <= self.temporal_correlation < 1.0):
            raise ConfigError(f"temporal_correlation={self.temporal_correlation} must lie in [0, 1)")
        if self.global_kind not in ("uniform", "gaussian"):
            raise ConfigError(f"global_kind={self.global_kind!r} must be 'uniform' or 'gaussian'")

    def sigma_vector(self, control_dim: int) -> np.ndarray:
        sigma = np.asarray(self.local_sigma, dtype=float)
        if sigma.size == 1:
            return np.full(control_dim, sigma[0])
        if sigma.size != control_dim:
            raise ConfigError(f"local_sigma has {sigma.size} entries for {control_dim} control dims")
        return sigma


def ar1_noise(driver: np.ndarray, sigma, phi: float) -> np.ndarray:
    """Shape a block of standard normals into a stationary AR(1) sequence.

    ``driver`` is (..., T, m); the output has per-step std ``sigma`` and lag-1
    autocorrelation ``phi`` along the T axis.
    """
    xi = np.asarray(driver, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    out = np.empty_like(xi)
    out[..., 0, :] = sigma * xi[..., 0, :]
    scale = np.sqrt(1.0 - phi * phi) * sigma
    for t in range(1, xi.shape[-2]):
        out[..., t, :] = phi * out[..., t - 1, :] + scale * xi[..., t, :]
    return out


def sample_proposals(ensemble_controls, cfg: ProposalConfig, bounds, rng: np.random.Generator,
                     num: int) -> np.ndarray:
    """Draw ``num`` control sequences from the particle-local/global mixture.

    ``ensemble_controls`` is (N, T, m); outputs are clamped to ``bounds``
    (a (lower, upper) pair of per-dimension vectors). Random draws use
    fixed-shape blocks: a uniform for the mixture choice and one for the
    particle index per proposal, plus one (num, T, m) normal block, so stream
    consumption does not depend on the particle count.
    """
    z = np.asarray(ensemble_controls, dtype=float)
    if z.ndim != 3 or z.shape[0] < 1:
        raise DomainError(f"ensemble controls must be (N, T, m), got {z.shape}")
    N, T, m = z.shape
    lower, upper = np.asarray(bounds[0], dtype=float), np.asarray(bounds[1], dtype=float)
    sigma = cfg.sigma_vector(m)

    u_choice = rng.random(num)
    u_index = rng.random(num)
    driver = rng.standard_normal((num, T, m))

    idx = np.minimum((u_index * N).astype(int), N - 1)
    out = z[idx] + ar1_noise(driver, sigma, cfg.temporal_correlation)

    global_mask = u_choice < cfg.rho
    n_global = int(global_mask.sum())
    if n_global:
        if cfg.global_kind == "uniform":
            out[global_mask] = lower + rng.random((n_global, T, m)) * (upper - lower)
        else:
            out[global_mask] = cfg.global_scale * rng.standard_normal((n_global, T, m))
    return np.clip(out, lower, upper)


def shift_controls(controls: np.ndarray) -> np.ndarray:
    """Advance control sequences one step; the final step repeats (zero-order hold)."""
    shifted = np.empty_like(controls)
    shifted[..., :-1, :] = controls[..., 1:, :]
    shifted[..., -1, :] = controls[..., -1, :]
    return shifted


# ---------------------------------------------------------------------------
# Controller configurations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OtMpcConfig:
    """Transport-coupled controller settings (defaults match the car task).

    ``epsilon_scaling`` selects how the regularization is resolved each
    iteration: ``absolute`` uses ``epsilon`` directly, ``median`` multiplies
    it by the median pairwise particle-proposal distance, ``max`` by the
    largest cost-matrix entry. ``init_spread``, the std of the AR(1)
    perturbation applied to the initial all-zero ensemble, defaults to
    ``local_sigma``; zero skips the draw entirely.
    """

    horizon: int = 70
    num_particles: int = 20
    num_proposals: int = 200
    inner_iterations: int = 8
    beta: float = 0.460
    epsilon: float = 0.05
    epsilon_scaling: str = "median"
    eta: float = 0.5
    init_spread: Optional[float] = None
    proposal: ProposalConfig = ProposalConfig()
    sinkhorn_tolerance: float = 1e-4
    sinkhorn_max_iterations: int = 200

    def __post_init__(self):
        if min(self.horizon, self.num_particles, self.num_proposals, self.inner_iterations) < 1:
            raise ConfigError("horizon, particle, proposal, and iteration counts must be >= 1")
        if not (self.beta > 0):
            raise ConfigError(f"beta={self.beta} must be > 0")
        if self.epsilon_scaling not in ("absolute", "median", "max"):
            raise ConfigError(f"epsilon_scaling={self.epsilon_scaling!r} must be absolute|median|max")
        if self.init_spread is not None and self.init_spread < 0:
            raise ConfigError("init_spread must be >= 0")


@dataclass(frozen=True)
class MppiConfig:
    horizon: int = 30
    num_samples: int = 500
    iterations: int = 8
    beta: float = 1.019
    proposal: ProposalConfig = ProposalConfig(rho=0.0)

    def __post_init__(self):
        if min(self.horizon, self.num_samples, self.iterations) < 1:
            raise ConfigError("horizon, sample, and iteration counts must be >= 1")
        if self.beta < 0:
            raise ConfigError("beta must be >= 0")


@dataclass(frozen=True)
class CemConfig:
    horizon: int = 70
    num_samples: int = 800
    iterations: int = 5
    elite_fraction: float = 0.1
    alpha: float = 0.7
    init_std: float = 0.5
    min_std: float = 0.02
    temporal_correlation: float = 0.8

    def __post_init__(self):
        if min(self.horizon, self.num_samples, self.iterations) < 1:
            raise ConfigError("horizon, sample, and iteration counts must be >= 1")
        if not (0 < self.elite_fraction <= 1):
            raise ConfigError("elite_fraction must lie in (0, 1]")
        if int(self.num_samples * self.elite_fraction) < 1:
            raise ConfigError("elite_fraction keeps no elites at this sample count")
        if not (0 <= self.alpha <= 1):
            raise ConfigError("alpha must lie in [0, 1]")


def _resolve_epsilon(cfg: OtMpcConfig, z_flat: np.ndarray, y_flat: np.ndarray) -> float:
    if cfg.epsilon_scaling == "absolute":
        return cfg.epsilon
    C = build_cost_matrix(z_flat, y_flat, "quadratic")
    if cfg.epsilon_scaling == "max":
        return max(cfg.epsilon * float(C.max()), 1e-12)
    d = np.sqrt(np.maximum(2.0 * C, 0.0))
    return max(cfg.epsilon * float(np.median(d)), 1e-12)


# ---------------------------------------------------------------------------
# MPC cycles
# ---------------------------------------------------------------------------

def otmpc_cycle(ensemble: ParticleEnsemble, x0, env, cfg: OtMpcConfig,
                rng: np.random.Generator, fallback_action=None):
    """One receding-horizon cycle of the transport-coupled controller.

    Runs ``inner_iterations`` SCD steps, each against a freshly sampled and
    freshly scored proposal batch, then executes the first control of the
    lowest-cost particle (ties break to the lowest index) and returns the
    ensemble shifted one step forward. Iterations whose transport solve fails
    are skipped; if every iteration fails and ``fallback_action`` is given,
    it is returned with the ensemble unchanged and a diagnostic flag set.
    """
    T, m = cfg.horizon, env.control_dim
    bounds = (env.control_lower, env.control_upper)
    diagnostics = {"sinkhorn_iterations": [], "objectives": [], "failed_iterations": 0,
                   "failed": False, "epsilon": []}

    last_error = None
    for _ in range(cfg.inner_iterations):
        z3 = ensemble.particles.reshape(cfg.num_particles, T, m)
        ys = sample_proposals(z3, cfg.proposal, bounds, rng, cfg.num_proposals)
        res = rollout_batch(env, x0, ys)
        p = gibbs_weights(res.total_costs, cfg.beta)
        batch = ProposalBatch(ys.reshape(cfg.num_proposals, T * m), p,
                              -cfg.beta * (res.total_costs - res.total_costs.min()))
        eps = _resolve_epsilon(cfg, ensemble.particles, batch.proposals)
        step_cfg = ScdConfig(
            epsilon=eps, eta=cfg.eta, max_outer_iterations=1,
            sinkhorn=SinkhornConfig(epsilon=eps, tolerance=cfg.sinkhorn_tolerance,
                                    max_iterations=cfg.sinkhorn_max_iterations))
        try:
            ensemble, coupling, objective = scd_step(ensemble, batch, step_cfg)
        except (SolverFailureError, DegenerateCouplingError) as exc:
            diagnostics["failed_iterations"] += 1
            last_error = exc
            continue
        diagnostics["sinkhorn_iterations"].append(coupling.iterations_used)
        diagnostics["objectives"].append(float(objective))
        diagnostics["epsilon"].append(eps)

    if diagnostics["failed_iterations"] == cfg.inner_iterations:
        if fallback_action is None:
            raise last_error
        diagnostics["failed"] = True
        return np.asarray(fallback_action, dtype=float), ensemble, diagnostics

    particles3 = ensemble.particles.reshape(cfg.num_particles, T, m)
    particle_costs = rollout_batch(env, x0, particles3).total_costs
    best = int(np.argmin(particle_costs))
    action = particles3[best, 0].copy()

    diagnostics["best_cost"] = float(particle_costs[best])
    diagnostics["best_index"] = best
    diagnostics["ensemble_spread"] = float(
        np.linalg.norm(ensemble.particles - ensemble.particles.mean(axis=0), axis=1).mean())

    shifted = shift_controls(particles3).reshape(cfg.num_particles, T * m)
    return action, ParticleEnsemble(shifted, ensemble.weights), diagnostics


def mppi_cycle(mean: np.ndarray, x0, env, cfg: MppiConfig, rng: np.random.Generator):
    """One MPPI cycle: iterate the importance-weighted mean update, execute,
    shift."""
    T, m = cfg.horizon, env.control_dim
    bounds = (env.control_lower, env.control_upper)
    mean = np.asarray(mean, dtype=float).reshape(T, m)
    diagnostics = {"costs": []}
    for _ in range(cfg.iterations):
        samples = sample_proposals(mean[None], cfg.proposal, bounds, rng, cfg.num_samples)
        res = rollout_batch(env, x0, samples)
        mean = mppi_update(mean, samples - mean, res.total_costs, cfg.beta, bounds)
        diagnostics["costs"].append(float(res.total_costs.min()))
    diagnostics["mean_cost"] = float(rollout(env, x0, mean).total_cost)
    action = mean[0].copy()
    return action, shift_controls(mean), diagnostics


def cem_cycle(mean: np.ndarray, std: np.ndarray, x0, env, cfg: CemConfig,
              rng: np.random.Generator):
    """One CEM cycle: smoothed elite refits of the sampling Gaussian."""
    T, m = cfg.horizon, env.control_dim
    bounds = (env.control_lower, env.control_upper)
    mean = np.asarray(mean, dtype=float).reshape(T, m)
    std = np.asarray(std, dtype=float).reshape(T, m)
    diagnostics = {"costs": []}
    for _ in range(cfg.iterations):
        driver = rng.standard_normal((cfg.num_samples, T, m))
        noise = ar1_noise(driver, 1.0, cfg.temporal_correlation) * std
        samples = np.clip(mean + noise, bounds[0], bounds[1])
        res = rollout_batch(env, x0, samples)
        mean, std = cem_update(samples, res.total_costs, cfg.elite_fraction, cfg.alpha,
                               mean, std, cfg.min_std)
        mean = np.clip(mean, bounds[0], bounds[1])
        diagnostics["costs"].append(float(res.total_costs.min()))
    diagnostics["mean_cost"] = float(rollout(env, x0, mean).total_cost)
    action = mean[0].copy()
    return action, shift_controls(mean), shift_controls(std), diagnostics


# ---------------------------------------------------------------------------
# Stateful wrappers sharing one cycle interface
# ---------------------------------------------------------------------------

class OtMpcController:
    """Owns the particle ensemble and warm-starts it across cycles."""

    def __init__(self, env, cfg: OtMpcConfig, rng: np.random.Generator):
        self.env = env
        self.cfg = cfg
        self.rng = rng
        T, m = cfg.horizon, env.control_dim
        particles = np.zeros((cfg.num_particles, T, m))
        spread = cfg.proposal.sigma_vector(m) if cfg.init_spread is None else cfg.init_spread
        if np.any(np.asarray(spread) > 0):
            driver = rng.standard_normal((cfg.num_particles, T, m))
            particles += ar1_noise(driver, spread, cfg.proposal.temporal_correlation)
            particles = np.clip(particles, env.control_lower, env.control_upper)
        self.ensemble = ParticleEnsemble.uniform(particles.reshape(cfg.num_particles, T * m))
        self.last_action = np.zeros(m)

    def cycle(self, state):
        action, self.ensemble, diag = otmpc_cycle(
            self.ensemble, state, self.env, self.cfg, self.rng,
            fallback_action=self.last_action)
        self.last_action = action
        return action, diag


class MppiController:
    def __init__(self, env, cfg: MppiConfig, rng: np.random.Generator):
        self.env = env
        self.cfg = cfg
        self.rng = rng
        self.mean = np.zeros((cfg.horizon, env.control_dim))
        self.last_action = np.zeros(env.control_dim)

    def cycle(self, state):
        action, self.mean, diag = mppi_cycle(self.mean, state, self.env, self.cfg, self.rng)
        self.last_action = action
        return action, diag


class CemController:
    def __init__(self, env, cfg: CemConfig, rng: np.random.Generator):
        self.env = env
        self.cfg = cfg
        self.rng = rng
        self.mean = np.zeros((cfg.horizon, env.control_dim))
        self.std = np.full((cfg.horizon, env.control_dim), float(cfg.init_std))
        self.last_action = np.zeros(env.control_dim)

    def cycle(self, state):
        action, self.mean, self.std, diag = cem_cycle(
            self.mean, self.std, state, self.env, self.cfg, self.rng)
        self.last_action = action
        return action, diag

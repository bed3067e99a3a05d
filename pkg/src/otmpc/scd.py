"""Sinkhorn coordinate descent over a particle ensemble.

Alternates two exact minimizations of the entropic transport objective: the
coupling between particles and proposals (a Sinkhorn solve on the quadratic
cost), then the particles themselves (their barycentric projections, relaxed
by a step size eta). With fixed proposals and uniform particle weights the
recorded objective sequence is non-increasing and the iterates converge to a
block-coordinate stationary point.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from .barycenter import barycentric_update
from .errors import ConfigError, DegenerateCouplingError, DomainError, SolverFailureError
from .transport import (
    Coupling,
    SinkhornConfig,
    as_simplex,
    build_cost_matrix,
    eot_objective,
    sinkhorn,
    uniform_simplex,
)


@dataclass
class ParticleEnsemble:
    """N candidate points with simplex weights (uniform unless stated)."""

    particles: np.ndarray          # (N, D)
    weights: np.ndarray            # (N,)

    def __post_init__(self):
        self.particles = np.asarray(self.particles, dtype=float)
        if self.particles.ndim != 2 or self.particles.shape[0] < 1:
            raise DomainError(f"particles must be (N, D) with N >= 1, got {self.particles.shape}")
        if not np.all(np.isfinite(self.particles)):
            raise DomainError("particles must be finite")
        self.weights = as_simplex(self.weights, "particle weights")
        if self.weights.size != self.particles.shape[0]:
            raise DomainError("particle weights length does not match particle count")

    @classmethod
    def uniform(cls, particles) -> "ParticleEnsemble":
        particles = np.atleast_2d(np.asarray(particles, dtype=float))
        return cls(particles, uniform_simplex(particles.shape[0]))

    @property
    def size(self) -> int:
        return self.particles.shape[0]


@dataclass
class ProposalBatch:
    """M sampled proposals with Gibbs simplex weights and their raw scores.

    The weights must equal the max-shifted softmax of ``raw_scores``; use
    :meth:`from_scores` to construct them that way.
    """

    proposals: np.ndarray          # (M, D)
    weights: np.ndarray            # (M,)
    raw_scores: np.ndarray         # (M,)

    def __post_init__(self):
        self.proposals = np.asarray(self.proposals, dtype=float)
        if self.proposals.ndim != 2 or self.proposals.shape[0] < 1:
            raise DomainError(f"proposals must be (M, D) with M >= 1, got {self.proposals.shape}")
        if not np.all(np.isfinite(self.proposals)):
            raise DomainError("proposals must be finite")
        self.weights = as_simplex(self.weights, "proposal weights")
        self.raw_scores = np.asarray(self.raw_scores, dtype=float)
        if self.weights.size != self.proposals.shape[0] or self.raw_scores.size != self.weights.size:
            raise DomainError("proposal weights/raw_scores lengths do not match proposal count")
        expected = _shifted_softmax(self.raw_scores)
        if np.abs(expected - self.weights).sum() > 1e-6:
            raise DomainError("proposal weights are not the max-shifted softmax of raw_scores")

    @classmethod
    def from_scores(cls, proposals, raw_scores) -> "ProposalBatch":
        raw = np.asarray(raw_scores, dtype=float)
        return cls(np.atleast_2d(np.asarray(proposals, dtype=float)), _shifted_softmax(raw), raw)

    @classmethod
    def from_weights(cls, proposals, weights) -> "ProposalBatch":
        w = as_simplex(weights, "proposal weights")
        with np.errstate(divide="ignore"):
            return cls(np.atleast_2d(np.asarray(proposals, dtype=float)), w, np.log(w))

    @property
    def size(self) -> int:
        return self.proposals.shape[0]


def _shifted_softmax(scores: np.ndarray) -> np.ndarray:
    if np.isnan(scores).any() or np.isposinf(scores).any():
        raise DomainError("raw scores must be finite or -inf")
    shifted = scores - scores.max()
    w = np.exp(shifted)
    return w / w.sum()


@dataclass(frozen=True)
class ScdConfig:
    """Step size, regularization, and stopping rules for an SCD run.

    ``epsilon`` is in absolute cost units; the nested Sinkhorn settings supply
    the inner solver's tolerance and iteration cap (its own epsilon field is
    overridden). The relative-improvement test only applies to fixed-proposal
    runs; with resampling the objective is stochastic and only the
    displacement test and iteration cap remain active.
    """

    epsilon: float
    eta: float = 1.0
    max_outer_iterations: int = 100
    displacement_tol: float = 0.0
    relative_improvement_tol: float = 0.0
    resample_each_iteration: bool = False
    sinkhorn: Optional[SinkhornConfig] = None

    def __post_init__(self):
        if not (self.epsilon > 0):
            raise ConfigError(f"ScdConfig.epsilon={self.epsilon!r} must be > 0")
        if not (0.0 < self.eta <= 1.0):
            raise ConfigError(f"ScdConfig.eta={self.eta!r} must lie in (0, 1]")
        if self.max_outer_iterations < 1:
            raise ConfigError("ScdConfig.max_outer_iterations must be >= 1")
        if self.displacement_tol < 0 or self.relative_improvement_tol < 0:
            raise ConfigError("ScdConfig tolerances must be >= 0")
        if self.sinkhorn is None:
            object.__setattr__(self, "sinkhorn", SinkhornConfig(epsilon=self.epsilon))

    @classmethod
    def from_median_distance(cls, particles, proposals, scale: float = 0.05, **kwargs) -> "ScdConfig":
        """Build a config with epsilon = scale x median pairwise distance."""
        return cls(epsilon=epsilon_from_median_distance(particles, proposals, scale), **kwargs)

    def solver_config(self, warm_start=None) -> SinkhornConfig:
        return SinkhornConfig(
            epsilon=self.epsilon,
            tolerance=self.sinkhorn.tolerance,
            max_iterations=self.sinkhorn.max_iterations,
            warm_start_scalings=warm_start,
        )


def epsilon_from_median_distance(particles, proposals, scale: float = 0.05) -> float:
    """scale x median pairwise particle-proposal Euclidean distance (floored at 1e-12)."""
    z = np.atleast_2d(np.asarray(particles, dtype=float))
    y = np.atleast_2d(np.asarray(proposals, dtype=float))
    d = np.sqrt(np.maximum(2.0 * build_cost_matrix(z, y, "quadratic"), 0.0))
    return max(float(scale) * float(np.median(d)), 1e-12)


@dataclass
class ScdIterationRecord:
    iteration: int
    objective: float
    max_displacement: float
    sinkhorn_iterations: int
    row_marginal_error: float
    col_marginal_error: float

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)


@dataclass
class ScdTrace:
    """One record per completed outer iteration, plus how the run stopped."""

    records: List[ScdIterationRecord] = field(default_factory=list)
    stop_reason: str = ""
    error: Optional[str] = None

    @property
    def objectives(self) -> np.ndarray:
        return np.array([r.objective for r in self.records])

    def to_jsonl(self) -> str:
        return "\n".join(r.to_json() for r in self.records) + ("\n" if self.records else "")


def scd_step(ensemble: ParticleEnsemble, batch: ProposalBatch, cfg: ScdConfig,
             warm_start=None) -> Tuple[ParticleEnsemble, Coupling, float]:
    """One coupling solve plus one relaxed barycentric particle update.

    Returns the updated ensemble, the coupling it was computed from, and the
    transport objective evaluated at the post-update (particles, coupling)
    pair.
    """
    z = ensemble.particles
    y = batch.proposals
    if z.shape[1] != y.shape[1]:
        raise DomainError(f"particle dim {z.shape[1]} != proposal dim {y.shape[1]}")
    C = build_cost_matrix(z, y, "quadratic")
    coupling = sinkhorn(C, ensemble.weights, batch.weights, cfg.solver_config(warm_start))
    b = barycentric_update(coupling, y)
    z_new = (1.0 - cfg.eta) * z + cfg.eta * b
    objective = eot_objective(build_cost_matrix(z_new, y, "quadratic"), coupling, cfg.epsilon)
    return ParticleEnsemble(z_new, ensemble.weights), coupling, objective


def objective_of(ensemble: ParticleEnsemble, batch: ProposalBatch, gamma, cfg: ScdConfig) -> float:
    """Transport objective at the given particles/coupling pair."""
    C = build_cost_matrix(ensemble.particles, batch.proposals, "quadratic")
    return eot_objective(C, gamma, cfg.epsilon)


def scd_run(ensemble: ParticleEnsemble, proposal_source: Callable[[], ProposalBatch],
            cfg: ScdConfig) -> Tuple[ParticleEnsemble, ScdTrace]:
    """Iterate :func:`scd_step` until a stopping rule fires.

    Stopping rules, checked after each iteration: max particle displacement
    below ``displacement_tol`` (if > 0); relative objective improvement below
    ``relative_improvement_tol`` (fixed proposals with positive objective
    only); the outer iteration cap. When a step fails after at least one
    completed iteration, the last good ensemble is returned with the error
    recorded on the trace; a first-iteration failure propagates.

    Sinkhorn scalings are warm-started across iterations for fixed proposals
    and cold-started when resampling.
    """
    trace = ScdTrace()
    batch = proposal_source()
    warm = None
    prev_objective = None

    for k in range(1, cfg.max_outer_iterations + 1):
        if cfg.resample_each_iteration and k > 1:
            batch = proposal_source()
            warm = None
        previous = ensemble.particles
        try:
            ensemble, coupling, objective = scd_step(ensemble, batch, cfg, warm_start=warm)
        except (SolverFailureError, DegenerateCouplingError) as exc:
            if not trace.records:
                raise
            trace.stop_reason = "error"
            trace.error = str(exc)
            return ensemble, trace

        displacement = float(np.linalg.norm(ensemble.particles - previous, axis=1).max())
        trace.records.append(ScdIterationRecord(
            iteration=k,
            objective=float(objective),
            max_displacement=displacement,
            sinkhorn_iterations=coupling.iterations_used,
            row_marginal_error=coupling.row_marginal_error,
            col_marginal_error=coupling.col_marginal_error,
        ))

        if not cfg.resample_each_iteration:
            u, v = coupling.scalings()
            ok = np.all(np.isfinite(u)) and np.all(np.isfinite(v)) and u.min() > 0 and v.min() > 0
            warm = (u, v) if ok else None

        if cfg.displacement_tol > 0 and displacement < cfg.displacement_tol:
            trace.stop_reason = "displacement"
            return ensemble, trace
        if (cfg.relative_improvement_tol > 0 and not cfg.resample_each_iteration
                and prev_objective is not None and prev_objective > 0):
            if (prev_objective - objective) / prev_objective < cfg.relative_improvement_tol:
                trace.stop_reason = "relative_improvement"
                return ensemble, trace
        prev_objective = objective

    trace.stop_reason = "iteration_cap"
    return ensemble, trace

"""Dense entropic optimal transport: cost matrices, Sinkhorn, and the objective.

The solver computes the coupling Gamma minimizing ``<C, Gamma> - eps * H(Gamma)``
over couplings with prescribed row marginal ``q`` and column marginal ``p``,
where ``H(Gamma) = -sum Gamma_ij (log Gamma_ij - 1)``. Iteration is alternating
row/column rescaling of the kernel ``K = exp(-C/eps)``; when the kernel
underflows, the same fixed point is reached through log-sum-exp updates of the
dual potentials.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigError, DomainError, SolverFailureError

# Kernel rows/columns whose largest entry is below this underflow into
# exact zeros in double precision; the solver then works in log space.
_LOG_UNDERFLOW = np.log(1e-300)

SIMPLEX_ATOL = 1e-9


def as_simplex(weights, name: str = "weights") -> np.ndarray:
    """Validate a nonnegative vector summing to 1 (within 1e-9) and return it."""
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise DomainError(f"{name} must be a nonempty 1-D vector, got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise DomainError(f"{name} has non-finite entries")
    if w.min() < 0:
        raise DomainError(f"{name} has negative entries (min {w.min():.3e})")
    total = w.sum()
    if abs(total - 1.0) > SIMPLEX_ATOL:
        raise DomainError(f"{name} sums to {total!r}, not 1 within {SIMPLEX_ATOL}")
    return w


def uniform_simplex(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


# ---------------------------------------------------------------------------
# Cost matrices
# ---------------------------------------------------------------------------

def _as_points(x, name: str) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise DomainError(f"{name} must be a list of points (2-D array), got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DomainError(f"{name} has non-finite entries")
    return a


def _pairwise_sqdist(z: np.ndarray, y: np.ndarray) -> np.ndarray:
    d = z[:, None, :] - y[None, :, :]
    return np.einsum("ijk,ijk->ij", d, d)


def _cost_quadratic(z, y, params):
    return 0.5 * _pairwise_sqdist(z, y)


def _cost_weighted_quadratic(z, y, params):
    W = params.get("weight_matrix")
    if W is None:
        return _pairwise_sqdist(z, y)
    W = np.asarray(W, dtype=float)
    if W.shape != (z.shape[1], z.shape[1]):
        raise DomainError(f"weight matrix shape {W.shape} does not match point dimension {z.shape[1]}")
    d = z[:, None, :] - y[None, :, :]
    return np.einsum("ijk,kl,ijl->ij", d, W, d)


def _cost_regularized_quadratic(z, y, params):
    lam = float(params.get("lam", 0.0))
    return _pairwise_sqdist(z, y) + lam * np.sum(z * z, axis=1)[:, None]


def _cost_circular(z, y, params):
    diff = z[:, None, :] - y[None, :, :]
    return np.sum(2.0 * (1.0 - np.cos(diff)), axis=2)


def _cost_kl(z, y, params):
    if np.any(z <= 0) or np.any(y <= 0):
        raise DomainError("KL cost requires strictly positive coordinates")
    # sum_k z_k log(z_k / y_k), elementwise over coordinates
    return np.einsum("ik,ijk->ij", z, np.log(z[:, None, :] / y[None, :, :]))


def _matrix_points(x, name: str) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.ndim != 3 or a.shape[1] != a.shape[2]:
        raise DomainError(f"{name} must be a list of square matrices, got shape {a.shape}")
    return a


def _cost_log_frobenius(z, y, log_fn):
    lz = np.stack([log_fn(m) for m in z])
    ly = np.stack([log_fn(m) for m in y])
    d = lz[:, None, :, :] - ly[None, :, :, :]
    return np.einsum("ijkl,ijkl->ij", d, d)


_VECTOR_METRICS = {
    "quadratic": _cost_quadratic,
    "weighted_quadratic": _cost_weighted_quadratic,
    "regularized_quadratic": _cost_regularized_quadratic,
    "circular": _cost_circular,
    "kl": _cost_kl,
}

COST_METRICS = tuple(_VECTOR_METRICS) + ("so3", "spd")


def build_cost_matrix(particles, proposals, metric: str = "quadratic", **params) -> np.ndarray:
    """Pairwise cost matrix ``C[i, j] = c(z_i, y_j)`` for a named cost family.

    Vector metrics (``quadratic``, ``weighted_quadratic``, ``regularized_quadratic``,
    ``circular``, ``kl``) take ``(N, D)`` / ``(M, D)`` point arrays; ``so3`` and
    ``spd`` take stacks of square matrices and use the log-Frobenius distance.
    """
    if metric in ("so3", "spd"):
        from .barycenter import matrix_log_so3, matrix_log_spd, validate_rotation3, validate_spd

        z = _matrix_points(particles, "particles")
        y = _matrix_points(proposals, "proposals")
        if z.shape[1:] != y.shape[1:]:
            raise DomainError(f"particle/proposal matrix sizes differ: {z.shape[1:]} vs {y.shape[1:]}")
        if metric == "so3":
            for m in (*z, *y):
                validate_rotation3(m)
            return _cost_log_frobenius(z, y, matrix_log_so3)
        for m in (*z, *y):
            validate_spd(m)
        return _cost_log_frobenius(z, y, matrix_log_spd)

    try:
        builder = _VECTOR_METRICS[metric]
    except KeyError:
        raise DomainError(f"unknown cost metric {metric!r}; valid: {', '.join(COST_METRICS)}") from None
    z = _as_points(particles, "particles")
    y = _as_points(proposals, "proposals")
    if z.shape[1] != y.shape[1]:
        raise DomainError(f"point dimensions differ: particles {z.shape[1]}, proposals {y.shape[1]}")
    return builder(z, y, params)


def validate_cost_matrix(C) -> np.ndarray:
    C = np.asarray(C, dtype=float)
    if C.ndim != 2 or C.size == 0:
        raise DomainError(f"cost matrix must be 2-D and nonempty, got shape {C.shape}")
    if not np.all(np.isfinite(C)):
        raise DomainError("cost matrix has non-finite entries")
    return C


# ---------------------------------------------------------------------------
# Sinkhorn
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SinkhornConfig:
    """Solver settings: regularization, L1 stopping tolerance, iteration cap.

    ``warm_start_scalings`` optionally carries the (u, v) scaling vectors of a
    previous solve on a nearby problem; they must be strictly positive.
    """

    epsilon: float
    tolerance: float = 1e-6
    max_iterations: int = 500
    warm_start_scalings: Optional[Tuple[np.ndarray, np.ndarray]] = None

    def __post_init__(self):
        if not (self.epsilon > 0):
            raise ConfigError(f"SinkhornConfig.epsilon={self.epsilon!r} must be > 0")
        if not (self.tolerance > 0):
            raise ConfigError(f"SinkhornConfig.tolerance={self.tolerance!r} must be > 0")
        if self.max_iterations < 1:
            raise ConfigError(f"SinkhornConfig.max_iterations={self.max_iterations!r} must be >= 1")
        if self.warm_start_scalings is not None:
            u, v = self.warm_start_scalings
            u, v = np.asarray(u, float), np.asarray(v, float)
            if np.any(u <= 0) or np.any(v <= 0) or not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
                raise ConfigError("SinkhornConfig.warm_start_scalings must be strictly positive finite vectors")
            object.__setattr__(self, "warm_start_scalings", (u, v))


@dataclass
class Coupling:
    """Nonnegative matrix with (approximately) prescribed marginals.

    ``matrix`` factors as ``diag(u) K diag(v)`` with ``K = exp(-C/epsilon)``;
    the scalings are stored in log form so extreme regularizations remain
    representable.
    """

    matrix: np.ndarray
    row_marginal_error: float
    col_marginal_error: float
    iterations_used: int
    converged: bool = True
    epsilon: float = float("nan")
    log_u: np.ndarray = field(default=None, repr=False)
    log_v: np.ndarray = field(default=None, repr=False)

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def u(self) -> np.ndarray:
        return np.exp(self.log_u)

    @property
    def v(self) -> np.ndarray:
        return np.exp(self.log_v)

    def scalings(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.u, self.v


def marginal_errors(gamma, q, p) -> Tuple[float, float]:
    """L1 distances of the coupling's row/column sums from (q, p)."""
    m = np.asarray(getattr(gamma, "matrix", gamma), dtype=float)
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    if m.shape != (q.size, p.size):
        raise DomainError(f"coupling shape {m.shape} inconsistent with marginals ({q.size}, {p.size})")
    row = float(np.abs(m.sum(axis=1) - q).sum())
    col = float(np.abs(m.sum(axis=0) - p).sum())
    return row, col


def _check_kernel(log_K: np.ndarray, epsilon: float) -> None:
    if np.isnan(log_K).any():
        raise SolverFailureError(f"kernel exp(-C/eps) is NaN for epsilon={epsilon!r}")
    if np.isneginf(log_K).all(axis=1).any() or np.isneginf(log_K).all(axis=0).any():
        raise SolverFailureError(
            f"kernel exp(-C/eps) underflowed to an all-zero row or column for epsilon={epsilon!r}")


def sinkhorn(C, q, p, cfg: SinkhornConfig) -> Coupling:
    """Alternating marginal rescaling of ``K = exp(-C/eps)``.

    Each iteration updates ``u <- q / (K v)`` then ``v <- p / (K^T u)`` and
    exits once the row-marginal L1 error of ``diag(u) K diag(v)`` drops below
    ``cfg.tolerance``. Column sums are exact after every ``v`` update, so only
    the row error gates the exit; both errors are reported for the final
    iterate. Hitting the iteration cap returns a result flagged
    ``converged=False`` rather than raising.

    Args:
        C: Cost matrix ``(N, M)`` with finite entries.
        q: Row marginal, simplex of size N.
        p: Column marginal, simplex of size M.
        cfg: Regularization, tolerance, iteration cap, optional warm start.

    Returns:
        A :class:`Coupling` holding the final iterate and its diagnostics.

    Raises:
        SolverFailureError: the kernel has an all-zero row/column even in
            log space (epsilon too small for the cost scale of ``C``).
        DomainError: inconsistent shapes or invalid marginals.
    """
    C = validate_cost_matrix(C)
    q = as_simplex(q, "q")
    p = as_simplex(p, "p")
    n, m = C.shape
    if q.size != n or p.size != m:
        raise DomainError(f"cost matrix {C.shape} inconsistent with marginals ({q.size}, {p.size})")

    eps = float(cfg.epsilon)
    with np.errstate(over="ignore"):
        log_K = -C / eps
    _check_kernel(log_K, eps)

    if cfg.warm_start_scalings is not None:
        u0, v0 = cfg.warm_start_scalings
        if u0.size != n or v0.size != m:
            raise DomainError(f"warm-start scaling lengths ({u0.size}, {v0.size}) do not match ({n}, {m})")
        log_u = np.log(u0)
        log_v = np.log(v0)
    else:
        log_u = np.zeros(n)
        log_v = np.zeros(m)

    # Scaling-domain updates are valid only while the kernel itself is
    # representable; otherwise use log-sum-exp on the potentials.
    use_log = bool(log_K.max(axis=1).min() < _LOG_UNDERFLOW or log_K.max(axis=0).min() < _LOG_UNDERFLOW)

    with np.errstate(divide="ignore"):
        log_q = np.log(q)
        log_p = np.log(p)

    iterations = 0
    converged = False
    row_err = np.inf

    if not use_log:
        K = np.exp(log_K)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            u = np.exp(log_u)
            v = np.exp(log_v)
            for iterations in range(1, cfg.max_iterations + 1):
                u = q / (K @ v)
                v = p / (K.T @ u)
                if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
                    # Scalings blew up (tiny eps or hostile warm start): redo in log space.
                    use_log = True
                    log_u = np.zeros(n)
                    log_v = np.zeros(m)
                    break
                gamma = u[:, None] * K * v[None, :]
                row_err = np.abs(gamma.sum(axis=1) - q).sum()
                if row_err < cfg.tolerance:
                    converged = True
                    break
        if not use_log:
            with np.errstate(divide="ignore"):
                log_u = np.log(u)
                log_v = np.log(v)

    if use_log:
        converged = False
        for iterations in range(1, cfg.max_iterations + 1):
            log_u = log_q - logsumexp(log_K + log_v[None, :], axis=1)
            log_v = log_p - logsumexp(log_K.T + log_u[None, :], axis=1)
            gamma = np.exp(log_K + log_u[:, None] + log_v[None, :])
            row_err = np.abs(gamma.sum(axis=1) - q).sum()
            if row_err < cfg.tolerance:
                converged = True
                break

    col_err = np.abs(gamma.sum(axis=0) - p).sum()
    return Coupling(
        matrix=gamma,
        row_marginal_error=float(row_err),
        col_marginal_error=float(col_err),
        iterations_used=iterations,
        converged=converged,
        epsilon=eps,
        log_u=log_u,
        log_v=log_v,
    )


def eot_objective(C, gamma, epsilon: float) -> float:
    """Entropic transport objective ``<C, Gamma> - eps * H(Gamma)``.

    Zero coupling entries contribute nothing to the entropy (the x log x -> 0
    limit, with the entropy's "-1" term dropped alongside).
    """
    C = np.asarray(C, dtype=float)
    m = np.asarray(getattr(gamma, "matrix", gamma), dtype=float)
    if C.shape != m.shape:
        raise DomainError(f"cost {C.shape} and coupling {m.shape} shapes differ")
    if m.min() < 0:
        raise DomainError(f"coupling has negative entries (min {m.min():.3e})")
    transport = float((C * m).sum())
    pos = m > 0
    neg_entropy = float((m[pos] * (np.log(m[pos]) - 1.0)).sum())
    return transport + float(epsilon) * neg_entropy

"""Closed-form particle updates from a transport coupling.

Each particle moves to the minimizer of its coupling-weighted cost to the
proposals. For the quadratic cost that is the barycentric projection (the
row-normalized weighted mean); other cost families with separable gradients
``f(z) - g(y)`` update through ``z* = f^{-1}(sum_j w_j g(y_j))``:

    quadratic / weighted quadratic   f(z) = z (weight matrix cancels)
    regularized quadratic (lam)      f(z) = (1 + lam) z
    circular                         resultant angle of sum_j w_j e^{i y_j}
    kl                               elementwise weighted geometric mean
    so3 / spd                        log-Euclidean mean exp(sum_j w_j log Y_j)
"""

from __future__ import annotations

import numpy as np

from .errors import (
    BranchAmbiguityError,
    DegenerateCouplingError,
    DomainError,
    NearSingularError,
    UndefinedMeanError,
)

ROW_MASS_FLOOR = 1e-15
ROTATION_ATOL = 1e-8
SPD_SYMMETRY_ATOL = 1e-10
SPD_EIG_FLOOR = 1e-12
CIRCULAR_RESULTANT_FLOOR = 1e-12
_SO3_TAYLOR_ANGLE = 1e-4
_SO3_BRANCH_MARGIN = 1e-6

UPDATE_FAMILIES = (
    "quadratic",
    "weighted_quadratic",
    "regularized_quadratic",
    "circular",
    "kl",
    "so3",
    "spd",
)


# ---------------------------------------------------------------------------
# SO(3) and SPD(n) log/exp
# ---------------------------------------------------------------------------

def validate_rotation3(R, atol: float = ROTATION_ATOL) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        raise DomainError(f"rotation must be 3x3, got {R.shape}")
    ortho = np.linalg.norm(R.T @ R - np.eye(3))
    if ortho > atol:
        raise DomainError(f"matrix is not orthogonal: ||R^T R - I||_F = {ortho:.3e}")
    det = np.linalg.det(R)
    if abs(det - 1.0) > atol:
        raise DomainError(f"matrix has det {det:.6f}, not a proper rotation")
    return R


def rotation_angle(R) -> float:
    """Rotation angle in [0, pi] from the trace."""
    R = np.asarray(R, dtype=float)
    return float(np.arccos(np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)))


def matrix_log_so3(R) -> np.ndarray:
    """Skew-symmetric logarithm of a rotation via the axis-angle formula.

    Near the identity the factor ``theta / (2 sin theta)`` is replaced by its
    Taylor expansion; at angles within 1e-6 of pi the principal branch is
    ambiguous and the call fails.
    """
    R = validate_rotation3(R)
    theta = rotation_angle(R)
    if theta >= np.pi - _SO3_BRANCH_MARGIN:
        raise BranchAmbiguityError(
            f"rotation angle {theta:.8f} within 1e-6 of pi: log branch ambiguous")
    A = R - R.T
    if theta < _SO3_TAYLOR_ANGLE:
        t2 = theta * theta
        factor = 0.5 * (1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0)
    else:
        factor = theta / (2.0 * np.sin(theta))
    return factor * A


def matrix_exp_so3(A) -> np.ndarray:
    """Rodrigues exponential of a 3x3 skew-symmetric matrix."""
    A = np.asarray(A, dtype=float)
    if A.shape != (3, 3):
        raise DomainError(f"expected 3x3 skew matrix, got {A.shape}")
    if np.abs(A + A.T).max() > 1e-10:
        raise DomainError("matrix is not skew-symmetric")
    w = np.array([A[2, 1], A[0, 2], A[1, 0]])
    theta = float(np.linalg.norm(w))
    if theta < _SO3_TAYLOR_ANGLE:
        t2 = theta * theta
        s = 1.0 - t2 / 6.0 + t2 * t2 / 120.0          # sin(t)/t
        c = 0.5 - t2 / 24.0 + t2 * t2 / 720.0         # (1-cos(t))/t^2
    else:
        s = np.sin(theta) / theta
        c = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + s * A + c * (A @ A)


def validate_spd(P, symmetry_atol: float = SPD_SYMMETRY_ATOL) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise DomainError(f"SPD matrix must be square, got {P.shape}")
    asym = np.abs(P - P.T).max()
    if asym > symmetry_atol:
        raise DomainError(f"matrix is not symmetric (max asymmetry {asym:.3e})")
    if np.linalg.eigvalsh(P).min() <= 0:
        raise DomainError("matrix is not positive definite")
    return P


def matrix_log_spd(P) -> np.ndarray:
    """Symmetric logarithm of an SPD matrix via eigendecomposition."""
    P = validate_spd(P)
    vals, vecs = np.linalg.eigh(P)
    if vals.min() <= SPD_EIG_FLOOR:
        raise NearSingularError(f"eigenvalue {vals.min():.3e} <= 1e-12; log is ill-conditioned")
    L = (vecs * np.log(vals)) @ vecs.T
    return 0.5 * (L + L.T)


def matrix_exp_spd(S) -> np.ndarray:
    """Exponential of a symmetric matrix; inverse of :func:`matrix_log_spd`."""
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise DomainError(f"expected a square symmetric matrix, got {S.shape}")
    if np.abs(S - S.T).max() > SPD_SYMMETRY_ATOL:
        raise DomainError("matrix is not symmetric")
    vals, vecs = np.linalg.eigh(S)
    E = (vecs * np.exp(vals)) @ vecs.T
    return 0.5 * (E + E.T)


# ---------------------------------------------------------------------------
# Barycentric updates
# ---------------------------------------------------------------------------

def barycentric_weights(gamma) -> np.ndarray:
    """Row-normalize a coupling into per-particle simplex weights."""
    m = np.asarray(getattr(gamma, "matrix", gamma), dtype=float)
    if m.ndim != 2:
        raise DomainError(f"coupling must be 2-D, got shape {m.shape}")
    if m.min() < 0:
        raise DomainError(f"coupling has negative entries (min {m.min():.3e})")
    mass = m.sum(axis=1)
    for i, total in enumerate(mass):
        if total <= ROW_MASS_FLOOR:
            raise DegenerateCouplingError(i, float(total))
    return m / mass[:, None]


def _validate_weight_rows(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.ndim != 2:
        raise DomainError(f"weights must be 2-D, got shape {w.shape}")
    if w.min() < 0:
        raise DomainError("weights have negative entries")
    if np.abs(w.sum(axis=1) - 1.0).max() > 1e-9:
        raise DomainError("weight rows must each sum to 1 within 1e-9")
    return w


def _clip_to_hull(points: np.ndarray, proposals: np.ndarray) -> np.ndarray:
    # Convex combinations can overshoot the per-dimension hull by one ulp.
    return np.clip(points, proposals.min(axis=0), proposals.max(axis=0))


def barycentric_update(gamma, proposals) -> np.ndarray:
    """Move each particle to its coupling-weighted mean of the proposals.

    Args:
        gamma: Coupling (or raw nonnegative matrix) of shape ``(N, M)``.
        proposals: Points ``(M, D)`` (a 1-D array is treated as scalars).

    Returns:
        ``(N, D)`` barycenters, each inside the per-dimension proposal hull.
    """
    y = np.asarray(proposals, dtype=float)
    squeeze = y.ndim == 1
    if squeeze:
        y = y[:, None]
    w = barycentric_weights(gamma)
    if w.shape[1] != y.shape[0]:
        raise DomainError(f"coupling has {w.shape[1]} columns but {y.shape[0]} proposals given")
    out = _clip_to_hull(w @ y, y)
    return out[:, 0] if squeeze else out


def _one_hot_rows(w: np.ndarray) -> np.ndarray:
    return w.max(axis=1) == 1.0


def generalized_update(weights, proposals, family: str, *, lam: float = 0.0,
                       weight_matrix=None):
    """Closed-form weighted update of each particle for a named cost family.

    ``weights`` are row-simplex barycentric weights ``(N, M)`` (see
    :func:`barycentric_weights`); rows that are exactly one-hot return the
    selected proposal unchanged. ``lam`` applies to the regularized quadratic
    family; ``weight_matrix`` to the weighted quadratic family, where it
    cancels and only its validity is checked.
    """
    w = _validate_weight_rows(weights)

    if family in ("quadratic", "weighted_quadratic", "regularized_quadratic"):
        y = np.asarray(proposals, dtype=float)
        squeeze = y.ndim == 1
        if squeeze:
            y = y[:, None]
        if w.shape[1] != y.shape[0]:
            raise DomainError(f"{w.shape[1]} weight columns but {y.shape[0]} proposals")
        if family == "weighted_quadratic" and weight_matrix is not None:
            validate_spd(weight_matrix)
        out = _clip_to_hull(w @ y, y)
        if family == "regularized_quadratic":
            if lam < 0:
                raise DomainError(f"regularization lam={lam} must be >= 0")
            out = out / (1.0 + lam)
        return out[:, 0] if squeeze else out

    if family == "circular":
        y = np.asarray(proposals, dtype=float)
        squeeze = y.ndim == 1
        if squeeze:
            y = y[:, None]
        s = w @ np.sin(y)
        c = w @ np.cos(y)
        resultant = np.hypot(s, c)
        if resultant.min() < CIRCULAR_RESULTANT_FLOOR:
            i, d = divmod(int(resultant.argmin()), y.shape[1])
            raise UndefinedMeanError(
                f"circular resultant {resultant.min():.3e} < 1e-12 for particle {i}, "
                f"dimension {d}: mean angle undefined")
        out = np.arctan2(s, c)
        hot = _one_hot_rows(w)
        if hot.any():
            out[hot] = y[w[hot].argmax(axis=1)]
        return out[:, 0] if squeeze else out

    if family == "kl":
        y = np.asarray(proposals, dtype=float)
        squeeze = y.ndim == 1
        if squeeze:
            y = y[:, None]
        if np.any(y <= 0):
            raise DomainError("kl family requires strictly positive proposal entries")
        out = np.exp(w @ np.log(y))
        hot = _one_hot_rows(w)
        if hot.any():
            out[hot] = y[w[hot].argmax(axis=1)]
        return out[:, 0] if squeeze else out

    if family == "so3":
        mats = [validate_rotation3(R) for R in proposals]
        logs = np.stack([matrix_log_so3(R) for R in mats])
        out = np.stack([matrix_exp_so3(np.tensordot(row, logs, axes=1)) for row in w])
        hot = _one_hot_rows(w)
        for i in np.nonzero(hot)[0]:
            out[i] = mats[int(w[i].argmax())]
        return out

    if family == "spd":
        mats = [validate_spd(Q) for Q in proposals]
        logs = np.stack([matrix_log_spd(Q) for Q in mats])
        out = np.stack([matrix_exp_spd(np.tensordot(row, logs, axes=1)) for row in w])
        hot = _one_hot_rows(w)
        for i in np.nonzero(hot)[0]:
            out[i] = mats[int(w[i].argmax())]
        return out

    raise DomainError(f"unknown update family {family!r}; valid: {', '.join(UPDATE_FAMILIES)}")

"""Exact spin-1/2 algebra: Pauli matrices, analyzer projectors, Bloch vectors.

Conventions: sigma_1 = x, sigma_2 = y, sigma_3 = z with sigma_3 diagonal, so
the +z projector is diag(1, 0) and every matrix-level value in the test suite
is reproducible by hand.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "IDENTITY",
    "SIGMA_X",
    "SIGMA_Y",
    "SIGMA_Z",
    "PAULI",
    "BALL_EPS",
    "UNIT_EPS",
    "MIN_DIRECTION_NORM",
    "InvalidDirectionError",
    "InvalidStateError",
    "OutOfBallError",
    "unit_direction",
    "polarization_vector",
    "projector_from_direction",
    "overlap_squared",
    "density_from_polarization",
    "polarization_from_density",
    "born_probability",
    "check_density_matrix",
]

IDENTITY = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SIGMA_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
PAULI = (SIGMA_X, SIGMA_Y, SIGMA_Z)

# Membership tolerance for |r|^2 <= 1; vectors within this band are clamped
# onto the sphere, anything further out is rejected.
BALL_EPS = 1e-12
# A direction counts as unit when | |a| - 1 | is below this.
UNIT_EPS = 1e-12
# unit_direction refuses to normalize vectors shorter than this.
MIN_DIRECTION_NORM = 1e-9
# Probabilities may stick out of [0, 1] by at most this before we raise.
_PROB_EPS = 1e-12


class InvalidDirectionError(ValueError):
    """Analyzer direction is unusable: wrong shape, non-finite, zero, or not unit."""


class OutOfBallError(ValueError):
    """Polarization vector lies outside the closed unit (Poincare) ball."""


class InvalidStateError(ValueError):
    """Matrix is not a valid spin-1/2 density matrix."""


def unit_direction(a) -> np.ndarray:
    """Normalize an analyzer direction given as any length-3 vector.

    Rejects non-finite input and vectors with norm below MIN_DIRECTION_NORM
    (hand-typed directions like (1, 1, 0) are fine, a zero vector is not).
    """
    v = np.asarray(a, dtype=float)
    if v.shape != (3,):
        raise InvalidDirectionError(f"direction must be a 3-vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise InvalidDirectionError("direction has non-finite components")
    norm = float(np.linalg.norm(v))
    if norm < MIN_DIRECTION_NORM:
        raise InvalidDirectionError(f"direction norm {norm:g} is below {MIN_DIRECTION_NORM:g}")
    return v / norm


def _require_unit(a) -> np.ndarray:
    v = np.asarray(a, dtype=float)
    if v.shape != (3,) or not np.all(np.isfinite(v)):
        raise InvalidDirectionError("direction must be a finite 3-vector")
    if abs(float(np.linalg.norm(v)) - 1.0) > UNIT_EPS:
        raise InvalidDirectionError(f"direction {v} is not unit norm; use unit_direction()")
    return v


def _require_sign(sign) -> float:
    if sign == 1 or sign == -1:
        return float(sign)
    raise ValueError(f"sign must be +1 or -1, got {sign!r}")


def polarization_vector(r) -> np.ndarray:
    """Validate a polarization (Bloch) vector against the closed unit ball.

    Vectors with |r|^2 in (1, 1 + BALL_EPS] are clamped back onto the sphere;
    anything further out raises OutOfBallError.
    """
    v = np.asarray(r, dtype=float)
    if v.shape != (3,):
        raise InvalidStateError(f"polarization must be a 3-vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise InvalidStateError("polarization has non-finite components")
    norm_sq = float(v @ v)
    if norm_sq > 1.0 + BALL_EPS:
        raise OutOfBallError(f"|r|^2 = {norm_sq!r} exceeds 1 by more than {BALL_EPS:g}")
    if norm_sq > 1.0:
        v = v / np.sqrt(norm_sq)
    return v


def _clamp_probability(p: float) -> float:
    if p < -_PROB_EPS or p > 1.0 + _PROB_EPS:
        raise ValueError(f"probability {p!r} violates [0, 1] beyond round-off")
    return min(max(p, 0.0), 1.0)


def projector_from_direction(a, sign) -> np.ndarray:
    """Rank-1 projector (1 + sign * a.sigma) / 2 onto spin sign-along-a."""
    v = _require_unit(a)
    s = _require_sign(sign)
    return 0.5 * (IDENTITY + s * (v[0] * SIGMA_X + v[1] * SIGMA_Y + v[2] * SIGMA_Z))


def overlap_squared(a, b) -> float:
    """Squared overlap of the spin-up states along a and b: (1 + a.b) / 2."""
    va = _require_unit(a)
    vb = _require_unit(b)
    return _clamp_probability(0.5 * (1.0 + float(va @ vb)))


def density_from_polarization(r) -> np.ndarray:
    """Density matrix (1 + r.sigma) / 2 for a polarization vector in the ball."""
    v = polarization_vector(r)
    return 0.5 * (IDENTITY + v[0] * SIGMA_X + v[1] * SIGMA_Y + v[2] * SIGMA_Z)


def polarization_from_density(rho) -> np.ndarray:
    """Pauli expectation values r_i = Tr(rho sigma_i) of a valid density matrix."""
    m = check_density_matrix(rho)
    return np.array([float(np.real(np.trace(m @ s))) for s in PAULI])


def born_probability(r, a, sign) -> float:
    """Outcome probability (1 + sign * r.a) / 2 for analyzer a on state r.

    The two signs are exact complements: born(r, a, +1) + born(r, a, -1) == 1.
    """
    rv = polarization_vector(r)
    av = _require_unit(a)
    s = _require_sign(sign)
    return _clamp_probability(0.5 * (1.0 + s * float(rv @ av)))


def check_density_matrix(rho) -> np.ndarray:
    """Validate Hermiticity, unit trace and positive semidefiniteness.

    Returns the matrix as a complex ndarray. Tolerance is 1e-12 on each
    defect, matching the ball membership tolerance on polarization vectors.
    """
    m = np.asarray(rho, dtype=complex)
    if m.shape != (2, 2):
        raise InvalidStateError(f"density matrix must be 2x2, got shape {m.shape}")
    if not np.all(np.isfinite(m.real)) or not np.all(np.isfinite(m.imag)):
        raise InvalidStateError("density matrix has non-finite entries")
    herm_defect = float(np.max(np.abs(m - m.conj().T)))
    if herm_defect > 1e-12:
        raise InvalidStateError(f"not Hermitian: max |m - m^dag| = {herm_defect:g}")
    trace_defect = abs(complex(np.trace(m)) - 1.0)
    if trace_defect > 1e-12:
        raise InvalidStateError(f"trace differs from 1 by {trace_defect:g}")
    eigenvalues = np.linalg.eigvalsh(0.5 * (m + m.conj().T))
    if float(eigenvalues.min()) < -1e-12:
        raise InvalidStateError(f"negative eigenvalue {eigenvalues.min():g}")
    return m

"""Polarization reconstruction from Stern-Gerlach records.

Four routes to the same question, deliberately kept independent so they can
cross-check each other:

* linear_inversion    - direct frequency readout on three orthogonal axes,
                        unbiased but free to leave the unit ball;
* maxlik_fixed_point  - damped fixed-point iteration r <- R(r) r + K(r)
                        started at the origin, the production estimator;
* grid_oracle         - brute-force likelihood maximization on a cubic
                        lattice, slow but assumption-free;
* gradient_residual   - the stationarity condition of the log-likelihood,
                        checkable against finite differences.

R and K are the scalar and vector coefficients of the fixed-point map,

    R(r) = sum_j w_j [ (1+X_j)/(1+u_j) + (1-X_j)/(1-u_j) ] / 2,
    K(r) = sum_j w_j [ (1+X_j)/(1+u_j) - (1-X_j)/(1-u_j) ] / 2 * a_j,

with u_j = a_j . r and weights w_j = N_j / sum(N). For equal-budget
campaigns the weights reduce to 1/M, the normative case; interior maxima
satisfy K = 0 and R = 1, pure-state maxima sit on the sphere with K parallel
to r.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np

from .algebra import BALL_EPS, check_density_matrix, polarization_vector, projector_from_direction

__all__ = [
    "InvalidFrameError",
    "SingularDenominatorError",
    "SolverOptions",
    "LinearInversionResult",
    "ReconstructionResult",
    "linear_inversion",
    "log_likelihood",
    "compute_R",
    "compute_K",
    "gradient_residual",
    "maxlik_fixed_point",
    "grid_oracle",
    "overcompleteness_defect",
]

# Pairwise orthogonality tolerance for linear inversion frames.
ORTHO_EPS = 1e-9


class InvalidFrameError(ValueError):
    """Records do not form three pairwise-orthogonal analyzer axes."""


class SingularDenominatorError(ValueError):
    """Some |a_j . r| >= 1, so the R/K denominators are singular."""


@dataclass(frozen=True)
class SolverOptions:
    """Knobs of the fixed-point solver.

    tol_k is the convergence threshold on |K| (interior) and on the
    tangential part of K (boundary). ball_margin keeps iterates at radius
    <= 1 - ball_margin so every denominator stays finite; a point within
    2*ball_margin of the sphere is classified as a boundary solution.
    """

    tol_k: float = 1e-10
    max_iterations: int = 10000
    damping_min: float = 1e-6
    ball_margin: float = 1e-9

    def __post_init__(self):
        if not (self.tol_k > 0.0):
            raise ValueError("tol_k must be positive")
        if not (isinstance(self.max_iterations, (int, np.integer)) and self.max_iterations >= 1):
            raise ValueError("max_iterations must be a positive integer")
        if not (0.0 < self.damping_min <= 1.0):
            raise ValueError("damping_min must lie in (0, 1]")
        if not (0.0 < self.ball_margin < 0.5):
            raise ValueError("ball_margin must lie in (0, 0.5)")


@dataclass(frozen=True)
class LinearInversionResult:
    """Raw inverted vector; out_of_ball flags |r|^2 > 1 + BALL_EPS."""

    r_raw: tuple[float, float, float]
    out_of_ball: bool

    def to_json_dict(self) -> dict:
        return {"r_raw": list(self.r_raw), "out_of_ball": self.out_of_ball}


@dataclass(frozen=True)
class ReconstructionResult:
    """Solver output plus convergence diagnostics.

    k_residual is |K| at the solution for interior results and the norm of
    the tangential part of K for boundary results; both are evaluated at the
    last interior iterate. ll_trace / r_trace hold the accepted iterates
    (origin first) and are not serialized; ll_trace is non-decreasing by
    construction.
    """

    r_est: tuple[float, float, float]
    iterations: int
    converged: bool
    boundary: bool
    log_likelihood: float
    k_residual: float
    r_value: float
    ll_trace: tuple[float, ...] = field(repr=False, compare=False, default=())
    r_trace: tuple[tuple[float, float, float], ...] = field(repr=False, compare=False, default=())

    def to_json_dict(self) -> dict:
        return {
            "r_est": list(self.r_est),
            "iterations": self.iterations,
            "converged": self.converged,
            "boundary": self.boundary,
            "log_likelihood": self.log_likelihood,
            "k_residual": self.k_residual,
            "r_value": self.r_value,
        }


def _records_arrays(records):
    records = list(records)
    if not records:
        raise ValueError("at least one measurement record is required")
    directions = np.array([rec.setting.direction for rec in records], dtype=float)
    frequencies = np.array([rec.x for rec in records], dtype=float)
    budgets = np.array([rec.setting.n_particles for rec in records], dtype=float)
    return directions, frequencies, budgets


def _batch_log_likelihood(u, x, n):
    """Sum_j N_j [ (1+X_j) ln(1+u_j) + (1-X_j) ln(1-u_j) ] / 2 along the last axis.

    Zero-count factors contribute exactly 0 even at u = -+1; a positive count
    on a vanishing base yields -inf.
    """
    coef_plus = 0.5 * n * (1.0 + x)
    coef_minus = 0.5 * n * (1.0 - x)
    with np.errstate(divide="ignore", invalid="ignore"):
        term_plus = np.where(coef_plus > 0.0, coef_plus * np.log1p(u), 0.0)
        term_minus = np.where(coef_minus > 0.0, coef_minus * np.log1p(-u), 0.0)
    return (term_plus + term_minus).sum(axis=-1)


def log_likelihood(r, records) -> float:
    """Log-likelihood of the records at polarization r (unnormalized bases 1 +- u).

    The value at the origin is exactly 0; subtracting sum(N_j) ln 2 converts
    to the probability-normalized convention. Returns -inf when r sits on the
    sphere and some observed outcome has probability zero there.
    """
    rv = polarization_vector(r)
    directions, frequencies, budgets = _records_arrays(records)
    u = np.clip(directions @ rv, -1.0, 1.0)
    return float(_batch_log_likelihood(u, frequencies, budgets))


def _overlaps_checked(directions, rv):
    u = directions @ rv
    if np.any(np.abs(u) >= 1.0):
        j = int(np.argmax(np.abs(u)))
        raise SingularDenominatorError(
            f"|a . r| = {abs(u[j]):.17g} >= 1 for setting {j}; R/K are singular there"
        )
    return u


def _r_and_k(u, x, weights, directions):
    factor_plus = (1.0 + x) / (1.0 + u)
    factor_minus = (1.0 - x) / (1.0 - u)
    r_value = float(np.sum(weights * 0.5 * (factor_plus + factor_minus)))
    k_vector = directions.T @ (weights * 0.5 * (factor_plus - factor_minus))
    return r_value, k_vector


def compute_R(r, records) -> float:
    """Scalar coefficient R(r) of the fixed-point map; R = 1 - r.K identically."""
    rv = polarization_vector(r)
    directions, frequencies, budgets = _records_arrays(records)
    u = _overlaps_checked(directions, rv)
    r_value, _ = _r_and_k(u, frequencies, budgets / budgets.sum(), directions)
    return r_value


def compute_K(r, records) -> np.ndarray:
    """Vector coefficient K(r); K = 0 at interior likelihood maxima."""
    rv = polarization_vector(r)
    directions, frequencies, budgets = _records_arrays(records)
    u = _overlaps_checked(directions, rv)
    _, k_vector = _r_and_k(u, frequencies, budgets / budgets.sum(), directions)
    return k_vector


def gradient_residual(r, records) -> np.ndarray:
    """Stationarity vector sum_j (X_j - u_j) / (1 - u_j^2) a_j.

    Identical to M * K(r) for equal budgets, and to grad log_likelihood / N;
    it vanishes at interior maxima.
    """
    rv = polarization_vector(r)
    directions, frequencies, _ = _records_arrays(records)
    u = _overlaps_checked(directions, rv)
    return directions.T @ ((frequencies - u) / (1.0 - u * u))


def linear_inversion(records) -> LinearInversionResult:
    """Frequency readout r = sum_i X_i a_i on three pairwise-orthogonal axes.

    The result is returned unclamped; it lies outside the unit ball whenever
    the counts are incompatible with a positive semidefinite state.
    """
    records = list(records)
    if len(records) != 3:
        raise InvalidFrameError(f"linear inversion needs exactly 3 records, got {len(records)}")
    directions, frequencies, _ = _records_arrays(records)
    for i in range(3):
        for j in range(i + 1, 3):
            dot = float(directions[i] @ directions[j])
            if abs(dot) > ORTHO_EPS:
                raise InvalidFrameError(
                    f"axes {i} and {j} are not orthogonal (a_{i} . a_{j} = {dot:.3g})"
                )
    r_raw = directions.T @ frequencies
    out_of_ball = bool(float(r_raw @ r_raw) > 1.0 + BALL_EPS)
    return LinearInversionResult(r_raw=tuple(float(c) for c in r_raw), out_of_ball=out_of_ball)


def maxlik_fixed_point(records, options: SolverOptions | None = None) -> ReconstructionResult:
    """Maximum-likelihood polarization via the damped fixed-point iteration.

    Starting from the origin, each pass applies r <- r + lambda (R r + K - r)
    with lambda backtracked from 1 (halving, floor damping_min) until the
    candidate keeps |r| <= 1 - ball_margin and does not decrease the
    log-likelihood; candidates that overshoot the ball are pulled back
    radially to that radius, which lets boundary solutions slide along the
    rim instead of stalling against it. The ascent test evaluates the
    likelihood *change* in cancellation-free form, so it stays meaningful in
    the terminal regime where absolute log-likelihood values no longer
    resolve the step. Convergence is declared when |K| <= tol_k, or near the
    sphere when the tangential part of K is below tol_k and K points outward
    (K . r_hat >= -tol_k). A converged boundary iterate is reported at radius
    exactly 1 whenever that does not lower the likelihood; residuals are
    always quoted at the last interior iterate.

    Non-convergence is reported through the result, never raised.
    """
    opts = options if options is not None else SolverOptions()
    directions, frequencies, budgets = _records_arrays(records)
    directions_t = np.ascontiguousarray(directions.T)
    weights = budgets / budgets.sum()
    coef_plus = 0.5 * budgets * (1.0 + frequencies)
    coef_minus = 0.5 * budgets * (1.0 - frequencies)
    has_plus = coef_plus > 0.0
    has_minus = coef_minus > 0.0
    all_counts_mixed = bool(has_plus.all() and has_minus.all())
    radius_cap = 1.0 - opts.ball_margin
    boundary_radius = 1.0 - 2.0 * opts.ball_margin
    sqrt = np.sqrt

    def loglik_delta(point, base_plus, base_minus, candidate):
        # logL(candidate) - logL(point). The displacement is exact because
        # consecutive iterates are nearby representables, so each term is
        # log1p of a relatively accurate small ratio and the sign of the
        # change is trusted far below the resolution of absolute values.
        du = directions @ (candidate - point)
        if all_counts_mixed:
            return float(np.log1p(du / base_plus) @ coef_plus
                         + np.log1p(-du / base_minus) @ coef_minus)
        with np.errstate(divide="ignore", invalid="ignore"):
            term_plus = np.where(has_plus, coef_plus * np.log1p(du / base_plus), 0.0)
            term_minus = np.where(has_minus, coef_minus * np.log1p(-du / base_minus), 0.0)
        return float((term_plus + term_minus).sum())

    r = np.zeros(3)
    u = directions @ r
    ll = 0.0  # log-likelihood at the origin is exactly zero
    ll_trace = [ll]
    r_trace = [(0.0, 0.0, 0.0)]
    iterations = 0

    while True:
        base_plus = 1.0 + u
        base_minus = 1.0 - u
        factor_plus = coef_plus / base_plus
        factor_minus = coef_minus / base_minus
        # Same weighted R/K as _r_and_k, using N(1+-X)/2 = budget * weight-free
        # count exponents; dividing by the total budget restores the weights.
        scale = 1.0 / budgets.sum()
        r_value = float(np.sum(factor_plus + factor_minus)) * scale
        k_vector = (directions_t @ (factor_plus - factor_minus)) * scale
        norm_r = sqrt(float(r @ r))
        on_boundary = norm_r >= boundary_radius
        abs_k = sqrt(float(k_vector @ k_vector))
        if on_boundary and norm_r > 0.0:
            r_hat = r / norm_r
            k_parallel = float(k_vector @ r_hat)
            k_tangential = k_vector - k_parallel * r_hat
            k_residual = sqrt(float(k_tangential @ k_tangential))
            converged = abs_k <= opts.tol_k or (
                k_residual <= opts.tol_k and k_parallel >= -opts.tol_k
            )
        else:
            k_residual = abs_k
            converged = abs_k <= opts.tol_k
        if converged or iterations >= opts.max_iterations:
            break

        step = r_value * r + k_vector - r
        lam = 1.0
        accepted = False
        while lam >= opts.damping_min:
            candidate = r + lam * step
            cn = sqrt(float(candidate @ candidate))
            if cn > radius_cap:
                candidate = candidate * (radius_cap / cn)
            delta = loglik_delta(r, base_plus, base_minus, candidate)
            if delta >= 0.0:
                accepted = True
                break
            lam *= 0.5
        if not accepted:
            # No admissible ascent step above the damping floor; we are at
            # the numerical resolution of the likelihood surface.
            break
        r = candidate
        u = directions @ r
        ll = ll + delta
        iterations += 1
        ll_trace.append(ll)
        r_trace.append((float(r[0]), float(r[1]), float(r[2])))

    r_report = r
    if converged and on_boundary and norm_r > 0.0:
        # Pure-state solution: report it on the sphere itself unless the
        # radial push-out would lose likelihood.
        r_hat = r / norm_r
        delta = loglik_delta(r, base_plus, base_minus, r_hat)
        if delta >= 0.0:
            r_report = r_hat
            ll = ll + delta
            ll_trace.append(ll)
            r_trace.append((float(r_hat[0]), float(r_hat[1]), float(r_hat[2])))

    u_report = np.clip(directions @ r_report, -1.0, 1.0)
    return ReconstructionResult(
        r_est=(float(r_report[0]), float(r_report[1]), float(r_report[2])),
        iterations=iterations,
        converged=bool(converged),
        boundary=bool(on_boundary),
        log_likelihood=float(_batch_log_likelihood(u_report, frequencies, budgets)),
        k_residual=k_residual,
        r_value=r_value,
        ll_trace=tuple(ll_trace),
        r_trace=tuple(r_trace),
    )


@functools.lru_cache(maxsize=2)
def _grid_points(resolution: float):
    """Lattice of the cube [-1, 1]^3 with out-of-ball points projected onto
    the sphere; cached because the geometry is data-independent."""
    half_count = int(np.floor(1.0 / resolution + 1e-9))
    axis = np.arange(-half_count, half_count + 1, dtype=float) * resolution
    g1, g2, g3 = np.meshgrid(axis, axis, axis, indexing="ij")
    points = np.column_stack([g1.ravel(), g2.ravel(), g3.ravel()])
    norms = np.linalg.norm(points, axis=1)
    outside = norms > 1.0
    points[outside] /= norms[outside, None]
    norms = np.minimum(norms, 1.0)
    points.setflags(write=False)
    norms.setflags(write=False)
    return points, norms


def grid_oracle(records, resolution: float) -> np.ndarray:
    """Brute-force likelihood argmax over a cubic lattice in the unit ball.

    Lattice points of spacing `resolution` inside the cube [-1, 1]^3 are
    kept; points outside the ball are projected radially onto the sphere so
    boundary maximizers stay reachable. Ties are broken by smallest |r|,
    then lexicographically, making the oracle deterministic on likelihood
    plateaus.
    """
    if not (0.0 < resolution <= 0.5):
        raise ValueError(f"resolution must lie in (0, 0.5], got {resolution!r}")
    directions, frequencies, budgets = _records_arrays(records)
    points, norms = _grid_points(float(resolution))

    # Columns with a zero count exponent are dropped entirely: they
    # contribute exactly 0 and would otherwise turn log(0) into 0 * inf.
    coef_plus = 0.5 * budgets * (1.0 + frequencies)
    coef_minus = 0.5 * budgets * (1.0 - frequencies)
    u = np.clip(points @ directions.T, -1.0, 1.0)
    ll = np.zeros(len(points))
    keep_plus = coef_plus > 0.0
    keep_minus = coef_minus > 0.0
    with np.errstate(divide="ignore"):  # log(0) = -inf at projected sphere points
        if np.any(keep_plus):
            ll += np.log1p(u[:, keep_plus]) @ coef_plus[keep_plus]
        if np.any(keep_minus):
            ll += np.log1p(-u[:, keep_minus]) @ coef_minus[keep_minus]

    ties = np.flatnonzero(ll == ll.max())
    order = np.lexsort((points[ties, 2], points[ties, 1], points[ties, 0], norms[ties]))
    return points[ties[order[0]]].copy()


def overcompleteness_defect(records, rho) -> float:
    """Worst violation of the naive probability matching Tr(rho P/M) = (1 +- X)/(2M).

    Zero only when a single state reproduces every observed frequency
    exactly; generically positive for fluctuating overcomplete data.
    """
    m = check_density_matrix(rho)
    directions, frequencies, _ = _records_arrays(records)
    n_settings = len(directions)
    worst = 0.0
    for j in range(n_settings):
        for sign in (1, -1):
            projector = projector_from_direction(directions[j], sign)
            predicted = float(np.real(np.trace(m @ projector))) / n_settings
            target = (1.0 + sign * frequencies[j]) / (2.0 * n_settings)
            worst = max(worst, abs(predicted - target))
    return worst

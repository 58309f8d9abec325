"""Renormalized probability-operator measure at the extremal state.

Dividing each analyzer projector by the probability the extremal state
assigns to it, and weighting by the observed frequency, turns the collection
of incompatible Stern-Gerlach measurements into a single generalized
measurement: the rescaled elements sum to the identity exactly when the
state is the likelihood extremum (on the full space for mixed extrema, on
the state's own ray for pure ones), and their expectation values reproduce
the observed frequencies identically. The closure defect is therefore a
direct witness of extremality.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .algebra import IDENTITY, check_density_matrix, projector_from_direction
from .estimator import _records_arrays

__all__ = [
    "DELTA_POM",
    "RANK_EIG_THRESHOLD",
    "SingularRenormalizationError",
    "RenormalizedElement",
    "build_renormalized_pom",
    "closure_defect",
    "expectation_identity_defect",
    "diagnostic_report",
]

# Renormalization denominators at or below this are treated as zero.
DELTA_POM = 1e-12
# Smallest eigenvalue above this marks the state as full rank (interior).
RANK_EIG_THRESHOLD = 1e-9


class SingularRenormalizationError(ValueError):
    """A projector has vanishing probability but a nonzero observed frequency."""


@dataclass(frozen=True, eq=False)
class RenormalizedElement:
    """One POM element: a nonnegative multiple of a rank-1 projector."""

    op: np.ndarray
    setting_index: int
    sign: int


def build_renormalized_pom(records, rho_e) -> list[RenormalizedElement]:
    """Elements (j, +-): w_j (1 +- X_j) / (2 <+-a_j|rho_e|+-a_j>) * |+-a_j><+-a_j|.

    Weights w_j = N_j / sum(N) reduce to 1/M for equal budgets, the normative
    case. A vanishing denominator is legal only when the matching count is
    zero (X_j = -+1 with the state pinned on the opposite pole); the element
    is then the zero matrix. A vanishing denominator with particles actually
    counted raises SingularRenormalizationError.
    """
    rho = check_density_matrix(rho_e)
    directions, frequencies, budgets = _records_arrays(records)
    weights = budgets / budgets.sum()
    elements = []
    for j in range(len(directions)):
        for sign in (1, -1):
            projector = projector_from_direction(directions[j], sign)
            denom = float(np.real(np.trace(rho @ projector)))
            count_factor = 1.0 + sign * frequencies[j]
            if denom <= DELTA_POM:
                if count_factor == 0.0:
                    op = np.zeros((2, 2), dtype=complex)
                else:
                    raise SingularRenormalizationError(
                        f"setting {j} sign {sign:+d}: probability {denom:.3g} at the "
                        f"extremal state but observed weight {count_factor:.3g}"
                    )
            else:
                op = (weights[j] * count_factor / (2.0 * denom)) * projector
            elements.append(RenormalizedElement(op=op, setting_index=j, sign=sign))
    return elements


def _element_sum(pom) -> np.ndarray:
    total = np.zeros((2, 2), dtype=complex)
    for element in pom:
        total = total + element.op
    return total


def closure_defect(pom, rho_e) -> float:
    """Deviation of the summed POM from the identity it must reproduce.

    Full-rank extremal state: max-entry norm of (sum - identity). Pure
    extremal state |e><e|: the identity is reproduced on the ray only, so the
    defect is |<e| sum |e> - 1|.
    """
    rho = check_density_matrix(rho_e)
    total = _element_sum(pom)
    eigenvalues, eigenvectors = np.linalg.eigh(0.5 * (rho + rho.conj().T))
    if float(eigenvalues.min()) > RANK_EIG_THRESHOLD:
        return float(np.max(np.abs(total - IDENTITY)))
    ray = eigenvectors[:, int(np.argmax(eigenvalues))]
    return float(abs(complex(ray.conj() @ total @ ray) - 1.0))


def expectation_identity_defect(rho_e, pom, records) -> float:
    """Worst |Tr(rho_e element) - w_j (1 +- X_j)/2|; zero by construction."""
    rho = check_density_matrix(rho_e)
    _, frequencies, budgets = _records_arrays(records)
    weights = budgets / budgets.sum()
    worst = 0.0
    for element in pom:
        j = element.setting_index
        target = weights[j] * (1.0 + element.sign * frequencies[j]) / 2.0
        value = float(np.real(np.trace(rho @ element.op)))
        worst = max(worst, abs(value - target))
    return worst


def diagnostic_report(records, rho_e) -> dict:
    """Closure and expectation defects plus rank, as a JSON-ready dict."""
    rho = check_density_matrix(rho_e)
    pom = build_renormalized_pom(records, rho)
    eigenvalues = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))
    rank = 2 if float(eigenvalues.min()) > RANK_EIG_THRESHOLD else 1
    return {
        "closure_defect": closure_defect(pom, rho),
        "expectation_defect": expectation_identity_defect(rho, pom, records),
        "rank": rank,
        "elements": len(pom),
    }

"""Dense continuous-CRF core: assembly, inference, likelihood, gradients.

The model couples per-node score vectors through a quadratic energy

    E(Y) = sum_p ||Y_p - Z_p||^2 + 1/2 sum_{p != q} R[p,q] ||Y_p - Y_q||^2
         = tr(Y' A0 Y) - 2 tr(Z' Y) + tr(Z' Z),

with A0 = I + D - R, D = diag(row sums of R).  For symmetric nonnegative
R with zero diagonal, A0 is strictly diagonally dominant, hence positive
definite with every eigenvalue at least 1, so the labelling that
minimizes the energy is the unique solution of A0 Y = Z.  The same
factorization yields the exact negative log-density

    nll(Y) = tr(Y' A0 Y) - 2 tr(Z' Y) + tr(Z' A0^-1 Z)
             - (m/2) logdet(A0) + (n m / 2) log(pi),

and closed-form reverse-mode rules for both the likelihood and the
inference map.  Label dimensions never mix: every operation works on the
n x n system blockwise, one solve per score column.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .gridio import write_f32grid

_SYMMETRY_TOL = 1e-12


@dataclass
class PrecisionSystem:
    """Assembled precision matrix with its Cholesky factor and log-det."""

    a0: np.ndarray
    chol: tuple
    logdet_a0: float

    @property
    def n(self) -> int:
        return self.a0.shape[0]

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return cho_solve(self.chol, rhs)


def assemble(affinity: np.ndarray) -> PrecisionSystem:
    """Build and factorize A0 = I + D - R from an affinity matrix R.

    R must be square, finite, nonnegative, symmetric, and zero on the
    diagonal; anything else is rejected.  Factorization failure would
    contradict the positive-definiteness guarantee and is surfaced as a
    hard internal error.
    """
    r = np.asarray(affinity, dtype=np.float64)
    if r.ndim != 2 or r.shape[0] != r.shape[1]:
        raise ValueError(f"affinity must be square, got shape {r.shape}")
    if not np.isfinite(r).all():
        raise ValueError("affinity entries must be finite")
    if r.min() < 0.0:
        raise ValueError("affinity entries must be nonnegative")
    scale = max(1.0, float(np.abs(r).max()))
    if np.abs(r - r.T).max() > _SYMMETRY_TOL * scale:
        raise ValueError("affinity must be symmetric")
    if r.shape[0] > 0 and np.abs(np.diagonal(r)).max() > _SYMMETRY_TOL * scale:
        raise ValueError("affinity diagonal must be zero")

    r = 0.5 * (r + r.T)
    np.fill_diagonal(r, 0.0)
    a0 = -r
    diag = 1.0 + r.sum(axis=1)
    a0[np.diag_indices_from(a0)] = diag
    try:
        factor = cho_factor(a0, lower=True)
    except LinAlgError as err:  # unreachable for valid input
        raise RuntimeError("precision matrix lost positive definiteness") from err
    logdet = 2.0 * float(np.log(np.diagonal(factor[0])).sum())
    return PrecisionSystem(a0, factor, logdet)


def _check_scores(system: PrecisionSystem, scores: np.ndarray, name: str) -> np.ndarray:
    arr = np.asarray(scores, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != system.n:
        raise ValueError(f"{name} must be ({system.n}, m), got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} must be finite")
    return arr


def map_infer(system: PrecisionSystem, scores: np.ndarray) -> np.ndarray:
    """Energy-minimizing labelling: the unique solution of A0 Y = Z."""
    return system.solve(_check_scores(system, scores, "scores"))


def energy(system: PrecisionSystem, scores: np.ndarray, labelling: np.ndarray) -> float:
    """Quadratic labelling energy tr(Y'A0 Y) - 2 tr(Z'Y) + tr(Z'Z)."""
    z = _check_scores(system, scores, "scores")
    y = _check_scores(system, labelling, "labelling")
    if y.shape != z.shape:
        raise ValueError(f"labelling {y.shape} does not match scores {z.shape}")
    return float((y * (system.a0 @ y)).sum() - 2.0 * (z * y).sum() + (z * z).sum())


def nll(system: PrecisionSystem, scores: np.ndarray, targets: np.ndarray) -> float:
    """Exact negative log-density of the targets under the model."""
    z = _check_scores(system, scores, "scores")
    y = _check_scores(system, targets, "targets")
    if y.shape != z.shape:
        raise ValueError(f"targets {y.shape} do not match scores {z.shape}")
    m = z.shape[1]
    w = system.solve(z)
    quad = float((y * (system.a0 @ y)).sum() - 2.0 * (z * y).sum() + (z * w).sum())
    return quad - 0.5 * m * system.logdet_a0 + 0.5 * system.n * m * np.log(np.pi)


def _affinity_grad_from_precision(da0: np.ndarray) -> np.ndarray:
    # A0 = I + D - R couples each symmetric affinity pair to two diagonal
    # and two off-diagonal precision entries
    diag = np.diagonal(da0)
    daff = diag[:, None] + diag[None, :] - da0 - da0.T
    np.fill_diagonal(daff, 0.0)
    return daff


def nll_backward(
    system: PrecisionSystem, scores: np.ndarray, targets: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of the negative log-density w.r.t. scores and affinity.

    The affinity gradient accounts for the degree matrix's dependence on
    R: entry [p, q] is the sensitivity to a symmetric perturbation of the
    pair R[p,q] = R[q,p].
    """
    z = _check_scores(system, scores, "scores")
    y = _check_scores(system, targets, "targets")
    m = z.shape[1]
    w = system.solve(z)
    dscores = 2.0 * (w - y)
    a0_inv = system.solve(np.eye(system.n))
    da0 = y @ y.T - w @ w.T - 0.5 * m * a0_inv
    return dscores, _affinity_grad_from_precision(da0)


def map_backward(
    system: PrecisionSystem, labelling: np.ndarray, dlabelling: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Implicit differentiation through the solve A0 Y = Z.

    Given dL/dY at the inferred labelling, returns (dL/dZ, dL/dR) without
    ever re-solving the forward system from scratch: one extra solve with
    the incoming gradient suffices.
    """
    y = _check_scores(system, labelling, "labelling")
    g = system.solve(_check_scores(system, dlabelling, "dlabelling"))
    da0 = -g @ y.T
    da0 = 0.5 * (da0 + da0.T)
    return g, _affinity_grad_from_precision(da0)


def dump_state(directory, affinity, system: PrecisionSystem, scores, labelling) -> None:
    """Write (R, A0, Z, Yhat) as .f32grid files for offline inspection."""
    os.makedirs(directory, exist_ok=True)
    write_f32grid(os.path.join(directory, "affinity.f32grid"), affinity)
    write_f32grid(os.path.join(directory, "precision.f32grid"), system.a0)
    write_f32grid(os.path.join(directory, "scores.f32grid"), scores)
    write_f32grid(os.path.join(directory, "map.f32grid"), labelling)

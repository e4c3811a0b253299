"""
Training reflection design: pick the unit-modulus L x B matrix V so that the
equivalent dictionary D = V^H A_R has a Gram matrix close to B * I.

The design works in the eigenbasis of A_R A_R^H = U_R diag(gamma) U_R^H with
Q = diag(gamma) U_R^H V, and replaces one column of Q at a time by the best
rank-one fit of E_b = B diag(gamma) - sum_{i != b} q_i q_i^H before projecting
back onto unit modulus.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import scipy.linalg as sla

from src.utils.errors import HarnessIOError, InvalidArgumentError

logger = logging.getLogger(__name__)


@dataclass
class CoherenceReport:
    mu: float
    worst_pair: Tuple[int, int]
    gram_offdiag_energy: float


@dataclass
class OptimizedReflections:
    V: np.ndarray
    # (before update, after eigen update, after unit-modulus projection) per column update
    surrogate_trace: List[Tuple[float, float, float]] = field(default_factory=list)
    skipped_updates: int = 0


def mutual_coherence(D: np.ndarray) -> CoherenceReport:
    """Largest normalised inner-product magnitude between two distinct columns of D."""
    if D.ndim != 2 or D.shape[1] < 2:
        raise InvalidArgumentError(f"coherence needs at least two columns, got shape {D.shape}")
    norms = np.linalg.norm(D, axis=0)
    if np.any(norms == 0):
        raise InvalidArgumentError(f"column {int(np.argmin(norms))} of the dictionary is zero")

    Dn = D / norms[None, :]
    gram = np.abs(Dn.conj().T @ Dn)
    np.fill_diagonal(gram, 0.0)
    i, j = np.unravel_index(np.argmax(gram), gram.shape)
    return CoherenceReport(
        mu=float(gram[i, j]),
        worst_pair=(int(min(i, j)), int(max(i, j))),
        gram_offdiag_energy=float(np.sum(gram**2)),
    )


def projection_unit_modulus(q_tilde: np.ndarray, U_R: np.ndarray) -> np.ndarray:
    """Closest unit-modulus v to U_R q_tilde; a zero entry gets phase 0."""
    return np.exp(1j * np.angle(U_R @ q_tilde))


def design_surrogate(gamma: np.ndarray, Q: np.ndarray, B: int) -> float:
    """||B diag(gamma) - Q Q^H||_F^2."""
    residual = -Q @ Q.conj().T
    residual[np.diag_indices_from(residual)] += B * gamma
    return float(np.linalg.norm(residual) ** 2)


def optimize_reflections(
    A_R: np.ndarray,
    B: int,
    n_sweeps: int = 3,
    rng: Optional[np.random.Generator] = None,
    V_init: Optional[np.ndarray] = None,
    tol: float = 1e-10,
) -> OptimizedReflections:
    """
    Sequential rank-one redesign of the reflection columns, ``n_sweeps`` passes over b = 1..B.
    Starts from random phases unless ``V_init`` is given.
    """
    if B < 1:
        raise InvalidArgumentError(f"need at least one sub-frame, got B={B}")
    if not np.any(A_R):
        raise InvalidArgumentError("angular dictionary is identically zero")
    L = A_R.shape[0]

    if V_init is None:
        rng = rng if rng is not None else np.random.default_rng()
        V = np.exp(1j * rng.uniform(0.0, 2.0 * np.pi, (L, B)))
    else:
        V = np.array(V_init, dtype=complex)
        if V.shape != (L, B):
            raise InvalidArgumentError(f"initial reflections must be {L}x{B}, got {V.shape}")

    gamma, U_R = sla.eigh(A_R @ A_R.conj().T)
    gamma, U_R = np.maximum(gamma[::-1], 0.0), U_R[:, ::-1]
    # components with ~zero gamma cannot be recovered from q_b and keep their value
    positive = gamma > tol * gamma[0]

    Q_tilde = U_R.conj().T @ V
    Q = gamma[:, None] * Q_tilde
    result = OptimizedReflections(V=V)

    for sweep in range(n_sweeps):
        for b in range(B):
            before = design_surrogate(gamma, Q, B)
            E_b = -Q @ Q.conj().T + np.outer(Q[:, b], Q[:, b].conj())
            E_b[np.diag_indices_from(E_b)] += B * gamma

            # full decomposition: an index subset can come back empty on a degenerate spectrum
            xi, u = sla.eigh(E_b)
            xi_top, u_top = xi[-1], u[:, -1]
            if xi_top <= 0:
                result.skipped_updates += 1
                logger.debug(f"sweep {sweep}: top eigenvalue of E_{b} is {xi_top:.3e}, column kept")
                continue
            q_b = np.sqrt(xi_top) * u_top
            eigen_fit = float(np.linalg.norm(E_b - np.outer(q_b, q_b.conj())) ** 2)

            q_tilde = Q_tilde[:, b].copy()
            q_tilde[positive] = q_b[positive] / gamma[positive]
            V[:, b] = projection_unit_modulus(q_tilde, U_R)

            Q_tilde[:, b] = U_R.conj().T @ V[:, b]
            Q[:, b] = gamma * Q_tilde[:, b]
            result.surrogate_trace.append((before, eigen_fit, design_surrogate(gamma, Q, B)))

    if result.skipped_updates:
        logger.warning(f"reflection design skipped {result.skipped_updates} column updates")
    return result


def save_reflections(V: np.ndarray, path: str) -> None:
    try:
        np.save(path, V)
    except OSError as e:
        raise HarnessIOError(f"cannot write reflection matrix ({e})", path) from e


def load_reflections(path: str) -> np.ndarray:
    try:
        V = np.load(path)
    except OSError as e:
        raise HarnessIOError(f"cannot read reflection matrix ({e})", path) from e
    if V.ndim != 2 or not np.allclose(np.abs(V), 1.0, atol=1e-9):
        raise InvalidArgumentError(f"{path} does not hold a unit-modulus reflection matrix")
    return V

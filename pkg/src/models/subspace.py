"""
First step of S-MJCE: estimate the common AoD subspace at the BS from the
sample covariance of the raw training blocks and project the de-spread
observations onto it.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as sla

from src.utils.errors import InvalidArgumentError

logger = logging.getLogger(__name__)

GAP_TOLERANCE = 1e-12


@dataclass
class SubspaceEstimate:
    S_par: np.ndarray  # M x N_hat, orthonormal columns
    N_hat: int
    eigvals: np.ndarray  # length M, descending
    degenerate_gap: bool = False


def sample_covariance(Y_blocks: np.ndarray) -> np.ndarray:
    """
    C = Y Y^H / (BT) with Y the M x BT concatenation of the B x M x T blocks
    """
    if Y_blocks.ndim != 3 or Y_blocks.shape[0] == 0:
        raise InvalidArgumentError(f"expected a non-empty B x M x T stack, got shape {Y_blocks.shape}")
    B, M, T = Y_blocks.shape
    Y = Y_blocks.transpose(1, 0, 2).reshape(M, B * T)
    C = Y @ Y.conj().T / (B * T)
    # exact Hermitian symmetry, the product is only symmetric up to rounding
    return (C + C.conj().T) / 2


def mdl_scores(eigvals: np.ndarray, M: int, B: int, T: int) -> np.ndarray:
    """MDL score for every candidate order n = 1..M-1 (index n-1); +inf where a tail eigenvalue is not positive."""
    theta = np.clip(np.asarray(eigvals, dtype=float)[:M], 0.0, None)
    N = B * T
    scores = np.full(max(M - 1, 0), np.inf)
    for n in range(1, M):
        tail = theta[n:]
        if np.any(tail <= 0):
            continue
        # log of (geometric mean / arithmetic mean) of the tail, computed in log domain
        log_ratio = np.mean(np.log(tail)) - np.log(np.mean(tail))
        scores[n - 1] = -(M - n) * N * log_ratio + 2 * n * (2 * M - n)
    return scores


def mdl_order(eigvals: np.ndarray, M: int, B: int, T: int) -> int:
    """Model order minimising the MDL score over n in {1, ..., M-1}."""
    if M < 2:
        return 1
    scores = mdl_scores(eigvals, M, B, T)
    if not np.any(np.isfinite(scores)):
        logger.warning("every MDL candidate is infeasible, falling back to order 1")
        return 1
    return int(np.argmin(scores)) + 1


def estimate_subspace(Cov: np.ndarray, N_hat: int) -> SubspaceEstimate:
    """Eigenvectors of the N_hat largest eigenvalues of the covariance."""
    M = Cov.shape[0]
    if not 1 <= N_hat <= M:
        raise InvalidArgumentError(f"subspace dimension must lie in [1, {M}], got {N_hat}")
    eigvals, eigvecs = sla.eigh(Cov)
    eigvals, eigvecs = np.clip(eigvals[::-1], 0.0, None), eigvecs[:, ::-1]

    degenerate = False
    if N_hat < M and eigvals[N_hat - 1] - eigvals[N_hat] < GAP_TOLERANCE * max(eigvals[0], GAP_TOLERANCE):
        degenerate = True
        logger.warning(f"eigenvalues {N_hat} and {N_hat + 1} coincide, the subspace is not unique")

    return SubspaceEstimate(
        S_par=eigvecs[:, :N_hat], N_hat=N_hat, eigvals=eigvals, degenerate_gap=degenerate
    )


def project(Ytil_k: np.ndarray, S_par: np.ndarray) -> np.ndarray:
    """
    Ybar_k = S_par^H Ytil_k, i.e. Ybar_k^H = Ytil_k^H (S_par^H)^+ for orthonormal S_par.
    Works on a single M x B block or a K x M x B stack.
    """
    return S_par.conj().T @ Ytil_k


def estimate_common_subspace(Y_blocks: np.ndarray, nf_override: Optional[int] = None) -> SubspaceEstimate:
    """Covariance, model order (MDL unless overridden) and eigenbasis in one call."""
    B, M, T = Y_blocks.shape
    Cov = sample_covariance(Y_blocks)
    if nf_override is not None:
        N_hat = min(nf_override, M)
    else:
        N_hat = mdl_order(np.clip(sla.eigvalsh(Cov)[::-1], 0.0, None), M, B, T)
    logger.debug(f"AoD subspace order {N_hat} of {M}")
    return estimate_subspace(Cov, N_hat)

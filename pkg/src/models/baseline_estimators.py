"""
Per-user reference estimators: least squares, binary (one element on) reflection,
OMP on the vectorised problem (SMV), SOMP on the row-sparse problem (MMV) and
the genie-aided LS that is told the true angles.

The SMV/MMV estimators take an optional AoD basis ``S_par``; with it they run on
the projected observations and give the S-SMV / S-MMV variants.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np
import scipy.linalg as sla

from src.utils.channel_model import AngularDictionary, ChannelRealization, steering_matrix
from src.utils.config import SystemConfig
from src.utils.errors import RankDeficientError
from src.utils.metrics import nmse
from src.utils.training_protocol import TrainingDesign, generate_pilots, simulate_uplink

logger = logging.getLogger(__name__)

# stop greedy pursuits once the residual is this small relative to the data
RESIDUAL_FLOOR = 1e-24


@dataclass
class EstimateReport:
    G_hat: np.ndarray  # K x L x M
    nmse: Optional[float] = None
    support_sets: List[np.ndarray] = field(default_factory=list)
    iterations: int = 0
    wall_time: float = 0.0
    flags: Dict[str, Any] = field(default_factory=dict)
    diagnostics: Dict[str, Any] = field(default_factory=dict)

    def score(self, G_all: np.ndarray) -> "EstimateReport":
        self.nmse = nmse(self.G_hat, G_all)
        return self


@dataclass
class SparseRecovery:
    X: np.ndarray
    support: np.ndarray
    residual_energy: List[float]
    saturated: bool = False

    @property
    def iterations(self) -> int:
        return len(self.support)


def noise_floor(n_cols: int, B: int, noise_var: float, P: float, T: int) -> float:
    """Expected de-spread noise energy over an n_cols x B observation, e.g. M B noise_var / (PT)."""
    return n_cols * B * noise_var / (P * T)


def ls_estimate(Ytil_k: np.ndarray, V: np.ndarray) -> np.ndarray:
    """G_hat_k = (Ytil_k V^+)^H with V^+ = V^H (V V^H)^-1; needs rank(V) = L."""
    L, B = V.shape
    if B < L:
        raise RankDeficientError(f"LS needs B >= L sub-frames, got B={B}, L={L}")
    if np.linalg.matrix_rank(V) < L:
        raise RankDeficientError("V V^H is singular")
    # (V V^H) G_hat = V Ytil^H
    return sla.solve(V @ V.conj().T, V @ Ytil_k.conj().T, assume_a="her")


def ls_estimate_all(Ytil: np.ndarray, V: np.ndarray) -> EstimateReport:
    start = time.perf_counter()
    G_hat = np.stack([ls_estimate(Ytil_k, V) for Ytil_k in Ytil])
    return EstimateReport(G_hat=G_hat, iterations=1, wall_time=time.perf_counter() - start)


def binary_reflection_estimate(
    chan: ChannelRealization, cfg: SystemConfig, rng: np.random.Generator
) -> EstimateReport:
    """
    Re-run the training with one RIS element switched on per sub-frame (V = I_L, so B = L)
    and read the de-spread observations off directly.
    """
    start = time.perf_counter()
    L = cfg.L
    td = TrainingDesign(S=generate_pilots(cfg.K, cfg.T, cfg.P), V=np.eye(L, dtype=complex), P=cfg.P, noise_var=cfg.noise_var)
    received = simulate_uplink(chan, td, rng)
    G_hat = np.stack([ls_estimate(Ytil_k, td.V) for Ytil_k in received.Ytil])
    return EstimateReport(
        G_hat=G_hat,
        iterations=1,
        wall_time=time.perf_counter() - start,
        flags={"training_overhead": L},
    )


def omp_recover(
    Y: np.ndarray, D: np.ndarray, A_col: np.ndarray, eps: float, max_atoms: Optional[int] = None
) -> SparseRecovery:
    """
    OMP on vec(Y) = sum_ij X_ij vec(D_i A_col_j^H) without building the Kronecker dictionary.
    The correlation of atom (i, j) with the residual R is (D^H R A_col)_ij.
    """
    B, N = Y.shape
    G_r, G_c = D.shape[1], A_col.shape[1]
    if max_atoms is None:
        max_atoms = min(B * N, G_r * G_c)

    d_norms = np.linalg.norm(D, axis=0)
    c_norms = np.linalg.norm(A_col, axis=0)
    atom_norms = np.outer(d_norms, c_norms)
    usable = atom_norms > 0
    atom_norms[~usable] = 1.0

    y = Y.ravel()
    residual = Y.copy()
    energy = [float(np.linalg.norm(Y) ** 2)]
    floor = max(eps, RESIDUAL_FLOOR * energy[0])
    support: List[int] = []
    atoms: List[np.ndarray] = []
    coef = np.zeros(0, dtype=complex)

    while energy[-1] > floor and len(support) < max_atoms:
        corr = np.abs(D.conj().T @ residual @ A_col) / atom_norms
        corr[~usable] = -1.0
        corr.flat[support] = -1.0  # each atom at most once
        idx = int(np.argmax(corr))
        if corr.flat[idx] <= 0:
            break
        support.append(idx)
        i, j = divmod(idx, G_c)
        atoms.append(np.outer(D[:, i], A_col[:, j].conj()).ravel())
        Phi = np.stack(atoms, axis=1)
        coef = sla.lstsq(Phi, y)[0]
        residual = Y - (Phi @ coef).reshape(B, N)
        energy.append(float(np.linalg.norm(residual) ** 2))

    X = np.zeros((G_r, G_c), dtype=complex)
    X.flat[support] = coef
    return SparseRecovery(X=X, support=np.array(support, dtype=int), residual_energy=energy, saturated=len(support) >= max_atoms)


def somp_recover(Y: np.ndarray, D: np.ndarray, eps: float, normalize: bool = False) -> SparseRecovery:
    """
    SOMP for the row-sparse model Y = D X + noise. Each step picks the row i with the
    largest correlation energy ||D_i^H R||^2, divided by ||D_i||^2 when ``normalize``
    is set, and the residual is the projection of Y off the selected columns.
    """
    B, N = Y.shape
    G_r = D.shape[1]
    max_support = min(B, G_r)

    d_norms = np.linalg.norm(D, axis=0)
    usable = d_norms > 0
    d_energy = np.where(usable, d_norms**2, 1.0) if normalize else np.ones(G_r)

    residual = Y.copy()
    energy = [float(np.linalg.norm(Y) ** 2)]
    floor = max(eps, RESIDUAL_FLOOR * energy[0])
    support: List[int] = []
    coef = np.zeros((0, N), dtype=complex)

    while energy[-1] > floor and len(support) < max_support:
        scores = np.sum(np.abs(D.conj().T @ residual) ** 2, axis=1) / d_energy
        scores[~usable] = -1.0
        scores[support] = -1.0
        i = int(np.argmax(scores))
        if scores[i] <= 0:
            break
        support.append(i)
        D_sel = D[:, support]
        coef = sla.lstsq(D_sel, Y)[0]
        residual = Y - D_sel @ coef
        energy.append(float(np.linalg.norm(residual) ** 2))

    X = np.zeros((G_r, N), dtype=complex)
    X[support] = coef
    return SparseRecovery(X=X, support=np.array(support, dtype=int), residual_energy=energy, saturated=len(support) >= B)


def smv_omp_estimate(
    Ytil: np.ndarray,
    V: np.ndarray,
    dictionary: AngularDictionary,
    eps: float,
    S_par: Optional[np.ndarray] = None,
) -> EstimateReport:
    """
    OMP per user. Without ``S_par`` the column dictionary is A_T (SMV); with it the
    observations are projected first and the columns are the N_hat basis vectors (S-SMV).
    """
    start = time.perf_counter()
    A_R = dictionary.A_R
    D = V.conj().T @ A_R
    G_hat, supports, iterations, saturated = [], [], 0, False
    for Ytil_k in Ytil:
        if S_par is None:
            rec = omp_recover(Ytil_k.conj().T, D, dictionary.A_T, eps)
            G_hat.append(A_R @ rec.X @ dictionary.A_T.conj().T)
        else:
            rec = omp_recover(Ytil_k.conj().T @ S_par, D, np.eye(S_par.shape[1]), eps)
            G_hat.append(A_R @ rec.X @ S_par.conj().T)
        supports.append(rec.support)
        iterations = max(iterations, rec.iterations)
        saturated |= rec.saturated
    return EstimateReport(
        G_hat=np.stack(G_hat),
        support_sets=supports,
        iterations=iterations,
        wall_time=time.perf_counter() - start,
        flags={"saturated": saturated},
    )


def mmv_somp_estimate(
    Ytil: np.ndarray,
    V: np.ndarray,
    dictionary: AngularDictionary,
    eps: float,
    S_par: Optional[np.ndarray] = None,
) -> EstimateReport:
    """SOMP per user on Ytil_k^H (MMV), or on the projected Ytil_k^H S_par (S-MMV)."""
    start = time.perf_counter()
    A_R = dictionary.A_R
    D = V.conj().T @ A_R
    G_hat, supports, iterations, saturated = [], [], 0, False
    for Ytil_k in Ytil:
        Y = Ytil_k.conj().T if S_par is None else Ytil_k.conj().T @ S_par
        rec = somp_recover(Y, D, eps)
        G_k = A_R @ rec.X
        G_hat.append(G_k if S_par is None else G_k @ S_par.conj().T)
        supports.append(rec.support)
        iterations = max(iterations, rec.iterations)
        saturated |= rec.saturated
    if saturated:
        logger.debug("SOMP support reached B for at least one user")
    return EstimateReport(
        G_hat=np.stack(G_hat),
        support_sets=supports,
        iterations=iterations,
        wall_time=time.perf_counter() - start,
        flags={"saturated": saturated},
    )


def true_aod_subspace(chan: ChannelRealization, M: int) -> np.ndarray:
    """Orthonormal basis of the span of the true AoD steering vectors at the BS."""
    return sla.orth(steering_matrix(M, chan.aod_frequencies()))


def genie_ls_estimate(
    chan: ChannelRealization, Ytil: np.ndarray, V: np.ndarray, S_par_true: np.ndarray
) -> EstimateReport:
    """
    LS over the path gains only, given the true cascaded AoAs and AoDs. The data are
    projected onto the true AoD subspace; there are N_f * N_h unknowns per user.
    """
    start = time.perf_counter()
    L, M = chan.G.shape[1:]
    Vh = V.conj().T
    aod = chan.aod_frequencies()
    a_bs = steering_matrix(M, aod)
    a_bs_proj = S_par_true.conj().T @ a_bs  # N_hat x N_f
    cascaded = chan.cascaded_frequencies()

    G_hat = []
    for k, Ytil_k in enumerate(Ytil):
        Ybar_h = Ytil_k.conj().T @ S_par_true
        n_f, n_h = cascaded[k].shape
        if Ybar_h.size < n_f * n_h:
            raise RankDeficientError(
                f"genie LS has {Ybar_h.size} measurements for {n_f * n_h} unknown gains"
            )
        a_ris = [steering_matrix(L, cascaded[k, p]) for p in range(n_f)]  # each L x N_h
        atoms = [
            np.outer(Vh @ a_ris[p][:, q], a_bs_proj[:, p].conj()).ravel()
            for p in range(n_f)
            for q in range(n_h)
        ]
        Phi = np.stack(atoms, axis=1)
        gains, _, rank, _ = sla.lstsq(Phi, Ybar_h.ravel())
        if rank < Phi.shape[1]:
            logger.warning(f"genie LS system for user {k} has rank {rank} < {Phi.shape[1]}")
        G_k = np.zeros((L, M), dtype=complex)
        for idx, (p, q) in enumerate((p, q) for p in range(n_f) for q in range(n_h)):
            G_k += gains[idx] * np.outer(a_ris[p][:, q], a_bs[:, p].conj())
        G_hat.append(G_k)
    return EstimateReport(G_hat=np.stack(G_hat), iterations=1, wall_time=time.perf_counter() - start)

"""
Multi-user joint channel estimation on the projected observations.

Every user's cascaded channel is written as G_k = alpha_k A_R Xbar S_par^H with a
common row-sparse Xbar and a diagonal scaling alpha_k (alpha_1 = I). The solver
alternates between an iteratively reweighted update of Xbar, which minimises a
majoriser of the log-sum penalty, and an update of the alpha_k.

By default an alpha_k update moves towards the least-squares scaling only
until the user's fit reaches the expected noise energy of its block. Each
alpha_k has L unknowns, which is as many as or more than the user's B N_hat
observations at small B, so the plain least-squares scaling would fit the
noise. ``SolverConfig.alpha_step = "least-squares"`` takes the full step.

Objective::

    L(Xbar, alpha) = sum_i log(||xbar_i||^2 + varsigma)
                     + lambda * sum_k ||Ybar_k^H - V^H alpha_k A_R Xbar||_F^2
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import scipy.linalg as sla
from scipy.optimize import brentq

from src.models.baseline_estimators import EstimateReport, noise_floor
from src.utils.config import SolverConfig, SystemConfig
from src.utils.errors import DivergenceError, InitializationError, InvalidArgumentError

logger = logging.getLogger(__name__)

RIDGE = 1e-10
DIVERGENCE_TOLERANCE = 1e-8
ZERO_REFERENCE = 1e-12


@dataclass
class ReweightMatrix:
    """Diagonal of Lambda, entry i is 1 / (||xbar_i||^2 + varsigma)."""

    diag: np.ndarray

    @classmethod
    def from_xbar(cls, Xbar: np.ndarray, varsigma: float) -> "ReweightMatrix":
        return cls(diag=1.0 / (row_energy(Xbar) + varsigma))

    def matrix(self) -> np.ndarray:
        return np.diag(self.diag)


@dataclass
class XbarUpdate:
    Xbar: np.ndarray
    surrogate_trace: List[float]
    regularized: bool = False


@dataclass
class MjceState:
    Xbar: np.ndarray  # G_r x N_hat
    alphas: np.ndarray  # K x L, diagonals of alpha_k
    lam: float
    objective_trace: List[float] = field(default_factory=list)
    inner_traces: List[List[float]] = field(default_factory=list)
    inner_tol: float = 1e-6
    outer_tol: float = 1e-5
    max_inner: int = 30
    max_outer: int = 50
    flags: Dict[str, Any] = field(default_factory=dict)


def row_energy(Xbar: np.ndarray) -> np.ndarray:
    return np.sum(np.abs(Xbar) ** 2, axis=1)


def penalty_lambda(P: float, T: int, d: float, noise_var: float, G_r: int) -> float:
    """lambda = P T d / (noise_var ln G_r)."""
    if G_r <= 1:
        raise InvalidArgumentError(f"penalty weight needs G_r > 1, got {G_r}")
    if min(P, T, d, noise_var) <= 0:
        raise InvalidArgumentError("P, T, d and noise_var must all be positive")
    return P * T * d / (noise_var * np.log(G_r))


def sensing_operators(alphas: np.ndarray, V: np.ndarray, A_R: np.ndarray) -> np.ndarray:
    """Stack of V^H alpha_k A_R over users, (K B) x G_r."""
    Vh = V.conj().T
    return np.concatenate([Vh @ (alpha[:, None] * A_R) for alpha in alphas], axis=0)


def stacked_observations(Ybar_all: np.ndarray) -> np.ndarray:
    """Stack of Ybar_k^H over users, (K B) x N_hat."""
    return np.concatenate([Ybar_k.conj().T for Ybar_k in Ybar_all], axis=0)


def _fit(M: np.ndarray, Y: np.ndarray, Xbar: np.ndarray) -> float:
    return float(np.linalg.norm(Y - M @ Xbar) ** 2)


def objective(
    Xbar: np.ndarray,
    alphas: np.ndarray,
    Ybar_all: np.ndarray,
    V: np.ndarray,
    A_R: np.ndarray,
    lam: float,
    varsigma: float,
) -> float:
    penalty = float(np.sum(np.log(row_energy(Xbar) + varsigma)))
    return penalty + lam * _fit(sensing_operators(alphas, V, A_R), stacked_observations(Ybar_all), Xbar)


def surrogate(
    Xbar: np.ndarray, Xbar_t: np.ndarray, M: np.ndarray, Y: np.ndarray, lam: float, varsigma: float
) -> float:
    """Upper bound of the objective around Xbar_t (log linearised in the row energies), tight at Xbar = Xbar_t."""
    r_t = row_energy(Xbar_t) + varsigma
    r = row_energy(Xbar) + varsigma
    penalty = float(np.sum(r / r_t + np.log(r_t) - 1.0))
    return penalty + lam * _fit(M, Y, Xbar)


def weighted_ridge_solve(M: np.ndarray, Y: np.ndarray, weights: np.ndarray, lam: float) -> Tuple[np.ndarray, bool]:
    """
    argmin_X tr(X^H diag(1 / weights) X) + lam ||Y - M X||_F^2, i.e.
    X = (Lambda / lam + M^H M)^-1 M^H Y with Lambda = diag(1 / weights).

    The G_r x G_r normal equations are used when M is tall, otherwise the
    equivalent X = W M^H (M W M^H + I / lam)^-1 Y of measurement size.
    Returns the solution and whether a ridge fallback was needed.
    """
    n_meas, n_rows = M.shape
    Mh = M.conj().T
    try:
        if n_rows <= n_meas:
            A = Mh @ M
            A[np.diag_indices_from(A)] += 1.0 / (lam * weights)
            return sla.cho_solve(sla.cho_factor(A), Mh @ Y), False
        C = (M * weights[None, :]) @ Mh
        C[np.diag_indices_from(C)] += 1.0 / lam
        return weights[:, None] * (Mh @ sla.cho_solve(sla.cho_factor(C), Y)), False
    except np.linalg.LinAlgError:
        logger.warning("reweighted system is not positive definite, using a ridge solve")
        A = Mh @ M
        A[np.diag_indices_from(A)] += 1.0 / (lam * weights) + RIDGE * np.real(np.trace(A))
        return sla.lstsq(A, Mh @ Y)[0], True


def update_xbar(
    alphas: np.ndarray,
    Ybar_all: np.ndarray,
    V: np.ndarray,
    A_R: np.ndarray,
    lam: float,
    varsigma: float,
    Xbar_init: np.ndarray,
    max_inner: int = 30,
    tol: float = 1e-6,
) -> XbarUpdate:
    """
    Iteratively reweighted update of Xbar for fixed alphas. The trace starts with the
    objective at ``Xbar_init`` and then holds the surrogate value after each solve.
    """
    if lam <= 0:
        raise InvalidArgumentError(f"penalty weight must be positive, got {lam}")
    M = sensing_operators(alphas, V, A_R)
    Y = stacked_observations(Ybar_all)

    Xbar = np.array(Xbar_init, dtype=complex)
    penalty = float(np.sum(np.log(row_energy(Xbar) + varsigma)))
    trace = [penalty + lam * _fit(M, Y, Xbar)]
    regularized = False

    for _ in range(max_inner):
        weights = row_energy(Xbar) + varsigma
        Xbar_next, fallback = weighted_ridge_solve(M, Y, weights, lam)
        regularized |= fallback
        trace.append(surrogate(Xbar_next, Xbar, M, Y, lam, varsigma))
        Xbar = Xbar_next
        if abs(trace[-2] - trace[-1]) < tol * max(abs(trace[-2]), np.finfo(float).tiny):
            break
    return XbarUpdate(Xbar=Xbar, surrogate_trace=trace, regularized=regularized)


def alpha_system(Xbar: np.ndarray, V: np.ndarray, A_R: np.ndarray) -> np.ndarray:
    """
    Columns of (A_R Xbar)^T kron V^H that meet the diagonal of alpha_k: column l is
    vec(V^H[:, l] (A_R Xbar)[l, :]), (B N_hat) x L.
    """
    Z = A_R @ Xbar  # L x N_hat
    Vh = V.conj().T  # B x L
    B, N_hat = Vh.shape[0], Z.shape[1]
    return np.einsum("bl,ln->bnl", Vh, Z).reshape(B * N_hat, A_R.shape[0])


def _residual_energy(H: np.ndarray, z: np.ndarray, alpha: np.ndarray) -> float:
    r = z - H @ alpha
    return float(np.vdot(r, r).real)


def update_alpha(Xbar: np.ndarray, Ybar_k: np.ndarray, V: np.ndarray, A_R: np.ndarray) -> Tuple[np.ndarray, bool]:
    """
    Least-squares diagonal scaling for one user with Xbar fixed.
    Returns the diagonal and whether a ridge term was needed.
    """
    H = alpha_system(Xbar, V, A_R)
    z = Ybar_k.conj().T.ravel()

    if np.linalg.matrix_rank(H) >= H.shape[1]:
        return sla.lstsq(H, z)[0], False
    gram = H.conj().T @ H
    ridge = RIDGE * max(np.real(np.trace(gram)), np.finfo(float).tiny)
    gram[np.diag_indices_from(gram)] += ridge
    return sla.solve(gram, H.conj().T @ z, assume_a="her"), True


def update_alpha_to_noise_floor(
    Xbar: np.ndarray,
    Ybar_k: np.ndarray,
    V: np.ndarray,
    A_R: np.ndarray,
    alpha_prev: np.ndarray,
    eps: float,
) -> Tuple[np.ndarray, bool]:
    """
    Scaling update that stops once the user's fit reaches ``eps``, the expected noise
    energy of its projected block.

    Returns ``alpha_prev`` when it already fits to within eps, the least-squares
    scaling when even that leaves more than eps, and otherwise the scaling closest
    to ``alpha_prev`` whose fit equals eps. The last one is a ridge step
    alpha_prev + (H^H H + mu I)^-1 H^H r with mu found on the SVD of H.
    When B N_hat <= L the least-squares scaling fits the noise exactly, and
    stopping at eps keeps it from doing so.
    """
    H = alpha_system(Xbar, V, A_R)
    z = Ybar_k.conj().T.ravel()
    r0 = z - H @ alpha_prev
    fit_prev = float(np.vdot(r0, r0).real)
    if fit_prev <= eps:
        return np.array(alpha_prev, dtype=complex), False

    candidate, ridge = update_alpha(Xbar, Ybar_k, V, A_R)
    fit_ls = _residual_energy(H, z, candidate)
    if fit_ls >= fit_prev:
        return np.array(alpha_prev, dtype=complex), ridge
    if fit_ls >= eps:
        return candidate, ridge

    U, s, Wh = sla.svd(H, full_matrices=False)
    c = U.conj().T @ r0
    c2 = np.abs(c) ** 2
    outside = max(fit_prev - float(np.sum(c2)), 0.0)
    s2 = s**2

    def excess(log_mu: float) -> float:
        mu = np.exp(log_mu)
        return outside + float(np.sum(c2 * (mu / (s2 + mu)) ** 2)) - eps

    centre = np.log(max(s2[0], np.finfo(float).tiny))
    lo, hi = centre - 40.0, centre + 40.0
    if excess(lo) >= 0.0 or excess(hi) <= 0.0:
        return candidate, ridge
    mu = np.exp(brentq(excess, lo, hi, xtol=1e-10))
    return alpha_prev + Wh.conj().T @ (s / (s2 + mu) * c), ridge


def init_alpha(Ghat_init_all: np.ndarray) -> np.ndarray:
    """
    Diagonal l of alpha_k is the mean over BS antennas of Ghat_k[l, m] / Ghat_1[l, m],
    skipping entries where the reference is ~0 (all skipped gives 1).
    """
    G_ref = Ghat_init_all[0]
    if not np.any(np.abs(G_ref) >= ZERO_REFERENCE):
        raise InitializationError("reference user's initial estimate is identically zero")
    valid = np.abs(G_ref) >= ZERO_REFERENCE
    counts = valid.sum(axis=1)
    safe_ref = np.where(valid, G_ref, 1.0)

    alphas = np.ones(Ghat_init_all.shape[:2], dtype=complex)
    for k in range(1, Ghat_init_all.shape[0]):
        ratios = np.where(valid, Ghat_init_all[k] / safe_ref, 0.0)
        sums = ratios.sum(axis=1)
        alphas[k] = np.where(counts > 0, sums / np.maximum(counts, 1), 1.0)
    return alphas


def run_mjce(
    Ybar_all: np.ndarray,
    V: np.ndarray,
    A_R: np.ndarray,
    cfg: SystemConfig,
    S_par: np.ndarray,
    Ghat_init: Optional[np.ndarray] = None,
    solver: Optional[SolverConfig] = None,
) -> EstimateReport:
    """
    Alternating optimisation of Xbar and alpha_k. ``Ybar_all`` is K x N_hat x B
    (projected observations), ``Ghat_init`` the per-user estimates alpha is
    initialised from (identity when omitted or unusable).
    """
    start = time.perf_counter()
    solver = solver if solver is not None else SolverConfig()
    K = Ybar_all.shape[0]
    L, G_r = A_R.shape
    B = V.shape[1]
    N_hat = S_par.shape[1]
    lam = penalty_lambda(cfg.P, cfg.T, cfg.d, cfg.noise_var, G_r)
    # expected noise energy of one user's projected block
    eps = noise_floor(N_hat, B, cfg.noise_var, cfg.P, cfg.T)

    alphas = np.ones((K, L), dtype=complex)
    if Ghat_init is not None:
        try:
            alphas = init_alpha(Ghat_init)
        except InitializationError as e:
            logger.warning(f"{e}, starting from identity scaling")

    state = MjceState(
        Xbar=np.ones((G_r, N_hat), dtype=complex),
        alphas=alphas,
        lam=lam,
        inner_tol=solver.inner_tol,
        outer_tol=solver.outer_tol,
        max_inner=solver.max_inner,
        max_outer=solver.max_outer,
        flags={"alpha_ridge": False, "xbar_ridge": False, "rank_condition_met": True},
    )

    def current_objective() -> float:
        return objective(state.Xbar, state.alphas, Ybar_all, V, A_R, lam, cfg.varsigma)

    state.objective_trace.append(current_objective())
    outer = 0
    for outer in range(1, state.max_outer + 1):
        update = update_xbar(
            state.alphas, Ybar_all, V, A_R, lam, cfg.varsigma, state.Xbar, state.max_inner, state.inner_tol
        )
        state.Xbar = update.Xbar
        state.inner_traces.append(update.surrogate_trace)
        state.flags["xbar_ridge"] |= update.regularized

        rank = np.linalg.matrix_rank(state.Xbar)
        if rank * B < L:
            state.flags["rank_condition_met"] = False
            logger.debug(f"outer {outer}: rank(Xbar) = {rank} < L/B = {L / B:.2f}")

        for k in range(1, K):
            previous = state.alphas[k].copy()
            if solver.alpha_step == "noise-floor":
                candidate, ridge = update_alpha_to_noise_floor(state.Xbar, Ybar_all[k], V, A_R, previous, eps)
            else:
                candidate, ridge = update_alpha(state.Xbar, Ybar_all[k], V, A_R)
            fit_before = _fit(sensing_operators(previous[None], V, A_R), Ybar_all[k].conj().T, state.Xbar)
            fit_after = _fit(sensing_operators(candidate[None], V, A_R), Ybar_all[k].conj().T, state.Xbar)
            # a ridge solution may fit slightly worse than the current scaling
            if fit_after <= fit_before:
                state.alphas[k] = candidate
            state.flags["alpha_ridge"] |= ridge

        value = current_objective()
        previous_value = state.objective_trace[-1]
        state.objective_trace.append(value)
        if solver.verbose:
            logger.debug(f"outer {outer}: objective {value:.10e}, inner iterations {len(update.surrogate_trace) - 1}")
        if value > previous_value + DIVERGENCE_TOLERANCE * abs(previous_value):
            raise DivergenceError(
                f"objective increased from {previous_value:.10e} to {value:.10e} at outer iteration {outer}",
                state.objective_trace,
            )
        if abs(previous_value - value) < state.outer_tol * max(abs(previous_value), np.finfo(float).tiny):
            break

    if not state.flags["rank_condition_met"]:
        logger.debug("rank(Xbar) >= L/B did not hold at every alpha update")

    energy = row_energy(state.Xbar)
    support = np.flatnonzero(energy > 1e-6 * energy.max()) if energy.max() > 0 else np.array([], dtype=int)
    G_common = A_R @ state.Xbar @ S_par.conj().T
    G_hat = state.alphas[:, :, None] * G_common[None, :, :]
    return EstimateReport(
        G_hat=G_hat,
        support_sets=[support] * K,
        iterations=outer,
        wall_time=time.perf_counter() - start,
        flags=dict(state.flags),
        diagnostics={"state": state},
    )

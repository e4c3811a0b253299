"""
Geometric channel model of the RIS-aided multi-user uplink.

Spatial frequencies are ``sin`` of the physical angles (half-wavelength
spacing), so every steering vector is parameterised by a value in [-1, 1).
The steering vector uses the conjugated convention
``a_X(phi)[n] = exp(-1j * pi * phi * n) / sqrt(X)`` everywhere, dictionaries
included.
"""

from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np
import scipy.linalg as sla

from src.utils.config import SystemConfig
from src.utils.errors import DegenerateChannelError, InvalidArgumentError

DEGENERATE_GAIN = 1e-12


def steering_vector(X: int, phi: float) -> np.ndarray:
    """Unit-norm ULA steering vector with ``X`` elements at spatial frequency ``phi``."""
    if X < 1:
        raise InvalidArgumentError(f"steering vector needs at least one element, got {X}")
    n = np.arange(X)
    return np.exp(-1j * np.pi * phi * n) / np.sqrt(X)


def steering_matrix(X: int, phis: Sequence[float]) -> np.ndarray:
    """Stack of steering vectors, one column per frequency in ``phis``."""
    if X < 1:
        raise InvalidArgumentError(f"steering vector needs at least one element, got {X}")
    phis = np.asarray(phis, dtype=float).reshape(1, -1)
    n = np.arange(X).reshape(-1, 1)
    return np.exp(-1j * np.pi * n * phis) / np.sqrt(X)


def wrap_frequency(phi):
    """Map spatial frequencies onto [-1, 1), exp(-j*pi*phi*n) is 2-periodic in phi."""
    return np.mod(np.asarray(phi, dtype=float) + 1.0, 2.0) - 1.0


def angular_grid(G: int) -> np.ndarray:
    return -1.0 + 2.0 * np.arange(G) / G


@dataclass(frozen=True)
class BsRisPath:
    gain: complex
    aoa: float  # at the RIS, radians
    aod: float  # at the BS, radians


@dataclass(frozen=True)
class RisUserPath:
    gain: complex
    aod: float  # from the RIS towards the user, radians


@dataclass
class ChannelRealization:
    """Ground truth of one channel draw: F (L x M), h (K x L), G (K x L x M) and the generating paths."""

    F: np.ndarray
    h: np.ndarray
    G: np.ndarray
    bs_ris_paths: List[BsRisPath]
    ris_user_paths: List[List[RisUserPath]]

    @property
    def K(self) -> int:
        return self.G.shape[0]

    def aod_frequencies(self) -> np.ndarray:
        return np.sin([path.aod for path in self.bs_ris_paths])

    def aoa_frequencies(self) -> np.ndarray:
        return np.sin([path.aoa for path in self.bs_ris_paths])

    def cascaded_frequencies(self) -> np.ndarray:
        """
        Cascaded AoA frequencies, shape (K, N_f, N_h), wrapped onto [-1, 1).
        Entry (k, p, q) is sin(aoa_p) - sin(aod_{k,q}) for the convention of this module.
        """
        aoa = self.aoa_frequencies()
        user = np.array([[np.sin(path.aod) for path in paths] for paths in self.ris_user_paths])
        return wrap_frequency(aoa[None, :, None] - user[:, None, :])


@dataclass
class AngularDictionary:
    A_R: np.ndarray
    A_T: np.ndarray
    grid_r: np.ndarray
    grid_t: np.ndarray


@dataclass
class ScalingMatrix:
    """Diagonal alpha_k with G_k = alpha_k G_1; only the diagonal is stored."""

    diag: np.ndarray

    def matrix(self) -> np.ndarray:
        return np.diag(self.diag)

    def apply(self, G: np.ndarray) -> np.ndarray:
        return self.diag[:, None] * G


@dataclass
class SparseChannelMatrix:
    X: np.ndarray
    row_support: np.ndarray = field(default_factory=lambda: np.array([], dtype=int))
    col_support: np.ndarray = field(default_factory=lambda: np.array([], dtype=int))

    @classmethod
    def from_matrix(cls, X: np.ndarray, tol: float = 0.0) -> "SparseChannelMatrix":
        mags = np.abs(X)
        rows = np.flatnonzero(mags.max(axis=1) > tol) if X.size else np.array([], dtype=int)
        cols = np.flatnonzero(mags.max(axis=0) > tol) if X.size else np.array([], dtype=int)
        return cls(X=X, row_support=rows, col_support=cols)


def cascade(F: np.ndarray, h: np.ndarray) -> np.ndarray:
    """G_k = diag(h_k^H) F for every user; ``h`` is K x L."""
    return np.conj(h)[:, :, None] * F[None, :, :]


def channels_from_paths(
    cfg: SystemConfig,
    bs_ris_paths: List[BsRisPath],
    ris_user_paths: List[List[RisUserPath]],
) -> ChannelRealization:
    """Build F, h_k and G_k from explicit path records."""
    L, M = cfg.L, cfg.M
    n_f = len(bs_ris_paths)
    gains = np.array([path.gain for path in bs_ris_paths], dtype=complex)
    a_ris = steering_matrix(L, np.sin([path.aoa for path in bs_ris_paths]))
    a_bs = steering_matrix(M, np.sin([path.aod for path in bs_ris_paths]))
    F = np.sqrt(L * M / n_f) * (a_ris * gains[None, :]) @ a_bs.conj().T

    h = np.zeros((len(ris_user_paths), L), dtype=complex)
    for k, paths in enumerate(ris_user_paths):
        betas = np.array([path.gain for path in paths], dtype=complex)
        a_user = steering_matrix(L, np.sin([path.aod for path in paths]))
        h[k] = np.sqrt(L / len(paths)) * a_user @ betas

    return ChannelRealization(
        F=F, h=h, G=cascade(F, h), bs_ris_paths=list(bs_ris_paths), ris_user_paths=[list(p) for p in ris_user_paths]
    )


def _complex_gaussian(rng: np.random.Generator, size) -> np.ndarray:
    return (rng.standard_normal(size) + 1j * rng.standard_normal(size)) / np.sqrt(2.0)


def sample_channels(cfg: SystemConfig, rng: np.random.Generator) -> ChannelRealization:
    """Draw unit-power complex Gaussian path gains and uniform angles on [0, 2*pi)."""
    alphas = _complex_gaussian(rng, cfg.N_f)
    aoas = rng.uniform(0.0, 2.0 * np.pi, cfg.N_f)
    aods = rng.uniform(0.0, 2.0 * np.pi, cfg.N_f)
    bs_ris = [BsRisPath(complex(g), float(a), float(d)) for g, a, d in zip(alphas, aoas, aods)]

    ris_user = []
    for _ in range(cfg.K):
        betas = _complex_gaussian(rng, cfg.N_h)
        angles = rng.uniform(0.0, 2.0 * np.pi, cfg.N_h)
        ris_user.append([RisUserPath(complex(g), float(a)) for g, a in zip(betas, angles)])

    return channels_from_paths(cfg, bs_ris, ris_user)


def build_dictionary(cfg: SystemConfig) -> AngularDictionary:
    grid_r = angular_grid(cfg.G_r)
    grid_t = angular_grid(cfg.G_t)
    return AngularDictionary(
        A_R=steering_matrix(cfg.L, grid_r),
        A_T=steering_matrix(cfg.M, grid_t),
        grid_r=grid_r,
        grid_t=grid_t,
    )


def cascaded_vad_residual(G_k: np.ndarray, dictionary: AngularDictionary) -> float:
    """Relative residual of the best A_R X A_T^H fit of G_k (minimum-norm least squares)."""
    norm = np.linalg.norm(G_k)
    if norm == 0:
        return 0.0
    A_R, A_T = dictionary.A_R, dictionary.A_T
    X = sla.pinv(A_R) @ G_k @ sla.pinv(A_T.conj().T)
    return float(np.linalg.norm(G_k - A_R @ X @ A_T.conj().T) / norm)


def scaling_matrix(h_k: np.ndarray, h_1: np.ndarray) -> ScalingMatrix:
    """alpha_k = diag(h_k^H / h_1^H), which satisfies G_k = alpha_k G_1."""
    if np.any(np.abs(h_1) < DEGENERATE_GAIN):
        raise DegenerateChannelError("reference user channel has a (near) zero entry")
    return ScalingMatrix(diag=np.conj(h_k) / np.conj(h_1))

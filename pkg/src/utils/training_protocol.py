"""
Uplink training phase: orthogonal pilots, RIS reflection schedules, noisy
reception at the BS and de-spreading of the per-user observations.
"""

from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np

from src.utils.channel_model import AngularDictionary, ChannelRealization
from src.utils.config import SystemConfig
from src.utils.errors import InvalidArgumentError


@dataclass
class TrainingDesign:
    S: np.ndarray  # K x T, row k is s_k^H
    V: np.ndarray  # L x B, column b is v_b
    P: float
    noise_var: float

    @property
    def T(self) -> int:
        return self.S.shape[1]

    @property
    def B(self) -> int:
        return self.V.shape[1]


@dataclass
class ReceivedBlocks:
    Y: np.ndarray  # B x M x T raw sub-frame observations
    Ytil: np.ndarray  # K x M x B de-spread observations

    def concatenated(self) -> np.ndarray:
        """All sub-frames side by side, M x BT."""
        B, M, T = self.Y.shape
        return self.Y.transpose(1, 0, 2).reshape(M, B * T)


def generate_pilots(K: int, T: int, P: float) -> np.ndarray:
    """First K rows of the T-point DFT matrix scaled so that s_k^H s_k = P T."""
    if T < K:
        raise InvalidArgumentError(f"need T >= K for orthogonal pilots, got T={T}, K={K}")
    k = np.arange(K).reshape(-1, 1)
    t = np.arange(T).reshape(1, -1)
    return np.sqrt(P) * np.exp(-2j * np.pi * k * t / T)


def random_reflections(L: int, B: int, rng: np.random.Generator) -> np.ndarray:
    return np.exp(1j * rng.uniform(0.0, 2.0 * np.pi, (L, B)))


def generate_reflections(
    L: int,
    B: int,
    mode: Literal["random", "optimized"] = "random",
    rng: Optional[np.random.Generator] = None,
    dictionary: Optional[AngularDictionary] = None,
    n_sweeps: int = 3,
) -> np.ndarray:
    """Unit-modulus L x B reflection schedule, either random phases or coherence-optimised."""
    if L < 1 or B < 1:
        raise InvalidArgumentError(f"reflection matrix needs L, B >= 1, got L={L}, B={B}")
    rng = rng if rng is not None else np.random.default_rng()
    if mode == "random":
        return random_reflections(L, B, rng)
    if mode == "optimized":
        if dictionary is None:
            raise InvalidArgumentError("optimized reflections need the angular dictionary")
        # imported here, the design module builds on top of this one
        from src.models.reflection_design import optimize_reflections

        return optimize_reflections(dictionary.A_R, B, n_sweeps=n_sweeps, rng=rng).V
    raise InvalidArgumentError(f"unknown reflection mode {mode!r}")


def build_training(
    cfg: SystemConfig,
    rng: np.random.Generator,
    mode: Literal["random", "optimized"] = "random",
    dictionary: Optional[AngularDictionary] = None,
    n_sweeps: int = 3,
) -> TrainingDesign:
    return TrainingDesign(
        S=generate_pilots(cfg.K, cfg.T, cfg.P),
        V=generate_reflections(cfg.L, cfg.B, mode, rng=rng, dictionary=dictionary, n_sweeps=n_sweeps),
        P=cfg.P,
        noise_var=cfg.noise_var,
    )


def despread(Y_b: np.ndarray, s_k: np.ndarray, P: float, T: int) -> np.ndarray:
    """(1 / PT) Y_b s_k, i.e. G_k^H v_b plus noise of variance noise_var / (PT)."""
    return Y_b @ s_k / (P * T)


def simulate_uplink(chan: ChannelRealization, td: TrainingDesign, rng: np.random.Generator) -> ReceivedBlocks:
    """
    Y_b = sum_k G_k^H v_b s_k^H + U_b for every sub-frame; noise is i.i.d. over
    antennas, symbols and sub-frames
    """
    K, L, M = chan.G.shape
    if td.S.shape[0] != K or td.V.shape[0] != L:
        raise InvalidArgumentError(
            f"training design {td.S.shape}/{td.V.shape} does not match channel with K={K}, L={L}"
        )
    T, B = td.T, td.B

    # GhV[b, :, k] = G_k^H v_b
    GhV = np.einsum("klm,lb->bmk", chan.G.conj(), td.V)
    Y = GhV @ td.S
    if td.noise_var > 0:
        scale = np.sqrt(td.noise_var / 2.0)
        Y = Y + scale * (rng.standard_normal((B, M, T)) + 1j * rng.standard_normal((B, M, T)))

    # column b of Ytil_k is despread(Y_b, s_k), all users at once
    pilots = td.S.conj().T  # T x K, column k is s_k
    Ytil = np.stack([despread(Y[b], pilots, td.P, T) for b in range(B)], axis=2)  # M x K x B
    return ReceivedBlocks(Y=Y, Ytil=Ytil.transpose(1, 0, 2))

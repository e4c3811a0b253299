import numpy as np

from src.utils.channel_model import BsRisPath, RisUserPath, channels_from_paths
from src.utils.config import SystemConfig


def small_config(**overrides) -> SystemConfig:
    params = dict(M=8, L=8, K=2, T=2, B=8, P=10.0, G_r=16, G_t=16, N_f=2, N_h=1)
    params.update(overrides)
    return SystemConfig(**params)


def on_grid_channels(cfg: SystemConfig, aoa_freqs, aod_freqs, user_freqs, seed: int = 0):
    """
    Channels whose cascaded AoAs fall on the G_r grid when every frequency
    is a multiple of 2 / G_r. One RIS-user path per user is drawn per entry of ``user_freqs``.
    """
    rng = np.random.default_rng(seed)

    def gain() -> complex:
        return complex(rng.standard_normal() + 1j * rng.standard_normal()) / np.sqrt(2.0)

    bs_ris = [BsRisPath(gain(), float(np.arcsin(a)), float(np.arcsin(d))) for a, d in zip(aoa_freqs, aod_freqs)]
    ris_user = [[RisUserPath(gain(), float(np.arcsin(u)))] for u in user_freqs]
    return channels_from_paths(cfg, bs_ris, ris_user)

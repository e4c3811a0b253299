import numpy as np

from src.utils.errors import InvalidArgumentError


def nmse(G_hat_all: np.ndarray, G_all: np.ndarray) -> float:
    """Mean over users of ||G_hat_k - G_k||_F^2 / ||G_k||_F^2."""
    G_hat_all = np.asarray(G_hat_all)
    G_all = np.asarray(G_all)
    if G_hat_all.shape != G_all.shape:
        raise InvalidArgumentError(f"estimate shape {G_hat_all.shape} differs from truth {G_all.shape}")
    if G_all.ndim == 2:
        G_hat_all, G_all = G_hat_all[None], G_all[None]
    energy = np.sum(np.abs(G_all) ** 2, axis=(1, 2))
    if np.any(energy == 0):
        raise InvalidArgumentError("a true channel has zero norm, NMSE is undefined")
    error = np.sum(np.abs(G_hat_all - G_all) ** 2, axis=(1, 2))
    return float(np.mean(error / energy))


def nmse_db(value: float) -> float:
    return 10.0 * np.log10(np.maximum(value, 1e-300))

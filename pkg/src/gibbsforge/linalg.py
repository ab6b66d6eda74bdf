"""Hermitian matrix functions via eigendecomposition."""

from __future__ import annotations

import numpy as np

CLIP = 1e-14


def hermitize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.conj().T)


def hermitian_function(a: np.ndarray, f) -> np.ndarray:
    w, v = np.linalg.eigh(hermitize(a))
    return (v * f(w)) @ v.conj().T


def psd_eigvals(a: np.ndarray, floor: float = CLIP) -> np.ndarray:
    """Eigenvalues of a Hermitian matrix clipped below at ``floor``."""
    return np.clip(np.linalg.eigvalsh(hermitize(a)), floor, None)


def sqrtm_psd(a: np.ndarray) -> np.ndarray:
    return hermitian_function(a, lambda w: np.sqrt(np.clip(w, 0.0, None)))


def logm_psd(a: np.ndarray, floor: float = CLIP) -> np.ndarray:
    return hermitian_function(a, lambda w: np.log(np.clip(w, floor, None)))


def expm_hermitian(h: np.ndarray, scale: complex = 1.0) -> np.ndarray:
    """``exp(scale * h)`` for Hermitian ``h``."""
    return hermitian_function(h, lambda w: np.exp(scale * w))

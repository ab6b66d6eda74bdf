"""State container: pure vectors and density matrices stored as ``rho = W W^dagger``."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .hilbert import SectorBasis


class BasisMismatchError(ValueError):
    pass


@dataclass(eq=False)
class QuantumState:
    """A state on ``basis`` held as a ``(dim, rank)`` factor.

    Rank one is a pure state. Mixing channels append columns; when the rank
    would exceed the dimension the factor is recompressed, which is the
    density-matrix representation in factored form.
    """

    basis: SectorBasis = field(repr=False)
    factor: np.ndarray = field(repr=False)

    @classmethod
    def pure(cls, psi: np.ndarray, basis: SectorBasis) -> "QuantumState":
        psi = np.asarray(psi, dtype=complex)
        if psi.shape != (basis.dim,):
            raise BasisMismatchError(f"vector of length {psi.shape} for basis of dim {basis.dim}")
        return cls(basis, psi[:, None].copy())

    @classmethod
    def product(cls, mask: int, basis: SectorBasis) -> "QuantumState":
        return cls.pure(basis.basis_state(mask), basis)

    @classmethod
    def from_density(cls, rho: np.ndarray, basis: SectorBasis, tol: float = 1e-14) -> "QuantumState":
        w, v = np.linalg.eigh(0.5 * (rho + rho.conj().T))
        keep = w > tol
        return cls(basis, v[:, keep] * np.sqrt(w[keep]))

    @property
    def rank(self) -> int:
        return self.factor.shape[1]

    @property
    def is_pure(self) -> bool:
        return self.rank == 1

    @property
    def vector(self) -> np.ndarray:
        if not self.is_pure:
            raise ValueError("state is mixed")
        return self.factor[:, 0]

    def density(self) -> np.ndarray:
        return self.factor @ self.factor.conj().T

    def trace(self) -> float:
        return float(np.sum(np.abs(self.factor) ** 2))

    def purity(self) -> float:
        g = self.factor.conj().T @ self.factor
        return float(np.sum(np.abs(g) ** 2))

    def copy(self) -> "QuantumState":
        return QuantumState(self.basis, self.factor.copy())

    def with_factor(self, factor: np.ndarray) -> "QuantumState":
        s = QuantumState(self.basis, factor)
        return s.compressed() if s.rank > self.basis.dim else s

    def compressed(self, tol: float = 1e-13) -> "QuantumState":
        """Drop numerically null directions of the factor."""
        u, sv, _ = np.linalg.svd(self.factor, full_matrices=False)
        keep = sv > tol * max(sv[0], 1e-300)
        return QuantumState(self.basis, u[:, keep] * sv[keep])

    def check_basis(self, basis: SectorBasis) -> None:
        if not self.basis.same_as(basis):
            raise BasisMismatchError("state and operator live in different bases")

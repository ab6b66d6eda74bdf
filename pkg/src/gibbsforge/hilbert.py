"""Basis machinery for open spin-1/2 chains.

Conventions used throughout the package:

* sites are 0-based, ``0 .. L-1``;
* bit ``i`` of a basis mask is site ``i``; a set bit is an up spin;
* a local pattern over an ordered subset ``(s_0, ..., s_{m-1})`` puts site
  ``s_0`` in the most significant bit, so local operators are written as
  ``kron(op_{s_0}, op_{s_1}, ...)`` in subset order;
* in a local one-site basis index 0 is down and index 1 is up.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from math import comb
from typing import Iterable, Sequence

import numpy as np

DIM_CAP = 2**16  # dense operator cap
SECTOR_CAP = 2**22  # enumeration cap (statevector-only use)


class DimensionError(ValueError):
    """Raised when a basis or dense operator would exceed the configured cap."""


class SectorViolationError(ValueError):
    """Raised when a local operator mixes local magnetization blocks."""


@dataclass(frozen=True)
class LatticeSpec:
    """Open chain of ``length`` sites; ``up_count=None`` means the full 2^L space."""

    length: int
    up_count: int | None = None

    def __post_init__(self):
        if self.length < 1:
            raise ValueError(f"length must be positive, got {self.length}")
        if self.up_count is not None and not 0 <= self.up_count <= self.length:
            raise ValueError(f"up_count must lie in [0, {self.length}], got {self.up_count}")

    def bonds(self, distance: int) -> list[tuple[int, int]]:
        return [(i, i + distance) for i in range(self.length - distance)]


ROLES = ("noisy", "test", "initial", "other")


@dataclass(frozen=True)
class SiteSubset:
    sites: tuple[int, ...]
    role: str = "other"

    def __init__(self, sites: Iterable[int], role: str = "other"):
        sites = tuple(int(s) for s in sites)
        if len(set(sites)) != len(sites):
            raise ValueError(f"duplicate sites in subset {sites}")
        if any(s < 0 for s in sites):
            raise ValueError(f"negative site index in {sites}")
        if role not in ROLES:
            raise ValueError(f"unknown role {role!r}")
        object.__setattr__(self, "sites", sites)
        object.__setattr__(self, "role", role)

    def __len__(self) -> int:
        return len(self.sites)

    def __iter__(self):
        return iter(self.sites)

    @property
    def mask(self) -> int:
        m = 0
        for s in self.sites:
            m |= 1 << s
        return m

    def check(self, length: int) -> None:
        if any(s >= length for s in self.sites):
            raise ValueError(f"subset {self.sites} outside lattice of length {length}")

    def union(self, other: "SiteSubset", role: str = "other") -> "SiteSubset":
        merged = list(self.sites) + [s for s in other.sites if s not in self.sites]
        return SiteSubset(merged, role)


def last_sites(length: int, count: int = 3, role: str = "test") -> SiteSubset:
    return SiteSubset(range(length - count, length), role)


@dataclass(frozen=True, eq=False)
class SectorBasis:
    """Ordered computational basis of a fixed-magnetization sector (or the full space)."""

    spec: LatticeSpec
    states: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.states.setflags(write=False)

    @property
    def length(self) -> int:
        return self.spec.length

    @property
    def is_sector(self) -> bool:
        return self.spec.up_count is not None

    @property
    def dim(self) -> int:
        return len(self.states)

    def __len__(self) -> int:
        return self.dim

    def index_of(self, mask: int) -> int:
        if not self.is_sector:
            if not 0 <= mask < self.dim:
                raise KeyError(mask)
            return int(mask)
        k = int(np.searchsorted(self.states, mask))
        if k >= self.dim or self.states[k] != mask:
            raise KeyError(mask)
        return k

    def lookup(self, masks: np.ndarray) -> np.ndarray:
        """Vectorized ``index_of``; absent masks map to -1."""
        masks = np.asarray(masks, dtype=np.int64)
        if not self.is_sector:
            ok = (masks >= 0) & (masks < self.dim)
            return np.where(ok, masks, -1)
        k = np.searchsorted(self.states, masks)
        k = np.minimum(k, self.dim - 1)
        return np.where(self.states[k] == masks, k, -1)

    def basis_state(self, mask: int) -> np.ndarray:
        psi = np.zeros(self.dim, dtype=complex)
        psi[self.index_of(mask)] = 1.0
        return psi

    @cached_property
    def spins(self) -> np.ndarray:
        """``(dim, L)`` array of sigma^z eigenvalues (+1 up, -1 down)."""
        bits = (self.states[:, None] >> np.arange(self.length)) & 1
        return (2 * bits - 1).astype(np.int8)

    def same_as(self, other: "SectorBasis") -> bool:
        return self is other or (self.spec == other.spec and self.dim == other.dim)


def enumerate_sector(spec: LatticeSpec, cap: int = SECTOR_CAP) -> SectorBasis:
    """All masks with ``spec.up_count`` set bits in increasing order.

    With ``up_count=None`` the full ``2**L`` basis is returned.
    """
    L, p = spec.length, spec.up_count
    dim = 2**L if p is None else comb(L, p)
    if dim > cap:
        raise DimensionError(f"basis dimension {dim} exceeds cap {cap}")
    if p is None:
        return SectorBasis(spec, np.arange(dim, dtype=np.int64))
    states = np.empty(dim, dtype=np.int64)
    # Gosper's hack walks same-popcount masks in increasing order.
    v = (1 << p) - 1
    for k in range(dim):
        states[k] = v
        if v == 0:
            break
        c = v & -v
        r = v + c
        v = (((r ^ v) >> 2) // c) | r
    return SectorBasis(spec, states)


def full_basis(length: int, cap: int = SECTOR_CAP) -> SectorBasis:
    return enumerate_sector(LatticeSpec(length, None), cap)


def pattern_mask(sites: Sequence[int]) -> int:
    m = 0
    for s in sites:
        m |= 1 << s
    return m


def local_pattern(mask, subset: SiteSubset | Sequence[int]):
    """Restrict ``mask`` to ``subset``; the first subset site is the most significant bit.

    Works elementwise on integer arrays.
    """
    sites = tuple(subset)
    m = len(sites)
    out = 0 if np.isscalar(mask) or isinstance(mask, int) else np.zeros_like(mask)
    for k, s in enumerate(sites):
        out = out | (((mask >> s) & 1) << (m - 1 - k))
    return out


def place_pattern(pattern, subset: SiteSubset | Sequence[int]):
    """Inverse of :func:`local_pattern`: spread local bits back onto the lattice."""
    sites = tuple(subset)
    m = len(sites)
    out = 0 if np.isscalar(pattern) or isinstance(pattern, int) else np.zeros_like(pattern)
    for k, s in enumerate(sites):
        out = out | (((pattern >> (m - 1 - k)) & 1) << s)
    return out


def popcounts(n_bits: int) -> np.ndarray:
    idx = np.arange(2**n_bits)
    return np.array([bin(i).count("1") for i in idx])


class SubsetView:
    """Split basis amplitudes into a ``(2^m, n_env)`` local-by-environment grid.

    ``gather`` puts a vector (or each column of a factor matrix) onto the
    grid, zero where a configuration is absent from the basis; ``scatter``
    reads it back. Partial traces and local operator application both go
    through this view.
    """

    def __init__(self, basis: SectorBasis, subset: SiteSubset | Sequence[int]):
        subset = subset if isinstance(subset, SiteSubset) else SiteSubset(subset)
        subset.check(basis.length)
        self.basis = basis
        self.subset = subset
        self.m = len(subset)
        states = basis.states
        self.pattern = local_pattern(states, subset).astype(np.int64)
        env = states & ~np.int64(subset.mask)
        self.env_masks, self.env_id = np.unique(env, return_inverse=True)
        self.env_id = self.env_id.reshape(-1)
        self.n_env = len(self.env_masks)
        # grid cells that exist in the basis
        self.occupied = np.zeros((2**self.m, self.n_env), dtype=bool)
        self.occupied[self.pattern, self.env_id] = True

    def gather(self, psi: np.ndarray) -> np.ndarray:
        """``(dim,)`` or ``(dim, r)`` to ``(2^m, n_env)`` or ``(2^m, n_env, r)``."""
        shape = (2**self.m, self.n_env) + psi.shape[1:]
        grid = np.zeros(shape, dtype=np.result_type(psi.dtype, np.complex128))
        grid[self.pattern, self.env_id] = psi
        return grid

    def scatter(self, grid: np.ndarray, check: bool = True, atol: float = 1e-12) -> np.ndarray:
        if check and not self.occupied.all():
            stray = grid[~self.occupied]
            if stray.size and np.abs(stray).max() > atol:
                raise SectorViolationError(
                    f"operator moved weight {np.abs(stray).max():.3e} out of the sector"
                )
        return grid[self.pattern, self.env_id]

    def apply(self, op: np.ndarray, psi: np.ndarray, check: bool = True) -> np.ndarray:
        """Apply a ``2^m`` local operator to a vector or factor matrix."""
        grid = self.gather(psi)
        out = np.tensordot(op, grid, axes=(1, 0))
        return self.scatter(out, check=check)

    def reduce(self, psi: np.ndarray) -> np.ndarray:
        """``Tr_env |psi><psi|`` (or ``W W^dagger`` for a factor matrix)."""
        grid = self.gather(psi).reshape(2**self.m, -1)
        return grid @ grid.conj().T


def check_conserving(op: np.ndarray, atol: float = 1e-12) -> None:
    """Raise unless ``op`` is block diagonal in local up-count."""
    m = int(np.log2(op.shape[0]))
    pc = popcounts(m)
    cross = pc[:, None] != pc[None, :]
    bad = np.abs(op[cross]).max() if cross.any() else 0.0
    if bad > atol:
        raise SectorViolationError(f"local operator mixes magnetization blocks (|elem|={bad:.3e})")


def embed_local_operator(
    op: np.ndarray, subset: SiteSubset | Sequence[int], basis: SectorBasis, cap: int = DIM_CAP
) -> np.ndarray:
    """Dense matrix of ``op`` on ``subset`` (identity elsewhere) in ``basis``."""
    op = np.asarray(op)
    subset = subset if isinstance(subset, SiteSubset) else SiteSubset(subset)
    if op.shape != (2 ** len(subset),) * 2:
        raise ValueError(f"operator shape {op.shape} does not match {len(subset)} sites")
    if basis.dim > cap:
        raise DimensionError(f"dense embedding of dimension {basis.dim} exceeds cap {cap}")
    if basis.is_sector:
        check_conserving(op)
    view = SubsetView(basis, subset)
    out = np.zeros((basis.dim, basis.dim), dtype=np.result_type(op.dtype, float))
    env_bits = view.basis.states & ~np.int64(subset.mask)
    for a in range(2 ** len(subset)):
        col = op[a, view.pattern]
        targets = basis.lookup(env_bits | place_pattern(np.int64(a), subset))
        keep = (targets >= 0) & (col != 0)
        out[targets[keep], np.nonzero(keep)[0]] = col[keep]
    return out

"""Noise operators: sector-conserving Haar blocks, phase flips, constrained Pauli channels."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce
from typing import Sequence

import numpy as np

from .hilbert import SectorBasis, SiteSubset, SubsetView, check_conserving, popcounts
from .states import QuantumState

HAAR_SITE_CAP = 6

# local one-site basis: index 0 = down, index 1 = up
PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[-1, 0], [0, 1]], dtype=complex),
}


class CompletenessError(ValueError):
    pass


def kron_all(mats: Sequence[np.ndarray]) -> np.ndarray:
    return reduce(np.kron, mats, np.eye(1, dtype=complex))


def z_string(m: int) -> np.ndarray:
    """Diagonal of ``Z x Z x ... x Z`` on ``m`` sites."""
    return np.where(popcounts(m) % 2 == m % 2, 1.0, -1.0)


def haar_unitary(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed ``n x n`` unitary: QR of a Ginibre matrix with the phase fix."""
    z = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return q * (d / np.abs(d))[None, :]


@dataclass(frozen=True, eq=False)
class HaarBlockUnitary:
    subset: SiteSubset
    matrix: np.ndarray = field(repr=False)
    seed: int | None = None

    @property
    def n_sites(self) -> int:
        return len(self.subset)


def sample_haar_block(
    subset: SiteSubset | Sequence[int], rng: np.random.Generator | int
) -> HaarBlockUnitary:
    """Local unitary, identity on the all-down and all-up blocks and an
    independent Haar draw on every intermediate up-count block."""
    subset = subset if isinstance(subset, SiteSubset) else SiteSubset(subset, "noisy")
    m = len(subset)
    if not 1 <= m <= HAAR_SITE_CAP:
        raise ValueError(f"Haar block needs 1..{HAAR_SITE_CAP} sites, got {m}")
    seed = rng if isinstance(rng, (int, np.integer)) else None
    rng = np.random.default_rng(rng)
    pc = popcounts(m)
    U = np.zeros((2**m, 2**m), dtype=complex)
    for c in range(m + 1):
        idx = np.nonzero(pc == c)[0]
        block = np.eye(len(idx)) if c in (0, m) else haar_unitary(len(idx), rng)
        U[np.ix_(idx, idx)] = block
    return HaarBlockUnitary(subset, U, seed)


def apply_unitary(state: QuantumState, op: np.ndarray, subset: SiteSubset) -> QuantumState:
    view = SubsetView(state.basis, subset)
    return QuantumState(state.basis, view.apply(op, state.factor))


def apply_kraus(state: QuantumState, kraus: Sequence[np.ndarray], subset: SiteSubset) -> QuantumState:
    """``sum_k K rho K^dagger`` on a factored state (columns stack per operator)."""
    view = SubsetView(state.basis, subset)
    cols = [view.apply(K, state.factor) for K in kraus]
    return state.with_factor(np.concatenate(cols, axis=1))


def phase_flip_kraus(m: int, p: float) -> list[np.ndarray]:
    if not 0 <= p <= 1:
        raise ValueError(f"flip probability must lie in [0, 1], got {p}")
    return [np.sqrt(1 - p) * np.eye(2**m), np.sqrt(p) * np.diag(z_string(m)).astype(complex)]


def phase_flip_mask(basis: SectorBasis, subset: SiteSubset) -> np.ndarray:
    """Eigenvalue of ``Z..Z`` over ``subset`` for every basis state."""
    return np.prod(basis.spins[:, list(subset.sites)], axis=1).astype(float)


def apply_phase_flip(rho, subset: SiteSubset, p: float, basis: SectorBasis | None = None):
    """``(1-p) rho + p S rho S`` with ``S`` the Z string over all subset sites.

    ``rho`` is a dense matrix on ``basis`` or a :class:`QuantumState`.
    """
    if not 0 <= p <= 1:
        raise ValueError(f"flip probability must lie in [0, 1], got {p}")
    if isinstance(rho, QuantumState):
        if p == 0:
            return rho.copy()
        s = phase_flip_mask(rho.basis, subset)
        cols = [np.sqrt(1 - p) * rho.factor, np.sqrt(p) * s[:, None] * rho.factor]
        if p == 1:
            cols = cols[1:]
        return rho.with_factor(np.concatenate(cols, axis=1))
    if basis is None:
        raise ValueError("dense input needs its basis")
    s = phase_flip_mask(basis, subset)
    return rho * ((1 - p) + p * np.outer(s, s))


@dataclass(frozen=True)
class PauliString:
    """Pauli letters on ``sites``; ``projector`` multiplies by ``(I - Z..Z)/2``."""

    letters: str
    sites: tuple[int, ...]
    projector: bool = False

    def __post_init__(self):
        if len(self.letters) != len(self.sites):
            raise ValueError("one letter per site")
        if set(self.letters) - set(PAULI):
            raise ValueError(f"letters must be among I, X, Y, Z: {self.letters!r}")

    def local(self, sites: Sequence[int]) -> np.ndarray:
        """Matrix on the ordered support ``sites``."""
        pos = {s: k for k, s in enumerate(sites)}
        mats = [PAULI["I"]] * len(sites)
        for letter, s in zip(self.letters, self.sites):
            mats[pos[s]] = PAULI[letter]
        op = kron_all(mats)
        if self.projector:
            zs = np.ones(2 ** len(sites))
            for s in self.sites:
                zs = zs * np.diag(kron_all([PAULI["Z"] if t == s else PAULI["I"] for t in sites])).real
            op = op @ np.diag((1 - zs) / 2)
        return op

    @classmethod
    def parse(cls, text: str, sites: Sequence[int]) -> "PauliString":
        """``"ZZ"``, ``"XX|P"`` (with projector) or ``"I"``."""
        letters, _, flag = text.partition("|")
        if letters == "I":
            letters = "I" * len(sites)
        return cls(letters, tuple(sites), flag.upper() == "P")


@dataclass(frozen=True)
class PauliChannelSpec:
    strings: tuple[PauliString, ...]
    probs: tuple[float, ...]
    conserved: str | None = "magnetization"

    def __post_init__(self):
        if len(self.strings) != len(self.probs):
            raise ValueError("one probability per string")
        if any(p < 0 for p in self.probs):
            raise ValueError("probabilities must be nonnegative")
        if abs(sum(self.probs) - 1) > 1e-12:
            raise ValueError(f"probabilities sum to {sum(self.probs)}, not 1")

    @property
    def support(self) -> tuple[int, ...]:
        seen: list[int] = []
        for s in self.strings:
            seen += [t for t in s.sites if t not in seen]
        return tuple(seen)

    @classmethod
    def admissible_pair(cls, i: int, j: int, p_zz: float, p_xx: float, p_id: float) -> "PauliChannelSpec":
        """The two-site set ``{ZZ, XX (I-ZZ)/2, I}``."""
        return cls(
            (PauliString("ZZ", (i, j)), PauliString("XX", (i, j), True), PauliString("II", (i, j))),
            (p_zz, p_xx, p_id),
        )

    @classmethod
    def from_config(cls, data: dict) -> "PauliChannelSpec":
        sites = tuple(data["sites"])
        strings = tuple(PauliString.parse(t, sites) for t in data["strings"])
        return cls(strings, tuple(float(p) for p in data["probs"]), data.get("conserved", "magnetization"))


@dataclass(frozen=True)
class KrausSet:
    operators: tuple[np.ndarray, ...]
    support: SiteSubset
    correction_norm: float


def conserved_observable(kind: str, m: int) -> np.ndarray:
    if kind == "magnetization":
        return np.diag(2.0 * popcounts(m) - m)
    if kind == "parity":
        return np.diag(z_string(m))
    raise ValueError(f"unknown conserved quantity {kind!r}")


def pauli_channel_kraus(spec: PauliChannelSpec, atol: float = 1e-12) -> KrausSet:
    """Kraus operators ``sqrt(p_l) P_l`` made complete.

    Projected strings are not unitary, so ``sum_l p_l P_l^dagger P_l`` may fall
    short of the identity; the deficit ``D`` is absorbed into the identity
    operator as ``sqrt(p_I I + D)``. A surplus is an error.
    """
    sites = spec.support
    m = len(sites)
    ops = [s.local(sites) for s in spec.strings]
    if spec.conserved is not None:
        Q = conserved_observable(spec.conserved, m)
        for s, op in zip(spec.strings, ops):
            if np.abs(op @ Q - Q @ op).max() > atol:
                raise ValueError(f"string {s.letters} does not conserve {spec.conserved}")
    total = sum(p * op.conj().T @ op for p, op in zip(spec.probs, ops))
    deficit = np.eye(2**m) - total
    dw = np.linalg.eigvalsh(0.5 * (deficit + deficit.conj().T))
    if dw.min() < -1e-12:
        raise CompletenessError(f"Kraus sum exceeds identity; residual norm {np.linalg.norm(deficit):.3e}")
    correction = float(np.linalg.norm(deficit))
    kraus = []
    id_done = False
    for s, p, op in zip(spec.strings, spec.probs, ops):
        is_id = set(s.letters) == {"I"} and not s.projector
        if is_id and not id_done:
            w, v = np.linalg.eigh(p * np.eye(2**m) + deficit)
            kraus.append((v * np.sqrt(np.clip(w, 0, None))) @ v.conj().T)
            id_done = True
        elif p > 0:
            kraus.append(np.sqrt(p) * op)
    if not id_done and correction > atol:
        w, v = np.linalg.eigh(deficit)
        kraus.append((v * np.sqrt(np.clip(w, 0, None))) @ v.conj().T)
    resid = np.eye(2**m) - sum(K.conj().T @ K for K in kraus)
    if np.abs(resid).max() > 1e-10:
        raise CompletenessError(f"Kraus completeness residual {np.abs(resid).max():.3e}")
    return KrausSet(tuple(kraus), SiteSubset(sites, "noisy"), correction)


def apply_pauli_channel(rho, spec: PauliChannelSpec, basis: SectorBasis | None = None):
    """Apply the channel to a :class:`QuantumState` or a dense matrix on ``basis``."""
    ks = pauli_channel_kraus(spec)
    if basis is not None and basis.is_sector:
        for K in ks.operators:
            check_conserving(K)
    if isinstance(rho, QuantumState):
        return apply_kraus(rho, ks.operators, ks.support)
    if basis is None:
        raise ValueError("dense input needs its basis")
    view = SubsetView(basis, ks.support)
    out = np.zeros_like(rho, dtype=complex)
    for K in ks.operators:
        left = view.apply(K, rho)
        out += view.apply(K, left.conj().T).conj().T
    return out


@dataclass(frozen=True)
class ThermalizingReport:
    commutator_norm: float
    straddles: bool
    candidate: bool


def check_thermalizing_conditions(
    M: np.ndarray,
    H: np.ndarray,
    support: Sequence[int],
    region_a: Sequence[int],
    tol: float = 1e-10,
) -> ThermalizingReport:
    """Necessary conditions for a noise operator to change the reduced state on ``region_a``:
    it fails to commute with ``H`` or its support straddles the cut."""
    comm = float(np.linalg.norm(M @ H - H @ M))
    a = set(region_a)
    sup = set(support)
    straddles = bool(sup & a) and bool(sup - a)
    return ThermalizingReport(comm, straddles, comm > tol or straddles)

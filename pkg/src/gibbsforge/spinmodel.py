"""Extended XZ chain: Hamiltonian, spectrum, density of states and Gibbs references."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.optimize import brentq

from .hilbert import DIM_CAP, DimensionError, SectorBasis, SiteSubset, SubsetView, full_basis
from .linalg import hermitian_function

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CouplingParams:
    """Couplings of ``-J XX + Jp ZZ`` on nearest and next-nearest bonds."""

    J: float = 1.0
    J_perp: float = 1.0
    J_prime: float = 0.5
    J_prime_perp: float = 0.5

    def __post_init__(self):
        for name in ("J", "J_perp", "J_prime", "J_prime_perp"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    @property
    def integrable(self) -> bool:
        return self.J_prime == 0 and self.J_prime_perp == 0

    def terms(self):
        """``(distance, xx_coefficient, zz_coefficient)`` for each bond family."""
        return ((1, -self.J, self.J_perp), (2, -self.J_prime, self.J_prime_perp))


def build_hamiltonian(
    params: CouplingParams,
    basis: SectorBasis,
    conserving: bool | None = None,
    cap: int = DIM_CAP,
) -> np.ndarray:
    """Real symmetric matrix of the open-chain extended XZ model in ``basis``.

    In a sector basis only the spin-exchanging part of ``XX`` survives the
    projection. On the full basis ``conserving=False`` (default) keeps the
    literal ``XX`` coupling, which also flips aligned pairs; ``conserving=True``
    keeps only the exchange part, i.e. ``(XX + YY) / 2``.
    """
    if basis.dim > cap:
        raise DimensionError(f"Hamiltonian dimension {basis.dim} exceeds cap {cap}")
    if conserving is None:
        conserving = basis.is_sector
    L = basis.length
    states = basis.states
    spins = basis.spins.astype(float)
    H = np.zeros((basis.dim, basis.dim))
    diag = np.zeros(basis.dim)
    cols = np.arange(basis.dim)
    for dist, cxx, czz in params.terms():
        for i in range(L - dist):
            j = i + dist
            if czz:
                diag += czz * spins[:, i] * spins[:, j]
            if cxx:
                rows = basis.lookup(states ^ ((1 << i) | (1 << j)))
                if conserving:
                    rows = np.where(spins[:, i] != spins[:, j], rows, -1)
                ok = rows >= 0
                H[rows[ok], cols[ok]] += cxx
    H[cols, cols] += diag
    return H


@dataclass(frozen=True, eq=False)
class Spectrum:
    energies: np.ndarray
    vectors: np.ndarray = field(repr=False)
    basis: SectorBasis = field(repr=False)
    hamiltonian: np.ndarray | None = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return len(self.energies)

    @property
    def e_min(self) -> float:
        return float(self.energies[0])

    @property
    def e_max(self) -> float:
        return float(self.energies[-1])

    def to_eigenbasis(self, psi: np.ndarray) -> np.ndarray:
        return self.vectors.T.conj() @ psi

    def from_eigenbasis(self, c: np.ndarray) -> np.ndarray:
        return self.vectors @ c

    def expectation(self, psi: np.ndarray) -> float:
        """``<H>`` for a vector or ``Tr[H W W^dagger]`` for a factor matrix."""
        c = self.to_eigenbasis(psi)
        w = np.abs(c) ** 2
        if w.ndim > 1:
            w = w.sum(axis=1)
        return float(self.energies @ w)

    def variance(self, psi: np.ndarray) -> float:
        c = self.to_eigenbasis(psi)
        w = np.abs(c) ** 2
        if w.ndim > 1:
            w = w.sum(axis=1)
        mean = self.energies @ w
        return float(((self.energies - mean) ** 2) @ w)


def diagonalize(H: np.ndarray, basis: SectorBasis) -> Spectrum:
    energies, vectors = np.linalg.eigh(H)
    return Spectrum(energies, vectors, basis, H)


def model_spectrum(params: CouplingParams, basis: SectorBasis, **kw) -> Spectrum:
    return diagonalize(build_hamiltonian(params, basis, **kw), basis)


def silverman_bandwidth(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    sd = x.std(ddof=1)
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(sd, (q75 - q25) / 1.349) if q75 > q25 else sd
    return 0.9 * spread * len(x) ** (-0.2)


def density_of_states(
    energies: np.ndarray | Spectrum,
    bandwidth: float | None = None,
    n_grid: int = 512,
    pad: float = 3.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian KDE of the levels, scaled so the curve integrates to the level count.

    The grid covers ``[E_min - pad*h, E_max + pad*h]`` so that kernel tails of
    the edge levels are not cut off.
    """
    e = np.asarray(energies.energies if isinstance(energies, Spectrum) else energies, float)
    if e.size < 2:
        raise ValueError("density of states needs at least two levels")
    if bandwidth is None:
        bandwidth = silverman_bandwidth(e)
        if not bandwidth > 0:
            raise ValueError("degenerate spectrum: supply a bandwidth")
    h = float(bandwidth)
    grid = np.linspace(e.min() - pad * h, e.max() + pad * h, n_grid)
    z = (grid[:, None] - e[None, :]) / h
    dens = np.exp(-0.5 * z**2).sum(axis=1) / (h * np.sqrt(2 * np.pi))
    return grid, dens


class OutOfRangeError(ValueError):
    pass


def _boltzmann(energies: np.ndarray, beta: float) -> tuple[np.ndarray, float]:
    """Normalized Boltzmann weights and ``ln Z``, shifted for stability."""
    ref = energies[0] if beta >= 0 else energies[-1]
    x = -beta * (energies - ref)
    xmax = x.max()
    w = np.exp(x - xmax)
    s = w.sum()
    return w / s, float(np.log(s) + xmax - beta * ref)


def thermal_energy(energies: np.ndarray, beta: float) -> float:
    w, _ = _boltzmann(energies, beta)
    return float(w @ energies)


def energy_variance(energies: np.ndarray, beta: float) -> float:
    w, _ = _boltzmann(energies, beta)
    mean = w @ energies
    return float(w @ (energies - mean) ** 2)


@dataclass(frozen=True, eq=False)
class ThermalReference:
    beta_star: float
    target_energy: float
    log_z: float
    spectrum: Spectrum = field(repr=False)
    infinite_temperature: bool = False

    @cached_property
    def weights(self) -> np.ndarray:
        return _boltzmann(self.spectrum.energies, self.beta_star)[0]

    @cached_property
    def factor(self) -> np.ndarray:
        """``W`` with ``gibbs = W W^T``."""
        return self.spectrum.vectors * np.sqrt(self.weights)[None, :]

    @cached_property
    def gibbs(self) -> np.ndarray:
        V = self.spectrum.vectors
        return (V * self.weights) @ V.T.conj()

    @property
    def energy(self) -> float:
        return float(self.weights @ self.spectrum.energies)


def gibbs_reference(spectrum: Spectrum, beta: float) -> ThermalReference:
    e = spectrum.energies
    _, log_z = _boltzmann(e, beta)
    return ThermalReference(beta, thermal_energy(e, beta), log_z, spectrum, beta == 0)


def solve_beta_star(spectrum: Spectrum, target_energy: float, beta_max: float = 1.0) -> ThermalReference:
    """Inverse temperature whose Gibbs state has mean energy ``target_energy``.

    The thermal energy is strictly decreasing in beta, so a doubling bracket
    followed by a bracketed root solve is robust; beta may be negative.
    """
    e = spectrum.energies
    span = e[-1] - e[0]
    if not e[0] < target_energy < e[-1]:
        raise OutOfRangeError(
            f"target energy {target_energy} outside open spectral interval ({e[0]}, {e[-1]})"
        )
    tol = 1e-9 * span
    mean = float(e.mean())
    if abs(target_energy - mean) <= tol:
        return ThermalReference(0.0, target_energy, float(np.log(len(e))), spectrum, True)

    def f(b):
        return thermal_energy(e, b) - target_energy

    lo, hi = -beta_max, beta_max
    while f(lo) < 0:
        lo *= 2
        if lo < -1e8:
            raise OutOfRangeError("failed to bracket beta (target too close to E_max)")
    while f(hi) > 0:
        hi *= 2
        if hi > 1e8:
            raise OutOfRangeError("failed to bracket beta (target too close to E_min)")
    beta = brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    ref = gibbs_reference(spectrum, beta)
    if abs(ref.energy - target_energy) > tol:
        raise RuntimeError(f"beta solve missed target by {ref.energy - target_energy:.3e}")
    return ThermalReference(beta, target_energy, ref.log_z, spectrum, False)


def local_hamiltonian(params: CouplingParams, subset: SiteSubset, conserving: bool = True) -> np.ndarray:
    """Terms of the model fully supported on ``subset``, as a ``2^m`` matrix.

    Local index ordering follows :func:`gibbsforge.hilbert.local_pattern`.
    """
    sites = list(subset.sites)
    m = len(sites)
    basis = full_basis(m)
    pos = {s: k for k, s in enumerate(sites)}
    H = np.zeros((2**m, 2**m))
    states = basis.states
    for dist, cxx, czz in params.terms():
        for a in sites:
            b = a + dist
            if b not in pos:
                continue
            ba, bb = m - 1 - pos[a], m - 1 - pos[b]
            za = 2 * ((states >> ba) & 1) - 1
            zb = 2 * ((states >> bb) & 1) - 1
            H[states, states] += czz * za * zb
            flipped = states ^ ((1 << ba) | (1 << bb))
            keep = (za != zb) if conserving else np.ones_like(za, dtype=bool)
            H[flipped[keep], states[keep]] += cxx
    return H


def thermal_reduced(
    reference: ThermalReference,
    subset: SiteSubset,
    mode: str = "exact",
    params: CouplingParams | None = None,
) -> np.ndarray:
    """Thermal state on ``subset``.

    ``exact`` traces the global Gibbs state; ``local`` returns the Gibbs state
    of the subset-only Hamiltonian (bonds leaving the subset dropped).
    """
    basis = reference.spectrum.basis
    if 2 * len(subset) >= basis.length:
        warnings.warn(
            f"subset of {len(subset)} sites is not smaller than half the chain of {basis.length}",
            stacklevel=2,
        )
    if mode == "exact":
        rho = SubsetView(basis, subset).reduce(reference.factor)
    elif mode == "local":
        if params is None:
            raise ValueError("local mode needs the coupling parameters")
        HA = local_hamiltonian(params, subset, conserving=basis.is_sector)
        b = reference.beta_star
        rho = hermitian_function(HA, lambda x: np.exp(-b * (x - (x.min() if b >= 0 else x.max()))))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    rho = 0.5 * (rho + rho.conj().T)
    return rho / np.trace(rho).real

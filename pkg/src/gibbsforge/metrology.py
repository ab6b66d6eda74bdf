"""Distances, entropies and energy observables on reduced states (natural logs throughout)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .hilbert import SectorBasis, SiteSubset, SubsetView
from .linalg import CLIP, hermitize
from .states import QuantumState

METRICS = (
    "rel_entropy",
    "trace_dist",
    "one_minus_fidelity",
    "mutual_info",
    "hs_dist",
    "energy_ratio",
    "renyi2",
)


EIG_FLOOR = 1e-13  # relative cutoff for eigenvalues treated as exact zeros


class SupportError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ReducedState:
    subset: SiteSubset
    matrix: np.ndarray = field(repr=False)
    source: str = ""

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


def partial_trace(state, keep: SiteSubset, basis: SectorBasis | None = None, source: str = "") -> ReducedState:
    """Reduce a statevector, factored state or dense density matrix onto ``keep``.

    Sector inputs land on the full ``2^|keep|`` local space; local
    configurations absent from the sector carry zero weight.
    """
    if isinstance(state, QuantumState):
        basis, factor = state.basis, state.factor
        rho = SubsetView(basis, keep).reduce(factor)
    else:
        if basis is None:
            raise ValueError("array input needs its basis")
        state = np.asarray(state)
        view = SubsetView(basis, keep)
        if state.ndim == 1:
            rho = view.reduce(state)
        else:
            # Tr_env rho: gather rows and columns onto the local x env grid
            g = view.gather(state)  # (2^m, n_env, dim)
            g = view.gather(np.moveaxis(g, 2, 0).reshape(basis.dim, -1))  # (2^m, n_env, 2^m*n_env)
            g = g.reshape(2**view.m, view.n_env, 2**view.m, view.n_env)
            rho = np.einsum("beae->ab", g)
    return ReducedState(keep, hermitize(rho), source)


def _mat(x) -> np.ndarray:
    return x.matrix if isinstance(x, ReducedState) else np.asarray(x)


def von_neumann_entropy(rho) -> float:
    w = np.linalg.eigvalsh(hermitize(_mat(rho)))
    w = w[w > CLIP]
    return float(-(w * np.log(w)).sum())


def relative_entropy(rho, sigma, support_tol: float = 1e-10) -> float:
    """``Tr[rho (ln rho - ln sigma)]`` with ``0 ln 0 = 0``."""
    rho, sigma = _mat(rho), _mat(sigma)
    wr, vr = np.linalg.eigh(hermitize(rho))
    ws, vs = np.linalg.eigh(hermitize(sigma))
    null = vs[:, ws <= CLIP]
    if null.size:
        leak = float(np.real(np.trace(null.conj().T @ rho @ null)))
        if leak > support_tol:
            raise SupportError(f"rho has weight {leak:.3e} outside the support of sigma")
    pos = wr > CLIP
    term1 = float((wr[pos] * np.log(wr[pos])).sum())
    log_s = (vs * np.log(np.clip(ws, CLIP, None))) @ vs.conj().T
    term2 = float(np.real(np.trace(rho @ log_s)))
    return term1 - term2


def trace_distance(rho, sigma) -> float:
    d = hermitize(_mat(rho) - _mat(sigma))
    return float(0.5 * np.abs(np.linalg.eigvalsh(d)).sum())


def fidelity(rho, sigma) -> float:
    """Uhlmann fidelity through the Hermitian product ``sqrt(rho) sigma sqrt(rho)``."""
    rho, sigma = _mat(rho), _mat(sigma)
    w, v = np.linalg.eigh(hermitize(rho))
    # round-off eigenvalues of rank-deficient inputs would otherwise add O(sqrt(eps)) terms
    w = np.where(w > EIG_FLOOR * max(w[-1], 1e-300), w, 0.0)
    sq = (v * np.sqrt(w)) @ v.conj().T
    inner = np.linalg.eigvalsh(hermitize(sq @ sigma @ sq))
    inner = np.where(inner > EIG_FLOOR * max(inner[-1], 1e-300), inner, 0.0)
    f = float(np.sqrt(inner).sum() ** 2)
    return min(max(f, 0.0), 1.0)


def one_minus_fidelity(rho, sigma) -> float:
    return 1.0 - fidelity(rho, sigma)


def mutual_information(state, noisy: SiteSubset, test: SiteSubset, basis: SectorBasis | None = None) -> float:
    """``S_N + S_T - S_NT``; overlapping subsets are merged without duplicates."""
    both = noisy.union(test)
    s_n = von_neumann_entropy(partial_trace(state, noisy, basis))
    s_t = von_neumann_entropy(partial_trace(state, test, basis))
    s_nt = von_neumann_entropy(partial_trace(state, both, basis))
    return s_n + s_t - s_nt


def purity(rho) -> float:
    m = _mat(rho)
    return float(np.real(np.sum(m * m.conj())))


def hs_distance_to_infinite_temperature(rho) -> tuple[float, float]:
    """``(Tr[rho^2] - 1/d, S_2)`` with ``S_2 = -ln Tr[rho^2]``."""
    m = _mat(rho)
    pur = purity(m)
    return pur - 1.0 / m.shape[0], float(-np.log(pur))


def energy_ratio(state, spectrum, reference) -> float:
    """``(E_max - <H>) / (E_max - E_th)``: 0 at the top eigenstate, 1 at the Gibbs energy.

    Energies are shifted to a traceless Hamiltonian; the ratio is shift invariant.
    """
    if np.ndim(state) == 0 and not isinstance(state, QuantumState):
        return energy_ratio_from_energy(float(state), spectrum, reference)
    if isinstance(state, QuantumState):
        e = spectrum.expectation(state.factor)
    elif np.ndim(state) == 1:
        e = spectrum.expectation(np.asarray(state))
    else:
        V = spectrum.vectors
        e = float(np.real(np.einsum("ii,i->", V.T.conj() @ np.asarray(state) @ V, spectrum.energies)))
    return energy_ratio_from_energy(e, spectrum, reference)


def energy_ratio_from_energy(e: float, spectrum, reference) -> float:
    """The energy ratio for a known mean energy ``e``."""
    shift = spectrum.energies.mean()
    top = spectrum.e_max - shift
    denom = top - (reference.energy - shift)
    if abs(denom) < 1e-14 * max(1.0, abs(top)):
        raise ZeroDivisionError("thermal energy equals the top of the spectrum")
    return float((top - (e - shift)) / denom)


def metric(name: str, rho, sigma) -> float:
    if name == "trace_dist":
        return trace_distance(rho, sigma)
    if name == "one_minus_fidelity":
        return one_minus_fidelity(rho, sigma)
    if name == "rel_entropy":
        return relative_entropy(rho, sigma)
    if name == "hs_dist":
        return hs_distance_to_infinite_temperature(rho)[0]
    if name == "renyi2":
        return hs_distance_to_infinite_temperature(rho)[1]
    raise ValueError(f"{name!r} is not a two-state distance")


def distance_series(series: np.ndarray, reference: np.ndarray, name: str = "trace_dist") -> np.ndarray:
    return np.array([metric(name, r, reference) for r in series])

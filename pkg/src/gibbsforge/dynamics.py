"""Exact evolution and the interleaved shock protocol."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .hilbert import SiteSubset, SubsetView
from .noise import (
    PauliChannelSpec,
    apply_kraus,
    apply_phase_flip,
    apply_unitary,
    pauli_channel_kraus,
    sample_haar_block,
)
from .spinmodel import Spectrum
from .states import BasisMismatchError, QuantumState

log = logging.getLogger(__name__)

EVENT_KINDS = ("haar", "phase_flip", "pauli", "unitary")


@dataclass(frozen=True)
class NoiseEvent:
    """One scheduled channel application.

    ``stream`` labels the RNG stream the event draws from; ``operator`` is
    only used by ``kind="unitary"`` (a fixed local unitary) and ``channel`` by
    ``kind="pauli"``.
    """

    kind: str
    sites: tuple[int, ...]
    probability: float = 0.0
    stream: int = 0
    operator: np.ndarray | None = field(default=None, compare=False, repr=False)
    channel: PauliChannelSpec | None = None

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}")
        object.__setattr__(self, "sites", tuple(int(s) for s in self.sites))

    @property
    def subset(self) -> SiteSubset:
        return SiteSubset(self.sites, "noisy")


@dataclass(frozen=True)
class EvolutionSchedule:
    """``n_steps`` uniform sample times on ``[0, t_max]``; events fire at ``shock_steps``.

    A shock at step ``s`` acts right after the state at ``times[s]`` is
    recorded, so noisy and plain records coincide up to and including ``s``.
    """

    t_max: float
    n_steps: int = 50
    shock_steps: tuple[int, ...] = ()
    events: tuple[NoiseEvent, ...] = ()

    def __post_init__(self):
        if not self.t_max > 0:
            raise ValueError("t_max must be positive")
        if self.n_steps < 2:
            raise ValueError("need at least two sample times")
        steps = tuple(int(s) for s in self.shock_steps)
        if list(steps) != sorted(steps):
            raise ValueError("shock steps must be sorted")
        if any(not 0 <= s < self.n_steps for s in steps):
            raise ValueError(f"shock steps must lie in [0, {self.n_steps})")
        if len(self.events) != len(steps):
            raise ValueError("one event per shock step")
        object.__setattr__(self, "shock_steps", steps)
        object.__setattr__(self, "events", tuple(self.events))

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_max, self.n_steps)

    @property
    def dt(self) -> float:
        return self.t_max / (self.n_steps - 1)

    def plain(self) -> "EvolutionSchedule":
        return EvolutionSchedule(self.t_max, self.n_steps)


@dataclass
class TrajectoryRecord:
    times: np.ndarray
    protocol: str
    seed: int | None
    reduced: dict[str, list[np.ndarray]]
    energies: np.ndarray
    states: list[QuantumState] | None = None
    mixed_from: int | None = None  # first step recorded in mixed representation

    def reduced_series(self, name: str) -> np.ndarray:
        return np.array(self.reduced[name])


def evolve_pure(psi: np.ndarray, spectrum: Spectrum, dt: float) -> np.ndarray:
    """``V exp(-i E dt) V^dagger psi``; also accepts a ``(dim, r)`` factor."""
    if psi.shape[0] != spectrum.dim:
        raise BasisMismatchError(f"state of dim {psi.shape[0]} vs spectrum of dim {spectrum.dim}")
    c = spectrum.to_eigenbasis(psi)
    phase = np.exp(-1j * spectrum.energies * dt)
    c = c * (phase if c.ndim == 1 else phase[:, None])
    return spectrum.from_eigenbasis(c)


def evolve_density(rho: np.ndarray, spectrum: Spectrum, dt: float) -> np.ndarray:
    if rho.shape != (spectrum.dim, spectrum.dim):
        raise BasisMismatchError(f"density matrix {rho.shape} vs spectrum of dim {spectrum.dim}")
    V = spectrum.vectors
    phase = np.exp(-1j * spectrum.energies * dt)
    r = V.T.conj() @ rho @ V
    r = phase[:, None] * r * phase.conj()[None, :]
    return V @ r @ V.T.conj()


def evolve_state(state: QuantumState, spectrum: Spectrum, dt: float) -> QuantumState:
    state.check_basis(spectrum.basis)
    return QuantumState(state.basis, evolve_pure(state.factor, spectrum, dt))


def event_rng(seed: int | None, stream: int, index: int) -> np.random.Generator:
    """Independent generator per (trajectory seed, event stream, event index)."""
    return np.random.default_rng(np.random.SeedSequence([0 if seed is None else seed, stream, index]))


def apply_event(state: QuantumState, event: NoiseEvent, rng: np.random.Generator) -> QuantumState:
    subset = event.subset
    if event.kind == "haar":
        return apply_unitary(state, sample_haar_block(subset, rng).matrix, subset)
    if event.kind == "unitary":
        return apply_unitary(state, event.operator, subset)
    if event.kind == "phase_flip":
        return apply_phase_flip(state, subset, event.probability)
    if event.kind == "pauli":
        ks = pauli_channel_kraus(event.channel)
        return apply_kraus(state, ks.operators, ks.support)
    raise ValueError(event.kind)


def run_protocol(
    psi0: QuantumState | np.ndarray,
    spectrum: Spectrum,
    schedule: EvolutionSchedule,
    subsets: Mapping[str, SiteSubset] | Sequence[SiteSubset] = (),
    seed: int | None = None,
    keep_states: bool = False,
) -> TrajectoryRecord:
    """Evolve between sample times and fire the scheduled events.

    Reduced density matrices on ``subsets`` and the energy are recorded at
    every sample time; full states only with ``keep_states``.
    """
    state = psi0 if isinstance(psi0, QuantumState) else QuantumState.pure(psi0, spectrum.basis)
    state.check_basis(spectrum.basis)
    if abs(state.trace() - 1) > 1e-10:
        raise ValueError(f"initial state has trace {state.trace()}")
    if not isinstance(subsets, Mapping):
        subsets = {"-".join(map(str, s.sites)): s for s in subsets}
    views = {name: SubsetView(spectrum.basis, s) for name, s in subsets.items()}
    times = schedule.times
    dt = schedule.dt
    reduced: dict[str, list[np.ndarray]] = {name: [] for name in views}
    energies = np.empty(len(times))
    kept = [] if keep_states else None
    fire = dict(zip(schedule.shock_steps, range(len(schedule.events))))
    mixed_from = None
    # work in the eigenbasis between shocks
    c = spectrum.to_eigenbasis(state.factor)
    phase = np.exp(-1j * spectrum.energies * dt)[:, None]
    for k in range(len(times)):
        if k > 0:
            c = phase * c
        factor = spectrum.from_eigenbasis(c)
        for name, view in views.items():
            reduced[name].append(view.reduce(factor))
        energies[k] = float(spectrum.energies @ np.sum(np.abs(c) ** 2, axis=1))
        if kept is not None:
            kept.append(QuantumState(state.basis, factor))
        if k in fire:
            ev = schedule.events[fire[k]]
            cur = QuantumState(state.basis, factor)
            new = apply_event(cur, ev, event_rng(seed, ev.stream, fire[k]))
            if new.rank > 1 and mixed_from is None:
                mixed_from = k + 1
                log.info("step %d: %s event mixes the state (rank %d)", k, ev.kind, new.rank)
            c = spectrum.to_eigenbasis(new.factor)
    protocol = "plain" if not schedule.events else ("shock" if len(schedule.events) == 1 else "cascade")
    return TrajectoryRecord(times, protocol, seed, reduced, energies, kept, mixed_from)

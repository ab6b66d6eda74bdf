"""End-to-end pipelines shared by the command line, the scripts and the acceptance suite.

Each pipeline turns an :class:`ExperimentConfig` plus a seed into plain
arrays. Models (basis, spectrum, thermal reference) are cached per
lattice, couplings and geometry so seed ensembles diagonalize once.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .analysis import (
    DecayFit,
    KappaRatio,
    SweepResult,
    default_fit_window,
    fit_decay,
    kappa_ratio,
    recurrence_score,
    run_sweep,
)
from .circuit import CircuitResult, default_n_steps, run_noisy_trajectories, trotterize
from .config import ExperimentConfig
from .dynamics import EvolutionSchedule, NoiseEvent, TrajectoryRecord, run_protocol
from .hilbert import LatticeSpec, SectorBasis, SiteSubset, enumerate_sector, full_basis, pattern_mask
from .metrology import (
    energy_ratio_from_energy,
    hs_distance_to_infinite_temperature,
    metric,
    von_neumann_entropy,
)
from .noise import PauliChannelSpec
from .spinmodel import (
    CouplingParams,
    Spectrum,
    ThermalReference,
    build_hamiltonian,
    diagonalize,
    model_spectrum,
    solve_beta_star,
    thermal_reduced,
)
from .states import QuantumState

log = logging.getLogger(__name__)

PLACEMENT_STREAM = 7  # RNG stream label for noisy-site placement
RECORD_POINTS = 80  # circuit samples recorded when record_every is left at 0


# models -------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Model:
    params: CouplingParams
    basis: SectorBasis
    spectrum: Spectrum
    psi0: QuantumState
    reference: ThermalReference
    test: SiteSubset
    thermal: np.ndarray  # thermal state reduced onto the test subset
    initial: SiteSubset


@lru_cache(maxsize=8)
def _spectrum(L: int, p: int, params: CouplingParams) -> tuple[SectorBasis, Spectrum]:
    basis = enumerate_sector(LatticeSpec(L, p))
    log.info("diagonalizing L=%d p=%d (dim %d) with %s", L, p, basis.dim, params)
    return basis, model_spectrum(params, basis)


def build_model(cfg: ExperimentConfig) -> Model:
    L, p = cfg.lattice.L, cfg.lattice.p
    params = cfg.couplings.params()
    basis, spectrum = _spectrum(L, p, params)
    initial = SiteSubset(cfg.initial_sites(), "initial")
    test = SiteSubset(cfg.test_sites(), "test")
    psi0 = QuantumState.product(pattern_mask(initial.sites), basis)
    e0 = spectrum.expectation(psi0.factor)
    reference = solve_beta_star(spectrum, e0)
    thermal = thermal_reduced(reference, test, cfg.fit.reference, params)
    return Model(params, basis, spectrum, psi0, reference, test, thermal, initial)


# protocol construction ----------------------------------------------------


def placement_window(L: int, initial: list[int], size: int) -> list[int]:
    """The ``size`` sites closest to the initial excitation (ties to the lower index)."""
    dist = [min(abs(s - i) for i in initial) for s in range(L)]
    return sorted(sorted(range(L), key=lambda s: (dist[s], s))[:size])


def noisy_sites_for(cfg: ExperimentConfig, seed: int) -> list[int]:
    """Explicit ``noise.sites`` or a seeded draw of ``n_sites`` from the placement window."""
    if cfg.noise.sites:
        return list(cfg.noise.sites)
    window = placement_window(cfg.lattice.L, cfg.initial_sites(), cfg.noise.window)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.master_seed, seed, PLACEMENT_STREAM]))
    return sorted(int(s) for s in rng.choice(window, cfg.noise.n_sites, replace=False))


def trajectory_seed(cfg: ExperimentConfig, seed: int) -> int:
    """Event-stream seed for trajectory ``seed`` under the config's master seed."""
    return int(np.random.SeedSequence([cfg.master_seed, seed]).generate_state(1)[0])


def shock_steps(cfg: ExperimentConfig) -> list[int]:
    """Listed shock steps, or ``n_shocks`` evenly spread from the first listed step."""
    s = cfg.schedule
    if s.n_shocks == 1:
        return sorted(set(s.shock_steps))
    start = s.shock_steps[0] if s.shock_steps else 0
    last = s.n_steps - 2
    if s.n_shocks > last - start + 1:
        raise ValueError(f"{s.n_shocks} shocks do not fit between steps {start} and {last}")
    steps = np.unique(np.round(np.linspace(start, last, s.n_shocks)).astype(int))
    return [int(k) for k in steps]


def make_event(cfg: ExperimentConfig, sites: list[int], stream: int = 0) -> NoiseEvent:
    n = cfg.noise
    if n.kind == "haar":
        return NoiseEvent("haar", tuple(sites), stream=stream)
    if n.kind == "phase_flip":
        return NoiseEvent("phase_flip", tuple(sites), n.probability, stream)
    if n.kind == "pauli":
        support = n.pauli_sites or sites
        spec = PauliChannelSpec.from_config(
            {"sites": support, "strings": n.pauli_strings, "probs": n.pauli_probs}
        )
        return NoiseEvent("pauli", tuple(support), stream=stream, channel=spec)
    raise ValueError(f"noise kind {n.kind!r} has no event")


def make_schedule(cfg: ExperimentConfig, sites: list[int] | None) -> EvolutionSchedule:
    s = cfg.schedule
    if cfg.noise.kind == "none" or sites is None:
        return EvolutionSchedule(s.t_max, s.n_steps)
    steps = shock_steps(cfg)
    events = tuple(make_event(cfg, sites, stream=k) for k in range(len(steps)))
    return EvolutionSchedule(s.t_max, s.n_steps, tuple(steps), events)


def fit_window(cfg: ExperimentConfig, times: np.ndarray) -> tuple[float, float]:
    lo, hi = default_fit_window(times, shock_steps(cfg))
    if cfg.fit.t_lo is not None:
        lo = cfg.fit.t_lo
    if cfg.fit.t_hi is not None:
        hi = cfg.fit.t_hi
    return lo, hi


# metric series ------------------------------------------------------------


def metric_series(record: TrajectoryRecord, model: Model, name: str, noisy: SiteSubset | None = None) -> np.ndarray:
    """One metric over the recorded samples of ``record``."""
    if name == "energy_ratio":
        return np.array([energy_ratio_from_energy(e, model.spectrum, model.reference) for e in record.energies])
    if name == "mutual_info":
        if noisy is None:
            raise ValueError("mutual information needs a noisy subset")
        return mi_series(record, "N", "T", "NT")
    series = record.reduced_series("T")
    if name == "hs_dist":
        return np.array([hs_distance_to_infinite_temperature(r)[0] for r in series])
    if name == "renyi2":
        return np.array([hs_distance_to_infinite_temperature(r)[1] for r in series])
    return np.array([metric(name, r, model.thermal) for r in series])


def mi_series(record: TrajectoryRecord, n: str, t: str, nt: str) -> np.ndarray:
    sn = [von_neumann_entropy(r) for r in record.reduced[n]]
    st = [von_neumann_entropy(r) for r in record.reduced[t]]
    snt = [von_neumann_entropy(r) for r in record.reduced[nt]]
    return np.array(sn) + np.array(st) - np.array(snt)


def _subsets(model: Model, noisy: SiteSubset | None) -> dict[str, SiteSubset]:
    subs = {"T": model.test}
    if noisy is not None:
        subs["N"] = noisy
        subs["NT"] = noisy.union(model.test)
    return subs


# thermalization -----------------------------------------------------------


@dataclass
class ThermalizeResult:
    times: np.ndarray
    seed: int
    noisy_sites: list[int]
    window: tuple[float, float]
    plain: dict[str, np.ndarray]
    noisy: dict[str, np.ndarray]
    plain_fit: DecayFit
    noisy_fit: DecayFit
    ratio: KappaRatio
    plain_energy: np.ndarray
    noisy_energy: np.ndarray
    beta_star: float
    mixed_from: int | None = None
    extras: dict = field(default_factory=dict)


def plain_record(cfg: ExperimentConfig, model: Model, noisy: SiteSubset | None = None) -> TrajectoryRecord:
    return run_protocol(model.psi0, model.spectrum, make_schedule(cfg, None), _subsets(model, noisy))


def thermalize(
    cfg: ExperimentConfig,
    seed: int,
    model: Model | None = None,
    plain: TrajectoryRecord | None = None,
) -> ThermalizeResult:
    """Plain and noisy runs from the same initial state, with decay fits on ``fit.metric``."""
    model = model or build_model(cfg)
    sites = noisy_sites_for(cfg, seed)
    noisy_sub = SiteSubset(sites, "noisy")
    subs = _subsets(model, noisy_sub)
    if plain is None or not set(subs) <= set(plain.reduced):
        plain = run_protocol(model.psi0, model.spectrum, make_schedule(cfg, None), subs)
    sched = make_schedule(cfg, sites)
    rec = run_protocol(model.psi0, model.spectrum, sched, subs, seed=trajectory_seed(cfg, seed))
    times = rec.times
    metrics = list(dict.fromkeys(list(cfg.metrics) + [cfg.fit.metric]))
    p_series = {m: metric_series(plain, model, m, noisy_sub) for m in metrics}
    n_series = {m: metric_series(rec, model, m, noisy_sub) for m in metrics}
    window = fit_window(cfg, times)
    fm = cfg.fit.metric
    pf = fit_decay(times, p_series[fm], window, f"plain/{fm}")
    nf = fit_decay(times, n_series[fm], window, f"noisy/{fm}/seed{seed}")
    return ThermalizeResult(
        times,
        seed,
        sites,
        window,
        p_series,
        n_series,
        pf,
        nf,
        kappa_ratio(nf, pf),
        plain.energies,
        rec.energies,
        model.reference.beta_star,
        rec.mixed_from,
    )


def thermalize_ensemble(cfg: ExperimentConfig, seeds=None, executor=None) -> list[ThermalizeResult]:
    """One :func:`thermalize` per seed; results come back in seed order."""
    model = build_model(cfg)
    seeds = list(cfg.seeds if seeds is None else seeds)
    if executor is None:
        return [thermalize(cfg, s, model) for s in seeds]
    return list(executor.map(lambda s: thermalize(cfg, s, model), seeds))


# mutual information -------------------------------------------------------


@dataclass
class MIResult:
    times: np.ndarray
    name: str
    sites: list[int]
    plain: np.ndarray
    noisy: np.ndarray  # (n_seeds, n_times)
    seeds: list[int]


def mutual_information_runs(cfg: ExperimentConfig, seeds=None) -> list[MIResult]:
    """Mutual information between each named noisy subset and the test subset."""
    model = build_model(cfg)
    seeds = list(cfg.seeds if seeds is None else seeds)
    groups = cfg.subsets.noisy or {"N": noisy_sites_for(cfg, seeds[0])}
    out = []
    for name, sites in groups.items():
        sub = SiteSubset(sites, "noisy")
        subs = _subsets(model, sub)
        plain = run_protocol(model.psi0, model.spectrum, make_schedule(cfg, None), subs)
        sched = make_schedule(cfg, list(sites))
        noisy = []
        for s in seeds:
            rec = run_protocol(model.psi0, model.spectrum, sched, subs, seed=trajectory_seed(cfg, s))
            noisy.append(mi_series(rec, "N", "T", "NT"))
        out.append(MIResult(plain.times, name, list(sites), mi_series(plain, "N", "T", "NT"), np.array(noisy), seeds))
    return out


# circuit ------------------------------------------------------------------


@dataclass
class CircuitRun:
    times: np.ndarray
    noiseless: dict[str, np.ndarray]
    noisy: dict[str, np.ndarray]
    recurrences_noiseless: tuple[int, float] | None
    recurrences_noisy: tuple[int, float] | None
    beta_star: float
    n_steps: int
    n_traj: int
    gates_per_step: int
    dump: str = ""


def _recurrences(series: np.ndarray, times: np.ndarray, min_points: int = 10):
    """Recurrence score over the late window ``t >= t_max / 5``, or ``None`` when it is too short."""
    late = np.asarray(series)[times >= times[-1] / 5]
    return recurrence_score(late) if len(late) >= min_points else None


@lru_cache(maxsize=4)
def _full_spectrum(n: int, params: CouplingParams) -> Spectrum:
    basis = full_basis(n)
    return diagonalize(build_hamiltonian(params, basis), basis)


def circuit_run(cfg: ExperimentConfig, seed: int | None = None) -> CircuitRun:
    """Noiseless and per-gate phase-flip Trotter circuits against the full-space Gibbs state."""
    c = cfg.circuit
    n = c.n_qubits
    params = cfg.couplings.params()
    n_steps = c.n_steps or default_n_steps(params, c.t_max, c.order)
    every = c.record_every or max(1, n_steps // RECORD_POINTS)
    init = pattern_mask(c.initial)
    test = SiteSubset(c.test or list(range(max(n - 3, 0), n)), "test")
    spectrum = _full_spectrum(n, params)
    e0 = float(spectrum.hamiltonian[init, init])
    reference = solve_beta_star(spectrum, e0)
    thermal = thermal_reduced(reference, test, cfg.fit.reference, params)
    circ = trotterize(params, n, c.t_max, n_steps, 0.0, init, c.order)
    seed = cfg.master_seed if seed is None else seed
    clean = run_noisy_trajectories(circ, {"T": test}, 1, seed, record_every=every)
    noisy = run_noisy_trajectories(
        circ.with_noise(c.noise_p), {"T": test}, c.n_traj, seed, batch=c.batch, record_every=every
    )

    def series(res: CircuitResult) -> dict[str, np.ndarray]:
        rs = res.reduced["T"]
        return {m: np.array([metric(m, r, thermal) for r in rs]) for m in ("trace_dist", "one_minus_fidelity")}

    s_clean, s_noisy = series(clean), series(noisy)
    fm = "one_minus_fidelity"
    return CircuitRun(
        clean.times,
        s_clean,
        s_noisy,
        _recurrences(s_clean[fm], clean.times),
        _recurrences(s_noisy[fm], clean.times),
        reference.beta_star,
        n_steps,
        c.n_traj,
        len(circ.gates),
        circ.dump(),
    )


# sweeps -------------------------------------------------------------------


def sweep_config(cfg: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    if axis == "frequency":
        return cfg.replace(**{"schedule.n_shocks": int(value)})
    if axis == "n_noisy_sites":
        return cfg.replace(**{"noise.n_sites": int(value), "noise.window": max(cfg.noise.window, int(value))})
    if axis == "L":
        return cfg.replace(**{"lattice.L": int(value), "subsets.initial": [], "subsets.test": []})
    if axis == "probability":
        return cfg.replace(**{"noise.probability": float(value)})
    if axis == "J_perp":
        return cfg.replace(**{"couplings.J_perp": float(value)})
    raise ValueError(f"unknown sweep axis {axis!r}")


def sweep(cfg: ExperimentConfig, axis: str | None = None, grid=None, seeds=None, executor=None) -> SweepResult:
    """Kappa ratios over the grid; the diagonalized model per grid point is shared by its seeds."""
    axis = axis or cfg.sweep.axis
    grid = list(cfg.sweep.grid if grid is None else grid)
    seeds = list(cfg.seeds if seeds is None else seeds)
    cache: dict = {}
    lock = threading.Lock()

    def point(value, seed):
        with lock:
            if value not in cache:
                sub = sweep_config(cfg, axis, value)
                cache[value] = (sub, build_model(sub))
        sub, model = cache[value]
        res = thermalize(sub, seed, model)
        return res.noisy_fit.kappa, res.plain_fit.kappa

    return run_sweep(axis, grid, point, seeds, executor)

"""Command line: ``gibbsforge {spectrum,thermalize,mi,circuit,sweep,plot}``.

Exit status is 0 only when every requested output was written. Failures
print a one-line JSON error report to stderr (and ``error.json`` in the
run directory when one exists) and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .analysis import PLAIN_NON_THERMALIZING, iqr, recurrence_score
from .config import ConfigError, ExperimentConfig, load_config, validate
from .runio import RunDirectory, metric_rows, read_metric_csv
from .spinmodel import density_of_states
from .svgplot import Figure

log = logging.getLogger("gibbsforge")

COMMANDS = ("spectrum", "thermalize", "mi", "circuit", "sweep", "plot")
FORMATS = ("csv", "json", "svg")
ENV_THREADS = "GIBBSFORGE_THREADS"


class PartialFailure(RuntimeError):
    pass


def resolve_threads(flag: int | None) -> int:
    """Flag beats environment; default is the available parallelism."""
    if flag is not None:
        n = flag
    elif os.environ.get(ENV_THREADS):
        try:
            n = int(os.environ[ENV_THREADS])
        except ValueError as exc:
            raise ConfigError(f"{ENV_THREADS} must be an integer") from exc
    else:
        n = len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)
    if n < 1:
        raise ConfigError("thread count must be at least 1")
    return n


def parse_formats(text: str) -> set[str]:
    out = {f.strip() for f in text.split(",") if f.strip()}
    bad = out - set(FORMATS)
    if bad:
        raise ConfigError(f"unknown format(s) {sorted(bad)}; choose from {FORMATS}")
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gibbsforge", description="Noise-accelerated Gibbs-state preparation experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", type=Path, help="TOML experiment config")
        s.add_argument("--seed", type=int, help="master seed (overrides the config)")
        s.add_argument("--threads", type=int, help=f"worker threads (overrides ${ENV_THREADS})")
        s.add_argument("--out", type=Path, default=Path("runs") / name, help="run directory")
        s.add_argument("--format", default="csv,json", help="comma list of csv, json, svg")
        s.add_argument("-v", "--verbose", action="store_true")
        if name == "plot":
            s.add_argument("source", type=Path, help="metric CSV or sweep JSON to render")
            s.add_argument("--metric", help="metric to plot from a metric CSV")
            s.add_argument("--log", action="store_true", help="logarithmic y axis")
    return p


# commands -----------------------------------------------------------------


def cmd_spectrum(cfg: ExperimentConfig, run: RunDirectory, formats: set[str], threads: int) -> None:
    from .experiments import build_model

    model = build_model(cfg)
    sp = model.spectrum
    energy, dens = density_of_states(sp.energies)
    ref = model.reference
    summary = {
        "L": cfg.lattice.L,
        "p": cfg.lattice.p,
        "dim": sp.dim,
        "beta_star": ref.beta_star,
        "target_energy": ref.target_energy,
        "thermal_energy": ref.energy,
        "log_z": ref.log_z,
        "mean_energy": float(sp.energies.mean()),
        "infinite_temperature": ref.infinite_temperature,
        "e_min": sp.e_min,
        "e_max": sp.e_max,
    }
    if "csv" in formats:
        run.write_csv("spectrum.csv", enumerate(sp.energies.tolist()), ("index", "eigenvalue"))
        run.write_csv("dos.csv", zip(energy.tolist(), dens.tolist()), ("energy", "scaled_density"))
    if "json" in formats:
        run.write_json("beta_star.json", summary)
    if "svg" in formats:
        fig = Figure(f"Density of states, L={cfg.lattice.L} p={cfg.lattice.p}", "energy", "levels per unit energy")
        fig.line(energy, dens, "KDE")
        fig.vline(ref.target_energy, f"E0 (beta*={ref.beta_star:.3g})")
        run.write_text("dos.svg", fig.render())


def _executor(threads: int):
    return ThreadPoolExecutor(max_workers=threads) if threads > 1 else None


def cmd_thermalize(cfg: ExperimentConfig, run: RunDirectory, formats: set[str], threads: int) -> None:
    from .experiments import thermalize_ensemble

    results = thermalize_ensemble(cfg, executor=_executor(threads))
    rows = []
    first = results[0]
    for m, series in first.plain.items():
        rows += metric_rows(first.times, series, "T", m, "plain", None)
    protocol = "shock" if cfg.schedule.n_shocks == 1 and len(cfg.schedule.shock_steps) == 1 else "cascade"
    for res in results:
        for m, series in res.noisy.items():
            rows += metric_rows(res.times, series, "T", m, protocol, res.seed)
    fits = {
        "beta_star": first.beta_star,
        "metric": cfg.fit.metric,
        "window": first.window,
        "plain": first.plain_fit.to_dict(),
        "noisy": [
            {
                "seed": r.seed,
                "noisy_sites": r.noisy_sites,
                **r.noisy_fit.to_dict(),
                "ratio": r.ratio.ratio,
                "ratio_uncertainty": r.ratio.uncertainty,
                "marker": r.ratio.marker,
            }
            for r in results
        ],
    }
    ratios = [r.ratio.ratio for r in results if r.ratio.ratio is not None]
    fits["ratio_median"] = float(np.median(ratios)) if ratios else None
    fits["ratio_iqr"] = iqr(ratios) if ratios else None
    fits["plain_flag"] = PLAIN_NON_THERMALIZING if first.ratio.marker else None
    late = first.plain[cfg.fit.metric][first.times >= first.window[0]]
    fits["plain_recurrences"] = recurrence_score(late) if len(late) >= 10 else None
    if "csv" in formats:
        run.write_csv("metrics.csv", rows)
    if "json" in formats:
        run.write_json("fits.json", fits)
    if "svg" in formats:
        fm = cfg.fit.metric
        fig = Figure(f"{cfg.name}: {fm}", "time", fm, logy=cfg.plot_log)
        fig.line(first.times, first.plain[fm], "plain", dashed=True)
        stack = np.array([r.noisy[fm] for r in results])
        fig.line(first.times, np.median(stack, axis=0), f"noisy (median of {len(results)})")
        run.write_text("thermalize.svg", fig.render())


def cmd_mi(cfg: ExperimentConfig, run: RunDirectory, formats: set[str], threads: int) -> None:
    from .experiments import mutual_information_runs

    results = mutual_information_runs(cfg)
    rows = []
    summary = []
    for r in results:
        rows += metric_rows(r.times, r.plain, r.name, "mutual_info", "plain", None)
        for s, series in zip(r.seeds, r.noisy):
            rows += metric_rows(r.times, series, r.name, "mutual_info", "shock", s)
        med = np.median(r.noisy, axis=0)
        summary.append(
            {
                "name": r.name,
                "sites": r.sites,
                "test": cfg.test_sites(),
                "noisy_median": med,
                "noisy_iqr": np.percentile(r.noisy, 75, axis=0) - np.percentile(r.noisy, 25, axis=0),
                "plain": r.plain,
            }
        )
    if "csv" in formats:
        run.write_csv("mi.csv", rows)
    if "json" in formats:
        run.write_json("mi.json", {"times": results[0].times, "pairs": summary})
    if "svg" in formats:
        fig = Figure(f"{cfg.name}: mutual information", "time", "I(N:T)")
        for k, r in enumerate(results):
            fig.line(r.times, np.median(r.noisy, axis=0), f"{r.name} noisy")
            fig.line(r.times, r.plain, f"{r.name} plain", dashed=True)
        run.write_text("mi.svg", fig.render())


def _rec(score):
    return None if score is None else {"count": score[0], "mean_prominence": score[1]}


def cmd_circuit(cfg: ExperimentConfig, run: RunDirectory, formats: set[str], threads: int) -> None:
    from .experiments import circuit_run

    res = circuit_run(cfg)
    rows = []
    for m in res.noiseless:
        rows += metric_rows(res.times, res.noiseless[m], "T", m, "noiseless", None)
        rows += metric_rows(res.times, res.noisy[m], "T", m, "noisy", cfg.master_seed)
    report = {
        "beta_star": res.beta_star,
        "n_steps": res.n_steps,
        "gates_per_step": res.gates_per_step,
        "n_traj": res.n_traj,
        "noise_p": cfg.circuit.noise_p,
        "recurrences_noiseless": _rec(res.recurrences_noiseless),
        "recurrences_noisy": _rec(res.recurrences_noisy),
        "final_one_minus_fidelity": {
            "noiseless": float(res.noiseless["one_minus_fidelity"][-1]),
            "noisy": float(res.noisy["one_minus_fidelity"][-1]),
        },
    }
    run.write_text("circuit_dump.txt", res.dump)
    if "csv" in formats:
        run.write_csv("circuit.csv", rows)
    if "json" in formats:
        run.write_json("recurrence.json", report)
    if "svg" in formats:
        fig = Figure(f"{cfg.name}: circuit", "time", "1 - F")
        fig.line(res.times, res.noiseless["one_minus_fidelity"], "noiseless", dashed=True)
        fig.line(res.times, res.noisy["one_minus_fidelity"], f"p={cfg.circuit.noise_p}")
        run.write_text("circuit.svg", fig.render())


def cmd_sweep(cfg: ExperimentConfig, run: RunDirectory, formats: set[str], threads: int) -> None:
    from .experiments import sweep

    result = sweep(cfg, executor=_executor(threads))
    raw = []
    for pt in result.points:
        for kn, kp in zip(pt.kappas_noisy, pt.kappas_plain):
            raw.append((pt.value, kn, kp, kn / kp if kp > 0 else float("nan")))
    if "json" in formats:
        run.write_json("sweep.json", result.to_dict())
    if "csv" in formats:
        run.write_csv("sweep.csv", raw, ("value", "kappa_noisy", "kappa_plain", "ratio"))
    if "svg" in formats:
        fig = Figure(f"{cfg.name}: {result.axis} sweep", result.axis, "kappa_noisy / kappa_plain")
        fig.line(result.values, result.medians, "median", markers=True, err=result.iqrs / 2)
        run.write_text("sweep.svg", fig.render())
    errors = [f for pt in result.points for f in pt.flags if f.startswith("error")]
    if errors:
        raise PartialFailure(f"{len(errors)} sweep job(s) failed: {errors[0]}")


def cmd_plot(args, run: RunDirectory) -> None:
    src = args.source
    if src.suffix == ".json":
        doc = json.loads(src.read_text())
        if "points" not in doc:
            raise ConfigError(f"{src} is not a sweep result")
        x = [p["value"] for p in doc["points"]]
        y = [np.nan if p["ratio_median"] is None else p["ratio_median"] for p in doc["points"]]
        e = [0.0 if p["ratio_iqr"] is None else p["ratio_iqr"] / 2 for p in doc["points"]]
        fig = Figure(f"{doc['axis']} sweep", doc["axis"], "kappa_noisy / kappa_plain", logy=args.log)
        fig.line(x, y, "median", markers=True, err=np.array(e))
    else:
        rows = read_metric_csv(src)
        metrics = sorted({r["metric"] for r in rows})
        name = args.metric or metrics[0]
        if name not in metrics:
            raise ConfigError(f"metric {name!r} not in {src}; available {metrics}")
        fig = Figure(f"{src.stem}: {name}", "time", name, logy=args.log)
        groups: dict[tuple, list] = {}
        for r in rows:
            if r["metric"] == name:
                groups.setdefault((r["subset"], r["protocol"], r["seed"]), []).append((r["time"], r["value"]))
        for (subset, protocol, seed), pts in groups.items():
            pts.sort()
            label = f"{subset} {protocol}" + ("" if seed < 0 else f" s{seed}")
            fig.line([t for t, _ in pts], [v for _, v in pts], label, dashed=protocol in ("plain", "noiseless"))
    run.write_text(src.stem + ".svg", fig.render())


HANDLERS = {
    "spectrum": cmd_spectrum,
    "thermalize": cmd_thermalize,
    "mi": cmd_mi,
    "circuit": cmd_circuit,
    "sweep": cmd_sweep,
}


def _report(kind: str, exc: BaseException, run: RunDirectory | None) -> None:
    err = {"status": "error", "kind": kind, "type": type(exc).__name__, "message": str(exc)}
    print(json.dumps(err), file=sys.stderr)
    if run is not None:
        run.manifest.errors.append(str(exc))
        try:
            run.write_json("error.json", err)
            run.finish()
        except OSError:
            pass


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    run = None
    try:
        formats = parse_formats(args.format)
        threads = resolve_threads(args.threads)
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        if args.seed is not None:
            cfg.master_seed = args.seed
        validate(cfg)
        run = RunDirectory(args.out, cfg.digest(), cfg.master_seed)
        run.write_json("config.json", {"resolved": cfg.to_dict(), "threads": threads, "formats": sorted(formats)})
        if args.command == "plot":
            cmd_plot(args, run)
        else:
            HANDLERS[args.command](cfg, run, formats, threads)
        run.finish()
    except ConfigError as exc:
        _report("config", exc, run)
        return 2
    except PartialFailure as exc:
        _report("partial", exc, run)
        return 1
    except Exception as exc:  # noqa: BLE001 - reported, not swallowed
        log.debug("failure", exc_info=True)
        _report("runtime", exc, run)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

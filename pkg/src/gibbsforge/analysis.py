"""Decay-rate fits, recurrence counting and the scaling sweeps."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import least_squares
from scipy.signal import find_peaks

log = logging.getLogger(__name__)

FLAT_KAPPA = 0.02  # rates below this (1/time) count as "no decay"
FLAT_REL_RANGE = 1e-6


class FitError(RuntimeError):
    pass


@dataclass(frozen=True)
class DecayFit:
    kappa: float
    amplitude: float
    offset: float
    window: tuple[float, float]
    rms: float
    series_id: str = ""
    flat: bool = False
    kappa_err: float = float("nan")

    def model(self, t) -> np.ndarray:
        return self.amplitude * np.exp(-self.kappa * (np.asarray(t) - self.window[0])) + self.offset

    def to_dict(self) -> dict:
        return {
            "series_id": self.series_id,
            "kappa": self.kappa,
            "kappa_err": self.kappa_err,
            "amplitude": self.amplitude,
            "offset": self.offset,
            "t_lo": self.window[0],
            "t_hi": self.window[1],
            "rms": self.rms,
            "flat": self.flat,
        }


def _initial_guess(t: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """Offset from the tail, then a log-linear fit of the remainder."""
    n = len(y)
    tail = y[-max(2, n // 5):]
    rising = y[-1] > y[0]
    c = tail.max() + 1e-3 * np.ptp(y) if rising else tail.min() - 1e-3 * np.ptp(y)
    r = y - c
    sign = np.sign(r[0]) if r[0] != 0 else 1.0
    r = np.abs(r)
    good = r > 1e-12 * max(np.abs(y).max(), 1e-300)
    if good.sum() >= 2:
        slope, icpt = np.polyfit(t[good], np.log(r[good]), 1)
        k = max(-slope, 1e-3)
        a = sign * np.exp(icpt)
    else:
        k, a = 1.0 / max(np.ptp(t), 1e-12), y[0] - c
    return a, k, c


def fit_decay(
    t: Sequence[float],
    y: Sequence[float],
    window: tuple[float, float] | None = None,
    series_id: str = "",
    min_points: int = 6,
) -> DecayFit:
    """Least-squares fit of ``A exp(-kappa (t - t_lo)) + C`` on ``window``.

    Initialization from an offset estimate and a log-linear fit, refined
    by Levenberg-Marquardt (damped Gauss-Newton). A series with no
    measurable variation returns ``kappa = 0`` flagged flat.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if window is None:
        window = (t[0], t[-1])
    sel = (t >= window[0] - 1e-12) & (t <= window[1] + 1e-12)
    tw, yw = t[sel], y[sel]
    if len(tw) < min_points:
        raise FitError(f"need {min_points} points in window, got {len(tw)}")
    t0 = tw[0]
    win = (float(tw[0]), float(tw[-1]))
    scale = max(np.abs(yw).max(), 1e-300)
    if np.ptp(yw) <= FLAT_REL_RANGE * scale:
        return DecayFit(0.0, 0.0, float(yw.mean()), win, float(yw.std()), series_id, True, 0.0)
    a0, k0, c0 = _initial_guess(tw - t0, yw)
    span = tw[-1] - t0

    def resid(x):
        a, logk, c = x
        return (a * np.exp(-np.exp(logk) * (tw - t0)) + c - yw) / scale

    starts = [(a0, np.log(k0), c0)]
    for k in (0.3 / span, 3.0 / span, 30.0 / span):
        starts.append((yw[0] - yw[-1], np.log(k), yw[-1]))
    best = None
    for x0 in starts:
        try:
            sol = least_squares(resid, x0, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=20000)
        except ValueError:
            continue
        if np.all(np.isfinite(sol.x)) and (best is None or sol.cost < best.cost):
            best = sol
    if best is None:
        raise FitError(f"decay fit failed for {series_id!r}")
    a, logk, c = best.x
    kappa = float(np.exp(logk))
    rms = float(np.sqrt(np.mean((best.fun * scale) ** 2)))
    err = float("nan")
    try:
        jac = best.jac * scale
        dof = max(len(tw) - 3, 1)
        cov = np.linalg.pinv(jac.T @ jac) * (rms**2 * len(tw) / dof)
        err = float(kappa * np.sqrt(max(cov[1, 1], 0.0)))
    except np.linalg.LinAlgError:
        pass
    flat = kappa < FLAT_KAPPA or abs(a) < 1e-9 * scale
    return DecayFit(kappa, float(a), float(c), win, rms, series_id, bool(flat), err)


@dataclass(frozen=True)
class KappaRatio:
    ratio: float | None
    uncertainty: float | None
    marker: str | None = None
    kappa_noisy: float = float("nan")
    kappa_plain: float = float("nan")


PLAIN_NON_THERMALIZING = "plain-non-thermalizing"


def kappa_ratio(noisy: DecayFit, plain: DecayFit, flat_threshold: float = FLAT_KAPPA) -> KappaRatio:
    """``kappa_noisy / kappa_plain`` with propagated fit uncertainty.

    Returns a marker instead of a ratio when the plain series does not decay.
    """
    if plain.flat or plain.kappa < flat_threshold:
        return KappaRatio(None, None, PLAIN_NON_THERMALIZING, noisy.kappa, plain.kappa)
    r = noisy.kappa / plain.kappa
    rel = np.hypot(
        noisy.kappa_err / noisy.kappa if noisy.kappa else 0.0,
        plain.kappa_err / plain.kappa,
    )
    return KappaRatio(float(r), float(r * rel) if np.isfinite(rel) else None, None, noisy.kappa, plain.kappa)


def recurrence_score(
    series: Sequence[float],
    window: slice | tuple[int, int] | None = None,
    prominence: float = 0.1,
    min_points: int = 10,
) -> tuple[int, float]:
    """Count local maxima whose prominence exceeds ``prominence`` times the series range.

    Returns ``(count, mean prominence)``; ``(0, 0.0)`` when there are none.
    """
    y = np.asarray(series, dtype=float)
    if window is not None:
        y = y[window if isinstance(window, slice) else slice(*window)]
    if len(y) < min_points:
        raise ValueError(f"recurrence window needs {min_points} points, got {len(y)}")
    rng = np.ptp(y)
    if rng == 0:
        return 0, 0.0
    peaks, props = find_peaks(y, prominence=prominence * rng)
    if len(peaks) == 0:
        return 0, 0.0
    return int(len(peaks)), float(np.mean(props["prominences"]))


def default_fit_window(times: np.ndarray, shock_steps: Sequence[int]) -> tuple[float, float]:
    """One sample after a single shock; ``t_max / 5`` for cascades and plain runs."""
    if len(shock_steps) == 1:
        return float(times[min(shock_steps[0] + 1, len(times) - 1)]), float(times[-1])
    return float(times[-1] / 5), float(times[-1])


def iqr(x: Sequence[float]) -> float:
    q75, q25 = np.percentile(np.asarray(x, dtype=float), [75, 25])
    return float(q75 - q25)


@dataclass
class SweepPoint:
    value: float
    ratios: list[float]
    flags: list[str] = field(default_factory=list)
    kappas_noisy: list[float] = field(default_factory=list)
    kappas_plain: list[float] = field(default_factory=list)

    @property
    def n_seeds(self) -> int:
        return len(self.ratios)

    @property
    def ratio_median(self) -> float:
        return float(np.median(self.ratios)) if self.ratios else float("nan")

    @property
    def ratio_iqr(self) -> float:
        return iqr(self.ratios) if self.ratios else float("nan")

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "ratio_median": self.ratio_median,
            "ratio_iqr": self.ratio_iqr,
            "n_seeds": self.n_seeds,
            "flags": sorted(set(self.flags)),
        }


@dataclass
class SweepResult:
    axis: str
    points: list[SweepPoint]

    @property
    def values(self) -> np.ndarray:
        return np.array([p.value for p in self.points])

    @property
    def medians(self) -> np.ndarray:
        return np.array([p.ratio_median for p in self.points])

    @property
    def iqrs(self) -> np.ndarray:
        return np.array([p.ratio_iqr for p in self.points])

    def to_dict(self) -> dict:
        return {"axis": self.axis, "points": [p.to_dict() for p in self.points]}


def run_sweep(
    axis: str,
    grid: Sequence[float],
    point_fn: Callable[[float, int], tuple[float, float]],
    seeds: Sequence[int],
    executor=None,
) -> SweepResult:
    """Evaluate ``point_fn(value, seed) -> (kappa_noisy, kappa_plain)`` over the grid.

    Failures at a point are recorded as flags and the sweep continues.
    ``executor`` (a ``concurrent.futures`` executor) runs jobs concurrently;
    aggregation order follows the grid and seed lists regardless.
    """
    if len(grid) == 0:
        raise ValueError("empty sweep grid")
    jobs = [(v, s) for v in grid for s in seeds]
    if executor is None:
        outcomes = [_guarded(point_fn, v, s) for v, s in jobs]
    else:
        futures = [executor.submit(_guarded, point_fn, v, s) for v, s in jobs]
        outcomes = [f.result() for f in futures]
    points = {v: SweepPoint(float(v), []) for v in grid}
    for (v, s), out in zip(jobs, outcomes):
        pt = points[v]
        if isinstance(out, str):
            pt.flags.append(out)
            continue
        kn, kp = out
        pt.kappas_noisy.append(kn)
        pt.kappas_plain.append(kp)
        if kp < FLAT_KAPPA:
            pt.flags.append(PLAIN_NON_THERMALIZING)
            continue
        pt.ratios.append(kn / kp)
    return SweepResult(axis, [points[v] for v in grid])


def _guarded(fn, v, s):
    try:
        return fn(v, s)
    except Exception as exc:  # noqa: BLE001 - recorded per point
        log.warning("sweep point %s seed %s failed: %s", v, s, exc)
        return f"error: {type(exc).__name__}: {exc}"


def model_comparison(x: Sequence[float], y: Sequence[float]) -> dict:
    """Residuals of constant, linear and logarithmic fits of ``y`` against ``x``.

    Points with a non-finite ``y`` (sweep points without a ratio) are left out.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    keep = np.isfinite(y)
    x, y = x[keep], y[keep]
    if len(x) < 2:
        raise ValueError(f"model comparison needs 2 finite points, got {len(x)}")

    def ssr(design):
        coef, *_ = np.linalg.lstsq(design, y, rcond=None)
        return float(np.sum((design @ coef - y) ** 2)), coef

    one = np.ones_like(x)
    out = {}
    out["constant"], _ = ssr(one[:, None])
    out["linear"], lin = ssr(np.column_stack([one, x]))
    out["log"], _ = ssr(np.column_stack([one, np.log(x)])) if np.all(x > 0) else (np.nan, None)
    out["slope"] = float(lin[1])
    return out

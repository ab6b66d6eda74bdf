import json
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gibbsforge.analysis import (
    FLAT_KAPPA,
    PLAIN_NON_THERMALIZING,
    DecayFit,
    FitError,
    default_fit_window,
    fit_decay,
    iqr,
    kappa_ratio,
    model_comparison,
    recurrence_score,
    run_sweep,
)
from gibbsforge.config import from_tree
from gibbsforge.experiments import sweep

T = np.linspace(0, 5, 60)


def _fit(kappa, err=0.01):
    return DecayFit(kappa, 1.0, 0.0, (0.0, 1.0), 0.0, kappa_err=err)


def test_exact_exponential():
    f = fit_decay(T, 2 * np.exp(-3 * T) + 0.1)
    assert f.kappa == pytest.approx(3.0, abs=1e-6)
    assert f.amplitude == pytest.approx(2.0, abs=1e-6)
    assert f.offset == pytest.approx(0.1, abs=1e-6)
    assert not f.flat


def test_rising_series():
    f = fit_decay(T, 0.5 - 0.4 * np.exp(-1.2 * T))
    assert f.kappa == pytest.approx(1.2, abs=1e-6)
    assert f.amplitude == pytest.approx(-0.4, abs=1e-6)


def test_window_restricts_fit():
    y = np.where(T < 1, 5.0, np.exp(-2 * (T - 1)))
    f = fit_decay(T, y, window=(1.0, 5.0))
    assert f.kappa == pytest.approx(2.0, abs=2e-2)
    assert f.window[0] >= 1.0


def test_constant_series_is_flat():
    f = fit_decay(T, np.full_like(T, 0.3))
    assert f.flat and f.kappa == 0.0


def test_too_few_points():
    with pytest.raises(FitError):
        fit_decay(T[:4], T[:4])


@pytest.mark.parametrize("seed", range(5))
def test_noisy_exponential_recovers_rate(seed):
    rng = np.random.default_rng(seed)
    y = np.exp(-0.8 * T) + 0.2
    y = y + 0.02 * rng.normal(size=len(T)) * np.ptp(y)
    f = fit_decay(T, y)
    assert f.kappa == pytest.approx(0.8, rel=0.05)
    assert np.isfinite(f.kappa_err) and f.kappa_err > 0


@settings(max_examples=30, deadline=None)
@given(st.floats(0.3, 5.0), st.floats(0.1, 3.0), st.floats(-1.0, 1.0))
def test_fit_self_consistency(kappa, amp, offset):
    y = DecayFit(kappa, amp, offset, (0.0, 5.0), 0.0).model(T)
    f = fit_decay(T, y)
    assert f.kappa == pytest.approx(kappa, rel=1e-4)
    assert np.abs(f.model(T) - y).max() <= 1e-6 * max(abs(amp), 1)


def test_kappa_ratio_examples():
    r = kappa_ratio(_fit(1.187), _fit(0.443))
    assert r.ratio == pytest.approx(2.68, abs=0.005)
    assert r.uncertainty > 0
    assert kappa_ratio(_fit(0.7), _fit(0.7)).ratio == 1.0
    flat = kappa_ratio(_fit(0.9), _fit(FLAT_KAPPA / 2))
    assert flat.ratio is None and flat.marker == PLAIN_NON_THERMALIZING and flat.kappa_noisy == 0.9


def test_recurrence_examples():
    t = np.linspace(0, 3, 300)
    assert recurrence_score(np.exp(-t)) == (0, 0.0)
    count, amp = recurrence_score(np.sin(2 * np.pi * t))
    # the first peak only descends to the starting value 0 on its left, so its prominence is 1
    assert count == 3 and amp == pytest.approx(5 / 3, rel=1e-3)
    assert recurrence_score(np.sin(2 * np.pi * t), window=(100, None))[0] == 2
    with pytest.raises(ValueError):
        recurrence_score(np.ones(5))
    assert recurrence_score(np.ones(20)) == (0, 0.0)


def test_small_wiggles_below_prominence_are_ignored():
    t = np.linspace(0, 3, 300)
    y = np.exp(-t) + 0.001 * np.sin(40 * t)
    assert recurrence_score(y)[0] == 0


def test_default_window():
    times = np.linspace(0, 20, 50)
    assert default_fit_window(times, [2]) == (times[3], 20.0)
    assert default_fit_window(times, [2, 10, 20]) == (4.0, 20.0)


def test_iqr():
    assert iqr([1, 2, 3, 4, 5]) == 2.0


def _toy_point(value, seed):
    rng = np.random.default_rng([int(value * 10), seed])
    return value * (1 + 0.01 * rng.normal()), 1.0


def test_run_sweep_deterministic_and_executor_order():
    a = run_sweep("frequency", [1, 2, 4], _toy_point, range(6))
    with ThreadPoolExecutor(3) as ex:
        b = run_sweep("frequency", [1, 2, 4], _toy_point, range(6), ex)
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())
    np.testing.assert_allclose(a.medians, [1, 2, 4], rtol=0.05)
    assert set(a.to_dict()["points"][0]) == {"value", "ratio_median", "ratio_iqr", "n_seeds", "flags"}


def test_run_sweep_single_point_and_failures():
    res = run_sweep("L", [16], _toy_point, [0])
    assert len(res.points) == 1 and res.points[0].n_seeds == 1

    def bad(value, seed):
        if seed == 1:
            raise RuntimeError("boom")
        return 1.0, 0.001 if value == 2 else 1.0

    res = run_sweep("L", [1, 2], bad, [0, 1])
    assert res.points[0].n_seeds == 1 and any("boom" in f for f in res.points[0].flags)
    assert PLAIN_NON_THERMALIZING in res.points[1].flags and res.points[1].n_seeds == 0
    with pytest.raises(ValueError):
        run_sweep("L", [], bad, [0])


def test_model_comparison():
    x = np.arange(16, 31, 2.0)
    lin = model_comparison(x, 0.2 * x + 1)
    assert lin["linear"] < 1e-20 and lin["constant"] > 1 and lin["slope"] == pytest.approx(0.2)
    flat = model_comparison(x, np.ones_like(x))
    assert flat["constant"] < 1e-20 and flat["slope"] == pytest.approx(0.0, abs=1e-12)


def test_experiment_sweep_is_reproducible():
    cfg = from_tree(
        {
            "lattice": {"L": 8, "p": 2},
            "subsets": {"initial": [6, 7], "test": [6, 7]},
            "schedule": {"t_max": 5.0, "n_steps": 20},
            "noise": {"n_sites": 2, "window": 4},
            "seeds": [0, 1],
        }
    )
    a = sweep(cfg, "n_noisy_sites", [2, 3])
    b = sweep(cfg, "n_noisy_sites", [2, 3])
    assert a.to_dict() == b.to_dict()
    assert [p.value for p in a.points] == [2.0, 3.0]


def test_model_comparison_skips_missing_points():
    x = np.array([1.0, 2, 3, 4, 5])
    y = np.array([np.nan, 1.4, 1.6, np.nan, 2.0])
    cmp = model_comparison(x, y)
    assert cmp["slope"] == pytest.approx(0.2)
    assert cmp["linear"] == pytest.approx(0.0, abs=1e-20)
    with pytest.raises(ValueError):
        model_comparison(x, np.full(5, np.nan))

import csv
import json
import subprocess
import sys
from pathlib import Path
from xml.etree import ElementTree

import pytest

from gibbsforge.cli import main, resolve_threads
from gibbsforge.config import ConfigError, ExperimentConfig, from_tree, load_config, read_tree
from gibbsforge.runio import METRIC_COLUMNS, read_metric_csv
from gibbsforge.svgplot import Figure, nice_ticks

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
TINY = CONFIGS / "smoke" / "tiny.toml"


def _write(path: Path, text: str) -> Path:
    path.write_text(text)
    return path


def test_includes_merge_and_override(tmp_path):
    _write(tmp_path / "base.toml", "[lattice]\nL = 10\np = 2\n[couplings]\nJ = 2.0\n")
    cfg = load_config(_write(tmp_path / "top.toml", 'include = ["base.toml"]\n[lattice]\nL = 12\n'))
    assert (cfg.lattice.L, cfg.lattice.p, cfg.couplings.J) == (12, 2, 2.0)


def test_include_cycle(tmp_path):
    _write(tmp_path / "a.toml", 'include = ["b.toml"]\n')
    _write(tmp_path / "b.toml", 'include = ["a.toml"]\n')
    with pytest.raises(ConfigError, match="cycle"):
        read_tree(tmp_path / "a.toml")


@pytest.mark.parametrize(
    "tree, key",
    [
        ({"lattice": {"L": 4, "p": 5}}, "lattice.p"),
        ({"lattice": {"L": "24"}}, "lattice.L"),
        ({"noise": {"kind": "amplitude"}}, "noise.kind"),
        ({"bogus": 1}, "bogus"),
        ({"noise": {"probability": 1.5}}, "noise.probability"),
        ({"metrics": ["entanglement"]}, "entanglement"),
        ({"subsets": {"test": [0, 0, 1]}}, "subsets.test"),
        ({"sweep": {"axis": "colour"}}, "sweep.axis"),
        ({"seeds": []}, "seeds"),
    ],
)
def test_schema_errors_name_the_key(tree, key):
    with pytest.raises(ConfigError, match=key):
        from_tree(tree)


def test_all_shipped_configs_load():
    files = [p for p in CONFIGS.rglob("*.toml") if p.parent.name != "common"]
    assert len(files) >= 12
    for p in files:
        load_config(p)


def test_replace_and_digest():
    cfg = ExperimentConfig()
    other = cfg.replace(**{"lattice.L": 16})
    assert other.lattice.L == 16 and cfg.lattice.L == 24
    assert cfg.digest() != other.digest() and cfg.digest() == ExperimentConfig().digest()
    with pytest.raises(ConfigError):
        cfg.replace(**{"lattice.width": 3})


def test_threads_flag_beats_environment(monkeypatch):
    monkeypatch.setenv("GIBBSFORGE_THREADS", "3")
    assert resolve_threads(None) == 3
    assert resolve_threads(2) == 2
    monkeypatch.setenv("GIBBSFORGE_THREADS", "many")
    with pytest.raises(ConfigError):
        resolve_threads(None)
    monkeypatch.delenv("GIBBSFORGE_THREADS")
    assert resolve_threads(None) >= 1


def test_bad_config_exits_2(tmp_path, capsys):
    bad = _write(tmp_path / "bad.toml", "[lattice]\nL = 4\np = 9\n")
    assert main(["spectrum", "--config", str(bad), "--out", str(tmp_path / "run")]) == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["kind"] == "config" and "lattice.p" in err["message"]
    assert main(["spectrum", "--config", str(tmp_path / "missing.toml"), "--out", str(tmp_path / "r2")]) == 2
    assert main(["spectrum", "--config", str(TINY), "--format", "pdf", "--out", str(tmp_path / "r3")]) == 2


def test_spectrum_command(tmp_path):
    out = tmp_path / "spectrum"
    assert main(["spectrum", "--config", str(TINY), "--out", str(out), "--format", "csv,json,svg"]) == 0
    summary = json.loads((out / "beta_star.json").read_text())
    assert summary["dim"] == 28
    rows = list(csv.reader((out / "spectrum.csv").open()))
    assert rows[0] == ["index", "eigenvalue"] and len(rows) == 29
    ElementTree.parse(out / "dos.svg")
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["errors"] == [] and "beta_star.json" in manifest["files"]
    assert json.loads((out / "config.json").read_text())["resolved"]["lattice"]["L"] == 8


def test_thermalize_command_and_csv_schema(tmp_path):
    out = tmp_path / "th"
    assert main(["thermalize", "--config", str(TINY), "--out", str(out), "--seed", "5", "--threads", "1"]) == 0
    with (out / "metrics.csv").open() as fh:
        assert next(csv.reader(fh)) == list(METRIC_COLUMNS)
    rows = read_metric_csv(out / "metrics.csv")
    assert {r["protocol"] for r in rows} >= {"plain", "shock"}
    fits = json.loads((out / "fits.json").read_text())
    assert [r["seed"] for r in fits["noisy"]] == [0, 1]
    again = tmp_path / "th2"
    assert main(["thermalize", "--config", str(TINY), "--out", str(again), "--seed", "5", "--threads", "2"]) == 0
    assert (out / "metrics.csv").read_text() == (again / "metrics.csv").read_text()


def test_sweep_command(tmp_path):
    cfg = _write(
        tmp_path / "sw.toml",
        f'include = ["{TINY}"]\nseeds = [0]\n[noise]\nn_sites = 2\nwindow = 4\n[sweep]\naxis = "frequency"\ngrid = [1, 2]\n',
    )
    out = tmp_path / "sw"
    assert main(["sweep", "--config", str(cfg), "--out", str(out), "--format", "json,csv,svg"]) == 0
    doc = json.loads((out / "sweep.json").read_text())
    assert doc["axis"] == "frequency" and [p["value"] for p in doc["points"]] == [1.0, 2.0]
    assert set(doc["points"][0]) == {"value", "ratio_median", "ratio_iqr", "n_seeds", "flags"}
    assert main(["plot", str(out / "sweep.json"), "--out", str(tmp_path / "pl")]) == 0
    ElementTree.parse(tmp_path / "pl" / "sweep.svg")


def test_circuit_smoke_and_plot(tmp_path):
    out = tmp_path / "c"
    assert main(["circuit", "--config", str(CONFIGS / "smoke" / "circuit2.toml"), "--out", str(out)]) == 0
    assert (out / "circuit_dump.txt").read_text().startswith("step\tkind")
    rep = json.loads((out / "recurrence.json").read_text())
    assert rep["gates_per_step"] > 0
    assert main(["plot", str(out / "circuit.csv"), "--metric", "trace_dist", "--log", "--out", str(tmp_path / "p")]) == 0
    ElementTree.parse(tmp_path / "p" / "circuit.svg")


def test_mi_command(tmp_path):
    cfg = _write(tmp_path / "mi.toml", f'include = ["{TINY}"]\nseeds = [0]\n[subsets.noisy]\nN = [0, 1]\n')
    out = tmp_path / "mi"
    assert main(["mi", "--config", str(cfg), "--out", str(out)]) == 0
    rows = read_metric_csv(out / "mi.csv")
    first = [r for r in rows if r["time"] == 0.0]
    assert first and all(abs(r["value"]) < 1e-12 for r in first)


def test_module_entry_point(tmp_path):
    res = subprocess.run(
        [sys.executable, "-m", "gibbsforge", "spectrum", "--config", str(TINY), "--out", str(tmp_path / "m")],
        capture_output=True,
        text=True,
    )
    assert res.returncode == 0, res.stderr


def test_svg_rendering():
    fig = Figure("demo", "x", "y", logy=True)
    fig.line([1, 2, 3], [1.0, 0.1, 0.01], "a", markers=True, err=[0.1, 0.01, 0.001])
    fig.line([1, 2, 3], [0.5, 0.05, 0.005], "b", dashed=True)
    root = ElementTree.fromstring(fig.render())
    assert root.tag.endswith("svg")
    assert "demo" in fig.render()
    ticks = nice_ticks(0.0, 1.0)
    assert ticks[0] <= 0.0 and ticks[-1] >= 1.0 and len(ticks) >= 3

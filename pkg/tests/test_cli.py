import json
import subprocess
import sys
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from dirmax import __version__
from dirmax.cli import parse_n_list, read_header, render_svg, run
from dirmax.maximal_ops import read_maximal
from dirmax.norm_lab import GROWTH_COLUMNS
from dirmax.spectral_core import GridFunction, read_dmax, write_dmax

SVG = "{http://www.w3.org/2000/svg}"


def test_parse_n_list():
    assert parse_n_list("4,8,...,256") == [4, 8, 16, 32, 64, 128, 256]
    assert parse_n_list("3,5,...,11") == [3, 5, 7, 9, 11]
    assert parse_n_list("7") == [7]
    for bad in ("4,...,16", "4,8,...,100", "8,4,...,1"):
        with pytest.raises(Exception):
            parse_n_list(bad)


def test_unknown_flag_and_subcommand(capsys):
    assert run(["verify", "--bogus"]) == 2
    assert run(["frobnicate"]) == 2
    assert "usage" in capsys.readouterr().err


def test_verify_passes(capsys):
    assert run(["verify", "--level", "6", "--seed", "0"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out
    assert out.strip().splitlines()[-1].endswith("checks passed")


def test_apply_cos_fixture(tmp_path):
    f = GridFunction.from_function(lambda x, y: np.cos(2 * np.pi * x) + 0 * y, 6, 1.0)
    write_dmax(tmp_path / "f.dmax", f)
    code = run(["apply", "--symbol", "sgn", "--v", "1,0", "--in", str(tmp_path / "f.dmax"),
                "--out", str(tmp_path / "out.dmax")])
    assert code == 0
    g = read_dmax(tmp_path / "out.dmax")
    x, _ = g.coords()
    assert np.abs(g.values - 1j * np.sin(2 * np.pi * x)).max() <= 1e-10


def test_apply_rejects_bad_inputs(tmp_path):
    write_dmax(tmp_path / "f.dmax", GridFunction.zeros(4))
    base = ["apply", "--in", str(tmp_path / "f.dmax"), "--out", str(tmp_path / "o.dmax")]
    assert run(base + ["--symbol", "nope", "--v", "1,0"]) == 2
    assert run(base + ["--symbol", "sgn", "--v", "1,1"]) == 2
    assert run(["apply", "--symbol", "sgn", "--v", "1,0", "--in", str(tmp_path / "missing.dmax")]) == 2


def test_maximal_writes_container(tmp_path):
    rng = np.random.default_rng(0)
    write_dmax(tmp_path / "f.dmax", GridFunction(rng.standard_normal((32, 32)), 4.0))
    out = tmp_path / "m.dmax"
    assert run(["maximal", "--op", "kakeya0", "--in", str(tmp_path / "f.dmax"), "--n", "4",
                "--out", str(out)]) == 0
    m = read_maximal(out)
    assert m.values.shape == (32, 32) and m.argmax.max() < 4


def test_gen_directions_json(capsys):
    assert run(["gen-directions", "--kind", "random", "--n", "5", "--seed", "3"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert data["kind"] == "random" and data["n"] == 5 and data["seed"] == 3
    assert len(data["vectors"]) == 5


def test_sectors_dump(tmp_path):
    out = tmp_path / "s.json"
    assert run(["sectors", "dump", "--n", "5", "--out", str(out)]) == 0
    data = json.loads(out.read_text())
    assert len(data) == 32
    assert run(["sectors", "dump", "--n", "5", "--N", "16", "--out", str(out)]) == 0
    data = json.loads(out.read_text())
    assert len(data["sectors"]) == 32 and data["clusters"]


def growth_run(path, *extra):
    return run(["experiment", "growth", "--op", "kakeya0", "--n", "4,8", "--level", "5",
                "--rounds", "0", "--seed", "1", "--out", str(path), *extra])


def test_growth_schema_and_header(tmp_path):
    p = tmp_path / "g.csv"
    assert growth_run(p) == 0
    lines = p.read_text().splitlines()
    assert lines[0] == f"# dirmax {__version__}"
    assert any(line.startswith("# timestamp:") for line in lines)
    hdr = read_header(p)
    assert hdr["config"]["seed"] == 1 and hdr["config"]["n"] == [4, 8]
    body = [line for line in lines if not line.startswith("#")]
    assert body[0].split(",") == GROWTH_COLUMNS
    assert [row.split(",")[1] for row in body[1:]] == ["4", "8"]


def test_deterministic_runs_are_identical(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert growth_run(a, "--deterministic") == 0
    assert growth_run(b, "--deterministic") == 0
    assert a.read_bytes() == b.read_bytes()
    assert "timestamp" not in a.read_text()


def test_replay_reproduces(tmp_path, capsys):
    p = tmp_path / "g.csv"
    assert growth_run(p) == 0
    assert run(["replay", "--in", str(p)]) == 0
    p.write_text(p.read_text().replace("kakeya0,4,5,1,", "kakeya0,4,5,1,9"))
    assert run(["replay", "--in", str(p)]) == 1


def write_growth(path, n_values):
    rows = [",".join(GROWTH_COLUMNS)]
    for n in n_values:
        ln = float(np.log(n))
        rows.append(f"kakeya0,{n},10,1,{2 + 0.3 * ln!r},{ln!r},{ln ** 0.5!r},1,1,0,0")
    path.write_text("# dirmax test\n" + "\n".join(rows) + "\n")


def test_plot_points_and_determinism(tmp_path):
    csv_path = tmp_path / "g.csv"
    write_growth(csv_path, [4, 8, 16, 32, 64, 128, 256])
    a, b = tmp_path / "a.svg", tmp_path / "b.svg"
    assert run(["plot", "--in", str(csv_path), "--out", str(a)]) == 0
    assert run(["plot", "--in", str(csv_path), "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    root = ET.parse(a).getroot()
    points = [c for c in root.iter(f"{SVG}circle") if c.get("class") == "point"]
    assert len(points) == 7
    assert any(p.get("class") == "fit" for p in root.iter(f"{SVG}polyline"))


def test_plot_empty_table_axes_only(tmp_path):
    csv_path = tmp_path / "g.csv"
    write_growth(csv_path, [])
    root = ET.fromstring(render_svg(csv_path))
    assert not list(root.iter(f"{SVG}circle"))
    assert list(root.iter(f"{SVG}line"))


def test_plot_schema_mismatch(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,b\n1,2\n")
    assert run(["plot", "--in", str(p), "--out", str(tmp_path / "x.svg")]) == 2


def test_lower_bound_and_cww_tables(tmp_path):
    lb = tmp_path / "lb.csv"
    assert run(["experiment", "lower-bound", "--n", "64", "--per-octave", "8", "--angles", "32",
                "--out", str(lb)]) == 0
    body = [r for r in lb.read_text().splitlines() if not r.startswith("#")]
    assert body[0] == "N,r0,c0,f_norm,Tf_norm,ratio,pointwise_violations"
    cww = tmp_path / "c.csv"
    assert run(["experiment", "cww", "--count", "2", "--level", "4", "--lambdas", "0.5,1",
                "--epsilons", "0.5", "--out", str(cww)]) == 0
    hdr = read_header(cww)
    assert "fitted_c1" in hdr


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "dirmax", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and __version__ in res.stdout

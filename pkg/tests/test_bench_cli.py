"""Benchmark front end: exports, presets, config resolution, end-to-end runs."""

import csv
import os

import numpy as np
import pytest

from topo2d import export
from topo2d.cli import (RunConfig, build_parser, main, parse_config_file,
                        prepare, resolve_config, run, run_sweep)
from topo2d.estimator import estimate
from topo2d.export import (REPORT_COLUMNS, append_report, density_raster,
                           density_to_gray, report_row, write_density_csv,
                           write_pgm)
from topo2d.mesh import DomainSpec, generate_mesh
from topo2d.presets import PRESETS, build_load_case, preset_domain_spec


def read_pgm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    magic, dims, maxval, rest = data.split(b"\n", 3)
    assert magic == b"P5"
    assert maxval == b"255"
    width, height = map(int, dims.split())
    pixels = np.frombuffer(rest, dtype=np.uint8, count=width * height)
    return pixels.reshape(height, width)


def test_pgm_solid_and_void_values(tmp_path):
    mesh = generate_mesh(DomainSpec(4.0, 2.0, 4, 2), "q1")
    solid = tmp_path / "solid.pgm"
    write_pgm(density_raster(mesh, np.ones(8)), solid)
    assert np.all(read_pgm(solid) == 0)

    void = tmp_path / "void.pgm"
    write_pgm(density_raster(mesh, np.full(8, 1e-3)), void)
    assert np.all(read_pgm(void) == 255)


def test_pgm_raster_orientation(tmp_path):
    # element order runs bottom row first; the raster puts the top of the
    # domain in the first image row
    mesh = generate_mesh(DomainSpec(2.0, 2.0, 2, 2), "q1")
    x = np.array([1.0, 0.0, 0.0, 1.0])
    path = tmp_path / "checker.pgm"
    write_pgm(density_raster(mesh, x), path)
    # top-left pixel shows the top-left element, which is void here
    np.testing.assert_array_equal(read_pgm(path),
                                  [[255, 0], [0, 255]])


def test_triangle_raster_constant_field():
    mesh = generate_mesh(DomainSpec(3.0, 2.0, 3, 2, triangulation="cross_split"), "p1")
    image = density_raster(mesh, np.full(mesh.n_elements, 0.3))
    assert image.shape == (16, 24)  # 8 pixels per unit
    assert np.all(image == density_to_gray(np.array([0.3]))[0])


def test_density_csv_roundtrip(tmp_path):
    mesh = generate_mesh(DomainSpec(2.0, 1.0, 2, 1), "q1")
    x = np.array([0.25, 0.75])
    path = tmp_path / "density.csv"
    write_density_csv(mesh, x, path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["element_id", "centroid_x", "centroid_y", "density"]
    assert len(rows) == 3
    for e, row in enumerate(rows[1:]):
        assert int(row[0]) == e
        assert float(row[1]) == mesh.centroids[e, 0]
        assert float(row[3]) == x[e]


def test_report_append_and_schema_guard(tmp_path):
    path = tmp_path / "report.csv"
    append_report(path, report_row("q1", 8, 1.25, 3))
    append_report(path, report_row("p1", 16, 2.5, 4))
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == REPORT_COLUMNS
    assert len(rows) == 3
    assert rows[1][0] == "Q1" and rows[2][0] == "P1"
    # no estimate requested: the five error columns stay empty
    assert rows[1][4:] == [""] * 5

    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerow(["something", "else"])
    with pytest.raises(ValueError):
        append_report(path, report_row("q1", 8, 1.25, 3))


def test_report_row_with_breakdown():
    from topo2d.fem import Material
    from topo2d.solver import LoadCase, assemble, solve
    from topo2d.mesh import classify_boundary

    mesh = generate_mesh(DomainSpec(3.0, 2.0, 3, 2), "q1")
    fixed = np.flatnonzero(np.isclose(mesh.nodes[:, 0], 0.0))
    case = LoadCase(fixed_nodes=fixed, point_loads=((3, 0.0, -1.0),))
    mesh = classify_boundary(mesh, case)
    U = solve(assemble(mesh, np.ones(6), 1.0, Material(), case)).U
    bd = estimate(mesh, U, Material(), case)
    row = report_row("p2", 6, 3.5, 7, bd)
    assert row[0] == "P2"
    assert float(row[4]) == bd.bulk_total
    assert float(row[8]) == bd.eta_global


def test_preset_domain_specs():
    cant = preset_domain_spec("cantilever")
    assert (cant.width, cant.height, cant.nx, cant.ny) == (32.0, 20.0, 32, 20)
    assert cant.shape == "rectangle"

    bridge = preset_domain_spec("bridge")
    assert (bridge.width, bridge.height) == (30.0, 30.0)

    bevel = preset_domain_spec("bevel")
    assert bevel.shape == "trapezoid"
    assert bevel.right_height == pytest.approx(10.0)
    assert (PRESETS["cantilever"].volfrac, PRESETS["bridge"].volfrac,
            PRESETS["bevel"].volfrac) == (0.4, 0.3, 0.5)


def test_preset_load_cases():
    mesh = generate_mesh(preset_domain_spec("cantilever"), "q1")
    case = build_load_case("cantilever", mesh)
    assert len(case.fixed_nodes) == 21  # full west edge
    assert np.all(np.isclose(mesh.nodes[case.fixed_nodes, 0], 0.0))
    node, fx, fy = case.point_loads[0]
    np.testing.assert_allclose(mesh.nodes[node], [32.0, 0.0])
    assert (fx, fy) == (0.0, -1.0)

    mesh = generate_mesh(preset_domain_spec("bridge"), "q1")
    case = build_load_case("bridge", mesh)
    np.testing.assert_allclose(np.sort(mesh.nodes[case.fixed_nodes], axis=0),
                               [[0.0, 0.0], [30.0, 0.0]])
    node, _, _ = case.point_loads[0]
    np.testing.assert_allclose(mesh.nodes[node], [15.0, 0.0])

    mesh = generate_mesh(preset_domain_spec("bevel"), "q1")
    case = build_load_case("bevel", mesh)
    node, _, _ = case.point_loads[0]
    np.testing.assert_allclose(mesh.nodes[node], [40.0, 15.0])

    with pytest.raises(ValueError):
        build_load_case("arch", mesh)


def test_prepare_element_counts():
    cfg = resolve_config({"problem": "bridge", "elem": "p1", "grid": 32,
                          "refine": 1, "max_iters": 1})
    mesh, case, material, simp = prepare(cfg)
    assert mesh.n_elements == 16384
    assert mesh.family == "p1"

    cfg = resolve_config({"problem": "cantilever", "elem": "q1",
                          "nx": 64, "ny": 40})
    mesh, _, _, _ = prepare(cfg)
    assert mesh.n_elements == 2560

    cfg = resolve_config({"problem": "cantilever", "elem": "p2", "grid": 24})
    mesh, _, _, simp = prepare(cfg)
    assert mesh.n_elements == 2304
    assert simp.volfrac == 0.4


def test_parse_config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(
        "# comment line\n"
        "problem=cantilever\n"
        "max-iters = 7   # trailing comment\n"
        "\n"
        "volfrac=0.35\n"
    )
    values = parse_config_file(path)
    assert values == {"problem": "cantilever", "max_iters": "7",
                      "volfrac": "0.35"}

    bad = tmp_path / "bad.cfg"
    bad.write_text("not a pair\n")
    with pytest.raises(ValueError):
        parse_config_file(bad)


def test_resolve_config_precedence():
    flags = {"problem": "cantilever", "volfrac": 0.3}
    file_values = {"nx": "10", "volfrac": "0.25", "rmin": "2.0"}
    cfg = resolve_config(flags, file_values)
    assert cfg.volfrac == 0.3  # flag beats file
    assert cfg.nx == 10  # file beats preset default
    assert cfg.ny == 20  # preset default
    assert cfg.rmin == 2.0
    assert cfg.elem == "q1"

    with pytest.raises(ValueError):
        resolve_config({})
    with pytest.raises(ValueError):
        resolve_config({"problem": "cantilever", "elem": "q3"})
    with pytest.raises(ValueError):
        resolve_config({"problem": "cantilever"}, {"unknown_key": "1"})


def test_main_end_to_end(tmp_path):
    out = tmp_path / "out"
    rc = main(["--problem", "cantilever", "--nx", "8", "--ny", "5",
               "--max-iters", "3", "--quiet", "--out", str(out)])
    assert rc == 0
    for name in ("config.txt", "density.pgm", "density.csv", "density.vtk",
                 "history.csv", "report.csv"):
        assert (out / name).exists()
    config = (out / "config.txt").read_text()
    assert "nx=8" in config and "problem=cantilever" in config
    with open(out / "report.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 2
    assert rows[1][0] == "Q1" and rows[1][1] == "40"
    assert rows[1][4:] == [""] * 5


def test_main_with_estimate_error(tmp_path):
    out = tmp_path / "out"
    rc = main(["--problem", "bridge", "--nx", "8", "--ny", "8", "--elem", "p1",
               "--grid", "4", "--max-iters", "2", "--quiet",
               "--estimate-error", "--out", str(out)])
    assert rc == 0
    assert (out / "error_report.csv").exists()
    with open(out / "report.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert all(cell != "" for cell in rows[1])
    assert float(rows[1][4]) == 0.0  # p1 without body force has no bulk term


def test_main_config_file_and_flag_override(tmp_path):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("problem=cantilever\nnx=6\nny=4\nmax-iters=2\n")
    out = tmp_path / "out"
    rc = main(["--config", str(cfg_file), "--nx", "5", "--quiet",
               "--out", str(out)])
    assert rc == 0
    config = (out / "config.txt").read_text()
    assert "nx=5" in config  # flag wins
    assert "ny=4" in config  # file wins over preset


def test_main_snapshots(tmp_path):
    out = tmp_path / "out"
    rc = main(["--problem", "cantilever", "--nx", "6", "--ny", "4",
               "--max-iters", "4", "--snapshot-every", "2", "--quiet",
               "--out", str(out)])
    assert rc == 0
    snaps = sorted(os.listdir(out / "snapshots"))
    assert snaps == ["iter_0002.pgm", "iter_0004.pgm"]


def test_main_exit_codes(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["--problem", "arch"])
    assert exc.value.code == 2

    with pytest.raises(SystemExit) as exc:
        main(["--problem", "cantilever", "--config",
              str(tmp_path / "missing.cfg")])
    assert exc.value.code == 2

    with pytest.raises(SystemExit) as exc:
        main(["--problem", "cantilever", "--triangulation", "fan"])
    assert exc.value.code == 2


def test_sweep_runs_and_combined_report(tmp_path, capsys):
    sweep = tmp_path / "sweep.txt"
    sweep.write_text(
        "# two tiny runs\n"
        "elem=q1 nx=6 ny=4 max-iters=2\n"
        "elem=p1 nx=6 ny=4 grid=4 max-iters=2\n"
    )
    out = tmp_path / "out"
    rc = main(["--problem", "cantilever", "--sweep", str(sweep),
               "--jobs", "1", "--out", str(out)])
    assert rc == 0
    assert (out / "run_000" / "report.csv").exists()
    assert (out / "run_001" / "report.csv").exists()
    with open(out / "sweep_report.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == REPORT_COLUMNS
    assert [row[0] for row in rows[1:]] == ["Q1", "P1"]
    assert rows[2][1] == "64"  # 4x4 cross-split cells
    captured = capsys.readouterr()
    assert "run_000" in captured.out and "run_001" in captured.out


def test_run_returns_report(tmp_path):
    cfg = resolve_config({"problem": "cantilever", "nx": 6, "ny": 4,
                          "max_iters": 2, "quiet": True,
                          "out": str(tmp_path / "r")})
    report = run(cfg)
    assert report.family == "q1"
    assert report.n_elements == 24
    assert report.compliance > 0.0
    assert report.config["nx"] == 6
    assert any(path.endswith("report.csv") for path in report.outputs)


def test_build_parser_defaults_are_none():
    args = build_parser().parse_args(["--problem", "cantilever"])
    assert args.nx is None and args.volfrac is None and args.quiet is None

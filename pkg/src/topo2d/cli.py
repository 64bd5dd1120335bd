"""Command-line front end for the benchmark problems.

Options resolve in precedence order: explicit flags > config file entries >
preset defaults. Config files are flat key=value text mirroring the flags;
a sweep file holds one such assignment list per line and its runs execute
in a parallel worker pool with isolated output directories.
"""

import argparse
import os
import sys
from dataclasses import asdict, dataclass
from multiprocessing import Pool, cpu_count

import numpy as np

from . import export
from .estimator import ErrorBreakdown, estimate, write_error_report
from .fem import Material
from .mesh import Mesh, classify_boundary, generate_mesh
from .optimizer import (DensityField, OptimizeResult, SimpConfig, optimize,
                        write_history_csv)
from .presets import PRESETS, build_load_case, preset_domain_spec
from .solver import LoadCase, SingularSystemError, assemble, solve

_TRIANGULATION = {"two": "two_split", "cross": "cross_split"}
_MATERIAL = {"lame": "lame", "plane-stress": "plane_stress", "plane_stress": "plane_stress"}

_DEFAULTS = {
    "elem": "q1",
    "triangulation": "cross",
    "refine": 0,
    "penal": 3.0,
    "rmin": 1.5,
    "move": 0.2,
    "conv_tol": 0.01,
    "max_iters": 500,
    "material": "lame",
    "estimate_error": False,
    "out": "out",
    "bevel_ratio": 1.0 / 3.0,
    "snapshot_every": 0,
    "jobs": 0,
    "quiet": False,
}

_TYPES = {
    "problem": str,
    "elem": str,
    "nx": int,
    "ny": int,
    "grid": int,
    "triangulation": str,
    "refine": int,
    "volfrac": float,
    "penal": float,
    "rmin": float,
    "move": float,
    "conv_tol": float,
    "max_iters": int,
    "material": str,
    "estimate_error": bool,
    "out": str,
    "bevel_ratio": float,
    "snapshot_every": int,
    "jobs": int,
    "quiet": bool,
}


@dataclass
class RunConfig:
    problem: str
    elem: str
    nx: int
    ny: int
    grid: int | None
    triangulation: str
    refine: int
    volfrac: float
    penal: float
    rmin: float
    move: float
    conv_tol: float
    max_iters: int
    material: str
    estimate_error: bool
    out: str
    bevel_ratio: float
    snapshot_every: int
    quiet: bool


@dataclass
class RunReport:
    config: dict
    family: str
    n_elements: int
    compliance: float
    iterations: int
    breakdown: ErrorBreakdown | None
    outputs: list


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="topo2d",
        description="2D compliance minimization benchmarks with optional "
        "a posteriori error estimation.",
    )
    parser.add_argument("--problem", choices=sorted(PRESETS))
    parser.add_argument("--elem", choices=("q1", "p1", "p2"))
    parser.add_argument("--nx", type=int, help="domain width in unit cells (and q1 grid)")
    parser.add_argument("--ny", type=int, help="domain height in unit cells (and q1 grid)")
    parser.add_argument("--grid", type=int,
                        help="triangle grid subdivisions per side (default: nx by ny)")
    parser.add_argument("--triangulation", choices=("two", "cross"))
    parser.add_argument("--refine", type=int, help="uniform refinement levels")
    parser.add_argument("--volfrac", type=float)
    parser.add_argument("--penal", type=float)
    parser.add_argument("--rmin", type=float)
    parser.add_argument("--move", type=float)
    parser.add_argument("--conv-tol", type=float, dest="conv_tol")
    parser.add_argument("--max-iters", type=int, dest="max_iters")
    parser.add_argument("--material", choices=("lame", "plane-stress"))
    parser.add_argument("--estimate-error", action="store_true", default=None,
                        dest="estimate_error")
    parser.add_argument("--out")
    parser.add_argument("--bevel-ratio", type=float, dest="bevel_ratio",
                        help="right-edge height as a fraction of the left (bevel only)")
    parser.add_argument("--snapshot-every", type=int, dest="snapshot_every",
                        help="write a density raster every N iterations")
    parser.add_argument("--quiet", action="store_true", default=None)
    parser.add_argument("--config", help="key=value file supplying defaults for flags")
    parser.add_argument("--sweep", help="file with one key=value run per line")
    parser.add_argument("--jobs", type=int, help="parallel workers for --sweep")
    return parser


def parse_config_file(path) -> dict:
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
            key, _, value = line.partition("=")
            values[key.strip().replace("-", "_")] = value.strip()
    return values


def _coerce(key: str, value):
    if key not in _TYPES:
        raise ValueError(f"unknown option {key!r}")
    target = _TYPES[key]
    if isinstance(value, str):
        if target is bool:
            lowered = value.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"option {key!r}: cannot parse boolean from {value!r}")
        return target(value)
    return value


def resolve_config(flags: dict, file_values: dict | None = None) -> RunConfig:
    """Merge flags over config-file entries over preset defaults."""
    merged = dict(_DEFAULTS)
    for key, value in (file_values or {}).items():
        merged[key] = _coerce(key, value)
    for key, value in flags.items():
        if value is not None and key in _TYPES:
            merged[key] = _coerce(key, value)

    problem = merged.get("problem")
    if problem not in PRESETS:
        raise ValueError(
            f"--problem must be one of {sorted(PRESETS)} (got {problem!r})"
        )
    preset = PRESETS[problem]
    merged.setdefault("nx", int(round(preset.width)))
    merged.setdefault("ny", int(round(preset.height)))
    merged.setdefault("volfrac", preset.volfrac)
    if merged.get("nx") is None:
        merged["nx"] = int(round(preset.width))
    if merged.get("ny") is None:
        merged["ny"] = int(round(preset.height))
    if merged.get("volfrac") is None:
        merged["volfrac"] = preset.volfrac

    if merged["elem"] not in ("q1", "p1", "p2"):
        raise ValueError(f"--elem must be q1, p1 or p2 (got {merged['elem']!r})")
    if merged["triangulation"] not in _TRIANGULATION:
        raise ValueError("--triangulation must be 'two' or 'cross'")
    if merged["material"] not in _MATERIAL:
        raise ValueError("--material must be 'lame' or 'plane-stress'")

    return RunConfig(
        problem=problem,
        elem=merged["elem"],
        nx=int(merged["nx"]),
        ny=int(merged["ny"]),
        grid=int(merged["grid"]) if merged.get("grid") is not None else None,
        triangulation=merged["triangulation"],
        refine=int(merged["refine"]),
        volfrac=float(merged["volfrac"]),
        penal=float(merged["penal"]),
        rmin=float(merged["rmin"]),
        move=float(merged["move"]),
        conv_tol=float(merged["conv_tol"]),
        max_iters=int(merged["max_iters"]),
        material=merged["material"],
        estimate_error=bool(merged["estimate_error"]),
        out=merged["out"],
        bevel_ratio=float(merged["bevel_ratio"]),
        snapshot_every=int(merged["snapshot_every"]),
        quiet=bool(merged["quiet"]),
    )


def prepare(cfg: RunConfig):
    """Build the mesh, classified boundary and load case for a config."""
    if cfg.elem == "q1":
        nx, ny = cfg.nx, cfg.ny
    else:
        nx = cfg.grid if cfg.grid is not None else cfg.nx
        ny = cfg.grid if cfg.grid is not None else cfg.ny
    spec = preset_domain_spec(
        cfg.problem,
        width=float(cfg.nx),
        height=float(cfg.ny),
        nx=nx,
        ny=ny,
        triangulation=_TRIANGULATION[cfg.triangulation],
        refine_level=cfg.refine,
        bevel_ratio=cfg.bevel_ratio,
    )
    mesh = generate_mesh(spec, cfg.elem)
    case = build_load_case(cfg.problem, mesh)
    mesh = classify_boundary(mesh, case)
    material = Material(E=1.0, nu=0.3, model=_MATERIAL[cfg.material])
    simp = SimpConfig(
        volfrac=cfg.volfrac,
        penal=cfg.penal,
        rmin=cfg.rmin,
        move=cfg.move,
        conv_tol=cfg.conv_tol,
        max_iters=cfg.max_iters,
    )
    return mesh, case, material, simp


def _config_lines(cfg: RunConfig) -> str:
    pairs = asdict(cfg)
    pairs = {k: v for k, v in pairs.items() if v is not None and k != "quiet"}
    return "\n".join(f"{key}={value}" for key, value in sorted(pairs.items())) + "\n"


def estimate_solid(mesh: Mesh, case: LoadCase, material: Material) -> ErrorBreakdown:
    """Solve the fully solid design (density one everywhere) and estimate."""
    solid = DensityField(
        x=np.ones(mesh.n_elements),
        passive=np.zeros(mesh.n_elements, dtype=bool),
        volumes=mesh.areas.copy(),
        x_min=1e-3,
    )
    system = assemble(mesh, solid, 1.0, material, case)
    result = solve(system)
    return estimate(mesh, result.U, material, case)


def run(cfg: RunConfig) -> RunReport:
    """Execute one optimization run and write its outputs."""
    mesh, case, material, simp = prepare(cfg)
    say = (lambda _msg: None) if cfg.quiet else print
    say(
        f"{cfg.problem}: {cfg.elem} mesh with {mesh.n_elements} elements "
        f"({mesh.n_nodes} nodes), volfrac {simp.volfrac:g}"
    )

    os.makedirs(cfg.out, exist_ok=True)
    outputs = []

    callback = None
    if cfg.snapshot_every > 0:
        snap_dir = os.path.join(cfg.out, "snapshots")
        os.makedirs(snap_dir, exist_ok=True)

        def callback(loop, densities):
            if loop % cfg.snapshot_every == 0:
                path = os.path.join(snap_dir, f"iter_{loop:04d}.pgm")
                export.write_pgm(export.density_raster(mesh, densities), path)

    result = optimize(mesh, case, material, simp, callback=callback,
                      log=None if cfg.quiet else print)
    say(f"finished after {result.iterations} iterations, "
        f"objective {result.compliance:.6f}")

    breakdown = None
    if cfg.estimate_error:
        breakdown = estimate_solid(mesh, case, material)
        say(
            "solid-domain estimate: "
            f"bulk {breakdown.bulk_total:.6g}, jump {breakdown.jump_total:.6g}, "
            f"neumann {breakdown.neumann_total:.6g}, eta {breakdown.eta_global:.6g}"
        )
        err_path = os.path.join(cfg.out, "error_report.csv")
        write_error_report(breakdown, mesh, err_path)
        outputs.append(err_path)

    config_path = os.path.join(cfg.out, "config.txt")
    with open(config_path, "w") as fh:
        fh.write(_config_lines(cfg))
    outputs.append(config_path)

    outputs.extend(export.export_density(mesh, result.field.x, cfg.out))
    history_path = os.path.join(cfg.out, "history.csv")
    write_history_csv(result.history, history_path)
    outputs.append(history_path)

    report_path = os.path.join(cfg.out, "report.csv")
    export.append_report(
        report_path,
        export.report_row(cfg.elem, mesh.n_elements, result.compliance,
                          result.iterations, breakdown),
    )
    outputs.append(report_path)

    say("outputs:")
    for path in outputs:
        say(f"  {path}")
    return RunReport(
        config=asdict(cfg),
        family=cfg.elem,
        n_elements=mesh.n_elements,
        compliance=result.compliance,
        iterations=result.iterations,
        breakdown=breakdown,
        outputs=outputs,
    )


def _sweep_worker(task):
    index, cfg = task
    report = run(cfg)
    return index, report


def run_sweep(sweep_path, flags: dict, jobs: int) -> list:
    """Run every line of a sweep file in a parallel worker pool."""
    with open(sweep_path) as fh:
        lines = [
            (lineno, line.split("#", 1)[0].strip())
            for lineno, line in enumerate(fh, start=1)
        ]
    configs = []
    base_out = flags.get("out") or _DEFAULTS["out"]
    for lineno, line in lines:
        if not line:
            continue
        values = {}
        for token in line.split():
            if "=" not in token:
                raise ValueError(
                    f"{sweep_path}:{lineno}: expected key=value tokens, got {token!r}"
                )
            key, _, value = token.partition("=")
            values[key.strip().replace("-", "_")] = value.strip()
        cfg = resolve_config(flags, values)
        index = len(configs)
        cfg.out = os.path.join(base_out, f"run_{index:03d}")
        cfg.quiet = True
        configs.append(cfg)

    if not configs:
        raise ValueError(f"sweep file {sweep_path} contains no runs")
    workers = jobs if jobs > 0 else min(len(configs), max(1, cpu_count() // 2))
    if workers == 1 or len(configs) == 1:
        reports = [_sweep_worker(task) for task in enumerate(configs)]
    else:
        with Pool(workers) as pool:
            reports = pool.map(_sweep_worker, enumerate(configs))
    reports.sort(key=lambda item: item[0])

    combined = os.path.join(base_out, "sweep_report.csv")
    if os.path.exists(combined):
        os.remove(combined)
    for index, report in reports:
        breakdown = report.breakdown
        export.append_report(
            combined,
            export.report_row(report.family, report.n_elements,
                              report.compliance, report.iterations, breakdown),
        )
    for index, report in reports:
        print(
            f"run_{index:03d}: {report.config['problem']} {report.family} "
            f"{report.n_elements} elements, objective {report.compliance:.6f}, "
            f"{report.iterations} iterations"
        )
    print(f"combined report: {combined}")
    return [report for _, report in reports]


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    flags = vars(args)
    config_path = flags.pop("config", None)
    sweep_path = flags.pop("sweep", None)
    jobs = flags.pop("jobs", None) or 0

    try:
        file_values = parse_config_file(config_path) if config_path else None
        if sweep_path:
            run_sweep(sweep_path, {k: v for k, v in flags.items() if v is not None}, jobs)
            return 0
        cfg = resolve_config(flags, file_values)
        run(cfg)
        return 0
    except (ValueError, FileNotFoundError) as exc:
        parser.exit(2, f"error: {exc}\n")
    except SingularSystemError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Output writers: density rasters (binary PGM), CSV tables, VTK files.

Rasters map density to grayscale as 255 * (1 - x), so solid material is
black. Quad grids raster one pixel per cell by default; triangulations are
sampled by point-in-element lookup at 8 pixels per unit length.
"""

import csv
import os

import numpy as np
from scipy.spatial import cKDTree

from . import mesh as meshmod
from .estimator import ErrorBreakdown
from .mesh import Mesh, write_vtk

DEFAULT_PIXELS_PER_UNIT = 8

REPORT_COLUMNS = [
    "element_type",
    "num_elements",
    "final_objective",
    "iterations",
    "bulk_residual",
    "internal_jump_residual",
    "neumann_residual",
    "local_eta_sq",
    "global_eta",
]


def density_to_gray(x: np.ndarray) -> np.ndarray:
    gray = np.rint(255.0 * (1.0 - np.asarray(x, dtype=float)))
    return np.clip(gray, 0, 255).astype(np.uint8)


def write_pgm(image: np.ndarray, path) -> None:
    """Binary (P5) grayscale image; image rows run top to bottom."""
    image = np.ascontiguousarray(image, dtype=np.uint8)
    height, width = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        fh.write(image.tobytes())


def _locate_triangles(mesh: Mesh, points: np.ndarray, k: int = 8) -> np.ndarray:
    """Containing element per query point via nearest-centroid candidates."""
    verts = mesh.nodes[mesh.conn[:, :3]]
    tree = cKDTree(mesh.centroids)
    k = min(k, mesh.n_elements)
    _, candidates = tree.query(points, k=k)
    candidates = np.atleast_2d(candidates)
    if candidates.shape[0] != len(points):
        candidates = candidates.reshape(len(points), -1)
    found = candidates[:, 0].copy()
    todo = np.ones(len(points), dtype=bool)
    tol = 1e-9
    for slot in range(candidates.shape[1]):
        if not todo.any():
            break
        tri = candidates[:, slot]
        v0, v1, v2 = verts[tri, 0], verts[tri, 1], verts[tri, 2]
        d1, d2, dp = v1 - v0, v2 - v0, points - v0
        det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        l1 = (dp[:, 0] * d2[:, 1] - dp[:, 1] * d2[:, 0]) / det
        l2 = (d1[:, 0] * dp[:, 1] - d1[:, 1] * dp[:, 0]) / det
        inside = (l1 >= -tol) & (l2 >= -tol) & (l1 + l2 <= 1.0 + tol)
        hit = todo & inside
        found[hit] = tri[hit]
        todo &= ~inside
    return found


def density_raster(mesh: Mesh, x: np.ndarray, pixels_per_unit: int | None = None) -> np.ndarray:
    """Grayscale image of a density field, top row at the top of the domain."""
    x = np.asarray(x, dtype=float)
    spec = mesh.spec
    if mesh.family == "q1" and pixels_per_unit is None:
        factor = 2 ** spec.refine_level
        nx, ny = spec.nx * factor, spec.ny * factor
        grid = x.reshape(ny, nx)
        return density_to_gray(grid[::-1])

    ppu = DEFAULT_PIXELS_PER_UNIT if pixels_per_unit is None else int(pixels_per_unit)
    width_px = max(1, int(round(spec.width * ppu)))
    height_px = max(1, int(round(spec.height * ppu)))
    px = (np.arange(width_px) + 0.5) * spec.width / width_px
    py = (np.arange(height_px) + 0.5) * spec.height / height_px
    gx, gy = np.meshgrid(px, py)
    points = np.column_stack([gx.ravel(), gy.ravel()])
    if mesh.family == "q1":
        factor = 2 ** spec.refine_level
        nx, ny = spec.nx * factor, spec.ny * factor
        ci = np.minimum((points[:, 0] / spec.width * nx).astype(int), nx - 1)
        cj = np.minimum((points[:, 1] / spec.height * ny).astype(int), ny - 1)
        elems = cj * nx + ci
    else:
        elems = _locate_triangles(mesh, points)
    image = density_to_gray(x[elems]).reshape(height_px, width_px)
    return image[::-1]


def write_density_csv(mesh: Mesh, x: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["element_id", "centroid_x", "centroid_y", "density"])
        for e in range(mesh.n_elements):
            writer.writerow(
                [
                    e,
                    repr(float(mesh.centroids[e, 0])),
                    repr(float(mesh.centroids[e, 1])),
                    repr(float(x[e])),
                ]
            )


def export_density(mesh: Mesh, x: np.ndarray, out_dir,
                   basename: str = "density",
                   pixels_per_unit: int | None = None) -> list[str]:
    """Write the PGM raster, per-element CSV and VTK file; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    pgm = os.path.join(out_dir, f"{basename}.pgm")
    write_pgm(density_raster(mesh, x, pixels_per_unit), pgm)
    paths.append(pgm)
    csv_path = os.path.join(out_dir, f"{basename}.csv")
    write_density_csv(mesh, x, csv_path)
    paths.append(csv_path)
    vtk_path = os.path.join(out_dir, f"{basename}.vtk")
    write_vtk(mesh, vtk_path, cell_data={"density": x})
    paths.append(vtk_path)
    return paths


def report_row(family: str, n_elements: int, compliance: float, iterations: int,
               breakdown: ErrorBreakdown | None = None) -> list[str]:
    """One benchmark summary row; error columns stay empty without an estimate."""
    row = [family.upper(), str(int(n_elements)), repr(float(compliance)), str(int(iterations))]
    if breakdown is None:
        row.extend([""] * 5)
    else:
        row.extend(
            [
                repr(breakdown.bulk_total),
                repr(breakdown.jump_total),
                repr(breakdown.neumann_total),
                repr(float(breakdown.local.sum())),
                repr(breakdown.eta_global),
            ]
        )
    return row


def append_report(path, row: list[str]) -> None:
    """Append a summary row, writing the header once and checking it after."""
    exists = os.path.exists(path)
    if exists:
        with open(path, newline="") as fh:
            header = next(csv.reader(fh), None)
        if header != REPORT_COLUMNS:
            raise ValueError(
                f"report schema mismatch in {path}: found {header}, "
                f"expected {REPORT_COLUMNS}"
            )
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if not exists:
            writer.writerow(REPORT_COLUMNS)
        writer.writerow(row)

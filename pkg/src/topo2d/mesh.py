"""Structured 2D meshes for rectangular and trapezoidal design domains.

Generates bilinear quad grids and linear/quadratic triangulations (two- or
four-way cell splits) with full edge topology, supports uniform red
refinement of triangle meshes, boundary-edge classification against a load
case, and legacy VTK export.

Node numbering is lexicographic by (y, x); auxiliary nodes (cell centers,
refinement midpoints, quadratic midsides) are appended in deterministic
order so repeated generation is bit-for-bit reproducible.
"""

import dataclasses
from dataclasses import dataclass

import numpy as np

from .fem import ELEMENT_NODES, check_family

# edge kinds
INTERIOR = 0
DIRICHLET = 1
NEUMANN = 2

SHAPES = ("rectangle", "trapezoid")
TRIANGULATIONS = ("two_split", "cross_split")

_LOCAL_EDGES = {
    "q1": ((0, 1), (1, 2), (2, 3), (3, 0)),
    "p1": ((0, 1), (1, 2), (2, 0)),
    "p2": ((0, 1), (1, 2), (2, 0)),
}

# midside connectivity slot for each local edge of a p2 triangle
_P2_MID_SLOT = (3, 4, 5)

_GEOM_TOL = 1e-12


@dataclass(frozen=True)
class DomainSpec:
    """Geometry and discretization request for a design domain.

    For shape "trapezoid" the left edge spans the full height and the right
    edge has length right_height, vertically centered; the mesh covers the
    full bounding rectangle and elements outside the trapezoid are passive.
    """

    width: float
    height: float
    nx: int
    ny: int
    shape: str = "rectangle"
    right_height: float | None = None
    triangulation: str = "cross_split"
    refine_level: int = 0

    def validate(self) -> None:
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}, expected one of {SHAPES}")
        if self.triangulation not in TRIANGULATIONS:
            raise ValueError(
                f"unknown triangulation {self.triangulation!r}, "
                f"expected one of {TRIANGULATIONS}"
            )
        if not (self.width > 0.0 and self.height > 0.0):
            raise ValueError("domain dimensions must be positive")
        if self.nx < 1 or self.ny < 1:
            raise ValueError("nx and ny must be at least 1")
        if self.refine_level < 0:
            raise ValueError("refine_level must be nonnegative")
        if self.shape == "trapezoid":
            if self.right_height is None:
                raise ValueError("trapezoid shape requires right_height")
            if not (0.0 < self.right_height <= self.height):
                raise ValueError("right_height must lie in (0, height]")


@dataclass
class Mesh:
    """Finite element mesh with edge topology.

    conn lists vertex nodes first (counterclockwise); p2 rows append the
    midside nodes of local edges (0,1), (1,2), (2,0). Edge arrays record
    endpoint vertices, the p2 midside id (-1 when absent), the edge kind,
    the one or two adjacent elements (-1 in the second slot on the
    boundary) and the edge length. Treat a constructed mesh as read-only.
    """

    family: str
    nodes: np.ndarray
    conn: np.ndarray
    passive: np.ndarray
    spec: DomainSpec
    edge_nodes: np.ndarray
    edge_mid: np.ndarray
    edge_kind: np.ndarray
    edge_elems: np.ndarray
    edge_length: np.ndarray
    areas: np.ndarray
    centroids: np.ndarray
    diameters: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.conn.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edge_nodes.shape[0]

    @property
    def n_vertices(self) -> int:
        """Number of vertex (corner) nodes; excludes p2 midsides."""
        if self.family == "p2":
            return int(self.conn[:, :3].max()) + 1
        return self.n_nodes


def _grid_points(width: float, height: float, nx: int, ny: int) -> np.ndarray:
    xs = np.linspace(0.0, width, nx + 1)
    ys = np.linspace(0.0, height, ny + 1)
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel()])


def _quad_grid(nx: int, ny: int) -> np.ndarray:
    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    i, j = i.ravel(), j.ravel()
    n00 = j * (nx + 1) + i
    return np.column_stack([n00, n00 + 1, n00 + nx + 2, n00 + nx + 1])


def _two_split(nx: int, ny: int) -> np.ndarray:
    quads = _quad_grid(nx, ny)
    n00, n10, n11, n01 = quads.T
    tris = np.empty((2 * len(quads), 3), dtype=np.int64)
    tris[0::2] = np.column_stack([n00, n10, n11])
    tris[1::2] = np.column_stack([n00, n11, n01])
    return tris


def _cross_split(points: np.ndarray, nx: int, ny: int) -> tuple[np.ndarray, np.ndarray]:
    quads = _quad_grid(nx, ny)
    centers = points[quads].mean(axis=1)
    cids = len(points) + np.arange(len(quads))
    n00, n10, n11, n01 = quads.T
    tris = np.empty((4 * len(quads), 3), dtype=np.int64)
    tris[0::4] = np.column_stack([n00, n10, cids])
    tris[1::4] = np.column_stack([n10, n11, cids])
    tris[2::4] = np.column_stack([n11, n01, cids])
    tris[3::4] = np.column_stack([n01, n00, cids])
    return np.vstack([points, centers]), tris


def _unique_edges(tris: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sorted unique vertex pairs of a triangulation and the per-slot inverse."""
    raw = np.sort(tris[:, [[0, 1], [1, 2], [2, 0]]].reshape(-1, 2), axis=1)
    pairs, inverse = np.unique(raw, axis=0, return_inverse=True)
    return pairs, inverse.reshape(len(tris), 3)


def _refine_triangulation(
    points: np.ndarray, tris: np.ndarray, passive: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One red refinement sweep: each triangle becomes 4 congruent children."""
    pairs, slots = _unique_edges(tris)
    mids = len(points) + slots  # (E, 3): midpoint ids per local edge
    points2 = np.vstack([points, points[pairs].mean(axis=1)])
    v0, v1, v2 = tris.T
    m01, m12, m20 = mids.T
    children = np.empty((4 * len(tris), 3), dtype=np.int64)
    children[0::4] = np.column_stack([v0, m01, m20])
    children[1::4] = np.column_stack([m01, v1, m12])
    children[2::4] = np.column_stack([m20, m12, v2])
    children[3::4] = np.column_stack([m01, m12, m20])
    return points2, children, np.repeat(passive, 4)


def _p2_connectivity(points: np.ndarray, tris: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pairs, slots = _unique_edges(tris)
    mids = len(points) + slots
    nodes = np.vstack([points, points[pairs].mean(axis=1)])
    return nodes, np.hstack([tris, mids])


def _trapezoid_bounds(spec: DomainSpec, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Lower and upper boundary of the trapezoid at abscissa x."""
    y_lo_right = 0.5 * (spec.height - spec.right_height)
    y_hi_right = 0.5 * (spec.height + spec.right_height)
    t = x / spec.width
    return t * y_lo_right, spec.height + t * (y_hi_right - spec.height)

def _passive_flags(spec: DomainSpec, family: str, nodes: np.ndarray, conn: np.ndarray) -> np.ndarray:
    n_el = conn.shape[0]
    if spec.shape != "trapezoid":
        return np.zeros(n_el, dtype=bool)
    tol = _GEOM_TOL * max(spec.width, spec.height)
    if family == "q1":
        cen = nodes[conn].mean(axis=1)
        lo, hi = _trapezoid_bounds(spec, cen[:, 0])
        return (cen[:, 1] < lo - tol) | (cen[:, 1] > hi + tol)
    # triangles: passive only when all vertices fall on the outside of the
    # same bounding line, which guarantees the whole element lies outside
    verts = nodes[conn[:, :3]]
    lo, hi = _trapezoid_bounds(spec, verts[..., 0].ravel())
    below = (verts[..., 1].ravel() < lo - tol).reshape(n_el, 3)
    above = (verts[..., 1].ravel() > hi + tol).reshape(n_el, 3)
    return below.all(axis=1) | above.all(axis=1)


def _build_mesh(family: str, nodes: np.ndarray, conn: np.ndarray,
                passive: np.ndarray, spec: DomainSpec) -> Mesh:
    n_el = conn.shape[0]
    locals_ = _LOCAL_EDGES[family]
    index: dict[tuple[int, int], int] = {}
    enodes: list[tuple[int, int]] = []
    emid: list[int] = []
    eelems: list[list[int]] = []
    for e in range(n_el):
        row = conn[e]
        for li, (a, b) in enumerate(locals_):
            na, nb = int(row[a]), int(row[b])
            key = (na, nb) if na < nb else (nb, na)
            hit = index.get(key)
            if hit is None:
                index[key] = len(enodes)
                enodes.append((na, nb))
                emid.append(int(row[_P2_MID_SLOT[li]]) if family == "p2" else -1)
                eelems.append([e, -1])
            else:
                if eelems[hit][1] != -1:
                    raise ValueError(f"edge {key} shared by more than two elements")
                eelems[hit][1] = e

    edge_nodes = np.asarray(enodes, dtype=np.int64)
    edge_mid = np.asarray(emid, dtype=np.int64)
    edge_elems = np.asarray(eelems, dtype=np.int64)
    delta = nodes[edge_nodes[:, 1]] - nodes[edge_nodes[:, 0]]
    edge_length = np.hypot(delta[:, 0], delta[:, 1])
    edge_kind = np.where(edge_elems[:, 1] < 0, NEUMANN, INTERIOR).astype(np.int8)

    nv = 3 if family != "q1" else 4
    verts = nodes[conn[:, :nv]]
    x, y = verts[..., 0], verts[..., 1]
    xn, yn = np.roll(x, -1, axis=1), np.roll(y, -1, axis=1)
    areas = 0.5 * np.sum(x * yn - xn * y, axis=1)
    if np.any(areas <= 0.0):
        bad = int(np.argmax(areas <= 0.0))
        raise ValueError(f"element {bad} is not counterclockwise (area {areas[bad]:g})")
    centroids = verts.mean(axis=1)
    diffs = verts[:, :, None, :] - verts[:, None, :, :]
    diameters = np.sqrt((diffs ** 2).sum(axis=-1)).max(axis=(1, 2))

    return Mesh(
        family=family,
        nodes=nodes,
        conn=conn,
        passive=passive,
        spec=spec,
        edge_nodes=edge_nodes,
        edge_mid=edge_mid,
        edge_kind=edge_kind,
        edge_elems=edge_elems,
        edge_length=edge_length,
        areas=areas,
        centroids=centroids,
        diameters=diameters,
    )


def generate_mesh(spec: DomainSpec, family: str) -> Mesh:
    """Generate a mesh of the requested family over the domain.

    Quad grids honour refine_level by doubling nx and ny per level;
    triangle meshes apply red refinement to the base triangulation.
    """
    check_family(family)
    spec.validate()

    if family == "q1":
        factor = 2 ** spec.refine_level
        nx, ny = spec.nx * factor, spec.ny * factor
        nodes = _grid_points(spec.width, spec.height, nx, ny)
        conn = _quad_grid(nx, ny)
    else:
        points = _grid_points(spec.width, spec.height, spec.nx, spec.ny)
        if spec.triangulation == "two_split":
            tris = _two_split(spec.nx, spec.ny)
        else:
            points, tris = _cross_split(points, spec.nx, spec.ny)
        passive = np.zeros(len(tris), dtype=bool)
        for _ in range(spec.refine_level):
            points, tris, passive = _refine_triangulation(points, tris, passive)
        if family == "p2":
            nodes, conn = _p2_connectivity(points, tris)
        else:
            nodes, conn = points, tris

    passive = _passive_flags(spec, family, nodes, conn)
    return _build_mesh(family, nodes, conn, passive, spec)


def refine_uniform(mesh: Mesh) -> Mesh:
    """Red refinement of a triangle mesh: 4 congruent children per element.

    Children inherit the parent's passive flag. Quad meshes are regenerated
    from a finer DomainSpec instead.
    """
    if mesh.family == "q1":
        raise ValueError(
            "refine_uniform applies to triangle meshes; regenerate q1 grids "
            "from a DomainSpec with a higher refine_level"
        )
    if mesh.family == "p2":
        points = mesh.nodes[: mesh.n_vertices]
        tris = mesh.conn[:, :3]
    else:
        points, tris = mesh.nodes, mesh.conn
    points, tris, passive = _refine_triangulation(points, tris, mesh.passive)
    if mesh.family == "p2":
        nodes, conn = _p2_connectivity(points, tris)
    else:
        nodes, conn = points, tris
    spec = dataclasses.replace(mesh.spec, refine_level=mesh.spec.refine_level + 1)
    return _build_mesh(mesh.family, nodes, conn, passive, spec)


def _resolve_fixed_nodes(mesh: Mesh, case) -> np.ndarray:
    if hasattr(case, "fixed_nodes"):
        fixed = case.fixed_nodes
    elif callable(case):
        fixed = case
    else:
        fixed = case
    if callable(fixed):
        mask = np.asarray(
            [bool(fixed(x, y)) for x, y in mesh.nodes], dtype=bool
        )
        return np.flatnonzero(mask)
    return np.asarray(fixed, dtype=np.int64)


def classify_boundary(mesh: Mesh, case) -> Mesh:
    """Label boundary edges from a load case's fixed nodes.

    A boundary edge becomes DIRICHLET when both endpoint vertices are
    fixed, NEUMANN otherwise. `case` may be a LoadCase, an array of node
    ids, or a predicate over (x, y). Returns a new mesh sharing all other
    arrays.
    """
    fixed = _resolve_fixed_nodes(mesh, case)
    is_fixed = np.zeros(mesh.n_nodes, dtype=bool)
    is_fixed[fixed] = True
    kind = mesh.edge_kind.copy()
    boundary = mesh.edge_elems[:, 1] < 0
    both = is_fixed[mesh.edge_nodes[:, 0]] & is_fixed[mesh.edge_nodes[:, 1]]
    kind[boundary & both] = DIRICHLET
    kind[boundary & ~both] = NEUMANN
    return dataclasses.replace(mesh, edge_kind=kind)


def boundary_node_ids(mesh: Mesh) -> np.ndarray:
    """Ids of all nodes lying on boundary edges, midsides included."""
    boundary = mesh.edge_elems[:, 1] < 0
    ids = [mesh.edge_nodes[boundary].ravel()]
    mids = mesh.edge_mid[boundary]
    ids.append(mids[mids >= 0])
    return np.unique(np.concatenate(ids))


def nearest_node(mesh: Mesh, x: float, y: float) -> int:
    """Id of the node closest to (x, y); ties resolve to the lowest id."""
    d2 = (mesh.nodes[:, 0] - x) ** 2 + (mesh.nodes[:, 1] - y) ** 2
    return int(np.argmin(d2))


_VTK_CELL_TYPE = {"p1": 5, "q1": 9, "p2": 22}


def write_vtk(mesh: Mesh, path, cell_data: dict | None = None) -> None:
    """Write the mesh as legacy ASCII VTK with optional per-element scalars."""
    k = ELEMENT_NODES[mesh.family]
    lines = [
        "# vtk DataFile Version 3.0",
        "topo2d mesh",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {mesh.n_nodes} double",
    ]
    lines.extend(f"{float(x)!r} {float(y)!r} 0.0" for x, y in mesh.nodes)
    lines.append(f"CELLS {mesh.n_elements} {mesh.n_elements * (k + 1)}")
    lines.extend(f"{k} " + " ".join(str(n) for n in row) for row in mesh.conn)
    lines.append(f"CELL_TYPES {mesh.n_elements}")
    cell_type = _VTK_CELL_TYPE[mesh.family]
    lines.extend(str(cell_type) for _ in range(mesh.n_elements))
    if cell_data:
        lines.append(f"CELL_DATA {mesh.n_elements}")
        for name, values in cell_data.items():
            values = np.asarray(values, dtype=float)
            if values.shape != (mesh.n_elements,):
                raise ValueError(f"cell data {name!r} must have one value per element")
            lines.append(f"SCALARS {name} double 1")
            lines.append("LOOKUP_TABLE default")
            lines.extend(f"{float(v)!r}" for v in values)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")

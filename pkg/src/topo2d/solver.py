"""Global assembly of density-penalized stiffness, load vectors and solves.

Dirichlet conditions are enforced by elimination: the system is reduced to
free degrees of freedom, solved with a sparse direct factorization (a
diagonally preconditioned conjugate-gradient fallback is available), and
expanded back. Every solve is checked against its own residual.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fem, mesh as meshmod

#: solves are rejected when the free-dof relative residual exceeds this
RESIDUAL_TOL = 1e-8


class SingularSystemError(RuntimeError):
    """Raised when the reduced system is singular or a solve fails its checks."""


@dataclass(frozen=True)
class LoadCase:
    """Supports and loads for one problem.

    fixed_nodes lists node ids with both displacement components pinned to
    zero. point_loads holds (node_id, fx, fy) triples. traction, when set,
    is a callable g(points, normal) -> (m, 2) evaluated per Neumann edge,
    and body_force is a domain-constant vector.
    """

    fixed_nodes: np.ndarray
    point_loads: tuple = ()
    traction: object = None
    body_force: tuple[float, float] = (0.0, 0.0)


class DofMap:
    """Node id -> (x-dof, y-dof) with the interleaved numbering 2n, 2n+1."""

    def __init__(self, n_nodes: int):
        self.n_nodes = n_nodes
        self.ndof = 2 * n_nodes

    def node_dofs(self, node: int) -> tuple[int, int]:
        if not 0 <= node < self.n_nodes:
            raise ValueError(f"node id {node} outside [0, {self.n_nodes})")
        return 2 * node, 2 * node + 1


def element_dof_matrix(conn: np.ndarray) -> np.ndarray:
    """Interleaved dof indices per element, shape (E, 2k)."""
    n_el, k = conn.shape
    dofs = np.empty((n_el, 2 * k), dtype=np.int64)
    dofs[:, 0::2] = 2 * conn
    dofs[:, 1::2] = 2 * conn + 1
    return dofs


@dataclass
class GlobalSystem:
    """Assembled stiffness, load vector and constrained dof list."""

    K: sp.csc_matrix
    F: np.ndarray
    constrained_dofs: np.ndarray
    ndof: int


@dataclass
class SolveResult:
    U: np.ndarray
    residual_norm: float
    compliance: float


def constrained_dof_ids(case: LoadCase) -> np.ndarray:
    fixed = np.asarray(case.fixed_nodes, dtype=np.int64)
    return np.sort(np.concatenate([2 * fixed, 2 * fixed + 1]))


def _edge_outward_normal(mesh: meshmod.Mesh, edge: int, elem: int) -> np.ndarray:
    a, b = mesh.edge_nodes[edge]
    tang = mesh.nodes[b] - mesh.nodes[a]
    normal = np.array([tang[1], -tang[0]]) / np.hypot(tang[0], tang[1])
    midpoint = 0.5 * (mesh.nodes[a] + mesh.nodes[b])
    if np.dot(normal, midpoint - mesh.centroids[elem]) < 0.0:
        normal = -normal
    return normal


def build_load_vector(mesh: meshmod.Mesh, case: LoadCase) -> np.ndarray:
    """Point loads plus consistent body-force and traction contributions."""
    F = np.zeros(2 * mesh.n_nodes)
    for node, fx, fy in case.point_loads:
        node = int(node)
        if not 0 <= node < mesh.n_nodes:
            raise ValueError(f"point load node {node} outside [0, {mesh.n_nodes})")
        F[2 * node] += fx
        F[2 * node + 1] += fy

    body = np.asarray(case.body_force, dtype=float)
    if np.any(body != 0.0):
        rule = fem.quadrature_rule(mesh.family)
        values, _ = fem.shape_functions_at(mesh.family, rule.points)
        # integral of each shape function over the element, per unit area
        coef = rule.weights @ values
        contrib = mesh.areas[:, None] * coef[None, :]
        dofs = element_dof_matrix(mesh.conn)
        np.add.at(F, dofs[:, 0::2], contrib * body[0])
        np.add.at(F, dofs[:, 1::2], contrib * body[1])

    if case.traction is not None:
        t, w = fem.edge_quadrature_3pt()
        for edge in np.flatnonzero(mesh.edge_kind == meshmod.NEUMANN):
            elem = int(mesh.edge_elems[edge, 0])
            a, b = mesh.edge_nodes[edge]
            pa, pb = mesh.nodes[a], mesh.nodes[b]
            pts = pa[None, :] + t[:, None] * (pb - pa)[None, :]
            normal = _edge_outward_normal(mesh, edge, elem)
            g = np.asarray(case.traction(pts, normal), dtype=float)
            coords = np.broadcast_to(mesh.nodes[mesh.conn[elem]], (len(t),) + mesh.nodes[mesh.conn[elem]].shape)
            ref = fem.reference_coords(mesh.family, coords, pts)
            values, _ = fem.shape_functions_at(mesh.family, ref)
            weight = mesh.edge_length[edge] * w
            fe = np.einsum("q,qk,qc->kc", weight, values, g)
            np.add.at(F, 2 * mesh.conn[elem], fe[:, 0])
            np.add.at(F, 2 * mesh.conn[elem] + 1, fe[:, 1])
    return F


def _density_array(densities, n_elements: int) -> np.ndarray:
    x = getattr(densities, "x", densities)
    x = np.asarray(x, dtype=float)
    if x.shape != (n_elements,):
        raise ValueError(f"expected {n_elements} densities, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("densities must be finite")
    floor = getattr(densities, "x_min", None)
    lo = floor if floor is not None else 0.0
    if np.any(x < lo - 1e-12) or np.any(x > 1.0 + 1e-12) or np.any(x <= 0.0):
        raise ValueError(f"densities must lie in [{lo:g}, 1]")
    return x


class StiffnessAssembler:
    """Caches element stiffness and scatter indices for repeated assembly.

    Element matrices are density independent; each assembly only rescales
    them by x^p and sums into sparse storage, so the optimizer pays the
    element integration cost once per mesh.
    """

    def __init__(self, mesh: meshmod.Mesh, material: fem.Material, case: LoadCase):
        self.mesh = mesh
        self.material = material
        self.case = case
        coords = mesh.nodes[mesh.conn]
        self.k0 = fem.element_stiffness_batch(mesh.family, coords, material)
        self.edofs = element_dof_matrix(mesh.conn)
        n_el, w = self.edofs.shape
        self.ndof = 2 * mesh.n_nodes
        self._rows = np.broadcast_to(self.edofs[:, :, None], (n_el, w, w)).ravel()
        self._cols = np.broadcast_to(self.edofs[:, None, :], (n_el, w, w)).ravel()
        self._entry_elem = np.repeat(np.arange(n_el), w * w)
        self._k0_flat = self.k0.ravel()

        self.F = build_load_vector(mesh, case)
        self.constrained = constrained_dof_ids(case)
        free_mask = np.ones(self.ndof, dtype=bool)
        free_mask[self.constrained] = False
        self.free = np.flatnonzero(free_mask)
        keep = free_mask[self._rows] & free_mask[self._cols]
        remap = np.full(self.ndof, -1, dtype=np.int64)
        remap[self.free] = np.arange(len(self.free))
        self._keep = keep
        self._rows_free = remap[self._rows[keep]]
        self._cols_free = remap[self._cols[keep]]

    def scaled_data(self, x: np.ndarray, penal: float) -> np.ndarray:
        return self._k0_flat * (x ** penal)[self._entry_elem]

    def global_system(self, x: np.ndarray, penal: float) -> GlobalSystem:
        data = self.scaled_data(x, penal)
        K = sp.coo_matrix((data, (self._rows, self._cols)), shape=(self.ndof, self.ndof))
        return GlobalSystem(K.tocsc(), self.F.copy(), self.constrained, self.ndof)

    def reduced_matrix(self, x: np.ndarray, penal: float) -> sp.csc_matrix:
        data = self.scaled_data(x, penal)[self._keep]
        n = len(self.free)
        return sp.coo_matrix((data, (self._rows_free, self._cols_free)), shape=(n, n)).tocsc()

    def solve(self, x: np.ndarray, penal: float, method: str = "direct") -> SolveResult:
        if len(self.free) == 0:
            raise ValueError("all degrees of freedom are constrained")
        K_ff = self.reduced_matrix(x, penal)
        rhs = self.F[self.free]
        u_f = _solve_reduced(K_ff, rhs, method)
        return _expand_solution(K_ff, rhs, u_f, self.free, self.ndof, self.F)

    def strain_energies(self, U: np.ndarray) -> np.ndarray:
        """Per-element u_e^T K0_e u_e at unit density."""
        u_e = U[self.edofs]
        return np.einsum("ei,eij,ej->e", u_e, self.k0, u_e)


def assemble(mesh: meshmod.Mesh, densities, penal: float,
             material: fem.Material, case: LoadCase) -> GlobalSystem:
    """Assemble K(x) = sum_e x_e^p K0_e and the load vector for a case."""
    x = _density_array(densities, mesh.n_elements)
    return StiffnessAssembler(mesh, material, case).global_system(x, penal)


def apply_dirichlet(system: GlobalSystem, prescribed: np.ndarray | None = None):
    """Reduce the system to free dofs by elimination.

    prescribed, when given, is a full-length vector whose values at the
    constrained dofs lift into the right-hand side (zero otherwise).
    Returns (K_ff, rhs, free_dofs).
    """
    cd = np.asarray(system.constrained_dofs, dtype=np.int64)
    if len(cd) >= system.ndof:
        raise ValueError("all degrees of freedom are constrained")
    mask = np.ones(system.ndof, dtype=bool)
    mask[cd] = False
    free = np.flatnonzero(mask)
    K = system.K.tocsr()
    K_ff = K[free][:, free].tocsc()
    rhs = system.F[free].astype(float).copy()
    if prescribed is not None and len(cd) > 0:
        u_c = np.asarray(prescribed, dtype=float)[cd]
        if np.any(u_c != 0.0):
            rhs -= K[free][:, cd] @ u_c
    return K_ff, rhs, free


def _solve_reduced(K_ff: sp.csc_matrix, rhs: np.ndarray, method: str) -> np.ndarray:
    if method == "direct":
        try:
            lu = spla.splu(K_ff)
        except RuntimeError as exc:
            raise SingularSystemError(f"direct factorization failed: {exc}") from exc
        pivots = np.abs(lu.U.diagonal())
        smallest = float(pivots.min()) if len(pivots) else 0.0
        # a zero rhs would mask a (numerically) singular factorization, so
        # probe the factor with a fixed right-hand side in that case
        norm_rhs = np.linalg.norm(rhs)
        probe = rhs if norm_rhs > 0.0 else np.sin(np.arange(1, len(rhs) + 1, dtype=float))
        u = lu.solve(probe)
        resid = np.linalg.norm(K_ff @ u - probe) / max(np.linalg.norm(probe), 1e-300)
        if not np.all(np.isfinite(u)) or resid > RESIDUAL_TOL:
            raise SingularSystemError(
                "reduced system is singular or ill-conditioned "
                f"(smallest pivot {smallest:.3e}, probe residual {resid:.3e})"
            )
        return u if norm_rhs > 0.0 else np.zeros_like(rhs)
    if method == "cg":
        diag = K_ff.diagonal()
        if np.any(diag <= 0.0):
            raise SingularSystemError("non-positive diagonal entry; cg needs an SPD system")
        precond = spla.LinearOperator(K_ff.shape, matvec=lambda v: v / diag)
        maxiter = 10 * K_ff.shape[0]
        u, info = spla.cg(K_ff, rhs, rtol=1e-10, atol=0.0, maxiter=maxiter, M=precond)
        if info != 0:
            raise SingularSystemError(
                f"cg failed to converge within {maxiter} iterations (info={info})"
            )
        return u
    raise ValueError(f"unknown solve method {method!r}")


def _expand_solution(K_ff, rhs, u_f, free, ndof, F, prescribed=None,
                     constrained=None) -> SolveResult:
    U = np.zeros(ndof)
    U[free] = u_f
    if prescribed is not None and constrained is not None and len(constrained):
        U[constrained] = np.asarray(prescribed, dtype=float)[constrained]
    residual = K_ff @ u_f - rhs
    denom = np.linalg.norm(rhs)
    residual_norm = float(np.linalg.norm(residual) / (denom if denom > 0.0 else 1.0))
    if residual_norm > RESIDUAL_TOL:
        raise SingularSystemError(f"solve residual {residual_norm:.3e} exceeds {RESIDUAL_TOL:g}")
    compliance = float(F @ U)
    return SolveResult(U=U, residual_norm=residual_norm, compliance=compliance)


def solve(system: GlobalSystem, method: str = "direct",
          prescribed: np.ndarray | None = None) -> SolveResult:
    """Solve K U = F with constrained dofs eliminated.

    The direct path factorizes with SuperLU (deterministic for identical
    inputs); "cg" runs diagonally preconditioned conjugate gradients with
    rtol 1e-10. Raises SingularSystemError when the reduced system is
    singular or the residual check fails.
    """
    K_ff, rhs, free = apply_dirichlet(system, prescribed)
    u_f = _solve_reduced(K_ff, rhs, method)
    return _expand_solution(
        K_ff, rhs, u_f, free, system.ndof, system.F,
        prescribed=prescribed, constrained=system.constrained_dofs,
    )

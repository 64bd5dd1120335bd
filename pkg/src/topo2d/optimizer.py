"""Compliance minimization with penalized densities.

The loop follows the classic pattern: solve, evaluate compliance and its
density gradient, smooth the gradient with a distance-weighted sensitivity
filter over element centroids, update densities with the optimality
criteria rule under a volume constraint, and stop once the largest density
change falls below the convergence tolerance.
"""

import csv
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from . import fem, mesh as meshmod
from .solver import LoadCase, SolveResult, StiffnessAssembler


class BisectionError(RuntimeError):
    """Raised when the volume-constraint bisection fails to converge."""


@dataclass(frozen=True)
class SimpConfig:
    """Penalization and update parameters for one optimization run."""

    volfrac: float
    penal: float = 3.0
    rmin: float = 1.5
    move: float = 0.2
    damping: float = 0.5
    conv_tol: float = 0.01
    max_iters: int = 500
    x_min: float = 1e-3

    def validate(self) -> None:
        if not 0.0 < self.volfrac <= 1.0:
            raise ValueError("volfrac must lie in (0, 1]")
        if self.penal < 1.0:
            raise ValueError("penal must be at least 1")
        if self.rmin <= 0.0 or self.move <= 0.0 or self.damping <= 0.0:
            raise ValueError("rmin, move and damping must be positive")
        if not 0.0 < self.x_min < 1.0:
            raise ValueError("x_min must lie in (0, 1)")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


@dataclass
class DensityField:
    """Element densities with passive mask and element volumes.

    Passive elements stay pinned at x_min; the volume fraction is taken
    over the active subdomain only.
    """

    x: np.ndarray
    passive: np.ndarray
    volumes: np.ndarray
    x_min: float = 1e-3

    @classmethod
    def uniform(cls, mesh: meshmod.Mesh, volfrac: float, x_min: float = 1e-3) -> "DensityField":
        x = np.full(mesh.n_elements, float(volfrac))
        x[mesh.passive] = x_min
        return cls(x=x, passive=mesh.passive.copy(), volumes=mesh.areas.copy(), x_min=x_min)

    def volume_fraction(self) -> float:
        active = ~self.passive
        return float(
            (self.x[active] * self.volumes[active]).sum() / self.volumes[active].sum()
        )


@dataclass
class IterationRecord:
    loop: int
    compliance: float
    rchange: float
    volume: float
    wall_time: float


@dataclass
class OptimizeResult:
    field: DensityField
    history: list
    compliance: float
    iterations: int


def element_strain_energies(mesh: meshmod.Mesh, material: fem.Material,
                            U: np.ndarray) -> np.ndarray:
    """Per-element u_e^T K0_e u_e at unit density."""
    k0 = fem.element_stiffness_batch(mesh.family, mesh.nodes[mesh.conn], material)
    conn = mesh.conn
    u_e = np.empty((mesh.n_elements, 2 * conn.shape[1]))
    u_e[:, 0::2] = U[2 * conn]
    u_e[:, 1::2] = U[2 * conn + 1]
    return np.einsum("ei,eij,ej->e", u_e, k0, u_e)


def compliance_and_sensitivity(mesh: meshmod.Mesh, densities, U: np.ndarray,
                               penal: float, material: fem.Material):
    """Compliance sum_e x^p u^T K0 u and its density gradient -p x^(p-1) u^T K0 u."""
    x = np.asarray(getattr(densities, "x", densities), dtype=float)
    sed = element_strain_energies(mesh, material, U)
    compliance = float(((x ** penal) * sed).sum())
    dc = -penal * x ** (penal - 1.0) * sed
    return compliance, dc


def characteristic_size(mesh: meshmod.Mesh) -> float:
    """Filter length unit: cell width for quad grids, sqrt of the mean
    element area for triangulations."""
    if mesh.family == "q1":
        xs = mesh.nodes[mesh.conn[0], 0]
        return float(xs.max() - xs.min())
    return float(np.sqrt(mesh.areas.mean()))


class SensitivityFilter:
    """Distance-weighted averaging of x*dc over element centroid neighborhoods.

    Weights are the linear hat max(0, r - dist) with r = rmin times the
    characteristic element size; the neighborhood structure is built once
    per mesh with a KD-tree.
    """

    def __init__(self, mesh: meshmod.Mesh, rmin: float):
        radius = rmin * characteristic_size(mesh)
        centroids = mesh.centroids
        n_el = len(centroids)
        pairs = cKDTree(centroids).query_pairs(radius, output_type="ndarray")
        dist = np.linalg.norm(centroids[pairs[:, 0]] - centroids[pairs[:, 1]], axis=1)
        weight = radius - dist
        i = np.concatenate([pairs[:, 0], pairs[:, 1], np.arange(n_el)])
        j = np.concatenate([pairs[:, 1], pairs[:, 0], np.arange(n_el)])
        w = np.concatenate([weight, weight, np.full(n_el, radius)])
        self.weights = sp.coo_matrix((w, (i, j)), shape=(n_el, n_el)).tocsr()
        self.row_sums = np.asarray(self.weights.sum(axis=1)).ravel()

    def apply(self, x: np.ndarray, dc: np.ndarray) -> np.ndarray:
        return (self.weights @ (x * dc)) / (x * self.row_sums)


def sensitivity_filter(mesh: meshmod.Mesh, x: np.ndarray, dc: np.ndarray,
                       rmin: float) -> np.ndarray:
    """One-shot convenience wrapper around SensitivityFilter."""
    return SensitivityFilter(mesh, rmin).apply(x, dc)


def oc_update(x: np.ndarray, dc: np.ndarray, volumes: np.ndarray,
              config: SimpConfig, passive: np.ndarray | None = None) -> np.ndarray:
    """Optimality criteria step under the active-volume constraint.

    The Lagrange multiplier is found by bisection until the constraint is
    met to 1e-6 of the active volume; passive elements stay at x_min.
    """
    x = np.asarray(x, dtype=float)
    dc = np.asarray(dc, dtype=float)
    volumes = np.asarray(volumes, dtype=float)
    if passive is None:
        passive = np.zeros_like(x, dtype=bool)
    scale = np.abs(dc).max()
    if np.any(dc > 1e-12 * max(scale, 1.0)):
        raise ValueError("compliance sensitivities must be nonpositive")
    dc = np.minimum(dc, 0.0)

    active = ~passive
    v0 = volumes[active].sum()
    target = config.volfrac * v0
    lower = np.maximum(config.x_min, x - config.move)
    upper = np.minimum(1.0, x + config.move)

    def candidate(lam: float) -> np.ndarray:
        ratio = (-dc / (lam * volumes)) ** config.damping
        xn = np.clip(x * ratio, lower, upper)
        xn[passive] = config.x_min
        return xn

    def active_volume(xn: np.ndarray) -> float:
        return float((xn[active] * volumes[active]).sum())

    lo, hi = 1e-10, 1e10
    for _ in range(30):
        if active_volume(candidate(lo)) >= target:
            break
        lo /= 10.0
    for _ in range(30):
        if active_volume(candidate(hi)) <= target:
            break
        hi *= 10.0

    for _ in range(200):
        lam = 0.5 * (lo + hi)
        xn = candidate(lam)
        vol = active_volume(xn)
        if abs(vol - target) <= 1e-6 * v0:
            return xn
        if vol > target:
            lo = lam
        else:
            hi = lam
    raise BisectionError(
        f"volume bisection did not converge after 200 iterations "
        f"(bracket [{lo:.6e}, {hi:.6e}], volume error {abs(vol - target) / v0:.3e})"
    )


def optimize(mesh: meshmod.Mesh, case: LoadCase, material: fem.Material,
             config: SimpConfig, callback=None, solve_method: str = "direct",
             log=None) -> OptimizeResult:
    """Run the density update loop until convergence or max_iters.

    The convergence test runs after each update, so conv_tol = inf stops
    after exactly one iteration. callback, when given, receives
    (loop, densities) after every update. log, when given, receives one
    formatted progress line per iteration.
    """
    config.validate()
    assembler = StiffnessAssembler(mesh, material, case)
    filt = SensitivityFilter(mesh, config.rmin)
    field_ = DensityField.uniform(mesh, config.volfrac, config.x_min)
    x = field_.x
    volumes = field_.volumes
    history: list[IterationRecord] = []

    loop = 0
    while True:
        loop += 1
        started = time.perf_counter()
        x_old = x
        result = assembler.solve(x, config.penal, method=solve_method)
        sed = assembler.strain_energies(result.U)
        compliance = float(((x ** config.penal) * sed).sum())
        dc = -config.penal * x ** (config.penal - 1.0) * sed
        dc_filtered = filt.apply(x, dc)
        x = oc_update(x_old, dc_filtered, volumes, config, passive=field_.passive)
        rchange = float(np.abs(x - x_old).max() / x_old.max())
        active = ~field_.passive
        volume = float((x[active] * volumes[active]).sum() / volumes[active].sum())
        history.append(
            IterationRecord(loop, float(compliance), float(rchange), volume,
                            time.perf_counter() - started)
        )
        if log is not None:
            log(
                f"it {loop:4d}  obj {compliance:12.6f}  vol {volume:.4f}  "
                f"change {rchange:.5f}"
            )
        if callback is not None:
            callback(loop, x.copy())
        if rchange <= config.conv_tol or loop >= config.max_iters:
            break

    field_ = DensityField(x=x, passive=field_.passive, volumes=volumes,
                          x_min=config.x_min)
    return OptimizeResult(field=field_, history=history,
                          compliance=history[-1].compliance, iterations=loop)


def write_history_csv(history, path) -> None:
    """Per-iteration log: loop, compliance, rchange, volume, wall_time."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["loop", "compliance", "rchange", "volume", "wall_time"])
        for rec in history:
            writer.writerow(
                [rec.loop, repr(rec.compliance), repr(rec.rchange),
                 repr(rec.volume), repr(rec.wall_time)]
            )

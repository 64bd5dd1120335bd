"""Element-level building blocks for 2D linear elasticity.

Covers the three supported element families (bilinear quads, linear and
quadratic triangles): material law, reference shape functions, quadrature
rules, strain-displacement matrices and element stiffness integration.

Strain uses the engineering Voigt convention (eps_xx, eps_yy, gamma_xy) and
element displacement vectors interleave components as (u1x, u1y, u2x, ...).
"""

from dataclasses import dataclass

import numpy as np

FAMILIES = ("q1", "p1", "p2")

#: nodes per element, by family
ELEMENT_NODES = {"q1": 4, "p1": 3, "p2": 6}

#: measure of the reference element (biunit square / unit triangle)
REF_MEASURE = {"q1": 4.0, "p1": 0.5, "p2": 0.5}

# corner signs of the biunit square, counterclockwise from (-1, -1)
_Q1_SIGNS = np.array([(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)])


def check_family(family: str) -> str:
    if family not in FAMILIES:
        raise ValueError(f"unknown element family {family!r}, expected one of {FAMILIES}")
    return family


@dataclass(frozen=True)
class Material:
    """Isotropic linear-elastic material with a selectable 2D reduction.

    model "lame" keeps the 3D Lame parameters (plane-strain behaviour),
    model "plane_stress" substitutes the reduced first parameter
    2*lam*mu/(lam + 2*mu).
    """

    E: float = 1.0
    nu: float = 0.3
    model: str = "lame"

    def __post_init__(self):
        if self.model not in ("lame", "plane_stress"):
            raise ValueError(f"unknown material model {self.model!r}")
        if not (self.E > 0.0):
            raise ValueError("Young's modulus must be positive")
        if not (-1.0 < self.nu < 0.5):
            raise ValueError("Poisson ratio must lie in (-1, 0.5)")

    @property
    def mu(self) -> float:
        return self.E / (2.0 * (1.0 + self.nu))

    @property
    def lam(self) -> float:
        lam3d = self.E * self.nu / ((1.0 + self.nu) * (1.0 - 2.0 * self.nu))
        if self.model == "plane_stress":
            return 2.0 * lam3d * self.mu / (lam3d + 2.0 * self.mu)
        return lam3d


def elasticity_matrix(material: Material) -> np.ndarray:
    """3x3 matrix mapping Voigt strain (eps_xx, eps_yy, gamma_xy) to stress."""
    lam, mu = material.lam, material.mu
    return np.array(
        [
            [lam + 2.0 * mu, lam, 0.0],
            [lam, lam + 2.0 * mu, 0.0],
            [0.0, 0.0, mu],
        ]
    )


@dataclass(frozen=True)
class QuadratureRule:
    """Points on the reference element with area-normalized weights.

    Weights sum to one, so integrals evaluate as
    area_e * sum_i w_i f(p_i) on affine elements.
    """

    points: np.ndarray
    weights: np.ndarray


def tri_quadrature_7pt() -> QuadratureRule:
    """Symmetric 7-point triangle rule, exact for polynomials up to degree 5."""
    s15 = np.sqrt(15.0)
    a = (6.0 + s15) / 21.0
    b = (6.0 - s15) / 21.0
    wa = (155.0 + s15) / 1200.0
    wb = (155.0 - s15) / 1200.0
    points = np.array(
        [
            (1.0 / 3.0, 1.0 / 3.0),
            (a, a),
            (1.0 - 2.0 * a, a),
            (a, 1.0 - 2.0 * a),
            (b, b),
            (1.0 - 2.0 * b, b),
            (b, 1.0 - 2.0 * b),
        ]
    )
    weights = np.array([9.0 / 40.0, wa, wa, wa, wb, wb, wb])
    return QuadratureRule(points, weights)


def quad_quadrature_2x2() -> QuadratureRule:
    """Tensor 2x2 Gauss rule on the biunit square (degree 3 per axis)."""
    g = 1.0 / np.sqrt(3.0)
    points = np.array([(-g, -g), (g, -g), (g, g), (-g, g)])
    weights = np.full(4, 0.25)
    return QuadratureRule(points, weights)


def quadrature_rule(family: str) -> QuadratureRule:
    """Default integration rule for a family."""
    check_family(family)
    if family == "q1":
        return quad_quadrature_2x2()
    if family == "p1":
        # constant integrand: a single centroid point is the area formula
        return QuadratureRule(np.array([[1.0 / 3.0, 1.0 / 3.0]]), np.array([1.0]))
    return tri_quadrature_7pt()


def edge_quadrature_3pt() -> tuple[np.ndarray, np.ndarray]:
    """3-point Gauss rule on [0, 1]; weights sum to one."""
    g = np.sqrt(3.0 / 5.0)
    t = np.array([(1.0 - g) / 2.0, 0.5, (1.0 + g) / 2.0])
    w = np.array([5.0, 8.0, 5.0]) / 18.0
    return t, w


def shape_functions_at(family: str, points) -> tuple[np.ndarray, np.ndarray]:
    """Shape function values and reference gradients at many points.

    Parameters
    ----------
    points : (m, 2) array of reference coordinates.

    Returns
    -------
    values : (m, n) array, gradients : (m, n, 2) array.
    """
    check_family(family)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    x, y = pts[:, 0], pts[:, 1]
    m = pts.shape[0]
    zero = np.zeros(m)

    if family == "p1":
        values = np.stack([1.0 - x - y, x, y], axis=1)
        grads = np.broadcast_to(
            np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]]), (m, 3, 2)
        ).copy()
        return values, grads

    if family == "p2":
        s = 1.0 - x - y
        values = np.stack(
            [
                s * (2.0 * s - 1.0),
                x * (2.0 * x - 1.0),
                y * (2.0 * y - 1.0),
                4.0 * x * s,
                4.0 * x * y,
                4.0 * y * s,
            ],
            axis=1,
        )
        gx = np.stack(
            [1.0 - 4.0 * s, 4.0 * x - 1.0, zero, 4.0 * (s - x), 4.0 * y, -4.0 * y],
            axis=1,
        )
        gy = np.stack(
            [1.0 - 4.0 * s, zero, 4.0 * y - 1.0, -4.0 * x, 4.0 * x, 4.0 * (s - y)],
            axis=1,
        )
        return values, np.stack([gx, gy], axis=2)

    sx, sy = _Q1_SIGNS[:, 0], _Q1_SIGNS[:, 1]
    values = 0.25 * (1.0 + np.outer(x, sx)) * (1.0 + np.outer(y, sy))
    gx = 0.25 * sx[None, :] * (1.0 + np.outer(y, sy))
    gy = 0.25 * sy[None, :] * (1.0 + np.outer(x, sx))
    return values, np.stack([gx, gy], axis=2)


def shape_functions(family: str, ref_point) -> tuple[np.ndarray, np.ndarray]:
    """Values and reference gradients at a single reference point."""
    values, grads = shape_functions_at(family, [ref_point])
    return values[0], grads[0]


def shape_function_hessians(family: str) -> np.ndarray:
    """Second derivatives in reference coordinates, shape (n, 2, 2).

    All three families have constant reference Hessians, which keeps the
    divergence of the discrete stress constant on affine elements.
    """
    check_family(family)
    if family == "p1":
        return np.zeros((3, 2, 2))
    if family == "p2":
        h = np.zeros((6, 2, 2))
        h[0] = [[4.0, 4.0], [4.0, 4.0]]
        h[1] = [[4.0, 0.0], [0.0, 0.0]]
        h[2] = [[0.0, 0.0], [0.0, 4.0]]
        h[3] = [[-8.0, -4.0], [-4.0, 0.0]]
        h[4] = [[0.0, 4.0], [4.0, 0.0]]
        h[5] = [[0.0, -4.0], [-4.0, -8.0]]
        return h
    h = np.zeros((4, 2, 2))
    for i, (sx, sy) in enumerate(_Q1_SIGNS):
        h[i, 0, 1] = h[i, 1, 0] = 0.25 * sx * sy
    return h


def gradients_physical(family: str, coords: np.ndarray, points: np.ndarray):
    """Shape values, physical gradients and Jacobian determinants, batched.

    coords has shape (m, k, 2) and points (m, 2); one point per element.
    Returns values (m, k), gradients (m, k, 2) and det (m,).
    """
    values, dref = shape_functions_at(family, points)
    jac = np.einsum("mka,mkb->mab", coords, dref)
    det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
    inv = np.empty_like(jac)
    inv[:, 0, 0] = jac[:, 1, 1]
    inv[:, 0, 1] = -jac[:, 0, 1]
    inv[:, 1, 0] = -jac[:, 1, 0]
    inv[:, 1, 1] = jac[:, 0, 0]
    safe = np.where(det == 0.0, 1.0, det)
    inv = inv / safe[:, None, None]
    dphys = np.einsum("mkb,mba->mka", dref, inv)
    return values, dphys, det


def _b_from_gradients(dphys: np.ndarray) -> np.ndarray:
    """Assemble Voigt strain-displacement matrices from physical gradients."""
    m, k, _ = dphys.shape
    b = np.zeros((m, 3, 2 * k))
    b[:, 0, 0::2] = dphys[:, :, 0]
    b[:, 1, 1::2] = dphys[:, :, 1]
    b[:, 2, 0::2] = dphys[:, :, 1]
    b[:, 2, 1::2] = dphys[:, :, 0]
    return b


def b_matrix(family: str, coords, ref_point, elem_id=None) -> np.ndarray:
    """Strain-displacement matrix (3, 2k) at one reference point.

    Raises ValueError on a degenerate (non-positively oriented) element.
    """
    coords = np.asarray(coords, dtype=float)[None]
    point = np.asarray(ref_point, dtype=float)[None]
    _, dphys, det = gradients_physical(family, coords, point)
    if det[0] <= 0.0:
        tag = "" if elem_id is None else f" {elem_id}"
        raise ValueError(f"degenerate element{tag}: Jacobian determinant {det[0]:g}")
    return _b_from_gradients(dphys)[0]


def element_stiffness_batch(
    family: str, coords: np.ndarray, material: Material, rule: QuadratureRule | None = None
) -> np.ndarray:
    """Stiffness matrices for a batch of elements; coords (E, k, 2) -> (E, 2k, 2k).

    Integration uses area-normalized weights, area_e * sum_i w_i B^T A B,
    exact on affine elements (straight triangles, rectangles).
    """
    check_family(family)
    coords = np.asarray(coords, dtype=float)
    if rule is None:
        rule = quadrature_rule(family)
    amat = elasticity_matrix(material)
    n_el, k, _ = coords.shape
    ref = REF_MEASURE[family]
    kmat = np.zeros((n_el, 2 * k, 2 * k))
    for point, weight in zip(rule.points, rule.weights):
        pts = np.broadcast_to(point, (n_el, 2))
        _, dphys, det = gradients_physical(family, coords, pts)
        if np.any(det <= 0.0):
            bad = int(np.argmax(det <= 0.0))
            raise ValueError(
                f"degenerate element {bad}: Jacobian determinant {det[bad]:g}"
            )
        b = _b_from_gradients(dphys)
        kmat += (weight * ref) * det[:, None, None] * np.einsum(
            "mia,ij,mjb->mab", b, amat, b
        )
    return kmat


def element_stiffness(
    family: str, coords, material: Material, rule: QuadratureRule | None = None
) -> np.ndarray:
    """Stiffness matrix of a single element."""
    return element_stiffness_batch(
        family, np.asarray(coords, dtype=float)[None], material, rule=rule
    )[0]


def strain_energy(family: str, coords, material: Material, u_e) -> float:
    """Quadratic form u_e^T K_e u_e for one element."""
    u_e = np.asarray(u_e, dtype=float)
    k = ELEMENT_NODES[check_family(family)]
    if u_e.shape != (2 * k,):
        raise ValueError(f"expected displacement vector of length {2 * k}, got {u_e.shape}")
    kmat = element_stiffness(family, coords, material)
    return float(u_e @ kmat @ u_e)


def reference_coords(family: str, coords: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Map physical points into element reference coordinates, batched.

    coords (m, k, 2), points (m, 2) -> (m, 2). Triangles invert the affine
    map directly; quads run a short Newton loop (one step suffices for the
    rectangles produced by the mesh generator).
    """
    check_family(family)
    coords = np.asarray(coords, dtype=float)
    points = np.asarray(points, dtype=float)
    if family in ("p1", "p2"):
        v0 = coords[:, 0]
        e1 = coords[:, 1] - v0
        e2 = coords[:, 2] - v0
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        rhs = points - v0
        xi = (e2[:, 1] * rhs[:, 0] - e2[:, 0] * rhs[:, 1]) / det
        eta = (-e1[:, 1] * rhs[:, 0] + e1[:, 0] * rhs[:, 1]) / det
        return np.stack([xi, eta], axis=1)

    ref = np.zeros_like(points)
    for _ in range(4):
        values, dref = shape_functions_at("q1", ref)
        mapped = np.einsum("mk,mka->ma", values, coords)
        jac = np.einsum("mka,mkb->mab", coords, dref)
        res = points - mapped
        det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
        dxi = (jac[:, 1, 1] * res[:, 0] - jac[:, 0, 1] * res[:, 1]) / det
        deta = (-jac[:, 1, 0] * res[:, 0] + jac[:, 0, 0] * res[:, 1]) / det
        ref[:, 0] += dxi
        ref[:, 1] += deta
    return ref

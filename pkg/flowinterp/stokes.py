"""
Taylor–Hood (P2 velocity / P1 pressure) solver for the generalized Stokes system

    λΔb + ∇q = f,   div b = 0 in Ω,   b = 0 on ∂Ω.

The pixel samples are the mesh vertices; every cell between four samples is split
along its (+1, +1) diagonal into two counterclockwise triangles, so P2 nodes form
the half-pixel lattice. The saddle system is solved with preconditioned MINRES.
"""
import logging
import math
import threading
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from pathlib import Path
from typing import Callable, Dict, NamedTuple, Optional, Tuple, Union

import numpy as np
from scipy import io as sio
from scipy import sparse
from scipy.sparse import linalg as spla

from .grid import (
    DegenerateElementError,
    DimensionError,
    ImageIOError,
    ScalarField,
    StokesConvergenceError,
    VectorField,
    sample_flow_bilinear,
)

# Configure logger
logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-8
MIN_MAX_ITER = 500
MAX_RESTARTS = 3

# Symmetric 6-point rule of degree 4: barycentric points and weights (sum 1).
_A, _B = 0.445948490915965, 0.091576213509771
QUAD_POINTS = np.array([
    [_A, _A, 1.0 - 2.0 * _A],
    [_A, 1.0 - 2.0 * _A, _A],
    [1.0 - 2.0 * _A, _A, _A],
    [_B, _B, 1.0 - 2.0 * _B],
    [_B, 1.0 - 2.0 * _B, _B],
    [1.0 - 2.0 * _B, _B, _B],
])
QUAD_WEIGHTS = np.array([0.223381589678011] * 3 + [0.109951743655322] * 3)


def p2_basis(bary: np.ndarray) -> np.ndarray:
    """P2 shape functions at barycentric points ``(..., 3)``.

    Local order: vertices 1, 2, 3 then midpoints of edges 12, 23, 31.
    """
    l1, l2, l3 = bary[..., 0], bary[..., 1], bary[..., 2]
    return np.stack([
        l1 * (2.0 * l1 - 1.0),
        l2 * (2.0 * l2 - 1.0),
        l3 * (2.0 * l3 - 1.0),
        4.0 * l1 * l2,
        4.0 * l2 * l3,
        4.0 * l3 * l1,
    ], axis=-1)


def p2_basis_dbary(bary: np.ndarray) -> np.ndarray:
    """Derivatives of the P2 shape functions with respect to (L1, L2, L3): ``(..., 6, 3)``."""
    l1, l2, l3 = bary[..., 0], bary[..., 1], bary[..., 2]
    zero = np.zeros_like(l1)
    rows = [
        (4.0 * l1 - 1.0, zero, zero),
        (zero, 4.0 * l2 - 1.0, zero),
        (zero, zero, 4.0 * l3 - 1.0),
        (4.0 * l2, 4.0 * l1, zero),
        (zero, 4.0 * l3, 4.0 * l2),
        (4.0 * l3, zero, 4.0 * l1),
    ]
    return np.stack([np.stack(row, axis=-1) for row in rows], axis=-2)


class ElementMatrices(NamedTuple):
    """Local matrices of one triangle (λ = 1)."""

    stiffness: np.ndarray   # 6×6, ∫∇φ_i·∇φ_j
    mass: np.ndarray        # 6×6, ∫φ_i φ_j
    coupling_x: np.ndarray  # 3×6, ∫ψ_j ∂φ_i/∂x
    coupling_y: np.ndarray  # 3×6, ∫ψ_j ∂φ_i/∂y
    area: float


def element_matrices(corners: np.ndarray) -> ElementMatrices:
    """Integrate the P2/P1 element matrices of a triangle with the 6-point rule.

    Args:
        corners: Array ``(3, 2)`` of vertex coordinates, counterclockwise.

    Raises:
        DegenerateElementError: If the signed area is not positive.
    """
    p = np.asarray(corners, dtype=np.float64)
    (x1, y1), (x2, y2), (x3, y3) = p
    det = (x2 - x1) * (y3 - y1) - (x3 - x1) * (y2 - y1)
    area = 0.5 * det
    if not area > 0.0:
        logger.error(f"Degenerate or clockwise triangle {p.tolist()} (area {area})")
        raise DegenerateElementError(f"triangle {p.tolist()} has non-positive area {area}")
    grad_bary = np.array([
        [y2 - y3, x3 - x2],
        [y3 - y1, x1 - x3],
        [y1 - y2, x2 - x1],
    ]) / det

    phi = p2_basis(QUAD_POINTS)                       # (q, 6)
    grad_phi = p2_basis_dbary(QUAD_POINTS) @ grad_bary  # (q, 6, 2)
    psi = QUAD_POINTS                                 # P1 basis = barycentrics
    w = QUAD_WEIGHTS * area

    stiffness = np.einsum("q,qid,qjd->ij", w, grad_phi, grad_phi)
    mass = np.einsum("q,qi,qj->ij", w, phi, phi)
    coupling_x = np.einsum("q,qj,qi->ji", w, psi, grad_phi[..., 0])
    coupling_y = np.einsum("q,qj,qi->ji", w, psi, grad_phi[..., 1])
    return ElementMatrices(stiffness, mass, coupling_x, coupling_y, float(area))


def _scatter(rows_idx: np.ndarray, cols_idx: np.ndarray, local: np.ndarray,
             shape: Tuple[int, int]) -> sparse.csr_matrix:
    """Sum per-element blocks ``local[t]`` into a global matrix."""
    rows = np.repeat(rows_idx[:, :, None], cols_idx.shape[1], axis=2)
    cols = np.repeat(cols_idx[:, None, :], rows_idx.shape[1], axis=1)
    return sparse.coo_matrix(
        (local.ravel(), (rows.ravel(), cols.ravel())), shape=shape
    ).tocsr()


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Structured Taylor–Hood mesh over a W×H pixel grid.

    Attributes:
        width, height: Vertex counts (pixels) per direction.
        spacing: Pixel spacing h.
        nodes: P2 node coordinates ``(n_nodes, 2)``; node (I, J) of the half lattice
            has index ``J·(2W−1) + I`` and lies at ``(I·h/2, J·h/2)``.
        triangles: Vertex indices ``(n_tri, 3)``, counterclockwise; vertex (i, j) has
            index ``j·W + i``.
        tri_nodes: P2 node indices ``(n_tri, 6)`` in local order v1, v2, v3, m12, m23, m31.
        shapes: 0 for lower-right triangles, 1 for upper-left ones.
    """

    width: int
    height: int
    spacing: float
    nodes: np.ndarray
    triangles: np.ndarray
    tri_nodes: np.ndarray
    shapes: np.ndarray
    factor_lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_vertices(self) -> int:
        return self.width * self.height

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    @cached_property
    def vertex_nodes(self) -> np.ndarray:
        """P2 node index of every vertex."""
        j, i = np.divmod(np.arange(self.n_vertices), self.width)
        return 2 * j * (2 * self.width - 1) + 2 * i

    @cached_property
    def boundary_nodes(self) -> np.ndarray:
        nx, ny = 2 * self.width - 1, 2 * self.height - 1
        J, I = np.divmod(np.arange(self.n_nodes), nx)
        return (I == 0) | (I == nx - 1) | (J == 0) | (J == ny - 1)

    @cached_property
    def interior_nodes(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_nodes)

    def corner_coordinates(self) -> np.ndarray:
        """Vertex coordinates per triangle ``(n_tri, 3, 2)``."""
        return self.nodes[self.tri_nodes[:, :3]]

    def signed_areas(self) -> np.ndarray:
        p = self.corner_coordinates()
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @cached_property
    def element_shapes(self) -> Tuple[ElementMatrices, ElementMatrices]:
        """Element matrices of the two triangle shapes (all elements are translates)."""
        out = []
        for shape in (0, 1):
            first = int(np.flatnonzero(self.shapes == shape)[0])
            out.append(element_matrices(self.corner_coordinates()[first]))
        return out[0], out[1]

    def _stacked(self, name: str) -> np.ndarray:
        local = np.stack([getattr(m, name) for m in self.element_shapes])
        return local[self.shapes]

    @cached_property
    def stiffness(self) -> sparse.csr_matrix:
        """Global scalar P2 stiffness ∫∇φ_i·∇φ_j over all nodes."""
        n = self.n_nodes
        return _scatter(self.tri_nodes, self.tri_nodes, self._stacked("stiffness"), (n, n))

    @cached_property
    def mass(self) -> sparse.csr_matrix:
        n = self.n_nodes
        return _scatter(self.tri_nodes, self.tri_nodes, self._stacked("mass"), (n, n))

    @cached_property
    def coupling(self) -> Tuple[sparse.csr_matrix, sparse.csr_matrix]:
        shape = (self.n_vertices, self.n_nodes)
        cx = _scatter(self.triangles, self.tri_nodes, self._stacked("coupling_x"), shape)
        cy = _scatter(self.triangles, self.tri_nodes, self._stacked("coupling_y"), shape)
        return cx, cy

    @cached_property
    def interior_stiffness(self) -> sparse.csc_matrix:
        idx = self.interior_nodes
        return self.stiffness[idx][:, idx].tocsc()

    def _factor(self, name: str, matrix: Callable[[], sparse.csc_matrix]) -> spla.SuperLU:
        """SuperLU factor stored on the mesh; built exactly once, under ``factor_lock``."""
        factor = self.__dict__.get(name)
        if factor is None:
            with self.factor_lock:
                factor = self.__dict__.get(name)
                if factor is None:
                    a = matrix()
                    logger.debug(f"Factorizing {name.strip('_')} ({a.shape[0]} unknowns)")
                    factor = spla.splu(a, permc_spec="MMD_AT_PLUS_A")
                    self.__dict__[name] = factor
        return factor

    @property
    def stiffness_factor(self) -> spla.SuperLU:
        return self._factor("_stiffness_factor", lambda: self.interior_stiffness)

    @cached_property
    def interior_vertices(self) -> np.ndarray:
        j, i = np.divmod(np.arange(self.n_vertices), self.width)
        return np.flatnonzero((i > 0) & (i < self.width - 1) & (j > 0) & (j < self.height - 1))

    @cached_property
    def vertex_prolongation(self) -> sparse.csr_matrix:
        """Linear interpolation from interior vertices to interior P2 nodes.

        A midpoint node takes half of each endpoint of its edge; boundary vertices are zero.
        """
        nx = 2 * self.width - 1
        J, I = np.divmod(self.interior_nodes, nx)
        ends = [(J // 2) * self.width + I // 2, ((J + 1) // 2) * self.width + (I + 1) // 2]
        column = np.full(self.n_vertices, -1)
        column[self.interior_vertices] = np.arange(len(self.interior_vertices))
        rows = np.concatenate([np.arange(len(J))] * 2)
        cols = column[np.concatenate(ends)]
        keep = cols >= 0
        return sparse.coo_matrix(
            (np.full(keep.sum(), 0.5), (rows[keep], cols[keep])),
            shape=(len(J), len(self.interior_vertices)),
        ).tocsr()

    @cached_property
    def coarse_stiffness(self) -> sparse.csc_matrix:
        """Galerkin projection of the interior stiffness: the P1 stiffness of the vertex grid."""
        p = self.vertex_prolongation
        return (p.T @ self.interior_stiffness @ p).tocsc()

    @property
    def coarse_factor(self) -> spla.SuperLU:
        return self._factor("_coarse_factor", lambda: self.coarse_stiffness)

    @cached_property
    def midpoint_inverse_diagonal(self) -> np.ndarray:
        """1/diag of the interior stiffness on midpoint nodes, 0 on vertex nodes."""
        J, I = np.divmod(self.interior_nodes, 2 * self.width - 1)
        on_vertex = (I % 2 == 0) & (J % 2 == 0)
        return np.where(on_vertex, 0.0, 1.0 / self.interior_stiffness.diagonal())

    def solve_stiffness(self, rhs: np.ndarray) -> np.ndarray:
        """Apply the inverse interior stiffness to ``(n,)`` or ``(n, k)`` right-hand sides."""
        factor = self.stiffness_factor
        with self.factor_lock:
            return factor.solve(rhs)

    def two_level_stiffness(self, rhs: np.ndarray) -> np.ndarray:
        """Two-level approximate inverse of the interior stiffness.

        P·A_c⁻¹·Pᵀ on the vertex grid plus Jacobi on the midpoint nodes: the additive
        hierarchical-basis splitting of P2 into P1 and edge functions. Symmetric positive
        definite, with a condition number that does not grow with the grid size.
        """
        rhs = np.asarray(rhs, dtype=np.float64)
        smooth = self.midpoint_inverse_diagonal.reshape((-1,) + (1,) * (rhs.ndim - 1))
        out = smooth * rhs
        p = self.vertex_prolongation
        if p.shape[1] == 0:
            return out
        factor = self.coarse_factor
        coarse_rhs = p.T @ rhs
        with self.factor_lock:
            coarse = factor.solve(coarse_rhs)
        return out + p @ coarse

    @cached_property
    def lumped_areas(self) -> np.ndarray:
        """Vertex areas: one third of the area of every adjacent triangle."""
        areas = np.zeros(self.n_vertices)
        np.add.at(areas, self.triangles.ravel(), np.repeat(self.signed_areas() / 3.0, 3))
        return areas

    def locate(self, x: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Triangle index and barycentric coordinates of physical points (clamped)."""
        h = self.spacing
        s = np.clip(np.asarray(x, dtype=np.float64) / h, 0.0, self.width - 1)
        t = np.clip(np.asarray(y, dtype=np.float64) / h, 0.0, self.height - 1)
        i = np.minimum(np.floor(s).astype(int), self.width - 2)
        j = np.minimum(np.floor(t).astype(int), self.height - 2)
        s = s - i
        t = t - j
        lower = s >= t
        cell = j * (self.width - 1) + i
        tri = 2 * cell + np.where(lower, 0, 1)
        bary = np.where(
            lower[..., None],
            np.stack([1.0 - s, s - t, t], axis=-1),
            np.stack([1.0 - t, s, t - s], axis=-1),
        )
        return tri, bary


@lru_cache(maxsize=8)
def build_mesh(width: int, height: int, spacing: float = 1.0) -> TriMesh:
    """Triangulate a W×H vertex grid (cached per size and spacing)."""
    if width < 2 or height < 2:
        raise DimensionError(f"mesh needs at least 2x2 vertices, got {width}x{height}")
    nx, ny = 2 * width - 1, 2 * height - 1
    J, I = np.divmod(np.arange(nx * ny), nx)
    nodes = np.stack([I * spacing / 2.0, J * spacing / 2.0], axis=-1)

    cj, ci = np.divmod(np.arange((width - 1) * (height - 1)), width - 1)

    def node(di: int, dj: int) -> np.ndarray:
        return (2 * cj + dj) * nx + (2 * ci + di)

    def vertex(di: int, dj: int) -> np.ndarray:
        return (cj + dj) * width + (ci + di)

    lower_nodes = np.stack([node(0, 0), node(2, 0), node(2, 2), node(1, 0), node(2, 1), node(1, 1)], axis=-1)
    upper_nodes = np.stack([node(0, 0), node(2, 2), node(0, 2), node(1, 1), node(1, 2), node(0, 1)], axis=-1)
    lower_tri = np.stack([vertex(0, 0), vertex(1, 0), vertex(1, 1)], axis=-1)
    upper_tri = np.stack([vertex(0, 0), vertex(1, 1), vertex(0, 1)], axis=-1)

    n_cells = len(ci)
    tri_nodes = np.empty((2 * n_cells, 6), dtype=np.int64)
    triangles = np.empty((2 * n_cells, 3), dtype=np.int64)
    tri_nodes[0::2], tri_nodes[1::2] = lower_nodes, upper_nodes
    triangles[0::2], triangles[1::2] = lower_tri, upper_tri
    shapes = np.tile([0, 1], n_cells)

    for array in (nodes, triangles, tri_nodes, shapes):
        array.setflags(write=False)
    logger.debug(f"Built mesh {width}x{height}: {nx * ny} P2 nodes, {2 * n_cells} triangles")
    return TriMesh(width, height, float(spacing), nodes, triangles, tri_nodes, shapes)


@dataclass(frozen=True, eq=False)
class SaddleSystem:
    """Discrete saddle problem [[A, Cᵀ], [C, 0]]·(b, q) = (f, 0) on interior velocity DOFs.

    Attributes:
        mesh: The triangulation.
        lam: Regularization weight λ.
        A: ``blockdiag(λA₁, λA₁)`` over interior P2 nodes (v-component first).
        C: ``[C₁ C₂]``, pressure rows × velocity columns.
        f: Load vector ``−M·f_nodal`` restricted to interior nodes, both components.
    """

    mesh: TriMesh
    lam: float
    A: sparse.csr_matrix
    C: sparse.csr_matrix
    f: np.ndarray

    @property
    def n_velocity(self) -> int:
        return self.A.shape[0]

    @property
    def n_pressure(self) -> int:
        return self.C.shape[0]

    @property
    def n_unknowns(self) -> int:
        return self.n_velocity + self.n_pressure

    def matrix(self) -> sparse.csr_matrix:
        """Full symmetric indefinite matrix (without the pressure regularization)."""
        return sparse.bmat([[self.A, self.C.T], [self.C, None]], format="csr")

    def rhs(self) -> np.ndarray:
        return np.concatenate([self.f, np.zeros(self.n_pressure)])


def load_from_function(mesh: TriMesh, fn: Callable[[np.ndarray, np.ndarray], Tuple]) -> np.ndarray:
    """Exact nodal samples ``(n_nodes, 2)`` of a vector function fn(x, y) -> (f1, f2)."""
    f1, f2 = fn(mesh.nodes[:, 0], mesh.nodes[:, 1])
    return np.stack([np.broadcast_to(f1, mesh.n_nodes), np.broadcast_to(f2, mesh.n_nodes)], axis=-1)


def _nodal_load(mesh: TriMesh, f: Union[VectorField, np.ndarray]) -> np.ndarray:
    if isinstance(f, VectorField):
        if (f.width, f.height) != (mesh.width, mesh.height):
            raise DimensionError(
                f"force {f.width}x{f.height} does not match mesh {mesh.width}x{mesh.height}"
            )
        x = mesh.nodes[:, 0] / mesh.spacing
        y = mesh.nodes[:, 1] / mesh.spacing
        v, w = sample_flow_bilinear(f, x, y)
        return np.stack([v, w], axis=-1)
    nodal = np.asarray(f, dtype=np.float64)
    if nodal.shape != (mesh.n_nodes, 2):
        raise DimensionError(f"nodal load must have shape ({mesh.n_nodes}, 2), got {nodal.shape}")
    return nodal


def assemble(mesh: TriMesh, f: Union[VectorField, np.ndarray], lam: float) -> SaddleSystem:
    """Assemble the Taylor–Hood saddle system for λΔb + ∇q = f.

    Args:
        mesh: Triangulation of the pixel grid.
        f: Pixel samples of the force (P2 midpoints interpolated bilinearly), or
            exact nodal samples of shape ``(n_nodes, 2)``.
        lam: λ > 0.
    """
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    nodal = _nodal_load(mesh, f)
    idx = mesh.interior_nodes
    a1 = mesh.stiffness[idx][:, idx]
    A = sparse.block_diag([lam * a1, lam * a1], format="csr")
    cx, cy = mesh.coupling
    C = sparse.hstack([cx[:, idx], cy[:, idx]], format="csr")
    load = -(mesh.mass @ nodal)
    rhs = np.concatenate([load[idx, 0], load[idx, 1]])
    return SaddleSystem(mesh, float(lam), A, C, rhs)


@dataclass(frozen=True, eq=False)
class StokesSolution:
    """Velocity sampled at the pixels, vertex pressure and solver diagnostics."""

    b: VectorField
    q: ScalarField
    residual: float
    iterations: int
    nodal_velocity: np.ndarray
    divergence: float = 0.0


def _solution(mesh: TriMesh, C: Optional[sparse.csr_matrix], x: np.ndarray,
              residual: float, iterations: int) -> StokesSolution:
    n_in = len(mesh.interior_nodes)
    nodal = np.zeros((mesh.n_nodes, 2))
    nodal[mesh.interior_nodes, 0] = x[:n_in]
    nodal[mesh.interior_nodes, 1] = x[n_in:2 * n_in]
    q = x[2 * n_in:].copy()
    areas = mesh.lumped_areas
    q -= (areas @ q) / areas.sum()
    divergence = float(np.max(np.abs(C @ x[:2 * n_in]))) if C is not None else 0.0
    shape = (mesh.height, mesh.width)
    at_pixels = nodal[mesh.vertex_nodes]
    b = VectorField(at_pixels[:, 0].reshape(shape), at_pixels[:, 1].reshape(shape), mesh.spacing)
    return StokesSolution(
        b=b,
        q=ScalarField(q.reshape(shape), mesh.spacing),
        residual=residual,
        iterations=iterations,
        nodal_velocity=nodal,
        divergence=divergence,
    )


def default_max_iter(n_unknowns: int) -> int:
    return max(MIN_MAX_ITER, int(math.ceil(10.0 * math.sqrt(n_unknowns))))


# Velocity-block approximations of A₁⁻¹, by name.
PRECONDITIONERS: Dict[str, Callable[[TriMesh, np.ndarray], np.ndarray]] = {
    "two_level": TriMesh.two_level_stiffness,
    "lu": TriMesh.solve_stiffness,
}
DEFAULT_PRECONDITIONER = "two_level"


def solve_saddle(system: SaddleSystem, tol: float = DEFAULT_TOL,
                 max_iter: Optional[int] = None,
                 preconditioner: str = DEFAULT_PRECONDITIONER) -> StokesSolution:
    """Solve the saddle system with block-preconditioned MINRES.

    The constant-pressure null space is removed by the rank-1 term −δ·w·wᵀ in the
    pressure block (w: lumped vertex areas), which forces wᵀq = 0 without changing
    the velocity. The preconditioner is blockdiag(B/λ, B/λ, λ·diag(w)⁻¹), where B is
    the two-level approximation of A₁⁻¹ (``"two_level"``) or its exact LU solve
    (``"lu"``). Both velocity components go through B in one call.

    Raises:
        StokesConvergenceError: If the relative residual of the full system stays above
            ``tol`` after the restarts.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if preconditioner not in PRECONDITIONERS:
        raise ValueError(f"preconditioner must be one of {list(PRECONDITIONERS)}, got {preconditioner!r}")
    velocity_inverse = PRECONDITIONERS[preconditioner]
    mesh = system.mesh
    n_v, n_p = system.n_velocity, system.n_pressure
    n_in = n_v // 2
    max_iter = max_iter or default_max_iter(system.n_unknowns)
    rhs = system.rhs()
    rhs_norm = float(np.linalg.norm(rhs))
    if rhs_norm == 0.0:
        return _solution(mesh, None, np.zeros(system.n_unknowns), 0.0, 0)

    lam = system.lam
    areas = mesh.lumped_areas
    delta = 1.0 / (lam * areas.sum())
    A, C, CT = system.A, system.C, system.C.T.tocsr()

    def apply(x: np.ndarray) -> np.ndarray:
        u, p = x[:n_v], x[n_v:]
        return np.concatenate([A @ u + CT @ p, C @ u - delta * areas * (areas @ p)])

    def precondition(r: np.ndarray) -> np.ndarray:
        velocity = velocity_inverse(mesh, np.column_stack([r[:n_in], r[n_in:n_v]])) / lam
        return np.concatenate([velocity[:, 0], velocity[:, 1], lam * r[n_v:] / areas])

    n = system.n_unknowns
    operator = spla.LinearOperator((n, n), matvec=apply, dtype=np.float64)
    preconditioner = spla.LinearOperator((n, n), matvec=precondition, dtype=np.float64)

    x = np.zeros(n)
    iterations = 0
    inner_tol = tol
    relative = math.inf
    for attempt in range(MAX_RESTARTS + 1):
        counter = {"n": 0}

        def count(_xk: np.ndarray, counter: Dict[str, int] = counter) -> None:
            counter["n"] += 1

        x, info = spla.minres(operator, rhs, x0=x, rtol=inner_tol, maxiter=max_iter,
                              M=preconditioner, callback=count)
        iterations += counter["n"]
        relative = float(np.linalg.norm(rhs - apply(x)) / rhs_norm)
        logger.debug(
            f"MINRES attempt {attempt}: {counter['n']} iterations, info={info}, "
            f"relative residual {relative:.3e}"
        )
        if relative <= tol:
            break
        inner_tol = max(inner_tol * 0.5 * tol / relative, 1e-16)
    else:
        logger.error(f"Stokes solve did not converge: residual {relative:.3e} after {iterations} iterations")
        raise StokesConvergenceError(
            f"MINRES reached relative residual {relative:.3e} > {tol:.1e} after {iterations} iterations",
            residual=relative,
            iterations=iterations,
        )
    return _solution(mesh, system.C, x, relative, iterations)


def stokes_flow_update(f: VectorField, lam: float, tol: float = DEFAULT_TOL,
                       max_iter: Optional[int] = None,
                       preconditioner: str = DEFAULT_PRECONDITIONER) -> StokesSolution:
    """Divergence-free flow from a pixel force: assemble + solve + resample to pixels."""
    mesh = build_mesh(f.width, f.height, f.spacing)
    if f.is_zero():
        if not lam > 0:
            raise ValueError(f"lambda must be positive, got {lam}")
        n = 2 * len(mesh.interior_nodes) + mesh.n_vertices
        return _solution(mesh, None, np.zeros(n), 0.0, 0)
    solution = solve_saddle(assemble(mesh, f, lam), tol, max_iter, preconditioner)
    logger.debug(
        f"Stokes update λ={lam:.4g}: {solution.iterations} iterations, "
        f"residual {solution.residual:.2e}, divergence {solution.divergence:.2e}"
    )
    return solution


def evaluate_p2(mesh: TriMesh, nodal: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Evaluate a P2 field with nodal values ``(n_nodes, ...)`` at physical points."""
    tri, bary = mesh.locate(x, y)
    basis = p2_basis(bary)                        # (..., 6)
    values = np.asarray(nodal)[mesh.tri_nodes[tri]]  # (..., 6, k)
    if values.ndim == basis.ndim:
        return np.sum(basis * values, axis=-1)
    return np.einsum("...i,...ik->...k", basis, values)


def _quadrature(mesh: TriMesh) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    corners = mesh.corner_coordinates()
    points = np.einsum("qk,tkd->tqd", QUAD_POINTS, corners)
    weights = mesh.signed_areas()[:, None] * QUAD_WEIGHTS[None, :]
    return points[..., 0], points[..., 1], weights


def p2_l2_error(mesh: TriMesh, nodal: np.ndarray,
                exact: Callable[[np.ndarray, np.ndarray], Tuple]) -> float:
    """‖b_h − b‖_{L²} of a P2 velocity against an exact field exact(x, y) -> (b1, b2)."""
    x, y, weights = _quadrature(mesh)
    values = np.einsum("qi,tik->tqk", p2_basis(QUAD_POINTS), np.asarray(nodal)[mesh.tri_nodes])
    e1, e2 = exact(x, y)
    err = (values[..., 0] - e1) ** 2 + (values[..., 1] - e2) ** 2
    return float(math.sqrt(np.sum(weights * err)))


def p1_l2_error(mesh: TriMesh, vertex_values: np.ndarray,
                exact: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> float:
    """‖q_h − q‖_{L²} of a P1 pressure (vertex order) against exact(x, y)."""
    x, y, weights = _quadrature(mesh)
    values = np.einsum("qk,tk->tq", QUAD_POINTS, np.asarray(vertex_values).ravel()[mesh.triangles])
    err = (values - exact(x, y)) ** 2
    return float(math.sqrt(np.sum(weights * err)))


def dump_matrix_market(system: SaddleSystem, directory: Union[str, Path]) -> Dict[str, Path]:
    """Write A, C, the full saddle matrix and the load vector as Matrix Market files."""
    directory = Path(directory)
    files = {
        "A": directory / "A.mtx",
        "C": directory / "C.mtx",
        "saddle": directory / "saddle.mtx",
        "f": directory / "f.mtx",
    }
    try:
        directory.mkdir(parents=True, exist_ok=True)
        sio.mmwrite(str(files["A"]), sparse.coo_matrix(system.A))
        sio.mmwrite(str(files["C"]), sparse.coo_matrix(system.C))
        sio.mmwrite(str(files["saddle"]), sparse.coo_matrix(system.matrix()))
        sio.mmwrite(str(files["f"]), system.f.reshape(-1, 1))
    except OSError as e:
        logger.error(f"Failed to dump saddle system to {directory}: {e}")
        raise ImageIOError(f"Cannot write Matrix Market files to {directory}: {e}") from e
    logger.info(f"Dumped saddle system ({system.n_unknowns} unknowns) to {directory}")
    return files

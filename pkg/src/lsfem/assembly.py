"""Assembly of the two-field least-squares elasticity blocks.

The stress is approximated row-wise by lowest-order Raviart-Thomas fields,
the displacement by continuous piecewise linears vanishing on the whole
boundary. For stress basis fields ``tau_i`` and displacement basis fields
``v_k`` the blocks are

    A[i, j] = (Acal tau_j, Acal tau_i) + (div tau_j, div tau_i)
    B[k, j] = -(Acal tau_j, eps(v_k))
    C[k, l] = (eps(v_l), eps(v_k))
    D[i, l] = -(v_l, div tau_i)

where ``Acal`` is the compliance operator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse as sp

from .errors import ParameterError
from .mesh import TriangleMesh
from .quadrature import physical_points, triangle_rule

BLOCK_QUADRATURE = 2
LOAD_QUADRATURE = 4


@dataclass(frozen=True)
class LameParameters:
    mu: float = 1.0
    lam: float = 1.0

    def __post_init__(self):
        if not (self.mu > 0 and math.isfinite(self.mu)):
            raise ParameterError(f"mu must be positive and finite, got {self.mu}")
        if not self.lam > 0:
            raise ParameterError(f"lambda must be positive, got {self.lam}")

    @property
    def c(self) -> float:
        """Trace coefficient lam / (2 lam + 2 mu) of the 2D compliance."""
        if math.isinf(self.lam):
            return 0.5
        return self.lam / (2.0 * self.lam + 2.0 * self.mu)

    @property
    def one_minus_2c(self) -> float:
        # 1 - 2c written without cancellation
        if math.isinf(self.lam):
            return 0.0
        return self.mu / (self.lam + self.mu)


def apply_compliance(tau, params: LameParameters):
    """Compliance ``(tau - c tr(tau) I) / (2 mu)`` on (..., 2, 2) arrays."""
    tau = np.asarray(tau, dtype=float)
    trace = np.trace(tau, axis1=-2, axis2=-1)
    return (tau - params.c * trace[..., None, None] * np.eye(2)) / (2.0 * params.mu)


@dataclass(frozen=True)
class DofMap:
    """Degree-of-freedom numbering.

    Stress dof ``r * E + e`` is the flux of row ``r`` of the stress through
    edge ``e`` (global normal). Displacement dof ``2 * k + c`` is component
    ``c`` at the ``k``-th interior vertex; boundary vertices carry ``-1``.
    """

    n_edges: int
    vertex_dofs: np.ndarray = field(repr=False)
    interior_vertices: np.ndarray = field(repr=False)

    @classmethod
    def for_mesh(cls, mesh: TriangleMesh) -> "DofMap":
        interior = mesh.interior_vertices
        vertex_dofs = -np.ones((mesh.n_vertices, 2), dtype=np.int64)
        vertex_dofs[interior, 0] = 2 * np.arange(len(interior))
        vertex_dofs[interior, 1] = 2 * np.arange(len(interior)) + 1
        vertex_dofs.setflags(write=False)
        interior.setflags(write=False)
        return cls(mesh.n_edges, vertex_dofs, interior)

    @property
    def n_sigma(self) -> int:
        return 2 * self.n_edges

    @property
    def n_u(self) -> int:
        return 2 * len(self.interior_vertices)

    def stress_dof(self, row, edge):
        return row * self.n_edges + np.asarray(edge)

    def expand_displacement(self, u_hat, n_vertices):
        """Nodal (V, 2) field from displacement coefficients; zero on the boundary."""
        u_hat = np.asarray(u_hat)
        out = np.zeros((n_vertices, 2), dtype=u_hat.dtype)
        out[self.interior_vertices, 0] = u_hat[0::2]
        out[self.interior_vertices, 1] = u_hat[1::2]
        return out


@dataclass(frozen=True, eq=False)
class BlockSystem:
    A: sp.csr_matrix
    B: sp.csr_matrix
    C: sp.csr_matrix
    D: sp.csr_matrix
    dofmap: DofMap
    params: LameParameters
    mesh: TriangleMesh = field(repr=False)
    trace_vector: np.ndarray = field(repr=False)
    deflate_trace: bool = False
    quad_degree: int = BLOCK_QUADRATURE

    @property
    def n_sigma(self) -> int:
        return self.dofmap.n_sigma

    @property
    def n_u(self) -> int:
        return self.dofmap.n_u

    @property
    def deflation_weight(self) -> float:
        """Weight of the rank-one term ``w t t^T`` that lifts the
        constant-trace stress mode, ``t_j`` being the integral of ``tr tau_j``.

        Chosen so that the identity field gets the energy it would have with a
        trace-free compliance, independent of lambda.
        """
        area = float(self.mesh.areas.sum())
        return 1.0 / (8.0 * self.params.mu**2 * area)

    def full_matrix(self, deflated=None) -> sp.csr_matrix:
        """The symmetric block matrix ``[[A, B^T], [B, C]]``."""
        A = self.A
        if self.deflate_trace if deflated is None else deflated:
            t = self.trace_vector
            A = A + sp.csr_matrix(self.deflation_weight * np.outer(t, t))
        return sp.bmat([[A, self.B.T], [self.B, self.C]], format="csr")

    def rhs_matrix(self) -> sp.csr_matrix:
        """The singular right-hand matrix ``[[0, D], [0, 0]]``."""
        return sp.bmat(
            [[None, self.D], [sp.csr_matrix((self.n_u, self.n_sigma)), None]],
            format="csr",
        )

    def dump_matrix_market(self, directory):
        """Write ``A.mtx``, ``B.mtx``, ``C.mtx`` and ``D.mtx`` into ``directory``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        for name in "ABCD":
            path = directory / f"{name}.mtx"
            scipy.io.mmwrite(str(path), getattr(self, name), precision=17)
            paths.append(path)
        return paths


class ElementGeometry:
    """Per-triangle geometric data and basis evaluations."""

    def __init__(self, mesh: TriangleMesh):
        self.mesh = mesh
        self.corners = mesh.corners
        self.area = mesh.areas
        self.signs = mesh.triangle_edge_signs.astype(float)
        p = self.corners
        # hat-function gradients: grad(l_k) = rot(P_{k+2} - P_{k+1}) / (2 |T|)
        grads = np.empty((len(p), 3, 2))
        for k in range(3):
            d = p[:, (k + 2) % 3] - p[:, (k + 1) % 3]
            grads[:, k, 0] = -d[:, 1]
            grads[:, k, 1] = d[:, 0]
        self.hat_grads = grads / (2.0 * self.area[:, None, None])
        self.rt_div = self.signs / self.area[:, None]

    def rt_values(self, bary):
        """RT0 basis ``s_k (x - P_k) / (2|T|)`` at the points, shape (T, q, 3, 2)."""
        x = physical_points(self.corners, bary)
        diff = x[:, :, None, :] - self.corners[:, None, :, :]
        return diff * (self.signs / (2.0 * self.area[:, None]))[:, None, :, None]

    def points(self, bary):
        return physical_points(self.corners, bary)


def _stress_tensors(rt):
    """Lift the (T, q, 3, 2) RT0 values to the six local tensor basis fields.

    Local stress index ``3 * r + k`` puts RT0 field ``k`` in tensor row ``r``.
    """
    T, q = rt.shape[:2]
    tau = np.zeros((T, q, 6, 2, 2))
    for r in range(2):
        tau[:, :, 3 * r : 3 * r + 3, r, :] = rt
    return tau


def _strain_tensors(hat_grads):
    """Symmetric gradients of ``l_k e_c`` in local order ``2 * k + c``, (T, 6, 2, 2)."""
    T = hat_grads.shape[0]
    eps = np.zeros((T, 6, 2, 2))
    for k in range(3):
        for c in range(2):
            grad = np.zeros((T, 2, 2))
            grad[:, c, :] = hat_grads[:, k, :]
            eps[:, 2 * k + c] = 0.5 * (grad + np.swapaxes(grad, 1, 2))
    return eps


def _local_stress_dofs(mesh, dofmap):
    edges = mesh.triangle_edges
    return np.concatenate([dofmap.stress_dof(0, edges), dofmap.stress_dof(1, edges)], axis=1)


def _local_displacement_dofs(mesh, dofmap):
    vd = dofmap.vertex_dofs[mesh.triangles]  # (T, 3, 2)
    return vd.reshape(len(mesh.triangles), 6)


def _scatter(local, rows, cols, shape):
    """Sum element matrices into a CSR matrix; dofs equal to -1 are dropped."""
    T, m, n = local.shape
    r = np.broadcast_to(rows[:, :, None], (T, m, n)).ravel()
    c = np.broadcast_to(cols[:, None, :], (T, m, n)).ravel()
    v = local.ravel()
    keep = (r >= 0) & (c >= 0)
    mat = sp.coo_matrix((v[keep], (r[keep], c[keep])), shape=shape).tocsr()
    mat.sum_duplicates()
    return mat


def trace_vector(mesh, dofmap, quad_degree=BLOCK_QUADRATURE):
    """Integral of ``tr(tau_j)`` for every stress basis field."""
    geo = ElementGeometry(mesh)
    bary, w = triangle_rule(quad_degree)
    tau = _stress_tensors(geo.rt_values(bary))
    tr = np.trace(tau, axis1=-2, axis2=-1)  # (T, q, 6)
    local = np.einsum("q,tqi,t->ti", w, tr, geo.area)
    out = np.zeros(dofmap.n_sigma)
    np.add.at(out, _local_stress_dofs(mesh, dofmap), local)
    return out


def assemble_blocks(
    mesh: TriangleMesh,
    params: LameParameters,
    quad_degree: int = BLOCK_QUADRATURE,
    deflate_trace: bool = False,
) -> BlockSystem:
    """Assemble ``A``, ``B``, ``C`` and ``D`` on ``mesh``.

    All integrands are polynomials of degree at most two, so the default
    three-point rule integrates them exactly.
    """
    dofmap = DofMap.for_mesh(mesh)
    if dofmap.n_u == 0:
        raise ParameterError(
            f"mesh {mesh.label or '<unnamed>'} has no interior vertices; "
            "refine it (n_u = 0)"
        )
    geo = ElementGeometry(mesh)
    bary, w = triangle_rule(quad_degree)

    tau = _stress_tensors(geo.rt_values(bary))  # (T, q, 6, 2, 2)
    comp = apply_compliance(tau, params)
    div = np.zeros((mesh.n_triangles, 6, 2))  # vector divergence per local stress field
    div[:, 0:3, 0] = geo.rt_div
    div[:, 3:6, 1] = geo.rt_div
    eps = _strain_tensors(geo.hat_grads)
    area = geo.area

    A_loc = np.einsum("q,tqiab,tqjab,t->tij", w, comp, comp, area)
    A_loc += np.einsum("tia,tja,t->tij", div, div, area)
    B_loc = -np.einsum("q,tqjab,tkab,t->tkj", w, comp, eps, area)
    C_loc = np.einsum("tkab,tlab,t->tkl", eps, eps, area)
    # int_T l_k = |T| / 3 and div tau is constant on T
    D_loc = -(area / 3.0)[:, None, None, None] * np.broadcast_to(
        div[:, :, None, :], (len(area), 6, 3, 2)
    )
    D_loc = D_loc.reshape(len(area), 6, 6)

    sdofs = _local_stress_dofs(mesh, dofmap)
    udofs = _local_displacement_dofs(mesh, dofmap)
    ns, nu = dofmap.n_sigma, dofmap.n_u
    A = _scatter(A_loc, sdofs, sdofs, (ns, ns))
    B = _scatter(B_loc, udofs, sdofs, (nu, ns))
    C = _scatter(C_loc, udofs, udofs, (nu, nu))
    D = _scatter(D_loc, sdofs, udofs, (ns, nu))
    A = ((A + A.T) * 0.5).tocsr()
    C = ((C + C.T) * 0.5).tocsr()
    return BlockSystem(
        A=A,
        B=B,
        C=C,
        D=D,
        dofmap=dofmap,
        params=params,
        mesh=mesh,
        trace_vector=trace_vector(mesh, dofmap, quad_degree),
        deflate_trace=deflate_trace,
        quad_degree=quad_degree,
    )


def _vector_values(f, points):
    """Evaluate a vector field callable ``f(x, y) -> (fx, fy)`` at (T, q, 2) points."""
    x, y = points[..., 0], points[..., 1]
    fx, fy = f(x, y)
    return np.stack(np.broadcast_arrays(np.asarray(fx, float), np.asarray(fy, float)), axis=-1)


def assemble_load(mesh, dofmap, f, quad_degree=LOAD_QUADRATURE):
    """Load vector ``-(f, div tau_j)`` for a body force ``f(x, y) -> (fx, fy)``."""
    geo = ElementGeometry(mesh)
    bary, w = triangle_rule(quad_degree)
    fq = _vector_values(f, geo.points(bary))  # (T, q, 2)
    mean = np.einsum("q,tqa->ta", w, fq) * geo.area[:, None]  # int_T f
    local = -np.concatenate(
        [geo.rt_div * mean[:, 0:1], geo.rt_div * mean[:, 1:2]], axis=1
    )
    out = np.zeros(dofmap.n_sigma)
    np.add.at(out, _local_stress_dofs(mesh, dofmap), local)
    return out


def stress_at(mesh, dofmap, sigma_hat, bary):
    """Discrete stress tensors at barycentric points, shape (T, q, 2, 2)."""
    geo = ElementGeometry(mesh)
    rt = geo.rt_values(bary)  # (T, q, 3, 2)
    coeff = np.asarray(sigma_hat)[_local_stress_dofs(mesh, dofmap)]  # (T, 6)
    rows = [np.einsum("tqka,tk->tqa", rt, coeff[:, 3 * r : 3 * r + 3]) for r in range(2)]
    return np.stack(rows, axis=2)


def stress_divergence(mesh, dofmap, sigma_hat):
    """Piecewise-constant divergence of the discrete stress, shape (T, 2)."""
    geo = ElementGeometry(mesh)
    coeff = np.asarray(sigma_hat)[_local_stress_dofs(mesh, dofmap)]
    return np.stack(
        [np.sum(geo.rt_div * coeff[:, 0:3], axis=1), np.sum(geo.rt_div * coeff[:, 3:6], axis=1)],
        axis=1,
    )


def displacement_gradient(mesh, dofmap, u_hat):
    """Piecewise-constant gradient of the discrete displacement, (T, 2, 2)."""
    geo = ElementGeometry(mesh)
    nodal = dofmap.expand_displacement(u_hat, mesh.n_vertices)[mesh.triangles]  # (T, 3, 2)
    return np.einsum("tkc,tkd->tcd", nodal, geo.hat_grads)


def evaluate_functional(mesh, params, sigma_hat, u_hat, f=None, quad_degree=LOAD_QUADRATURE):
    """Least-squares functional ``|Acal sigma - eps(u)|^2 + |div sigma + f|^2``."""
    dofmap = DofMap.for_mesh(mesh)
    sigma_hat = np.asarray(sigma_hat, dtype=float)
    u_hat = np.asarray(u_hat, dtype=float)
    if sigma_hat.shape != (dofmap.n_sigma,) or u_hat.shape != (dofmap.n_u,):
        raise ParameterError(
            f"expected coefficient sizes ({dofmap.n_sigma}, {dofmap.n_u}), "
            f"got ({sigma_hat.size}, {u_hat.size})"
        )
    geo = ElementGeometry(mesh)
    bary, w = triangle_rule(quad_degree)
    grad = displacement_gradient(mesh, dofmap, u_hat)
    eps = 0.5 * (grad + np.swapaxes(grad, 1, 2))
    residual = apply_compliance(stress_at(mesh, dofmap, sigma_hat, bary), params) - eps[:, None]
    first = np.einsum("q,tqab,tqab,t->", w, residual, residual, geo.area)

    div = np.broadcast_to(
        stress_divergence(mesh, dofmap, sigma_hat)[:, None, :], (mesh.n_triangles, len(w), 2)
    )
    if f is not None:
        div = div + _vector_values(f, geo.points(bary))
    second = np.einsum("q,tqa,tqa,t->", w, div, div, geo.area)
    return float(first + second)

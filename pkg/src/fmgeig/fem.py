"""P1 finite element assembly on one mesh level.

Stiffness with a constant SPD diffusion matrix, mass, weighted mass for
the potential and the frozen nonlinearity, the nonlinear residual, and
the energy / L2 norms.  All systems are reduced to interior degrees of
freedom unless a full matrix is requested explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial, sqrt

import numpy as np
import scipy.sparse as sp

from .errors import AssemblyError
from .mesh import MeshLevel

__all__ = [
    "ProblemSpec",
    "FeFunction",
    "QuadratureRule",
    "harmonic_potential",
    "quadrature_rule",
    "assemble_stiffness",
    "assemble_mass",
    "assemble_weighted_mass",
    "assemble_load",
    "apply_nonlinear_residual",
    "a_norm",
    "l2_norm",
    "integrate_power",
    "full_values",
    "dump_matrix",
]

_ASSEMBLY_CHUNK = 200_000


def harmonic_potential(points):
    """W(x) = |x|^2, the trapping potential of both benchmark problems."""
    return np.sum(points ** 2, axis=-1)


@dataclass(frozen=True)
class ProblemSpec:
    """PDE data: -div(A grad u) + W u + zeta |u|^(2 sigma) u = lambda u on the
    unit box with zero boundary values and the L2 normalization b(u,u)=1."""

    dim: int
    diffusion: np.ndarray | None = None   # None means identity
    potential: object = harmonic_potential  # callable W(x) >= 0, or None for W=0
    zeta: float = 1.0
    sigma: int = 1

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        if self.zeta < 0:
            raise ValueError("zeta must be nonnegative")
        if self.sigma < 1 or int(self.sigma) != self.sigma:
            raise ValueError("sigma must be a positive integer")
        if self.diffusion is not None:
            A = np.asarray(self.diffusion, dtype=float)
            if A.shape != (self.dim, self.dim):
                raise ValueError("diffusion matrix has wrong shape")
            if not np.allclose(A, A.T, atol=1e-14):
                raise ValueError("diffusion matrix must be symmetric")
            if np.linalg.eigvalsh(A).min() <= 0:
                raise ValueError("diffusion matrix must be positive definite")
            object.__setattr__(self, "diffusion", A)

    @property
    def diffusion_matrix(self):
        if self.diffusion is None:
            return np.eye(self.dim)
        return self.diffusion


@dataclass
class FeFunction:
    """Coefficients over the interior vertices of one mesh level."""

    level_index: int
    coefficients: np.ndarray

    def __len__(self):
        return len(self.coefficients)


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray    # (nq, d+1) barycentric coordinates
    weights: np.ndarray   # (nq,), sums to 1
    degree: int


def _triangle_rule_deg4():
    a1, b1, w1 = 0.108103018168070, 0.445948490915965, 0.223381589678011
    a2, b2, w2 = 0.816847572980459, 0.091576213509771, 0.109951743655322
    pts, wts = [], []
    for (a, b, w) in ((a1, b1, w1), (a2, b2, w2)):
        pts += [(a, b, b), (b, a, b), (b, b, a)]
        wts += [w, w, w]
    return QuadratureRule(np.array(pts), np.array(wts), degree=4)


def _tetrahedron_rule_deg4():
    # 11-point rule: centroid, 4 points of type (11/14, 1/14, 1/14, 1/14),
    # 6 points of type (a, a, b, b) with a+b = 1/2.
    a = (1.0 + sqrt(5.0 / 14.0)) / 4.0
    b = (1.0 - sqrt(5.0 / 14.0)) / 4.0
    pts = [(0.25, 0.25, 0.25, 0.25)]
    wts = [-74.0 / 5625.0 * 6.0]
    g = 1.0 / 14.0
    d = 11.0 / 14.0
    w2 = 343.0 / 45000.0 * 6.0
    for i in range(4):
        p = [g] * 4
        p[i] = d
        pts.append(tuple(p))
        wts.append(w2)
    w3 = 56.0 / 2250.0 * 6.0
    for i in range(4):
        for j in range(i + 1, 4):
            p = [b] * 4
            p[i] = a
            p[j] = a
            pts.append(tuple(p))
            wts.append(w3)
    return QuadratureRule(np.array(pts), np.array(wts), degree=4)


_RULES = {2: _triangle_rule_deg4(), 3: _tetrahedron_rule_deg4()}


def quadrature_rule(dim, degree=4) -> QuadratureRule:
    """Symmetric volume rule exact for polynomials up to `degree`."""
    rule = _RULES.get(dim)
    if rule is None or degree > rule.degree:
        raise AssemblyError(f"no quadrature rule of degree {degree} in {dim}D")
    return rule


def _cell_geometry(mesh: MeshLevel):
    """Barycentric gradients (nc, d+1, d) and unsigned measures (nc,)."""
    d = mesh.dim
    coords = mesh.vertices[mesh.cells]
    B = np.empty((mesh.n_cells, d + 1, d + 1))
    B[:, :, 0] = 1.0
    B[:, :, 1:] = coords
    det = np.linalg.det(B)
    measures = np.abs(det) / factorial(d)
    bad = np.flatnonzero(measures < 1e-14 * mesh.mesh_size ** d)
    if bad.size:
        raise AssemblyError(f"degenerate cell {int(bad[0])}")
    C = np.linalg.inv(B)
    grads = np.transpose(C[:, 1:, :], (0, 2, 1))
    return grads, measures


def _restrict(A, mesh, interior_only):
    if not interior_only:
        return A
    idx = mesh.interior_indices
    return A[idx][:, idx].tocsr()


def _scatter(mesh, local, rows_range):
    """COO scatter of local (nc, d+1, d+1) matrices for the given cell slice."""
    n_loc = mesh.dim + 1
    cells = mesh.cells[rows_range]
    rows = np.repeat(cells, n_loc, axis=1).ravel()
    cols = np.tile(cells, (1, n_loc)).ravel()
    return sp.coo_matrix(
        (local.ravel(), (rows, cols)), shape=(mesh.n_vertices, mesh.n_vertices)
    ).tocsr()


def _assemble(mesh, local_fn, interior_only, work=None):
    n_loc = mesh.dim + 1
    total = None
    for start in range(0, mesh.n_cells, _ASSEMBLY_CHUNK):
        stop = min(start + _ASSEMBLY_CHUNK, mesh.n_cells)
        sl = slice(start, stop)
        local = local_fn(sl)
        local = 0.5 * (local + np.transpose(local, (0, 2, 1)))
        part = _scatter(mesh, local, sl)
        total = part if total is None else total + part
    if work is not None:
        work.count_assembly(mesh.n_cells * n_loc * n_loc)
    A = (total + total.T) * 0.5
    A = A.tocsr()
    A.sort_indices()
    return _restrict(A, mesh, interior_only)


def assemble_stiffness(mesh: MeshLevel, spec: ProblemSpec, interior_only=True, work=None):
    """Matrix of (A grad w, grad v); exact for P1 since gradients are
    cellwise constant."""
    grads, measures = _cell_geometry(mesh)
    D = spec.diffusion_matrix

    def local_fn(sl):
        g = grads[sl]
        return np.einsum("c,cid,de,cje->cij", measures[sl], g, D, g, optimize=True)

    return _assemble(mesh, local_fn, interior_only, work)


def assemble_mass(mesh: MeshLevel, interior_only=True, work=None):
    """Matrix of (w, v); exact closed form for P1."""
    _, measures = _cell_geometry(mesh)
    d = mesh.dim
    base = (np.ones((d + 1, d + 1)) + np.eye(d + 1)) / ((d + 1) * (d + 2))

    def local_fn(sl):
        return measures[sl, None, None] * base[None, :, :]

    return _assemble(mesh, local_fn, interior_only, work)


def _weight_values_at_qpoints(mesh, weight, rule, sl):
    """Weight evaluated at the quadrature points of the cell slice."""
    cells = mesh.cells[sl]
    if callable(weight):
        coords = mesh.vertices[cells]
        phys = np.einsum("qi,cid->cqd", rule.points, coords)
        vals = np.asarray(weight(phys.reshape(-1, mesh.dim)), dtype=float)
        return vals.reshape(len(cells), -1)
    if isinstance(weight, FeFunction):
        if weight.level_index != mesh.level_index:
            raise ValueError(
                f"weight lives on level {weight.level_index}, mesh is level {mesh.level_index}")
        vertex_vals = full_values(mesh, weight.coefficients)
    else:
        vertex_vals = np.asarray(weight, dtype=float)
        if vertex_vals.shape == (mesh.n_interior,):
            vertex_vals = full_values(mesh, vertex_vals)
        elif vertex_vals.shape != (mesh.n_vertices,):
            raise ValueError("weight vector length matches neither the interior "
                             "nor the full vertex count")
    return vertex_vals[cells] @ rule.points.T


def assemble_weighted_mass(mesh: MeshLevel, weight, power=1, interior_only=True, work=None):
    """Matrix of (w^power u, v) for a P1 coefficient weight or an analytic
    field.  For P1 weights the quadrature is exact, which requires
    power + 2 <= 4 with the built-in rules."""
    rule = _RULES[mesh.dim]
    if not callable(weight) and power + 2 > rule.degree:
        raise AssemblyError(
            f"weighted mass with P1 weight^{power} needs a degree {power + 2} rule; "
            f"only degree {rule.degree} is available")
    _, measures = _cell_geometry(mesh)
    wq = rule.weights
    pts = rule.points

    def local_fn(sl):
        vals = _weight_values_at_qpoints(mesh, weight, rule, sl)
        if power != 1:
            vals = vals ** power
        return np.einsum("c,cq,q,qi,qj->cij", measures[sl], vals, wq, pts, pts,
                         optimize=True)

    return _assemble(mesh, local_fn, interior_only, work)


def assemble_load(mesh: MeshLevel, func, interior_only=True):
    """Vector of (f, v) for an analytic f, by the built-in volume rule."""
    rule = _RULES[mesh.dim]
    _, measures = _cell_geometry(mesh)
    coords = mesh.vertices[mesh.cells]
    phys = np.einsum("qi,cid->cqd", rule.points, coords)
    vals = np.asarray(func(phys.reshape(-1, mesh.dim)), dtype=float).reshape(mesh.n_cells, -1)
    local = np.einsum("c,cq,q,qi->ci", measures, vals, rule.weights, rule.points)
    out = np.zeros(mesh.n_vertices)
    np.add.at(out, mesh.cells.ravel(), local.ravel())
    return out[mesh.interior_indices] if interior_only else out


def full_values(mesh: MeshLevel, interior_coeffs):
    """Zero-extend interior coefficients to all vertices."""
    interior_coeffs = np.asarray(interior_coeffs, dtype=float)
    if interior_coeffs.shape != (mesh.n_interior,):
        raise ValueError("coefficient vector does not match the interior dof count")
    out = np.zeros(mesh.n_vertices)
    out[mesh.interior_indices] = interior_coeffs
    return out


def integrate_power(mesh: MeshLevel, vertex_values, exponent):
    """Integral of u^exponent for P1 u given by full vertex values; exact for
    exponent <= 4 with the built-in rules."""
    rule = _RULES[mesh.dim]
    if exponent > rule.degree:
        raise AssemblyError(f"integrating u^{exponent} needs a degree {exponent} rule")
    _, measures = _cell_geometry(mesh)
    total = 0.0
    for start in range(0, mesh.n_cells, _ASSEMBLY_CHUNK):
        sl = slice(start, min(start + _ASSEMBLY_CHUNK, mesh.n_cells))
        vals = vertex_values[mesh.cells[sl]] @ rule.points.T
        total += float(np.einsum("c,cq,q->", measures[sl], vals ** exponent, rule.weights))
    return total


def _coeff_array(u):
    return u.coefficients if isinstance(u, FeFunction) else np.asarray(u, dtype=float)


def apply_nonlinear_residual(mesh: MeshLevel, spec: ProblemSpec, u, lam):
    """Dual vector of v -> a(u, v) - lam b(u, v) over interior basis functions,
    with a(u, v) = (A grad u, grad v) + (W u + zeta u^(2 sigma) u, v)."""
    c = _coeff_array(u)
    A = assemble_stiffness(mesh, spec)
    M = assemble_mass(mesh)
    if spec.potential is not None:
        A = A + assemble_weighted_mass(mesh, spec.potential, 1)
    if spec.zeta != 0.0:
        uf = FeFunction(mesh.level_index, c)
        A = A + spec.zeta * assemble_weighted_mass(mesh, uf, 2 * spec.sigma)
    return A @ c - lam * (M @ c)


def a_norm(u, stiffness):
    """Energy norm sqrt(u' A u)."""
    c = _coeff_array(u)
    if stiffness.shape[1] != c.shape[0]:
        raise ValueError("dimension mismatch between vector and matrix")
    return float(np.sqrt(max(c @ (stiffness @ c), 0.0)))


def l2_norm(u, mass):
    """L2 norm sqrt(u' M u)."""
    c = _coeff_array(u)
    if mass.shape[1] != c.shape[0]:
        raise ValueError("dimension mismatch between vector and matrix")
    return float(np.sqrt(max(c @ (mass @ c), 0.0)))


def dump_matrix(A, path):
    """Coordinate text dump, one `row col value` line per stored nonzero."""
    coo = sp.coo_matrix(A)
    with open(path, "w") as f:
        for r, c, v in zip(coo.row, coo.col, coo.data):
            f.write(f"{int(r)} {int(c)} {repr(float(v))}\n")

"""Bilinear quadrilaterals, sparse assembly and Newton solves.

The mesh is preprocessed once into a :class:`Discretization` holding shape
function data at the 2x2 Gauss points of every element. The two sub-problems
of the staggered scheme (:class:`DisplacementProblem`, :class:`DamageProblem`)
expose ``residual``/``tangent`` pairs consumed by :func:`newton`.

Element matrices are scattered into a fixed CSR pattern with ``np.bincount``;
the pattern only contains free (unconstrained) dofs, so the reduced system is
assembled directly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .model import Material, degradation, split_energy

_G = 1.0 / np.sqrt(3.0)
GAUSS_POINTS = np.array([[-_G, -_G], [_G, -_G], [_G, _G], [-_G, _G]])
GAUSS_WEIGHTS = np.ones(4)
ACTIVE_BAND = 1e-9      # gap to a penalty bound below which a pushed node is active
_CORNERS = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])


class AssemblyError(ValueError):
    """Raised for invalid element geometry."""


class NonConvergence(RuntimeError):
    """Newton or staggered iteration failed; carries the last residual norm."""

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


# ----------------------------------------------------------------------
# Reference element
# ----------------------------------------------------------------------
def shape_functions(xi, eta):
    """Bilinear shape functions and their reference gradients.

    Nodes are numbered counter-clockwise starting at (-1, -1).

    Returns
    -------
    N : ndarray, shape (..., 4)
    dN : ndarray, shape (..., 4, 2)
        Derivatives with respect to ``(xi, eta)``.
    """
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    sx, sy = _CORNERS[:, 0], _CORNERS[:, 1]
    a = 1.0 + xi[..., None] * sx
    b = 1.0 + eta[..., None] * sy
    N = 0.25 * a * b
    dN = np.stack([0.25 * sx * b, 0.25 * sy * a], axis=-1)
    return N, dN


@dataclass
class QuadraturePoint:
    element: int
    local_coords: tuple
    weight: float
    jacobian_det: float


class Discretization:
    """Per-element Gauss point data for a mesh."""

    def __init__(self, mesh):
        self.mesh = mesh
        nodes, elements = mesh.nodes, mesh.elements
        self.n_nodes = mesh.n_nodes
        self.n_el = mesh.n_elements
        N, dN = shape_functions(GAUSS_POINTS[:, 0], GAUSS_POINTS[:, 1])
        self.N = N                                   # (4 qp, 4 nodes)
        X = nodes[elements]                          # (ne, 4, 2)
        J = np.einsum("qai,eaj->eqij", dN, X)        # dx_j / dxi_i
        det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
        if np.any(det <= 0):
            bad = int(np.nonzero(np.any(det <= 0, axis=1))[0][0])
            raise AssemblyError(f"element {bad} has a non-positive Jacobian")
        Jinv = np.empty_like(J)
        Jinv[..., 0, 0] = J[..., 1, 1] / det
        Jinv[..., 1, 1] = J[..., 0, 0] / det
        Jinv[..., 0, 1] = -J[..., 0, 1] / det
        Jinv[..., 1, 0] = -J[..., 1, 0] / det
        self.detJ = det
        self.wdet = det * GAUSS_WEIGHTS              # (ne, 4)
        self.dNdx = np.einsum("qai,eqji->eqaj", dN, Jinv)   # (ne, 4, 4, 2)
        B = np.zeros((self.n_el, 4, 3, 8))
        B[..., 0, 0::2] = self.dNdx[..., 0]
        B[..., 1, 1::2] = self.dNdx[..., 1]
        B[..., 2, 0::2] = self.dNdx[..., 1]
        B[..., 2, 1::2] = self.dNdx[..., 0]
        self.B = B
        self.qp_coords = np.einsum("qa,eai->eqi", N, X)
        self.u_dofs = np.stack([2 * elements, 2 * elements + 1], axis=-1).reshape(self.n_el, 8)
        self.d_dofs = elements
        # nodal share of the domain area (lumped mass with unit density)
        self.nodal_area = np.bincount(elements.ravel(), weights=(self.wdet[..., None] * N).sum(axis=1).ravel(),
                                      minlength=self.n_nodes)

    @property
    def n_qp(self) -> int:
        return 4 * self.n_el

    def quadrature_points(self):
        out = []
        for e in range(self.n_el):
            for q in range(4):
                out.append(QuadraturePoint(e, tuple(GAUSS_POINTS[q]), GAUSS_WEIGHTS[q], self.detJ[e, q]))
        return out

    def interpolate(self, nodal):
        """Nodal scalar field to Gauss point values, shape (ne, 4)."""
        return np.asarray(nodal)[self.d_dofs] @ self.N.T

    def strain(self, u):
        return np.einsum("eqij,ej->eqi", self.B, u[self.u_dofs])

    def integrate(self, qp_values):
        return float(np.sum(qp_values * self.wdet))

    def project_to_nodes(self, qp_values):
        """Lumped L2 projection of a Gauss point field onto nodes."""
        contrib = (self.wdet * qp_values)[..., None] * self.N[None]
        num = np.bincount(self.d_dofs.ravel(), weights=contrib.sum(axis=1).ravel(), minlength=self.n_nodes)
        return num / self.nodal_area


class SparsePattern:
    """Fixed CSR layout for element matrices restricted to free dofs."""

    def __init__(self, dof_map, n_dof, free=None):
        dof_map = np.asarray(dof_map)
        if free is None:
            free = np.ones(n_dof, bool)
        self.free = np.asarray(free, bool)
        self.free_idx = np.nonzero(self.free)[0]
        reduced = -np.ones(n_dof, dtype=np.int64)
        reduced[self.free_idx] = np.arange(len(self.free_idx))
        self.n = len(self.free_idx)
        k = dof_map.shape[1]
        rows = np.repeat(reduced[dof_map], k, axis=1).ravel()
        cols = np.tile(reduced[dof_map], (1, k)).ravel()
        valid = (rows >= 0) & (cols >= 0)
        self.valid = np.nonzero(valid)[0]
        key = rows[valid] * self.n + cols[valid]
        uniq, inv = np.unique(key, return_inverse=True)
        self.scatter = inv
        self.nnz = len(uniq)
        r, c = uniq // self.n, uniq % self.n
        self.indices = c.astype(np.int32)
        self.indptr = np.concatenate([[0], np.cumsum(np.bincount(r, minlength=self.n))]).astype(np.int32)

    def matrix(self, ke):
        data = np.bincount(self.scatter, weights=ke.reshape(-1)[self.valid], minlength=self.nnz)
        return sp.csr_matrix((data, self.indices.copy(), self.indptr.copy()), shape=(self.n, self.n))


def assemble_vector(dof_map, fe, n_dof):
    return np.bincount(dof_map.ravel(), weights=fe.ravel(), minlength=n_dof)


# ----------------------------------------------------------------------
# Displacement sub-problem
# ----------------------------------------------------------------------
class DisplacementProblem:
    """Momentum balance with degraded stiffness.

    ``residual(u)`` returns the full internal-minus-external force vector;
    ``tangent(u)`` the reduced stiffness on free dofs. Degradation values
    ``g`` at the Gauss points and the external force are set before solving.
    """

    def __init__(self, disc: Discretization, material: Material, fixed_dofs=()):
        self.disc = disc
        self.material = material
        self.n_dof = 2 * disc.n_nodes
        free = np.ones(self.n_dof, bool)
        free[np.asarray(fixed_dofs, dtype=np.int64)] = False
        self.pattern = SparsePattern(disc.u_dofs, self.n_dof, free)
        self.free = free
        self.g = np.ones((disc.n_el, 4))
        self.f_ext = np.zeros(self.n_dof)
        self._linear = material.split == "none"
        if self._linear:
            D = material.hooke()
            self._k0 = np.einsum("eqki,kl,eqlj,eq->eqij", disc.B, D, disc.B, disc.wdet, optimize=True)
        self._cache = None

    def set_damage(self, d):
        self.g = degradation(self.disc.interpolate(d), self.material.g0)[0]

    def _state(self, u):
        c = self._cache
        if c is not None and c[1] is self.g and np.array_equal(c[0], u):
            return c[2]
        eps = self.disc.strain(u)
        res = split_energy(eps, self.material, self.g)
        self._cache = (np.array(u, copy=True), self.g, res)
        return res

    def psi_plus(self, u):
        return self._state(u).psi_plus

    def internal_force(self, u):
        res = self._state(u)
        fe = np.einsum("eqki,eqk,eq->ei", self.disc.B, res.stress, self.disc.wdet, optimize=True)
        return assemble_vector(self.disc.u_dofs, fe, self.n_dof)

    def residual(self, u):
        fint = self.internal_force(u)
        scale = max(np.linalg.norm(fint), np.linalg.norm(self.f_ext))
        return fint - self.f_ext, scale

    def element_tangent(self, u):
        if self._linear:
            return np.einsum("eq,eqij->eij", self.g, self._k0, optimize=True)
        res = self._state(u)
        return np.einsum("eqki,eqkl,eqlj,eq->eij", self.disc.B, res.tangent, self.disc.B,
                         self.disc.wdet, optimize=True)

    def tangent(self, u):
        return self.pattern.matrix(self.element_tangent(u))

    def full_tangent(self, u):
        """Unreduced stiffness (all dofs), used for checks and reactions."""
        ke = self.element_tangent(u)
        rows = np.repeat(self.disc.u_dofs, 8, axis=1).ravel()
        cols = np.tile(self.disc.u_dofs, (1, 8)).ravel()
        return sp.csr_matrix((ke.ravel(), (rows, cols)), shape=(self.n_dof, self.n_dof))


# ----------------------------------------------------------------------
# Damage sub-problem
# ----------------------------------------------------------------------
class DamageProblem:
    """Stationarity of the damage functional for fixed driving force.

    Weak residual per node ``a``::

        int [g'(d) H + f Gc/(c_w ell) w'(d)] N_a + f (2 Gc ell / c_w) grad d . grad N_a

    Keeping ``f`` inside the gradient term reproduces the ``grad f . grad d``
    contribution of the strong form after integration by parts.

    A nodal penalty ``gamma * A_a * min(d_a - lower_a, 0)`` enforces
    ``d >= lower`` (positivity for AT1, or irreversibility when ``lower`` is
    the previous damage).
    """

    def __init__(self, disc: Discretization, material: Material, gamma: float = 0.0):
        self.disc = disc
        self.material = material
        self.gamma = gamma
        self.pattern = SparsePattern(disc.d_dofs, disc.n_nodes)
        self.H = np.zeros((disc.n_el, 4))
        self.f = np.ones((disc.n_el, 4))
        self.lower = None
        NN = np.einsum("qa,qb->qab", disc.N, disc.N)
        self._nn = np.einsum("eq,qab->eqab", disc.wdet, NN)
        self._gg = np.einsum("eqai,eqbi,eq->eqab", disc.dNdx, disc.dNdx, disc.wdet, optimize=True)

    def _coefficients(self):
        m = self.material
        cw = m.c_w
        return self.f * m.Gc / (cw * m.ell), self.f * 2.0 * m.Gc * m.ell / cw

    def _smooth_residual(self, d):
        m = self.material
        # polynomial forms without clipping keep residual and tangent consistent
        dq = self.disc.interpolate(d)
        dg = -2.0 * (1.0 - dq)
        dw = np.ones_like(dq) if m.dissipation == "AT1" else 2.0 * dq
        a, b = self._coefficients()
        drive = (dg * self.H * self.disc.wdet) @ self.disc.N
        diss = (a * dw * self.disc.wdet) @ self.disc.N
        grad_d = np.einsum("eqai,ea->eqi", self.disc.dNdx, d[self.disc.d_dofs])
        grad = np.einsum("eq,eqi,eqai->ea", b * self.disc.wdet, grad_d, self.disc.dNdx, optimize=True)
        n = self.disc.n_nodes
        dofs = self.disc.d_dofs
        R_drive = assemble_vector(dofs, drive, n)
        R_diss = assemble_vector(dofs, diss, n)
        R_grad = assemble_vector(dofs, grad, n)
        # g'H = -2H + 2Hd: both parts count towards the magnitude near d = 1
        drive_mag = assemble_vector(dofs, (2.0 * self.H * (1.0 + np.abs(dq)) * self.disc.wdet) @ self.disc.N, n)
        scale = np.linalg.norm(drive_mag + np.abs(R_diss) + np.abs(R_grad))
        return R_drive + R_diss + R_grad, scale

    def residual(self, d):
        R, scale = self._smooth_residual(d)
        if self.gamma > 0:
            gap = d - self._lower()
            R = R + self.gamma * self.disc.nodal_area * np.where(self._active(gap, R), gap, 0.0)
        return R, scale

    def _lower(self):
        return 0.0 if self.lower is None else self.lower

    def _active(self, gap, R_smooth):
        # nodes on (or a hair above) the bound that are pushed down count as
        # active in residual and tangent alike; otherwise the nearly singular
        # free tangent throws them far below the bound and roundoff can bring
        # them back exactly onto it
        return (gap < 0.0) | ((gap <= ACTIVE_BAND) & (R_smooth > 0.0))

    def tangent(self, d):
        m = self.material
        a, b = self._coefficients()
        d2w = 0.0 if m.dissipation == "AT1" else 2.0
        c = 2.0 * self.H + a * d2w
        ke = np.einsum("eq,eqab->eab", c, self._nn) + np.einsum("eq,eqab->eab", b, self._gg)
        K = self.pattern.matrix(ke)
        if self.gamma > 0:
            gap = d - self._lower()
            active = gap < 0.0
            if np.any(gap <= ACTIVE_BAND):
                active = self._active(gap, self._smooth_residual(d)[0])
            K = K + sp.diags(self.gamma * self.disc.nodal_area * active)
        return K.tocsr()


# ----------------------------------------------------------------------
# Linear systems and Newton
# ----------------------------------------------------------------------
@dataclass
class NewtonSettings:
    tol_residual: float = 1e-6
    max_iters: int = 250
    abs_floor: float = 1e-14
    scale_floor: float = 1e-10
    stagnation_floor: float = 1e-8
    step_floor: float = 1e-14

    def __post_init__(self):
        if not self.tol_residual > 0:
            raise ValueError("tol_residual must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


@dataclass
class NewtonResult:
    x: np.ndarray
    iterations: int
    residual: float
    initial_residual: float
    scale: float
    scale0: float = 0.0


def _factor_solve(K, rhs):
    try:
        lu = spla.splu(K.tocsc(), permc_spec="MMD_AT_PLUS_A", options={"SymmetricMode": True})
        dx = lu.solve(rhs)
    except RuntimeError as exc:       # singular factorization
        raise NonConvergence(f"linear solve failed: {exc}") from exc
    if not np.all(np.isfinite(dx)):
        raise NonConvergence("linear solve produced non-finite values")
    return dx


def newton(residual, tangent, x0, free, settings: NewtonSettings = NewtonSettings()) -> NewtonResult:
    """Newton-Raphson on the free dofs of ``x``.

    ``residual(x)`` returns ``(R_full, scale)``; ``tangent(x)`` returns the
    reduced matrix on ``free``. Convergence: ``|R_free| <= tol * |R_free at
    start|`` or below the absolute floor or below ``scale_floor * scale``.
    A residual below ``stagnation_floor * scale`` that an update fails to
    reduce tenfold is accepted as the roundoff limit, and so is any residual
    whose update is below ``step_floor`` relative to ``x`` (a stiff penalty
    turns roundoff in ``x`` into a residual that no update can remove).
    """
    x = np.array(x0, dtype=float, copy=True)
    free_idx = np.nonzero(free)[0]
    R, scale = residual(x)
    scale0 = scale
    r0 = r = float(np.linalg.norm(R[free_idx]))

    def done(r, scale):
        return r <= max(settings.tol_residual * r0, settings.abs_floor, settings.scale_floor * scale)

    it = 0
    while not done(r, scale):
        if it >= settings.max_iters:
            raise NonConvergence(f"Newton did not converge in {it} iterations (|R|={r:.3e})", r, it)
        dx = _factor_solve(tangent(x), -R[free_idx])
        x[free_idx] += dx
        it += 1
        R, scale = residual(x)
        r_prev, r = r, float(np.linalg.norm(R[free_idx]))
        if not np.isfinite(r):
            raise NonConvergence("residual became non-finite", r, it)
        # roundoff plateau: the update no longer reduces a residual that is already tiny
        if r <= settings.stagnation_floor * scale and r > 0.1 * r_prev:
            break
        if np.abs(dx).max(initial=0.0) <= settings.step_floor * max(1.0, np.abs(x).max(initial=0.0)):
            break
    return NewtonResult(x, it, r, r0, scale, scale0)


@dataclass
class SparseSystem:
    """Linear(ized) system ``matrix @ x = rhs`` with prescribed dofs."""

    matrix: sp.spmatrix
    rhs: np.ndarray
    dirichlet: dict = field(default_factory=dict)


def solve_field(system: SparseSystem, settings: NewtonSettings = NewtonSettings(), x0=None):
    """Solve a :class:`SparseSystem` with the Newton driver.

    Returns ``(x, iterations)``; raises :class:`NonConvergence` on failure.
    """
    A = sp.csr_matrix(system.matrix)
    n = A.shape[0]
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    free = np.ones(n, bool)
    for dof, val in system.dirichlet.items():
        free[dof] = False
        x[dof] = val
    free_idx = np.nonzero(free)[0]
    A_ff = A[free_idx][:, free_idx]
    b = np.asarray(system.rhs, dtype=float)

    def residual(x):
        Ax = A @ x
        return Ax - b, max(np.linalg.norm(Ax), np.linalg.norm(b))

    res = newton(residual, lambda x: A_ff, x, free, settings)
    return res.x, res.iterations


def assemble_displacement(problem: DisplacementProblem, u, d, f_ext=None, dirichlet=None) -> SparseSystem:
    """Linearized momentum system about ``u`` for damage ``d``.

    The rhs is ``K u - R(u)`` so that solving gives the Newton update target.
    """
    problem.set_damage(d)
    if f_ext is not None:
        problem.f_ext = np.asarray(f_ext, dtype=float)
    K = problem.full_tangent(u)
    R, _ = problem.residual(u)
    return SparseSystem(K, K @ u - R, dict(dirichlet or {}))


def assemble_damage(problem: DamageProblem, d, H, f) -> SparseSystem:
    """Linearized damage system about ``d`` for driving field ``H`` and toughness factor ``f``."""
    problem.H = np.asarray(H, dtype=float).reshape(problem.disc.n_el, 4)
    problem.f = np.asarray(f, dtype=float).reshape(problem.disc.n_el, 4)
    K = problem.tangent(d)
    R, _ = problem.residual(d)
    return SparseSystem(K, K @ d - R, {})

"""Load cycles: discretization, staggered step solves and cycle records.

A :class:`Simulation` bundles the mesh, material, boundary conditions and
solver settings. It advances a :class:`SystemState` by one load step
(:meth:`Simulation.solve_step`) or one full cycle (:meth:`Simulation.solve_cycle`).
Each step alternates displacement and damage solves until both residuals,
evaluated before the respective solve, are below the stagger tolerance.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import fem
from .crack import PathSampler, SmearedConfig, _invert, discrete_crack_length, smeared_integrals
from .model import FatigueParams, Material, degradation, fatigue_degradation, penalty_stiffness


STAGGER_SCALE_FLOOR = 1e-3


class CycleFailure(RuntimeError):
    """A load step of a cycle did not converge."""

    def __init__(self, message, step=-1, residual=float("nan")):
        super().__init__(message)
        self.step = step
        self.residual = residual


# ----------------------------------------------------------------------
# Load program and boundary conditions
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class LoadProgram:
    """Triangular load cycle between ``min_level`` and ``max_level``."""

    kind: str = "force"
    min_level: float = 0.0
    max_level: float = 1.0
    steps_loading: int = 2
    steps_unloading: int = 1

    def __post_init__(self):
        if self.kind not in ("force", "displacement"):
            raise ValueError(f"unknown load kind {self.kind!r}")
        if self.steps_loading < 1 or self.steps_unloading < 1:
            raise ValueError("a cycle needs at least one loading and one unloading step")


def discretize_cycle(program: LoadProgram) -> np.ndarray:
    """Load levels of one cycle: equispaced up to the peak, then down to the minimum."""
    lo, hi = program.min_level, program.max_level
    up = lo + (hi - lo) * np.arange(1, program.steps_loading + 1) / program.steps_loading
    down = hi + (lo - hi) * np.arange(1, program.steps_unloading + 1) / program.steps_unloading
    return np.concatenate([up, down])


@dataclass(frozen=True)
class Constraint:
    """Prescribed displacement component on a node set.

    With ``follows_load`` the value is multiplied by the current load level.
    """

    node_set: str
    component: int
    value: float = 0.0
    follows_load: bool = False


@dataclass(frozen=True)
class Load:
    """Force on a set whose resultant is ``scale * level``.

    ``distribution="edge"`` spreads it as a uniform traction over the edge set
    of the same name; ``"nodes"`` splits it equally among the nodes.
    """

    node_set: str
    component: int
    scale: float = 1.0
    distribution: str = "edge"


@dataclass
class BoundaryConditions:
    constraints: list = field(default_factory=list)
    loads: list = field(default_factory=list)


@dataclass
class StaggerSettings:
    tol_stag: float = 1e-4
    max_stag_iters: int = 250

    def __post_init__(self):
        if not self.tol_stag > 0:
            raise ValueError("tol_stag must be positive")


# ----------------------------------------------------------------------
# State and records
# ----------------------------------------------------------------------
@dataclass
class SystemState:
    """Complete restartable state at a cycle boundary."""

    u: np.ndarray
    d: np.ndarray
    H: np.ndarray
    alpha_bar: np.ndarray
    alpha_prev: np.ndarray
    N: int = 0

    def copy(self) -> "SystemState":
        return SystemState(self.u.copy(), self.d.copy(), self.H.copy(),
                           self.alpha_bar.copy(), self.alpha_prev.copy(), self.N)


@dataclass
class CycleRecord:
    N: int
    max_alpha_bar: float
    max_d: float
    a_smeared: float
    stagger_iters: int
    wall_time: float
    trial: bool = False
    a_raw: float = 0.0
    a_interpolated: float = float("nan")
    a_discrete: float = float("nan")
    a_signed: float = float("nan")


@dataclass
class FailureCriterion:
    """Crack length at which the specimen counts as failed.

    ``a_fail = crack_fraction * ligament``; ``None`` disables the check.
    """

    ligament: float = 1.0
    crack_fraction: float = None

    @property
    def a_fail(self):
        return None if self.crack_fraction is None else self.crack_fraction * self.ligament


def polyline_distance(points, polyline) -> np.ndarray:
    """Euclidean distance from each point to a polyline."""
    pts = np.asarray(points, dtype=float)
    line = np.asarray(polyline, dtype=float)
    if line.ndim != 2 or line.shape[0] < 2 or line.shape[1] != 2:
        raise ValueError("a polyline needs at least two 2D points")
    best = np.full(len(pts), np.inf)
    for a, b in zip(line[:-1], line[1:]):
        t = b - a
        s = np.clip((pts - a) @ t / max(t @ t, 1e-300), 0.0, 1.0)
        best = np.minimum(best, np.linalg.norm(pts - (a + s[:, None] * t), axis=1))
    return best


def initial_crack_history(points, polyline, material: Material, factor: float = 1e3) -> np.ndarray:
    """History field that makes the damage solve reproduce a crack along ``polyline``.

    Energy ``factor * Gc / (4 ell)`` on the line, decaying linearly to zero at
    distance ``ell / 2``.
    """
    dist = polyline_distance(points, polyline)
    half = 0.5 * material.ell
    return factor * material.Gc / (4.0 * material.ell) * np.maximum(1.0 - dist / half, 0.0)


# ----------------------------------------------------------------------
# Simulation
# ----------------------------------------------------------------------
class Simulation:
    """Staggered phase-field fatigue solver on a fixed mesh.

    Parameters
    ----------
    mesh : Mesh
    material : Material
    fatigue : FatigueParams
    bcs : BoundaryConditions
    program : LoadProgram
    irreversibility : {"history", "penalty"}
        History field (default) or a penalty on ``d < d_previous_step``.
    tol_ir : float
        Tolerance that sets the penalty stiffness.
    smeared : SmearedConfig, optional
        Configuration of the crack length monitor.
    crack_path : array_like, optional
        Polyline for the interpolated crack tip.
    initial_crack : array_like, optional
        Polyline of a pre-existing crack. It enters as a seed history field;
        with penalty irreversibility only the damage it produces is kept.
    """

    def __init__(self, mesh, material: Material, fatigue: FatigueParams, bcs: BoundaryConditions,
                 program: LoadProgram, stagger: StaggerSettings = None, newton: fem.NewtonSettings = None,
                 irreversibility: str = "history", tol_ir: float = 1e-6, smeared: SmearedConfig = None,
                 crack_path=None, failure: FailureCriterion = None, initial_crack=None):
        self.mesh = mesh
        self.disc = fem.Discretization(mesh)
        self.material = material
        self.fatigue = fatigue
        self.bcs = bcs
        self.program = program
        self.stagger = stagger or StaggerSettings()
        self.newton = newton or fem.NewtonSettings()
        if irreversibility not in ("history", "penalty"):
            raise ValueError(f"unknown irreversibility mode {irreversibility!r}")
        self.irreversibility = irreversibility
        self.smeared = smeared
        self.failure = failure or FailureCriterion()
        self.initial_crack = None
        if initial_crack is not None:
            self.initial_crack = np.asarray(initial_crack, dtype=float)
            polyline_distance(np.zeros((0, 2)), self.initial_crack)
        self.path = None
        if crack_path is not None:
            crack_path = np.asarray(crack_path, dtype=float)
            self.path = PathSampler(self.disc, crack_path)
            t = crack_path[1] - crack_path[0]
            self._path_origin, self._path_dir = crack_path[0], t / np.linalg.norm(t)

        for c in bcs.constraints:
            if c.node_set not in mesh.node_sets:
                raise KeyError(f"constraint references unknown set {c.node_set!r}")
        for ld in bcs.loads:
            sets = mesh.edge_sets if ld.distribution == "edge" else mesh.node_sets
            if ld.node_set not in sets:
                raise KeyError(f"load references unknown set {ld.node_set!r}")

        dofs, base, scaled = [], [], []
        for c in bcs.constraints:
            nodes = mesh.node_sets[c.node_set]
            dofs.append(2 * nodes + c.component)
            base.append(np.full(len(nodes), 0.0 if c.follows_load else c.value))
            scaled.append(np.full(len(nodes), c.value if c.follows_load else 0.0))
        if dofs:
            dofs = np.concatenate(dofs)
            base, scaled = np.concatenate(base), np.concatenate(scaled)
            # later constraints win on shared dofs
            _, last = np.unique(dofs[::-1], return_index=True)
            keep = len(dofs) - 1 - last
            self.fixed_dofs, self._u_base, self._u_scaled = dofs[keep], base[keep], scaled[keep]
        else:
            self.fixed_dofs = np.zeros(0, dtype=np.int64)
            self._u_base = self._u_scaled = np.zeros(0)
        self._f_unit = self._unit_force()

        self.disp = fem.DisplacementProblem(self.disc, material, self.fixed_dofs)
        needs_penalty = material.dissipation == "AT1" or irreversibility == "penalty"
        gamma = penalty_stiffness(material, tol_ir) if needs_penalty else 0.0
        self.damage = fem.DamageProblem(self.disc, material, gamma)
        self.scale_ref_u = self._reference_force()

    # -- setup helpers -------------------------------------------------
    def _unit_force(self):
        f = np.zeros(2 * self.disc.n_nodes)
        for ld in self.bcs.loads:
            if ld.distribution == "edge":
                edges = self.mesh.edge_sets[ld.node_set]
                a = self.mesh.elements[edges[:, 0], edges[:, 1]]
                b = self.mesh.elements[edges[:, 0], (edges[:, 1] + 1) % 4]
                L = np.linalg.norm(self.mesh.nodes[b] - self.mesh.nodes[a], axis=1)
                w = np.bincount(np.concatenate([a, b]), weights=np.concatenate([L, L]) / 2.0,
                                minlength=self.disc.n_nodes)
                w /= L.sum()
            else:
                nodes = self.mesh.node_sets[ld.node_set]
                w = np.zeros(self.disc.n_nodes)
                w[nodes] = 1.0 / len(nodes)
            f[ld.component::2] += ld.scale * w
        return f

    def _reference_force(self):
        """Force norm of the undamaged body at peak load (prescribed dofs only).

        Used as a floor for the relative displacement residual so that steps
        near zero load do not compare roundoff with roundoff.
        """
        level = max(abs(self.program.max_level), abs(self.program.min_level))
        u = np.zeros(2 * self.disc.n_nodes)
        u[self.fixed_dofs] = self.prescribed(level)
        self.disp.set_damage(np.zeros(self.disc.n_nodes))
        fint = self.disp.internal_force(u)
        return max(float(np.linalg.norm(fint)), level * float(np.linalg.norm(self._f_unit)))

    def initial_state(self) -> SystemState:
        nq = self.disc.n_qp
        n = self.disc.n_nodes
        H = np.zeros(nq)
        d = np.zeros(n)
        if self.initial_crack is not None:
            xq = np.column_stack([self.disc.interpolate(self.mesh.nodes[:, k]).ravel() for k in (0, 1)])
            H0 = initial_crack_history(xq, self.initial_crack, self.material)
            d = self._seed_damage(H0)
            if self.irreversibility == "history":
                H = H0
        return SystemState(np.zeros(2 * n), d, H, np.zeros(nq), np.zeros(nq), 0)

    def _seed_damage(self, H0):
        """Damage in equilibrium with the seed history field (no load, intact toughness)."""
        self.damage.H = H0.reshape(self.disc.n_el, 4)
        self.damage.f = np.ones((self.disc.n_el, 4))
        self.damage.lower = None
        d = np.zeros(self.disc.n_nodes)
        rd = fem.newton(self.damage.residual, self.damage.tangent, d, np.ones(len(d), bool), self.newton)
        return np.clip(rd.x, 0.0, 1.0)

    def prescribed(self, level):
        return self._u_base + level * self._u_scaled

    # -- field quantities ----------------------------------------------
    def toughness_factor(self, alpha_bar):
        return fatigue_degradation(alpha_bar, self.fatigue).reshape(self.disc.n_el, 4)

    def local_alpha(self, u, d):
        """Local fatigue variable ``g(d) psi+`` at the Gauss points."""
        self.disp.set_damage(d)
        psi = self.disp.psi_plus(u)
        g = degradation(self.disc.interpolate(d), self.material.g0)[0]
        return (g * psi).ravel()

    # -- solves --------------------------------------------------------
    def _damage_tangent(self, free):
        if free.all():
            return self.damage.tangent
        idx = np.nonzero(free)[0]
        return lambda d: self.damage.tangent(d)[idx][:, idx]

    def solve_step(self, state: SystemState, level: float, freeze_alpha: bool = False, step: int = 0):
        """Advance ``state`` to load ``level``; returns ``(new_state, stagger_iterations)``."""
        u = state.u.copy()
        u[self.fixed_dofs] = self.prescribed(level)
        d = state.d.copy()
        self.disp.f_ext = level * self._f_unit
        self.damage.f = self.toughness_factor(state.alpha_bar)
        self.damage.lower = state.d if self.irreversibility == "penalty" else None
        H_old = state.H.reshape(self.disc.n_el, 4)
        tol = self.stagger.tol_stag
        floor = self.newton.abs_floor
        try:
            for k in range(1, self.stagger.max_stag_iters + 1):
                self.disp.set_damage(d)
                ru = fem.newton(self.disp.residual, self.disp.tangent, u, self.disp.free, self.newton)
                u = ru.x
                psi = self.disp.psi_plus(u)
                H = np.maximum(H_old, psi) if self.irreversibility == "history" else psi
                self.damage.H = H
                r_u = ru.initial_residual / max(ru.scale0, STAGGER_SCALE_FLOOR * self.scale_ref_u, floor)
                # nodes at the upper bound that are pushed further up stay fixed
                R0, _ = self.damage.residual(d)
                free = ~((d >= 1.0) & (R0 < 0.0))
                rd = fem.newton(self.damage.residual, self._damage_tangent(free), d, free, self.newton)
                d = np.minimum(rd.x, 1.0)
                r_d = rd.initial_residual / max(rd.scale0, floor)
                if r_u <= tol and r_d <= tol:
                    break
            else:
                raise CycleFailure(f"staggered scheme did not converge at step {step}", step, max(r_u, r_d))
        except fem.NonConvergence as exc:
            raise CycleFailure(f"step {step}: {exc}", step, exc.residual) from exc

        H_new = H.ravel() if self.irreversibility == "history" else state.H
        alpha_new = self.local_alpha(u, d)
        if freeze_alpha:
            alpha_bar = state.alpha_bar
        else:
            alpha_bar = state.alpha_bar + np.maximum(alpha_new - state.alpha_prev, 0.0)
        new = SystemState(u, d, np.array(H_new, copy=True), alpha_bar.copy(), alpha_new, state.N)
        return new, k

    def solve_cycle(self, state: SystemState, program: LoadProgram = None, freeze_alpha: bool = False):
        """Resolve one full load cycle; returns ``(new_state, CycleRecord)``.

        Raises :class:`CycleFailure` when a step does not converge.
        """
        program = program or self.program
        t0 = time.perf_counter()
        iters = 0
        cur = state
        for i, level in enumerate(discretize_cycle(program)):
            cur, k = self.solve_step(cur, float(level), freeze_alpha, i)
            iters += k
        cur.N = state.N + 1
        rec = self.record(cur, iters, time.perf_counter() - t0, trial=freeze_alpha)
        return cur, rec

    def solve_trial_cycle(self, state: SystemState, program: LoadProgram = None):
        """Resolve a cycle with ``alpha_bar`` frozen at its (extrapolated) value."""
        return self.solve_cycle(state, program, freeze_alpha=True)

    # -- monitors ------------------------------------------------------
    def crack_lengths(self, d):
        """``(raw, corrected, corrected before clamping)``; zeros without a monitor config."""
        if self.smeared is None:
            return 0.0, 0.0, 0.0
        D_full, D_rel = smeared_integrals(d, self.disc, self.smeared.d_rel)
        res = _invert(D_full, D_rel, self.smeared)
        return res.raw, res.corrected, res.corrected_signed

    def record(self, state: SystemState, iters=0, wall=0.0, trial=False) -> CycleRecord:
        raw, cor, signed = self.crack_lengths(state.d)
        a_int = a_dis = float("nan")
        if self.path is not None:
            a_int = self.path.tip(state.d).position
            a_dis = discrete_crack_length(state.d, self.mesh.nodes, origin=self._path_origin,
                                          direction=self._path_dir)
        return CycleRecord(int(state.N), float(state.alpha_bar.max(initial=0.0)), float(state.d.max(initial=0.0)),
                           float(cor), int(iters), float(wall), trial, float(raw), float(a_int), float(a_dis),
                           float(signed))

    def is_failed(self, record: CycleRecord) -> bool:
        a_fail = self.failure.a_fail
        return a_fail is not None and record.a_smeared >= a_fail

"""One-dimensional damage profiles and the pull-strip calibration harness.

The 1D bar under a stress ``sigma = rho * sigma_cr`` admits localized damage
profiles that solve a second-order ODE in the dimensionless coordinate
``zeta = x / ell``. Taking the pointwise maximum over a decreasing stress
history gives the profile an irreversible crack actually leaves behind; its
area exceeds that of the optimal profile, which motivates integrating only
``d >= d_rel`` when measuring crack length.

:func:`calibrate_corrections` runs monotonic pull-strip simulations and fits
the tip and extension correction factors of the smeared crack length.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .crack import CorrectionTable, PathSampler, default_d_rel, optimal_profile, relevant_constants
from .model import AT1, AT2, FatigueParams, Material

RTOL = 1e-10
ATOL = 1e-12
AT2_SEED_SLOPE = 1e-12
SUPPORT_TOL = 1e-8


class ProfileError(RuntimeError):
    """No localized solution could be integrated."""


@dataclass(frozen=True)
class HomogeneousSolution:
    d_hom: float
    sigma_cr: float


@dataclass
class ProfileSolution:
    """Half profile on ``[0, zeta_s]`` with the maximum at ``zeta = 0``."""

    rho: float
    zeta_grid: np.ndarray
    d_values: np.ndarray
    zeta_s: float
    d_outer: float = 0.0
    slope: np.ndarray = None

    def __call__(self, zeta):
        """Damage at ``|zeta|``; the outer value beyond ``zeta_s``."""
        z = np.abs(np.asarray(zeta, dtype=float))
        if self.zeta_s <= 0:
            return np.full_like(z, self.d_outer)
        return np.where(z <= self.zeta_s, np.interp(z, self.zeta_grid, self.d_values), self.d_outer)


def homogeneous_solution(model: str, material: Material = None) -> HomogeneousSolution:
    """Damage at the end of the stable homogeneous branch and the peak stress."""
    if model not in (AT1, AT2):
        raise ValueError(f"unknown model {model!r}")
    d_hom = 0.0 if model == AT1 else 0.25
    if material is None:
        return HomogeneousSolution(d_hom, float("nan"))
    E, Gc, ell = material.E, material.Gc, material.ell
    if model == AT1:
        sigma = math.sqrt(3.0 * E * Gc / (8.0 * ell))
    else:
        sigma = 3.0 / 16.0 * math.sqrt(3.0 * E * Gc / ell)
    return HomogeneousSolution(d_hom, sigma)


def homogeneous_damage(model: str, rho: float) -> float:
    """Homogeneous damage at normalized stress ``rho`` on the stable branch."""
    if model == AT1 or rho <= 0:
        return 0.0
    if rho >= 1.0:
        return 0.25
    target = 27.0 * rho * rho / 256.0
    return brentq(lambda d: d * (1.0 - d) ** 3 - target, 0.0, 0.25, xtol=1e-15, rtol=1e-15)


def _rhs(model, rho):
    r2 = rho * rho
    if model == AT1:
        return lambda z, y: [y[1], 0.5 * (1.0 - r2 / (1.0 - y[0]) ** 3)]
    return lambda z, y: [y[1], y[0] - 27.0 * r2 / (256.0 * (1.0 - y[0]) ** 3)]


def first_integral(model: str, rho: float, d, dp):
    """Conserved quantity of the profile ODE; zero on a solution starting at rest."""
    d = np.asarray(d, dtype=float)
    dp = np.asarray(dp, dtype=float)
    r2 = rho * rho
    if model == AT1:
        return dp * dp - d + 0.5 * r2 * ((1.0 - d) ** -2 - 1.0)
    d0 = homogeneous_damage(AT2, rho)
    pot = lambda x: 0.5 * x * x - 27.0 * r2 / (512.0 * (1.0 - x) ** 2)
    return 0.5 * dp * dp - (pot(d) - pot(d0))


def localized_profile(model: str, rho: float, d_start: float = None, zeta_max: float = 60.0) -> ProfileSolution:
    """Localized damage profile at normalized stress ``rho``.

    The ODE is integrated from the outer edge of the localization zone,
    where ``d`` sits on the homogeneous branch at rest, inwards until the
    slope returns to zero; that point is the profile centre. The result is
    stored with the centre at ``zeta = 0``.

    Parameters
    ----------
    model : {"AT1", "AT2"}
    rho : float
        Normalized stress in ``(0, 1]``.
    d_start : float, optional
        Outer damage value; defaults to the homogeneous damage at ``rho``.
    """
    if not 0.0 < rho <= 1.0:
        raise ValueError(f"rho must lie in (0, 1], got {rho}")
    d0 = homogeneous_damage(model, rho) if d_start is None else float(d_start)
    if d0 < homogeneous_damage(model, rho) - 1e-12:
        raise ValueError("d_start lies below the homogeneous damage")
    if rho == 1.0:
        # onset: localized and homogeneous branches coincide
        return ProfileSolution(rho, np.array([0.0]), np.array([d0]), 0.0, d0, np.zeros(1))
    slope0 = 0.0 if model == AT1 else AT2_SEED_SLOPE

    def peak(z, y):
        return y[1]
    peak.terminal = True
    peak.direction = -1

    def broken(z, y):
        return 1.0 - 1e-9 - y[0]
    broken.terminal = True

    sol = solve_ivp(_rhs(model, rho), (0.0, zeta_max), [d0, slope0], method="RK45", rtol=RTOL, atol=ATOL,
                    events=(peak, broken), dense_output=True)
    if sol.status != 1 or len(sol.t_events[0]) == 0:
        raise ProfileError(f"no localized profile for rho={rho} within zeta <= {zeta_max}")
    z_end = float(sol.t_events[0][0])
    z_start = 0.0
    if model == AT2:
        # drop the seeded start where d has not yet left the homogeneous state
        zz = np.linspace(0.0, z_end, 20001)
        off = np.nonzero(sol.sol(zz)[0] - d0 >= SUPPORT_TOL)[0]
        z_start = zz[max(off[0] - 1, 0)] if len(off) else 0.0
    zs = z_end - z_start
    z = np.linspace(z_start, z_end, 801)
    y = sol.sol(z)
    d = np.minimum(y[0], 1.0)
    return ProfileSolution(rho, z_end - z[::-1], d[::-1].copy(), zs, d0, -y[1][::-1].copy())


def criterion_residual(model: str, prof: ProfileSolution) -> float:
    """Largest violation of the first integral along a computed profile."""
    if prof.zeta_s == 0:
        return 0.0
    return float(np.max(np.abs(first_integral(model, prof.rho, prof.d_values, prof.slope))))


def default_rho_grid(n: int = 200) -> np.ndarray:
    """Decreasing normalized stresses, log-spaced in ``[1e-3, 1]``."""
    return np.logspace(0.0, -3.0, n)


@dataclass
class Envelope:
    zeta: np.ndarray
    d_env: np.ndarray
    d_opt: np.ndarray
    area_env: float
    area_opt: float

    @property
    def deviation(self) -> float:
        return self.area_env / self.area_opt - 1.0


def irreversible_envelope(model: str, rho_grid=None, n_points: int = 4001):
    """Pointwise maximum of the profiles along a decreasing stress history.

    Returns ``(Envelope, area_deviation)``. Areas are taken over the widest
    localization zone of the history, with the optimal profile as reference.
    """
    rho_grid = default_rho_grid() if rho_grid is None else np.asarray(rho_grid, dtype=float)
    profiles = [localized_profile(model, r) for r in rho_grid if r < 1.0]
    if not profiles:
        raise ProfileError("the stress grid contains no value below 1")
    z_max = max(p.zeta_s for p in profiles)
    zeta = np.linspace(0.0, z_max, n_points)
    env = np.zeros_like(zeta)
    for p in profiles:
        env = np.maximum(env, p(zeta))
    opt = optimal_profile(model, zeta, 1.0)
    a_env = 2.0 * np.trapezoid(env, zeta)
    a_opt = 2.0 * np.trapezoid(opt, zeta)
    e = Envelope(zeta, env, opt, a_env, a_opt)
    return e, e.deviation


# ----------------------------------------------------------------------
# Correction factor calibration
# ----------------------------------------------------------------------
@dataclass
class CalibrationCell:
    model: str
    ell: float
    ell_over_h: float
    c_tip: float = float("nan")
    c_ext: float = float("nan")
    ok: bool = False
    message: str = ""
    history: list = field(default_factory=list)     # (level, tip, D_rel in subdomain)


@dataclass
class CalibrationSettings:
    width: float = 1.0
    height: float = 1.0               # arms must be tall against ell, see calibrate_cell
    E: float = 210.0
    nu: float = 0.3
    Gc: float = 0.0027
    band_half_width: float = 5.0      # in units of ell
    h_outer: float = 0.05
    step_growth: float = 1.02
    max_steps: int = 400
    max_stag_iters: int = 1000
    tol_ir: float = 1e-6
    seed_gap: float = 3.0             # seed crack stops this many ell before x = W/5


def _pull_strip_simulation(model, ell, ell_over_h, cs: CalibrationSettings):
    from . import cycle, fem, mesh
    h = ell / ell_over_h
    pre = mesh.pull_strip(cs.width, cs.height, max(cs.h_outer, h), h, cs.band_half_width * ell)
    m = mesh.generate_mesh(pre)
    mat = Material(cs.E, cs.nu, cs.Gc, ell, dissipation=model)
    bcs = cycle.BoundaryConditions([
        cycle.Constraint("left", 0),
        cycle.Constraint("right_mid", 1),
        cycle.Constraint("left_upper", 1, 1.0, follows_load=True),
        cycle.Constraint("left_lower", 1, -1.0, follows_load=True),
    ])
    prog = cycle.LoadProgram("displacement", 0.0, 1.0, 1, 1)
    mid = 0.5 * cs.height
    # a straight seed keeps the clamped corners of the pulled edge from breaking first
    seed = cs.width / 5.0 - cs.seed_gap * ell
    initial = [[0.0, mid], [seed, mid]] if seed > 0 else None
    sim = cycle.Simulation(m, mat, FatigueParams(1e300), bcs, prog,
                           stagger=cycle.StaggerSettings(1e-4, cs.max_stag_iters),
                           irreversibility="penalty", tol_ir=cs.tol_ir, initial_crack=initial)
    path = np.array([[0.0, mid], [cs.width, mid]])
    return sim, PathSampler(sim.disc, path, spacing=h / 8.0)


def _onset_level(sim, model, ell):
    """Opening at which the undamaged strip first reaches the damage threshold."""
    st = sim.initial_state()
    u = st.u.copy()
    u[sim.fixed_dofs] = sim.prescribed(1.0)
    from . import fem
    sim.disp.set_damage(st.d)
    res = fem.newton(sim.disp.residual, sim.disp.tangent, u, sim.disp.free, sim.newton)
    psi_max = float(sim.disp.psi_plus(res.x).max())
    mat = sim.material
    psi_c = 3.0 * mat.Gc / (16.0 * ell) if model == AT1 else mat.Gc / (4.0 * ell)
    return math.sqrt(psi_c / psi_max)


def calibrate_cell(model: str, ell: float, ell_over_h: float, cs: CalibrationSettings = None) -> CalibrationCell:
    """Run one monotonic pull-strip test and extract ``(c_tip, c_ext)``.

    Only damage in ``x > W/5`` counts. ``c_tip`` compares the relevant damage
    integral with the tip constant when the interpolated tip enters that
    subdomain; ``c_ext`` is the least-squares slope of the integral against
    tip advance up to ``x = W/2``, relative to the extension constant.

    The pulled edge clamps both arms, so a short crack loads the clamped
    corners as much as its own tip. A seed crack up to ``W/5 - seed_gap ell``
    and arms of at least ~10 ell keep the crack running along the mid-plane.
    """
    cs = cs or CalibrationSettings()
    cell = CalibrationCell(model, ell, ell_over_h)
    sim, sampler = _pull_strip_simulation(model, ell, ell_over_h, cs)
    x_in, x_out = cs.width / 5.0, cs.width / 2.0
    # L1 form of the relevant damage integral: the band is uniform, so each
    # node carries the area h^2
    in_sub = sim.mesh.nodes[:, 0] > x_in
    h = ell / ell_over_h
    d_rel = default_d_rel(model)
    level = 0.9 * _onset_level(sim, model, ell)
    state = sim.initial_state()
    from .cycle import CycleFailure
    for _ in range(cs.max_steps):
        try:
            state, _ = sim.solve_step(state, level)
        except CycleFailure as exc:
            cell.message = f"step failed at opening {level:.4g}: {exc}"
            return cell
        tip = sampler.tip(state.d)
        D_rel = h * h * float(np.sum(state.d[in_sub & (state.d >= d_rel)]))
        cell.history.append((level, tip.position if tip.measurable else 0.0, D_rel))
        if tip.measurable and tip.position > x_out:
            break
        level *= cs.step_growth
    else:
        cell.message = "crack did not reach the end of the window"
        return cell

    hist = np.array(cell.history)
    tips, D = hist[:, 1], hist[:, 2]
    if np.any(np.diff(tips) < -1e-9):
        cell.message = "interpolated tip is not monotone"
        return cell
    ext_r, tip_r = relevant_constants(model, ell)
    k = int(np.searchsorted(tips, x_in))
    if k == 0 or k >= len(tips):
        cell.message = "tip never crossed into the subdomain"
        return cell
    t = (x_in - tips[k - 1]) / (tips[k] - tips[k - 1])
    D_in = D[k - 1] + t * (D[k] - D[k - 1])
    cell.c_tip = D_in / tip_r
    win = (tips >= x_in) & (tips <= x_out)
    a = np.concatenate([[0.0], tips[win] - x_in])
    Dw = np.concatenate([[D_in], D[win]])
    da, dD = a - a[0], Dw - Dw[0]
    if np.sum(da * da) <= 0:
        cell.message = "no growth inside the window"
        return cell
    cell.c_ext = float(np.sum(dD * da) / (ext_r * np.sum(da * da)))
    cell.ok = True
    return cell


def calibrate_corrections(model: str, ell_grid, ell_over_h_grid, settings: CalibrationSettings = None):
    """Correction factors averaged over ``ell_grid`` for each ``ell/h``.

    Returns ``(CorrectionTable, cells)``; failed cells are skipped in the
    average and keep their diagnostic message.
    """
    entries = {}
    cells = []
    for r in ell_over_h_grid:
        ok = []
        for ell in ell_grid:
            c = calibrate_cell(model, ell, r, settings)
            cells.append(c)
            if c.ok:
                ok.append((c.c_tip, c.c_ext))
        if ok:
            arr = np.array(ok)
            entries[(model, int(round(r)))] = (float(arr[:, 0].mean()), float(arr[:, 1].mean()))
    return CorrectionTable(entries), cells


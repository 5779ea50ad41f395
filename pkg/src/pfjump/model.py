"""Constitutive pieces of the phase-field fatigue model.

Everything here is a pure function of its inputs and works on numpy arrays
so the FE layer can evaluate all quadrature points in one call.

Strains and stresses use Voigt ordering ``[xx, yy, xy]``; strains carry the
engineering shear ``gamma_xy = 2 eps_xy``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

G0_DEFAULT = 1e-6
_D_TOL = 1e-9          # allowed overshoot of d outside [0, 1] before erroring
_EIG_TOL = 1e-12       # relative gap below which principal strains are coincident

AT1 = "AT1"
AT2 = "AT2"


# ----------------------------------------------------------------------
# Parameter containers
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class Material:
    """Elastic and fracture parameters.

    Parameters
    ----------
    E, nu : float
        Young's modulus (MPa) and Poisson ratio.
    Gc : float
        Critical energy release rate (MPa mm).
    ell : float
        Regularization length (mm).
    g0 : float
        Residual stiffness in the degradation function.
    dissipation : {"AT1", "AT2"}
    split : {"none", "spectral"}
    plane : {"strain", "stress"}
    """

    E: float
    nu: float
    Gc: float
    ell: float
    g0: float = G0_DEFAULT
    dissipation: str = AT1
    split: str = "none"
    plane: str = "strain"

    def __post_init__(self):
        if not self.E > 0:
            raise ValueError(f"E must be positive, got {self.E}")
        if not -1.0 < self.nu < 0.5:
            raise ValueError(f"nu must lie in (-1, 0.5), got {self.nu}")
        if not self.Gc > 0:
            raise ValueError(f"Gc must be positive, got {self.Gc}")
        if not self.ell > 0:
            raise ValueError(f"ell must be positive, got {self.ell}")
        if not 0 < self.g0 < 1e-2:
            raise ValueError(f"g0 must be small and positive, got {self.g0}")
        if self.dissipation not in (AT1, AT2):
            raise ValueError(f"unknown dissipation {self.dissipation!r}")
        if self.split not in ("none", "spectral"):
            raise ValueError(f"unknown split {self.split!r}")
        if self.plane not in ("strain", "stress"):
            raise ValueError(f"unknown plane condition {self.plane!r}")

    @property
    def c_w(self) -> float:
        return 8.0 / 3.0 if self.dissipation == AT1 else 2.0

    @property
    def mu(self) -> float:
        return self.E / (2.0 * (1.0 + self.nu))

    @property
    def lam(self) -> float:
        """First Lame constant of the in-plane problem."""
        E, nu = self.E, self.nu
        if self.plane == "stress":
            return E * nu / (1.0 - nu * nu)
        return E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))

    def hooke(self) -> np.ndarray:
        """3x3 in-plane elasticity matrix (Voigt, engineering shear)."""
        lam, mu = self.lam, self.mu
        return np.array([[lam + 2 * mu, lam, 0.0],
                         [lam, lam + 2 * mu, 0.0],
                         [0.0, 0.0, mu]])

    def with_(self, **kw) -> "Material":
        return replace(self, **kw)


@dataclass(frozen=True)
class FatigueParams:
    """Threshold and exponent of the fatigue degradation function."""

    alpha_th: float
    p_exp: float = 2.0

    def __post_init__(self):
        if not self.alpha_th > 0:
            raise ValueError(f"alpha_th must be positive, got {self.alpha_th}")
        if not self.p_exp > 0:
            raise ValueError(f"p_exp must be positive, got {self.p_exp}")


# ----------------------------------------------------------------------
# Degradation and dissipation
# ----------------------------------------------------------------------
def _check_damage(d):
    d = np.asarray(d, dtype=float)
    if np.any(d < -_D_TOL) or np.any(d > 1.0 + _D_TOL):
        bad = d[(d < -_D_TOL) | (d > 1.0 + _D_TOL)]
        raise ValueError(f"damage outside [0, 1]: {bad.ravel()[:3]}")
    return np.clip(d, 0.0, 1.0)


def degradation(d, g0: float = G0_DEFAULT):
    """Return ``(g, dg/dd)`` with ``g = (1-d)^2 + g0``."""
    d = _check_damage(d)
    one_m = 1.0 - d
    return one_m * one_m + g0, -2.0 * one_m


def dissipation(d, model: str):
    """Return ``(w, dw/dd, c_w)`` for the AT1 or AT2 local dissipation."""
    d = _check_damage(d)
    if model == AT1:
        return d, np.ones_like(d), 8.0 / 3.0
    if model == AT2:
        return d * d, 2.0 * d, 2.0
    raise ValueError(f"unknown dissipation {model!r}")


# ----------------------------------------------------------------------
# Energy split
# ----------------------------------------------------------------------
class SplitResult(NamedTuple):
    psi_plus: np.ndarray
    psi_minus: np.ndarray
    stress: np.ndarray      # g * dpsi+/deps + dpsi-/deps, shape (..., 3)
    tangent: np.ndarray     # matching (..., 3, 3) tangent


def _outer(a, b):
    return a[..., :, None] * b[..., None, :]


def spectral_parts(strain, lam: float, mu: float):
    """Positive and negative parts of the spectral (Miehe) split.

    Returns ``(psi_plus, psi_minus, sig_plus, sig_minus, C_plus, C_minus)``
    where stresses are Voigt vectors and tangents act on engineering strain.
    """
    eps = np.asarray(strain, dtype=float)
    exx, eyy, exy = eps[..., 0], eps[..., 1], 0.5 * eps[..., 2]
    m = 0.5 * (exx + eyy)
    r = np.hypot(0.5 * (exx - eyy), exy)
    e1, e2 = m + r, m - r
    theta = 0.5 * np.arctan2(2.0 * exy, exx - eyy)
    c, s = np.cos(theta), np.sin(theta)
    zero = np.zeros_like(c)
    M1 = np.stack([c * c, s * s, c * s], axis=-1)
    M2 = np.stack([s * s, c * c, -c * s], axis=-1)
    S12 = np.stack([-c * s, c * s, 0.5 * (c * c - s * s)], axis=-1)
    ident = np.stack([np.ones_like(c), np.ones_like(c), zero], axis=-1)

    tr = exx + eyy
    trp = np.maximum(tr, 0.0)
    e1p, e2p = np.maximum(e1, 0.0), np.maximum(e2, 0.0)
    h_tr = (tr > 0).astype(float)
    h1, h2 = (e1 > 0).astype(float), (e2 > 0).astype(float)

    psi = 0.5 * lam * tr * tr + mu * (e1 * e1 + e2 * e2)
    psi_p = 0.5 * lam * trp * trp + mu * (e1p * e1p + e2p * e2p)
    psi_m = psi - psi_p

    eps_p = e1p[..., None] * M1 + e2p[..., None] * M2   # tensor components
    sig_p = lam * trp[..., None] * ident + 2.0 * mu * eps_p
    eps_t = np.stack([exx, eyy, exy], axis=-1)
    sig_t = lam * tr[..., None] * ident + 2.0 * mu * eps_t
    sig_m = sig_t - sig_p

    gap = e1 - e2
    coincident = gap <= _EIG_TOL * np.maximum(np.abs(m) + r, np.finfo(float).tiny)
    safe_gap = np.where(coincident, 1.0, gap)
    ratio = np.where(coincident, 0.5 * (h1 + h2), (e1p - e2p) / safe_gap)

    P_plus = (h1[..., None, None] * _outer(M1, M1)
              + h2[..., None, None] * _outer(M2, M2)
              + 2.0 * ratio[..., None, None] * _outer(S12, S12))
    P_full = np.diag([1.0, 1.0, 0.5])
    II = np.outer([1.0, 1.0, 0.0], [1.0, 1.0, 0.0])
    C_p = lam * h_tr[..., None, None] * II + 2.0 * mu * P_plus
    C_full = lam * II + 2.0 * mu * P_full
    C_m = C_full - C_p
    return psi_p, psi_m, sig_p, sig_m, C_p, C_m


def split_energy(strain, material: Material, g=1.0) -> SplitResult:
    """Split the elastic energy density and return degraded stress/tangent.

    Parameters
    ----------
    strain : array_like, shape (..., 3)
        Voigt strain ``[eps_xx, eps_yy, gamma_xy]``.
    material : Material
    g : float or array_like
        Degradation value applied to the active part.
    """
    eps = np.asarray(strain, dtype=float)
    g = np.asarray(g, dtype=float)
    if material.split == "spectral":
        psi_p, psi_m, sig_p, sig_m, C_p, C_m = spectral_parts(eps, material.lam, material.mu)
        stress = g[..., None] * sig_p + sig_m
        tangent = g[..., None, None] * C_p + C_m
        return SplitResult(psi_p, psi_m, stress, tangent)
    D = material.hooke()
    sig = eps @ D.T
    psi = 0.5 * np.sum(sig * eps, axis=-1)
    tangent = np.broadcast_to(D, eps.shape[:-1] + (3, 3)) * g[..., None, None]
    return SplitResult(psi, np.zeros_like(psi), g[..., None] * sig, tangent)


# ----------------------------------------------------------------------
# Fatigue and irreversibility
# ----------------------------------------------------------------------
def fatigue_degradation(alpha_bar, params: FatigueParams):
    """Toughness multiplier f(alpha_bar) in (0, 1]."""
    a = np.asarray(alpha_bar, dtype=float)
    th = params.alpha_th
    above = 1.0 - (a - th) / (a + th)
    return np.where(a > th, np.maximum(above, 0.0) ** params.p_exp, 1.0)


@dataclass
class FatigueField:
    """Accumulated fatigue variable and the last local value it saw."""

    alpha_bar: np.ndarray
    alpha_prev: np.ndarray = field(default=None)

    def __post_init__(self):
        self.alpha_bar = np.asarray(self.alpha_bar, dtype=float)
        if self.alpha_prev is None:
            self.alpha_prev = np.zeros_like(self.alpha_bar)
        else:
            self.alpha_prev = np.asarray(self.alpha_prev, dtype=float)

    @classmethod
    def zeros(cls, n: int) -> "FatigueField":
        return cls(np.zeros(n), np.zeros(n))


def accumulate_fatigue(fld: FatigueField, alpha_new) -> FatigueField:
    """Add positive increments of the local variable to ``alpha_bar``."""
    alpha_new = np.asarray(alpha_new, dtype=float)
    inc = np.maximum(alpha_new - fld.alpha_prev, 0.0)
    return FatigueField(fld.alpha_bar + inc, alpha_new.copy())


def update_history(H, psi_plus):
    """Running maximum of the active energy."""
    return np.maximum(H, psi_plus)


def penalty_stiffness(material: Material, tol_ir: float) -> float:
    """Penalty parameter for a bound violation of at most ``tol_ir``.

    AT1 uses ``Gc/ell * 27/(64 tol^2)``, AT2 ``Gc/ell * (1/tol^2 - 1)``.
    """
    base = material.Gc / material.ell
    if material.dissipation == AT1:
        return base * 27.0 / (64.0 * tol_ir ** 2)
    return base * (1.0 / tol_ir ** 2 - 1.0)

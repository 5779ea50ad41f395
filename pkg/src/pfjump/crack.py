"""Crack length measures computed from a nodal damage field.

Three measures are provided:

* discrete: furthest node above a threshold, projected on a direction;
* interpolated: threshold crossing of the shape-function interpolant along a
  known crack path;
* smeared: the damage integral divided by the integral of the optimal
  profile per unit crack length, with a tip contribution removed.

The smeared measure comes in a raw form (full profile constants) and a
corrected form that only integrates ``d >= d_rel`` and applies empirical
factors ``c_tip``/``c_ext`` for discretization effects.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.spatial import cKDTree

from .fem import Discretization, shape_functions
from .model import AT1, AT2

D_TH = 0.95

# (c_tip, c_ext) keyed by (model, ell/h)
DEFAULT_CORRECTIONS = {
    (AT1, 2): (3.171, 1.582), (AT1, 3): (2.244, 1.390), (AT1, 4): (1.846, 1.302),
    (AT1, 5): (1.680, 1.249), (AT1, 6): (1.539, 1.211), (AT1, 7): (1.468, 1.187),
    (AT1, 8): (1.416, 1.171),
    (AT2, 2): (3.931, 1.604), (AT2, 3): (2.875, 1.411), (AT2, 4): (2.410, 1.323),
    (AT2, 5): (2.136, 1.271), (AT2, 6): (2.014, 1.228), (AT2, 7): (1.893, 1.204),
    (AT2, 8): (1.812, 1.185),
}


def default_d_rel(model: str) -> float:
    return 0.25 if model == AT1 else math.exp(-1.0)


def full_constants(model: str, ell: float):
    """``(D_ext per unit length, D_tip)`` of the complete optimal profile."""
    if model == AT1:
        return 4.0 / 3.0 * ell, math.pi / 3.0 * ell ** 2
    if model == AT2:
        return 2.0 * ell, math.pi * ell ** 2
    raise ValueError(f"unknown model {model!r}")


def relevant_constants(model: str, ell: float):
    """Same as :func:`full_constants` but for the part of the profile above ``d_rel``."""
    if model == AT1:
        return 7.0 / 6.0 * ell, 11.0 / 48.0 * math.pi * ell ** 2
    if model == AT2:
        e1 = math.exp(-1.0)
        return 2.0 * ell * (1.0 - e1), math.pi * ell ** 2 * (1.0 - 2.0 * e1)
    raise ValueError(f"unknown model {model!r}")


def optimal_profile(model: str, dist, ell: float):
    """Optimal 1D damage profile as a function of distance to the crack."""
    r = np.abs(np.asarray(dist, dtype=float)) / ell
    if model == AT1:
        return np.clip(1.0 - 0.5 * r, 0.0, None) ** 2
    return np.exp(-r)


# ----------------------------------------------------------------------
# Correction factors
# ----------------------------------------------------------------------
@dataclass
class CorrectionTable:
    entries: dict

    @classmethod
    def default(cls) -> "CorrectionTable":
        return cls(dict(DEFAULT_CORRECTIONS))

    def lookup(self, model: str, ell_over_h: float):
        keys = sorted(k for m, k in self.entries if m == model)
        if not keys:
            raise KeyError(f"no correction factors for {model}")
        k = int(math.floor(ell_over_h + 0.5))
        k = min(max(k, keys[0]), keys[-1])
        if (model, k) not in self.entries:
            k = min(keys, key=lambda v: abs(v - ell_over_h))
        return self.entries[(model, k)]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["model", "ell_over_h", "c_tip", "c_ext"])
            for (m, k), (ct, ce) in sorted(self.entries.items()):
                w.writerow([m, k, repr(float(ct)), repr(float(ce))])

    @classmethod
    def read_csv(cls, path) -> "CorrectionTable":
        entries = {}
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                entries[(row["model"], int(float(row["ell_over_h"])))] = (float(row["c_tip"]), float(row["c_ext"]))
        return cls(entries)


@dataclass
class SmearedConfig:
    model: str
    ell: float
    k_tips: int = 1
    c_tip: float = 1.0
    c_ext: float = 1.0
    d_rel: float = None
    use_l1: bool = False

    def __post_init__(self):
        if self.d_rel is None:
            self.d_rel = default_d_rel(self.model)
        if self.k_tips < 0:
            raise ValueError("k_tips must be non-negative")
        if not (self.c_tip > 0 and self.c_ext > 0):
            raise ValueError("correction factors must be positive")

    @classmethod
    def from_table(cls, model, ell, ell_over_h, k_tips=1, table=None, **kw):
        table = table or CorrectionTable.default()
        c_tip, c_ext = table.lookup(model, ell_over_h)
        return cls(model, ell, k_tips, c_tip, c_ext, **kw)


class SmearedLength(NamedTuple):
    raw: float
    corrected: float
    raw_clamped: bool
    corrected_clamped: bool
    corrected_signed: float = float("nan")   # before clamping at zero


def _invert(D_full, D_rel, cfg: SmearedConfig) -> SmearedLength:
    ext, tip = full_constants(cfg.model, cfg.ell)
    ext_r, tip_r = relevant_constants(cfg.model, cfg.ell)
    raw = (D_full - cfg.k_tips * tip) / ext
    cor = (D_rel - cfg.k_tips * cfg.c_tip * tip_r) / (cfg.c_ext * ext_r)
    return SmearedLength(max(raw, 0.0), max(cor, 0.0), raw < 0, cor < 0, cor)


def smeared_integrals(d, disc: Discretization, d_rel: float, region=None):
    """Gauss-quadrature integrals of ``d`` over the region and over ``d >= d_rel``."""
    dq = disc.interpolate(d)
    w = disc.wdet
    if region is not None:
        w = w * np.asarray(region, dtype=float)[:, None]
    return float(np.sum(dq * w)), float(np.sum(np.where(dq >= d_rel, dq, 0.0) * w))


def smeared_crack_length(d, disc, cfg: SmearedConfig, region=None) -> SmearedLength:
    """Raw and corrected smeared crack length.

    Parameters
    ----------
    d : ndarray
        Nodal damage.
    disc : Discretization or Mesh
    cfg : SmearedConfig
    region : ndarray of bool, optional
        Element mask restricting the integral to a subdomain.
    """
    if not isinstance(disc, Discretization):
        disc = Discretization(disc)
    if cfg.use_l1:
        return l1_from_mesh(d, disc, cfg, region)[0]
    D_full, D_rel = smeared_integrals(d, disc, cfg.d_rel, region)
    return _invert(D_full, D_rel, cfg)


def smeared_via_l1(d, J: float, w: float, cfg: SmearedConfig) -> SmearedLength:
    """Smeared length with the integral replaced by ``J * w * |d|_1``."""
    d = np.asarray(d, dtype=float)
    D_full = J * w * float(np.sum(np.abs(d)))
    D_rel = J * w * float(np.sum(np.where(d >= cfg.d_rel, d, 0.0)))
    return _invert(D_full, D_rel, cfg)


def l1_from_mesh(d, disc: Discretization, cfg: SmearedConfig, region=None):
    """L1 shortcut with ``J`` read from the mesh.

    Returns ``(SmearedLength, uniform)``; ``uniform`` is False when the
    elements touching the damage support do not share one Jacobian.
    """
    d = np.asarray(d, dtype=float)
    el = d[disc.d_dofs]
    support = np.any(el > 0, axis=1)
    if region is not None:
        region = np.asarray(region, bool)
        support &= region
        keep_nodes = np.zeros(disc.n_nodes, bool)
        keep_nodes[disc.d_dofs[region]] = True
        d = np.where(keep_nodes, d, 0.0)
    if not support.any():
        return smeared_via_l1(np.zeros(1), 0.0, 4.0, cfg), True
    J = disc.detJ[support]
    uniform = bool(np.ptp(J) <= 1e-9 * J.max())
    return smeared_via_l1(d, float(np.median(J)), 4.0, cfg), uniform


# ----------------------------------------------------------------------
# Discrete and interpolated tracking
# ----------------------------------------------------------------------
def discrete_crack_length(d, nodes, d_th=D_TH, origin=(0.0, 0.0), direction=(1.0, 0.0)) -> float:
    """Largest projection of a broken node (``d >= d_th``) onto ``direction``."""
    d = np.asarray(d)
    broken = d >= d_th
    if not broken.any():
        return 0.0
    proj = (np.asarray(nodes)[broken] - np.asarray(origin)) @ np.asarray(direction, dtype=float)
    return float(max(proj.max(), 0.0))


def locate_points(disc: Discretization, points, candidates=8):
    """Element index and local coordinates of each point (``-1`` if outside)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    X = disc.mesh.nodes[disc.mesh.elements]
    tree = cKDTree(X.mean(axis=1))
    k = min(candidates, disc.n_el)
    _, cand = tree.query(pts, k=k)
    cand = cand.reshape(len(pts), k)
    elem = -np.ones(len(pts), dtype=np.int64)
    loc = np.zeros((len(pts), 2))
    best = np.full(len(pts), np.inf)
    for j in range(k):
        e = cand[:, j]
        xe = X[e]
        xi = np.zeros((len(pts), 2))
        for _ in range(20):
            N, dN = shape_functions(xi[:, 0], xi[:, 1])
            r = np.einsum("pa,pai->pi", N, xe) - pts
            J = np.einsum("pai,paj->pij", dN, xe)    # d x_j / d xi_i
            step = np.linalg.solve(np.transpose(J, (0, 2, 1)), r[..., None])[..., 0]
            xi = np.clip(xi - step, -5.0, 5.0)
        excess = np.max(np.abs(xi), axis=1)
        better = (excess <= 1.0 + 1e-9) & (excess < best)
        elem[better] = e[better]
        loc[better] = np.clip(xi[better], -1.0, 1.0)
        best[better] = excess[better]
    return elem, loc


def sample_along_path(d, disc: Discretization, path, spacing=None):
    """Arc length and interpolated damage at points sampled along a polyline."""
    path = np.asarray(path, dtype=float)
    seg = np.diff(path, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    if spacing is None:
        spacing = float(np.min(disc.mesh.char_length_h)) / 8.0
    s_nodes = np.concatenate([[0.0], np.cumsum(seg_len)])
    n = max(2, int(np.ceil(s_nodes[-1] / spacing)) + 1)
    s = np.linspace(0.0, s_nodes[-1], n)
    pts = np.column_stack([np.interp(s, s_nodes, path[:, 0]), np.interp(s, s_nodes, path[:, 1])])
    elem, loc = locate_points(disc, pts)
    N, _ = shape_functions(loc[:, 0], loc[:, 1])
    vals = np.einsum("pa,pa->p", N, np.asarray(d)[disc.mesh.elements[np.maximum(elem, 0)]])
    vals[elem < 0] = np.nan
    return s, vals


class TipPosition(NamedTuple):
    position: float
    measurable: bool


def tip_from_samples(s, vals, d_th=D_TH) -> TipPosition:
    """First downward crossing of ``d_th`` starting from the path origin."""
    vals = np.asarray(vals)
    if not (np.isfinite(vals[0]) and vals[0] >= d_th):
        return TipPosition(float("nan"), False)
    below = np.nonzero(~(vals >= d_th))[0]
    if len(below) == 0:
        return TipPosition(float(s[-1]), True)
    i = below[0]
    if not np.isfinite(vals[i]):
        return TipPosition(float(s[i - 1]), True)
    t = (vals[i - 1] - d_th) / (vals[i - 1] - vals[i])
    return TipPosition(float(s[i - 1] + t * (s[i] - s[i - 1])), True)


def interpolated_crack_tip(d, disc, path, d_th=D_TH, spacing=None) -> TipPosition:
    """Arc-length position along ``path`` where the interpolated damage drops below ``d_th``."""
    if not isinstance(disc, Discretization):
        disc = Discretization(disc)
    s, vals = sample_along_path(d, disc, path, spacing)
    return tip_from_samples(s, vals, d_th)


class PathSampler:
    """Precomputed sampling of a fixed path, for repeated tip evaluations."""

    def __init__(self, disc: Discretization, path, spacing=None):
        path = np.asarray(path, dtype=float)
        seg = np.diff(path, axis=0)
        s_nodes = np.concatenate([[0.0], np.cumsum(np.hypot(seg[:, 0], seg[:, 1]))])
        if spacing is None:
            spacing = float(np.min(disc.mesh.char_length_h)) / 8.0
        n = max(2, int(np.ceil(s_nodes[-1] / spacing)) + 1)
        self.s = np.linspace(0.0, s_nodes[-1], n)
        pts = np.column_stack([np.interp(self.s, s_nodes, path[:, 0]), np.interp(self.s, s_nodes, path[:, 1])])
        elem, loc = locate_points(disc, pts)
        self.inside = elem >= 0
        self.N, _ = shape_functions(loc[:, 0], loc[:, 1])
        self.conn = disc.mesh.elements[np.maximum(elem, 0)]

    def values(self, d):
        v = np.einsum("pa,pa->p", self.N, np.asarray(d)[self.conn])
        v[~self.inside] = np.nan
        return v

    def tip(self, d, d_th=D_TH) -> TipPosition:
        return tip_from_samples(self.s, self.values(d), d_th)


# ----------------------------------------------------------------------
# Growth rates
# ----------------------------------------------------------------------
@dataclass
class CrackMeasure:
    N: int
    a_discrete: float
    a_interpolated: float
    a_smeared_raw: float
    a_smeared_corrected: float


def crack_growth_rate(records, da_eval: float):
    """Secant growth rates between crossings of an ``a`` grid of spacing ``da_eval``.

    ``records`` is a sequence of ``(N, a)`` pairs or objects with ``N`` and
    ``a_smeared`` attributes. Small decreases of ``a`` are ignored by using the
    running maximum. Returns a list of ``(a_mid, da/dN)``.
    """
    pairs = []
    for r in records:
        if isinstance(r, tuple) or isinstance(r, list):
            pairs.append((float(r[0]), float(r[1])))
        else:
            pairs.append((float(r.N), float(r.a_smeared)))
    if len(pairs) < 2:
        return []
    N = np.array([p[0] for p in pairs])
    a = np.maximum.accumulate(np.array([p[1] for p in pairs]))
    if a[-1] - a[0] < da_eval:
        return []
    levels = np.arange(math.ceil(a[0] / da_eval - 1e-12), math.floor(a[-1] / da_eval + 1e-12) + 1) * da_eval
    levels = levels[(levels >= a[0]) & (levels <= a[-1])]
    crossings = []
    for lv in levels:
        i = int(np.searchsorted(a, lv, side="left"))
        if i == 0:
            crossings.append(N[0])
            continue
        t = (lv - a[i - 1]) / (a[i] - a[i - 1])
        crossings.append(N[i - 1] + t * (N[i] - N[i - 1]))
    out = []
    for j in range(len(levels) - 1):
        dN = crossings[j + 1] - crossings[j]
        if dN > 0:
            out.append((0.5 * (levels[j] + levels[j + 1]), (levels[j + 1] - levels[j]) / dN))
    return out

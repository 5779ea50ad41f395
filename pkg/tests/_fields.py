"""Synthetic damage fields built from the closed-form optimal profiles."""
import numpy as np

from pfjump import fem
from pfjump import mesh as M
from pfjump.crack import optimal_profile


def segment_distance(points, p0, p1):
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    t = p1 - p0
    L2 = t @ t
    s = np.clip((points - p0) @ t / L2, 0.0, 1.0) if L2 > 0 else np.zeros(len(points))
    proj = p0 + s[:, None] * t
    return np.linalg.norm(points - proj, axis=1)


def crack_field(model, ell, a, k_tips, ell_over_h, margin=None):
    """Discretization and nodal field of a straight crack of length ``a``.

    ``k_tips = 0`` runs the crack through the whole width, 1 starts it at the
    left edge, 2 places it in the interior.
    """
    margin = margin if margin is not None else (2.5 * ell if model == "AT1" else 10.0 * ell)
    h = ell / ell_over_h
    height = 2 * margin
    if k_tips == 0:
        width, x0 = a, 0.0
    elif k_tips == 1:
        width, x0 = a + margin, 0.0
    else:
        width, x0 = a + 2 * margin, margin
    mesh = M.generate_mesh(M.rectangle(width, height, h))
    disc = fem.Discretization(mesh)
    p0 = np.array([x0 if k_tips else -1.0, margin])
    p1 = np.array([x0 + a if k_tips else width + 1.0, margin])
    if k_tips == 1:
        p0[0] = -1.0
    dist = segment_distance(mesh.nodes, p0, p1)
    return disc, optimal_profile(model, dist, ell)

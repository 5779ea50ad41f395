import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from pfjump import fem
from pfjump import mesh as M
from pfjump.model import Material, penalty_stiffness


def _mat(**kw):
    base = dict(E=210.0, nu=0.3, Gc=2.7, ell=0.1)
    base.update(kw)
    return Material(**base)


def _square(n=1, size=1.0):
    return fem.Discretization(M.generate_mesh(M.rectangle(size, size, size / n)))


# -- shape functions ---------------------------------------------------
def test_shape_functions_centroid_and_corner():
    N, dN = fem.shape_functions(0.0, 0.0)
    assert np.allclose(N, 0.25)
    N, _ = fem.shape_functions(1.0, 1.0)
    assert np.allclose(N, [0, 0, 1, 0])


def test_partition_of_unity():
    N, dN = fem.shape_functions(0.3, -0.7)
    assert abs(N.sum() - 1.0) < 1e-14
    assert np.abs(dN.sum(axis=0)).max() < 1e-14


# -- displacement ------------------------------------------------------
def test_unloaded_equilibrium():
    disc = _square(3)
    prob = fem.DisplacementProblem(disc, _mat(), [])
    R, _ = prob.residual(np.zeros(2 * disc.n_nodes))
    assert np.linalg.norm(R) == 0.0


def _uniaxial_reaction(mat, d_value):
    disc = _square(1)
    x = disc.mesh.nodes[:, 0]
    u = np.zeros(2 * disc.n_nodes)
    eps = 1e-3
    u[0::2] = eps * x
    prob = fem.DisplacementProblem(disc, mat, np.arange(2 * disc.n_nodes))
    prob.set_damage(np.full(disc.n_nodes, d_value))
    f = prob.internal_force(u)
    right = np.isclose(x, 1.0)
    return f[0::2][right].sum(), eps


def test_single_element_hooke_reaction():
    mat = _mat(E=100.0, nu=0.25)
    reaction, eps = _uniaxial_reaction(mat, 0.0)
    # plane strain, laterally constrained: sigma_xx = (lambda + 2 mu) eps
    lam = 100.0 * 0.25 / (1.25 * 0.5)
    mu = 100.0 / 2.5
    assert reaction == pytest.approx((lam + 2 * mu) * eps * (1 + 1e-6), rel=1e-12)


def test_fully_damaged_reaction_ratio():
    mat = _mat()
    r0, _ = _uniaxial_reaction(mat, 0.0)
    r1, _ = _uniaxial_reaction(mat, 1.0)
    assert r1 / r0 == pytest.approx(1e-6 / (1 + 1e-6), rel=1e-10)


def test_constrained_stiffness_spd():
    disc = _square(3)
    left = disc.mesh.node_sets["left"]
    fixed = np.concatenate([2 * left, 2 * left + 1])
    prob = fem.DisplacementProblem(disc, _mat(), fixed)
    K = prob.tangent(np.zeros(2 * disc.n_nodes)).toarray()
    assert np.allclose(K, K.T, atol=1e-12 * np.abs(K).max())
    assert np.linalg.eigvalsh(K).min() > 0


def _fd_check(res_fn, tan_fn, x, free, h):
    K = tan_fn(x)
    K = K.toarray() if sp.issparse(K) else K
    rng = np.random.default_rng(0)
    v = np.zeros_like(x)
    v[free] = rng.normal(size=free.sum())
    Rp, _ = res_fn(x + h * v)
    Rm, _ = res_fn(x - h * v)
    fd = (Rp - Rm)[free] / (2 * h)
    an = K @ v[free]
    return np.linalg.norm(fd - an) / max(np.linalg.norm(an), 1e-300)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10 ** 6), st.sampled_from(["none", "spectral"]))
def test_displacement_tangent_consistency(seed, split):
    rng = np.random.default_rng(seed)
    disc = _square(2)
    mat = _mat(split=split)
    prob = fem.DisplacementProblem(disc, mat, [0, 1])
    prob.set_damage(rng.uniform(0, 0.9, disc.n_nodes))
    u = rng.normal(size=2 * disc.n_nodes) * 1e-3
    err = _fd_check(prob.residual, prob.tangent, u, prob.free, 1e-6 * np.linalg.norm(u))
    assert err <= 1e-5


# -- damage ------------------------------------------------------------
def test_damage_residual_zero_when_undriven_at2():
    disc = _square(2)
    prob = fem.DamageProblem(disc, _mat(dissipation="AT2"))
    R, _ = prob.residual(np.zeros(disc.n_nodes))
    assert np.linalg.norm(R) == 0.0


def test_homogeneous_at2_root():
    mat = _mat(dissipation="AT2", Gc=2.0, ell=0.5)
    disc = _square(1)
    prob = fem.DamageProblem(disc, mat)
    H = 3.0
    prob.H = np.full((1, 4), H)
    free = np.ones(disc.n_nodes, bool)
    r = fem.newton(prob.residual, prob.tangent, np.zeros(disc.n_nodes), free)
    # 2 (1 - d) H = Gc / (c_w ell) * 2 d  with c_w = 2
    expected = 2 * H / (2 * H + mat.Gc / mat.ell)
    assert np.allclose(r.x, expected, rtol=1e-10)


def test_at1_below_threshold_stays_undamaged():
    mat = _mat(dissipation="AT1")
    disc = _square(2)
    prob = fem.DamageProblem(disc, mat, penalty_stiffness(mat, 1e-6))
    threshold = mat.Gc / (mat.c_w * mat.ell) / 2.0
    prob.H = np.full((disc.n_el, 4), 0.9 * threshold)
    r = fem.newton(prob.residual, prob.tangent, np.zeros(disc.n_nodes), np.ones(disc.n_nodes, bool))
    assert np.all(r.x <= 1e-12) and np.all(r.x >= -1e-6)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10 ** 6), st.sampled_from(["AT1", "AT2"]))
def test_damage_tangent_consistency(seed, model):
    rng = np.random.default_rng(seed)
    disc = _square(3)
    prob = fem.DamageProblem(disc, _mat(dissipation=model))
    prob.H = rng.uniform(0, 50, (disc.n_el, 4))
    prob.f = rng.uniform(0.1, 1, (disc.n_el, 4))
    d = rng.uniform(0.05, 0.95, disc.n_nodes)
    free = np.ones(disc.n_nodes, bool)
    assert _fd_check(prob.residual, prob.tangent, d, free, 1e-6) <= 1e-5


# -- linear solves -----------------------------------------------------
def test_linear_system_one_iteration():
    disc = _square(2)
    prob = fem.DisplacementProblem(disc, _mat(), [])
    left = disc.mesh.node_sets["left"]
    right = disc.mesh.node_sets["right"]
    bc = {int(2 * n): 0.0 for n in left}
    bc.update({int(2 * n + 1): 0.0 for n in left})
    bc.update({int(2 * n): 1e-3 for n in right})
    sys_ = fem.assemble_displacement(prob, np.zeros(2 * disc.n_nodes), np.zeros(disc.n_nodes), dirichlet=bc)
    x, it = fem.solve_field(sys_)
    assert it == 1
    assert np.allclose(x[2 * right], 1e-3)


def test_manufactured_solution_recovered():
    disc = _square(2)
    prob = fem.DisplacementProblem(disc, _mat(), [])
    K = prob.full_tangent(np.zeros(2 * disc.n_nodes))
    rng = np.random.default_rng(5)
    u_true = rng.normal(size=2 * disc.n_nodes)
    left = disc.mesh.node_sets["left"]
    bc = {int(k): float(u_true[k]) for k in np.concatenate([2 * left, 2 * left + 1])}
    x, _ = fem.solve_field(fem.SparseSystem(K, K @ u_true, bc))
    assert np.abs(x - u_true).max() <= 1e-10 * np.abs(u_true).max()


def test_inconsistent_system_signals_nonconvergence():
    A = sp.csr_matrix(np.array([[1.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(fem.NonConvergence):
        fem.solve_field(fem.SparseSystem(A, np.array([1.0, 2.0])))


def test_newton_budget_exhausted():
    # residual x^3 - 1 with a deliberately wrong (too small) tangent
    res = lambda x: (x ** 3 - 1.0, 1.0)
    tan = lambda x: sp.csr_matrix([[1e3]])
    with pytest.raises(fem.NonConvergence) as ei:
        fem.newton(res, tan, np.array([5.0]), np.array([True]), fem.NewtonSettings(max_iters=3))
    assert ei.value.residual > 0


def test_project_and_integrate():
    disc = _square(4, 2.0)
    assert disc.integrate(np.ones((disc.n_el, 4))) == pytest.approx(4.0)
    assert disc.nodal_area.sum() == pytest.approx(4.0)
    x = disc.mesh.nodes[:, 0]
    q = disc.interpolate(x)
    assert np.allclose(disc.project_to_nodes(q)[np.isclose(x, 1.0)], 1.0)

import numpy as np
import pytest

from _problems import single_element, small_strip
from pfjump import cycle as Y


# -- load program ------------------------------------------------------
def test_discretize_examples():
    assert Y.discretize_cycle(Y.LoadProgram("force", 0.0, 100.0, 2, 1)).tolist() == [50.0, 100.0, 0.0]
    lv = Y.discretize_cycle(Y.LoadProgram("force", 0.0, 7.0, 5, 1))
    assert len(lv) == 6 and lv[-1] == 0.0 and lv[4] == 7.0
    assert np.all(Y.discretize_cycle(Y.LoadProgram("force", 3.0, 3.0, 2, 2)) == 3.0)


def test_program_validation():
    with pytest.raises(ValueError):
        Y.LoadProgram("pressure")
    with pytest.raises(ValueError):
        Y.LoadProgram("force", 0, 1, 0, 1)
    with pytest.raises(ValueError):
        Y.StaggerSettings(tol_stag=0.0)


# -- single element ----------------------------------------------------
def test_zero_amplitude_keeps_state():
    sim = single_element(u_max=0.0)
    s0 = sim.initial_state()
    s1, r1 = sim.solve_cycle(s0)
    s2, r2 = sim.solve_cycle(s1)
    assert s2.N == 2 and r2.N == 2
    assert np.array_equal(s0.alpha_bar, s2.alpha_bar)
    # the penalty bound lets d sit a hair below zero; it must not drift
    assert np.abs(s2.d).max() < 1e-10 and np.array_equal(s1.d, s2.d)
    assert np.abs(s2.u).max() < 1e-12
    assert (r1.max_alpha_bar, r1.max_d) == (r2.max_alpha_bar, r2.max_d)


def test_stage_one_growth_is_linear():
    """Below the damage threshold each cycle adds the same alpha_bar."""
    sim = single_element(u_max=1e-3, alpha_th=1.0)
    s = sim.initial_state()
    hist = []
    for _ in range(5):
        s, rec = sim.solve_cycle(s)
        hist.append(rec.max_alpha_bar)
        assert rec.max_d == 0.0
    inc = np.diff([0.0] + hist)
    assert np.ptp(inc) <= 1e-10 * inc.max()
    # g(0) times the uniaxial strain energy at the peak, E=100, nu=0
    assert inc[0] == pytest.approx((1 + 1e-6) * 0.5 * 100.0 * 1e-3 ** 2, rel=1e-10)


def test_damage_starts_after_threshold():
    # peak energy 5e-5 per cycle, AT1 damage onset needs f < psi / psi_c
    sim = single_element(u_max=1e-2, alpha_th=0.02)
    s = sim.initial_state()
    psi_c = 3 * 1.0 / (16 * 0.5)
    assert 0.5 * 100 * 1e-4 < psi_c
    for n in range(400):
        s, rec = sim.solve_cycle(s)
        if rec.max_d > 0:
            break
    assert rec.max_d > 0 and rec.max_alpha_bar > 0.02


def test_trial_cycle_freezes_alpha():
    sim = single_element(u_max=1e-3)
    s = sim.initial_state()
    s, _ = sim.solve_cycle(s)
    plain, rp = sim.solve_cycle(s)
    trial, rt = sim.solve_trial_cycle(s)
    assert np.array_equal(trial.alpha_bar, s.alpha_bar)
    assert rt.trial and not rp.trial
    np.testing.assert_allclose(trial.u, plain.u)
    np.testing.assert_allclose(trial.alpha_prev, plain.alpha_prev)
    assert rt.max_d == rp.max_d


def test_trial_cycle_rejects_exhausted_toughness():
    fail = Y.FailureCriterion(ligament=0.8, crack_fraction=0.5)
    sim = small_strip(u_max=6e-3, alpha_th=0.3, failure=fail)
    s = sim.initial_state()
    for _ in range(2):
        s, _ = sim.solve_cycle(s)
    adv = s.copy()
    adv.alpha_bar = np.full_like(s.alpha_bar, 1e9)
    try:
        _, rec = sim.solve_trial_cycle(adv)
    except Y.CycleFailure as exc:
        assert exc.step >= 0
    else:
        assert sim.is_failed(rec)


# -- small strip -------------------------------------------------------
@pytest.fixture(scope="module")
def strip_run():
    sim = small_strip(u_max=6e-3, alpha_th=0.3)
    s = sim.initial_state()
    states, recs = [s], []
    for _ in range(40):
        s, rec = sim.solve_cycle(s)
        states.append(s)
        recs.append(rec)
    return sim, states, recs


def test_monotone_history(strip_run):
    _, states, recs = strip_run
    for a, b in zip(states[:-1], states[1:]):
        assert np.all(b.H >= a.H)
        assert np.all(b.alpha_bar >= a.alpha_bar)
    ab = [r.max_alpha_bar for r in recs]
    dm = [r.max_d for r in recs]
    assert np.all(np.diff(ab) >= 0) and np.all(np.diff(dm) >= -1e-12)
    assert [r.N for r in recs] == list(range(1, 41))
    assert all(np.isfinite([r.max_alpha_bar, r.max_d, r.a_smeared]).all() for r in recs)


def test_records_are_deterministic(strip_run):
    sim, states, recs = strip_run
    s = states[10]
    s1, r1 = sim.solve_cycle(s.copy())
    s2, r2 = sim.solve_cycle(s.copy())
    assert np.array_equal(s1.d, s2.d) and np.array_equal(s1.alpha_bar, s2.alpha_bar)
    assert (r1.max_alpha_bar, r1.max_d, r1.a_smeared) == (r2.max_alpha_bar, r2.max_d, r2.a_smeared)
    assert r1.max_alpha_bar == recs[10].max_alpha_bar


def test_unloading_steps_do_not_change_alpha(strip_run):
    """Three versus six steps per cycle at a pre-localization state."""
    sim, states, _ = strip_run
    s = states[5]
    a3 = sim.solve_cycle(s.copy(), Y.LoadProgram("displacement", 0.0, 6e-3, 2, 1))[0].alpha_bar.max()
    a6 = sim.solve_cycle(s.copy(), Y.LoadProgram("displacement", 0.0, 6e-3, 2, 4))[0].alpha_bar.max()
    assert abs(a6 - a3) <= 0.02 * a3
    a6b = sim.solve_cycle(s.copy(), Y.LoadProgram("displacement", 0.0, 6e-3, 4, 2))[0].alpha_bar.max()
    assert abs(a6b - a3) <= 0.02 * a3


def test_failure_criterion():
    crit = Y.FailureCriterion(ligament=0.8, crack_fraction=0.5)
    assert crit.a_fail == pytest.approx(0.4)
    assert Y.FailureCriterion().a_fail is None


# -- initial crack -----------------------------------------------------
def test_polyline_distance():
    line = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]]
    pts = np.array([[0.5, 0.3], [-1.0, 0.0], [2.0, 0.5], [1.0, 2.0]])
    assert Y.polyline_distance(pts, line) == pytest.approx([0.3, 1.0, 1.0, 1.0])
    with pytest.raises(ValueError):
        Y.polyline_distance(pts, [[0.0, 0.0]])


def test_initial_crack_history_profile():
    from pfjump.model import Material
    mat = Material(E=1.0, nu=0.0, Gc=2.0, ell=0.4)
    pts = np.array([[0.5, 0.0], [0.5, 0.1], [0.5, 0.2], [0.5, 0.3]])
    H = Y.initial_crack_history(pts, [[0.0, 0.0], [1.0, 0.0]], mat, factor=10.0)
    assert H == pytest.approx([12.5, 6.25, 0.0, 0.0])


def test_initial_crack_is_reproduced_at_zero_load():
    base = small_strip(u_max=0.0)
    line = np.array([[0.2, 0.25], [0.4, 0.25]])
    sim = Y.Simulation(base.mesh, base.material, base.fatigue, base.bcs, base.program, smeared=base.smeared,
                       initial_crack=line)
    s, _ = sim.solve_cycle(sim.initial_state())
    x = sim.mesh.nodes
    on = (np.abs(x[:, 1] - 0.25) < 1e-9) & (x[:, 0] >= 0.2) & (x[:, 0] <= 0.4)
    far = Y.polyline_distance(x, line) > 2.5 * sim.material.ell
    assert on.any() and s.d[on].min() > 0.99
    assert np.abs(s.d[far]).max() < 1e-8
    # with a penalty bound the seeded damage is what persists
    pen = Y.Simulation(base.mesh, base.material, base.fatigue, base.bcs, base.program,
                       irreversibility="penalty", initial_crack=line)
    s0 = pen.initial_state()
    assert not s0.H.any() and s0.d[on].min() > 0.99
    s1, _ = pen.solve_cycle(s0)
    assert np.all(s1.d >= s0.d - 1e-6)

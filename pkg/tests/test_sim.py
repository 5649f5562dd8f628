import dataclasses

import numpy as np
import pytest
from hypothesis import given, strategies as st

from it2mpc import sim, synth
from it2mpc.it2 import (FuzzyRule, GaussianGrade, It2ControllerShape, It2MembershipFn, It2Plant,
                        Premise, SinSquaredWeight, blend, firing_strengths)
from it2mpc.matkernel import StructureError
from it2mpc.sim import DelayProcess, SimConfig
from it2mpc.synth import HistoryWindow


def plant_of(rules):
    mfs = [It2MembershipFn(GaussianGrade(float(c)), SinSquaredWeight(0)) for c in range(len(rules))]
    return It2Plant(rules, mfs, Premise(0))


def zero_gain_solution(n, w, r=1):
    return synth.SynthesisSolution([np.eye(n)] * r, np.eye(n), [np.zeros((w, n))] * r, np.eye(w),
                                   1.0, [np.zeros((w, n))] * r, "online")


def test_delay_process_validation():
    with pytest.raises(ValueError):
        DelayProcess("poisson", 3)
    with pytest.raises(ValueError):
        DelayProcess("constant", 3, 4)
    with pytest.raises(ValueError):
        DelayProcess("uniform", 0)


@given(st.integers(1, 12), st.integers(0, 2 ** 32 - 1))
def test_uniform_delays_in_range(bound, seed):
    rng = np.random.default_rng(seed)
    d = [DelayProcess("uniform", bound).draw(rng) for _ in range(50)]
    assert min(d) >= 1 and max(d) <= bound


def test_worst_case_sweep_enumerates():
    assert [p.value for p in sim.worst_case_sweep(4)] == [1, 2, 3, 4]


def test_step_without_delay_matrices():
    r = FuzzyRule([[0.9, 0.1], [0.0, 0.8]], np.zeros((2, 2)), [[0.0], [1.0]], np.zeros((2, 1)))
    p = plant_of([r])
    rng = np.random.default_rng(0)
    hist = HistoryWindow([rng.standard_normal(2) for _ in range(4)], [rng.standard_normal(1)] * 3)
    u = np.array([0.3])
    xn, *_ = sim.step(p, None, None, hist, 3, 2, u=u)
    np.testing.assert_allclose(xn, r.A @ hist.states[-1] + r.B @ u, atol=1e-15)


def test_step_single_rule_zero_gain():
    r = FuzzyRule([[0.5, 0.0], [0.1, 0.4]], [[0.2, 0.0], [0.0, 0.3]], [[1.0], [0.0]], [[1.0], [1.0]])
    p = plant_of([r])
    states = [np.array([float(i), -float(i)]) for i in range(4)]
    hist = HistoryWindow(states, [np.zeros(1)] * 3)
    ctrl = It2ControllerShape.matching(p)
    xn, u, xd, _ = sim.step(p, zero_gain_solution(2, 1), ctrl, hist, 2, 1)
    np.testing.assert_allclose(xn, r.A @ states[-1] + r.Ad @ states[-3])
    assert u[0] == 0.0


def test_step_cstr_rule1_vertex():
    r = FuzzyRule([[0.75, 0.0119], [-0.2238, 0.8262]], [[0.0435, 0.0003], [-0.0061, 0.0455]],
                  [[0.0004], [0.0546]], [[0.0000004], [0.0000546]])
    p = plant_of([r])
    x = np.array([1.0, 0.0])
    hist = HistoryWindow([x, x], [np.zeros(1)])
    xn, *_ = sim.step(p, None, None, hist, 1, 1, u=np.zeros(1))
    np.testing.assert_allclose(xn, [0.7935, -0.2299], atol=1e-15)


def test_step_underflow():
    p = plant_of([FuzzyRule([[0.5]], [[0.1]], [[1.0]], [[0.0]])])
    hist = HistoryWindow([np.ones(1)] * 2, [np.zeros(1)])
    with pytest.raises(StructureError):
        sim.step(p, None, None, hist, 2, 1, u=np.zeros(1))
    with pytest.raises(StructureError):
        sim.step(p, None, None, hist, 1, 2, u=np.zeros(1))


def test_step_uses_current_weights():
    r1 = FuzzyRule([[0.2]], [[0.1]], [[1.0]], [[0.0]])
    r2 = FuzzyRule([[0.9]], [[0.5]], [[2.0]], [[0.0]])
    p = plant_of([r1, r2])
    states = [np.array([3.0]), np.array([0.4])]
    hist = HistoryWindow(states, [np.zeros(1)])
    xn, *_ = sim.step(p, None, None, hist, 1, 1, u=np.array([0.1]))
    a, ad, b, _ = blend(p, firing_strengths(p, states[-1]))
    np.testing.assert_allclose(xn, a @ states[-1] + ad @ states[0] + b @ [0.1], atol=1e-15)


def stable_setup():
    r = FuzzyRule([[0.6, 0.1], [0.0, 0.5]], [[0.05, 0.0], [0.02, 0.05]], [[0.0], [1.0]],
                  [[0.0], [0.1]])
    p = plant_of([r])
    return p, It2ControllerShape.matching(p)


def test_uncontrolled_stable_converges_and_zero_stays():
    p, _ = stable_setup()
    scfg = SimConfig(80, [1.0, -1.0], state_delay=DelayProcess("uniform", 3),
                     input_delay=DelayProcess("uniform", 3), seed=2)
    tr = sim.uncontrolled_run(p, scfg)
    assert tr.steps == 80 and np.linalg.norm(tr.x_end) < 1e-6
    tr0 = sim.uncontrolled_run(p, dataclasses.replace(scfg, x0=np.zeros(2)))
    assert np.all(tr0.states == 0.0)


def test_uncontrolled_divergence_guard():
    # membership wide enough to stay positive out to the guard radius
    wide = It2MembershipFn(GaussianGrade(0.0, 1e7, 1e7, 1.0), SinSquaredWeight(0))
    p = It2Plant([FuzzyRule([[3.0]], [[0.0]], [[1.0]], [[0.0]])], [wide], Premise(0))
    tr = sim.uncontrolled_run(p, SimConfig(100, [1.0]))
    assert tr.diverged and tr.steps < 100


def test_constant_delay_matches_full_trajectory_oracle():
    p, ctrl = stable_setup()
    rng = np.random.default_rng(4)
    gains = [np.array([[-0.1, -0.2]])]
    sol = synth.SynthesisSolution([np.eye(2)], np.eye(2), gains, np.eye(1), 1.0, gains, "online")
    d, steps, x0 = 3, 25, np.array([0.7, -0.2])
    hist = HistoryWindow([x0] * (d + 1), [np.zeros(1)] * d)
    xs, us = [x0], []
    for k in range(steps):
        xn, u, *_ = sim.step(p, sol, ctrl, hist, d, d)
        us.append(u)
        xs.append(xn)
        hist = HistoryWindow((hist.states + [xn])[1:], (hist.inputs + [u])[1:])
    # oracle: whole trajectory, index k - d directly
    r = p.rules[0]
    ox, ou = [x0], []
    for k in range(steps):
        x = ox[k]
        u = gains[0] @ x
        xd = ox[k - d] if k - d >= 0 else x0
        ud = ou[k - d] if k - d >= 0 else np.zeros(1)
        ox.append(r.A @ x + r.B @ u + r.Ad @ xd + r.Bd @ ud)
        ou.append(u)
    np.testing.assert_allclose(np.array(xs), np.array(ox), atol=1e-14)


def test_none_delay_equals_folded_plant():
    p, ctrl = stable_setup()
    r = p.rules[0]
    folded = plant_of([FuzzyRule(r.A + r.Ad, np.zeros((2, 2)), r.B + r.Bd, np.zeros((2, 1)))])
    gains = [np.array([[-0.1, -0.3]])]
    sol = synth.SynthesisSolution([np.eye(2)], np.eye(2), gains, np.eye(1), 1.0, gains, "online")
    x0 = np.array([0.5, -0.5])
    a = HistoryWindow([x0] * 2, [np.zeros(1)])
    b = HistoryWindow([x0] * 2, [np.zeros(1)])
    for _ in range(30):
        xa, ua, *_ = sim.step(p, sol, ctrl, a, 0, 0)
        xb, ub, *_ = sim.step(folded, sol, ctrl, b, 0, 0)
        np.testing.assert_allclose(xa, xb, atol=1e-12)
        a = HistoryWindow([a.states[-1], xa], [ua])
        b = HistoryWindow([b.states[-1], xb], [ub])


@pytest.fixture(scope="module")
def short_runs(cstr):
    scfg = SimConfig(8, cstr.x0, state_delay=DelayProcess("uniform", 10),
                     input_delay=DelayProcess("uniform", 10), seed=11)
    one = sim.run(cstr.plant, cstr.ctrl, cstr.synth, scfg)
    two = sim.run(cstr.plant, cstr.ctrl, cstr.synth, scfg)
    return scfg, one, two


def test_run_lengths_and_delays(short_runs):
    scfg, tr, _ = short_runs
    assert tr.steps == 8
    for arr in (tr.u, tr.dx, tr.du, tr.xd, tr.zeta, tr.V, tr.feasible):
        assert len(arr) == 8
    assert len(tr.solutions) == 8
    assert np.all((tr.dx >= 1) & (tr.dx <= 10)) and np.all((tr.du >= 1) & (tr.du <= 10))
    np.testing.assert_array_equal(tr.x[0], scfg.x0)
    assert np.all(np.abs(tr.u) <= 6.0 + 1e-9)


def test_run_is_deterministic(short_runs, tmp_path):
    _, a, b = short_runs
    a.write_csv(tmp_path / "a.csv")
    b.write_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_single_step_run(cstr):
    tr = sim.run(cstr.plant, cstr.ctrl, cstr.synth, SimConfig(1, cstr.x0))
    assert tr.steps == 1
    np.testing.assert_array_equal(tr.x[0], cstr.x0)
    u0 = synth.control_input(tr.solutions[0], cstr.ctrl, cstr.x0)
    np.testing.assert_array_equal(tr.u[0], u0)


def test_initial_infeasibility_is_fatal(cstr):
    cfg = dataclasses.replace(cstr.synth, u_max=np.array([1e-9]))
    with pytest.raises(sim.InitialInfeasible):
        sim.run(cstr.plant, cstr.ctrl, cfg, SimConfig(3, [3.0, -3.0]))


def test_later_infeasibility_reuses_gains(cstr, monkeypatch):
    real = synth.solve_step
    calls = {"n": 0}

    def flaky(*a, **k):
        calls["n"] += 1
        if calls["n"] == 2:
            raise synth.Infeasible("forced")
        return real(*a, **k)

    monkeypatch.setattr(synth, "solve_step", flaky)
    tr = sim.run(cstr.plant, cstr.ctrl, cstr.synth, SimConfig(3, cstr.x0))
    assert list(tr.feasible) == [True, False, True]
    assert tr.solutions[1] is tr.solutions[0]
    assert tr.infeasible_steps == 1


def test_delay_bound_must_fit_history(cstr):
    scfg = SimConfig(2, cstr.x0, state_delay=DelayProcess("uniform", 12))
    with pytest.raises(ValueError):
        sim.run(cstr.plant, cstr.ctrl, cstr.synth, scfg)


def test_csv_header(short_runs):
    _, tr, _ = short_runs
    assert tr.csv_header() == ["k", "t", "x_1", "x_2", "u_1", "d_x", "d_u", "zeta", "feasible"]


def test_convergence_step():
    tr = sim.Trajectory(0.2, np.array([[1.0], [0.5], [0.001], [0.02]] + [[0.001]] * 12),
                        np.zeros((16, 1)), np.zeros(16), np.zeros(16), np.zeros((16, 1)),
                        np.zeros((16, 1)), np.zeros(16), np.zeros(16), np.ones(16, bool),
                        np.array([0.0005]))
    assert tr.convergence_step() == 4
    assert tr.convergence_step(hold=20) is None


def test_sim_config_validation():
    with pytest.raises(ValueError):
        SimConfig(0, [0.0])
    with pytest.raises(ValueError):
        SimConfig(1, [0.0], Ts=0.0)
    with pytest.raises(ValueError):
        SimConfig(1, [0.0], resynthesize_every=0)

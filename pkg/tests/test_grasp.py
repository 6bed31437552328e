from types import SimpleNamespace

import numpy as np
import pytest

from tacsim.errors import GraspFailed, RankDeficientFit
from tacsim.grasp import (
    Egg,
    GraspSimulation,
    GripperGeometry,
    GripperState,
    HysteresisPolicy,
    NoObject,
    Phase,
    RigidObject,
    SingleThreshold,
    Tweezers,
    controller_step,
    grip_signal,
    tweezers_linearity_study,
)

DT = 1.0 / 250.0
GEO = GripperGeometry()
QUIET = {"fa1_noise_counts": 0.0, "sa2_noise_ut": 0.0, "quantization_ut": 0.0}


def rel(fa1_sum=0.0, sa2=(0.0, 0.0, 0.0)):
    return SimpleNamespace(fa1=np.full((4, 4), fa1_sum / 16.0), sa2=np.asarray(sa2, float))


def closing_state():
    return GripperState(phase=Phase.CLOSING)


# ---------------------------------------------------------------------------
# grip signal
# ---------------------------------------------------------------------------

def test_signal_pure_shear_is_planar_norm():
    assert grip_signal(rel(sa2=(3.0, 4.0, 0.0)), 0.3) == pytest.approx(5.0, rel=1e-12)


def test_signal_zero_frame_is_zero():
    assert grip_signal(rel(), 0.3) == 0.0


def test_signal_blends_normal_channels():
    # 0.3 * 10 + 0.7 * 100 = 73
    assert grip_signal(rel(fa1_sum=100.0, sa2=(0.0, 0.0, 10.0)), 0.3) == pytest.approx(73.0)


def test_signal_invariant_to_shear_direction(rng):
    for _ in range(25):
        mag = rng.uniform(0.0, 300.0)
        theta = rng.uniform(0.0, 2 * np.pi)
        frame = rel(fa1_sum=500.0, sa2=(mag * np.cos(theta), mag * np.sin(theta), 40.0))
        base = rel(fa1_sum=500.0, sa2=(mag, 0.0, 40.0))
        assert grip_signal(frame, 0.3) == pytest.approx(grip_signal(base, 0.3), rel=1e-12)


# ---------------------------------------------------------------------------
# policies and objects
# ---------------------------------------------------------------------------

def test_policy_validation():
    with pytest.raises(ValueError):
        SingleThreshold(threshold=0.0)
    with pytest.raises(ValueError):
        HysteresisPolicy(close_above=500.0, release_below=500.0)
    with pytest.raises(ValueError):
        HysteresisPolicy(close_above=400.0, release_below=600.0)
    assert SingleThreshold(700.0).close_threshold == 700.0
    assert HysteresisPolicy().close_threshold == 900.0


def test_object_validation():
    with pytest.raises(ValueError):
        Egg(stiffness_n_per_mm=0.0)
    with pytest.raises(ValueError):
        Egg(crush_force_n=-1.0)
    with pytest.raises(ValueError):
        Tweezers(object_size_mm=20.0, tip_gap_mm=12.0)
    with pytest.raises(ValueError):
        Tweezers(arm_rate_n_per_mm=0.0)


def test_contact_force_shapes():
    assert NoObject().contact_force(1.0) == 0.0
    assert RigidObject().contact_force(50.0) == 0.0
    assert RigidObject().contact_force(39.0) == pytest.approx(500.0)
    egg = Egg()
    assert egg.contact_force(46.0) == 0.0
    assert egg.contact_force(44.0) == pytest.approx(5.0)


def test_tweezers_piecewise_force():
    tw = Tweezers()  # arms at 30 mm, tips at 12 mm, object 6 mm
    assert tw.contact_force(31.0) == 0.0
    assert tw.contact_force(25.0) == pytest.approx(0.02 * 5.0)  # arms only
    assert tw.contact_force(23.0) == pytest.approx(0.02 * 7.0 + 0.2 * 1.0)  # tips met object
    seps = np.linspace(32.0, 18.0, 100)
    forces = [tw.contact_force(s) for s in seps]
    assert all(b >= a - 1e-12 for a, b in zip(forces, forces[1:]))


# ---------------------------------------------------------------------------
# controller state machine (synthetic signals)
# ---------------------------------------------------------------------------

def test_idle_and_done_ignore_signal():
    for phase in (Phase.IDLE, Phase.DONE):
        state = GripperState(phase=phase)
        inc, events = controller_step(state, SingleThreshold(), [1e6, 1e6], GEO, DT)
        assert inc.tolist() == [0, 0] and events == []
        assert state.phase is phase


def test_closing_steps_both_fingers_below_threshold():
    state = closing_state()
    inc, events = controller_step(state, SingleThreshold(), [0.0, 0.0], GEO, DT)
    assert inc.tolist() == [1, 1] and events == []
    np.testing.assert_allclose(state.motor_deg, [1.5, 1.5])


def test_threshold_crossing_halts_and_holds():
    state = closing_state()
    inc, events = controller_step(state, SingleThreshold(700.0), [800.0, 650.0], GEO, DT)
    assert inc.tolist() == [0, 1]
    assert "halt_finger0" in events and state.phase is Phase.CLOSING
    inc, events = controller_step(state, SingleThreshold(700.0), [800.0, 750.0], GEO, DT)
    assert inc.tolist() == [0, 0]
    assert "halt_finger1" in events and "hold_start" in events
    assert state.phase is Phase.HOLDING
    np.testing.assert_allclose(state.motor_deg, [0.0, 1.5])


def test_gate_off_freezes_motion():
    state = closing_state()
    inc, events = controller_step(state, SingleThreshold(), [1e6, 1e6], GEO, DT, step_gate=False)
    assert inc.tolist() == [0, 0] and events == []
    assert state.phase is Phase.CLOSING and not state.halted.any()


def test_travel_limit_stops_a_finger():
    state = closing_state()
    state.motor_deg = np.array([199.5, 0.0])
    inc, events = controller_step(state, SingleThreshold(), [0.0, 0.0], GEO, DT)
    assert inc.tolist() == [0, 1]
    assert "mechanical_limit_finger0" in events
    assert state.motor_deg[0] == 199.5  # never exceeds max travel


def test_single_threshold_holds_forever():
    state = GripperState(phase=Phase.HOLDING)
    for _ in range(1000):
        inc, events = controller_step(state, SingleThreshold(), [900.0, 900.0], GEO, DT)
        assert inc.tolist() == [0, 0] and events == []
    assert state.phase is Phase.HOLDING


def test_hold_timer_runs_even_when_gated():
    policy = HysteresisPolicy(hold_s=2.0)
    state = GripperState(phase=Phase.HOLDING)
    for i in range(499):
        _, events = controller_step(state, policy, [950.0, 950.0], GEO, DT, step_gate=(i % 6 == 0))
        assert events == []
    _, events = controller_step(state, policy, [950.0, 950.0], GEO, DT, step_gate=False)
    assert events == ["release_start"]
    assert state.phase is Phase.RELEASING
    assert state.hold_elapsed_s == pytest.approx(2.0, abs=1e-9)


def test_release_opens_until_low_threshold():
    policy = HysteresisPolicy(close_above=900.0, release_below=500.0)
    state = GripperState(phase=Phase.RELEASING)
    state.motor_deg = np.array([30.0, 30.0])
    inc, events = controller_step(state, policy, [800.0, 800.0], GEO, DT)
    assert inc.tolist() == [-1, -1] and events == []
    np.testing.assert_allclose(state.motor_deg, [28.5, 28.5])
    inc, events = controller_step(state, policy, [400.0, 450.0], GEO, DT)
    assert inc.tolist() == [0, 0]
    assert events == ["done"] and state.phase is Phase.DONE


def test_release_never_backs_past_zero():
    policy = HysteresisPolicy()
    state = GripperState(phase=Phase.RELEASING)
    state.motor_deg = np.array([0.0, 1.5])
    inc, _ = controller_step(state, policy, [800.0, 800.0], GEO, DT)
    assert inc.tolist() == [0, -1]
    assert state.motor_deg[0] == 0.0


def test_increments_always_unit_sized(rng):
    policy = HysteresisPolicy()
    state = closing_state()
    for _ in range(300):
        g = rng.uniform(0.0, 1500.0, size=2)
        inc, _ = controller_step(state, policy, g, GEO, DT, step_gate=bool(rng.integers(2)))
        assert set(np.unique(inc)).issubset({-1, 0, 1})


# ---------------------------------------------------------------------------
# closed-loop simulations
# ---------------------------------------------------------------------------

def test_egg_grasp_halts_without_crush():
    sim = GraspSimulation(Egg(), SingleThreshold(), seed=3)
    trace = sim.run()
    hold = trace.event_tick("hold_start")
    assert hold is not None
    assert trace.state.phase is Phase.HOLDING
    forces = [row.contact_force_n for row in trace.rows]
    assert 0.0 < max(forces) < Egg().crush_force_n
    # motors stay frozen once the grasp settles
    after = [(r.tick, r.finger, r.motor_deg) for r in trace.rows if r.tick >= hold]
    final = {f: m for _, f, m in after if _ == after[-1][0]}
    for _, finger, motor in after:
        assert motor == final[finger]


def test_seeded_runs_are_identical():
    traces = [GraspSimulation(Egg(), SingleThreshold(), seed=11).run() for _ in range(2)]
    a, b = traces
    assert a.events == b.events
    assert [(r.motor_deg, r.signal) for r in a.rows] == [(r.motor_deg, r.signal) for r in b.rows]


def test_empty_gripper_reaches_travel_limit():
    sim = GraspSimulation(NoObject(), SingleThreshold(), seed=0)
    trace = sim.run(max_ticks=3000)
    assert trace.event_tick("mechanical_limit_finger0") is not None
    assert trace.event_tick("mechanical_limit_finger1") is not None
    np.testing.assert_allclose(trace.state.motor_deg, [199.5, 199.5])
    assert trace.event_tick("halt_finger0") is None


def test_hysteresis_hold_lasts_exactly_two_seconds():
    sim = GraspSimulation(Egg(), HysteresisPolicy(), seed=5)
    trace = sim.run(max_ticks=3000)
    hold = trace.event_tick("hold_start")
    release = trace.event_tick("release_start")
    done = trace.event_tick("done")
    assert hold is not None and release is not None and done is not None
    assert release - hold == 500  # 2.0 s at 250 Hz
    assert trace.state.phase is Phase.DONE


def test_tweezers_pick_is_gentle():
    sim = GraspSimulation(Tweezers(), HysteresisPolicy(), seed=2)
    trace = sim.run(max_ticks=3000)
    hold = trace.event_tick("hold_start")
    release = trace.event_tick("release_start")
    assert hold is not None and release - hold == 500
    assert max(row.contact_force_n for row in trace.rows) < 1.0


def test_separation_accounting():
    sim = GraspSimulation(Egg(), SingleThreshold(), seed=3)
    trace = sim.run()
    hold = trace.event_tick("hold_start")
    motors = [r.motor_deg for r in trace.rows if r.tick == hold]
    assert len(motors) == 2
    expected = GEO.opening_mm - sum(motors) * GEO.mm_per_deg
    assert trace.separation_at(hold, GEO) == pytest.approx(expected, rel=1e-12)


def test_linearity_study_noise_free():
    result = tweezers_linearity_study(
        sizes_mm=(2.0, 4.0, 6.0, 8.0, 10.0), seed=0, env_kwargs=QUIET
    )
    assert result.r2 > 0.999
    assert result.slope == pytest.approx(0.911, abs=0.05)
    assert np.all(np.diff(result.hold_gap_mm) > 0.0)


def test_linearity_needs_two_sizes():
    with pytest.raises(RankDeficientFit):
        tweezers_linearity_study(sizes_mm=(5.0, 5.0), seed=0)


def test_study_flags_unreachable_hold():
    with pytest.raises(GraspFailed):
        tweezers_linearity_study(sizes_mm=(2.0, 8.0), seed=0, max_ticks=10)

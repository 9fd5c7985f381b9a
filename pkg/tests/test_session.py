"""Session loop: mode machine, reference policies, metrics, record/replay."""

import numpy as np
import pytest

from dragfly import (Box, DroneState, Environment, InputEvent, Session, SessionConfig,
                     record, replay, rmse)
from dragfly.session import GoalRejected, run_events


def marker_events(t0_tick, p_from, p_to, n, every=2):
    """Dense marker drag: n+1 measurements, one every `every` ticks."""
    p_from = np.asarray(p_from, float)
    p_to = np.asarray(p_to, float)
    return [InputEvent(tick=t0_tick + i * every, kind="input_marker",
                       data={"p": list(p_from + (p_to - p_from) * (i / n))})
            for i in range(n + 1)]


class TestRmse:
    def test_identical_is_zero(self):
        a = np.random.default_rng(0).uniform(size=(50, 3))
        assert rmse(a, a) == 0.0

    def test_constant_offset(self):
        a = np.zeros((30, 3))
        b = np.zeros((30, 3))
        b[:, 1] = 0.1
        assert rmse(a, b) == pytest.approx(0.1, abs=1e-12)

    def test_hand_computed(self):
        a = [[0, 0, 0], [1, 0, 0]]
        b = [[0, 0, 0], [1, 1, 0]]
        assert rmse(a, b) == pytest.approx(np.sqrt(0.5), abs=1e-12)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            rmse([[0, 0, 0]], [[0, 0, 0], [1, 1, 1]])


class TestModeMachine:
    def test_place_goal_enters_apvi(self, empty_arena):
        s = Session(empty_arena, SessionConfig(), DroneState(p=[0, 0, 0.8], v=np.zeros(3)))
        mode = s.set_mode({"kind": "place_goal", "data": {"p": [2, 0, 0.8]}})
        assert mode.kind == "APVI" and np.allclose(mode.goal, [2, 0, 0.8])

    def test_clear_goal_returns_to_fpvi(self, empty_arena):
        s = Session(empty_arena, SessionConfig(), DroneState(p=[0, 0, 0.8], v=np.zeros(3)))
        s.set_mode({"kind": "place_goal", "data": {"p": [2, 0, 0.8]}})
        mode = s.set_mode({"kind": "clear_goal", "data": {}})
        assert mode.kind == "FPVI" and mode.goal is None

    def test_goal_in_occupied_voxel_rejected(self, arena):
        s = Session(arena, SessionConfig(), DroneState(p=[0, 0, 0.8], v=np.zeros(3)))
        s.step()  # scan the wall in front
        assert len(s.vmap) > 0
        with pytest.raises(GoalRejected, match="occupied"):
            s.set_mode({"kind": "place_goal", "data": {"p": [2.05, 0.0, 0.8]}})
        assert s.mode.kind == "FPVI"

    def test_goal_outside_bounds_rejected(self, empty_arena):
        s = Session(empty_arena, SessionConfig(), DroneState(p=[0, 0, 0.8], v=np.zeros(3)))
        with pytest.raises(GoalRejected, match="bounds"):
            s.set_mode({"kind": "place_goal", "data": {"p": [50, 0, 0.8]}})

    def test_mode_invariant_every_tick(self, empty_arena):
        s = Session(empty_arena, SessionConfig(), DroneState(p=[0.5, 0, 0.8], v=np.zeros(3)))
        events = [InputEvent(tick=10, kind="place_goal", data={"p": [3.5, 0, 0.8]}),
                  InputEvent(tick=400, kind="clear_goal", data={}),
                  InputEvent(tick=500, kind="place_goal", data={"p": [2.0, 1.0, 0.8]})]
        for snap in run_events(s, events, 700):
            assert (snap.mode == "APVI") == (snap.goal is not None)

    def test_rejected_event_reported_not_fatal(self, arena):
        s = Session(arena, SessionConfig(), DroneState(p=[0, 0, 0.8], v=np.zeros(3)))
        s.step()
        snap = s.step([InputEvent(tick=1, kind="place_goal", data={"p": [2.05, 0, 0.8]})])
        assert snap.rejections and "occupied" in snap.rejections[0][1]
        assert snap.mode == "FPVI"


class TestFpviBehavior:
    def test_holds_position_without_input(self, empty_arena):
        s = Session(empty_arena, SessionConfig(), DroneState(p=[1.0, -1.0, 0.8], v=np.zeros(3)))
        p0 = s.drone.p.copy()
        for _ in range(1000):
            s.step()
        assert np.linalg.norm(s.drone.p - p0) < 1e-6

    def test_force_pipeline_reduces_to_user_force_in_open_space(self, empty_arena):
        s = Session(empty_arena, SessionConfig(), DroneState(p=[0, 0, 0.8], v=np.zeros(3)))
        events = marker_events(5, [0, 0, 0.8], [1.5, 0.5, 0.8], n=100, every=2)
        for snap in run_events(s, events, 300):
            assert np.all(snap.f_rep == 0.0)
            assert np.all(snap.f_v == snap.f_usr)
            assert snap.damping == s.config.fpvi_damping

    def test_drone_follows_dragged_marker(self, empty_arena):
        s = Session(empty_arena, SessionConfig(), DroneState(p=[0, 0, 0.8], v=np.zeros(3)))
        events = marker_events(0, [0, 0, 0.8], [2.0, 0.0, 0.8], n=200, every=2)
        run_events(s, events, 1200)
        assert np.linalg.norm(s.drone.p - [2.0, 0.0, 0.8]) < 0.05

    def test_commanded_trajectory_is_continuous(self, empty_arena):
        cfg = SessionConfig()
        s = Session(empty_arena, cfg, DroneState(p=[0, 0, 0.8], v=np.zeros(3)))
        events = marker_events(0, [0, 0, 0.8], [2.5, 1.0, 0.8], n=150, every=2)
        run_events(s, events, 600)
        c = np.array(s.log_c)
        steps = np.linalg.norm(np.diff(c, axis=0), axis=1)
        assert float(steps.max()) <= cfg.dynamics.v_max * cfg.dt + 0.05


class TestApviBehavior:
    def test_unforced_goal_reach_with_zero_rmse(self, empty_arena):
        s = Session(empty_arena, SessionConfig(), DroneState(p=[0.5, 0, 0.8], v=np.zeros(3)))
        events = [InputEvent(tick=50, kind="place_goal", data={"p": [4.5, 0, 0.8]})]
        run_events(s, events, 1500)
        m = s.metrics()
        assert m.completed and m.goal_reach_time is not None
        assert np.linalg.norm(s.drone.p - [4.5, 0, 0.8]) < 0.2
        assert m.rmse < 0.05

    def test_goal_reach_flips_back_to_fpvi(self, empty_arena):
        s = Session(empty_arena, SessionConfig(), DroneState(p=[0.5, 0, 0.8], v=np.zeros(3)))
        events = [InputEvent(tick=10, kind="place_goal", data={"p": [1.5, 0, 0.8]})]
        snaps = run_events(s, events, 600)
        assert s.mode.kind == "FPVI" and s.completed
        reached = [sn for sn in snaps if sn.goal_reach_time is not None]
        assert reached

    def test_no_path_holds_reference(self):
        # drone sealed in a voxel shell: every plan fails, reference must hold
        env = Environment(bounds=Box([-5, -5, 0], [5, 5, 3]),
                          obstacles=(Box([-0.8, -0.8, 0.0], [0.8, 0.8, 1.6]),))
        s = Session(env, SessionConfig(), DroneState(p=[-2.0, 0, 0.8], v=np.zeros(3)))
        # sweep the sensor across the shell so the map is populated
        events = [InputEvent(tick=2, kind="device_cloud",
                             data={"points": [[x, y, z]
                                              for x in np.arange(-0.75, 0.8, 0.2)
                                              for y in np.arange(-0.75, 0.8, 0.2)
                                              for z in np.arange(0.05, 1.6, 0.2)]}),
                  InputEvent(tick=10, kind="place_goal", data={"p": [0.0, 0.0, 0.8]})]
        run_events(s, events, 300)
        assert s.path is None
        assert np.allclose(s.p_r, [-2.0, 0, 0.8])
        assert not s.completed

    def test_profile_switch_is_applied(self, empty_arena):
        s = Session(empty_arena, SessionConfig(), DroneState(p=[0, 0, 0.8], v=np.zeros(3)))
        snap = s.step([InputEvent(tick=0, kind="set_profile", data={"profile": "exponential"})])
        assert snap.profile == "exponential"


class TestDeterminismAndReplay:
    def scripted(self, env, record_run=True):
        cfg = SessionConfig(rng_seed=7)
        s = Session(env, cfg, DroneState(p=[0.5, 0, 0.8], v=np.zeros(3)), record=record_run)
        events = [InputEvent(tick=20, kind="place_goal", data={"p": [3.5, 1.0, 0.8]})]
        events += marker_events(100, [0.5, 0, 0.8], [3.0, 1.0, 0.8], n=120, every=3)
        run_events(s, events, 900)
        return s, cfg

    def test_two_runs_bit_identical(self, arena):
        s1, _ = self.scripted(arena)
        s2, _ = self.scripted(arena)
        assert s1.digests == s2.digests

    def test_record_then_replay_matches(self, arena):
        s, cfg = self.scripted(arena)
        trace = record(s)
        rep = replay(trace, arena, cfg, DroneState(p=[0.5, 0, 0.8], v=np.zeros(3)))
        assert rep.ok and rep.divergence_tick is None
        assert rep.session.digests == s.digests
        assert rep.metrics.rmse == s.metrics().rmse

    def test_replay_with_other_seed_diverges(self, arena):
        s, cfg = self.scripted(arena)
        trace = record(s)
        bad_cfg = SessionConfig(rng_seed=8)
        rep = replay(trace, arena, bad_cfg, DroneState(p=[0.5, 0, 0.8], v=np.zeros(3)))
        assert not rep.ok
        assert rep.divergence_tick == 0

    def test_record_requires_recording_session(self, empty_arena):
        s = Session(empty_arena, SessionConfig(), DroneState(p=[0, 0, 0.8], v=np.zeros(3)))
        with pytest.raises(ValueError):
            record(s)


class TestWallInteraction:
    def test_marker_through_wall_keeps_command_clear(self, arena):
        # drag the marker into the wall slab at x in [2.0, 2.4]; the repulsive
        # field must keep the commanded trajectory at a safe standoff
        cfg = SessionConfig()
        s = Session(arena, cfg, DroneState(p=[0.0, 0.0, 0.8], v=np.zeros(3)))
        events = marker_events(0, [0.0, 0.0, 0.8], [2.3, 0.0, 0.8], n=300, every=4)
        run_events(s, events, 2200)
        m = s.metrics()
        assert m.min_clearance_r < 0.2, "the desired trajectory should penetrate"
        assert m.min_clearance_c > 0.35, f"commanded clearance {m.min_clearance_c}"

"""Trajectory logs and transfer metrics: IO, ECV/NTE oracles, replay."""

import json

import numpy as np
import pytest

from aspace.actions import ActionSpaceConfig, ActionSpaceKind, target_limits
from aspace.dynamics import DT_CTRL
from aspace.metrics import (
    PerturbationProfile,
    Trajectory,
    ecv,
    load_trajectories,
    nte,
    ote_replay,
    perturb_model,
    rollout_actions,
    rollout_policy,
    rollout_push_sequence,
    save_trajectories,
    summarize,
)
from aspace.robot import forward_kinematics, load_robot
from aspace.safety import ConstraintSet
from aspace.tasks import goal_grid, load_task


@pytest.fixture(scope="module")
def planar3():
    return load_robot("planar3")


def synth_traj(rng, s_ctrl=20, n=3, space="jv", robot="planar3",
               q_scale=0.002):
    """Random but shape-correct episode; small q steps keep motion legal."""
    t_pol = s_ctrl // 2
    q = np.cumsum(rng.normal(scale=q_scale, size=(s_ctrl + 1, n)), axis=0)
    return Trajectory(
        space=space, task="reach", robot=robot, seed=0,
        goal=rng.uniform(0.3, 0.5, 3), deploy=False,
        q=q, dq=rng.normal(size=(s_ctrl + 1, n)) * 0.1,
        ee_pos=rng.normal(size=(s_ctrl + 1, 3)),
        ee_rot6=np.tile(np.eye(3)[:, :2].T.ravel(), (s_ctrl + 1, 1)),
        actions=rng.uniform(-1, 1, (t_pol, n)),
        v_d=rng.normal(size=(s_ctrl, n)),
        v_fb=rng.normal(size=(s_ctrl + 1, n)),
        tau=rng.normal(size=(s_ctrl, n)),
        rewards=rng.normal(size=t_pol),
        final_dist=float(rng.uniform(0, 0.2)),
    )


def ecv_oracle(trajs, cs):
    """Step-by-step recount with scalar backward differences."""
    tot, viol = 0, 0
    for tr in trajs:
        x = tr.q
        for t in range(x.shape[0]):
            bad = False
            if t >= 1:
                v = (x[t] - x[t - 1]) / DT_CTRL
                bad = bad or bool(np.any(np.abs(v) > cs.dq_max * (1 + 1e-9)))
            if t >= 2:
                a = (x[t] - 2 * x[t - 1] + x[t - 2]) / DT_CTRL**2
                bad = bad or bool(np.any(np.abs(a) > cs.ddq_max * (1 + 1e-9)))
            if t >= 3:
                j = (x[t] - 3 * x[t - 1] + 3 * x[t - 2] - x[t - 3]) / DT_CTRL**3
                bad = bad or bool(np.any(np.abs(j) > cs.dddq_max * (1 + 1e-9)))
            tot += 1
            viol += bad
    return viol / tot


class TestECV:
    def test_matches_per_step_recount(self, planar3):
        rng = np.random.default_rng(0)
        cs = ConstraintSet.from_model(planar3)
        # mixed population: smooth logs plus rough ones that trip bounds
        trajs = [synth_traj(rng, s_ctrl=rng.integers(8, 40) * 2,
                            q_scale=rng.choice([0.002, 0.05]))
                 for _ in range(40)]
        got = ecv(trajs, cs)
        want = ecv_oracle(trajs, cs)
        assert got == pytest.approx(want, abs=1e-15)
        assert 0.0 < got < 1.0

    def test_still_arm_is_zero(self, planar3):
        rng = np.random.default_rng(1)
        tr = synth_traj(rng)
        tr.q = np.zeros_like(tr.q)
        assert ecv([tr], ConstraintSet.from_model(planar3)) == 0.0

    def test_empty_rejected(self, planar3):
        with pytest.raises(ValueError, match="at least one"):
            ecv([], ConstraintSet.from_model(planar3))


class TestNTE:
    def test_perfect_tracking_is_zero(self):
        rng = np.random.default_rng(2)
        tr = synth_traj(rng)
        tr.v_d = tr.v_fb[1:].copy()
        assert nte(tr, -np.full(3, 2.5), np.full(3, 2.5)) == 0.0

    def test_constant_offset_anchor(self):
        rng = np.random.default_rng(3)
        tr = synth_traj(rng)
        tr.v_d = tr.v_fb[1:] + np.array([0.5, 0.0, 0.0])
        got = nte(tr, -np.full(3, 2.5), np.full(3, 2.5))
        # one of three dims offset by 0.5 over a range of 5
        assert got == pytest.approx(0.5 / 5.0 / 3.0, abs=1e-15)

    def test_normalization_uses_range(self):
        rng = np.random.default_rng(4)
        tr = synth_traj(rng)
        base = nte(tr, -np.full(3, 2.5), np.full(3, 2.5))
        wider = nte(tr, -np.full(3, 5.0), np.full(3, 5.0))
        assert wider == pytest.approx(base / 2.0, rel=1e-12)

    def test_torque_logs_rejected(self):
        rng = np.random.default_rng(5)
        tr = synth_traj(rng, space="jt")
        with pytest.raises(ValueError, match="jt"):
            nte(tr, -np.ones(3), np.ones(3))

    def test_degenerate_limits_rejected(self):
        rng = np.random.default_rng(6)
        tr = synth_traj(rng)
        with pytest.raises(ValueError, match="degenerate"):
            nte(tr, np.ones(3), np.ones(3))


class TestSummarize:
    def test_aggregates_match_brute_force(self, planar3):
        rng = np.random.default_rng(7)
        trajs = [synth_traj(rng, s_ctrl=rng.integers(6, 30) * 2)
                 for _ in range(100)]
        eps = 0.05
        rep = summarize(trajs, eps=eps, ote_values=[0.1, 0.3])
        ers = np.array([tr.rewards.sum() for tr in trajs])
        dists = np.array([tr.final_dist for tr in trajs])
        assert rep.er_mean == pytest.approx(ers.mean(), abs=1e-12)
        assert rep.er_p5 == pytest.approx(np.percentile(ers, 5), abs=1e-12)
        assert rep.er_p95 == pytest.approx(np.percentile(ers, 95), abs=1e-12)
        assert rep.sr == pytest.approx((dists < eps).mean(), abs=0)
        assert rep.acc == pytest.approx(dists.mean(), abs=1e-12)
        assert rep.ote == pytest.approx(0.2, abs=1e-15)
        assert rep.ecv == pytest.approx(
            ecv_oracle(trajs, ConstraintSet.from_model(planar3)), abs=1e-15)
        assert rep.n_episodes == 100

    def test_nte_pools_steps_not_episodes(self, planar3):
        # Two episodes of different lengths: the pooled mean weights by
        # steps, so it differs from averaging the two per-episode values.
        rng = np.random.default_rng(8)
        t1 = synth_traj(rng, s_ctrl=4)
        t2 = synth_traj(rng, s_ctrl=40)
        lo, hi = target_limits(ActionSpaceKind.JV, planar3)
        errs = np.concatenate([
            (np.abs(t.v_d - t.v_fb[1:]) / (hi - lo)).ravel() for t in (t1, t2)
        ])
        rep = summarize([t1, t2], eps=0.05)
        assert rep.nte == pytest.approx(errs.mean(), abs=1e-15)
        per_episode = np.mean([nte(t, lo, hi) for t in (t1, t2)])
        assert abs(rep.nte - per_episode) > 1e-6

    def test_torque_logs_have_no_nte(self, planar3):
        rng = np.random.default_rng(9)
        trajs = [synth_traj(rng, space="jt") for _ in range(3)]
        rep = summarize(trajs, eps=0.05)
        assert rep.nte is None
        assert rep.ote is None

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="at least one"):
            summarize([], eps=0.05)


def random_policy(act_dim, seed=0, scale=0.4):
    rng = np.random.default_rng(seed)

    def act(obs):
        return rng.uniform(-scale, scale, (obs.shape[0], act_dim))

    return act


class TestRecorderAndIO:
    def test_rollout_shapes_and_round_trip(self, planar3, tmp_path):
        task = load_task("reach")
        space = ActionSpaceConfig.build(ActionSpaceKind.JV, planar3)
        goals = goal_grid(task, 2, 2, 1)
        trajs = rollout_policy(planar3, task, space, random_policy(3), goals,
                               seed=3)
        assert len(trajs) == 4
        for tr in trajs:
            s = tr.n_ctrl_steps
            assert s == 2 * tr.n_policy_steps
            assert tr.q.shape == (s + 1, 3)
            assert tr.v_fb.shape[0] == s + 1
            assert tr.tau.shape == (s, 3)
            assert tr.rewards.shape == (tr.n_policy_steps,)
            assert np.isfinite(tr.final_dist)

        path = tmp_path / "log.jsonl"
        save_trajectories(path, trajs)
        back = load_trajectories(path)
        assert len(back) == len(trajs)
        for a, b in zip(trajs, back):
            assert (a.space, a.task, a.robot, a.seed, a.deploy) == \
                   (b.space, b.task, b.robot, b.seed, b.deploy)
            for name in ("goal", "q", "dq", "ee_pos", "ee_rot6", "actions",
                         "v_d", "v_fb", "tau", "rewards"):
                np.testing.assert_array_equal(getattr(a, name), getattr(b, name),
                                              err_msg=name)
            assert a.final_dist == b.final_dist

    def test_early_success_truncates_episode(self, planar3):
        task = load_task("reach")
        space = ActionSpaceConfig.build(ActionSpaceKind.JV, planar3)
        ee_rest = forward_kinematics(planar3, planar3.q_def).position
        goals = np.stack([ee_rest, ee_rest + np.array([0.0, -0.3, 0.0])])
        task.reset_noise = 0.0

        def zero(obs):
            return np.zeros((obs.shape[0], 3))

        trajs = rollout_policy(planar3, task, space, zero, goals, seed=0)
        hold = max(int(round(task.success_hold * 60.0)), 1)
        assert trajs[0].n_policy_steps == hold
        assert trajs[1].n_policy_steps == task.horizon
        assert trajs[0].final_dist < task.reward.eps
        assert trajs[1].final_dist > task.reward.eps

    def test_push_sequence_keeps_box_between_goals(self, planar3):
        task = load_task("push")
        space = ActionSpaceConfig.build(ActionSpaceKind.JV, planar3)
        trajs = rollout_push_sequence(planar3, task, space, random_policy(3),
                                      n_goals=2, n_worlds=2, seed=1)
        assert len(trajs) == 4
        by_world = [trajs[0::2], trajs[1::2]] if trajs[0].goal.shape else None
        # episodes come out batch-major: first finish() yields worlds 0..1
        first, second = trajs[:2], trajs[2:]
        for w in range(2):
            assert first[w].box is not None
            np.testing.assert_allclose(second[w].box[0], first[w].box[-1],
                                       atol=1e-12)

    def test_push_round_trip_keeps_box_fields(self, planar3, tmp_path):
        task = load_task("push")
        space = ActionSpaceConfig.build(ActionSpaceKind.JV, planar3)
        goals = goal_grid(task, 2, 1)[:2]
        trajs = rollout_policy(planar3, task, space, random_policy(3), goals,
                               seed=2)
        path = tmp_path / "push.jsonl"
        save_trajectories(path, trajs)
        back = load_trajectories(path)
        for a, b in zip(trajs, back):
            np.testing.assert_array_equal(a.box, b.box)
            assert a.box_mass == b.box_mass
            assert a.box_friction == b.box_friction


class TestCorruptLogs:
    def write(self, tmp_path, lines):
        p = tmp_path / "bad.jsonl"
        p.write_text("\n".join(lines) + "\n")
        return p

    def header(self, steps=2):
        return json.dumps({
            "kind": "header", "schema": 1, "space": "jv", "task": "reach",
            "robot": "planar3", "seed": 0, "dt": DT_CTRL, "deploy": False,
            "goal": [0.4, 0.0, 0.03], "q0": [0, 0, 0], "dq0": [0, 0, 0],
            "steps": steps,
        })

    def step(self, i):
        z3 = [0.0, 0.0, 0.0]
        return json.dumps({"kind": "step", "i": i, "t": i * DT_CTRL, "a": z3,
                           "vd": z3, "v": z3, "q": z3, "dq": z3,
                           "ee": [0.0] * 9, "tau": z3, "g": [0.4, 0.0, 0.03],
                           **({"r": 0.0} if i % 2 == 1 else {})})

    def final(self):
        z3 = [0.0, 0.0, 0.0]
        return json.dumps({"kind": "final", "q": z3, "dq": z3, "v": z3,
                           "ee": [0.0] * 9, "final_dist": 0.1})

    def test_valid_minimal_log_parses(self, tmp_path):
        p = self.write(tmp_path, [self.header(), self.step(0), self.step(1),
                                  self.final()])
        trajs = load_trajectories(p)
        assert len(trajs) == 1
        assert trajs[0].n_ctrl_steps == 2

    def test_truncated_log_aborts(self, tmp_path):
        p = self.write(tmp_path, [self.header(), self.step(0)])
        with pytest.raises(ValueError, match="truncated"):
            load_trajectories(p)

    def test_garbage_line_reports_lineno(self, tmp_path):
        p = self.write(tmp_path, [self.header(), "{not json", self.final()])
        with pytest.raises(ValueError, match=r"bad\.jsonl:2"):
            load_trajectories(p)

    def test_bad_schema_aborts(self, tmp_path):
        hdr = json.loads(self.header())
        hdr["schema"] = 99
        p = self.write(tmp_path, [json.dumps(hdr), self.final()])
        with pytest.raises(ValueError, match="schema"):
            load_trajectories(p)

    def test_step_outside_episode(self, tmp_path):
        p = self.write(tmp_path, [self.step(0)])
        with pytest.raises(ValueError, match="outside"):
            load_trajectories(p)

    def test_header_inside_episode(self, tmp_path):
        p = self.write(tmp_path, [self.header(), self.step(0), self.header()])
        with pytest.raises(ValueError, match="before previous"):
            load_trajectories(p)

    def test_unknown_kind(self, tmp_path):
        p = self.write(tmp_path, [json.dumps({"kind": "wat"})])
        with pytest.raises(ValueError, match="unknown record kind"):
            load_trajectories(p)

    def test_missing_field_reports_lineno(self, tmp_path):
        rec = json.loads(self.step(0))
        del rec["q"]
        p = self.write(tmp_path, [self.header(), json.dumps(rec), self.step(1),
                                  self.final()])
        with pytest.raises(ValueError, match="corrupt trajectory record"):
            load_trajectories(p)


class TestReplay:
    def test_self_replay_reproduces_log_exactly(self, planar3):
        task = load_task("reach")
        space = ActionSpaceConfig.build(ActionSpaceKind.JV, planar3)
        goals = goal_grid(task, 2, 1, 1)[:1]
        log = rollout_policy(planar3, task, space, random_policy(3, seed=5),
                             goals, seed=5)[0]
        err, mean_err = ote_replay(log, PerturbationProfile.identity())
        assert err.shape == (log.q.shape[0],)
        assert mean_err <= 1e-12

    def test_perturbed_replay_diverges(self, planar3):
        task = load_task("reach")
        space = ActionSpaceConfig.build(ActionSpaceKind.JV, planar3)
        goals = goal_grid(task, 2, 1, 1)[:1]
        log = rollout_policy(planar3, task, space, random_policy(3, seed=6),
                             goals, seed=6)[0]
        _, err_mass = ote_replay(log, PerturbationProfile(
            mass_scale=1.5, friction_scale=1.0, delay_steps=0))
        _, err_delay = ote_replay(log, PerturbationProfile(
            mass_scale=1.0, friction_scale=1.0, delay_steps=2))
        assert err_mass > 1e-6
        assert err_delay > 1e-6

    def test_space_mismatch_rejected(self, planar3):
        task = load_task("reach")
        space = ActionSpaceConfig.build(ActionSpaceKind.JV, planar3)
        goals = goal_grid(task, 2, 1, 1)[:1]
        log = rollout_policy(planar3, task, space, random_policy(3), goals)[0]
        wrong = ActionSpaceConfig.build(ActionSpaceKind.JP, planar3)
        with pytest.raises(ValueError, match="replay config"):
            ote_replay(log, PerturbationProfile.identity(), space=wrong)

    def test_perturb_model_scales_inertia(self, planar3):
        out = perturb_model(planar3, PerturbationProfile(mass_scale=2.0))
        np.testing.assert_allclose(out.mass, planar3.mass * 2.0, atol=0)
        np.testing.assert_allclose(out.inertia, planar3.inertia * 2.0, atol=0)

    def test_profile_from_dict_and_identity(self):
        p = PerturbationProfile.from_dict({"mass_scale": 1.1, "delay_steps": 3})
        assert p.mass_scale == 1.1
        assert p.friction_scale == 1.3
        assert p.delay_steps == 3
        ident = PerturbationProfile.identity()
        assert (ident.mass_scale, ident.friction_scale, ident.delay_steps) == \
               (1.0, 1.0, 0)

    def test_open_loop_rollout_is_deterministic(self, planar3):
        task = load_task("reach")
        space = ActionSpaceConfig.build(ActionSpaceKind.MI_JP, planar3)
        rng = np.random.default_rng(10)
        actions = rng.uniform(-1, 1, (20, 3))
        q0, dq0 = planar3.q_def, np.zeros(3)
        goal = np.array([0.4, 0.1, 0.03])
        t1 = rollout_actions(planar3, task, space, actions, q0, dq0, goal)[0]
        t2 = rollout_actions(planar3, task, space, actions, q0, dq0, goal)[0]
        np.testing.assert_array_equal(t1.q, t2.q)
        np.testing.assert_array_equal(t1.tau, t2.tau)
        assert t1.n_policy_steps == 20

import math

import numpy as np
import pytest

from deep_icac.envs import (
    EpisodeOver,
    GraspToyEnv,
    ReachEnv,
    ReachEnvState,
    forward_kinematics,
    reachable,
    solve_success_radius,
    write_ppm,
)


@pytest.fixture(scope="module")
def env():
    return ReachEnv()


def closed_form_gripper(links, q):
    l1, l2, l3 = links
    a1 = math.pi / 2 + q[0]
    a2 = a1 + q[1]
    a3 = a2 + q[2]
    return np.array(
        [
            l1 * math.cos(a1) + l2 * math.cos(a2) + l3 * math.cos(a3),
            l1 * math.sin(a1) + l2 * math.sin(a2) + l3 * math.sin(a3),
        ]
    )


def test_forward_kinematics_matches_closed_form(env):
    rng = np.random.default_rng(0)
    for _ in range(100):
        q = rng.uniform(-math.pi / 2, math.pi / 2, 3)
        np.testing.assert_allclose(forward_kinematics(env.links, q)[-1], closed_form_gripper(env.links, q), atol=1e-6)


def test_home_pose_points_up(env):
    np.testing.assert_allclose(forward_kinematics(env.links, np.zeros(3))[-1], [0.0, 1.0], atol=1e-12)


def test_reachable_contains_fk_samples(env):
    rng = np.random.default_rng(1)
    q = rng.uniform(-math.pi / 2, math.pi / 2, (300, 3))
    pts = np.array([forward_kinematics(env.links, qi)[-1] for qi in q])
    # base angle grid is 0.5 degrees, so allow points hugging the boundary a tiny slack
    assert reachable(env.links, pts, n_base=1441).mean() > 0.98
    assert not reachable(env.links, [[0.0, -0.95]])[0]


def test_reset_determinism_and_validity(env):
    a = env.reset(np.random.default_rng(42))
    b = env.reset(np.random.default_rng(42))
    np.testing.assert_array_equal(a, b)
    rng = np.random.default_rng(5)
    targets = []
    for _ in range(1000):
        env.reset(rng)
        targets.append(env.state.target_pos)
        np.testing.assert_array_equal(env.state.joint_angles, np.zeros(3))
    targets = np.array(targets)
    assert reachable(env.links, targets).all()
    d = np.linalg.norm(targets[:, None] - env.holdout[None], axis=-1)
    assert d.min() >= env.cfg.holdout_exclusion


def test_holdout_follows_training_rule(env):
    home = forward_kinematics(env.links, np.zeros(3))[-1]
    assert env.holdout.shape == (20, 2) and reachable(env.links, env.holdout).all()
    d = np.linalg.norm(env.holdout - home, axis=1)
    assert d.min() > env.success_radius
    assert np.all(np.diff(d) > 0)  # one point per difficulty band, in band order
    np.testing.assert_array_equal(env.holdout, ReachEnv().holdout)


def test_different_seeds_differ(env):
    differ = 0
    for k in range(100):
        a = env.reset(np.random.default_rng(2 * k))
        b = env.reset(np.random.default_rng(2 * k + 1))
        differ += not np.array_equal(a, b)
    assert differ >= 95


def test_success_zone_fraction():
    env = ReachEnv()
    assert abs(env.success_zone_fraction() - 0.09) <= 0.01
    assert env.success_radius == pytest.approx(solve_success_radius(env.links, 0.09), abs=2e-3)
    assert env.success_zone_fraction(0.0) == 0.0
    assert env.success_zone_fraction(2.5) == 1.0


def test_success_on_target(env):
    rng = np.random.default_rng(0)
    q = np.array([0.3, -0.4, 0.2])
    target = forward_kinematics(env.links, q + np.array([0.0, 0.0, np.pi / 8]))[-1]
    env.reset(rng, target=target)
    env.state.joint_angles = q.copy()
    out = env.step([0.0, 0.0, 1.0])
    assert out.success and out.terminal
    assert out.r_dense == out.r_sparse == 10.0
    with pytest.raises(EpisodeOver):
        env.step([0.0, 0.0, 0.0])


def test_dense_reward_is_negative_distance(env):
    env.reset(np.random.default_rng(0), target=[0.0, 0.63])
    out = env.step([0.0, 0.0, 0.0])
    assert not out.success
    assert out.r_dense == pytest.approx(-0.37)
    assert out.r_sparse == 0.0


def test_reward_consistency_and_cap(env):
    rng = np.random.default_rng(3)
    for _ in range(200):
        env.reset(rng)
        n = 0
        while True:
            out = env.step(rng.uniform(-1, 1, 3))
            n += 1
            assert (out.r_sparse == 10.0) == (out.r_dense == 10.0) == out.success
            assert np.all(np.abs(env.state.joint_angles) <= math.pi / 2)
            if out.terminal:
                break
        assert n <= 10


def test_render_purity_and_colors(env):
    rng = np.random.default_rng(4)
    for _ in range(20):
        st = ReachEnvState(rng.uniform(-1.5, 1.5, 3), np.array([0.5, 0.5]))
        img = env.render(st)
        np.testing.assert_array_equal(img, env.render(st))
        assert img.min() >= 0.0 and img.max() <= 1.0
    st = ReachEnvState(np.array([1.2, 0.5, 0.5]), np.array([-0.6, 0.4]))
    img = env.render(st)
    H, W = img.shape[:2]
    col = int((-0.6 + 1.1) / 2.2 * W)
    row = int((1.1 - 0.4) / 2.2 * H)
    assert img[row, col, 0] == img[..., 0].max()


def test_joint_move_changes_pixels(env):
    rng = np.random.default_rng(6)
    for _ in range(100):
        q = rng.uniform(-1.0, 1.0, 3)
        j = rng.integers(3)
        st = ReachEnvState(q, env.sample_target(rng))
        q2 = q.copy()
        q2[j] += env.cfg.max_delta
        assert np.any(env.render(st) != env.render(ReachEnvState(q2, st.target_pos)))


def test_scripted_policy_reaches_holdout(env):
    rng = np.random.default_rng(0)
    rets = []
    for t in env.holdout:
        env.reset(rng, target=t)
        ret = 0.0
        while not env.state.done:
            ret += env.step(env.scripted_action()).r_dense
        rets.append(ret)
    assert np.mean(rets) > 5.0


def test_ppm_dump(tmp_path, env):
    img = env.reset(np.random.default_rng(0))
    write_ppm(tmp_path / "obs.ppm", img)
    raw = (tmp_path / "obs.ppm").read_bytes()
    assert raw.startswith(b"P6\n32 32\n255\n")
    assert len(raw) == len(b"P6\n32 32\n255\n") + 32 * 32 * 3


# --- grasp toy ----------------------------------------------------------------


def test_grasp_success():
    env = GraspToyEnv()
    env.reset(np.random.default_rng(0), object_pos=0.3)
    for _ in range(2):
        out = env.step([1.0, -1.0])  # 0.15 per step -> 0.30
    assert not out.terminal
    out = env.step([0.0, 1.0])
    assert out.success and out.terminal and out.r_dense == out.r_sparse == 10.0
    assert env.state.grasped and not env.state.toppled


def test_grasp_topple_off_center_and_fast():
    env = GraspToyEnv()
    env.reset(np.random.default_rng(0), object_pos=0.4)
    env.step([1.0, -1.0])
    env.step([1.0, -1.0])
    out = env.step([0.0, 1.0])  # closes 0.1 away: inside contact width, outside tolerance
    assert env.state.toppled and out.terminal and out.r_dense == out.r_sparse == -10.0
    env.reset(np.random.default_rng(0), object_pos=0.3)
    env.step([1.0, -1.0])
    out = env.step([1.0, 1.0])  # arrives on the object while moving fast
    assert env.state.toppled and not env.state.grasped


def test_grasp_sweep_with_closed_hand_topples():
    env = GraspToyEnv()
    env.reset(np.random.default_rng(0), object_pos=0.5)
    env.step([0.0, 1.0])  # close far from object: harmless
    assert not env.state.toppled
    for _ in range(5):
        out = env.step([1.0, 1.0])
        if out.terminal:
            break
    assert env.state.toppled


def test_grasp_cap_and_rewards():
    env = GraspToyEnv()
    env.reset(np.random.default_rng(1), object_pos=-0.5)
    n = 0
    while True:
        out = env.step([0.0, -1.0])
        n += 1
        assert out.r_sparse == 0.0 and out.r_dense == pytest.approx(-env.distance())
        if out.terminal:
            break
    assert n == 20 and not out.success


def test_grasp_render():
    env = GraspToyEnv()
    img = env.reset(np.random.default_rng(2))
    assert img.shape == (16, 32, 3)
    np.testing.assert_array_equal(img, env.render(env.state))

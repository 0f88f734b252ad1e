import numpy as np
import pytest

from equivact.codecs import CodecId, encode, objective_to_vec
from equivact.embodiment import act_on_config
from equivact.policy import DenoiserModel
from equivact.se3 import Pose
from equivact.sim import (
    MAX_STEP_TRANS,
    OBS_DIM,
    EpisodeStep,
    ExpertModel,
    evaluate,
    gen_episode,
    hidden_transform,
    init_episode,
    make_dataset,
    observe,
    replay_episode,
    sample_embodiment,
    step_toward,
    world_positions_visible,
)

NOMINAL = sample_embodiment(0)
MOVED = sample_embodiment(0, transformed=True)
MOVED_T = sample_embodiment(0, transformed=True, ee_translation=True)


def test_embodiment_determinism():
    a, b = sample_embodiment(3), sample_embodiment(3)
    assert a.to_dict() == b.to_dict()
    assert sample_embodiment(4).to_dict() != a.to_dict()


@pytest.mark.parametrize("moved", [MOVED, MOVED_T])
def test_transformed_spec_is_group_action(moved):
    g = hidden_transform(moved is MOVED_T)
    state = init_episode(NOMINAL, 0, 0)
    m0 = NOMINAL.config(state.gripper, state.cam)
    m1 = moved.config(state.gripper, state.cam)
    expected = act_on_config(g, m0)
    assert m1.ee_in_base.allclose(expected.ee_in_base, 1e-12)
    assert m1.cam_in_base.allclose(expected.cam_in_base, 1e-12)


def test_camera_sees_workspace():
    assert world_positions_visible(NOMINAL, 100, seed=0)
    assert world_positions_visible(MOVED, 100, seed=1)


@pytest.mark.parametrize("spec", [NOMINAL, MOVED, MOVED_T])
def test_expert_replay_succeeds(spec):
    for e in range(20):
        steps = gen_episode(spec, 11, e)
        assert replay_episode(spec, steps, 11, e).success


def test_observations_do_not_depend_on_embodiment():
    for e in range(5):
        a, b = gen_episode(NOMINAL, 2, e), gen_episode(MOVED_T, 2, e)
        assert len(a) == len(b)
        for s, t in zip(a, b):
            assert s.obs.shape == (OBS_DIM,)
            np.testing.assert_allclose(s.obs, t.obs, atol=1e-10, rtol=0)


def test_expert_step_cap():
    for e in range(10):
        steps = gen_episode(NOMINAL, 3, e)
        for s in steps:
            move = np.linalg.norm(s.expert.target_ee_in_base.t - s.m.ee_in_base.t)
            assert move <= MAX_STEP_TRANS + 1e-12


def test_step_toward_caps_rotation_and_translation():
    a = Pose.identity()
    b = Pose(np.diag([1.0, -1.0, -1.0]), [1.0, 0, 0])  # half turn, 1 m away
    c = step_toward(a, b)
    assert np.linalg.norm(c.t) == pytest.approx(MAX_STEP_TRANS)
    assert np.arccos((np.trace(c.R) - 1) / 2) == pytest.approx(0.2)


def test_robust_dataset_invariant_to_ee_rotation_only():
    n = make_dataset(NOMINAL, 5, CodecId.OURS_ROBUST, seed=4)
    r = make_dataset(MOVED, 5, CodecId.OURS_ROBUST, seed=4)
    t = make_dataset(MOVED_T, 5, CodecId.OURS_ROBUST, seed=4)
    assert len(n) == len(r) == len(t)
    trans_gap = 0.0
    for (o1, y1), (o2, y2), (o3, y3) in zip(n, r, t):
        np.testing.assert_allclose(o1, o2, atol=1e-9)
        np.testing.assert_allclose(y1, y2, atol=1e-9)
        np.testing.assert_allclose(y1[3:], y3[3:], atol=1e-9)
        trans_gap = max(trans_gap, np.linalg.norm(y1[:3] - y3[:3]))
    assert trans_gap > 1e-3


def test_base_frame_dataset_shifts_with_base():
    g = hidden_transform()
    n = make_dataset(NOMINAL, 5, CodecId.BE, seed=4)
    r = make_dataset(MOVED, 5, CodecId.BE, seed=4)
    shifts = []
    for (_, y1), (_, y2) in zip(n, r):
        np.testing.assert_allclose(y2[:3], g.base_redef.apply(y1[:3]), atol=1e-9)
        shifts.append(y2[:3] - y1[:3])
    assert np.linalg.norm(np.mean(shifts, axis=0)) > 0.1


def test_ee_null_motion_is_identity():
    found = 0
    for s in gen_episode(NOMINAL, 5, 0):
        if s.expert.target_ee_in_base.allclose(s.m.ee_in_base, 0.0):
            y = objective_to_vec(encode(CodecId.EE, s.m, s.expert))
            np.testing.assert_allclose(y[:9], [0, 0, 0, 1, 0, 0, 0, 1, 0], atol=1e-12)
            found += 1
    assert found >= 1


def test_episode_step_serialization():
    s = gen_episode(MOVED, 6, 1)[3]
    r = EpisodeStep.from_dict(s.to_dict())
    assert r.expert.gripper == s.expert.gripper and r.spec_id == s.spec_id
    np.testing.assert_array_equal(r.obs, s.obs)
    assert r.m.cam_in_base.allclose(s.m.cam_in_base, 1e-12)
    bad = s.to_dict()
    bad["obs"] = bad["obs"][:-1]
    with pytest.raises(ValueError):
        EpisodeStep.from_dict(bad)


def test_observe_matches_first_step():
    state = init_episode(NOMINAL, 8, 2)
    np.testing.assert_array_equal(observe(state), gen_episode(NOMINAL, 8, 2)[0].obs)


@pytest.mark.parametrize("codec", list(CodecId))
def test_expert_as_model_upper_bound(codec):
    for spec in (NOMINAL, MOVED):
        rate, results = evaluate(ExpertModel(), codec, spec, episodes=10, seed=5)
        assert rate == 1.0 and len(results) == 10


def test_untrained_model_fails():
    rate, _ = evaluate(DenoiserModel(OBS_DIM, hidden=8), CodecId.OURS_ROBUST, NOMINAL, episodes=10, seed=6)
    assert rate <= 0.1


def test_trajectory_file_round_trip(tmp_path):
    from equivact.sim import load_episodes, save_episodes

    steps = gen_episode(MOVED, 7, 0) + gen_episode(MOVED, 7, 1)
    path = tmp_path / "traj.jsonl"
    save_episodes(path, steps)
    back = load_episodes(path)
    assert len(back) == len(steps)
    for a, b in zip(steps, back):
        np.testing.assert_array_equal(a.obs, b.obs)
        assert a.episode_id == b.episode_id and a.step_id == b.step_id
        assert a.expert.target_ee_in_base.allclose(b.expert.target_ee_in_base, 1e-12)
    path.write_text(path.read_text() + "{oops\n")
    with pytest.raises(ValueError, match=f":{len(steps) + 1}:"):
        load_episodes(path)

import numpy as np
import pytest

from equivact.attention import (
    AttentionWeights,
    BehindCamera,
    CameraIntrinsics,
    DimensionNotMultipleOf4,
    TokenSet,
    action_positional_embedding,
    on_screen,
    pose_embedded_attention,
    project_camera_point,
    project_point,
    sigma,
    vanilla_attention,
)
from equivact.codecs import ActionObjective, CodecId, decode, encode
from equivact.embodiment import Action, EmbodimentConfig, GroupElement, act_on_config
from equivact.se3 import Pose, random_pose, random_rotation, random_rotation_bounded

INTR = CameraIntrinsics(500.0, 500.0, 320.0, 240.0, 640.0, 480.0)


def _tokens(rng, n, d, poses=None):
    poses = poses if poses is not None else [random_pose(rng) for _ in range(n)]
    return TokenSet(rng.standard_normal((n, d)), rng.uniform(-1, 1, (n, 2)), poses)


def test_sigma_basics():
    np.testing.assert_array_equal(sigma(Pose.identity(), 8), np.eye(8))
    with pytest.raises(DimensionNotMultipleOf4):
        sigma(Pose.identity(), 6)


def test_sigma_homomorphism():
    rng = np.random.default_rng(0)
    for _ in range(50):
        A, B = random_pose(rng), random_pose(rng)
        np.testing.assert_allclose(sigma(A, 8) @ sigma(B, 8), sigma(A @ B, 8), atol=1e-12, rtol=0)


def test_single_token_returns_its_value():
    rng = np.random.default_rng(1)
    ts = _tokens(rng, 1, 8)
    w = AttentionWeights.random(8, rng)
    x = ts.tokens + ts.planes @ w.Wp.T
    np.testing.assert_allclose(pose_embedded_attention(ts, w)[0], w.Wv @ x[0], atol=1e-12)


def test_identity_poses_reduce_to_vanilla():
    rng = np.random.default_rng(2)
    ts = _tokens(rng, 10, 16, [Pose.identity()] * 10)
    w = AttentionWeights.random(16, rng)
    ref = vanilla_attention(ts.tokens + ts.planes @ w.Wp.T, w)
    np.testing.assert_allclose(pose_embedded_attention(ts, w), ref, atol=1e-13)


def test_base_invariance():
    rng = np.random.default_rng(3)
    for _ in range(20):
        ts = _tokens(rng, 64, 32)
        w = AttentionWeights.random(32, rng)
        B = random_pose(rng)
        moved = TokenSet(ts.tokens, ts.planes, [B @ p for p in ts.cam_poses])
        o1, a1 = pose_embedded_attention(ts, w, return_weights=True)
        o2, a2 = pose_embedded_attention(moved, w, return_weights=True)
        np.testing.assert_allclose(o1, o2, atol=1e-8, rtol=0)
        np.testing.assert_allclose(a1, a2, atol=1e-10, rtol=0)


def test_vanilla_attention_is_not_pose_aware():
    rng = np.random.default_rng(4)
    ts = _tokens(rng, 8, 8)
    w = AttentionWeights.random(8, rng)
    moved = TokenSet(ts.tokens, ts.planes, [Pose(random_rotation(rng), p.t) for p in ts.cam_poses])
    assert np.max(np.abs(pose_embedded_attention(ts, w) - pose_embedded_attention(moved, w))) > 1e-3


def test_token_validation():
    with pytest.raises(DimensionNotMultipleOf4):
        TokenSet(np.zeros((2, 6)), np.zeros((2, 2)), [Pose.identity()] * 2)
    with pytest.raises(ValueError):
        TokenSet(np.zeros((2, 8)), np.zeros((3, 2)), [Pose.identity()] * 2)


def test_projection_examples():
    np.testing.assert_allclose(project_camera_point(INTR, [0, 0, 1]), [0.5, 0.5])
    np.testing.assert_allclose(project_camera_point(INTR, [0.1, 0, 1]), [0.578125, 0.5], atol=1e-15)
    with pytest.raises(BehindCamera):
        project_camera_point(INTR, [0.1, 0.2, 0.0])
    assert not on_screen(project_camera_point(INTR, [5.0, 0, 1]))


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        CameraIntrinsics(-1, 500, 320, 240, 640, 480)
    with pytest.raises(ValueError):
        CameraIntrinsics(500, 500, 700, 240, 640, 480)


def _cam_looking_at_ee(rng):
    E = random_pose(rng)
    C = E @ Pose(random_rotation(rng), [0, 0, 0]) @ Pose.from_translation([0, 0, -0.5])
    return EmbodimentConfig(E, C)


def test_positional_embedding_of_principal_point():
    rng = np.random.default_rng(5)
    m = _cam_looking_at_ee(rng)
    Wp = rng.standard_normal((8, 2))
    y = encode(CodecId.EE, m, Action(m.ee_in_base))
    np.testing.assert_allclose(action_positional_embedding(INTR, m, CodecId.EE, y, Wp), Wp @ [0.5, 0.5], atol=1e-12)


def test_positional_embedding_transported_by_ours_full():
    rng = np.random.default_rng(6)
    Wp = rng.standard_normal((8, 2))
    for _ in range(50):
        m = _cam_looking_at_ee(rng)
        y = ActionObjective.from_pose(Pose(random_rotation_bounded(rng, 0.5), rng.uniform(-0.05, 0.05, 3)))
        g = GroupElement(random_pose(rng), Pose(random_rotation(rng), np.zeros(3)))
        e1 = action_positional_embedding(INTR, m, CodecId.OURS_FULL, y, Wp)
        e2 = action_positional_embedding(INTR, act_on_config(g, m), CodecId.OURS_FULL, y, Wp)
        np.testing.assert_allclose(e1, e2, atol=1e-9)


def test_positional_embedding_matches_decode_project():
    rng = np.random.default_rng(7)
    Wp = rng.standard_normal((4, 2))
    m = _cam_looking_at_ee(rng)
    y = ActionObjective.from_pose(Pose(random_rotation(rng), rng.uniform(-0.05, 0.05, 3)))
    p = decode(CodecId.CE, m, y).target_ee_in_base.t
    c = m.cam_in_base.inv().apply(p)
    uv = [(500 * c[0] / c[2] + 320) / 640, (500 * c[1] / c[2] + 240) / 480]
    np.testing.assert_allclose(action_positional_embedding(INTR, m, CodecId.CE, y, Wp), Wp @ uv, atol=1e-12)
    np.testing.assert_allclose(project_point(INTR, m.cam_in_base, p), uv, atol=1e-14)

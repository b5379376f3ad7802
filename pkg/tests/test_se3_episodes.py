import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from srulab.benchmark.episodes import (
    compute_targets,
    decode_step_input,
    encode_step_input,
    episode_from_motions,
    generate_batch,
    generate_episode,
)
from srulab.benchmark.se3 import (
    Pose,
    compose,
    euler_zyx,
    rot_x,
    rot_y,
    rot_z,
    sample_motion,
    sample_motions,
    spiral_trajectory,
    transform_point,
    world_poses,
)


def homogeneous(R, t):
    M = np.eye(4)
    M[:3, :3] = R
    M[:3, 3] = t
    return M


# -- transform_point / compose -------------------------------------------------

def test_identity_transform():
    p = np.array([1.5, -2.0, 3.0])
    npt.assert_array_equal(transform_point(Pose.identity(), p), p)


def test_pure_translation():
    npt.assert_array_equal(transform_point(Pose(np.eye(3), [1, 0, 0]), np.zeros(3)), [1, 0, 0])


def test_axis_rotation():
    m = Pose(rot_z(np.pi / 2), np.zeros(3))
    npt.assert_allclose(transform_point(m, [1, 0, 0]), [0, 1, 0], atol=1e-15)


def test_compose_identity():
    m = sample_motion(np.random.default_rng(0))
    c = compose(Pose.identity(), m)
    npt.assert_array_equal(c.R, m.R)
    npt.assert_array_equal(c.t, m.t)


def test_compose_translations():
    c = compose(Pose(np.eye(3), [1, 2, 3]), Pose(np.eye(3), [-4, 0.5, 1]))
    npt.assert_array_equal(c.t, [-3, 2.5, 4])
    npt.assert_array_equal(c.R, np.eye(3))


def test_compose_and_transform_match_homogeneous_oracle():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(10_000):
        m1, m2 = sample_motion(rng), sample_motion(rng)
        p = rng.uniform(-5, 5, 3)
        M = homogeneous(m2.R, m2.t) @ homogeneous(m1.R, m1.t)
        c = compose(m2, m1)
        worst = max(worst, np.abs(c.matrix() - M).max())
        ref = (M @ np.append(p, 1.0))[:3]
        worst = max(worst, np.abs(transform_point(c, p) - ref).max())
        worst = max(worst, np.abs(transform_point(m2, transform_point(m1, p)) - ref).max())
    assert worst < 1e-9


def test_inverse():
    m = sample_motion(np.random.default_rng(2))
    c = compose(m, m.inverse())
    npt.assert_allclose(c.matrix(), np.eye(4), atol=1e-12)


# -- sampling ----------------------------------------------------------------

def test_euler_matches_axis_product():
    rng = np.random.default_rng(3)
    for _ in range(50):
        a, b, c = rng.uniform(-np.pi, np.pi, 3)
        npt.assert_allclose(euler_zyx(a, b, c), rot_z(a) @ rot_y(b) @ rot_x(c), atol=1e-14)


def test_sampled_translations_in_range_and_rotations_valid():
    R, t = sample_motions(np.random.default_rng(4), (10_000,))
    assert np.all(np.abs(t) <= 2.0)
    eye_err = np.abs(np.einsum("nji,njk->nik", R, R) - np.eye(3)).max()
    assert eye_err < 1e-9
    npt.assert_allclose(np.linalg.det(R), 1.0, atol=1e-9)
    # both signs and near-full range are exercised
    assert t.min() < -1.99 and t.max() > 1.99


def test_sample_motion_deterministic():
    a = sample_motion(np.random.default_rng(5))
    b = sample_motion(np.random.default_rng(5))
    npt.assert_array_equal(a.R, b.R)
    npt.assert_array_equal(a.t, b.t)
    assert a.is_valid()


# -- spiral ------------------------------------------------------------------

def test_spiral_zero_turn_is_straight():
    poses = world_poses(spiral_trajectory(8, turn=0.0))
    xyz = np.array([p.t for p in poses])
    npt.assert_allclose(xyz[:, 1:], 0.0, atol=1e-15)
    assert np.all(np.diff(xyz[:, 0]) > 0)


def test_spiral_is_planar_and_accumulates_heading():
    T, turn = 12, 0.3
    poses = world_poses(spiral_trajectory(T, turn=turn))
    npt.assert_allclose([p.t[2] for p in poses], 0.0, atol=1e-15)
    heading = np.arctan2(poses[-1].R[1, 0], poses[-1].R[0, 0])
    expected = np.angle(np.exp(1j * T * turn))
    assert heading == pytest.approx(expected, abs=1e-12)


def test_spiral_motions_are_valid_poses():
    assert all(m.is_valid() for m in spiral_trajectory(15))


# -- episodes ----------------------------------------------------------------

def test_episode_shape_and_labels():
    ep = generate_episode(15, np.random.default_rng(6))
    assert ep.T == 15
    assert ep.landmarks.shape == (15, 3)
    assert set(np.unique(ep.labels)) <= {0.0, 1.0}
    assert np.all(np.abs(ep.landmarks) <= 5.0)
    npt.assert_array_equal(ep.R[0], np.eye(3))
    npt.assert_array_equal(ep.t[0], 0.0)


def test_labels_only_binary_large_batch():
    b = generate_batch(15, 500, np.random.default_rng(7))
    assert set(np.unique(b.labels)) == {0.0, 1.0}


def test_identity_motions_targets_equal_observations():
    T = 6
    lm = np.random.default_rng(8).uniform(-5, 5, (T, 3))
    ep = episode_from_motions([Pose.identity()] * T, lm, np.zeros(T))
    npt.assert_array_equal(ep.targets, lm)


def test_last_landmark_maps_to_itself():
    ep = generate_episode(9, np.random.default_rng(9))
    npt.assert_array_equal(ep.targets[-1], ep.landmarks[-1])


def test_frame_change_sign():
    # the robot advances +1 along x: old coordinates shift by -1
    forward = Pose(np.eye(3), [-1.0, 0.0, 0.0])
    ep = episode_from_motions([Pose.identity(), forward], [[2.0, 0, 0], [0, 0, 0]], [0, 1])
    npt.assert_array_equal(ep.targets[0], [1.0, 0.0, 0.0])


def _matrix_chain_targets(ep):
    T = ep.T
    out = []
    for k in range(T):
        M = np.eye(4)
        for j in range(k + 1, T):
            M = homogeneous(ep.R[j], ep.t[j]) @ M
        out.append((M @ np.append(ep.landmarks[k], 1.0))[:3])
    return np.array(out)


@pytest.mark.parametrize("seed", range(10))
def test_targets_match_matrix_chain(seed):
    ep = generate_episode(15, np.random.default_rng(seed))
    npt.assert_allclose(ep.targets, _matrix_chain_targets(ep), atol=1e-9)


def test_batched_targets_equal_per_episode():
    b = generate_batch(7, 20, np.random.default_rng(10))
    for n in range(20):
        npt.assert_allclose(b.targets[n], _matrix_chain_targets(b[n]), atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 13))
def test_targets_invariant_to_rechunking(seed, cut):
    """Register to frame `cut` first, then carry the partial result to the final frame."""
    ep = generate_episode(14, np.random.default_rng(seed))
    head = compute_targets(ep.landmarks[:cut + 1], ep.R[:cut + 1], ep.t[:cut + 1])
    tail = ep.landmarks[cut:].copy()
    full = []
    for k in range(cut + 1):
        tail[0] = head[k]
        full.append(compute_targets(tail, ep.R[cut:], ep.t[cut:])[0])
    npt.assert_allclose(np.array(full), ep.targets[:cut + 1], atol=1e-9)


def test_generation_deterministic():
    a = generate_batch(15, 4, np.random.default_rng(11))
    b = generate_batch(15, 4, np.random.default_rng(11))
    npt.assert_array_equal(a.inputs(), b.inputs())
    npt.assert_array_equal(a.targets, b.targets)


# -- step encoding -------------------------------------------------------------

def test_encode_identity_motion():
    v = encode_step_input([1.0, 2.0, 3.0], 1.0, np.eye(3), np.zeros(3))
    assert v.shape == (16,)
    npt.assert_array_equal(v[4:13], np.eye(3).reshape(-1))
    npt.assert_array_equal(v[13:], 0.0)
    npt.assert_array_equal(v[:4], [1, 2, 3, 1])


def test_encode_decode_round_trip():
    ep = generate_batch(5, 3, np.random.default_rng(12))
    v = ep.inputs()
    assert v.shape == (3, 5, 16)
    l, c, R, t = decode_step_input(v)
    npt.assert_array_equal(l, ep.landmarks)
    npt.assert_array_equal(c, ep.labels)
    npt.assert_array_equal(R, ep.R)
    npt.assert_array_equal(t, ep.t)

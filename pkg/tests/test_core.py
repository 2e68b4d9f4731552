import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skillab.core import (
    Action,
    ChannelLayout,
    ConfigError,
    LayoutError,
    MotionObservation,
    SkillCode,
    assemble_motion_obs,
    assemble_policy_obs,
    one_hot,
    split_channels,
)


def random_channels(rng, j):
    g = rng.standard_normal(3)
    g /= np.linalg.norm(g)
    return dict(
        v=rng.standard_normal(3),
        omega=rng.standard_normal(3),
        gravity=g,
        q=rng.standard_normal(j),
        dq=rng.standard_normal(j),
    )


def test_dimensions_match_12_joint_robot():
    layout = ChannelLayout(12)
    assert layout.motion_dim == 33
    assert layout.policy_dim == 45


@pytest.mark.parametrize("j", [1, 4, 12])
def test_policy_dim_exceeds_motion_dim_by_joint_count(j):
    layout = ChannelLayout(j)
    assert layout.policy_dim - layout.motion_dim == j


def test_rest_state_is_zero_except_gravity():
    layout = ChannelLayout(12)
    m = assemble_motion_obs(
        layout, np.zeros(3), np.zeros(3), [0, 0, -1], np.zeros(12), np.zeros(12)
    )
    expected = np.zeros(33)
    expected[8] = -1.0
    assert np.array_equal(m.values, expected)


def test_assemble_split_round_trip_is_identity():
    rng = np.random.default_rng(1234)
    layout = ChannelLayout(12)
    for _ in range(1000):
        ch = random_channels(rng, 12)
        m = assemble_motion_obs(layout, **ch)
        for name, arr in ch.items():
            assert np.array_equal(split_channels(m, [name]), arr)


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=1, max_value=16), st.integers(min_value=0, max_value=2**31))
def test_round_trip_any_joint_count(j, seed):
    rng = np.random.default_rng(seed)
    layout = ChannelLayout(j)
    ch = random_channels(rng, j)
    m = assemble_motion_obs(layout, **ch)
    for name, arr in ch.items():
        assert np.array_equal(split_channels(m, [name]), arr)


def test_policy_obs_concatenates_and_recovers_inputs():
    rng = np.random.default_rng(7)
    layout = ChannelLayout(12)
    m = assemble_motion_obs(layout, **random_channels(rng, 12))
    a = Action(rng.standard_normal(12))
    p = assemble_policy_obs(m, a)
    assert p.values.shape == (45,)
    assert np.array_equal(p.values[: layout.motion_dim], m.values)
    assert np.array_equal(p.values[layout.motion_dim :], a.values)


def test_zero_policy_obs_except_gravity():
    layout = ChannelLayout(12)
    m = assemble_motion_obs(
        layout, np.zeros(3), np.zeros(3), [0, 0, -1], np.zeros(12), np.zeros(12)
    )
    p = assemble_policy_obs(m, Action(np.zeros(12)))
    expected = np.zeros(45)
    expected[8] = -1.0
    assert np.array_equal(p.values, expected)


def test_split_channel_widths():
    rng = np.random.default_rng(3)
    layout = ChannelLayout(12)
    m = assemble_motion_obs(layout, **random_channels(rng, 12))
    assert split_channels(m, ["v", "omega"]).shape == (6,)
    assert split_channels(m, ["q", "dq"]).shape == (24,)
    full = split_channels(m, ["v", "omega", "gravity", "q", "dq"])
    assert np.array_equal(full, m.values)


def test_split_channels_batched_arrays():
    rng = np.random.default_rng(5)
    layout = ChannelLayout(4)
    batch = rng.standard_normal((10, layout.motion_dim))
    out = split_channels(batch, ["v", "gravity"], layout)
    assert out.shape == (10, 6)
    assert np.array_equal(out[:, :3], batch[:, :3])
    assert np.array_equal(out[:, 3:], batch[:, 6:9])


def test_split_canonical_order_ignores_request_order():
    rng = np.random.default_rng(9)
    layout = ChannelLayout(4)
    m = assemble_motion_obs(layout, **random_channels(rng, 4))
    assert np.array_equal(
        split_channels(m, ["dq", "v"]), split_channels(m, ["v", "dq"])
    )


def test_one_hot_basis_vectors():
    assert np.array_equal(one_hot(SkillCode(0, 4)), [1, 0, 0, 0])
    assert np.array_equal(one_hot(SkillCode(3, 4)), [0, 0, 0, 1])


def test_one_hot_partition_of_unity_and_orthonormal():
    vecs = np.stack([one_hot(SkillCode(i, 6)) for i in range(6)])
    assert np.array_equal(vecs.sum(axis=0), np.ones(6))
    assert np.array_equal(vecs @ vecs.T, np.eye(6))


def test_errors():
    layout = ChannelLayout(12)
    with pytest.raises(LayoutError):
        assemble_motion_obs(
            layout, np.zeros(3), np.zeros(3), [0, 0, -1], np.zeros(11), np.zeros(12)
        )
    with pytest.raises(LayoutError):  # non-unit gravity
        assemble_motion_obs(
            layout, np.zeros(3), np.zeros(3), [0, 0, -2], np.zeros(12), np.zeros(12)
        )
    rng = np.random.default_rng(0)
    m = assemble_motion_obs(layout, **random_channels(rng, 12))
    with pytest.raises(ConfigError):
        split_channels(m, ["v", "nope"])
    with pytest.raises(ConfigError):
        split_channels(m, ["v", "v"])
    with pytest.raises(ValueError):
        SkillCode(4, 4)
    with pytest.raises(ValueError):
        SkillCode(-1, 4)
    with pytest.raises(LayoutError):
        assemble_policy_obs(m, Action(np.zeros(3)))
    with pytest.raises(LayoutError):
        MotionObservation(np.zeros(10), layout)

"""
Tests for the replay buffer ring store and its uniform sampler
"""
import numpy as np
import pytest
from scipy.stats import chisquare

from errors import BufferNotReadyError, CheckpointError, ContractError
from replay_buffer import ReplayBuffer, Transition


def transition(i, state_dim=3, action_dim=2, done=False):
    return Transition(np.full(state_dim, float(i)), np.full(action_dim, -float(i)), float(i),
                      np.full(state_dim, float(i) + 0.5), done)


@pytest.fixture
def buffer():
    return ReplayBuffer(state_dim=3, action_dim=2, capacity=5)


class TestReplayBuffer:
    def test_push_and_len(self, buffer):
        for i in range(3):
            buffer.push(transition(i))
        assert len(buffer) == 3
        stored = buffer.transition_at(1)
        np.testing.assert_array_equal(stored.state, np.full(3, 1.0))
        assert stored.reward == 1.0
        assert stored.done is False

    def test_oldest_transition_overwritten(self, buffer):
        for i in range(7):
            buffer.push(transition(i, done=(i == 6)))
        assert len(buffer) == 5
        assert sorted(buffer.rewards.tolist()) == [2.0, 3.0, 4.0, 5.0, 6.0]
        assert buffer.transition_at(1).reward == 6.0
        assert buffer.transition_at(1).done is True

    def test_sample_before_ready(self, buffer):
        buffer.push(transition(0))
        with pytest.raises(BufferNotReadyError):
            buffer.sample(2, np.random.default_rng(0))

    def test_sample_columns_line_up(self, buffer):
        for i in range(5):
            buffer.push(transition(i))
        batch = buffer.sample(4, np.random.default_rng(0))
        assert batch.states.shape == (4, 3)
        assert batch.actions.shape == (4, 2)
        np.testing.assert_array_equal(batch.rewards, batch.states[:, 0])
        np.testing.assert_array_equal(batch.actions[:, 0], -batch.rewards)
        np.testing.assert_array_equal(batch.rewards, batch.indices.astype(float))

    def test_same_generator_state_same_batch(self, buffer):
        for i in range(5):
            buffer.push(transition(i))
        a = buffer.sample(3, np.random.default_rng(12))
        b = buffer.sample(3, np.random.default_rng(12))
        np.testing.assert_array_equal(a.indices, b.indices)

    def test_shape_and_reward_checks(self, buffer):
        with pytest.raises(ContractError):
            buffer.push(Transition(np.zeros(4), np.zeros(2), 0.0, np.zeros(3), False))
        with pytest.raises(ContractError):
            buffer.push(Transition(np.zeros(3), np.zeros(1), 0.0, np.zeros(3), False))
        with pytest.raises(ContractError):
            buffer.push(Transition(np.zeros(3), np.zeros(2), np.nan, np.zeros(3), False))

    def test_zero_capacity_rejected(self):
        with pytest.raises(ContractError):
            ReplayBuffer(3, 2, capacity=0)

    def test_uniform_sampling(self):
        buffer = ReplayBuffer(state_dim=1, action_dim=1, capacity=1000)
        for i in range(1000):
            buffer.push(Transition(np.zeros(1), np.zeros(1), 0.0, np.zeros(1), False))
        rng = np.random.default_rng(2718)
        counts = np.zeros(1000)
        drawn = 0
        while drawn < 100_000:
            batch = buffer.sample(128, rng)
            np.add.at(counts, batch.indices, 1)
            drawn += 128
        assert chisquare(counts).pvalue > 0.01


class TestPersistence:
    def test_saved_buffer_samples_identically(self, buffer, tmp_path):
        for i in range(7):
            buffer.push(transition(i))
        restored = ReplayBuffer.load(buffer.save(tmp_path / "buf.npz"))
        assert (restored.capacity, restored.cursor, len(restored)) == (5, 2, 5)
        a = buffer.sample(16, np.random.default_rng(5))
        b = restored.sample(16, np.random.default_rng(5))
        for left, right in zip(a, b):
            np.testing.assert_array_equal(left, right)
        restored.push(transition(9))
        assert restored.transition_at(2).reward == 9.0

    def test_partially_filled_buffer(self, buffer, tmp_path):
        buffer.push(transition(1))
        restored = ReplayBuffer.load(buffer.save(tmp_path / "buf.npz"))
        assert len(restored) == 1 and restored.cursor == 1
        assert restored.transition_at(0).reward == 1.0

    def test_corrupted_file(self, tmp_path):
        path = tmp_path / "buf.npz"
        path.write_bytes(b"not an archive")
        with pytest.raises(CheckpointError):
            ReplayBuffer.load(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            ReplayBuffer.load(tmp_path / "absent.npz")

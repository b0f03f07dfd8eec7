"""FIFO replay buffer of whole episodes with uniform segment sampling."""

from collections import deque
from dataclasses import dataclass

import numpy as np

from ..worldmodel import SequenceBatch


class BufferError(RuntimeError):
    pass


@dataclass
class Episode:
    """Step t holds (o_t, a_{t-1}, r_t); step 0 carries a zero action and zero reward."""

    observations: np.ndarray  # (T+1, D_o)
    actions: np.ndarray  # (T+1, D_a)
    rewards: np.ndarray  # (T+1,)

    def __post_init__(self):
        n = len(self.rewards)
        if len(self.observations) != n or len(self.actions) != n:
            raise ValueError("episode arrays must share their length")

    def __len__(self):
        return len(self.rewards)


class ReplayBuffer:
    def __init__(self, capacity=100_000):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.episodes = deque()
        self.steps = 0
        self.total_added = 0  # episodes ever added, for bookkeeping

    def __len__(self):
        return len(self.episodes)

    def add(self, episode):
        if len(episode) > self.capacity:
            raise BufferError(f"episode of {len(episode)} steps exceeds capacity {self.capacity}")
        self.episodes.append(episode)
        self.steps += len(episode)
        self.total_added += 1
        while self.steps > self.capacity:
            self.steps -= len(self.episodes.popleft())

    def _segment_counts(self, length):
        return np.array([max(0, len(e) - length + 1) for e in self.episodes], dtype=np.int64)

    def sample_index(self, batch_size, length, rng):
        """Uniform draw of (episode position, offset) pairs over all valid segments."""
        counts = self._segment_counts(length)
        total = int(counts.sum())
        if total == 0:
            raise BufferError(f"no stored episode has {length} steps")
        idx = rng.integers(0, total, size=batch_size)
        ends = np.cumsum(counts)
        which = np.searchsorted(ends, idx, side="right")
        return which, idx - (ends[which] - counts[which])

    def sample(self, batch_size, length, rng):
        which, offsets = self.sample_index(batch_size, length, rng)
        eps = [self.episodes[i] for i in which]
        obs = np.stack([e.observations[o:o + length] for e, o in zip(eps, offsets)])
        act = np.stack([e.actions[o:o + length] for e, o in zip(eps, offsets)])
        rew = np.stack([e.rewards[o:o + length] for e, o in zip(eps, offsets)])
        return SequenceBatch(obs, act, rew)

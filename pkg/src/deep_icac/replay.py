"""Proportional prioritized replay over a fixed-capacity ring."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import save_checkpoint


@dataclass
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray
    terminal: bool


class PerBuffer:
    """Ring buffer with P(i) = p_i^alpha / sum_k p_k^alpha sampling.

    Entry ids are global push counters, so an id identifies one specific
    transition even after its slot has been reused.
    """

    def __init__(
        self,
        capacity: int = 100_000,
        alpha: float = 0.6,
        beta0: float = 0.4,
        beta_end_step: int = 1,
        epsilon_p: float = 1e-3,
        action_bound: float | np.ndarray | None = None,
    ):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        if not 0.0 <= alpha <= 1.0 or not 0.0 < beta0 <= 1.0:
            raise ValueError(f"alpha={alpha}, beta0={beta0} out of range")
        self.capacity = capacity
        self.alpha = alpha
        self.beta0 = beta0
        self.beta_end_step = max(1, int(beta_end_step))
        self.epsilon_p = epsilon_p
        self.action_bound = action_bound
        self.entries: list[Transition | None] = [None] * capacity
        self.priorities = np.zeros(capacity, dtype=np.float64)
        self.slot_id = np.full(capacity, -1, dtype=np.int64)
        self.pushes = 0
        self.stale_updates = 0

    def __len__(self) -> int:
        return min(self.pushes, self.capacity)

    def push(self, t: Transition) -> int:
        if not (np.isfinite(t.r) and np.all(np.isfinite(t.a)) and np.all(np.isfinite(t.s)) and np.all(np.isfinite(t.s_next))):
            raise ValueError(f"rejecting non-finite transition (r={t.r}, a={t.a})")
        if self.action_bound is not None and np.any(np.abs(t.a) > np.asarray(self.action_bound) + 1e-6):
            raise ValueError(f"action {t.a} outside bounds +-{self.action_bound}")
        entry_id = self.pushes
        slot = entry_id % self.capacity
        live = self.priorities[: len(self)]
        if len(self) == self.capacity:
            live = np.delete(live, slot)
        self.entries[slot] = t
        self.priorities[slot] = live.max() if live.size else 1.0
        self.slot_id[slot] = entry_id
        self.pushes += 1
        return entry_id

    def probabilities(self) -> np.ndarray:
        p = self.priorities[: len(self)] ** self.alpha
        return p / p.sum()

    def beta_at(self, global_step: int) -> float:
        if global_step < 0:
            raise ValueError("global_step must be non-negative")
        frac = min(1.0, global_step / self.beta_end_step)
        return self.beta0 + (1.0 - self.beta0) * frac

    def sample(self, n: int, global_step: int, rng: np.random.Generator):
        """Draw n entries with replacement; returns (batch, ids, weights)."""
        size = len(self)
        if n < 1 or n > size:
            raise ValueError(f"cannot sample {n} from a buffer of {size}")
        probs = self.probabilities()
        cdf = np.cumsum(probs)
        slots = np.minimum(np.searchsorted(cdf, rng.random(n) * cdf[-1], side="right"), size - 1)
        w = (size * probs[slots]) ** (-self.beta_at(global_step))
        w = w / w.max()
        batch = [self.entries[i] for i in slots]
        return batch, self.slot_id[slots].copy(), w

    def update_priorities(self, ids, td_errors) -> None:
        for entry_id, delta in zip(ids, td_errors):
            slot = int(entry_id) % self.capacity
            if self.slot_id[slot] != entry_id:
                self.stale_updates += 1
                continue
            p = abs(float(delta)) + self.epsilon_p
            self.priorities[slot] = p

    def dump(self, path) -> None:
        """Debug dump in the checkpoint container (one row per live entry)."""
        size = len(self)
        tensors = [
            ("ids", self.slot_id[:size].astype(np.float32)),
            ("priorities", self.priorities[:size].astype(np.float32)),
            ("rewards", np.array([e.r for e in self.entries[:size]], np.float32)),
            ("terminal", np.array([e.terminal for e in self.entries[:size]], np.float32)),
            ("actions", np.array([e.a for e in self.entries[:size]], np.float32)),
        ]
        save_checkpoint(path, tensors, extra_header=["transition-table columns=id,priority,r,terminal,a"])


def stack(batch: list[Transition]):
    s = np.stack([t.s for t in batch])
    a = np.stack([np.asarray(t.a, np.float32) for t in batch])
    r = np.array([t.r for t in batch], dtype=np.float32)
    s2 = np.stack([t.s_next for t in batch])
    done = np.array([t.terminal for t in batch], dtype=bool)
    return s, a, r, s2, done

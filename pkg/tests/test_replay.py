import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from deep_icac.replay import PerBuffer, Transition


def tr(i, r=0.0):
    return Transition(np.full(2, i, np.float32), np.zeros(1, np.float32), r, np.full(2, i, np.float32), False)


def filled(priorities, alpha):
    buf = PerBuffer(capacity=len(priorities), alpha=alpha)
    ids = [buf.push(tr(i)) for i in range(len(priorities))]
    buf.update_priorities(ids, np.asarray(priorities) - buf.epsilon_p)
    return buf


def draws(buf, total, rng, step=0):
    """Collect `total` ids through repeated legal sample() calls (n <= size)."""
    ids, ws, got = [], [], 0
    while got < total:
        n = min(len(buf), total - got)
        _, i, w = buf.sample(n, step, rng)
        ids.append(i)
        ws.append(w)
        got += n
    return np.concatenate(ids), np.concatenate(ws)


def test_ring_eviction():
    buf = PerBuffer(capacity=4)
    for i in range(5):
        buf.push(tr(i))
    assert len(buf) == 4
    kept = sorted(int(e.s[0]) for e in buf.entries)
    assert kept == [1, 2, 3, 4]


def test_new_entry_priority_is_buffer_max():
    buf = PerBuffer(capacity=8)
    first = buf.push(tr(0))
    assert buf.priorities[0] == 1.0
    buf.update_priorities([first], [5.0 - buf.epsilon_p])
    buf.push(tr(1))
    assert buf.priorities[1] == pytest.approx(5.0)


def test_rejects_nonfinite():
    buf = PerBuffer(capacity=2)
    with pytest.raises(ValueError, match="non-finite"):
        buf.push(tr(0, r=float("nan")))


def test_analytic_probabilities():
    buf = filled([1.0, 3.0], alpha=1.0)
    np.testing.assert_allclose(buf.probabilities(), [0.25, 0.75])
    buf0 = filled([1.0, 3.0, 10.0], alpha=0.0)
    np.testing.assert_allclose(buf0.probabilities(), [1 / 3] * 3)


def test_monte_carlo_frequencies():
    buf = filled([1.0, 3.0], alpha=1.0)
    ids, _ = draws(buf, 100_000, np.random.default_rng(0))
    freq = np.bincount(ids, minlength=2) / ids.size
    assert np.all(np.abs(freq - [0.25, 0.75]) < 0.01)


def test_priority_floor_and_abs():
    buf = PerBuffer(capacity=4)
    a, b, c = buf.push(tr(0)), buf.push(tr(1)), buf.push(tr(2))
    buf.update_priorities([a, b, c], [0.0, -2.0, 2.0])
    assert buf.priorities[0] == buf.epsilon_p
    assert buf.priorities[1] == buf.priorities[2]


def test_dominant_priority():
    buf = filled([1.0] * 8 + [100.0], alpha=1.0)
    ids, _ = draws(buf, 10_000, np.random.default_rng(1))
    assert np.mean(ids == 8) > 0.9


def test_stale_ids_are_skipped_and_counted():
    buf = PerBuffer(capacity=2)
    old = buf.push(tr(0))
    buf.push(tr(1))
    buf.push(tr(2))  # evicts `old`
    before = buf.priorities.copy()
    buf.update_priorities([old], [7.0])
    assert buf.stale_updates == 1
    np.testing.assert_array_equal(buf.priorities, before)


def test_beta_schedule():
    buf = PerBuffer(beta_end_step=1000)
    assert buf.beta_at(0) == pytest.approx(0.4)
    assert buf.beta_at(500) == pytest.approx(0.7)
    assert buf.beta_at(1000) == 1.0
    assert buf.beta_at(10**6) == 1.0


def test_sample_too_many():
    buf = PerBuffer(capacity=4)
    buf.push(tr(0))
    with pytest.raises(ValueError):
        buf.sample(2, 0, np.random.default_rng(0))


def test_uniform_priorities_give_unit_weights():
    buf = filled([2.0] * 6, alpha=0.6)
    _, _, w = buf.sample(6, 0, np.random.default_rng(2))
    np.testing.assert_array_equal(w, np.ones(6))


def test_evicted_ids_never_sampled():
    buf = PerBuffer(capacity=5)
    ids = [buf.push(tr(i)) for i in range(12)]
    got, _ = draws(buf, 2000, np.random.default_rng(3))
    assert set(got.tolist()) <= set(ids[-5:])


@settings(max_examples=8, deadline=None, derandomize=True)
@given(
    priorities=st.lists(st.floats(0.01, 10.0), min_size=2, max_size=64),
    alpha=st.sampled_from([0.0, 0.6, 1.0]),
    seed=st.integers(0, 2**32 - 1),
    step=st.integers(0, 2000),
)
def test_chi_square_and_weight_bounds(priorities, alpha, seed, step):
    buf = filled(priorities, alpha)
    buf.beta_end_step = 1000
    ids, w = draws(buf, 100_000, np.random.default_rng(seed), step)
    observed = np.bincount(ids, minlength=len(priorities))
    expected = buf.probabilities() * ids.size
    _, pval = stats.chisquare(observed, expected)
    assert pval > 0.01 / 8  # Bonferroni over the hypothesis examples
    assert np.all(w > 0) and np.all(w <= 1.0) and w.max() == 1.0


def test_sample_weights_follow_importance_formula():
    buf = filled([1.0, 3.0], alpha=1.0)
    buf.beta_end_step = 10
    _, ids, w = buf.sample(2, 5, np.random.default_rng(4))
    beta = 0.7
    raw = (2 * buf.probabilities()[ids]) ** (-beta)
    np.testing.assert_allclose(w, raw / raw.max())

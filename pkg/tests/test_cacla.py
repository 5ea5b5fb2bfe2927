import numpy as np
import pytest

from deep_icac.cacla import CaclaAgent, CaclaHyper, CaclaParams
from deep_icac.nn import NonFiniteError, grad_check, mse_loss

OBS = (16, 16, 3)


def agent(seed=0, **hyper):
    return CaclaAgent(CaclaParams(OBS, 2, seed=seed), CaclaHyper(**hyper))


def random_batch(rng, n=8, reward_shift=0.0, terminal_frac=0.3):
    s = rng.random((n,) + OBS).astype(np.float32)
    s2 = rng.random((n,) + OBS).astype(np.float32)
    a = rng.uniform(-1, 1, (n, 2)).astype(np.float32)
    r = rng.normal(reward_shift, 1.0, n)
    done = rng.random(n) < terminal_frac
    return s, a, r, s2, done


def test_encode_contract():
    ag = agent()
    rng = np.random.default_rng(0)
    s = rng.random(OBS).astype(np.float32)
    phi = ag.encode(s)
    assert phi.shape == (16,) and np.all(np.isfinite(phi))
    np.testing.assert_array_equal(phi, ag.encode(s.copy()))
    ag.train_step(random_batch(rng))
    assert not np.array_equal(ag.encode(s), ag.encode(s, target=True))
    ag.soft_update(1.0)
    np.testing.assert_array_equal(ag.encode(s), ag.encode(s, target=True))


def test_act_noise_and_determinism():
    ag = agent()
    phi = ag.encode(np.full(OBS, 0.5, np.float32))
    rng = np.random.default_rng(1)
    mean = ag.p.actor(phi[None])[0]
    np.testing.assert_array_equal(ag.act(phi, True, 0.0, rng), mean)
    np.testing.assert_array_equal(ag.act(phi, False, 0.3, rng), ag.act(phi, False, 0.3, rng))
    sigma = 0.1
    draws = np.array([ag.act(phi, True, sigma, rng) for _ in range(10_000)])
    assert np.all(np.abs(draws.mean(axis=0) - mean) < 3 * sigma / 100)
    assert np.all(np.abs(draws) <= 1.0)


def test_td_targets_gamma_zero_and_terminal():
    rng = np.random.default_rng(2)
    s, a, r, s2, done = random_batch(rng)
    y, _ = agent(gamma=0.0).td_targets(s, r, s2, done)
    np.testing.assert_array_equal(y, r)
    ag = agent(gamma=0.9)
    y, _ = ag.td_targets(s, r, s2, np.ones(len(r), bool))
    np.testing.assert_array_equal(y, r)
    y_live, _ = ag.td_targets(s, r, s2, np.zeros(len(r), bool))
    v_next = ag.value(ag.encode(s2, target=True), target=True)
    np.testing.assert_allclose(y_live, r + 0.9 * v_next)


def test_exact_critic_gives_zero_delta():
    ag = agent(gamma=0.0)
    head = ag.p.critic.layers[-1]
    head.params["W"][...] = 0.0
    head.params["b"][...] = 1.25
    ag.p.critic.touch()
    s, a, _, s2, done = random_batch(np.random.default_rng(3))
    _, delta = ag.td_targets(s, np.full(len(s), 1.25), s2, done)
    assert np.all(delta == 0.0)


def test_phase1_zero_gradient_at_loss_minimum():
    ag = agent(gamma=0.0)
    for layer in ag.p.decoder.layers:
        for p in layer.params.values():
            p[...] = 0.0  # sigmoid(0) = 0.5 everywhere
    head = ag.p.critic.layers[-1]
    head.params["W"][...] = 0.0
    head.params["b"][...] = 2.0
    for net in (ag.p.decoder, ag.p.critic):
        net.touch()
    s = np.full((4,) + OBS, 0.5, np.float32)
    before = {n: ag.p.__dict__[n].checksum() for n in ("encoder", "decoder", "critic")}
    diag = ag.train_step((s, np.zeros((4, 2), np.float32), np.full(4, 2.0), s, np.ones(4, bool)))
    assert diag.loss_rec == 0.0 and diag.loss_value == 0.0
    for n, c in before.items():
        assert ag.p.__dict__[n].checksum() == c


def test_nonpositive_deltas_leave_actor_bitwise():
    rng = np.random.default_rng(4)
    ag = agent(gamma=0.0)
    for _ in range(20):
        before = ag.p.actor.checksum()
        diag = ag.train_step(random_batch(rng, reward_shift=-50.0))
        assert np.all(diag.delta <= 0) and diag.n_actor == 0
        assert ag.p.actor.checksum() == before


def test_positive_delta_moves_actor_not_encoder():
    rng = np.random.default_rng(5)
    ag = agent(gamma=0.0)
    s, a, r, s2, done = random_batch(rng, reward_shift=50.0)
    _, delta = ag.td_targets(s, r, s2, done)
    actor_before = ag.p.actor.checksum()
    ag._phase1(s, r, np.ones(len(s)))
    enc_after_phase1 = ag.p.encoder.checksum()
    ag._phase2(s, a, delta > 0)
    assert ag.p.encoder.checksum() == enc_after_phase1
    assert ag.p.actor.checksum() != actor_before


def test_per_weights_scale_phase1_only():
    rng = np.random.default_rng(6)
    batch = random_batch(rng, n=4)
    a1, a2 = agent(), agent()
    a1.train_step(batch, np.ones(4))
    a2.train_step(batch, np.array([1.0, 0.0, 0.0, 0.0]))
    assert a1.p.critic.checksum() != a2.p.critic.checksum()


def test_td_contraction_two_state_mdp():
    ag = CaclaAgent(CaclaParams(OBS, 1, seed=0), CaclaHyper(gamma=0.9, tau=0.1, lr_critic=3e-3))
    A = np.zeros(OBS, np.float32)
    A[:8] = 1.0
    B = np.zeros(OBS, np.float32)
    B[8:] = 1.0
    s = np.stack([A, B])
    s2 = np.stack([B, A])
    batch = (s, np.zeros((2, 1), np.float32), np.array([1.0, 0.0]), s2, np.zeros(2, bool))
    for _ in range(5000):
        ag.train_step(batch)
        ag.soft_update()
    _, delta = ag.td_targets(s, batch[2], s2, batch[4])
    assert np.max(np.abs(delta)) < 0.05
    np.testing.assert_allclose(ag.value(ag.encode(s)), [1 / 0.19, 0.9 / 0.19], atol=0.3)


@pytest.mark.parametrize("c", [0.25, 2.0, 8.0])
def test_reward_scale_preserves_gating(c):
    rng = np.random.default_rng(7)
    ag = agent(gamma=0.9)
    s, a, r, s2, done = random_batch(rng, n=64)
    _, delta = ag.td_targets(s, r, s2, done)
    for net in (ag.p.critic, ag.p.target_critic):
        for p in net.layers[-1].params.values():
            p *= c
        net.touch()
    _, delta_c = ag.td_targets(s, c * r, s2, done)
    np.testing.assert_array_equal(delta > 0, delta_c > 0)
    np.testing.assert_allclose(delta_c, c * delta, rtol=1e-5, atol=1e-6)


def test_nonfinite_loss_aborts_cleanly():
    ag = agent()
    s, a, r, s2, done = random_batch(np.random.default_rng(8))
    r[2] = np.nan
    before = ag.p.checksums()
    with pytest.raises(NonFiniteError):
        ag.train_step((s, a, r, s2, done))
    assert ag.p.checksums() == before


def test_soft_update_cases():
    ag = agent()
    ag.p.encoder.layers[-2].params["b"][...] = 2.0
    ag.p.target_encoder.layers[-2].params["b"][...] = 0.0
    ag.soft_update(0.0)
    assert np.all(ag.p.target_encoder.layers[-2].params["b"] == 0.0)
    ag.soft_update(0.5)
    assert np.all(ag.p.target_encoder.layers[-2].params["b"] == 1.0)
    ag.soft_update(1.0)
    assert ag.p.target_encoder.checksum() == ag.p.encoder.checksum()
    assert ag.p.target_critic.checksum() == ag.p.critic.checksum()


def test_save_load_roundtrip(tmp_path):
    src = agent(seed=1)
    src.train_step(random_batch(np.random.default_rng(9)))
    src.save(tmp_path / "a.ckpt")
    dst = agent(seed=2)
    assert dst.p.checksums() != src.p.checksums()
    dst.load(tmp_path / "a.ckpt")
    assert dst.p.checksums() == src.p.checksums()


def test_param_structure():
    p = CaclaParams((32, 32, 3), 3)
    assert p.encoder.output_shape == (16,) == p.critic.input_shape == p.actor.input_shape
    assert p.decoder.output_shape == (32, 32, 3)
    assert p.critic.output_shape == (1,) and p.actor.output_shape == (3,)
    assert [x.shape for x in p.target_encoder.param_list()] == [x.shape for x in p.encoder.param_list()]


@pytest.mark.parametrize("seed", range(3))
def test_head_gradients(seed):
    p = CaclaParams(OBS, 2, seed=seed)
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, (4, 16)).astype(np.float32)
    assert grad_check(p.critic, mse_loss(rng.normal(size=(4, 1))), x) < 1e-3
    assert grad_check(p.actor, mse_loss(rng.uniform(-1, 1, (4, 2))), x) < 1e-3

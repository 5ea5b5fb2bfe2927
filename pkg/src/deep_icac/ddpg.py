"""Desk-scale DDPG baseline on raw pixels.

The critic is a convolutional trunk followed by a dense head; the action
joins the flattened trunk output at the head's first dense layer. The
actor is a full image-to-action network with the same convolutional
geometry as the CACLA encoder.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cacla import encoder_layers
from .nn import (
    Activation,
    Adam,
    Conv2D,
    Dense,
    Network,
    NonFiniteError,
    check_finite,
    flatten,
    load_checkpoint,
    load_into,
    save_checkpoint,
    soft_update,
)


@dataclass
class DdpgHyper:
    gamma: float = 0.9
    tau: float = 0.01
    sigma: float = 0.4
    sigma_decay: float = 0.999
    sigma_min: float = 0.04
    minibatch: int = 32
    lr_actor: float = 1e-4
    lr_critic: float = 1e-3

    def __post_init__(self):
        if not 0.0 < self.tau <= 1.0:
            raise ValueError(f"tau must be in (0, 1], got {self.tau}")
        if self.minibatch < 1:
            raise ValueError("minibatch must be positive")


class DdpgParams:
    def __init__(self, obs_shape, action_dim: int, feature_dim: int = 16, action_bound: float = 1.0, seed: int = 0):
        self.obs_shape = tuple(obs_shape)
        self.action_dim = action_dim
        self.action_bound = action_bound
        self.actor = Network(
            "actor",
            obs_shape,
            encoder_layers(feature_dim)
            + [Dense(16), Activation("tanh"), Dense(action_dim), Activation("tanh", scale=action_bound)],
            seed=seed * 7 + 1,
        )
        self.critic_trunk = Network(
            "critic_trunk",
            obs_shape,
            [Conv2D(8, 5, stride=2), Activation("tanh"), Conv2D(16, 3, stride=2), Activation("tanh"), flatten()],
            seed=seed * 7 + 2,
        )
        width = self.critic_trunk.output_shape[0] + action_dim
        self.critic_head = Network(
            "critic_head",
            (width,),
            [Dense(feature_dim), Activation("tanh"), Dense(32), Activation("tanh"), Dense(1)],
            seed=seed * 7 + 3,
        )
        self.target_actor = self.actor.copy("target_actor")
        self.target_trunk = self.critic_trunk.copy("target_critic_trunk")
        self.target_head = self.critic_head.copy("target_critic_head")

    @property
    def networks(self) -> list[Network]:
        return [self.actor, self.critic_trunk, self.critic_head, self.target_actor, self.target_trunk, self.target_head]

    def checksums(self) -> dict[str, str]:
        return {n.name: n.checksum() for n in self.networks}


@dataclass
class DdpgDiagnostics:
    delta: np.ndarray
    loss_critic: float


class DdpgAgent:
    def __init__(self, params: DdpgParams, hyper: DdpgHyper | None = None):
        self.p = params
        self.h = hyper or DdpgHyper()
        self.opt_actor = Adam(params.actor, lr=self.h.lr_actor)
        self.opt_trunk = Adam(params.critic_trunk, lr=self.h.lr_critic)
        self.opt_head = Adam(params.critic_head, lr=self.h.lr_critic)

    def policy(self, s, target: bool = False) -> np.ndarray:
        net = self.p.target_actor if target else self.p.actor
        return net(np.asarray(s, np.float32))

    def q(self, s, a, target: bool = False) -> np.ndarray:
        trunk = self.p.target_trunk if target else self.p.critic_trunk
        head = self.p.target_head if target else self.p.critic_head
        feat = trunk(np.asarray(s))
        z = np.concatenate([feat, np.asarray(a, feat.dtype)], axis=1)
        return head(z)[:, 0].astype(np.float64)

    def choose_action(self, s, explore: bool, sigma: float, rng: np.random.Generator) -> np.ndarray:
        a = self.policy(np.asarray(s, np.float32)[None])[0].astype(np.float64)
        if explore and sigma > 0:
            a = a + rng.normal(0.0, sigma, a.shape)
        return np.clip(a, -self.p.action_bound, self.p.action_bound).astype(np.float32)

    def targets(self, r, s2, done) -> np.ndarray:
        y = np.asarray(r, np.float64).copy()
        live = ~np.asarray(done, bool)
        if self.h.gamma > 0 and live.any():
            s2l = np.asarray(s2, np.float32)[live]
            y[live] += self.h.gamma * self.q(s2l, self.policy(s2l, target=True), target=True)
        return y

    def critic_update(self, batch, per_weights=None) -> DdpgDiagnostics:
        s, a, r, s2, done = batch
        n = len(s)
        w = np.ones(n) if per_weights is None else np.asarray(per_weights, np.float64)
        y = self.targets(r, s2, done)
        feat, trunk_cache = self.p.critic_trunk.forward(np.asarray(s, np.float32))
        z = np.concatenate([feat, np.asarray(a, np.float32)], axis=1)
        q, head_cache = self.p.critic_head.forward(z)
        delta = y - q[:, 0].astype(np.float64)
        loss = float(np.mean(w * delta**2))
        if not np.isfinite(loss):
            raise NonFiniteError(f"critic loss is not finite ({loss})")
        g_head, dz = self.p.critic_head.backprop(head_cache, (-2.0 * w * delta / n)[:, None])
        g_trunk, _ = self.p.critic_trunk.backprop(trunk_cache, dz[:, : feat.shape[1]], need_input_grad=False)
        check_finite(g_head + g_trunk)
        self.opt_head.step(g_head)
        self.opt_trunk.step(g_trunk)
        return DdpgDiagnostics(delta, loss)

    def action_gradient(self, s, a) -> np.ndarray:
        """dQ/da at (s, a) through the current critic, one row per sample."""
        feat = self.p.critic_trunk(np.asarray(s))
        z = np.concatenate([feat, np.asarray(a, feat.dtype)], axis=1)
        _, cache = self.p.critic_head.forward(z)
        _, dz = self.p.critic_head.backprop(cache, np.ones((len(z), 1), feat.dtype))
        return dz[:, feat.shape[1] :]

    def actor_update(self, batch) -> None:
        """Ascend (1/n) sum dQ/da * dmu/dtheta; the critic is read, never written."""
        s = np.asarray(batch[0])
        a, cache = self.p.actor.forward(s)
        dq_da = self.action_gradient(s, a)
        grads, _ = self.p.actor.backprop(cache, -dq_da / len(s), need_input_grad=False)
        self.opt_actor.step(grads)

    def train_step(self, batch, per_weights=None) -> DdpgDiagnostics:
        diag = self.critic_update(batch, per_weights)
        self.actor_update(batch)
        return diag

    def soft_update(self, tau: float | None = None) -> None:
        tau = self.h.tau if tau is None else tau
        soft_update(self.p.target_actor, self.p.actor, tau)
        soft_update(self.p.target_trunk, self.p.critic_trunk, tau)
        soft_update(self.p.target_head, self.p.critic_head, tau)

    def save(self, path, extra_header=None) -> None:
        save_checkpoint(path, [(k, t) for net in self.p.networks for k, t in net.named_params()], extra_header)

    def load(self, path) -> None:
        load_into(self.p.networks, load_checkpoint(path))

"""Deep CACLA: convolutional autoencoder with a critic head on the shared
features and a separate small actor trained only on positive-TD samples.

One ``train_step`` runs two phases on the same minibatch:

1. one Adam step on the reconstruction + value loss for encoder, decoder
   and critic head, each sample scaled by its PER weight;
2. with those three frozen, the actor regresses onto the taken actions of
   the samples whose TD error (computed before phase 1) was positive.

The actor loss is backpropagated into the actor only; the encoder never
sees it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import (
    Activation,
    Adam,
    Conv2D,
    Deconv2D,
    Dense,
    Network,
    NonFiniteError,
    Reshape,
    check_finite,
    flatten,
    load_checkpoint,
    load_into,
    save_checkpoint,
    soft_update,
)


@dataclass
class CaclaHyper:
    gamma: float = 0.9
    tau: float = 0.01
    sigma: float = 0.4  # 20% of the [-1, 1] action range
    sigma_decay: float = 0.999
    sigma_min: float = 0.04
    minibatch: int = 32
    lr_encoder: float = 3e-4  # slower representation drift keeps V and the actor targets stable
    lr_decoder: float = 3e-4
    lr_critic: float = 3e-4
    lr_actor: float = 1e-3

    def __post_init__(self):
        if not 0.0 < self.tau <= 1.0:
            raise ValueError(f"tau must be in (0, 1], got {self.tau}")
        if self.sigma < 0 or self.sigma_min < 0:
            raise ValueError("sigma must be non-negative")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must be in [0, 1], got {self.gamma}")
        if self.minibatch < 1:
            raise ValueError("minibatch must be positive")


# --- architecture -------------------------------------------------------------


def encoder_layers(feature_dim: int) -> list:
    return [
        Conv2D(8, 5, stride=2),
        Activation("tanh"),
        Conv2D(16, 3, stride=2),
        Activation("tanh"),
        flatten(),
        Dense(feature_dim),
        Activation("tanh"),
    ]


def build_encoder(name: str, obs_shape, feature_dim: int, seed: int) -> Network:
    return Network(name, obs_shape, encoder_layers(feature_dim), seed=seed)


def build_decoder(encoder: Network, seed: int) -> Network:
    """Mirror of ``encoder`` with transposed convolutions and a sigmoid output."""
    in_shape = encoder.shapes[0]
    conv1_out, conv2_out = encoder.shapes[1], encoder.shapes[3]
    return Network(
        "decoder",
        encoder.output_shape,
        [
            Dense(int(np.prod(conv2_out))),
            Activation("tanh"),
            Reshape(conv2_out),
            Deconv2D(conv1_out[2], 3, stride=2, out_hw=conv1_out[:2]),
            Activation("tanh"),
            Deconv2D(in_shape[2], 5, stride=2, out_hw=in_shape[:2]),
            Activation("sigmoid"),
        ],
        seed=seed,
    )


def build_critic(name: str, feature_dim: int, seed: int, hidden: int = 32) -> Network:
    return Network(name, (feature_dim,), [Dense(hidden), Activation("tanh"), Dense(1)], seed=seed)


def build_actor(feature_dim: int, action_dim: int, bound: float, seed: int, hidden: int = 16) -> Network:
    return Network(
        "actor",
        (feature_dim,),
        [Dense(hidden), Activation("tanh"), Dense(action_dim), Activation("tanh", scale=bound)],
        seed=seed,
    )


class CaclaParams:
    """The six networks: encoder, decoder, critic head, actor and the two targets."""

    def __init__(self, obs_shape, action_dim: int, feature_dim: int = 16, action_bound: float = 1.0, seed: int = 0):
        self.obs_shape = tuple(obs_shape)
        self.action_dim = action_dim
        self.feature_dim = feature_dim
        self.action_bound = action_bound
        self.encoder = build_encoder("encoder", obs_shape, feature_dim, seed * 7 + 1)
        self.decoder = build_decoder(self.encoder, seed * 7 + 2)
        self.critic = build_critic("critic", feature_dim, seed * 7 + 3)
        self.actor = build_actor(feature_dim, action_dim, action_bound, seed * 7 + 4)
        self.target_encoder = self.encoder.copy("target_encoder")
        self.target_critic = self.critic.copy("target_critic")

    @property
    def networks(self) -> list[Network]:
        return [self.encoder, self.decoder, self.critic, self.actor, self.target_encoder, self.target_critic]

    def checksums(self) -> dict[str, str]:
        return {n.name: n.checksum() for n in self.networks}


# --- agent --------------------------------------------------------------------


@dataclass
class TrainDiagnostics:
    delta: np.ndarray
    loss_rec: float
    loss_value: float
    loss_actor: float
    n_actor: int


class CaclaAgent:
    def __init__(self, params: CaclaParams, hyper: CaclaHyper | None = None):
        self.p = params
        self.h = hyper or CaclaHyper()
        self.opt_encoder = Adam(params.encoder, lr=self.h.lr_encoder)
        self.opt_decoder = Adam(params.decoder, lr=self.h.lr_decoder)
        self.opt_critic = Adam(params.critic, lr=self.h.lr_critic)
        self.opt_actor = Adam(params.actor, lr=self.h.lr_actor)

    # inference

    def encode(self, s, target: bool = False) -> np.ndarray:
        s = np.asarray(s, np.float32)
        single = s.ndim == 3
        enc = self.p.target_encoder if target else self.p.encoder
        phi = enc(s[None] if single else s)
        return phi[0] if single else phi

    def value(self, phi, target: bool = False) -> np.ndarray:
        critic = self.p.target_critic if target else self.p.critic
        return critic(np.atleast_2d(phi))[:, 0].astype(np.float64)

    def act(self, phi, explore: bool, sigma: float, rng: np.random.Generator) -> np.ndarray:
        a = self.p.actor(np.asarray(phi, np.float32)[None])[0].astype(np.float64)
        if explore and sigma > 0:
            a = a + rng.normal(0.0, sigma, a.shape)
        return np.clip(a, -self.p.action_bound, self.p.action_bound).astype(np.float32)

    def choose_action(self, s, explore: bool, sigma: float, rng: np.random.Generator) -> np.ndarray:
        return self.act(self.encode(s), explore, sigma, rng)

    # learning

    def bootstrap(self, r, s2, done) -> np.ndarray:
        """y = r + gamma V'(f'(s')), or just r on terminal transitions."""
        y = np.asarray(r, np.float64).copy()
        live = ~np.asarray(done, bool)
        if self.h.gamma > 0 and live.any():
            s2 = np.asarray(s2, np.float32)
            y[live] += self.h.gamma * self.value(self.encode(s2[live], target=True), target=True)
        return y

    def td_targets(self, s, r, s2, done):
        """(y, delta) with delta = y - V(f(s)) under the current parameters."""
        y = self.bootstrap(r, s2, done)
        return y, y - self.value(self.encode(s))

    def train_step(self, batch, per_weights=None) -> TrainDiagnostics:
        s, a, r, s2, done = batch
        s = np.asarray(s, np.float32)
        n = len(s)
        if n < 1:
            raise ValueError("empty minibatch")
        w = np.ones(n) if per_weights is None else np.asarray(per_weights, np.float64)
        y = self.bootstrap(r, s2, done)
        # delta comes from the phase-1 forward pass, i.e. the pre-update critic
        delta, loss_rec, loss_v = self._phase1(s, y, w)
        loss_a, n_act = self._phase2(s, np.asarray(a, np.float32), delta > 0)
        return TrainDiagnostics(delta, loss_rec, loss_v, loss_a, n_act)

    def _phase1(self, s, y, w):
        p = self.p
        n = len(s)
        pixels = int(np.prod(s.shape[1:]))
        phi, enc_cache = p.encoder.forward(s)
        recon, dec_cache = p.decoder.forward(phi)
        v, crit_cache = p.critic.forward(phi)
        diff = recon.astype(np.float64) - s
        resid = v[:, 0].astype(np.float64) - y
        delta = -resid
        rec_per = (diff**2).reshape(n, -1).mean(axis=1)
        loss_rec = float(np.mean(w * rec_per))
        loss_v = float(np.mean(w * resid**2))
        if not np.isfinite(loss_rec + loss_v):
            raise NonFiniteError(f"phase 1 loss is not finite (rec={loss_rec}, value={loss_v})")
        scale = w.reshape((n,) + (1,) * (s.ndim - 1))
        g_dec, dphi_dec = p.decoder.backprop(dec_cache, 2.0 * scale * diff / (pixels * n))
        g_crit, dphi_crit = p.critic.backprop(crit_cache, (2.0 * w * resid / n)[:, None])
        g_enc, _ = p.encoder.backprop(enc_cache, dphi_dec + dphi_crit, need_input_grad=False)
        # verify everything before touching any parameter so an abort leaves no partial update
        check_finite(g_enc + g_dec + g_crit)
        self.opt_encoder.step(g_enc)
        self.opt_decoder.step(g_dec)
        self.opt_critic.step(g_crit)
        return delta, loss_rec, loss_v

    def _phase2(self, s, a, mask):
        m = int(mask.sum())
        if m == 0:
            return 0.0, 0
        return self.actor_regression(self.p.encoder(s[mask]), a[mask]), m

    def actor_regression(self, phi, a) -> float:
        """One Adam step on mean ||a - AC(phi)||^2; phi is a constant input here."""
        out, cache = self.p.actor.forward(phi)
        diff = out.astype(np.float64) - a
        loss = float(np.mean((diff**2).sum(axis=1)))
        if not np.isfinite(loss):
            raise NonFiniteError(f"phase 2 loss is not finite ({loss})")
        grads, _ = self.p.actor.backprop(cache, 2.0 * diff / len(phi), need_input_grad=False)
        self.opt_actor.step(grads)
        return loss

    def soft_update(self, tau: float | None = None) -> None:
        tau = self.h.tau if tau is None else tau
        soft_update(self.p.target_encoder, self.p.encoder, tau)
        soft_update(self.p.target_critic, self.p.critic, tau)

    # persistence

    def save(self, path, extra_header=None) -> None:
        tensors = [(name, t) for net in self.p.networks for name, t in net.named_params()]
        save_checkpoint(path, tensors, extra_header)

    def load(self, path) -> None:
        load_into(self.p.networks, load_checkpoint(path))

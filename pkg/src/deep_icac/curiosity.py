"""Learning-progress curiosity over an Instantaneous Topological Map (ITM).

The map partitions feature space; every node owns a small forward model
P(phi_s, a) -> phi_s'. The intrinsic reward for a step is the learning
progress of the best-matching node's model plus the distance from the
feature vector to that node.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .nn import Activation, Adam, Dense, Network


@dataclass
class CuriosityConfig:
    mu: int = 10  # errors averaged per window
    T: int = 20  # lag between the two windows
    D: float = 0.1  # decay of the intrinsic weight in the mixed reward
    e_max: float = 6.0
    predictor_hidden: int = 16
    predictor_lr: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.mu < 1 or self.T < 1 or self.D <= 0:
            raise ValueError(f"need mu >= 1, T >= 1, D > 0 (got {self.mu}, {self.T}, {self.D})")


# --- reward formulas ----------------------------------------------------------


def learning_progress(errors, mu: int, T: int) -> float:
    """|mean of the latest mu errors - mean of the mu errors ending T steps earlier|.

    ``errors`` is ordered oldest first. Histories shorter than mu + T give 0.
    """
    e = list(errors)
    if len(e) < mu + T:
        return 0.0
    recent = e[len(e) - mu :]
    lagged = e[len(e) - mu - T : len(e) - T]
    return abs(float(np.mean(recent)) - float(np.mean(lagged)))


def intrinsic_reward(lp: float, phi, w_best) -> float:
    return lp + float(np.linalg.norm(np.asarray(phi, np.float64) - w_best))


def mix_rewards(r_ext: float, r_int: float, t_global: int, D: float) -> float:
    if t_global < 0:
        raise ValueError("t_global must be non-negative")
    return r_ext + r_int / (1.0 + D * t_global)


# --- map ------------------------------------------------------------------------


@dataclass
class ItmNode:
    id: int
    w: np.ndarray
    predictor: Network
    optimizer: Adam
    errors: deque
    neighbors: set = field(default_factory=set)


@dataclass
class AdaptReport:
    edge_added: bool = False
    edges_removed: list = field(default_factory=list)
    nodes_removed: list = field(default_factory=list)
    node_added: int | None = None


class Itm:
    """Growing map with matching, Thales-sphere edge pruning and threshold growth.

    Node weights stay where they were created; there is no smoothing step.
    """

    def __init__(self, feature_dim: int, action_dim: int, cfg: CuriosityConfig | None = None):
        self.cfg = cfg or CuriosityConfig()
        self.feature_dim = feature_dim
        self.action_dim = action_dim
        self.e_max = self.cfg.e_max
        self.nodes: dict[int, ItmNode] = {}
        self._next_id = 0
        self._pending: list[np.ndarray] = []
        self.nodes_created = 0

    @property
    def ready(self) -> bool:
        return len(self.nodes) >= 2

    def _new_node(self, w) -> ItmNode:
        nid = self._next_id
        self._next_id += 1
        net = Network(
            f"pred{nid}",
            (self.feature_dim + self.action_dim,),
            [Dense(self.cfg.predictor_hidden), Activation("tanh"), Dense(self.feature_dim)],
            seed=self.cfg.seed * 100_003 + nid,
        )
        node = ItmNode(
            nid,
            np.array(w, dtype=np.float64),
            net,
            Adam(net, lr=self.cfg.predictor_lr),
            deque(maxlen=self.cfg.mu + self.cfg.T),
        )
        self.nodes[nid] = node
        self.nodes_created += 1
        return node

    def seed_with(self, phi) -> bool:
        """Feed initial stimuli; the first two become the connected start pair."""
        if self.ready:
            return True
        phi = np.asarray(phi, np.float64)
        if self._pending and np.array_equal(self._pending[0], phi):
            return False
        self._pending.append(phi)
        if len(self._pending) == 2:
            a, b = (self._new_node(w) for w in self._pending)
            self.connect(a.id, b.id)
            self._pending = []
        return self.ready

    def connect(self, i: int, j: int) -> bool:
        if i == j:
            raise ValueError("self-edges are not allowed")
        new = j not in self.nodes[i].neighbors
        self.nodes[i].neighbors.add(j)
        self.nodes[j].neighbors.add(i)
        return new

    def disconnect(self, i: int, j: int) -> None:
        self.nodes[i].neighbors.discard(j)
        self.nodes[j].neighbors.discard(i)

    def remove(self, i: int) -> None:
        for j in list(self.nodes[i].neighbors):
            self.disconnect(i, j)
        del self.nodes[i]

    def match(self, phi) -> tuple[int, int]:
        """Nearest and second-nearest node ids; ties go to the lower id."""
        if len(self.nodes) < 2:
            raise RuntimeError("matching needs at least two nodes")
        ids = sorted(self.nodes)
        W = np.stack([self.nodes[i].w for i in ids])
        d = np.linalg.norm(W - np.asarray(phi, np.float64), axis=1)
        order = np.lexsort((ids, d))
        return ids[order[0]], ids[order[1]]

    def adapt(self, phi, n: int, n2: int) -> AdaptReport:
        phi = np.asarray(phi, np.float64)
        rep = AdaptReport()
        rep.edge_added = self.connect(n, n2)
        wn, wn2 = self.nodes[n].w, self.nodes[n2].w
        for m in sorted(self.nodes[n].neighbors):
            if np.dot(wn - wn2, self.nodes[m].w - wn2) < 0:
                self.disconnect(n, m)
                rep.edges_removed.append((n, m))
                if not self.nodes[m].neighbors:
                    self.remove(m)
                    rep.nodes_removed.append(m)
        if np.dot(wn - phi, wn2 - phi) > 0 and np.linalg.norm(wn - phi) > self.e_max:
            v = self._new_node(phi)
            self.connect(v.id, n)
            rep.node_added = v.id
        return rep

    def edges(self) -> list[tuple[int, int]]:
        return sorted((i, j) for i, node in self.nodes.items() for j in node.neighbors if i < j)

    def snapshot(self) -> dict:
        return {
            "e_max": self.e_max,
            "feature_dim": self.feature_dim,
            "nodes": [
                {
                    "id": node.id,
                    "w": [round(float(x), 6) for x in node.w],
                    "neighbors": sorted(node.neighbors),
                    "n_errors": len(node.errors),
                    "mean_error": float(np.mean(node.errors)) if node.errors else None,
                    "lp": learning_progress(node.errors, self.cfg.mu, self.cfg.T),
                }
                for node in (self.nodes[i] for i in sorted(self.nodes))
            ],
            "edges": self.edges(),
        }

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.snapshot(), fh, indent=1)


def predictor_update(node: ItmNode, phi, a, phi_next) -> float:
    """Prediction error before one Adam step on ||P(phi, a) - phi_next||^2."""
    x = np.concatenate([np.asarray(phi, np.float32), np.asarray(a, np.float32)])[None]
    pred, cache = node.predictor.forward(x)
    diff = pred[0].astype(np.float64) - np.asarray(phi_next, np.float64)
    err = float(np.linalg.norm(diff))
    grads, _ = node.predictor.backprop(cache, (2.0 * diff)[None], need_input_grad=False)
    node.optimizer.step(grads)
    node.errors.append(err)
    return err


def calibrate_e_max(features, factor: float = 1.5) -> float:
    """factor x median pairwise distance of a feature sample."""
    F = np.asarray(features, np.float64)
    d = np.linalg.norm(F[:, None, :] - F[None, :, :], axis=-1)
    iu = np.triu_indices(len(F), k=1)
    return factor * float(np.median(d[iu]))


@dataclass
class CuriosityStep:
    r_int: float
    node: int
    lp: float
    e_per: float
    e_prd: float


class Curiosity:
    """Per-step driver: match -> predictor update -> map adaptation -> reward."""

    def __init__(self, feature_dim: int, action_dim: int, cfg: CuriosityConfig | None = None):
        self.cfg = cfg or CuriosityConfig()
        self.map = Itm(feature_dim, action_dim, self.cfg)

    def step(self, phi, a, phi_next) -> CuriosityStep:
        if not self.map.ready:
            self.map.seed_with(phi)
            if not self.map.ready:
                return CuriosityStep(0.0, -1, 0.0, 0.0, 0.0)
        n, n2 = self.map.match(phi)
        node = self.map.nodes[n]
        e_prd = predictor_update(node, phi, a, phi_next)
        self.map.adapt(phi, n, n2)
        lp = learning_progress(node.errors, self.cfg.mu, self.cfg.T)
        e_per = float(np.linalg.norm(np.asarray(phi, np.float64) - node.w))
        return CuriosityStep(lp + e_per, n, lp, e_per, e_prd)

    def mix(self, r_ext: float, r_int: float, t_global: int) -> float:
        return mix_rewards(r_ext, r_int, t_global, self.cfg.D)

"""Deterministic pixel environments: planar 3-DoF reach and a 2-DoF grasp toy.

Distances live in a normalized workspace where the reach arm has total
length 1. Actions are per-step joint deltas in [-1, 1] scaled by
``max_delta`` and clipped to the joint range.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field, replace

import numpy as np

HALF_PI = np.pi / 2

TARGET_RGB = (1.0, 0.0, 0.0)
ARM_RGB = (0.25, 0.45, 0.95)
GRIPPER_RGB = (0.2, 0.9, 0.3)
BACKGROUND_RGB = (0.0, 0.0, 0.0)


class EpisodeOver(RuntimeError):
    pass


@dataclass(frozen=True)
class StepResult:
    obs: np.ndarray
    r_dense: float
    r_sparse: float
    terminal: bool
    success: bool


# --- drawing --------------------------------------------------------------------


class Canvas:
    """Anti-aliased disks and capsules composited back to front."""

    def __init__(self, h: int, w: int, x_range, y_range):
        self.h, self.w = h, w
        self.px = (x_range[1] - x_range[0]) / w
        xs = x_range[0] + (np.arange(w) + 0.5) * self.px
        ys = y_range[1] - (np.arange(h) + 0.5) * (y_range[1] - y_range[0]) / h
        self.X, self.Y = np.meshgrid(xs, ys)
        self.img = np.empty((h, w, 3), dtype=np.float64)
        self.img[...] = BACKGROUND_RGB

    def _coverage(self, dist, radius):
        return np.clip((radius - dist) / self.px + 0.5, 0.0, 1.0)

    def paint(self, alpha, rgb):
        a = alpha[..., None]
        self.img = self.img * (1.0 - a) + a * np.asarray(rgb)

    def disk(self, c, radius, rgb):
        d = np.hypot(self.X - c[0], self.Y - c[1])
        cov = self._coverage(d, radius)
        self.paint(cov, rgb)
        return cov

    def capsule(self, p, q, radius, rgb):
        px, py = self.X - p[0], self.Y - p[1]
        dx, dy = q[0] - p[0], q[1] - p[1]
        t = np.clip((px * dx + py * dy) / max(dx * dx + dy * dy, 1e-12), 0.0, 1.0)
        d = np.hypot(px - t * dx, py - t * dy)
        self.paint(self._coverage(d, radius), rgb)

    def image(self) -> np.ndarray:
        return self.img.astype(np.float32)


# --- reach ----------------------------------------------------------------------


@dataclass(frozen=True)
class ReachConfig:
    links: tuple = (0.4, 0.35, 0.25)
    max_delta: float = np.pi / 8
    max_steps: int = 10
    height: int = 32
    width: int = 32
    target_radius: float = 0.1  # drawn size of the target
    zone_fraction: float = 0.09
    # solve_success_radius() for the default links and zone_fraction; None re-solves
    success_radius: float | None = 0.278
    holdout_exclusion: float = 0.05


@dataclass
class ReachEnvState:
    joint_angles: np.ndarray
    target_pos: np.ndarray
    step_count: int = 0
    done: bool = False
    rng_state: dict = field(default_factory=dict)


def forward_kinematics(links, joints) -> np.ndarray:
    """Joint positions (base, elbow, wrist, gripper); zero pose points along +y."""
    joints = np.asarray(joints, np.float64)
    phi = HALF_PI + np.cumsum(joints)
    steps = np.asarray(links)[:, None] * np.stack([np.cos(phi), np.sin(phi)], axis=-1)
    return np.vstack([np.zeros(2), np.cumsum(steps, axis=0)])


def reachable(links, points, n_base: int = 361) -> np.ndarray:
    """Membership of 2-D points in the joint-limited workspace.

    Scans the base angle on a grid and solves the remaining two links in
    closed form, accepting any elbow branch that respects the limits.
    """
    l1, l2, l3 = links
    pts = np.atleast_2d(np.asarray(points, np.float64))
    phi1 = HALF_PI + np.linspace(-HALF_PI, HALF_PI, n_base)
    elbow = l1 * np.stack([np.cos(phi1), np.sin(phi1)], axis=-1)
    out = np.zeros(len(pts), dtype=bool)
    for start in range(0, len(pts), 512):
        q = pts[start : start + 512, None, :] - elbow[None]
        c3 = ((q**2).sum(-1) - l2 * l2 - l3 * l3) / (2 * l2 * l3)
        ok = (c3 >= -1e-12) & (c3 <= 1 + 1e-12)
        th3 = np.arccos(np.clip(c3, 0.0, 1.0))
        beta = np.arctan2(q[..., 1], q[..., 0]) - phi1[None]
        hit = np.zeros(q.shape[:2], dtype=bool)
        for sign in (1.0, -1.0):
            t3 = sign * th3
            t2 = beta - np.arctan2(l3 * np.sin(t3), l2 + l3 * np.cos(t3))
            t2 = (t2 + np.pi) % (2 * np.pi) - np.pi
            hit |= ok & (np.abs(t2) <= HALF_PI + 1e-9)
        out[start : start + 512] = hit.any(axis=1)
    return out


def inverse_kinematics(links, target, n_base: int = 721):
    """One joint solution within limits reaching ``target``, or None."""
    l1, l2, l3 = links
    phi1 = HALF_PI + np.linspace(-HALF_PI, HALF_PI, n_base)
    best, best_err = None, np.inf
    for p1 in phi1:
        q = np.asarray(target) - l1 * np.array([np.cos(p1), np.sin(p1)])
        c3 = (q @ q - l2 * l2 - l3 * l3) / (2 * l2 * l3)
        if not -1e-9 <= c3 <= 1 + 1e-9:
            continue
        for sign in (1.0, -1.0):
            t3 = sign * np.arccos(np.clip(c3, 0.0, 1.0))
            t2 = np.arctan2(q[1], q[0]) - p1 - np.arctan2(l3 * np.sin(t3), l2 + l3 * np.cos(t3))
            t2 = (t2 + np.pi) % (2 * np.pi) - np.pi
            if abs(t2) <= HALF_PI:
                joints = np.array([p1 - HALF_PI, t2, t3])
                err = np.linalg.norm(forward_kinematics(links, joints)[-1] - target)
                # prefer the solution closest to the home pose
                score = err * 1e3 + np.abs(joints).sum()
                if score < best_err:
                    best, best_err = joints, score
    return best


def _sample_reachable(links, n, rng) -> np.ndarray:
    out = []
    while sum(len(o) for o in out) < n:
        cand = rng.uniform(-1.0, 1.0, (max(64, 2 * n), 2))
        out.append(cand[reachable(links, cand)])
    return np.concatenate(out)[:n]


def zone_fraction_mc(links, radius: float, samples: int = 100_000, seed: int = 12345) -> float:
    """Expected share of the reachable area inside the success zone of a random target."""
    d = _pair_distances(tuple(links), samples, seed)
    return float(np.mean(d < radius))


@functools.lru_cache(maxsize=8)
def _pair_distances(links, samples, seed):
    rng = np.random.default_rng(seed)
    pts = _sample_reachable(links, 2 * samples, rng)
    return np.linalg.norm(pts[:samples] - pts[samples:], axis=1)


@functools.lru_cache(maxsize=8)
def solve_success_radius(links=(0.4, 0.35, 0.25), fraction: float = 0.09, samples: int = 100_000) -> float:
    """Radius whose zone covers ``fraction`` of the reachable area (Monte Carlo quantile)."""
    return float(np.quantile(_pair_distances(tuple(links), samples, 12345), fraction))


def _training_like(links, success_radius, rng, n):
    home_grip = forward_kinematics(links, np.zeros(3))[-1]
    pts = rng.uniform(-1.0, 1.0, (4 * n, 2))
    pts = pts[reachable(links, pts) & (np.linalg.norm(pts - home_grip, axis=1) > success_radius)]
    return pts[:n] if len(pts) >= n else np.concatenate([pts, _training_like(links, success_radius, rng, n - len(pts))])


@functools.lru_cache(maxsize=8)
def _holdout(links, success_radius, n, seed):
    rng = np.random.default_rng(seed)
    home_grip = forward_kinematics(links, np.zeros(3))[-1]
    ref = np.linalg.norm(_training_like(links, success_radius, rng, 4000) - home_grip, axis=1)
    edges = np.quantile(ref, np.linspace(0.0, 1.0, n + 1))
    edges[0], edges[-1] = -np.inf, np.inf
    cand = _training_like(links, success_radius, rng, 50 * n)
    band = np.searchsorted(edges, np.linalg.norm(cand - home_grip, axis=1), side="right") - 1
    return np.array([cand[np.flatnonzero(band == k)[0]] for k in range(n)])


def holdout_targets(links=(0.4, 0.35, 0.25), success_radius: float = 0.278, n: int = 20, seed: int = 2020) -> np.ndarray:
    """Fixed evaluation targets, stratified over the training target distribution.

    Candidates follow the training rule (reachable, home gripper outside the
    success zone). Point k is the first candidate whose distance from the
    home gripper falls in the k-th of n equal-probability bands, so the set
    mirrors the training mix of easy and hard targets.
    """
    return _holdout(tuple(links), float(success_radius), n, seed).copy()


class ReachEnv:
    def __init__(self, cfg: ReachConfig | None = None):
        self.cfg = cfg or ReachConfig()
        self.links = tuple(self.cfg.links)
        self.success_radius = (
            self.cfg.success_radius
            if self.cfg.success_radius is not None
            else solve_success_radius(self.links, self.cfg.zone_fraction)
        )
        self.holdout = holdout_targets(self.links, self.success_radius)
        self.action_dim = 3
        self.obs_shape = (self.cfg.height, self.cfg.width, 3)
        self.home = np.zeros(3)
        self.state: ReachEnvState | None = None

    def sample_target(self, rng: np.random.Generator) -> np.ndarray:
        home_grip = forward_kinematics(self.links, self.home)[-1]
        while True:
            p = rng.uniform(-1.0, 1.0, 2)
            if not reachable(self.links, p)[0]:
                continue
            if np.min(np.linalg.norm(self.holdout - p, axis=1)) < self.cfg.holdout_exclusion:
                continue
            if np.linalg.norm(p - home_grip) <= self.success_radius:
                continue
            return p

    def reset(self, rng: np.random.Generator, target=None) -> np.ndarray:
        pos = np.asarray(target, np.float64) if target is not None else self.sample_target(rng)
        self.state = ReachEnvState(self.home.copy(), pos, 0, False, rng.bit_generator.state)
        return self.render(self.state)

    def reset_holdout(self, i: int) -> np.ndarray:
        """Episode on held-out target ``i`` (mod the grid size); no randomness involved."""
        return self.reset(np.random.default_rng(0), target=self.holdout[i % len(self.holdout)])

    def gripper(self, state: ReachEnvState | None = None) -> np.ndarray:
        st = state or self.state
        return forward_kinematics(self.links, st.joint_angles)[-1]

    def distance(self, state: ReachEnvState | None = None) -> float:
        st = state or self.state
        return float(np.linalg.norm(self.gripper(st) - st.target_pos))

    def step(self, a) -> StepResult:
        st = self.state
        if st is None or st.done:
            raise EpisodeOver("step() after a terminal transition; call reset()")
        a = np.clip(np.asarray(a, np.float64), -1.0, 1.0)
        st.joint_angles = np.clip(st.joint_angles + a * self.cfg.max_delta, -HALF_PI, HALF_PI)
        st.step_count += 1
        dist = self.distance(st)
        success = dist <= self.success_radius
        r_dense = 10.0 if success else -dist
        r_sparse = 10.0 if success else 0.0
        st.done = success or st.step_count >= self.cfg.max_steps
        return StepResult(self.render(st), r_dense, r_sparse, st.done, success)

    def render(self, state: ReachEnvState) -> np.ndarray:
        cv = Canvas(self.cfg.height, self.cfg.width, (-1.1, 1.1), (-1.1, 1.1))
        cv.disk(state.target_pos, self.cfg.target_radius, TARGET_RGB)
        pts = forward_kinematics(self.links, state.joint_angles)
        for p, q in zip(pts[:-1], pts[1:]):
            cv.capsule(p, q, 0.035, ARM_RGB)
        cv.disk(pts[-1], 0.06, GRIPPER_RGB)
        return cv.image()

    def scripted_action(self) -> np.ndarray:
        """Greedy joint-space move toward an IK solution of the current target."""
        goal = inverse_kinematics(self.links, self.state.target_pos)
        delta = (goal - self.state.joint_angles) / self.cfg.max_delta
        return np.clip(delta, -1.0, 1.0)

    def success_zone_fraction(self, radius: float | None = None, samples: int = 100_000) -> float:
        return zone_fraction_mc(self.links, self.success_radius if radius is None else radius, samples)


# --- grasp toy ------------------------------------------------------------------


@dataclass(frozen=True)
class GraspConfig:
    max_steps: int = 20
    max_delta: float = 0.15  # normalized shoulder units per step; range is [-1, 1]
    object_range: tuple = (-0.8, 0.8)
    shoulder_home: float = 0.0
    arc_degrees: float = 100.0  # shoulder +-1 maps to +-arc_degrees on the table arc
    grasp_tol: float = 0.06  # 3% of the 2.0-wide joint range
    contact_width: float = 0.2
    speed_limit: float = 0.05  # closing faster than this topples the object
    height: int = 16
    width: int = 32


@dataclass
class GraspEnvState:
    shoulder_angle: float
    hand_open: float
    object_pos: float
    toppled: bool = False
    grasped: bool = False
    step_count: int = 0
    done: bool = False


class GraspToyEnv:
    """1-DoF shoulder sweep plus open/close hand over a table arc.

    Closing the hand (a[1] > 0 while open) grasps when the hand is within
    ``grasp_tol`` of the object and the shoulder moved at most
    ``speed_limit`` this step. Closing anywhere else within
    ``contact_width`` of the object topples it, as does sweeping a closed
    hand across the object.
    """

    def __init__(self, cfg: GraspConfig | None = None):
        self.cfg = cfg or GraspConfig()
        self.action_dim = 2
        self.obs_shape = (self.cfg.height, self.cfg.width, 3)
        lo, hi = self.cfg.object_range
        side = np.linspace(self.cfg.contact_width + 0.1, hi - 0.02, 10)
        self.holdout = np.concatenate([-side[::-1], side])
        self.state: GraspEnvState | None = None

    def _arc(self, u: float) -> np.ndarray:
        ang = HALF_PI + np.deg2rad(self.cfg.arc_degrees) * u
        return np.array([np.cos(ang), np.sin(ang)])

    def reset(self, rng: np.random.Generator, object_pos: float | None = None) -> np.ndarray:
        if object_pos is None:
            lo, hi = self.cfg.object_range
            while True:
                object_pos = float(rng.uniform(lo, hi))
                if (
                    abs(object_pos - self.cfg.shoulder_home) > self.cfg.contact_width
                    and np.min(np.abs(self.holdout - object_pos)) >= 0.005
                ):
                    break
        self.state = GraspEnvState(self.cfg.shoulder_home, 1.0, float(object_pos))
        return self.render(self.state)

    def reset_holdout(self, i: int) -> np.ndarray:
        return self.reset(np.random.default_rng(0), object_pos=self.holdout[i % len(self.holdout)])

    def distance(self, state: GraspEnvState | None = None) -> float:
        st = state or self.state
        return float(np.linalg.norm(self._arc(st.shoulder_angle) - self._arc(st.object_pos)))

    def step(self, a) -> StepResult:
        st, cfg = self.state, self.cfg
        if st is None or st.done:
            raise EpisodeOver("step() after a terminal transition; call reset()")
        a = np.clip(np.asarray(a, np.float64), -1.0, 1.0)
        old = st.shoulder_angle
        st.shoulder_angle = float(np.clip(old + a[0] * cfg.max_delta, -1.0, 1.0))
        moved = abs(st.shoulder_angle - old)
        closing = a[1] > 0
        was_open = st.hand_open > 0.5
        st.hand_open = 0.0 if closing else 1.0
        offset = abs(st.shoulder_angle - st.object_pos)
        lo, hi = sorted((old, st.shoulder_angle))
        if closing and was_open:
            if offset <= cfg.grasp_tol and moved <= cfg.speed_limit:
                st.grasped = True
            elif offset <= cfg.contact_width:
                st.toppled = True
        elif closing and not was_open and moved > 0 and lo <= st.object_pos <= hi:
            st.toppled = True  # closed hand swept through the object
        st.step_count += 1
        if st.grasped:
            r_dense = r_sparse = 10.0
        elif st.toppled:
            r_dense = r_sparse = -10.0
        else:
            r_dense, r_sparse = -self.distance(st), 0.0
        st.done = st.grasped or st.toppled or st.step_count >= cfg.max_steps
        return StepResult(self.render(st), r_dense, r_sparse, st.done, st.grasped)

    def render(self, state: GraspEnvState) -> np.ndarray:
        cv = Canvas(self.cfg.height, self.cfg.width, (-1.1, 1.1), (-0.05, 1.05))
        obj = self._arc(state.object_pos)
        if state.toppled:
            cv.capsule(obj - [0.08, 0.0], obj + [0.08, 0.0], 0.05, TARGET_RGB)
        else:
            cv.disk(obj, 0.07, TARGET_RGB)
        hand = self._arc(state.shoulder_angle)
        cv.capsule((0.0, 0.0), hand, 0.03, ARM_RGB)
        cv.disk(hand, 0.09 if state.hand_open > 0.5 else 0.05, GRIPPER_RGB)
        return cv.image()


# --- debugging dumps ------------------------------------------------------------


def write_ppm(path, image: np.ndarray) -> None:
    """Binary P6 portable pixmap of an H x W x 3 image in [0, 1]."""
    img = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    h, w, _ = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def make_env(name: str, **overrides):
    if name == "reach":
        return ReachEnv(replace(ReachConfig(), **overrides))
    if name == "grasp_toy":
        return GraspToyEnv(replace(GraspConfig(), **overrides))
    raise ValueError(f"unknown env {name!r}")

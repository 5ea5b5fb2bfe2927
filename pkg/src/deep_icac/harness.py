"""Training loop, greedy evaluation, run metrics and the actor-update benchmark."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .cacla import CaclaAgent, CaclaParams
from .config import ExperimentConfig, format_config
from .curiosity import Curiosity, calibrate_e_max
from .ddpg import DdpgAgent, DdpgParams
from .envs import make_env, write_ppm
from .replay import PerBuffer, Transition, stack

EPISODE_FIELDS = ["episode", "steps", "ext_return", "int_return", "itm_nodes"]
EVAL_FIELDS = ["trial", "mean_return"]


class TrainingAborted(RuntimeError):
    def __init__(self, episode: int, step: int, cause: BaseException):
        super().__init__(f"run aborted at episode {episode}, step {step}: {type(cause).__name__}: {cause}")
        self.episode, self.step, self.cause = episode, step, cause


@dataclass
class EpisodeRecord:
    episode: int
    steps: int
    ext_return: float
    int_return: float
    itm_nodes: int
    success: bool = False
    int_contrib_mean: float = 0.0  # mean of r_int / (1 + D t) over the episode's steps
    delta_mean: float = float("nan")
    delta_pos_frac: float = float("nan")


@dataclass
class EvalRecord:
    trial: int
    mean_return: float
    success_rate: float


@dataclass
class RunLog:
    episodes: list[EpisodeRecord] = field(default_factory=list)
    evals: list[EvalRecord] = field(default_factory=list)
    env_steps: int = 0
    updates: int = 0
    wall_seconds: float = 0.0
    e_max: float | None = None
    agent: object = field(default=None, repr=False, compare=False)
    curiosity: object = field(default=None, repr=False, compare=False)


@dataclass
class EvalResult:
    mean_return: float
    success_rate: float
    returns: list


# --- agents ---------------------------------------------------------------------


def build_agent(cfg: ExperimentConfig, env, seed: int):
    if cfg.run.algorithm == "ddpg":
        return DdpgAgent(DdpgParams(env.obs_shape, env.action_dim, cfg.run.feature_dim, seed=seed), cfg.ddpg)
    return CaclaAgent(CaclaParams(env.obs_shape, env.action_dim, cfg.run.feature_dim, seed=seed), cfg.cacla)


def make_run_env(cfg: ExperimentConfig):
    overrides = dict(cfg.env)
    if cfg.run.steps_per_episode:
        overrides["max_steps"] = cfg.run.steps_per_episode
    return make_env(cfg.run.env, **overrides)


def seed_streams(master_seed: int) -> dict:
    """Independent generators for env, exploration and replay, plus an init seed."""
    env_ss, explore_ss, per_ss, init_ss = np.random.SeedSequence(master_seed).spawn(4)
    return {
        "env": np.random.default_rng(env_ss),
        "explore": np.random.default_rng(explore_ss),
        "per": np.random.default_rng(per_ss),
        "init": int(init_ss.generate_state(1)[0] % (2**31)),
    }


# --- evaluation -----------------------------------------------------------------


def evaluate(agent, env, k: int, reward_mode: str = "dense", dump_dir=None) -> EvalResult:
    """k greedy episodes on the held-out targets; never touches agent parameters."""
    if k < 1:
        raise ValueError("evaluation needs at least one episode")
    returns, successes = [], 0
    unused = np.random.default_rng(0)
    for i in range(k):
        obs = env.reset_holdout(i)
        if dump_dir is not None:
            write_ppm(Path(dump_dir) / f"eval{i:02d}_t00.ppm", obs)
        total, t, out = 0.0, 0, None
        while out is None or not out.terminal:
            out = env.step(agent.choose_action(obs, False, 0.0, unused))
            obs = out.obs
            t += 1
            total += out.r_dense if reward_mode == "dense" else out.r_sparse
            if dump_dir is not None:
                write_ppm(Path(dump_dir) / f"eval{i:02d}_t{t:02d}.ppm", obs)
        returns.append(total)
        successes += bool(out.success)
    return EvalResult(float(np.mean(returns)), successes / k, returns)


def run_eval(agent, env, k: int, reward_mode: str = "dense") -> float:
    return evaluate(agent, env, k, reward_mode).mean_return


# --- training -------------------------------------------------------------------


def run_training(cfg: ExperimentConfig, out_dir=None, curiosity=None, progress=None) -> RunLog:
    """Collect, store, replay and update following the actor-critic loop.

    With ``update_mode = "episode"`` the updates for an episode (one per
    collected step, times ``updates_per_step``) run after it ends; with
    ``"step"`` they follow every environment step. ``curiosity`` overrides the module built for
    deep_icac (any object with ``step``, ``mix`` and ``map``).
    """
    run = cfg.run
    env = make_run_env(cfg)
    streams = seed_streams(run.master_seed)
    agent = build_agent(cfg, env, streams["init"])
    hyper = cfg.hyper
    icac = run.algorithm == "deep_icac"
    if icac and curiosity is None:
        curiosity = Curiosity(run.feature_dim, env.action_dim, cfg.curiosity)
    max_steps = env.cfg.max_steps
    buf = PerBuffer(
        capacity=cfg.replay.capacity,
        alpha=cfg.replay.alpha,
        beta0=cfg.replay.beta0,
        beta_end_step=run.episodes * max_steps,
        epsilon_p=cfg.replay.epsilon_p,
        action_bound=1.0,
    )
    warmup = run.warmup_factor * hyper.minibatch
    log = RunLog()
    sigma = hyper.sigma
    calib: list[np.ndarray] = []
    t_global = 0
    start = time.perf_counter()
    deltas: list[np.ndarray] = []

    def update():
        batch, ids, w = buf.sample(hyper.minibatch, t_global, streams["per"])
        diag = agent.train_step(stack(batch), w)
        buf.update_priorities(ids, diag.delta)
        agent.soft_update()
        deltas.append(diag.delta)
        log.updates += 1

    episode = step = 0
    try:
        for episode in range(run.episodes):
            obs = env.reset(streams["env"])
            ext = intr = contrib = 0.0
            nodes = 0
            out = None
            phi = agent.encode(obs) if icac else None
            deltas.clear()
            for step in range(max_steps):
                if icac:
                    a = agent.act(phi, True, sigma, streams["explore"])
                else:
                    a = agent.choose_action(obs, True, sigma, streams["explore"])
                out = env.step(a)
                r_ext = out.r_dense if run.reward_mode == "dense" else out.r_sparse
                r_int = 0.0
                r = r_ext
                if icac:
                    phi_next = agent.encode(out.obs)
                    cs = curiosity.step(phi, a, phi_next)
                    r_int = cs.r_int
                    r = curiosity.mix(r_ext, r_int, t_global)
                    contrib += r - r_ext
                    if run.e_max_calibration_steps:
                        if len(calib) < run.e_max_calibration_steps:
                            calib.append(phi)
                            if len(calib) == run.e_max_calibration_steps:
                                curiosity.map.e_max = log.e_max = calibrate_e_max(np.stack(calib), run.e_max_factor)
                    phi = phi_next
                # the step cap is a time limit, so only real terminal events stop bootstrapping
                done = bool(out.success or getattr(env.state, "toppled", False))
                buf.push(Transition(obs, a, r, out.obs, done))
                ext += r_ext
                intr += r_int
                t_global += 1
                obs = out.obs
                if run.update_mode == "step" and len(buf) >= warmup:
                    for _ in range(run.updates_per_step):
                        update()
                    if icac:
                        phi = agent.encode(obs)
                if out.terminal:
                    break
            steps = step + 1
            if run.update_mode == "episode" and len(buf) >= warmup:
                for _ in range(steps * run.updates_per_step):
                    update()
            if icac:
                nodes = len(curiosity.map.nodes)
            d = np.concatenate(deltas) if deltas else np.array([])
            log.episodes.append(
                EpisodeRecord(
                    episode,
                    steps,
                    ext,
                    intr,
                    nodes,
                    bool(out.success),
                    contrib / steps,
                    float(d.mean()) if d.size else float("nan"),
                    float((d > 0).mean()) if d.size else float("nan"),
                )
            )
            sigma = max(hyper.sigma_min, sigma * hyper.sigma_decay)
            if (episode + 1) % run.eval_every == 0:
                res = evaluate(agent, env, run.eval_episodes, run.reward_mode)
                log.evals.append(EvalRecord(len(log.evals), res.mean_return, res.success_rate))
                if progress:
                    progress(episode + 1, res)
    except Exception as exc:  # noqa: BLE001 - rewrapped with position info
        raise TrainingAborted(episode, step, exc) from exc
    log.env_steps = t_global
    log.wall_seconds = time.perf_counter() - start
    if out_dir is not None:
        write_outputs(log, cfg, out_dir, agent, curiosity)
    log.agent = agent
    log.curiosity = curiosity
    return log


# --- metrics and outputs ------------------------------------------------------


def summarize(log: RunLog) -> dict:
    if not log.episodes:
        raise ValueError("empty run log")
    returns = np.array([e.ext_return for e in log.episodes], np.float64)
    return {
        "learning_speed": float(returns.mean()),
        "final_performance": float(returns[-100:].mean()),
    }


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def write_outputs(log: RunLog, cfg: ExperimentConfig, out_dir, agent=None, curiosity=None) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "episodes.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(EPISODE_FIELDS)
        for e in log.episodes:
            w.writerow([_fmt(getattr(e, k)) for k in EPISODE_FIELDS])
    with open(out / "evals.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(EVAL_FIELDS)
        for e in log.evals:
            w.writerow([_fmt(getattr(e, k)) for k in EVAL_FIELDS])
    with open(out / "diagnostics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        cols = ["episode", "success", "int_contrib_mean", "delta_mean", "delta_pos_frac"]
        w.writerow(cols)
        for e in log.episodes:
            w.writerow([_fmt(getattr(e, k)) for k in cols])
    summary = summarize(log)
    summary.update(
        algorithm=cfg.run.algorithm,
        env=cfg.run.env,
        reward_mode=cfg.run.reward_mode,
        master_seed=cfg.run.master_seed,
        episodes=len(log.episodes),
        env_steps=log.env_steps,
        updates=log.updates,
        wall_seconds=round(log.wall_seconds, 3),
        e_max=log.e_max,
        evals=[asdict(e) for e in log.evals],
        final_eval_success=log.evals[-1].success_rate if log.evals else None,
        itm_nodes_final=log.episodes[-1].itm_nodes,
        itm_nodes_max=max(e.itm_nodes for e in log.episodes),
    )
    (out / "summary.json").write_text(json.dumps(summary, indent=1) + "\n")
    (out / "config.ini").write_text(format_config(cfg))
    if agent is not None:
        agent.save(out / "agent.ckpt", [f"algorithm={cfg.run.algorithm}", f"env={cfg.run.env}"])
    if curiosity is not None:
        curiosity.map.dump(out / "itm_map.json")


# --- benchmark ----------------------------------------------------------------


def bench_update_costs(sizes=(8, 32, 128), repeats: int = 30, obs_shape=(32, 32, 3), action_dim: int = 3, seed: int = 0) -> dict:
    """Median wall time of one actor update for the CACLA and DDPG actors.

    The CACLA actor regresses on precomputed features (s_a x s_l x s_w
    work per sample for its few hundred weights), while the DDPG actor
    backpropagates dQ/da through the critic head into the whole image
    network. Both are linear in the minibatch size n; the per-doubling
    ratio is (t(n2) / t(n1)) ** (1 / log2(n2 / n1)).
    """
    sizes = [int(n) for n in sizes]
    if any(n < 1 for n in sizes):
        raise ValueError(f"minibatch sizes must be positive, got {sizes}")
    rng = np.random.default_rng(seed)
    cacla = CaclaAgent(CaclaParams(obs_shape, action_dim, seed=seed))
    ddpg = DdpgAgent(DdpgParams(obs_shape, action_dim, seed=seed))
    rows = []
    for n in sizes:
        s = rng.random((n,) + tuple(obs_shape)).astype(np.float32)
        a = rng.uniform(-1, 1, (n, action_dim)).astype(np.float32)
        phi = cacla.encode(s)
        batch = (s, a, np.zeros(n), s, np.ones(n, bool))

        def timed(fn):
            fn()
            ts = []
            for _ in range(repeats):
                t0 = time.perf_counter()
                fn()
                ts.append(time.perf_counter() - t0)
            return float(np.median(ts))

        rows.append(
            {
                "n": n,
                "cacla_actor_s": timed(lambda: cacla.actor_regression(phi, a)),
                "ddpg_actor_s": timed(lambda: ddpg.actor_update(batch)),
            }
        )
    for prev, row in zip(rows, rows[1:]):
        doublings = np.log2(row["n"] / prev["n"])
        for key in ("cacla", "ddpg"):
            ratio = row[f"{key}_actor_s"] / prev[f"{key}_actor_s"]
            row[f"{key}_ratio_per_doubling"] = float(ratio ** (1.0 / doublings))
    return {
        "rows": rows,
        "params": {"cacla_actor": cacla.p.actor.num_params, "ddpg_actor": ddpg.p.actor.num_params},
    }

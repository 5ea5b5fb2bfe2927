"""Experiment configuration and its sectioned key=value text format.

Example::

    [run]
    algorithm = deep_icac
    env = reach
    reward_mode = sparse
    episodes = 2000
    master_seed = 3

    [cacla]
    gamma = 0.9

    [curiosity]
    mu = 10

Sections: run, replay, cacla, ddpg, curiosity, env. Unknown keys are errors.
Keys under ``env`` are passed to the environment config unchanged.
"""

from __future__ import annotations

import configparser
import dataclasses
import types
import typing
from dataclasses import dataclass, field

from .cacla import CaclaHyper
from .curiosity import CuriosityConfig
from .ddpg import DdpgHyper

ALGORITHMS = ("deep_cacla", "deep_icac", "ddpg")
ENVS = ("reach", "grasp_toy")
REWARD_MODES = ("dense", "sparse")
UPDATE_MODES = ("episode", "step")


@dataclass
class ReplayConfig:
    capacity: int = 100_000
    alpha: float = 0.6
    beta0: float = 0.4
    epsilon_p: float = 1e-3


@dataclass
class RunConfig:
    algorithm: str = "deep_cacla"
    env: str = "reach"
    reward_mode: str = "dense"
    episodes: int = 2000
    steps_per_episode: int = 0  # 0: the environment's own cap
    eval_every: int = 250
    eval_episodes: int = 20
    master_seed: int = 0
    update_mode: str = "episode"  # "episode": all updates at episode end; "step": one per env step
    updates_per_step: int = 1  # minibatch updates per collected transition
    warmup_factor: int = 5  # no updates until the buffer holds warmup_factor x minibatch
    feature_dim: int = 16
    e_max_calibration_steps: int = 500  # 0 keeps curiosity.e_max
    e_max_factor: float = 1.5

    def validate(self) -> None:
        for name, allowed in [
            ("algorithm", ALGORITHMS),
            ("env", ENVS),
            ("reward_mode", REWARD_MODES),
            ("update_mode", UPDATE_MODES),
        ]:
            if getattr(self, name) not in allowed:
                raise ValueError(f"run.{name} must be one of {allowed}, got {getattr(self, name)!r}")
        if self.episodes < 1 or self.eval_every < 1 or self.eval_episodes < 1:
            raise ValueError("episodes, eval_every and eval_episodes must be positive")
        if self.updates_per_step < 1:
            raise ValueError("updates_per_step must be positive")


@dataclass
class ExperimentConfig:
    run: RunConfig = field(default_factory=RunConfig)
    replay: ReplayConfig = field(default_factory=ReplayConfig)
    cacla: CaclaHyper = field(default_factory=CaclaHyper)
    ddpg: DdpgHyper = field(default_factory=DdpgHyper)
    curiosity: CuriosityConfig = field(default_factory=CuriosityConfig)
    env: dict = field(default_factory=dict)

    def __post_init__(self):
        self.run.validate()

    @property
    def hyper(self):
        return self.ddpg if self.run.algorithm == "ddpg" else self.cacla

    def with_run(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, run=dataclasses.replace(self.run, **changes))


SECTIONS = ("run", "replay", "cacla", "ddpg", "curiosity")


def _coerce(text: str, typ):
    origin = typing.get_origin(typ)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(typ) if a is not type(None)]
        if text.strip().lower() == "none":
            return None
        return _coerce(text, args[0])
    if typ is bool:
        low = text.strip().lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"not a boolean: {text!r}")
        return low in ("true", "1", "yes")
    if typ is int:
        return int(text.replace("_", ""))
    if typ is float:
        return float(text)
    if typ is tuple or origin is tuple:
        return tuple(float(x) for x in text.split(","))
    return text.strip()


def _parse_env_value(text: str):
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    if "," in text:
        return tuple(float(x) for x in text.split(","))
    return text.strip()


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    cp.read_string(text)
    kwargs = {}
    defaults = ExperimentConfig()
    for section in cp.sections():
        if section == "env":
            kwargs["env"] = {k: _parse_env_value(v) for k, v in cp[section].items()}
            continue
        if section not in SECTIONS:
            raise ValueError(f"unknown config section [{section}]")
        base = getattr(defaults, section)
        hints = typing.get_type_hints(type(base))
        names = {f.name for f in dataclasses.fields(base)}
        values = {}
        for key, raw in cp[section].items():
            if key not in names:
                raise ValueError(f"unknown key {section}.{key}")
            values[key] = _coerce(raw, hints[key])
        kwargs[section] = dataclasses.replace(base, **values)
    return ExperimentConfig(**kwargs)


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def format_config(cfg: ExperimentConfig) -> str:
    def fmt(v):
        if isinstance(v, tuple):
            return ",".join(repr(x) for x in v)
        return repr(v) if isinstance(v, float) else str(v)

    lines = []
    for section in SECTIONS:
        lines.append(f"[{section}]")
        obj = getattr(cfg, section)
        for f in dataclasses.fields(obj):
            lines.append(f"{f.name} = {fmt(getattr(obj, f.name))}")
        lines.append("")
    if cfg.env:
        lines.append("[env]")
        lines.extend(f"{k} = {fmt(v)}" for k, v in cfg.env.items())
        lines.append("")
    return "\n".join(lines)

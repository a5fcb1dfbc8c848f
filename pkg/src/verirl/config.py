"""Training configuration: one JSON document, strict keys, env overrides.

Any key can be overridden from the environment as ``VERIRL_<KEY>`` with
nested keys joined by a double underscore, e.g. ``VERIRL_PENALTY__ALPHA0=0.1``
or ``VERIRL_ENV__TAU0=800``. Values are parsed as JSON when possible.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional, Union, get_type_hints

from .evalkit import DEFAULT_BUDGETS
from .reward import PenaltySchedule
from .taskgen import ConfigError, EnvModel, TaskFamily, allocate_counts
from .thinkmode import ThinkTemplate
from .verifier import VerifierConfig

ENV_PREFIX = "VERIRL_"

# RL query mix, in thousands of queries per family
DEFAULT_FAMILY_MIX = {
    "Math": 50.0,
    "Code": 30.0,
    "Stem": 15.0,
    "InstructionFollowing": 30.0,
    "MobileService": 20.0,
}


@dataclass(frozen=True)
class ProviderConfig:
    kind: str = "local"  # "local" or "remote"
    address: str = ""  # host:port for remote
    timeout: float = 5.0
    retries: int = 1


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    steps: int = 300
    group_size: int = 8
    groups_per_step: int = 48
    task_pool_size: int = 256
    learning_rate: float = 2.0
    kl_coefficient: float = 0.01
    clip_epsilon: float = 0.2
    advantage_epsilon: float = 1e-8
    sampling_temperature: float = 0.6
    penalty_enabled: bool = True
    penalty: PenaltySchedule = field(default_factory=PenaltySchedule)
    env: EnvModel = field(default_factory=EnvModel)
    family_mix: dict = field(default_factory=lambda: dict(DEFAULT_FAMILY_MIX))
    think_fraction: float = 0.5
    policy_init: dict = field(default_factory=dict)  # mode -> prior logits
    verifier: VerifierConfig = field(default_factory=VerifierConfig)
    template: ThinkTemplate = field(default_factory=ThinkTemplate)
    provider: ProviderConfig = field(default_factory=ProviderConfig)
    budgets: tuple = DEFAULT_BUDGETS
    eval_tasks: int = 200
    eval_samples_per_task: int = 50
    run_dir: str = "runs/demo"
    checkpoint_every: int = 100
    log_wall_time: bool = False

    def __post_init__(self) -> None:
        if self.group_size < 2:
            raise ConfigError("group_size must be >= 2")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.groups_per_step < 1 or self.task_pool_size < 1:
            raise ConfigError("groups_per_step and task_pool_size must be >= 1")
        if self.sampling_temperature <= 0:
            raise ConfigError("sampling_temperature must be > 0")
        if self.learning_rate < 0 or self.kl_coefficient < 0 or self.clip_epsilon < 0:
            raise ConfigError("learning_rate, kl_coefficient and clip_epsilon must be >= 0")
        if self.eval_tasks < 1 or self.eval_samples_per_task < 1 or self.checkpoint_every < 1:
            raise ConfigError("eval sizes and checkpoint_every must be >= 1")
        try:
            mix = {TaskFamily(k): float(v) for k, v in self.family_mix.items()}
        except ValueError as exc:
            raise ConfigError(f"bad family_mix: {exc}") from exc
        allocate_counts(1, mix)
        for mode, prior in self.policy_init.items():
            if mode not in ("thinking", "non_thinking"):
                raise ConfigError(f"policy_init has unknown mode {mode!r}")
            if len(prior) != self.env.n_buckets:
                raise ConfigError(f"policy_init[{mode}] needs {self.env.n_buckets} logits")
        b = list(self.budgets)
        if not b or any(y <= x for x, y in zip(b, b[1:])):
            raise ConfigError("budgets must be non-empty and strictly increasing")
        if self.provider.kind not in ("local", "remote"):
            raise ConfigError("provider.kind must be 'local' or 'remote'")
        if self.provider.kind == "remote" and ":" not in self.provider.address:
            raise ConfigError("remote provider needs address host:port")

    @property
    def mix(self) -> dict[TaskFamily, float]:
        return {TaskFamily(k): float(v) for k, v in self.family_mix.items()}

    def to_dict(self) -> dict:
        return _to_plain(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> "TrainConfig":
        return _build(cls, data, "")


# ---------------------------------------------------------------- (de)serialisation


def _to_plain(obj: Any) -> Any:
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(x) for x in obj]
    if isinstance(obj, dict):
        return {str(k): _to_plain(v) for k, v in obj.items()}
    return obj


def _build(cls, data: Any, where: str):
    if not isinstance(data, Mapping):
        raise ConfigError(f"{where or 'config'} must be an object")
    hints = get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown key(s) in {where or 'config'}: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        typ = hints[name]
        path = f"{where}.{name}" if where else name
        if dataclasses.is_dataclass(typ):
            kwargs[name] = _build(typ, value, path)
        else:
            kwargs[name] = _coerce(typ, value, path)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {where or 'config'}: {exc}") from exc


def _coerce(typ, value, path):
    try:
        if typ is bool:
            if not isinstance(value, bool):
                raise TypeError("expected true/false")
            return value
        if typ is int:
            if isinstance(value, bool) or float(value) != int(value):
                raise TypeError("expected an integer")
            return int(value)
        if typ is float:
            if isinstance(value, bool):
                raise TypeError("expected a number")
            return float(value)
        if typ is str:
            if not isinstance(value, str):
                raise TypeError("expected a string")
            return value
        if typ is tuple or getattr(typ, "__origin__", None) is tuple:
            return tuple(value)
        if typ is dict:
            if not isinstance(value, Mapping):
                raise TypeError("expected an object")
            return dict(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return value


def apply_env_overrides(data: dict, environ: Optional[Mapping[str, str]] = None) -> dict:
    environ = os.environ if environ is None else environ
    out = json.loads(json.dumps(data))
    for key, raw in sorted(environ.items()):
        if not key.startswith(ENV_PREFIX):
            continue
        path = key[len(ENV_PREFIX):].lower().split("__")
        try:
            value = json.loads(raw)
        except ValueError:
            value = raw
        set_path(out, path, value)
    return out


def set_path(data: dict, path: list[str], value: Any) -> None:
    """Set a nested key, creating intermediate objects; validation happens on build."""
    node = data
    for part in path[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot set {'.'.join(path)}: {part} is not an object")
    node[path[-1]] = value


def load_config(path: Union[str, Path], environ: Optional[Mapping[str, str]] = None) -> TrainConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return TrainConfig.from_dict(apply_env_overrides(data, environ))

"""Versioned JSON checkpoints of the optimizer state and run configuration.

A checkpoint written, loaded and written again is byte-identical: keys are
sorted, floats are stored with ``repr`` precision and nothing time-dependent
is recorded. The RNG section names the seed-derivation scheme and the next
step, which together pin every later random draw.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Union

from .config import TrainConfig
from .grpo import OptimizerState, PolicyParams
from .reward import PenaltySchedule
from .taskgen import ConfigError

FORMAT = "verirl-checkpoint"
VERSION = 1
RNG_SCHEME = "pcg64:seedseq[root_seed,stream,step,group]"


class CheckpointError(RuntimeError):
    pass


@dataclass
class Checkpoint:
    state: OptimizerState
    config: TrainConfig

    def to_dict(self) -> dict:
        s = self.state
        return {
            "format": FORMAT,
            "version": VERSION,
            "step": s.step,
            "optimizer": {
                "learning_rate": s.learning_rate,
                "kl_coefficient": s.kl_coefficient,
                "clip_epsilon": s.clip_epsilon,
                "advantage_epsilon": s.advantage_epsilon,
                "penalty_enabled": s.penalty_enabled,
                "penalty": {
                    "alpha0": s.penalty.alpha0,
                    "alpha_min": s.penalty.alpha_min,
                    "decay_steps": s.penalty.decay_steps,
                    "length_ref": s.penalty.length_ref,
                },
            },
            "params": s.params.to_dict(),
            "reference": s.reference.to_dict(),
            "rng": {"scheme": RNG_SCHEME, "root_seed": self.config.seed, "next_step": s.step},
            "config": self.config.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Checkpoint":
        if not isinstance(data, dict) or data.get("format") != FORMAT:
            raise CheckpointError("not a checkpoint file")
        if data.get("version") != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {data.get('version')!r}")
        try:
            config = TrainConfig.from_dict(data["config"])
            opt = data["optimizer"]
            params = PolicyParams.from_dict(data["params"])
            reference = PolicyParams.from_dict(data["reference"])
            step = int(data["step"])
            rng = data["rng"]
            state = OptimizerState(
                step=step,
                learning_rate=float(opt["learning_rate"]),
                kl_coefficient=float(opt["kl_coefficient"]),
                clip_epsilon=float(opt["clip_epsilon"]),
                params=params,
                reference=reference,
                penalty=PenaltySchedule(**opt["penalty"]),
                penalty_enabled=bool(opt["penalty_enabled"]),
                advantage_epsilon=float(opt["advantage_epsilon"]),
            )
        except (KeyError, TypeError, ValueError, ConfigError) as exc:
            raise CheckpointError(f"malformed checkpoint: {exc}") from exc
        if rng.get("scheme") != RNG_SCHEME or rng.get("root_seed") != config.seed or rng.get("next_step") != step:
            raise CheckpointError("checkpoint RNG section is inconsistent")
        if set(params.logits) != set(reference.logits):
            raise CheckpointError("params and reference cover different slots")
        for k, v in params.logits.items():
            if v.shape != (config.env.n_buckets,) or reference.logits[k].shape != v.shape:
                raise CheckpointError(f"slot {k} has the wrong number of buckets")
        return cls(state, config)


def dumps(ckpt: Checkpoint) -> str:
    return json.dumps(ckpt.to_dict(), sort_keys=True, indent=1, allow_nan=False) + "\n"


def save(ckpt: Checkpoint, path: Union[str, Path]) -> Path:
    """Atomic write (temp file then rename) so an interrupted save leaves the old file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(dumps(ckpt))
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)
    return path


def load(path: Union[str, Path]) -> Checkpoint:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    except ValueError as exc:
        raise CheckpointError(f"checkpoint {path} is corrupt or truncated: {exc}") from exc
    return Checkpoint.from_dict(data)

"""Training loop, evaluation and batch reward checking.

Random streams
--------------
Every draw comes from ``np.random.default_rng([seed, stream, *path])``:

* ``[seed, 0x7A5C]`` builds the training task pool (see taskgen),
* ``[seed, STREAM_TASKS, step]`` picks the tasks of one step,
* ``[seed, STREAM_ROLLOUT, step, group]`` drives one rollout group,
* ``[seed, STREAM_EVAL, mode, task]`` drives evaluation rollouts.

No generator outlives the unit it seeds, so the state needed to resume is
just the root seed and the next step number.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from . import checkpoint as ckpt_io
from .config import TrainConfig
from .evalkit import BudgetCurve, RunMetrics, budget_curve, run_metrics, write_curve_csv
from .grpo import (
    MODES,
    OptimizerState,
    PolicyParams,
    ResponseSample,
    RolloutGroup,
    accumulate,
    apply_gradients,
    exact_kl,
    reset_and_resume,
    slot_key,
)
from .provider import RemoteProvider, RuleProvider, ScoreRequest
from .reward import compose_rule_reward, effective_alpha, score_group
from .taskgen import (
    FAMILIES,
    EnvModel,
    TaskInstance,
    correctness_table,
    generate_tasks,
    synthesize_response,
    truth_from_dict,
)
from .thinkmode import THINKING, ChatTurn, ThinkTemplate, build_prompt, detect_mode
from .verifier import VerifierConfig, answer_correct

log = logging.getLogger(__name__)

STREAM_TASKS = 1
STREAM_ROLLOUT = 2
STREAM_EVAL = 3
# held-out tasks come from a different generator seed than the training pool
EVAL_SEED_OFFSET = 1_000_003

RUN_LOG = "run_log.jsonl"
FINAL_METRICS = "final_metrics.json"


def stream(seed: int, *path: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), *(int(p) for p in path)])


# ---------------------------------------------------------------- setup


def initial_params(config: TrainConfig) -> PolicyParams:
    return PolicyParams.init(config.env.n_buckets, config.sampling_temperature, config.policy_init or None)


def initial_state(config: TrainConfig) -> OptimizerState:
    return OptimizerState.fresh(
        initial_params(config),
        learning_rate=config.learning_rate,
        kl_coefficient=config.kl_coefficient,
        clip_epsilon=config.clip_epsilon,
        penalty=config.penalty,
        penalty_enabled=config.penalty_enabled,
        advantage_epsilon=config.advantage_epsilon,
    )


def make_provider(config: TrainConfig):
    if config.provider.kind == "remote":
        host, port = config.provider.address.rsplit(":", 1)
        return RemoteProvider(host, int(port), config.provider.timeout, config.provider.retries)
    return RuleProvider(config.verifier)


def task_slot(task: TaskInstance, template: ThinkTemplate) -> str:
    """Policy slot chosen the way a served model would: by reading the prompt."""
    assembly = build_prompt([ChatTurn("user", task.prompt, task.think_mode)], template)
    return slot_key(task.family, detect_mode(assembly.rendered, template))


def eval_tasks(config: TrainConfig) -> list[TaskInstance]:
    return generate_tasks(config.seed + EVAL_SEED_OFFSET, config.eval_tasks, config.mix, config.think_fraction)


# ---------------------------------------------------------------- rollouts


def sample_group(
    task: TaskInstance,
    slot: str,
    params: PolicyParams,
    env: EnvModel,
    k: int,
    rng: np.random.Generator,
    min_reasoning_tokens: int = 8,
) -> list[ResponseSample]:
    logp = params.log_probs(slot)
    probs = np.exp(logp)
    buckets = rng.choice(env.n_buckets, size=k, p=probs / probs.sum())
    draws = rng.random(k)
    p_correct = correctness_table(env, task.difficulty)
    samples = []
    for b, u in zip(buckets, draws):
        b = int(b)
        ok = bool(u < p_correct[b])
        text = synthesize_response(task, b, ok, rng, env, min_reasoning_tokens)
        samples.append(ResponseSample(b, ok, text, env.bucket_tokens[b], float(logp[b])))
    return samples


# ---------------------------------------------------------------- training


class Trainer:
    def __init__(
        self,
        config: TrainConfig,
        state: Optional[OptimizerState] = None,
        provider=None,
        run_dir: Union[str, Path, None] = None,
    ):
        self.config = config
        self.state = state if state is not None else initial_state(config)
        self.provider = provider if provider is not None else make_provider(config)
        self.run_dir = Path(run_dir if run_dir is not None else config.run_dir)
        self.pool = generate_tasks(config.seed, config.task_pool_size, config.mix, config.think_fraction)
        self.slots = [task_slot(t, config.template) for t in self.pool]

    @property
    def log_path(self) -> Path:
        return self.run_dir / RUN_LOG

    def checkpoint_path(self, step: int) -> Path:
        return self.run_dir / f"ckpt-{step:06d}.json"

    def save_checkpoint(self) -> Path:
        return ckpt_io.save(ckpt_io.Checkpoint(self.state, self.config), self.checkpoint_path(self.state.step))

    def rollout(self, step: int) -> list[RolloutGroup]:
        cfg = self.config
        picks = stream(cfg.seed, STREAM_TASKS, step).integers(len(self.pool), size=cfg.groups_per_step)
        groups = []
        for g, idx in enumerate(picks):
            task, slot = self.pool[int(idx)], self.slots[int(idx)]
            rng = stream(cfg.seed, STREAM_ROLLOUT, step, g)
            samples = sample_group(
                task, slot, self.state.params, cfg.env, cfg.group_size, rng, cfg.verifier.min_reasoning_tokens
            )
            breakdowns, stats = score_group(
                [s.text for s in samples],
                task.ground_truth,
                self.state.penalty,
                step,
                provider=self.provider,
                family=task.family.value,
                ids=[f"{step}-{g}-{i}" for i in range(len(samples))],
                penalty_enabled=self.state.penalty_enabled,
                verifier=cfg.verifier,
                lengths=[s.token_length for s in samples],
            )
            groups.append(RolloutGroup(task, slot, samples, breakdowns, stats))
        return groups

    def train_step(self) -> dict:
        start = time.perf_counter()
        step = self.state.step
        groups = self.rollout(step)
        loss, grads = accumulate(self.state, groups)
        self.state = apply_gradients(self.state, grads)
        record = self._record(step, groups, loss)
        if self.config.log_wall_time:
            record["wall_time"] = time.perf_counter() - start
        return record

    def _record(self, step: int, groups: Sequence[RolloutGroup], loss: float) -> dict:
        per_family: dict[str, list[float]] = {}
        lengths, correct = [], []
        for g in groups:
            per_family.setdefault(g.task.family.value, []).extend(b.total for b in g.breakdowns)
            lengths.extend(s.token_length for s in g.samples)
            correct.extend(b.answer_reward for b in g.breakdowns)
        params, ref = self.state.params, self.state.reference
        kl = float(np.mean([exact_kl(params.logits[k], ref.logits[k], params.temperature) for k in sorted(params.logits)]))
        return {
            "step": self.state.step,
            "family_reward": {f.value: float(np.mean(per_family[f.value])) for f in FAMILIES if f.value in per_family},
            "mean_length": float(np.mean(lengths)),
            "accuracy": float(np.mean(correct)),
            "kl": kl,
            # schedule value at this step before the per-response length scaling
            "alpha_eff": effective_alpha(self.state.penalty, step, self.state.penalty.length_ref),
            "loss": loss,
        }

    def run(self, n_steps: int) -> list[dict]:
        """Train ``n_steps`` more steps, appending to the run log and checkpointing."""
        self.run_dir.mkdir(parents=True, exist_ok=True)
        records = []
        try:
            with open(self.log_path, "a", encoding="utf-8") as fh:
                for _ in range(n_steps):
                    record = self.train_step()
                    fh.write(json.dumps(record, sort_keys=True) + "\n")
                    fh.flush()
                    records.append(record)
                    if self.state.step % self.config.checkpoint_every == 0:
                        self.save_checkpoint()
        finally:
            # on success or on an aborted group, the last completed step is preserved
            self.save_checkpoint()
        return records


def append_event(path: Path, event: Mapping[str, Any]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(dict(event), sort_keys=True) + "\n")


def truncate_log(path: Path, step: int) -> None:
    """Drop step records past ``step`` (left behind by a run killed after its last checkpoint)."""
    if not path.exists():
        return
    kept = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            try:
                rec = json.loads(line)
            except ValueError:
                break  # a torn final line from a crash
            if "step" in rec and rec["step"] > step:
                break
            kept.append(line if line.endswith("\n") else line + "\n")
    with open(path, "w", encoding="utf-8") as fh:
        fh.writelines(kept)


# ---------------------------------------------------------------- evaluation


def expected_metrics(params: PolicyParams, env: EnvModel, tasks: Sequence[TaskInstance],
                     template: ThinkTemplate = ThinkTemplate()) -> dict:
    """Exact expected accuracy and length of the policy over ``tasks`` by enumeration."""
    tokens = np.array(env.bucket_tokens, dtype=float)
    acc, length, length_correct = [], [], []
    for task in tasks:
        pi = params.probs(task_slot(task, template))
        p = correctness_table(env, task.difficulty)
        acc.append(float(pi @ p))
        length.append(float(pi @ tokens))
        length_correct.append(float(pi @ (p * tokens)))
    accuracy = float(np.mean(acc))
    mean_len = float(np.mean(length))
    return {
        "accuracy": accuracy,
        "mean_length": mean_len,
        "mean_length_correct": float(np.mean(length_correct)) / accuracy if accuracy > 0 else 0.0,
        "token_efficiency": accuracy / (mean_len / 1000.0),
    }


def expected_budget_curve(params: PolicyParams, env: EnvModel, tasks: Sequence[TaskInstance],
                          budgets: Sequence[float], template: ThinkTemplate = ThinkTemplate()) -> BudgetCurve:
    tokens = np.array(env.bucket_tokens, dtype=float)
    acc = np.zeros(len(budgets))
    for task in tasks:
        pi = params.probs(task_slot(task, template))
        mass = pi * correctness_table(env, task.difficulty)
        acc += np.array([mass[tokens <= b].sum() for b in budgets])
    return BudgetCurve(tuple(budgets), tuple(float(a) for a in acc / len(tasks)))


def evaluate_rollouts(
    params: PolicyParams,
    config: TrainConfig,
    tasks: Sequence[TaskInstance],
    mode_index: int = 0,
    samples_per_task: Optional[int] = None,
) -> list[tuple[bool, int]]:
    """Sampled (is_correct, length) pairs, judged by the verifier on synthesized text."""
    n = samples_per_task or config.eval_samples_per_task
    env = config.env
    results = []
    for i, task in enumerate(tasks):
        slot = task_slot(task, config.template)
        rng = stream(config.seed, STREAM_EVAL, mode_index, i)
        for s in sample_group(task, slot, params, env, n, rng, config.verifier.min_reasoning_tokens):
            results.append((answer_correct(s.text, task.ground_truth), s.token_length))
    return results


def mode_tasks(tasks: Iterable[TaskInstance], mode: str) -> list[TaskInstance]:
    return [replace(t, think_mode=(mode == THINKING)) for t in tasks]


def cmd_eval_budget(checkpoint_path: Union[str, Path], config: TrainConfig, out: Union[str, Path]) -> dict[str, BudgetCurve]:
    """Write ``budget_<mode>.csv`` for both modes into directory ``out``."""
    state = ckpt_io.load(checkpoint_path).state
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    held_out = eval_tasks(config)
    curves = {}
    for m, mode in enumerate(MODES):
        results = evaluate_rollouts(state.params, config, mode_tasks(held_out, mode), m)
        curve = budget_curve(results, config.budgets)
        write_curve_csv(curve, out / f"budget_{mode}.csv")
        curves[mode] = curve
    return curves


def final_metrics(state: OptimizerState, config: TrainConfig) -> dict:
    held_out = eval_tasks(config)
    sampled: RunMetrics = run_metrics(evaluate_rollouts(state.params, config, held_out, 0), state.step)
    return {
        "step": state.step,
        "expected": expected_metrics(state.params, config.env, held_out, config.template),
        "initial_expected": expected_metrics(initial_params(config), config.env, held_out, config.template),
        "sampled": sampled.to_dict(),
    }


# ---------------------------------------------------------------- commands


@dataclass
class TrainResult:
    records: list[dict]
    metrics: dict
    checkpoint: Path
    state: OptimizerState


def _finish(trainer: Trainer, records: list[dict]) -> TrainResult:
    metrics = final_metrics(trainer.state, trainer.config)
    append_event(trainer.log_path, {"event": "eval", "metrics": metrics["sampled"]})
    with open(trainer.run_dir / FINAL_METRICS, "w", encoding="utf-8") as fh:
        json.dump(metrics, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return TrainResult(records, metrics, trainer.checkpoint_path(trainer.state.step), trainer.state)


def cmd_train(config: TrainConfig, provider=None, run_dir: Union[str, Path, None] = None) -> TrainResult:
    trainer = Trainer(config, provider=provider, run_dir=run_dir)
    trainer.run_dir.mkdir(parents=True, exist_ok=True)
    trainer.log_path.write_text("", encoding="utf-8")
    return _finish(trainer, trainer.run(config.steps))


def cmd_resume(
    checkpoint_path: Union[str, Path],
    overrides: Optional[Mapping[str, Any]] = None,
    steps: Optional[int] = None,
    provider=None,
    run_dir: Union[str, Path, None] = None,
) -> TrainResult:
    """Continue from a checkpoint.

    Without overrides this is a plain continuation. With overrides the
    reference is re-snapshotted and the changes are logged. ``steps`` counts
    additional steps; by default the run continues to ``config.steps``, or
    for another ``config.steps`` if that point is already reached.
    """
    loaded = ckpt_io.load(checkpoint_path)
    state, config = loaded.state, loaded.config
    if overrides:
        state = reset_and_resume(state, overrides)
    trainer = Trainer(config, state=state, provider=provider, run_dir=run_dir)
    truncate_log(trainer.log_path, state.step)
    if overrides:
        append_event(trainer.log_path, {"event": "reset", "after_step": state.step, "overrides": dict(overrides)})
    if steps is None:
        steps = config.steps - state.step if config.steps > state.step else config.steps
    return _finish(trainer, trainer.run(steps))


def reward_check_line(line: str, lineno: int, provider: RuleProvider) -> dict:
    try:
        obj = json.loads(line)
        if not isinstance(obj, dict):
            raise ValueError("line must hold a JSON object")
        req = ScoreRequest(
            str(obj.get("id", lineno)),
            str(obj.get("family", "")),
            obj["response_text"],
            truth_from_dict(obj["ground_truth"]),
        )
        if not isinstance(req.response_text, str):
            raise ValueError("response_text must be a string")
        res = provider.score_one(req)
    except (KeyError, TypeError, ValueError) as exc:
        return {"line": lineno, "error": f"{type(exc).__name__}: {exc}"}
    return {
        **obj,
        "answer_reward": res.answer_reward,
        "format_coef": res.format_coef,
        "repetition_coef": res.repetition_coef,
        "rule_reward": compose_rule_reward(res.answer_reward, res.format_coef, res.repetition_coef),
    }


def cmd_reward_check(in_path: Union[str, Path], out_path: Union[str, Path],
                     verifier: VerifierConfig = VerifierConfig()) -> int:
    """Score a JSONL batch line by line; returns the number of error lines."""
    provider = RuleProvider(verifier)
    errors = 0
    with open(in_path, encoding="utf-8") as src, open(out_path, "w", encoding="utf-8") as dst:
        for lineno, line in enumerate(src, start=1):
            if not line.strip():
                continue
            out = reward_check_line(line, lineno, provider)
            errors += "error" in out
            dst.write(json.dumps(out, sort_keys=True) + "\n")
    return errors

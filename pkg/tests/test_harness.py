import json
from dataclasses import replace
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from verirl import checkpoint as ckpt_io
from verirl.cli import EXIT_CHECKPOINT, EXIT_CONFIG, EXIT_OK, EXIT_PROVIDER, main
from verirl.config import TrainConfig, load_config
from verirl.harness import (
    RUN_LOG,
    Trainer,
    cmd_eval_budget,
    cmd_resume,
    cmd_reward_check,
    cmd_train,
    expected_budget_curve,
    initial_params,
    initial_state,
)
from verirl.provider import ProviderError
from verirl.taskgen import NumericTruth

DEMO = Path(__file__).resolve().parents[1] / "configs" / "demo.cfg"


@pytest.fixture(scope="module")
def small():
    return replace(load_config(DEMO, environ={}), steps=6, groups_per_step=6, task_pool_size=32,
                   eval_tasks=20, eval_samples_per_task=10, checkpoint_every=3)


def records(path):
    return [json.loads(x) for x in Path(path).read_text().splitlines()]


def test_train_writes_artifacts(tmp_path, small):
    result = cmd_train(small, run_dir=tmp_path)
    recs = [r for r in records(tmp_path / RUN_LOG) if "step" in r]
    assert [r["step"] for r in recs] == list(range(1, 7))
    for r in recs:
        assert set(r) >= {"family_reward", "mean_length", "accuracy", "kl", "alpha_eff"}
        assert 0 <= r["accuracy"] <= 1 and r["kl"] >= 0
    assert (tmp_path / "ckpt-000003.json").exists() and (tmp_path / "ckpt-000006.json").exists()
    assert result.checkpoint == tmp_path / "ckpt-000006.json"
    final = json.loads((tmp_path / "final_metrics.json").read_text())
    assert final["step"] == 6 and 0 < final["expected"]["accuracy"] < 1
    assert records(tmp_path / RUN_LOG)[-1]["event"] == "eval"


def test_checkpoint_round_trip_is_byte_exact(tmp_path, small):
    cmd_train(small, run_dir=tmp_path)
    path = tmp_path / "ckpt-000006.json"
    again = ckpt_io.save(ckpt_io.load(path), tmp_path / "again.json")
    assert path.read_bytes() == again.read_bytes()


@pytest.mark.parametrize("mutate", [
    lambda text: text[: len(text) // 2],
    lambda text: "",
    lambda text: text.replace('"version": 1', '"version": 99'),
    lambda text: text.replace('"next_step": 6', '"next_step": 5'),
    lambda text: json.dumps({**json.loads(text), "params": {"temperature": 0.6, "logits": {"Math/thinking": [0.0]}}}),
])
def test_corrupt_checkpoints_rejected(tmp_path, small, mutate):
    cmd_train(small, run_dir=tmp_path)
    bad = tmp_path / "bad.json"
    bad.write_text(mutate((tmp_path / "ckpt-000006.json").read_text()))
    with pytest.raises(ckpt_io.CheckpointError):
        ckpt_io.load(bad)


def test_resume_continues_counter_and_logs_reset(tmp_path, small):
    cmd_train(small, run_dir=tmp_path)
    cmd_resume(tmp_path / "ckpt-000006.json", steps=2, run_dir=tmp_path)
    steps = [r["step"] for r in records(tmp_path / RUN_LOG) if "step" in r]
    assert steps == list(range(1, 9))
    cmd_resume(tmp_path / "ckpt-000008.json", {"learning_rate": 0.5}, steps=1, run_dir=tmp_path)
    resets = [r for r in records(tmp_path / RUN_LOG) if r.get("event") == "reset"]
    assert resets == [{"event": "reset", "after_step": 8, "overrides": {"learning_rate": 0.5}}]
    state = ckpt_io.load(tmp_path / "ckpt-000009.json").state
    assert state.learning_rate == 0.5


def test_resume_rejects_forbidden_override(tmp_path, small):
    cmd_train(small, run_dir=tmp_path)
    with pytest.raises(ValueError):
        cmd_resume(tmp_path / "ckpt-000006.json", {"params": 1}, steps=1, run_dir=tmp_path)


def test_resume_from_truncated_file_applies_nothing(tmp_path, small):
    cmd_train(small, run_dir=tmp_path)
    before = (tmp_path / RUN_LOG).read_bytes()
    text = (tmp_path / "ckpt-000006.json").read_text()
    (tmp_path / "cut.json").write_text(text[:100])
    with pytest.raises(ckpt_io.CheckpointError):
        cmd_resume(tmp_path / "cut.json", steps=1, run_dir=tmp_path)
    assert (tmp_path / RUN_LOG).read_bytes() == before


def test_kill_after_checkpoint_then_resume(tmp_path, small):
    full = cmd_train(small, run_dir=tmp_path / "full")
    # simulate a crash at step 5: the log holds steps 1..5, the last checkpoint is step 3
    part = tmp_path / "part"
    cmd_train(replace(small, steps=5), run_dir=part)
    (part / "ckpt-000005.json").unlink()
    resumed = cmd_resume(part / "ckpt-000003.json", steps=3, run_dir=part)
    assert resumed.state.params.sup_distance(full.state.params) == 0.0
    steps = [r["step"] for r in records(part / RUN_LOG) if "step" in r]
    assert steps == list(range(1, 7))


class FailingProvider:
    def __init__(self, after):
        self.calls = 0
        self.after = after

    def score(self, requests):
        self.calls += 1
        if self.calls > self.after:
            raise ProviderError("service down", [r.id for r in requests])
        from verirl.provider import RuleProvider
        return RuleProvider().score(requests)


def test_provider_failure_preserves_checkpoint(tmp_path, small):
    from verirl.reward import GroupScoringError

    trainer = Trainer(small, provider=FailingProvider(after=small.groups_per_step * 2 + 1), run_dir=tmp_path)
    with pytest.raises(GroupScoringError):
        trainer.run(5)
    state = ckpt_io.load(tmp_path / "ckpt-000002.json").state
    assert state.step == 2


def test_eval_budget_curves(tmp_path, small):
    cmd_train(small, run_dir=tmp_path)
    curves = cmd_eval_budget(tmp_path / "ckpt-000006.json", small, tmp_path / "eval")
    for mode in ("thinking", "non_thinking"):
        text = (tmp_path / "eval" / f"budget_{mode}.csv").read_text().splitlines()
        assert text[0] == "budget,accuracy" and len(text) == 1 + len(small.budgets)
        acc = curves[mode].accuracy
        assert all(a <= b for a, b in zip(acc, acc[1:]))


def test_thinking_curve_dominates_at_large_budgets(tmp_path):
    cfg = load_config(DEMO, environ={})
    state = initial_state(cfg)
    ckpt_io.save(ckpt_io.Checkpoint(state, cfg), tmp_path / "init.json")
    curves = cmd_eval_budget(tmp_path / "init.json", cfg, tmp_path / "eval")
    assert curves["thinking"].accuracy[-1] > curves["non_thinking"].accuracy[-1]


def test_expected_curve_of_single_bucket_policy():
    cfg = TrainConfig(eval_tasks=5)
    params = initial_params(cfg)
    for k in params.logits:
        params.logits[k] = np.array([0.0, 0.0, 0.0, 500.0, 0.0])
    from verirl.harness import eval_tasks
    from verirl.taskgen import correctness_probability

    tasks = eval_tasks(cfg)
    curve = expected_budget_curve(params, cfg.env, tasks, [1000, 4096])
    want = np.mean([correctness_probability(cfg.env, 3, t.difficulty) for t in tasks])
    assert curve.accuracy[0] < 1e-12
    assert curve.accuracy[1] == pytest.approx(want, abs=1e-12)


def test_reward_check(tmp_path):
    think = "<think> " + " ".join(f"r{i}" for i in range(10)) + " </think>"
    truth = NumericTruth(Fraction(42)).to_dict()
    lines = [
        json.dumps({"id": "a", "response_text": f"{think} \\box[42]", "ground_truth": truth}),
        json.dumps({"id": "b", "response_text": f"{think} \\box[42] \\box[42]", "ground_truth": truth}),
        "{not json",
        json.dumps({"id": "d", "response_text": f"{think} \\box[41]"}),
        "",
        json.dumps({"id": "e", "response_text": f"{think} \\box[84/2]", "ground_truth": truth}),
    ]
    src = tmp_path / "in.jsonl"
    src.write_text("\n".join(lines) + "\n")
    errors = cmd_reward_check(src, tmp_path / "out.jsonl")
    out = records(tmp_path / "out.jsonl")
    assert errors == 2 and len(out) == 5
    assert out[0]["id"] == "a" and (out[0]["answer_reward"], out[0]["format_coef"], out[0]["repetition_coef"]) == (1.0, 1.0, 1.0)
    assert out[1]["format_coef"] == 0.1 and out[1]["rule_reward"] == 0.1
    assert out[2]["line"] == 3 and "error" in out[2]
    assert out[3]["line"] == 4 and "error" in out[3]
    assert out[4]["id"] == "e" and out[4]["rule_reward"] == 1.0


# ---------------------------------------------------------------- CLI


def test_cli_exit_codes(tmp_path, small, capsys):
    cfg_path = tmp_path / "small.cfg"
    cfg_path.write_text(json.dumps({**small.to_dict(), "run_dir": str(tmp_path / "run"), "steps": 2}))
    assert main(["train", "--config", str(cfg_path), "--seed", "3"]) == EXIT_OK
    ckpt = tmp_path / "run" / "ckpt-000002.json"
    assert ckpt.exists()

    bad = tmp_path / "bad.cfg"
    bad.write_text(json.dumps({"steps": 0}))
    assert main(["train", "--config", str(bad)]) == EXIT_CONFIG

    assert main(["resume", "--checkpoint", str(ckpt), "--set", "learning_rate=0.1", "--steps", "1"]) == EXIT_OK
    assert main(["resume", "--checkpoint", str(ckpt), "--set", "step=4"]) == EXIT_CONFIG
    assert main(["resume", "--checkpoint", str(ckpt), "--set", "oops"]) == EXIT_CONFIG
    (tmp_path / "junk.json").write_text("{")
    assert main(["resume", "--checkpoint", str(tmp_path / "junk.json")]) == EXIT_CHECKPOINT
    assert main(["eval-budget", "--checkpoint", str(tmp_path / "junk.json"), "--config", str(cfg_path),
                 "--out", str(tmp_path / "ev")]) == EXIT_CHECKPOINT
    assert main(["eval-budget", "--checkpoint", str(ckpt), "--config", str(cfg_path),
                 "--out", str(tmp_path / "ev")]) == EXIT_OK
    assert (tmp_path / "ev" / "budget_thinking.csv").exists()

    remote = tmp_path / "remote.cfg"
    remote.write_text(json.dumps({**small.to_dict(), "run_dir": str(tmp_path / "r2"), "steps": 1,
                                  "provider": {"kind": "remote", "address": "127.0.0.1:1", "timeout": 0.2, "retries": 0}}))
    assert main(["train", "--config", str(remote)]) == EXIT_PROVIDER
    capsys.readouterr()

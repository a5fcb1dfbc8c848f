import json
import socket
import time
from fractions import Fraction

import pytest

from verirl.provider import (
    ProviderError,
    ProviderServer,
    RemoteProvider,
    RuleProvider,
    ScoreRequest,
    ScoreResponse,
)
from verirl.reward import GroupScoringError, PenaltySchedule, score_group
from verirl.taskgen import CodeTruth, ConstraintTruth, NumericTruth

GOOD = "<think> " + " ".join(f"r{i}" for i in range(12)) + " </think> \\box[42]"


def test_wire_round_trip():
    for truth in (NumericTruth(Fraction(3, 4)), CodeTruth(((1, 2),), "x+1"),
                  ConstraintTruth((("single_box", ""), ("boxed_keyword", "harbor")))):
        req = ScoreRequest("a", "Math", "text", truth)
        back = ScoreRequest.from_wire(json.loads(json.dumps(req.to_wire())))
        assert back == req
    res = ScoreResponse("a", 1.0, 0.1, 1.0)
    assert ScoreResponse.from_wire(res.to_wire()) == res


def test_rule_provider_bad_request():
    out = RuleProvider().handle_wire({"id": "z", "response_text": "x"})
    assert out["id"] == "z" and "error" in out


def test_remote_matches_local():
    truth = NumericTruth(Fraction(42))
    reqs = [ScoreRequest(f"q{i}", "Math", GOOD if i % 2 else "\\box[41]", truth) for i in range(50)]
    with ProviderServer() as server:
        with RemoteProvider(*server.address, timeout=5.0) as remote:
            assert remote.score(reqs) == RuleProvider().score(reqs)


def test_out_of_order_replies_are_correlated():
    truth = NumericTruth(Fraction(42))
    # earlier ids are slower, so replies come back reversed
    delay = lambda obj: 0.05 * (5 - int(obj["id"][1:]))  # noqa: E731
    reqs = [ScoreRequest(f"q{i}", "Math", GOOD if i in (0, 3) else "\\box[1]", truth) for i in range(5)]
    with ProviderServer(delay=delay) as server:
        with RemoteProvider(*server.address, timeout=5.0) as remote:
            got = remote.score(reqs)
    assert [r.id for r in got] == [r.id for r in reqs]
    assert [r.answer_reward for r in got] == [1.0, 0.0, 0.0, 1.0, 0.0]


def test_retry_recovers_from_one_dropped_request():
    seen = {}

    def drop(obj):
        seen[obj["id"]] = seen.get(obj["id"], 0) + 1
        return obj["id"] == "q1" and seen["q1"] == 1

    reqs = [ScoreRequest(f"q{i}", "Math", GOOD, NumericTruth(Fraction(42))) for i in range(3)]
    with ProviderServer(drop=drop) as server:
        with RemoteProvider(*server.address, timeout=0.3, retries=1) as remote:
            assert [r.answer_reward for r in remote.score(reqs)] == [1.0] * 3
    assert seen["q1"] == 2


def test_timeout_aborts_whole_group():
    slow = lambda obj: 1.0 if obj["id"].endswith("-2") else 0.0  # noqa: E731
    with ProviderServer(delay=slow) as server:
        with RemoteProvider(*server.address, timeout=0.2, retries=1) as remote:
            t0 = time.monotonic()
            with pytest.raises(GroupScoringError) as info:
                score_group([GOOD] * 4, NumericTruth(Fraction(42)), PenaltySchedule(), 0,
                            provider=remote, ids=[f"g-{i}" for i in range(4)])
            assert time.monotonic() - t0 < 2.0
    assert info.value.failed_ids == ["g-2"]


def test_unreachable_service():
    sock = socket.socket()
    sock.bind(("127.0.0.1", 0))
    port = sock.getsockname()[1]
    sock.close()
    with pytest.raises(ProviderError):
        RemoteProvider("127.0.0.1", port, timeout=0.5).score(
            [ScoreRequest("a", "Math", GOOD, NumericTruth(Fraction(1)))])


def test_malformed_line_gets_error_reply():
    with ProviderServer() as server:
        with socket.create_connection(server.address, timeout=2) as s:
            s.sendall(b"not json\n")
            reply = json.loads(s.makefile("rb").readline())
    assert "error" in reply


def test_duplicate_ids_rejected():
    req = ScoreRequest("a", "Math", GOOD, NumericTruth(Fraction(1)))
    with pytest.raises(ValueError):
        RemoteProvider("127.0.0.1", 1).score([req, req])

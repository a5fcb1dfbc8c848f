"""Reward providers: in-process rules, and a remote service speaking NDJSON.

Wire protocol (one JSON object per line over a TCP stream)::

    request:  {"id": str, "family": str, "response_text": str, "ground_truth": {...}}
    response: {"id": str, "answer_reward": num, "format_coef": num, "repetition_coef": num}
    failure:  {"id": str, "error": str}

Requests on one connection may be answered out of order; ``id`` correlates.
"""

from __future__ import annotations

import json
import logging
import socket
import socketserver
import threading
import time
from concurrent.futures import Future, ThreadPoolExecutor
from concurrent.futures import TimeoutError as FutureTimeout
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

from .taskgen import GroundTruth, truth_from_dict
from .verifier import VerifierConfig, rule_components

log = logging.getLogger(__name__)


class ProviderError(RuntimeError):
    def __init__(self, message: str, failed_ids: Sequence[str] = ()):
        super().__init__(message)
        self.failed_ids = list(failed_ids)


@dataclass(frozen=True)
class ScoreRequest:
    id: str
    family: str
    response_text: str
    ground_truth: GroundTruth

    def to_wire(self) -> dict:
        return {
            "id": self.id,
            "family": self.family,
            "response_text": self.response_text,
            "ground_truth": self.ground_truth.to_dict(),
        }

    @classmethod
    def from_wire(cls, obj: dict) -> "ScoreRequest":
        return cls(
            str(obj["id"]),
            str(obj.get("family", "")),
            str(obj["response_text"]),
            truth_from_dict(obj["ground_truth"]),
        )


@dataclass(frozen=True)
class ScoreResponse:
    id: str
    answer_reward: float
    format_coef: float
    repetition_coef: float

    def to_wire(self) -> dict:
        return {
            "id": self.id,
            "answer_reward": self.answer_reward,
            "format_coef": self.format_coef,
            "repetition_coef": self.repetition_coef,
        }

    @classmethod
    def from_wire(cls, obj: dict) -> "ScoreResponse":
        return cls(
            str(obj["id"]),
            float(obj["answer_reward"]),
            float(obj["format_coef"]),
            float(obj["repetition_coef"]),
        )


class RuleProvider:
    def __init__(self, verifier: VerifierConfig = VerifierConfig()):
        self.verifier = verifier

    def score_one(self, req: ScoreRequest) -> ScoreResponse:
        ans, fmt, rep = rule_components(req.response_text, req.ground_truth, self.verifier)
        return ScoreResponse(req.id, ans, fmt, rep)

    def score(self, requests: Sequence[ScoreRequest]) -> list[ScoreResponse]:
        return [self.score_one(r) for r in requests]

    def handle_wire(self, obj: dict) -> dict:
        try:
            req = ScoreRequest.from_wire(obj)
        except (KeyError, TypeError, ValueError) as exc:
            return {"id": str(obj.get("id", "")) if isinstance(obj, dict) else "", "error": f"bad request: {exc}"}
        return self.score_one(req).to_wire()

    def close(self) -> None:
        pass


# ---------------------------------------------------------------- server


class _Handler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        server: ProviderServer = self.server.owner  # type: ignore[attr-defined]
        write_lock = threading.Lock()

        def reply(obj: dict) -> None:
            line = (json.dumps(obj) + "\n").encode("utf-8")
            with write_lock:
                try:
                    self.wfile.write(line)
                    self.wfile.flush()
                except OSError:
                    pass

        for raw in self.rfile:
            if not raw.strip():
                continue
            server.pool.submit(server.process, raw, reply)


class _TCPServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


class ProviderServer:
    """Threaded NDJSON reward service wrapping a RuleProvider.

    ``delay`` and ``drop`` are fault-injection hooks taking the decoded request
    and returning seconds to sleep / whether to swallow the request.
    """

    def __init__(
        self,
        host: str = "127.0.0.1",
        port: int = 0,
        verifier: VerifierConfig = VerifierConfig(),
        workers: int = 8,
        delay: Optional[Callable[[dict], float]] = None,
        drop: Optional[Callable[[dict], bool]] = None,
    ):
        self.rules = RuleProvider(verifier)
        self.delay = delay
        self.drop = drop
        self.pool = ThreadPoolExecutor(max_workers=workers)
        self._server = _TCPServer((host, port), _Handler)
        self._server.owner = self  # type: ignore[attr-defined]
        self._thread: Optional[threading.Thread] = None

    @property
    def address(self) -> tuple[str, int]:
        return self._server.server_address[:2]

    def process(self, raw: bytes, reply: Callable[[dict], None]) -> None:
        try:
            obj = json.loads(raw)
            if not isinstance(obj, dict):
                raise ValueError("request must be a JSON object")
        except ValueError as exc:
            reply({"id": "", "error": f"malformed line: {exc}"})
            return
        if self.drop is not None and self.drop(obj):
            return
        if self.delay is not None:
            time.sleep(self.delay(obj))
        reply(self.rules.handle_wire(obj))

    def start(self) -> "ProviderServer":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        self.pool.shutdown(wait=False, cancel_futures=True)

    def __enter__(self) -> "ProviderServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


# ---------------------------------------------------------------- client


class RemoteProvider:
    """Pipelining client; many requests in flight on one connection."""

    def __init__(self, host: str, port: int, timeout: float = 5.0, retries: int = 1):
        self.host, self.port = host, int(port)
        self.timeout = float(timeout)
        self.retries = int(retries)
        self._pending: dict[str, Future] = {}
        self._lock = threading.Lock()
        self._sock: Optional[socket.socket] = None
        self._reader: Optional[threading.Thread] = None

    def _connect(self) -> None:
        if self._sock is not None:
            return
        try:
            sock = socket.create_connection((self.host, self.port), timeout=self.timeout)
        except OSError as exc:
            raise ProviderError(f"cannot reach reward service {self.host}:{self.port}: {exc}") from exc
        sock.settimeout(None)
        self._sock = sock
        self._reader = threading.Thread(target=self._read_loop, args=(sock,), daemon=True)
        self._reader.start()

    def _read_loop(self, sock: socket.socket) -> None:
        with sock.makefile("rb") as fh:
            try:
                for raw in fh:
                    try:
                        obj = json.loads(raw)
                    except ValueError:
                        log.warning("dropping malformed provider line")
                        continue
                    with self._lock:
                        fut = self._pending.pop(str(obj.get("id", "")), None)
                    if fut is not None and not fut.done():
                        fut.set_result(obj)
            except OSError:
                pass
        with self._lock:
            pending, self._pending = self._pending, {}
            if self._sock is sock:
                self._sock = None
        for fut in pending.values():
            if not fut.done():
                fut.set_exception(ProviderError("connection closed"))

    def _send(self, req: ScoreRequest) -> Future:
        self._connect()
        fut: Future = Future()
        line = (json.dumps(req.to_wire()) + "\n").encode("utf-8")
        with self._lock:
            self._pending[req.id] = fut
            try:
                assert self._sock is not None
                self._sock.sendall(line)
            except (OSError, AssertionError) as exc:
                self._pending.pop(req.id, None)
                fut.set_exception(ProviderError(f"send failed: {exc}"))
        return fut

    def score(self, requests: Sequence[ScoreRequest]) -> list[ScoreResponse]:
        ids = [r.id for r in requests]
        if len(set(ids)) != len(ids):
            raise ValueError("request ids must be unique within a batch")
        results: dict[str, ScoreResponse] = {}
        todo = list(requests)
        for attempt in range(self.retries + 1):
            futures = {r.id: self._send(r) for r in todo}
            deadline = time.monotonic() + self.timeout
            failed = []
            for req in todo:
                fut = futures[req.id]
                try:
                    obj = fut.result(timeout=max(0.0, deadline - time.monotonic()))
                    if "error" in obj:
                        raise ProviderError(str(obj["error"]), [req.id])
                    results[req.id] = ScoreResponse.from_wire(obj)
                except (FutureTimeout, ProviderError) as exc:
                    with self._lock:
                        self._pending.pop(req.id, None)
                    log.warning("provider attempt %d failed for %s: %s", attempt + 1, req.id, exc or "timeout")
                    failed.append(req)
            todo = failed
            if not todo:
                break
        if todo:
            raise ProviderError(
                f"{len(todo)} request(s) failed after {self.retries + 1} attempt(s)",
                [r.id for r in todo],
            )
        return [results[i] for i in ids]

    def close(self) -> None:
        with self._lock:
            sock, self._sock = self._sock, None
        if sock is not None:
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            sock.close()

    def __enter__(self) -> "RemoteProvider":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

"""Engine side of the newline-delimited JSON oracle protocol, version 1.

The engine spawns the oracle as a child process and exchanges one JSON object
per line over stdin/stdout. The oracle owns its corpus: evaluation batches are
communicated as (seed, tokens), never as sample ids. Responses may arrive out
of order and are matched back to requests by id.

Engine to oracle:    {"type":"hello","version":1}
                     {"type":"eval","id":N,"levels":[...],"seed":S,"tokens":T}
                     {"type":"bye"}
Oracle to engine:    {"type":"info","version":1,"n_units":N,"levels_per_unit":[...]}
                     {"type":"result","id":N,"fitness":F,"tokens_used":T}
                     {"type":"error","id":N,"message":"..."}
"""

from __future__ import annotations

import json
import math
import queue
import shlex
import subprocess
import threading
import time
from dataclasses import dataclass
from typing import Sequence

from .level_space import LevelDatabase

PROTOCOL_VERSION = 1
HANDSHAKE_TIMEOUT_S = 120.0
EVAL_TIMEOUT_S = 600.0


class OracleBridgeError(Exception):
    """Base class for failures while talking to an external oracle."""


class ProtocolMismatch(OracleBridgeError):
    pass


class SpaceMismatch(OracleBridgeError):
    pass


class Timeout(OracleBridgeError):
    pass


class OracleCrashed(OracleBridgeError):
    pass


class MalformedResponse(OracleBridgeError):
    pass


class RemoteEvalFailure(OracleBridgeError):
    """The oracle answered an eval with an explicit error line."""

    def __init__(self, request_id: int | None, message: str):
        super().__init__(f"oracle reported an error for request {request_id}: {message}")
        self.request_id = request_id
        self.message = message


@dataclass(frozen=True)
class OracleRequest:
    request_id: int
    levels: tuple[int, ...]
    seed: int
    tokens: int


@dataclass(frozen=True)
class OracleResponse:
    request_id: int
    fitness: float
    tokens_used: int


@dataclass(frozen=True)
class OracleInfo:
    protocol_version: int
    n_units: int
    levels_per_unit: tuple[int, ...]


def _dumps(obj: dict) -> str:
    return json.dumps(obj, separators=(",", ":"))


def encode_hello() -> str:
    return _dumps({"type": "hello", "version": PROTOCOL_VERSION})


def encode_bye() -> str:
    return _dumps({"type": "bye"})


def encode_request(req: OracleRequest) -> str:
    return _dumps(
        {
            "type": "eval",
            "id": req.request_id,
            "levels": list(req.levels),
            "seed": req.seed,
            "tokens": req.tokens,
        }
    )


def _parse_line(line: str) -> dict:
    try:
        msg = json.loads(line)
    except json.JSONDecodeError as e:
        raise MalformedResponse(f"oracle sent invalid JSON: {line!r}") from e
    if not isinstance(msg, dict) or "type" not in msg:
        raise MalformedResponse(f"oracle sent a non-object or untyped line: {line!r}")
    return msg


def decode_info(line: str) -> OracleInfo:
    msg = _parse_line(line)
    if msg.get("type") != "info":
        raise ProtocolMismatch(f"expected an info line after hello, got {line!r}")
    version = msg.get("version")
    if version != PROTOCOL_VERSION:
        raise ProtocolMismatch(f"oracle speaks protocol version {version!r}, engine speaks {PROTOCOL_VERSION}")
    n_units = msg.get("n_units")
    lpu = msg.get("levels_per_unit")
    if not isinstance(n_units, int) or isinstance(n_units, bool) or n_units < 1:
        raise ProtocolMismatch(f"bad n_units in info line: {n_units!r}")
    if not isinstance(lpu, list) or len(lpu) != n_units or not all(
        isinstance(x, int) and not isinstance(x, bool) and x >= 1 for x in lpu
    ):
        raise ProtocolMismatch(f"bad levels_per_unit in info line: {lpu!r}")
    return OracleInfo(protocol_version=version, n_units=n_units, levels_per_unit=tuple(lpu))


def decode_response(line: str) -> OracleResponse:
    """Parse a result line. Raises RemoteEvalFailure for explicit error lines."""
    msg = _parse_line(line)
    t = msg.get("type")
    if t == "error":
        rid = msg.get("id")
        raise RemoteEvalFailure(rid if isinstance(rid, int) else None, str(msg.get("message", "")))
    if t != "result":
        raise MalformedResponse(f"expected a result line, got {line!r}")
    rid = msg.get("id")
    fitness = msg.get("fitness")
    tokens_used = msg.get("tokens_used")
    if not isinstance(rid, int) or isinstance(rid, bool):
        raise MalformedResponse(f"result with bad id: {line!r}")
    if not isinstance(fitness, (int, float)) or isinstance(fitness, bool) or not math.isfinite(fitness):
        raise MalformedResponse(f"result {rid} has a non-finite or non-numeric fitness: {line!r}")
    if not isinstance(tokens_used, int) or isinstance(tokens_used, bool) or tokens_used < 0:
        raise MalformedResponse(f"result {rid} has a bad tokens_used: {line!r}")
    return OracleResponse(request_id=rid, fitness=float(fitness), tokens_used=tokens_used)


class OracleSession:
    """One child oracle process plus the line transport around it.

    Not thread safe; concurrency comes from pipelining several requests before
    collecting their responses (see evaluate_many). Use as a context manager
    so the child is reaped on every exit path.
    """

    def __init__(
        self,
        cmd: str | Sequence[str],
        handshake_timeout: float = HANDSHAKE_TIMEOUT_S,
        eval_timeout: float = EVAL_TIMEOUT_S,
    ):
        self.cmd = shlex.split(cmd) if isinstance(cmd, str) else list(cmd)
        self.handshake_timeout = handshake_timeout
        self.eval_timeout = eval_timeout
        self._proc: subprocess.Popen | None = None
        self._lines: queue.Queue = queue.Queue()
        self._next_id = 0
        self._inflight: set[int] = set()
        self._ready: dict[int, OracleResponse] = {}
        self.info: OracleInfo | None = None

    def __enter__(self) -> "OracleSession":
        self.start()
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def start(self) -> None:
        if self._proc is not None:
            return
        try:
            self._proc = subprocess.Popen(
                self.cmd,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as e:
            raise OracleCrashed(f"could not spawn oracle {self.cmd!r}: {e}") from e
        t = threading.Thread(target=self._pump, daemon=True)
        t.start()

    def _pump(self) -> None:
        proc = self._proc
        assert proc is not None and proc.stdout is not None
        for line in proc.stdout:
            self._lines.put(line)
        self._lines.put(None)  # EOF sentinel

    def _send(self, line: str) -> None:
        proc = self._proc
        if proc is None or proc.stdin is None:
            raise OracleCrashed("session not started")
        try:
            proc.stdin.write(line + "\n")
            proc.stdin.flush()
        except (BrokenPipeError, OSError) as e:
            raise OracleCrashed(f"oracle process closed its stdin: {e}") from e

    def _next_line(self, deadline: float) -> str:
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            raise Timeout("timed out waiting for the oracle")
        try:
            line = self._lines.get(timeout=remaining)
        except queue.Empty:
            raise Timeout(f"no oracle response within {self.eval_timeout}s") from None
        if line is None:
            raise OracleCrashed("oracle process exited while a response was pending")
        return line

    def handshake(self, db: LevelDatabase | None = None, timeout: float | None = None) -> OracleInfo:
        """Send hello, read the info line, and validate it against db if given."""
        self.start()
        self._send(encode_hello())
        deadline = time.monotonic() + (timeout if timeout is not None else self.handshake_timeout)
        info = decode_info(self._next_line(deadline))
        if db is not None:
            declared = info.levels_per_unit
            ours = tuple(len(u.level_sizes) for u in db.units)
            if info.n_units != db.n_units or declared != ours:
                raise SpaceMismatch(
                    f"oracle declares {info.n_units} units with levels {declared}, "
                    f"database has {db.n_units} units with levels {ours}"
                )
        self.info = info
        return info

    def new_request(self, levels: Sequence[int], seed: int, tokens: int) -> OracleRequest:
        """Allocate the next request id; ids are strictly increasing per session."""
        self._next_id += 1
        return OracleRequest(request_id=self._next_id, levels=tuple(levels), seed=seed, tokens=tokens)

    def submit(self, req: OracleRequest) -> None:
        self._inflight.add(req.request_id)
        self._send(encode_request(req))

    def collect(self, request_id: int, timeout: float | None = None) -> OracleResponse:
        """Wait for one specific response, buffering any that arrive out of order."""
        if request_id in self._ready:
            return self._ready.pop(request_id)
        if request_id not in self._inflight:
            raise MalformedResponse(f"request {request_id} was never submitted on this session")
        deadline = time.monotonic() + (timeout if timeout is not None else self.eval_timeout)
        while True:
            resp = decode_response(self._next_line(deadline))
            if resp.request_id not in self._inflight:
                raise MalformedResponse(f"oracle answered unknown request id {resp.request_id}")
            self._inflight.discard(resp.request_id)
            if resp.request_id == request_id:
                return resp
            self._ready[resp.request_id] = resp

    def evaluate(self, req: OracleRequest, timeout: float | None = None) -> OracleResponse:
        self.submit(req)
        return self.collect(req.request_id, timeout)

    def evaluate_many(self, reqs: Sequence[OracleRequest], timeout: float | None = None) -> list[OracleResponse]:
        """Pipeline all requests, then collect responses in request order."""
        for r in reqs:
            self.submit(r)
        return [self.collect(r.request_id, timeout) for r in reqs]

    def close(self) -> None:
        proc = self._proc
        if proc is None:
            return
        try:
            if proc.poll() is None:
                self._send(encode_bye())
        except OracleBridgeError:
            pass
        try:
            proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait()
        finally:
            if proc.stdin:
                proc.stdin.close()
            self._proc = None


def handshake(session: OracleSession, db: LevelDatabase | None = None) -> OracleInfo:
    return session.handshake(db)


def evaluate_remote(session: OracleSession, req: OracleRequest) -> OracleResponse:
    return session.evaluate(req)

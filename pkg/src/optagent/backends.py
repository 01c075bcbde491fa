"""Chat-completion backends: HTTP, scripted, and replay.

Every backend exposes ``complete(request) -> str`` and keeps an append-only
log of the requests it served, so tests can count calls per role. Scripted
and replay backends key replies on ``(role, round)`` where ``round`` is the
number of earlier calls made for the same role.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import requests

from optagent.errors import BackendUnavailable, ScriptExhausted

DEFAULT_MODEL_NAME = "qwen-plus-2025-09-11"
DEFAULT_API_KEY_ENV = "OPTAGENT_API_KEY"
DEFAULT_TIMEOUT_SECS = 120.0
RETRY_BASE_DELAY_SECS = 0.5


@dataclass(frozen=True)
class ChatRequest:
    """One chat call: role identifies the calling agent for scripted keying."""

    role: str
    system_text: str
    user_text: str
    model_name: str = DEFAULT_MODEL_NAME
    temperature: float = 0.0
    max_retries: int = 3

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass(frozen=True)
class LoggedCall:
    role: str
    round: int
    system_text: str
    user_text: str


class RequestLog:
    """Thread-safe append-only request log shared by all backends."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._calls: list[LoggedCall] = []
        self._rounds: dict[str, int] = {}

    def next_round(self, role: str) -> int:
        with self._lock:
            return self._rounds.get(role, 0)

    def record(self, request: ChatRequest) -> int:
        with self._lock:
            round_index = self._rounds.get(request.role, 0)
            self._rounds[request.role] = round_index + 1
            self._calls.append(
                LoggedCall(request.role, round_index, request.system_text, request.user_text)
            )
            return round_index

    def calls(self, role: str | None = None) -> list[LoggedCall]:
        with self._lock:
            if role is None:
                return list(self._calls)
            return [c for c in self._calls if c.role == role]

    def count(self, role: str | None = None) -> int:
        return len(self.calls(role))


class ChatBackend:
    """Common machinery: per-role round counting plus the request log."""

    def __init__(self) -> None:
        self.log = RequestLog()

    def complete(self, request: ChatRequest) -> str:
        round_index = self.log.record(request)
        return self._reply(request, round_index)

    def _reply(self, request: ChatRequest, round_index: int) -> str:
        raise NotImplementedError


class ScriptedBackend(ChatBackend):
    """Returns canned replies keyed by (role, round).

    ``script`` maps ``(role, round)`` to the reply text. With
    ``repeat_last=True`` a role whose rounds are exhausted keeps returning
    its highest-round reply instead of raising ScriptExhausted.
    """

    def __init__(self, script: dict[tuple[str, int], str], repeat_last: bool = False):
        super().__init__()
        self.script = dict(script)
        self.repeat_last = repeat_last

    def _reply(self, request: ChatRequest, round_index: int) -> str:
        key = (request.role, round_index)
        if key in self.script:
            return self.script[key]
        if self.repeat_last:
            rounds = [r for role, r in self.script if role == request.role and r < round_index]
            if rounds:
                return self.script[(request.role, max(rounds))]
        raise ScriptExhausted(f"no scripted reply for role={request.role!r} round={round_index}")


class ReplayBackend(ScriptedBackend):
    """Scripted backend loaded from a JSONL trace of {role, round, reply}."""

    def __init__(self, trace_path: str | Path, repeat_last: bool = False):
        script: dict[tuple[str, int], str] = {}
        for line in Path(trace_path).read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            script[(record["role"], int(record["round"]))] = record["reply"]
        super().__init__(script, repeat_last=repeat_last)
        self.trace_path = str(trace_path)


class HttpBackend(ChatBackend):
    """Speaks the common chat-completions wire shape against one endpoint.

    Transient transport failures are retried up to ``request.max_retries``
    times with exponential backoff, so a request makes at most
    ``max_retries + 1`` attempts.
    """

    def __init__(
        self,
        endpoint: str,
        api_key_env: str = DEFAULT_API_KEY_ENV,
        timeout_secs: float = DEFAULT_TIMEOUT_SECS,
        session: requests.Session | None = None,
    ):
        super().__init__()
        self.endpoint = endpoint
        self.api_key_env = api_key_env
        self.timeout_secs = timeout_secs
        self._session = session or requests.Session()

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(self.api_key_env, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        return headers

    def _reply(self, request: ChatRequest, round_index: int) -> str:
        payload = {
            "model": request.model_name,
            "temperature": request.temperature,
            "messages": [
                {"role": "system", "content": request.system_text},
                {"role": "user", "content": request.user_text},
            ],
        }
        attempts = request.max_retries + 1
        last_error: Exception | None = None
        for attempt in range(attempts):
            try:
                response = self._session.post(
                    self.endpoint,
                    json=payload,
                    headers=self._headers(),
                    timeout=self.timeout_secs,
                )
                response.raise_for_status()
                body = response.json()
                return body["choices"][0]["message"]["content"]
            except (requests.RequestException, KeyError, IndexError, ValueError) as exc:
                last_error = exc
                if attempt + 1 < attempts:
                    time.sleep(RETRY_BASE_DELAY_SECS * (2**attempt))
        raise BackendUnavailable(
            f"chat endpoint {self.endpoint} failed after {attempts} attempts: {last_error}"
        )

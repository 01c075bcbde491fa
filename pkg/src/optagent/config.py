"""Run configuration: defaults, config-file parsing, CLI merging.

Precedence is CLI flag over config-file entry over built-in default. The
config file is a flat ``key = value`` document: one entry per line, ``#``
comments, no sections.
"""

from __future__ import annotations

import shlex
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

from optagent.backends import (
    DEFAULT_API_KEY_ENV,
    DEFAULT_MODEL_NAME,
    DEFAULT_TIMEOUT_SECS,
    ChatBackend,
    HttpBackend,
    ReplayBackend,
)
from optagent.errors import ConfigError
from optagent.executor import DEFAULT_NOT_OPTIMAL_MARKERS, Executor, ExternalRunner, StubRunner
from optagent.retrieval import DEFAULT_FETCH_K, DEFAULT_K, DEFAULT_LAMBDA, EXEMPLAR_CAP


@dataclass
class RunConfig:
    backend: str = "replay:"  # replay:<jsonl> | http:<url>
    model: str = DEFAULT_MODEL_NAME
    temperature: float = 0.0
    max_revisions: int = 3
    no_iar: bool = False
    no_hrag: bool = False
    timeout_secs: float = 60.0
    request_timeout_secs: float = DEFAULT_TIMEOUT_SECS
    exemplar_cap: int = EXEMPLAR_CAP
    mmr_lambda: float = DEFAULT_LAMBDA
    mmr_k: int = DEFAULT_K
    mmr_fetch_k: int = DEFAULT_FETCH_K
    templates_dir: str = ""
    global_journal: str = ""
    library: str = ""
    embedder: str = "hash"  # hash | http:<url>
    executor: str = ""  # stub:<jsonl> | external:<command>
    api_key_env: str = DEFAULT_API_KEY_ENV
    parallel: int = 1
    cache_dir: str = ""

    def effective(self) -> dict[str, Any]:
        """Flat dict echoed into report artifacts."""
        return {f.name: getattr(self, f.name) for f in fields(self)}


_BOOL_FIELDS = {"no_iar", "no_hrag"}
_INT_FIELDS = {"max_revisions", "exemplar_cap", "mmr_k", "mmr_fetch_k", "parallel"}
_FLOAT_FIELDS = {"temperature", "timeout_secs", "request_timeout_secs", "mmr_lambda"}


def parse_config_file(path: str | Path) -> dict[str, str]:
    entries: dict[str, str] = {}
    for line_number, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{line_number}: expected 'key = value'")
        key, value = stripped.split("=", 1)
        entries[key.strip().replace("-", "_")] = value.strip()
    return entries


def merge_config(
    file_entries: dict[str, str] | None = None, overrides: dict[str, Any] | None = None
) -> RunConfig:
    """Defaults, then config file, then explicit CLI overrides."""
    cfg = RunConfig()
    valid = {f.name for f in fields(RunConfig)}
    for key, raw in (file_entries or {}).items():
        if key not in valid:
            raise ConfigError(f"unknown config key {key!r}")
        if key in _BOOL_FIELDS:
            value: Any = raw.lower() in ("1", "true", "yes", "on")
        elif key in _INT_FIELDS:
            value = int(raw)
        elif key in _FLOAT_FIELDS:
            value = float(raw)
        else:
            value = raw
        setattr(cfg, key, value)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in valid:
            raise ConfigError(f"unknown config override {key!r}")
        setattr(cfg, key, value)
    if cfg.exemplar_cap != EXEMPLAR_CAP:
        raise ConfigError(f"exemplar_cap is fixed at {EXEMPLAR_CAP}")
    return cfg


def build_backend(cfg: RunConfig) -> ChatBackend:
    spec = cfg.backend
    if spec.startswith("replay:"):
        path = spec.split(":", 1)[1]
        if not path:
            raise ConfigError("replay backend needs a trace path: replay:<file>")
        return ReplayBackend(path)
    if spec.startswith("http:") or spec.startswith("https:"):
        return HttpBackend(
            endpoint=spec,
            api_key_env=cfg.api_key_env,
            timeout_secs=cfg.request_timeout_secs,
        )
    raise ConfigError(f"unknown backend spec {spec!r}")


def build_embedder(cfg: RunConfig):
    from optagent.retrieval import HashingEmbedder, HttpEmbedder

    if cfg.embedder == "hash":
        return HashingEmbedder()
    if cfg.embedder.startswith("http:") or cfg.embedder.startswith("https:"):
        return HttpEmbedder(cfg.embedder, api_key_env=cfg.api_key_env,
                            timeout_secs=cfg.request_timeout_secs)
    raise ConfigError(f"unknown embedder spec {cfg.embedder!r}")


def build_executor(cfg: RunConfig) -> Executor:
    import json

    from optagent.executor import RunnerResult

    spec = cfg.executor
    if spec.startswith("stub:"):
        path = spec.split(":", 1)[1]
        results = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            results.append(
                RunnerResult(
                    status_word=record["status_word"],
                    stdout=record.get("stdout", ""),
                    stderr=record.get("stderr", ""),
                    exit_code=int(record.get("exit_code", 0)),
                    wall_ms=int(record.get("wall_ms", 0)),
                )
            )
        return Executor(StubRunner(results), not_optimal_markers=DEFAULT_NOT_OPTIMAL_MARKERS)
    if spec.startswith("external:"):
        command = shlex.split(spec.split(":", 1)[1])
        return Executor(ExternalRunner(command), not_optimal_markers=DEFAULT_NOT_OPTIMAL_MARKERS)
    raise ConfigError(f"unknown executor spec {spec!r} (use stub:<file> or external:<command>)")

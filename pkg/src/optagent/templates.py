"""Prompt templates: plain-text files with strict placeholder rendering.

File format: optional ``#:`` comment lines (stripped at load), a role
description block, a ``---`` separator line, then the body. Placeholders are
``{name}`` tokens; literal braces are written ``{{``/``}}``. Rendering with
an unbound placeholder raises instead of emitting empty text.
"""

from __future__ import annotations

import string
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from optagent.errors import ConfigError

SEPARATOR = "---"

TEMPLATE_NAMES = (
    "param_extractor",
    "modeling_advisor",
    "modeling_expert",
    "code_expert",
    "modeling_revision",
    "code_revision",
    "reranker",
    "labeler",
)


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    role_description: str
    body: str

    def placeholders(self) -> set[str]:
        names = set()
        for _, field_name, _, _ in string.Formatter().parse(self.body):
            if field_name:
                names.add(field_name)
        return names

    def render(self, **bindings: str) -> str:
        """Substitute every placeholder; unbound names are an error."""
        missing = self.placeholders() - set(bindings)
        if missing:
            raise ConfigError(
                f"template {self.name!r} missing bindings for: {sorted(missing)}"
            )
        try:
            return self.body.format(**bindings)
        except (KeyError, IndexError, ValueError) as exc:
            raise ConfigError(f"template {self.name!r} failed to render: {exc}") from exc


def _parse(name: str, raw: str) -> PromptTemplate:
    lines = [line for line in raw.splitlines() if not line.startswith("#:")]
    text = "\n".join(lines)
    if f"\n{SEPARATOR}\n" not in text:
        raise ConfigError(f"template {name!r} lacks the '---' role/body separator")
    role, body = text.split(f"\n{SEPARATOR}\n", 1)
    return PromptTemplate(name=name, role_description=role.strip(), body=body.strip())


def load_template(name: str, templates_dir: str | Path | None = None) -> PromptTemplate:
    """Load one template, preferring an override directory when given."""
    filename = f"{name}.txt"
    if templates_dir is not None:
        override = Path(templates_dir) / filename
        if override.exists():
            return _parse(name, override.read_text(encoding="utf-8"))
    ref = resources.files("optagent").joinpath("templates", filename)
    try:
        raw = ref.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise ConfigError(f"unknown template {name!r}") from exc
    return _parse(name, raw)


def load_all(templates_dir: str | Path | None = None) -> dict[str, PromptTemplate]:
    return {name: load_template(name, templates_dir) for name in TEMPLATE_NAMES}

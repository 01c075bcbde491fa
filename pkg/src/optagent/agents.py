"""The six agent roles: prompt assembly, one backend call, strict parsing.

Parsing is strict-then-repair: a malformed reply triggers exactly one
reprompt that appends the parse error and the required schema; a second
failure surfaces the typed error. This bounds backend calls per agent
operation at two.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass

from optagent.backends import ChatBackend, ChatRequest
from optagent.errors import (
    CategoryError,
    NoCodeBlock,
    ReplyParseError,
    SplitFormatError,
)
from optagent.retrieval import RetrievedSet
from optagent.templates import PromptTemplate, load_all
from optagent.types import (
    Advisory,
    Exemplar,
    Insight,
    InsightCategory,
    MathModel,
    ParamEntry,
    ParamSpec,
    RevisionTip,
    SolverProgram,
    Task,
    TipKind,
)

SPLIT_MARKER = "<split>"
NO_TIP_TEXT = "No tip for reference"
NO_EXEMPLAR_TEXT = "No exemplar available."

_FENCE_RE = re.compile(r"```[a-zA-Z0-9_+-]*\n(.*?)```", re.DOTALL)

_CATEGORY_ALIASES = {
    "domain terminology": InsightCategory.DOMAIN_TERMINOLOGY,
    "domainterminology": InsightCategory.DOMAIN_TERMINOLOGY,
    "problem key point": InsightCategory.PROBLEM_KEY_POINT,
    "problemkeypoint": InsightCategory.PROBLEM_KEY_POINT,
    "problem essence": InsightCategory.PROBLEM_ESSENCE,
    "problemessence": InsightCategory.PROBLEM_ESSENCE,
}


@dataclass(frozen=True)
class RevisionReply:
    """Parsed revision output: the tip plus the corrected artifact."""

    tip: RevisionTip
    corrected_model: MathModel | None = None
    corrected_program: SolverProgram | None = None


def unwrap_fences(text: str) -> str:
    """Strip one fenced wrapper when the payload is fenced JSON."""
    match = _FENCE_RE.search(text)
    if match and not text.strip().startswith("{") and not text.strip().startswith("["):
        return match.group(1).strip()
    return text.strip()


def extract_code_block(reply: str) -> str:
    """Contents of the fenced code block; longest block wins a tie."""
    blocks = _FENCE_RE.findall(reply)
    if not blocks:
        raise NoCodeBlock("reply contains no fenced code block")
    return max(blocks, key=len).strip()


def _load_json(text: str, expected: str):
    try:
        return json.loads(unwrap_fences(text))
    except json.JSONDecodeError as exc:
        raise ReplyParseError(f"reply is not valid JSON ({expected}): {exc}") from exc


def _lookup(mapping: dict, *names: str):
    lowered = {str(k).lower(): v for k, v in mapping.items()}
    for name in names:
        if name.lower() in lowered:
            return lowered[name.lower()]
    return None


def parse_param_spec(reply: str) -> ParamSpec:
    data = _load_json(reply, "object of {name: {Type, Definition}}")
    if not isinstance(data, dict):
        raise ReplyParseError("parameter reply must be a JSON object")
    entries = []
    for name, raw in data.items():
        if not isinstance(raw, dict):
            raise ReplyParseError(f"parameter {name!r} must map to an object")
        type_label = _lookup(raw, "Type", "type_label")
        definition = _lookup(raw, "Definition", "definition")
        if not type_label or not definition:
            raise ReplyParseError(f"parameter {name!r} needs Type and Definition")
        entries.append((name, ParamEntry(str(type_label), str(definition))))
    return ParamSpec(entries=tuple(entries))


def parse_advisory(reply: str) -> Advisory:
    data = _load_json(reply, "list of {category, insight}")
    if not isinstance(data, list):
        raise ReplyParseError("advisory reply must be a JSON list")
    if not 1 <= len(data) <= 3:
        raise ReplyParseError(f"advisory must hold 1-3 insights, got {len(data)}")
    insights = []
    for raw in data:
        if not isinstance(raw, dict) or "category" not in raw or "insight" not in raw:
            raise ReplyParseError("each insight needs category and insight fields")
        category_text = str(raw["category"]).strip()
        category = _CATEGORY_ALIASES.get(category_text.lower())
        if category is None:
            raise CategoryError(f"unknown insight category {category_text!r}")
        insights.append(Insight(category, str(raw["insight"])))
    return Advisory(insights=tuple(insights))


def _coerce_text(value) -> str:
    if isinstance(value, str):
        return value
    return json.dumps(value, ensure_ascii=False)


def parse_math_model(reply: str) -> MathModel:
    data = _load_json(reply, "object with VARIABLES/CONSTRAINTS/OBJECTIVE")
    if not isinstance(data, dict):
        raise ReplyParseError("model reply must be a JSON object")
    variables = _lookup(data, "VARIABLES")
    constraints = _lookup(data, "CONSTRAINTS")
    objective = _lookup(data, "OBJECTIVE")
    if objective is None or not _coerce_text(objective).strip():
        raise ReplyParseError("model reply missing OBJECTIVE")
    if variables is None:
        raise ReplyParseError("model reply missing VARIABLES")
    if constraints is None:
        constraint_list: tuple[str, ...] = ()
    elif isinstance(constraints, list):
        constraint_list = tuple(_coerce_text(c) for c in constraints)
    else:
        constraint_list = (_coerce_text(constraints),)
    try:
        return MathModel(
            variables=_coerce_text(variables),
            constraints=constraint_list,
            objective=_coerce_text(objective),
        )
    except ValueError as exc:
        raise ReplyParseError(str(exc)) from exc


def split_revision_reply(reply: str) -> tuple[str, str]:
    """Split on the one required marker, tolerating surrounding whitespace."""
    occurrences = reply.count(SPLIT_MARKER)
    if occurrences != 1:
        raise SplitFormatError(
            f"expected exactly one {SPLIT_MARKER!r} marker, found {occurrences}"
        )
    first, second = reply.split(SPLIT_MARKER)
    return first.strip(), second.strip()


def parse_tip(text: str, kind: TipKind) -> RevisionTip:
    data = _load_json(text, "tip object")
    if not isinstance(data, dict):
        raise ReplyParseError("tip must be a JSON object")
    scenario = _lookup(data, "scenario")
    error_statement = _lookup(data, "error_statement")
    correct = _lookup(data, "correct_component", "correct_code_snippet", "correct_fragment")
    incorrect = _lookup(data, "incorrect_model", "incorrect_code_snippet", "incorrect_fragment")
    if not all((scenario, error_statement, correct, incorrect)):
        raise ReplyParseError("tip must fill scenario/error/correct/incorrect fields")
    try:
        return RevisionTip(
            kind=kind,
            scenario=_coerce_text(scenario),
            error_statement=_coerce_text(error_statement),
            correct_fragment=_coerce_text(correct),
            incorrect_fragment=_coerce_text(incorrect),
        )
    except ValueError as exc:
        raise ReplyParseError(str(exc)) from exc


def parse_corrected_code(text: str, language_tag: str, solver_tag: str) -> SolverProgram:
    source: str | None = None
    try:
        decoded = json.loads(unwrap_fences(text))
        if isinstance(decoded, str):
            source = decoded
        elif isinstance(decoded, dict):
            candidate = _lookup(decoded, "code", "source", "program")
            if isinstance(candidate, str):
                source = candidate
    except json.JSONDecodeError:
        pass
    if source is None:
        try:
            source = extract_code_block(text)
        except NoCodeBlock:
            source = text.strip()
    if not source.strip():
        raise ReplyParseError("corrected code payload is empty")
    return SolverProgram(source=source, language_tag=language_tag, solver_tag=solver_tag)


def render_tip(tip: RevisionTip | None) -> str:
    if tip is None:
        return NO_TIP_TEXT
    if tip.kind is TipKind.MODELING:
        payload = {
            "tip_type": "modeling",
            "scenario": tip.scenario,
            "error_statement": tip.error_statement,
            "correct_component": tip.correct_fragment,
            "incorrect_model": tip.incorrect_fragment,
        }
    else:
        payload = {
            "tip_type": "code",
            "scenario": tip.scenario,
            "error_statement": tip.error_statement,
            "correct_code_snippet": tip.correct_fragment,
            "incorrect_code_snippet": tip.incorrect_fragment,
        }
    return json.dumps(payload, indent=2, ensure_ascii=False)


def _exemplar_model_and_code(exemplar: Exemplar) -> tuple[str, str | None]:
    """Split an exemplar response into its model exposition and code."""
    blocks = _FENCE_RE.findall(exemplar.response)
    model_text = blocks[0].strip() if blocks else exemplar.response.strip()
    code_text = blocks[1].strip() if len(blocks) > 1 else None
    return model_text, code_text


def render_exemplars(items: tuple[Exemplar, ...] | list[Exemplar], with_code: bool) -> str:
    """Render retrieved exemplars in the structure the prompts expect."""
    if not items:
        return NO_EXEMPLAR_TEXT
    rendered = []
    for exemplar in items:
        model_text, code_text = _exemplar_model_and_code(exemplar)
        entry: dict = {
            "Problem description": exemplar.prompt,
            "Mathematical Model": model_text,
        }
        if with_code:
            entry["Code"] = code_text if code_text is not None else ""
        rendered.append(json.dumps(entry, indent=2, ensure_ascii=False))
    return "\n".join(rendered)


class AgentSuite:
    """All six agents over one backend and one template set."""

    def __init__(
        self,
        backend: ChatBackend,
        model_name: str,
        templates: dict[str, PromptTemplate] | None = None,
        templates_dir: str | None = None,
        language_tag: str = "python",
        solver_tag: str = "gurobi",
        temperature: float = 0.0,
    ):
        self.backend = backend
        self.model_name = model_name
        self.templates = templates or load_all(templates_dir)
        self.language_tag = language_tag
        self.solver_tag = solver_tag
        self.temperature = temperature

    def _call(self, role: str, template: PromptTemplate, prompt: str) -> str:
        request = ChatRequest(
            role=role,
            system_text=template.role_description,
            user_text=prompt,
            model_name=self.model_name,
            temperature=self.temperature,
        )
        return self.backend.complete(request)

    def _call_parsed(self, role: str, template: PromptTemplate, prompt: str, parser, schema: str):
        """One call, one repair-reprompt on parse failure, then the typed error."""
        reply = self._call(role, template, prompt)
        try:
            return parser(reply)
        except ReplyParseError as first_error:
            repair_prompt = (
                f"{prompt}\n\nYour previous reply could not be parsed: {first_error}\n"
                f"Reply again using exactly this format:\n{schema}"
            )
            reply = self._call(role, template, repair_prompt)
            return parser(reply)

    def extract_parameters(self, task: Task, comment: str = "None") -> ParamSpec:
        """Identify and structure the problem's parameters."""
        template = self.templates["param_extractor"]
        prompt = template.render(problem_description=task.text, comment_text=comment)
        schema = '{"<name>": {"Type": "...", "Definition": "..."}, ...}'
        return self._call_parsed("param_extractor", template, prompt, parse_param_spec, schema)

    def advise(self, task: Task, param_comment: str) -> Advisory:
        """Produce 1-3 categorized insights about the problem."""
        template = self.templates["modeling_advisor"]
        prompt = template.render(problem_description=task.text, comment_text=param_comment)
        schema = '[{"category": "Domain Terminology" | "Problem Key Point" | "Problem Essence", "insight": "..."}]'
        return self._call_parsed("modeling_advisor", template, prompt, parse_advisory, schema)

    def formulate(
        self,
        task: Task,
        param: ParamSpec,
        advisory: Advisory,
        exemplars: RetrievedSet,
    ) -> MathModel:
        """Synthesize the formal model from all upstream context."""
        template = self.templates["modeling_expert"]
        comments = json.dumps(
            {"parameters": param.to_dict()["entries"], "insights": advisory.to_dict()["insights"]},
            indent=2,
            ensure_ascii=False,
        )
        prompt = template.render(
            problem_description=task.text,
            comments_text=comments,
            exemplars_text=render_exemplars(exemplars.items, with_code=False),
        )
        schema = '{"VARIABLES": "...", "CONSTRAINTS": ["..."], "OBJECTIVE": "..."}'
        return self._call_parsed("modeling_expert", template, prompt, parse_math_model, schema)

    def generate_code(self, task: Task, model: MathModel, exemplars: RetrievedSet) -> SolverProgram:
        """Translate the model into an executable program."""
        template = self.templates["code_expert"]
        prompt = template.render(
            problem_description=task.text,
            comments_text=json.dumps(model.to_dict(), indent=2, ensure_ascii=False),
            exemplars_text=render_exemplars(exemplars.items, with_code=True),
        )

        def parser(reply: str) -> SolverProgram:
            return SolverProgram(
                source=extract_code_block(reply),
                language_tag=self.language_tag,
                solver_tag=self.solver_tag,
            )

        schema = "```python\n<the full program>\n```"
        return self._call_parsed("code_expert", template, prompt, parser, schema)

    def revise_model(
        self,
        task: Task,
        prior: MathModel,
        error: str,
        last_tip: RevisionTip | None = None,
    ) -> RevisionReply:
        """Diagnose a failure and emit a modeling tip plus a corrected model."""
        template = self.templates["modeling_revision"]
        prompt = template.render(
            problem_description=task.text,
            original_model=json.dumps(prior.to_dict(), indent=2, ensure_ascii=False),
            error_message=error,
            last_tip=render_tip(last_tip),
        )

        def parser(reply: str) -> RevisionReply:
            tip_text, model_text = split_revision_reply(reply)
            return RevisionReply(
                tip=parse_tip(tip_text, TipKind.MODELING),
                corrected_model=parse_math_model(model_text),
            )

        schema = f"TIP_JSON\n{SPLIT_MARKER}\nCORRECTED_MODEL_JSON"
        return self._call_parsed("modeling_revision", template, prompt, parser, schema)

    def revise_code(
        self,
        task: Task,
        prior: SolverProgram,
        corrected_model: MathModel,
        error: str,
        last_tip: RevisionTip | None = None,
    ) -> RevisionReply:
        """Diagnose a failure and emit a code tip plus a corrected program."""
        template = self.templates["code_revision"]
        prompt = template.render(
            problem_description=task.text,
            initial_code=prior.source,
            corrected_model=json.dumps(corrected_model.to_dict(), indent=2, ensure_ascii=False),
            error_message=error,
            last_tip=render_tip(last_tip),
        )

        def parser(reply: str) -> RevisionReply:
            tip_text, code_text = split_revision_reply(reply)
            return RevisionReply(
                tip=parse_tip(tip_text, TipKind.CODE),
                corrected_program=parse_corrected_code(
                    code_text, self.language_tag, self.solver_tag
                ),
            )

        schema = f"TIP_JSON\n{SPLIT_MARKER}\nCORRECTED_CODE_JSON"
        return self._call_parsed("code_revision", template, prompt, parser, schema)

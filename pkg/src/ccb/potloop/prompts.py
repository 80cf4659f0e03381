"""Prompt construction from the versioned templates in ``templates/``.

Prompts are pure functions of their inputs so transcripts keyed on the
prompt hash replay exactly.
"""

from __future__ import annotations

from functools import lru_cache
from importlib import resources

from ..indicators import INDICATORS, IndicatorId
from ..schema import CalculationSchema, render_schema

TEMPLATE_VERSION = "v1"

SCHEMA_EXTRACTION = "schema_extraction"
SCHEMA_REASK = "schema_reask"
CODE_GENERATION = "code_generation"
CODE_CORRECTION = "code_correction"
DIRECT_ANSWER = "direct_answer"
CHAIN_OF_THOUGHT = "chain_of_thought"

#: First line of each rendered prompt; lets scripted/simulated backends route.
TASK_TAGS = {
    SCHEMA_EXTRACTION: "schema-extraction",
    SCHEMA_REASK: "schema-extraction-retry",
    CODE_GENERATION: "code-generation",
    CODE_CORRECTION: "code-correction",
    DIRECT_ANSWER: "direct-answer",
    CHAIN_OF_THOUGHT: "chain-of-thought",
}


@lru_cache(maxsize=None)
def load_template(name: str, version: str = TEMPLATE_VERSION) -> str:
    path = resources.files("ccb.potloop").joinpath(f"templates/{name}_{version}.txt")
    return path.read_text(encoding="utf-8")


def task_of(prompt: str) -> str | None:
    """Template tag from a rendered prompt's first line, e.g. ``"code-generation"``."""
    first = prompt.split("\n", 1)[0]
    if not first.startswith("### TASK: "):
        return None
    return first[len("### TASK: ") :].split(" ", 1)[0]


def _definitions(targets) -> str:
    return "\n".join(f"- {t.value}: {INDICATORS[t].name} = {INDICATORS[t].formula}" for t in targets)


def _context_fields(ctx) -> dict[str, str]:
    return {
        "company": ctx.company_id,
        "year": str(ctx.fiscal_year),
        "scope": ctx.scope.value,
        "targets": ", ".join(t.value for t in ctx.targets),
        "definitions": _definitions(ctx.targets),
        "document": ctx.document_text.rstrip("\n"),
    }


def schema_extraction_prompt(ctx) -> str:
    return load_template(SCHEMA_EXTRACTION).format(**_context_fields(ctx))


def schema_reask_prompt(ctx, diagnostics: str) -> str:
    return load_template(SCHEMA_REASK).format(diagnostics=diagnostics.rstrip("\n"), original=schema_extraction_prompt(ctx))


def code_generation_prompt(schema: CalculationSchema) -> str:
    return load_template(CODE_GENERATION).format(schema=render_schema(schema))


def code_correction_prompt(schema: CalculationSchema, prior_code: str, diagnostics: str) -> str:
    return load_template(CODE_CORRECTION).format(
        schema=render_schema(schema), prior_code=prior_code.rstrip("\n"), diagnostics=diagnostics
    )


def direct_prompt(ctx) -> str:
    return load_template(DIRECT_ANSWER).format(**_context_fields(ctx))


def cot_prompt(ctx) -> str:
    return load_template(CHAIN_OF_THOUGHT).format(**_context_fields(ctx))


def parse_prompt_header(prompt: str) -> dict[str, str]:
    """Read back the ``Company/Fiscal year/Scope/Targets`` header lines."""
    out = {}
    for line in prompt.split("<<<DOCUMENT", 1)[0].splitlines():
        for field in ("Company", "Fiscal year", "Scope", "Targets"):
            if line.startswith(field + ": "):
                out[field] = line[len(field) + 2 :].strip()
    return out


def prompt_document(prompt: str) -> str:
    if "<<<DOCUMENT\n" not in prompt:
        return ""
    return prompt.split("<<<DOCUMENT\n", 1)[1].rsplit("\nDOCUMENT>>>", 1)[0]


def prompt_targets(prompt: str) -> list[IndicatorId]:
    raw = parse_prompt_header(prompt).get("Targets", "")
    return [IndicatorId(t.strip()) for t in raw.split(",") if t.strip()]

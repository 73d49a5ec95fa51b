"""Persona generation driven by running attribute statistics.

Each prompt shows the model how many users already hold each attribute
value, so the next persona is drawn with the evolving population in view.
Generation is therefore strictly sequential.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Callable, Mapping

from .clock import WallClock
from .llm import GENERATION_TEMPERATURE, Backend, ChatRequest, Message
from .persona import (
    PERSONALITY_DIMENSIONS,
    MalformedJson,
    Persona,
    PersonaTemplate,
    SchemaViolation,
    parse_persona,
)

logger = logging.getLogger(__name__)

SINGLE_VALUED = (
    "age",
    "gender",
    "region",
    "nationality",
    "desired_degree",
    "language_preference",
    "communication_type",
    *PERSONALITY_DIMENSIONS,
)
MULTI_VALUED = ("general_interests", "secondary_goals")
TRACKED = SINGLE_VALUED + MULTI_VALUED

DEFAULT_SYSTEM_PROMPT = (
    "You create synthetic users who chat with StudyBot, an assistant that answers "
    "questions about the study programs of a technical university. "
    "Each user is a prospective student with their own demographics, personality, "
    "interests and information goals.\n"
    "Generate diverse users, but reflect a real-world distribution in the generation. "
    "Use the statistics of already generated users to decide which attribute values "
    "are still under-represented.\n"
    "Fill in every field of the user template. Choose values from the listed options "
    "where options are given, write interests in snake_case, and score each "
    "personality dimension with an integer from 1 to 5.\n"
    "Answer with a single JSON object and nothing else."
)

NO_USERS_YET = "No users generated yet."


def persona_values(p: Persona, attribute: str) -> list[str]:
    """String values of ``attribute`` for ``p``; multi-valued attributes are deduplicated."""
    if attribute in PERSONALITY_DIMENSIONS:
        return [str(p.personality[attribute])]
    if attribute in ("general_interests", "interests"):
        return list(dict.fromkeys(p.general_interests))
    if attribute == "secondary_goals":
        return list(dict.fromkeys(p.secondary_goals))
    value = getattr(p, attribute)
    return [str(value)]


@dataclass(frozen=True)
class AttributeStatistics:
    counts: Mapping[str, Mapping[str, int]] = field(default_factory=dict)
    total_personas: int = 0
    order: tuple[str, ...] = ()

    def __post_init__(self):
        frozen = {k: MappingProxyType(dict(v)) for k, v in self.counts.items()}
        object.__setattr__(self, "counts", MappingProxyType(frozen))
        object.__setattr__(self, "order", tuple(self.order))

    def to_dict(self) -> dict:
        return {
            "total_personas": self.total_personas,
            "order": list(self.order),
            "counts": {
                attr: dict(sorted_counts(values))
                for attr, values in self.counts.items()
            },
        }

    @classmethod
    def from_personas(cls, personas) -> "AttributeStatistics":
        stats = cls()
        for p in personas:
            stats = update_statistics(stats, p)
        return stats


def sorted_counts(counts: Mapping[str, int]) -> list[tuple[str, int]]:
    """Descending by count, ties broken lexicographically."""
    return sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))


def update_statistics(stats: AttributeStatistics, p: Persona) -> AttributeStatistics:
    counts = {attr: dict(values) for attr, values in stats.counts.items()}
    for attr in TRACKED:
        bucket = counts.setdefault(attr, {})
        for value in persona_values(p, attr):
            bucket[value] = bucket.get(value, 0) + 1
    return AttributeStatistics(counts, stats.total_personas + 1, (*stats.order, p.id))


def format_statistics(stats: AttributeStatistics) -> str:
    if stats.total_personas == 0:
        return NO_USERS_YET
    lines = [f"Statistics of already generated users (total: {stats.total_personas}):"]
    for attr in TRACKED:
        values = stats.counts.get(attr)
        if not values:
            continue
        lines.append(f"{attr}:")
        lines.extend(f"  {value}: {count}" for value, count in sorted_counts(values))
    return "\n".join(lines)


@dataclass(frozen=True)
class GenerationConfig:
    batch_size: int = 100
    max_parse_retries: int = 2
    temperature: float = GENERATION_TEMPERATURE
    system_prompt: str = DEFAULT_SYSTEM_PROMPT
    model_label: str = "generator"
    max_tokens: int = 1500

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_parse_retries < 0:
            raise ValueError("max_parse_retries must be >= 0")


def compose_generation_prompt(
    cfg: GenerationConfig, stats: AttributeStatistics, template: PersonaTemplate
) -> ChatRequest:
    user = (
        format_statistics(stats)
        + "\n\nUser template to fill in:\n"
        + json.dumps(template.blank(), indent=2, ensure_ascii=False)
    )
    return ChatRequest(
        messages=(Message("system", cfg.system_prompt), Message("user", user)),
        temperature=cfg.temperature,
        max_tokens=cfg.max_tokens,
        model_label=cfg.model_label,
    )


class GenerationFailed(RuntimeError):
    def __init__(self, message: str, last_error: Exception | None = None, attempts: int = 0):
        super().__init__(message)
        self.last_error = last_error
        self.attempts = attempts


class BatchAborted(RuntimeError):
    def __init__(self, completed: list[Persona], failure: Exception, stats: AttributeStatistics):
        super().__init__(f"batch aborted after {len(completed)} personas: {failure}")
        self.completed = completed
        self.failure = failure
        self.stats = stats


def _correction(exc: Exception) -> str:
    if isinstance(exc, SchemaViolation):
        detail = "\n".join(
            f"- {v.field}: {v.kind} ({v.message})" for v in exc.result.violations
        )
    else:
        detail = f"- {exc}"
    return (
        "Your previous answer was not a valid user. Problems:\n"
        + detail
        + "\nReturn the corrected user as a single JSON object only."
    )


def generate_persona(
    backend: Backend,
    cfg: GenerationConfig,
    stats: AttributeStatistics,
    template: PersonaTemplate,
    *,
    clock: Callable[[], str] | None = None,
) -> tuple[Persona, AttributeStatistics]:
    clock = clock or WallClock()
    req = compose_generation_prompt(cfg, stats, template)
    persona_id = f"{cfg.model_label}-{stats.total_personas + 1:03d}"
    last: Exception | None = None
    for attempt in range(1, cfg.max_parse_retries + 2):
        reply = backend.complete(req).content
        try:
            persona = parse_persona(
                reply,
                template,
                persona_id=persona_id,
                generator_model=cfg.model_label,
                created_at=clock(),
            )
        except (MalformedJson, SchemaViolation) as exc:
            last = exc
            logger.info("persona %s attempt %d rejected: %s", persona_id, attempt, exc)
            req = req.with_appended("assistant", reply).with_appended("user", _correction(exc))
            continue
        return persona, update_statistics(stats, persona)
    raise GenerationFailed(
        f"no valid persona after {cfg.max_parse_retries + 1} attempts: {last}",
        last_error=last,
        attempts=cfg.max_parse_retries + 1,
    )


def generate_batch(
    backend: Backend,
    cfg: GenerationConfig,
    template: PersonaTemplate,
    *,
    clock: Callable[[], str] | None = None,
    stats: AttributeStatistics | None = None,
) -> tuple[list[Persona], AttributeStatistics]:
    """Generate ``cfg.batch_size`` personas, threading statistics through.

    Raises :class:`BatchAborted` carrying the completed personas if any
    generation fails.
    """
    stats = stats or AttributeStatistics()
    personas: list[Persona] = []
    for _ in range(cfg.batch_size):
        try:
            persona, stats = generate_persona(backend, cfg, stats, template, clock=clock)
        except Exception as exc:
            raise BatchAborted(personas, exc, stats) from exc
        personas.append(persona)
    return personas, stats

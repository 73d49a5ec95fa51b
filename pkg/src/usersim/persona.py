"""Persona template schema, persona records and validation of LLM output."""

from __future__ import annotations

import dataclasses
import json
import logging
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from types import MappingProxyType
from typing import Any, Iterable, Mapping

logger = logging.getLogger(__name__)

PERSONALITY_DIMENSIONS = (
    "openness",
    "conscientiousness",
    "extraversion",
    "agreeableness",
    "neuroticism",
)

SECONDARY_GOALS = (
    "module_contents",
    "acquired_skills",
    "admission_requirements",
    "admission_restriction",
    "structure_of_the_program",
)

PRIMARY_GOAL = "find_relevant_study_programs"
USER_ROLE = "prospective student"


class PersonaError(ValueError):
    pass


class MalformedJson(PersonaError):
    """The completion text holds no parseable JSON object."""


class SchemaViolation(PersonaError):
    def __init__(self, result: "ValidationResult"):
        self.result = result
        super().__init__(result.describe())


def snake_case(text: str) -> str:
    """Lowercase, trim, and join words with underscores.

    >>> snake_case(" Renewable Energy ")
    'renewable_energy'
    """
    text = re.sub(r"[\s\-]+", "_", str(text).strip().lower())
    return re.sub(r"_+", "_", text).strip("_")


def _freeze(mapping):
    return MappingProxyType(dict(mapping))


@dataclass(frozen=True)
class PersonaTemplate:
    """Field layout the generator LLM fills in.

    ``fixed_fields`` are constants copied into every persona, ``enum_fields``
    restrict a value (or every element of a list value) to an option list,
    ``free_fields`` are unconstrained and ``numeric_fields`` map to an
    inclusive integer range.
    """

    fixed_fields: Mapping[str, str]
    enum_fields: Mapping[str, tuple[str, ...]]
    free_fields: tuple[str, ...]
    numeric_fields: Mapping[str, tuple[int, int]]

    def __post_init__(self):
        object.__setattr__(self, "fixed_fields", _freeze(self.fixed_fields))
        object.__setattr__(
            self,
            "enum_fields",
            _freeze({k: tuple(v) for k, v in self.enum_fields.items()}),
        )
        object.__setattr__(self, "free_fields", tuple(self.free_fields))
        object.__setattr__(
            self,
            "numeric_fields",
            _freeze({k: (int(v[0]), int(v[1])) for k, v in self.numeric_fields.items()}),
        )
        seen: dict[str, str] = {}
        for category in ("fixed_fields", "enum_fields", "free_fields", "numeric_fields"):
            for name in getattr(self, category):
                if name in seen:
                    raise ValueError(f"field {name!r} is in both {seen[name]} and {category}")
                seen[name] = category
        for name, options in self.enum_fields.items():
            if not options:
                raise ValueError(f"enum field {name!r} has no options")
            if len(set(options)) != len(options):
                raise ValueError(f"enum field {name!r} has duplicate options")
        for name, (lo, hi) in self.numeric_fields.items():
            if lo > hi:
                raise ValueError(f"numeric field {name!r} has min > max")

    @property
    def field_names(self) -> list[str]:
        return [
            *self.fixed_fields,
            *self.enum_fields,
            *self.free_fields,
            *self.numeric_fields,
        ]

    def with_secondary_goals(self, extra: Iterable[str]) -> "PersonaTemplate":
        """Return a copy whose secondary-goal option list is extended."""
        goals = list(self.enum_fields["secondary_goals"])
        goals += [g for g in map(snake_case, extra) if g not in goals]
        enums = dict(self.enum_fields)
        enums["secondary_goals"] = tuple(goals)
        return dataclasses.replace(self, enum_fields=enums)

    def to_dict(self) -> dict:
        return {
            "fixed_fields": dict(self.fixed_fields),
            "enum_fields": {k: list(v) for k, v in self.enum_fields.items()},
            "free_fields": list(self.free_fields),
            "numeric_fields": {k: list(v) for k, v in self.numeric_fields.items()},
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "PersonaTemplate":
        return cls(
            fixed_fields=data.get("fixed_fields", {}),
            enum_fields=data.get("enum_fields", {}),
            free_fields=data.get("free_fields", ()),
            numeric_fields=data.get("numeric_fields", {}),
        )

    @classmethod
    def load(cls, path) -> "PersonaTemplate":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def blank(self) -> dict:
        """The empty JSON skeleton shown to the generator model."""
        enums = self.enum_fields
        out: dict[str, Any] = {"user_role": self.fixed_fields.get("user_role", USER_ROLE)}
        out["age"] = f"<integer {self.numeric_fields['age'][0]}-{self.numeric_fields['age'][1]}>"
        for name in ("gender", "region"):
            out[name] = "<one of: " + ", ".join(enums[name]) + ">"
        out["nationality"] = "<free text>"
        for name in ("desired_degree", "language_preference", "communication_type"):
            out[name] = "<one of: " + ", ".join(enums[name]) + ">"
        out["personality"] = {
            dim: "<integer {}-{}>".format(*self.numeric_fields[dim])
            for dim in PERSONALITY_DIMENSIONS
        }
        out["general_interests"] = ["<snake_case topic>", "..."]
        out["initial_knowledge"] = "<free text>"
        out["user_goals"] = {
            "primary_goal": self.fixed_fields.get("primary_goal", PRIMARY_GOAL),
            "secondary_goals": ["<one or more of: " + ", ".join(enums["secondary_goals"]) + ">"],
        }
        return out


def template_default() -> PersonaTemplate:
    return PersonaTemplate(
        fixed_fields={"user_role": USER_ROLE, "primary_goal": PRIMARY_GOAL},
        enum_fields={
            "gender": ("female", "male", "diverse"),
            "desired_degree": ("Bachelor", "Master", "Exchange student", "not sure"),
            "region": (
                "asian",
                "non-german european",
                "south-american",
                "north-american",
                "african",
                "middle_east",
                "south-east asian",
                "australian",
                "german",
            ),
            "communication_type": ("formal", "informal"),
            "language_preference": ("English", "German"),
            "secondary_goals": SECONDARY_GOALS,
        },
        free_fields=("nationality", "general_interests", "initial_knowledge"),
        numeric_fields={"age": (1, 120), **{dim: (1, 5) for dim in PERSONALITY_DIMENSIONS}},
    )


@dataclass(frozen=True)
class Persona:
    id: str
    age: int
    gender: str
    region: str
    nationality: str
    desired_degree: str
    language_preference: str
    communication_type: str
    personality: Mapping[str, int]
    general_interests: tuple[str, ...]
    secondary_goals: tuple[str, ...]
    primary_goal: str = PRIMARY_GOAL
    user_role: str = USER_ROLE
    initial_knowledge: str = ""
    created_at: str = ""
    generator_model: str = ""

    def __post_init__(self):
        object.__setattr__(self, "personality", _freeze(self.personality))
        object.__setattr__(self, "general_interests", tuple(self.general_interests))
        object.__setattr__(self, "secondary_goals", tuple(self.secondary_goals))

    def __eq__(self, other):
        if not isinstance(other, Persona):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def __hash__(self):
        return hash(self.id)

    @property
    def user_goals(self) -> list[str]:
        return [self.primary_goal, *self.secondary_goals]

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "generator_model": self.generator_model,
            "created_at": self.created_at,
            "user_role": self.user_role,
            "age": self.age,
            "gender": self.gender,
            "region": self.region,
            "nationality": self.nationality,
            "desired_degree": self.desired_degree,
            "language_preference": self.language_preference,
            "communication_type": self.communication_type,
            "personality": {dim: self.personality.get(dim) for dim in PERSONALITY_DIMENSIONS},
            "general_interests": list(self.general_interests),
            "initial_knowledge": self.initial_knowledge,
            "user_goals": {
                "primary_goal": self.primary_goal,
                "secondary_goals": list(self.secondary_goals),
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False)


@dataclass(frozen=True)
class Violation:
    field: str
    kind: str
    message: str


@dataclass(frozen=True)
class ValidationResult:
    violations: tuple[Violation, ...] = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return not self.violations

    def fields(self) -> set[str]:
        return {v.field for v in self.violations}

    def describe(self) -> str:
        if self.ok:
            return "ok"
        return "; ".join(f"{v.field}: {v.kind} ({v.message})" for v in self.violations)


def validate_persona(p: Persona, template: PersonaTemplate) -> ValidationResult:
    """Check ``p`` against every template constraint and report all failures."""
    found: list[Violation] = []
    add = lambda name, kind, msg: found.append(Violation(name, kind, msg))  # noqa: E731

    for name, expected in template.fixed_fields.items():
        actual = getattr(p, name, None)
        if actual != expected:
            add(name, "fixed-mismatch", f"expected {expected!r}, got {actual!r}")

    for name, options in template.enum_fields.items():
        value = getattr(p, name, None)
        if isinstance(value, tuple):
            if not value:
                add(name, "empty", "at least one value is required")
            for item in value:
                if item not in options:
                    add(name, "not-in-enum", f"{item!r} not in {list(options)}")
            if len(set(value)) != len(value):
                add(name, "duplicate", "values must be distinct")
        elif value not in options:
            add(name, "not-in-enum", f"{value!r} not in {list(options)}")

    for name, (lo, hi) in template.numeric_fields.items():
        if name in PERSONALITY_DIMENSIONS:
            value = p.personality.get(name)
        else:
            value = getattr(p, name, None)
        if value is None:
            add(name, "missing", "value is required")
        elif isinstance(value, bool) or not isinstance(value, int):
            add(name, "not-integer", f"{value!r} is not an integer")
        elif not lo <= value <= hi:
            add(name, "out-of-range", f"{value} not in [{lo}, {hi}]")
    extra_dims = set(p.personality) - set(PERSONALITY_DIMENSIONS)
    for dim in sorted(extra_dims):
        add(dim, "unknown-dimension", "not a five-factor dimension")

    if not p.general_interests:
        add("general_interests", "empty", "at least one interest is required")
    elif any(not i for i in p.general_interests):
        add("general_interests", "empty", "interests must be non-empty strings")
    for name in ("nationality",):
        if not getattr(p, name):
            add(name, "missing", "value is required")
    if not p.id:
        add("id", "missing", "persona id is required")

    return ValidationResult(tuple(found))


def extract_json_object(text: str) -> dict:
    """Return the first balanced top-level ``{...}`` object in ``text``."""
    decoder = json.JSONDecoder()
    start = text.find("{")
    while start != -1:
        try:
            obj, _ = decoder.raw_decode(text, start)
        except json.JSONDecodeError:
            start = text.find("{", start + 1)
            continue
        if isinstance(obj, dict):
            return obj
        start = text.find("{", start + 1)
    raise MalformedJson("no JSON object found in completion")


_KNOWN_KEYS = {
    "id", "generator_model", "created_at", "user_role", "age", "gender", "region",
    "nationality", "desired_degree", "language_preference", "communication_type",
    "personality", "general_interests", "initial_knowledge", "user_goals",
}


def _as_int(value):
    if isinstance(value, bool):
        return value
    if isinstance(value, float) and value.is_integer():
        return int(value)
    if isinstance(value, str) and value.strip().lstrip("-").isdigit():
        return int(value.strip())
    return value


def _as_list(value) -> list:
    if value is None:
        return []
    if isinstance(value, str):
        return [v for v in re.split(r"[,;]", value) if v.strip()]
    return list(value)


def persona_from_dict(
    data: Mapping[str, Any],
    template: PersonaTemplate,
    *,
    persona_id: str | None = None,
    generator_model: str | None = None,
    created_at: str | None = None,
) -> Persona:
    """Build a persona from a decoded JSON mapping; no validation is applied."""
    extra = sorted(set(data) - _KNOWN_KEYS)
    if extra:
        logger.warning("ignoring unknown persona keys: %s", ", ".join(extra))
    goals = data.get("user_goals") or {}
    if isinstance(goals, list):
        goals = {"secondary_goals": goals}
    secondary = goals.get("secondary_goals", data.get("secondary_goals"))
    personality = data.get("personality") or {}
    if not isinstance(personality, Mapping):
        personality = {}
    personality = {snake_case(k): _as_int(v) for k, v in personality.items()}

    return Persona(
        id=str(persona_id or data.get("id") or ""),
        age=_as_int(data.get("age")),
        gender=str(data.get("gender", "")).strip(),
        region=str(data.get("region", "")).strip(),
        nationality=str(data.get("nationality", "")).strip(),
        desired_degree=str(data.get("desired_degree", "")).strip(),
        language_preference=str(data.get("language_preference", "")).strip(),
        communication_type=str(data.get("communication_type", "")).strip(),
        personality=personality,
        general_interests=[snake_case(i) for i in _as_list(data.get("general_interests"))],
        secondary_goals=[snake_case(g) for g in _as_list(secondary)],
        primary_goal=template.fixed_fields.get("primary_goal", PRIMARY_GOAL),
        user_role=template.fixed_fields.get("user_role", USER_ROLE),
        initial_knowledge=str(data.get("initial_knowledge", "") or ""),
        created_at=str(created_at or data.get("created_at") or ""),
        generator_model=str(generator_model or data.get("generator_model") or ""),
    )


def parse_persona(
    json_text: str,
    template: PersonaTemplate,
    *,
    persona_id: str | None = None,
    generator_model: str | None = None,
    created_at: str | None = None,
) -> Persona:
    """Parse a raw completion into a validated :class:`Persona`.

    Raises :class:`MalformedJson` when no object can be decoded and
    :class:`SchemaViolation` when the decoded persona breaks the template.
    Fixed template values always win over whatever the model wrote.
    """
    data = extract_json_object(json_text)
    persona = persona_from_dict(
        data,
        template,
        persona_id=persona_id,
        generator_model=generator_model,
        created_at=created_at,
    )
    result = validate_persona(persona, template)
    if not result.ok:
        raise SchemaViolation(result)
    return persona


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def read_personas(path, template: PersonaTemplate | None = None, *, strict: bool = True) -> list[Persona]:
    """Load a persona JSONL file.

    With ``strict=False`` lines that fail to parse or validate are skipped with
    a warning instead of raising.
    """
    template = template or template_default()
    personas = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                personas.append(parse_persona(line, template))
            except PersonaError as exc:
                if strict:
                    exc.args = (f"{path}:{lineno}: {exc}",)
                    raise
                logger.warning("skipping persona at %s:%d: %s", path, lineno, exc)
    return personas


def dumps_personas(personas: Iterable[Persona]) -> str:
    return "".join(p.to_json() + "\n" for p in personas)

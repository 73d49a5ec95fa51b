"""Query execution, response rendering and the turn-level bot."""

from __future__ import annotations

import dataclasses
import json
import threading
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping, Sequence

from ..dialogue import Turn
from ..llm import Backend, ChatRequest, Message
from .catalog import ProgramCatalog
from .nlu import ATTRIBUTE_INTENTS, FALLBACK, DialogueAct, IntentRecognizer, tokenize, STOPWORDS

MIN_BUTTONS = 2
MAX_BUTTONS = 8

ATTRIBUTE_LABELS = {
    "program_description": "description",
    "ects_points": "ECTS points",
    "admission_requirements": "admission requirements",
    "admission_restriction": "admission restriction",
    "standard_period_of_study": "standard period of study",
    "language_of_instruction": "language of instruction",
    "start_of_studies": "start of studies",
    "application_deadline": "application deadline",
    "module_contents": "module contents",
    "acquired_skills": "acquired skills",
    "structure_of_the_program": "structure of the program",
    "career_prospects": "career prospects",
    "faculty": "faculty",
    "tuition_fees": "tuition fees",
    "study_location": "study location",
    "contact": "contact",
}

# Every template-mode response is exactly one of these, filled from catalog rows.
TEMPLATES = {
    "attribute": "The {label} of {name} ({degree}): {value}",
    "list": "I found {n} matching programs: {names}. Which one would you like to know more about?",
    "single": "I found one matching program: {name} ({degree}). {value}",
    "too_many": "I found {n} matching programs. Could you narrow it down, for example by degree type or by a topic you are interested in?",
    "need_program": "Which study program would you like to know the {label} for?",
    "no_match": "I'm sorry, I could not find a matching study program. Could you tell me which program or topic you are interested in?",
    "unknown_program": "I'm sorry, I don't know that study program. Could you check the name?",
    "greeting": "Hello! I can help you find a study program and answer questions about admission, modules and more. What are you interested in?",
    "goodbye": "You're welcome! Good luck with your studies.",
    "fallback": "I'm sorry, I didn't understand that. You can ask me about study programs, admission requirements, modules or deadlines.",
}


class QueryError(LookupError):
    pass


class NoMatch(QueryError):
    def __init__(self, message: str = "no matching programs", label: str | None = None):
        super().__init__(message)
        self.label = label


class UnknownProgram(QueryError):
    pass


@dataclass(frozen=True)
class QueryResult:
    intent: str
    rows: tuple[Mapping[str, str], ...]
    attribute: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(MappingProxyType(dict(r)) for r in self.rows))


@dataclass(frozen=True)
class BotState:
    last_act: DialogueAct | None = None
    active_program: str | None = None
    slots: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "slots", MappingProxyType(dict(self.slots)))


def _overlap_ranking(terms: Sequence[str], catalog: ProgramCatalog):
    query = {t for t in terms if t not in STOPWORDS}
    scored = []
    for p in catalog.programs:
        words = set(tokenize(p.attributes.get("program_description", ""))) | set(tokenize(p.name))
        score = len(query & words)
        if score:
            scored.append((-score, p.name, p))
    return [p for _, _, p in sorted(scored, key=lambda s: (s[0], s[1]))]


def execute_query(act: DialogueAct, catalog: ProgramCatalog, state: BotState | None = None) -> QueryResult:
    """Run the catalog lookup an act asks for.

    Raises :class:`NoMatch` when nothing fits (the bot asks a clarifying
    question) and :class:`UnknownProgram` for a program outside the catalog.
    """
    state = state or BotState()
    intent = act.intent
    program = act.entities.get("program")
    if program is not None and program not in catalog:
        raise UnknownProgram(program)

    if intent in ATTRIBUTE_INTENTS:
        if program is None:
            raise NoMatch("no program given", label=ATTRIBUTE_LABELS[intent])
        rec = catalog.get(program)
        row = {"name": rec.name, "degree_type": rec.degree_type, intent: rec.attributes.get(intent, "")}
        return QueryResult(intent, (row,), attribute=intent)

    if intent == "list_programs":
        degree = act.entities.get("degree") or state.slots.get("degree")
        hits = [p for p in catalog.programs if degree is None or p.degree_type == degree]
        if not hits:
            raise NoMatch(f"no {degree} programs")
        rows = tuple(
            {"name": p.name, "degree_type": p.degree_type, "program_description": p.attributes["program_description"]}
            for p in hits
        )
        return QueryResult(intent, rows)

    if intent == "search_by_interest":
        terms = tokenize(act.entities.get("keywords", ""))
        degree = act.entities.get("degree") or state.slots.get("degree")
        hits = [p for p in _overlap_ranking(terms, catalog) if degree is None or p.degree_type == degree]
        if not hits:
            raise NoMatch("no program matches the interest keywords")
        rows = tuple(
            {"name": p.name, "degree_type": p.degree_type, "program_description": p.attributes["program_description"]}
            for p in hits
        )
        return QueryResult(intent, rows, attribute="program_description")

    if intent in ("greeting", "goodbye"):
        return QueryResult(intent, ())

    raise NoMatch(f"nothing to query for intent {intent!r}")


RESPONDER_RULES = (
    "You are StudyBot, the study-program assistant of a technical university. Rules:\n"
    "1. Answer only with facts from the database results; never invent programs or values.\n"
    "2. If the results are empty, ask the user a short clarifying question.\n"
    "3. Keep answers short and friendly, in the user's language.\n"
    "4. When several programs are listed, name each of them so the user can pick one."
)


def compose_responder_prompt(
    act: DialogueAct,
    result: QueryResult | QueryError,
    state: BotState | None,
    user_utterances: Sequence[str],
) -> ChatRequest:
    state = state or BotState()
    dialogue_state = {
        "intent": act.intent,
        "entities": dict(act.entities),
        "active_program": state.active_program,
        "slots": dict(state.slots),
    }
    rows = [dict(r) for r in result.rows] if isinstance(result, QueryResult) else []
    latest = "\n".join(f"- {u}" for u in user_utterances) or "- (none)"
    user = (
        f"Dialogue state:\n{json.dumps(dialogue_state, ensure_ascii=False)}\n\n"
        f"Latest user utterances:\n{latest}\n\n"
        f"Database results:\n{json.dumps(rows, ensure_ascii=False, indent=1)}"
    )
    return ChatRequest((Message("system", RESPONDER_RULES), Message("user", user)), temperature=0.0, max_tokens=400)


def _template_text(act: DialogueAct, result: QueryResult | QueryError) -> tuple[str, tuple[str, ...] | None]:
    if act.intent == FALLBACK:
        return TEMPLATES["fallback"], None
    if isinstance(result, UnknownProgram):
        return TEMPLATES["unknown_program"], None
    if isinstance(result, NoMatch):
        if result.label:
            return TEMPLATES["need_program"].format(label=result.label), None
        return TEMPLATES["no_match"], None
    if isinstance(result, QueryError):
        return TEMPLATES["fallback"], None

    if result.intent in ("greeting", "goodbye"):
        return TEMPLATES[result.intent], None
    if result.attribute and result.intent in ATTRIBUTE_INTENTS:
        row = result.rows[0]
        text = TEMPLATES["attribute"].format(
            label=ATTRIBUTE_LABELS[result.intent],
            name=row["name"],
            degree=row["degree_type"],
            value=row[result.intent],
        )
        return text, None
    names = [r["name"] for r in result.rows]
    if len(names) == 1:
        row = result.rows[0]
        text = TEMPLATES["single"].format(name=row["name"], degree=row["degree_type"], value=row["program_description"])
        return text, None
    if len(names) > MAX_BUTTONS:
        return TEMPLATES["too_many"].format(n=len(names)), None
    return TEMPLATES["list"].format(n=len(names), names=", ".join(names)), tuple(names)


def render_response(
    act: DialogueAct,
    result: QueryResult | QueryError,
    mode: str = "template",
    backend: Backend | None = None,
    *,
    state: BotState | None = None,
    user_utterances: Sequence[str] = (),
    index: int = 0,
) -> Turn:
    """Turn a query result (or query error) into a system turn.

    Lists of 2 to 8 programs carry one button per program in either mode.
    """
    text, buttons = _template_text(act, result)
    if mode == "llm":
        if backend is None:
            raise ValueError("llm mode needs a backend")
        text = backend.complete(compose_responder_prompt(act, result, state, user_utterances)).content.strip()
    elif mode != "template":
        raise ValueError(f"unknown render mode {mode!r}")
    return Turn(index, "system", text, buttons=buttons)


class StudyBot:
    """Recognize, query and render in one step per user turn."""

    def __init__(
        self,
        catalog: ProgramCatalog,
        recognizer: IntentRecognizer | None = None,
        mode: str = "template",
        backend: Backend | None = None,
    ):
        self.catalog = catalog
        self.recognizer = recognizer if recognizer is not None else IntentRecognizer().fit(catalog)
        self.mode = mode
        self.backend = backend

    def respond(self, state: BotState, user_turn: Turn) -> tuple[Turn, BotState]:
        if user_turn.selected_button is not None and user_turn.selected_button in self.catalog:
            act = DialogueAct("program_description", {"program": user_turn.selected_button}, 1.0)
        else:
            act = self.recognizer.recognize(user_turn.utterance, state)

        try:
            result: QueryResult | QueryError = execute_query(act, self.catalog, state)
        except QueryError as exc:
            result = exc
        turn = render_response(
            act,
            result,
            self.mode,
            self.backend,
            state=state,
            user_utterances=[user_turn.utterance],
            index=user_turn.index + 1,
        )
        return turn, self._next_state(state, act)

    def _next_state(self, state: BotState, act: DialogueAct) -> BotState:
        if act.intent == FALLBACK:
            return dataclasses.replace(state, last_act=act)
        active = state.active_program
        program = act.entities.get("program")
        if program in self.catalog:
            active = program
        slots = dict(state.slots)
        if "degree" in act.entities:
            slots["degree"] = act.entities["degree"]
        if "keywords" in act.entities:
            slots["interests"] = act.entities["keywords"]
        return BotState(last_act=act, active_program=active, slots=slots)


class StudyBotAdapter:
    """Serves a :class:`StudyBot` to the dialogue engine, one state per session."""

    def __init__(self, bot: StudyBot):
        self.bot = bot
        self._states: dict[str, BotState] = {}
        self._lock = threading.Lock()

    def state(self, session_id: str) -> BotState:
        with self._lock:
            return self._states.get(session_id, BotState())

    def reply(self, session_id: str, user_turn: Turn, history=()) -> Turn:
        state = self.state(session_id)
        turn, new_state = self.bot.respond(state, user_turn)
        with self._lock:
            self._states[session_id] = new_state
        return turn

    def reset(self, session_id: str) -> None:
        with self._lock:
            self._states.pop(session_id, None)


def respond(bot: StudyBot, state: BotState, user_turn: Turn) -> tuple[Turn, BotState]:
    return bot.respond(state, user_turn)
